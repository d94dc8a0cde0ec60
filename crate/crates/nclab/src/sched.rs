//! The three transmission schedulers deciding which encoder/decoder pair
//! owns each channel slot.
//!
//! - [`FixedTdma`]: round-robin with fixed per-pair slot budgets,
//!   independent of the erasure process.
//! - [`AdaptiveTdma`]: a pair keeps the channel until its quota of
//!   *successful* receptions is met, then the next pair takes over.
//! - [`Optimal2d`]: a two-phase round for two-dimensional systems. Phase 1
//!   runs pair 1 to `n_1` successes (duration `T_k^1`). Phase 2 runs
//!   pair 2 only if `n_1 + slope·T_k^1 > 0` (with
//!   `slope = 2(ln|λ_1|−ln|λ_2|)/ln δ < 0`, equivalently `T_k^1 ≤ T^c`),
//!   stopping at the first slot where the pair-2 success count strictly
//!   exceeds `n_1 + slope·(T_k^1 + T_k^2)`. The stop rule is checked after
//!   every slot, so a run of failures still terminates once the right-hand
//!   side turns negative.
//!
//! Schedulers are deterministic functions of the erasure sequence: the
//! same `γ` stream always yields the same owner sequence.
//!
//! The caller protocol is: read [`Scheduler::owner`] for the slot, run the
//! transmission, then [`Scheduler::step`] with the realized erasure flag.

use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("scheduler configuration invalid: {0}")]
    ConfigError(String),
}

/// Scheduling policy selector with its per-policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SchedulerConfig {
    FixedTdma { budgets: Vec<u32> },
    AdaptiveTdma { quotas: Vec<u32> },
    Optimal2d { n1: u32 },
}

/// Fixed-period TDMA: owner advances after its slot budget elapses,
/// regardless of delivery outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTdma {
    budgets: Vec<u32>,
    owner: usize,
    used_in_phase: u32,
    received_in_phase: u32,
    current_slots: Vec<u32>,
    current_received: Vec<u32>,
    completed_slots: Vec<Vec<u32>>,
    completed_received: Vec<Vec<u32>>,
}

impl FixedTdma {
    pub fn new(budgets: Vec<u32>) -> Result<Self, SchedError> {
        if budgets.is_empty() || budgets.contains(&0) {
            return Err(SchedError::ConfigError(
                "fixed budgets must be nonempty and positive".into(),
            ));
        }
        let n = budgets.len();
        Ok(Self {
            budgets,
            owner: 0,
            used_in_phase: 0,
            received_in_phase: 0,
            current_slots: vec![0; n],
            current_received: vec![0; n],
            completed_slots: Vec::new(),
            completed_received: Vec::new(),
        })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn step(&mut self, delivered: bool) {
        self.used_in_phase += 1;
        if delivered {
            self.received_in_phase += 1;
        }
        if self.used_in_phase == self.budgets[self.owner] {
            self.current_slots[self.owner] = self.used_in_phase;
            self.current_received[self.owner] = self.received_in_phase;
            self.used_in_phase = 0;
            self.received_in_phase = 0;
            self.owner += 1;
            if self.owner == self.budgets.len() {
                self.owner = 0;
                self.completed_slots.push(std::mem::replace(
                    &mut self.current_slots,
                    vec![0; self.budgets.len()],
                ));
                self.completed_received.push(std::mem::replace(
                    &mut self.current_received,
                    vec![0; self.budgets.len()],
                ));
            }
        }
    }

    /// Per-round slot counts `T_k^i` (constant by construction).
    pub fn round_log(&self) -> &[Vec<u32>] {
        &self.completed_slots
    }

    /// Per-round successful-reception counts per pair.
    pub fn received_log(&self) -> &[Vec<u32>] {
        &self.completed_received
    }
}

/// Success-quota TDMA: a phase ends exactly when the owner accumulates its
/// quota of delivered packets.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveTdma {
    quotas: Vec<u32>,
    owner: usize,
    phase_elapsed: u32,
    phase_successes: u32,
    current: Vec<u32>,
    completed: Vec<Vec<u32>>,
}

impl AdaptiveTdma {
    pub fn new(quotas: Vec<u32>) -> Result<Self, SchedError> {
        if quotas.is_empty() || quotas.contains(&0) {
            return Err(SchedError::ConfigError(
                "success quotas must be nonempty and positive".into(),
            ));
        }
        let n = quotas.len();
        Ok(Self {
            quotas,
            owner: 0,
            phase_elapsed: 0,
            phase_successes: 0,
            current: vec![0; n],
            completed: Vec::new(),
        })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn quotas(&self) -> &[u32] {
        &self.quotas
    }

    pub fn step(&mut self, delivered: bool) {
        self.phase_elapsed += 1;
        if delivered {
            self.phase_successes += 1;
        }
        if self.phase_successes == self.quotas[self.owner] {
            self.current[self.owner] = self.phase_elapsed;
            self.phase_elapsed = 0;
            self.phase_successes = 0;
            self.owner += 1;
            if self.owner == self.quotas.len() {
                self.owner = 0;
                self.completed.push(std::mem::replace(
                    &mut self.current,
                    vec![0; self.quotas.len()],
                ));
            }
        }
    }

    /// Completed rounds as `T_k^i` per pair.
    pub fn round_log(&self) -> &[Vec<u32>] {
        &self.completed
    }
}

/// One completed round of the two-phase scheduler: the phase durations and
/// the realized pair-2 success count (zero when phase 2 was skipped).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimalRound {
    pub t1: u32,
    pub t2: u32,
    pub n2: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    First,
    Second,
}

/// The two-phase scheduler for a pair of simple real magnitudes
/// `ln_l1 > ln_l2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimal2d {
    n1: u32,
    /// `2(ln|λ_1|−ln|λ_2|)/ln δ`, strictly negative.
    slope: f64,
    phase: Phase,
    t1: u32,
    t2: u32,
    successes: u32,
    completed: Vec<OptimalRound>,
}

impl Optimal2d {
    pub fn new(n1: u32, ln_l1: f64, ln_l2: f64, ln_delta: f64) -> Result<Self, SchedError> {
        if n1 == 0 {
            return Err(SchedError::ConfigError("n1 must be positive".into()));
        }
        if ln_l1 <= ln_l2 {
            return Err(SchedError::ConfigError(format!(
                "requires ln_l1 > ln_l2, got {ln_l1} <= {ln_l2}"
            )));
        }
        if ln_delta >= 0.0 {
            return Err(SchedError::ConfigError(
                "ln(delta) must be negative".into(),
            ));
        }
        Ok(Self {
            n1,
            slope: 2.0 * (ln_l1 - ln_l2) / ln_delta,
            phase: Phase::First,
            t1: 0,
            t2: 0,
            successes: 0,
            completed: Vec::new(),
        })
    }

    pub fn owner(&self) -> usize {
        match self.phase {
            Phase::First => 0,
            Phase::Second => 1,
        }
    }

    pub fn n1(&self) -> u32 {
        self.n1
    }

    /// Critical phase-1 duration `T^c = −n_1/slope`; rounds whose phase 1
    /// runs longer skip phase 2 entirely.
    pub fn critical_duration(&self) -> f64 {
        -(self.n1 as f64) / self.slope
    }

    pub fn step(&mut self, delivered: bool) {
        match self.phase {
            Phase::First => {
                self.t1 += 1;
                if delivered {
                    self.successes += 1;
                }
                if self.successes == self.n1 {
                    if self.n1 as f64 + self.slope * self.t1 as f64 > 0.0 {
                        self.phase = Phase::Second;
                        self.successes = 0;
                        self.t2 = 0;
                    } else {
                        self.completed.push(OptimalRound {
                            t1: self.t1,
                            t2: 0,
                            n2: 0,
                        });
                        self.reset_round();
                    }
                }
            }
            Phase::Second => {
                self.t2 += 1;
                if delivered {
                    self.successes += 1;
                }
                let rhs = self.n1 as f64 + self.slope * (self.t1 + self.t2) as f64;
                if self.successes as f64 > rhs {
                    self.completed.push(OptimalRound {
                        t1: self.t1,
                        t2: self.t2,
                        n2: self.successes,
                    });
                    self.reset_round();
                }
            }
        }
    }

    fn reset_round(&mut self) {
        self.phase = Phase::First;
        self.t1 = 0;
        self.t2 = 0;
        self.successes = 0;
    }

    pub fn round_log(&self) -> &[OptimalRound] {
        &self.completed
    }
}

/// Uniform front over the three policies.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheduler {
    Fixed(FixedTdma),
    Adaptive(AdaptiveTdma),
    Optimal(Optimal2d),
}

impl Scheduler {
    /// Builds a scheduler for `num_pairs` coordinates. The two-phase
    /// policy needs the coordinate log-magnitudes and `ln δ`.
    pub fn from_config(
        config: &SchedulerConfig,
        num_pairs: usize,
        ln_ls: &[f64],
        ln_delta: f64,
    ) -> Result<Self, SchedError> {
        match config {
            SchedulerConfig::FixedTdma { budgets } => {
                if budgets.len() != num_pairs {
                    return Err(SchedError::ConfigError(format!(
                        "{} budgets for {} pairs",
                        budgets.len(),
                        num_pairs
                    )));
                }
                Ok(Scheduler::Fixed(FixedTdma::new(budgets.clone())?))
            }
            SchedulerConfig::AdaptiveTdma { quotas } => {
                if quotas.len() != num_pairs {
                    return Err(SchedError::ConfigError(format!(
                        "{} quotas for {} pairs",
                        quotas.len(),
                        num_pairs
                    )));
                }
                Ok(Scheduler::Adaptive(AdaptiveTdma::new(quotas.clone())?))
            }
            SchedulerConfig::Optimal2d { n1 } => {
                if num_pairs != 2 || ln_ls.len() != 2 {
                    return Err(SchedError::ConfigError(
                        "the two-phase scheduler requires exactly two coordinates".into(),
                    ));
                }
                Ok(Scheduler::Optimal(Optimal2d::new(
                    *n1, ln_ls[0], ln_ls[1], ln_delta,
                )?))
            }
        }
    }

    pub fn owner(&self) -> usize {
        match self {
            Scheduler::Fixed(s) => s.owner(),
            Scheduler::Adaptive(s) => s.owner(),
            Scheduler::Optimal(s) => s.owner(),
        }
    }

    pub fn step(&mut self, delivered: bool) {
        match self {
            Scheduler::Fixed(s) => s.step(delivered),
            Scheduler::Adaptive(s) => s.step(delivered),
            Scheduler::Optimal(s) => s.step(delivered),
        }
    }

    pub fn rounds_completed(&self) -> usize {
        match self {
            Scheduler::Fixed(s) => s.round_log().len(),
            Scheduler::Adaptive(s) => s.round_log().len(),
            Scheduler::Optimal(s) => s.round_log().len(),
        }
    }

    /// Serializes the round log: `round,T1,T2,n2` for the two-phase
    /// policy, `round,T_1,…,T_N` otherwise.
    pub fn write_round_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        match self {
            Scheduler::Optimal(s) => {
                writeln!(w, "round,T1,T2,n2")?;
                for (k, r) in s.round_log().iter().enumerate() {
                    writeln!(w, "{},{},{},{}", k + 1, r.t1, r.t2, r.n2)?;
                }
            }
            Scheduler::Adaptive(s) => {
                write_per_pair_csv(&mut w, s.round_log())?;
            }
            Scheduler::Fixed(s) => {
                write_per_pair_csv(&mut w, s.round_log())?;
            }
        }
        Ok(())
    }
}

fn write_per_pair_csv<W: Write>(w: &mut W, log: &[Vec<u32>]) -> io::Result<()> {
    let n = log.first().map_or(0, Vec::len);
    write!(w, "round")?;
    for i in 1..=n {
        write!(w, ",T_{i}")?;
    }
    writeln!(w)?;
    for (k, row) in log.iter().enumerate() {
        write!(w, "{}", k + 1)?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
