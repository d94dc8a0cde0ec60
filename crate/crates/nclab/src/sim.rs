//! Monte Carlo harnesses: full closed-loop runs, scheduler-only round
//! moments, decay curves, and martingale diagnostics.
//!
//! Trials are embarrassingly parallel. Every trial derives its own seed
//! from the master seed and its index, and cross-trial aggregation uses
//! pairwise summation over the trial-ordered values, so results are
//! bit-stable whatever the thread count.
//!
//! The monitored diagnostic per coordinate is `λ_i^{2t}·δ^{n_i^t}` with
//! `n_i^t` the scheduler's success counter — the exponent is accumulated
//! in the log domain and exponentiated only for reporting. The constant
//! prefactor carried by the codec variance is irrelevant to the
//! decay-versus-growth classification and is deliberately left out.

use crate::channel::{ChannelInstance, AUX_STREAM};
use crate::codec::EstimatorState;
use crate::conditions::ThetaSolution;
use crate::control::{deadbeat_gain, ControlError, ControllerState};
use crate::model::{ChannelParams, SystemSpec};
use crate::sched::{SchedError, Scheduler, SchedulerConfig};
use crate::util::{derive_seed, fmt_real, mean_and_std_error, pairwise_sum, with_pool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

/// Longest supported closed-loop horizon; `A^t` bookkeeping is unreliable
/// past this.
pub const MAX_HORIZON: u64 = 10_000;

/// A trial is flagged diverged once `‖x_t‖` passes this.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("closed-loop simulation supports only real diagonal plants with simple eigenvalues")]
    UnsupportedSystem,
    #[error("horizon {0} exceeds the supported maximum {MAX_HORIZON}")]
    HorizonExceeded(u64),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

/// One closed-loop trajectory. Row `k` of every series corresponds to
/// time `k` (row 0 is the initial condition).
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub times: Vec<u64>,
    pub state_sq_norm: Vec<f64>,
    /// `per_coordinate_moment[i][k] = λ_i^{2k}·δ^{n_i^k}`.
    pub per_coordinate_moment: Vec<Vec<f64>>,
    pub diverged: bool,
    /// First time the divergence guard fired, if it did.
    pub diverged_at: Option<u64>,
    pub seed: u64,
}

/// Mean, standard error, and sample count of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

fn estimate(values: &[f64]) -> MomentEstimate {
    let (mean, std_error) = mean_and_std_error(values);
    MomentEstimate {
        mean,
        std_error,
        samples: values.len() as u64,
    }
}

/// Round-moment estimates from an erasure-only scheduler run, plus the
/// driven scheduler itself (whose round log backs the CSV outputs).
#[derive(Debug, Clone)]
pub struct SchedulerMoments {
    /// Per pair `i`: estimate of `E[λ_i^{2·T_round}·δ^{n_i received in round}]`.
    pub round_moments: Vec<MomentEstimate>,
    /// Per pair `i`: estimate of `E[λ_i^{2·T_i}]` over that pair's own
    /// phase (the negative-binomial closed form's empirical twin).
    pub single_phase: Vec<MomentEstimate>,
    pub rounds: u64,
    pub scheduler: Scheduler,
}

/// One-step and stopped-process estimates of the exponential martingale
/// `Y_t = exp(θ·S_t + b·t)`; both must sit at 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MartingaleProbe {
    pub one_step: MomentEstimate,
    pub stopped: MomentEstimate,
}

/// Trial-averaged decay curves at fixed checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurves {
    pub times: Vec<u64>,
    /// `mean_moments[i][k]`: average of `λ_i^{2t}·δ^{n_i^t}` at `times[k]`.
    pub mean_moments: Vec<Vec<f64>>,
    pub mean_sq_norm: Vec<f64>,
    /// Fraction of trials flagged diverged by each checkpoint.
    pub diverged_fraction: Vec<f64>,
    /// Least-squares slope of `ln(mean moment)` against `t` per coordinate.
    pub trend_slopes: Vec<f64>,
}

impl DecayCurves {
    /// CSV rows `t,mean_moment_1,…,mean_moment_N,mean_sq_norm,diverged_fraction`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.mean_moments.len() {
            write!(w, ",mean_moment_{i}")?;
        }
        writeln!(w, ",mean_sq_norm,diverged_fraction")?;
        for (k, &t) in self.times.iter().enumerate() {
            write!(w, "{t}")?;
            for coord in &self.mean_moments {
                write!(w, ",{}", fmt_real(coord[k]))?;
            }
            writeln!(
                w,
                ",{},{}",
                fmt_real(self.mean_sq_norm[k]),
                fmt_real(self.diverged_fraction[k])
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Checks that the realized `A` is diagonal with positive entries matching
/// the block order, the only plant shape the simulator drives.
fn check_simulatable(spec: &SystemSpec) -> Result<Vec<f64>, SimError> {
    if !spec.is_real_diagonal() {
        return Err(SimError::UnsupportedSystem);
    }
    let coords = spec.coordinate_log_magnitudes();
    let a = spec.a_matrix();
    for i in 0..spec.state_dim() {
        for j in 0..spec.state_dim() {
            let expected = if i == j { coords[i].exp() } else { 0.0 };
            if (a[(i, j)] - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(SimError::UnsupportedSystem);
            }
        }
    }
    Ok(coords)
}

/// Runs one closed-loop trajectory: each slot the scheduler picks a pair,
/// the encoder transmits, the decoder folds in the output, and the
/// controller applies its input to the plant. Once the divergence guard
/// fires the plant and controller freeze (the flag is reported, the trial
/// is not dropped) while the transmission side, which depends only on the
/// erasure stream, keeps running.
pub fn run_closed_loop(
    spec: &SystemSpec,
    ch: &ChannelParams,
    sched_cfg: &SchedulerConfig,
    horizon: u64,
    seed: u64,
) -> Result<SimTrace, SimError> {
    if horizon > MAX_HORIZON {
        return Err(SimError::HorizonExceeded(horizon));
    }
    let coords = check_simulatable(spec)?;
    let dim = spec.state_dim();
    let ln_delta = ch.delta().ln();

    let gain = deadbeat_gain(spec)?;
    let mut controller = ControllerState::new(gain, dim);
    let mut scheduler = Scheduler::from_config(sched_cfg, dim, &coords, ln_delta)?;
    let mut channel = ChannelInstance::new(*ch, seed);

    // x0 ~ N(0, Σ) from the auxiliary stream of the same seed
    let mut x0_rng = ChaCha12Rng::seed_from_u64(seed);
    x0_rng.set_stream(AUX_STREAM);
    let chol = spec
        .initial_covariance()
        .clone()
        .cholesky()
        .expect("covariance validated positive definite");
    let z = nalgebra::DVector::from_iterator(
        dim,
        (0..dim).map(|_| StandardNormal.sample(&mut x0_rng)),
    );
    let x0 = chol.l() * z;

    let mut pairs: Vec<EstimatorState> = (0..dim)
        .map(|i| EstimatorState::new(i, spec.initial_covariance()[(i, i)]))
        .collect();

    let mut x = x0.clone();
    let mut estimates = nalgebra::DVector::zeros(dim);
    let mut diverged_at = None;

    let steps = horizon as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut state_sq_norm = Vec::with_capacity(steps + 1);
    let mut per_coordinate_moment: Vec<Vec<f64>> =
        vec![Vec::with_capacity(steps + 1); dim];

    times.push(0);
    state_sq_norm.push(x.norm_squared());
    for m in per_coordinate_moment.iter_mut() {
        m.push(1.0);
    }

    for t in 0..horizon {
        let owner = scheduler.owner();
        let s = pairs[owner].encode(x0[owner], ch);
        let tx = channel.transmit(s);
        pairs[owner].decode_update(tx.received, tx.delivered, ch);
        scheduler.step(tx.delivered);

        if diverged_at.is_none() {
            for (i, p) in pairs.iter().enumerate() {
                estimates[i] = p.estimate();
            }
            match controller.step(&estimates, spec) {
                Ok(u) => {
                    x = spec.a_matrix() * x + spec.input_vector() * u;
                    let sq = x.norm_squared();
                    if !sq.is_finite() || sq > DIVERGENCE_NORM * DIVERGENCE_NORM {
                        diverged_at = Some(t + 1);
                    }
                }
                Err(ControlError::Overflow(_)) => diverged_at = Some(t + 1),
                Err(e) => return Err(e.into()),
            }
        }

        times.push(t + 1);
        state_sq_norm.push(x.norm_squared());
        for (i, m) in per_coordinate_moment.iter_mut().enumerate() {
            let log_moment = 2.0 * (t + 1) as f64 * coords[i]
                + pairs[i].success_count() as f64 * ln_delta;
            m.push(log_moment.exp());
        }
    }

    Ok(SimTrace {
        times,
        state_sq_norm,
        per_coordinate_moment,
        diverged: diverged_at.is_some(),
        diverged_at,
        seed,
    })
}

/// Trial-averaged moments, mean squared norm, and diverged fraction at the
/// given strictly increasing checkpoint times.
pub fn moment_curves_at(
    spec: &SystemSpec,
    ch: &ChannelParams,
    sched_cfg: &SchedulerConfig,
    trials: u64,
    times: &[u64],
    master_seed: u64,
) -> Result<DecayCurves, SimError> {
    assert!(trials >= 1, "need at least one trial");
    assert!(!times.is_empty(), "need at least one checkpoint");
    assert!(
        times.windows(2).all(|w| w[0] < w[1]),
        "checkpoints must be strictly increasing"
    );
    let horizon = *times.last().unwrap();
    let dim = spec.state_dim();

    struct TrialRow {
        moments: Vec<Vec<f64>>, // [coord][checkpoint]
        sq_norm: Vec<f64>,
        diverged_at: Option<u64>,
    }

    let rows: Vec<Result<TrialRow, SimError>> = with_pool(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let trace = run_closed_loop(
                    spec,
                    ch,
                    sched_cfg,
                    horizon,
                    derive_seed(master_seed, trial),
                )?;
                let moments = (0..dim)
                    .map(|i| {
                        times
                            .iter()
                            .map(|&t| trace.per_coordinate_moment[i][t as usize])
                            .collect()
                    })
                    .collect();
                let sq_norm = times
                    .iter()
                    .map(|&t| trace.state_sq_norm[t as usize])
                    .collect();
                Ok(TrialRow {
                    moments,
                    sq_norm,
                    diverged_at: trace.diverged_at,
                })
            })
            .collect()
    });
    let rows: Vec<TrialRow> = rows.into_iter().collect::<Result<_, _>>()?;

    let n = trials as f64;
    let mut mean_moments = vec![Vec::with_capacity(times.len()); dim];
    let mut mean_sq_norm = Vec::with_capacity(times.len());
    let mut diverged_fraction = Vec::with_capacity(times.len());
    let mut column = Vec::with_capacity(rows.len());
    for (k, &t) in times.iter().enumerate() {
        for (i, means) in mean_moments.iter_mut().enumerate() {
            column.clear();
            column.extend(rows.iter().map(|r| r.moments[i][k]));
            means.push(pairwise_sum(&column) / n);
        }
        column.clear();
        column.extend(rows.iter().map(|r| r.sq_norm[k]));
        mean_sq_norm.push(pairwise_sum(&column) / n);
        let diverged = rows
            .iter()
            .filter(|r| r.diverged_at.is_some_and(|d| d <= t))
            .count();
        diverged_fraction.push(diverged as f64 / n);
    }

    let trend_slopes = mean_moments
        .iter()
        .map(|means| log_trend_slope(times, means))
        .collect();

    Ok(DecayCurves {
        times: times.to_vec(),
        mean_moments,
        mean_sq_norm,
        diverged_fraction,
        trend_slopes,
    })
}

/// Decay curves on the standard grid of 20 evenly spaced checkpoints.
pub fn montecarlo_moments(
    spec: &SystemSpec,
    ch: &ChannelParams,
    sched_cfg: &SchedulerConfig,
    trials: u64,
    horizon: u64,
    master_seed: u64,
) -> Result<DecayCurves, SimError> {
    let step = (horizon / 20).max(1);
    let times: Vec<u64> = (1..)
        .map(|k| k * step)
        .take_while(|&t| t <= horizon)
        .collect();
    moment_curves_at(spec, ch, sched_cfg, trials, &times, master_seed)
}

/// Least-squares slope of `ln(y)` against `t`, over finite positive
/// entries; NaN when fewer than two usable points.
fn log_trend_slope(times: &[u64], values: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v.is_finite() && v > 0.0)
        .map(|(&t, &v)| (t as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.0 - mean_t)).sum();
    num / den
}

/// Erasure-only Monte Carlo over i.i.d. scheduler rounds: estimates the
/// per-pair round moments `E[λ_i^{2T_round}·δ^{n_i}]` and the single-phase
/// factors `E[λ_i^{2T_i}]`.
pub fn scheduler_moment_mc(
    sched_cfg: &SchedulerConfig,
    ln_ls: &[f64],
    ch: &ChannelParams,
    rounds: u64,
    seed: u64,
) -> Result<SchedulerMoments, SimError> {
    assert!(rounds >= 1, "need at least one round");
    let ln_delta = ch.delta().ln();
    let mut scheduler = Scheduler::from_config(sched_cfg, ln_ls.len(), ln_ls, ln_delta)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let deliver_prob = 1.0 - ch.drop_prob();

    while (scheduler.rounds_completed() as u64) < rounds {
        scheduler.step(rng.random_bool(deliver_prob));
    }

    let dim = ln_ls.len();
    let mut round_values: Vec<Vec<f64>> = vec![Vec::with_capacity(rounds as usize); dim];
    let mut phase_values: Vec<Vec<f64>> = vec![Vec::with_capacity(rounds as usize); dim];

    match &scheduler {
        Scheduler::Adaptive(s) => {
            let quotas = s.quotas().to_vec();
            for row in s.round_log() {
                let t_round: u32 = row.iter().sum();
                for i in 0..dim {
                    round_values[i].push(
                        (2.0 * ln_ls[i] * t_round as f64 + quotas[i] as f64 * ln_delta).exp(),
                    );
                    phase_values[i].push((2.0 * ln_ls[i] * row[i] as f64).exp());
                }
            }
        }
        Scheduler::Fixed(s) => {
            for (slots, received) in s.round_log().iter().zip(s.received_log()) {
                let t_round: u32 = slots.iter().sum();
                for i in 0..dim {
                    round_values[i].push(
                        (2.0 * ln_ls[i] * t_round as f64 + received[i] as f64 * ln_delta)
                            .exp(),
                    );
                    phase_values[i].push((2.0 * ln_ls[i] * slots[i] as f64).exp());
                }
            }
        }
        Scheduler::Optimal(s) => {
            let n1 = s.n1();
            for r in s.round_log() {
                let t_round = (r.t1 + r.t2) as f64;
                round_values[0]
                    .push((2.0 * ln_ls[0] * t_round + n1 as f64 * ln_delta).exp());
                round_values[1]
                    .push((2.0 * ln_ls[1] * t_round + r.n2 as f64 * ln_delta).exp());
                phase_values[0].push((2.0 * ln_ls[0] * r.t1 as f64).exp());
                phase_values[1].push((2.0 * ln_ls[1] * r.t2 as f64).exp());
            }
        }
    }

    Ok(SchedulerMoments {
        round_moments: round_values.iter().map(|v| estimate(v)).collect(),
        single_phase: phase_values.iter().map(|v| estimate(v)).collect(),
        rounds,
        scheduler,
    })
}

/// Validates the exponential-martingale construction empirically: the
/// one-step mean `E[exp(θγ + b)]` over i.i.d. erasures, and the
/// stopped-process mean `E[Y_{T_2}]` over replayed phase-2 episodes with
/// quota `n1`; both sit at 1 (the stopping time is bounded, so optional
/// stopping applies exactly).
pub fn martingale_probe(
    theta: &ThetaSolution,
    n1: u32,
    ch: &ChannelParams,
    one_step_samples: u64,
    episodes: u64,
    seed: u64,
) -> MartingaleProbe {
    let deliver_prob = 1.0 - ch.drop_prob();
    let success_value = (theta.theta + theta.drift).exp();
    let failure_value = theta.drift.exp();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let one_step_values: Vec<f64> = (0..one_step_samples)
        .map(|_| {
            if rng.random_bool(deliver_prob) {
                success_value
            } else {
                failure_value
            }
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut stopped_values = Vec::with_capacity(episodes as usize);
    while stopped_values.len() < episodes as usize {
        // phase 1: negative-binomial duration for n1 successes
        let mut t1 = 0u64;
        let mut successes = 0u32;
        while successes < n1 {
            t1 += 1;
            if rng.random_bool(deliver_prob) {
                successes += 1;
            }
        }
        if n1 as f64 + theta.phi * t1 as f64 <= 0.0 {
            continue; // phase 2 skipped; not an episode
        }
        let mut t2 = 0u64;
        let mut s = 0u32;
        loop {
            t2 += 1;
            if rng.random_bool(deliver_prob) {
                s += 1;
            }
            if s as f64 > n1 as f64 + theta.phi * (t1 + t2) as f64 {
                break;
            }
        }
        stopped_values.push((theta.theta * s as f64 + theta.drift * t2 as f64).exp());
    }

    MartingaleProbe {
        one_step: estimate(&one_step_values),
        stopped: estimate(&stopped_values),
    }
}
