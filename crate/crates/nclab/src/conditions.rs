//! Analytic mean-square stabilizability tests, the exponential-tilt
//! (θ) equation solver, success-quota selection, and the region sweep.
//!
//! Four criteria are implemented for a plant with distinct unstable
//! log-magnitudes `ln|λ_i|` over a channel with erasure probability ε and
//! contraction factor δ:
//!
//! - [`tdma_sufficient`]: fixed TDMA sufficiency,
//!   `Σ μ_i ln|λ_i| < −½·ln(ε + (1−ε)δ)`;
//! - [`necessity_holds`]: the necessary condition over every nonzero mode
//!   selection `v_i ∈ {0..m_i}`;
//! - [`adaptive_feasible`]: existence of a fraction vector `α` with
//!   `ln|λ_i| < −½·ln(ε + (1−ε)δ^{α_i/μ_i})` for all `i`;
//! - [`optimal2d_condition`]: the tight two-dimensional test, which for a
//!   pair of simple real magnitudes coincides with necessity.
//!
//! All inequalities are evaluated strictly: a point sitting exactly on a
//! threshold classifies as outside.

use crate::model::{ChannelParams, SystemSpec};
use crate::util::{fmt_real, with_pool};
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionsError {
    #[error("no quota vector with total at most {cap} satisfies the round contraction requirement")]
    CapExceeded { cap: u32 },
    #[error("the adaptive feasibility condition fails; no success quotas exist")]
    Infeasible,
    #[error("ln|lambda_1| must be at least ln|lambda_2| (got {ln_l1} < {ln_l2})")]
    OrderViolation { ln_l1: f64, ln_l2: f64 },
    #[error("epsilon * |lambda|^2 = {value} >= 1: the round moment diverges")]
    DivergentMoment { value: f64 },
    #[error("no root in (ln(delta)/2, 0): ln|lambda_1| + ln|lambda_2| violates the sum bound")]
    NoRoot,
    #[error("equal log-magnitudes leave the tilt exponent undefined")]
    DegenerateEqualMagnitudes,
}

/// Result of the α-feasibility test. `minimum_fractions[i]` is the least
/// channel fraction mode `i` can live with (`+∞` when no fraction works);
/// `witness` is a strictly positive vector summing to one that beats every
/// minimum, present iff `feasible`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub minimum_fractions: Vec<f64>,
    pub feasible: bool,
    pub witness: Option<Vec<f64>>,
}

/// Outcome of the necessity enumeration. On failure,
/// `violating_selection` is the lexicographically first `(v_1, …, v_d)`
/// breaking the inequality and `v_total = Σ a_i v_i ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NecessityCheck {
    pub holds: bool,
    pub violating_selection: Option<Vec<usize>>,
    pub v_total: usize,
}

/// Root of the tilt equation `θφ − ln[(1−ε)e^θ + ε] = 2·ln|λ_1|` together
/// with the exponent `φ = 2(ln|λ_1|−ln|λ_2|)/ln δ` and the drift
/// `b = −ln[(1−ε)e^θ + ε]` that makes `exp(θγ + b)` mean one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSolution {
    pub theta: f64,
    pub phi: f64,
    pub drift: f64,
    pub residual: f64,
}

/// One grid point of a region sweep with its four classifications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionCell {
    pub ln_l1: f64,
    pub ln_l2: f64,
    pub necessary: bool,
    pub tdma: bool,
    pub adaptive: bool,
    pub optimal2d: bool,
}

/// Pointwise classification of the square `[0, ln_max]²`. Cells below the
/// diagonal are classified on the sorted magnitude pair, so the containment
/// chain holds on every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub cells: Vec<RegionCell>,
    pub resolution: usize,
    pub ln_max: f64,
}

impl RegionReport {
    /// CSV rows `ln_l1,ln_l2,necessary,tdma,adaptive,optimal2d`, flags as
    /// 0/1, ln_l1 ascending then ln_l2 ascending.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "ln_l1,ln_l2,necessary,tdma,adaptive,optimal2d")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_real(c.ln_l1),
                fmt_real(c.ln_l2),
                c.necessary as u8,
                c.tdma as u8,
                c.adaptive as u8,
                c.optimal2d as u8
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

/// Fixed-TDMA sufficiency: `Σ μ_i ln|λ_i| < −½·ln(ε + (1−ε)δ)`.
pub fn tdma_sufficient(spec: &SystemSpec, ch: &ChannelParams) -> bool {
    let eps = ch.drop_prob();
    let lhs: f64 = spec
        .blocks()
        .iter()
        .map(|b| b.block_size() as f64 * b.log_magnitude())
        .sum();
    lhs < -0.5 * (eps + (1.0 - eps) * ch.delta()).ln()
}

/// Necessity: for every selection `v_i ∈ {0..m_i}` other than all-zero,
/// `Σ a_i v_i ln|λ_i| < −(v/2)·ln(ε + (1−ε)δ^{1/v})` with `v = Σ a_i v_i`.
/// Selections are visited in lexicographic order and the first violation
/// is reported.
pub fn necessity_holds(spec: &SystemSpec, ch: &ChannelParams) -> NecessityCheck {
    let eps = ch.drop_prob();
    let delta = ch.delta();
    let blocks = spec.blocks();
    let mut selection = vec![0usize; blocks.len()];
    loop {
        // lexicographic odometer over {0..m_i} per block
        let mut pos = blocks.len();
        loop {
            if pos == 0 {
                return NecessityCheck {
                    holds: true,
                    violating_selection: None,
                    v_total: 0,
                };
            }
            pos -= 1;
            if selection[pos] < blocks[pos].algebraic_multiplicity() {
                selection[pos] += 1;
                for s in selection.iter_mut().skip(pos + 1) {
                    *s = 0;
                }
                break;
            }
        }
        let v: usize = selection
            .iter()
            .zip(blocks)
            .map(|(&vi, b)| b.arity() * vi)
            .sum();
        let lhs: f64 = selection
            .iter()
            .zip(blocks)
            .map(|(&vi, b)| (b.arity() * vi) as f64 * b.log_magnitude())
            .sum();
        let rhs = -(v as f64 / 2.0) * (eps + (1.0 - eps) * delta.powf(1.0 / v as f64)).ln();
        if lhs >= rhs {
            return NecessityCheck {
                holds: false,
                violating_selection: Some(selection),
                v_total: v,
            };
        }
    }
}

/// Per-block minimum channel fraction, obtained by inverting
/// `ln|λ| < −½·ln(ε + (1−ε)δ^{α/μ})` for α. Returns `+∞` when the mode is
/// unstabilizable at any fraction (`|λ|^{−2} ≤ ε`).
fn min_fraction(log_magnitude: f64, block_size: usize, eps: f64, delta: f64) -> f64 {
    let lam2_inv = (-2.0 * log_magnitude).exp();
    if log_magnitude > 0.0 && lam2_inv <= eps {
        return f64::INFINITY;
    }
    let ratio = (lam2_inv - eps) / (1.0 - eps);
    if ratio >= 1.0 {
        // on the unit circle: any positive fraction suffices
        return 0.0;
    }
    (block_size as f64 * ratio.ln() / delta.ln()).max(0.0)
}

/// Adaptive-TDMA feasibility. Feasible iff `Σ α_i,min < 1`; the witness
/// distributes the slack proportionally to the block sizes (any positive
/// split would do).
pub fn adaptive_feasible(spec: &SystemSpec, ch: &ChannelParams) -> AlphaVector {
    let eps = ch.drop_prob();
    let delta = ch.delta();
    let mins: Vec<f64> = spec
        .blocks()
        .iter()
        .map(|b| min_fraction(b.log_magnitude(), b.block_size(), eps, delta))
        .collect();
    let sum: f64 = mins.iter().sum();
    if !sum.is_finite() || sum >= 1.0 {
        return AlphaVector {
            minimum_fractions: mins,
            feasible: false,
            witness: None,
        };
    }
    let slack = 1.0 - sum;
    let mu_total: f64 = spec
        .blocks()
        .iter()
        .map(|b| b.block_size() as f64)
        .sum();
    let witness = spec
        .blocks()
        .iter()
        .zip(&mins)
        .map(|(b, &m)| m + slack * b.block_size() as f64 / mu_total)
        .collect();
    AlphaVector {
        minimum_fractions: mins,
        feasible: true,
        witness: Some(witness),
    }
}

/// Per-round expansion factor for one coordinate under its quota: the
/// round contraction test requires
/// `ln[λ²(1−ε)/(1−ελ²)] + (n_i/Σn)·ln δ < 0`.
fn round_log_factor(log_magnitude: f64, eps: f64) -> Option<f64> {
    let lam2 = (2.0 * log_magnitude).exp();
    if eps * lam2 >= 1.0 {
        return None;
    }
    Some((lam2 * (1.0 - eps) / (1.0 - eps * lam2)).ln())
}

/// Smallest-total success quotas `(n_1, …, n_N)` making every coordinate's
/// round factor contract; ties broken by the lexicographically smallest
/// vector. Totals are searched increasing up to `cap`.
pub fn quota_search(
    spec: &SystemSpec,
    ch: &ChannelParams,
    cap: u32,
) -> Result<Vec<u32>, ConditionsError> {
    if !adaptive_feasible(spec, ch).feasible {
        return Err(ConditionsError::Infeasible);
    }
    let eps = ch.drop_prob();
    let ln_delta = ch.delta().ln();
    let coords = spec.coordinate_log_magnitudes();
    let factors: Vec<f64> = coords
        .iter()
        .map(|&l| round_log_factor(l, eps).ok_or(ConditionsError::Infeasible))
        .collect::<Result<_, _>>()?;
    let n = coords.len() as u32;

    let contracts = |factor: f64, quota: u32, total: u32| -> bool {
        factor + (quota as f64 / total as f64) * ln_delta < 0.0
    };

    for total in n..=cap {
        // per-coordinate minimum quota at this total, if any
        let mut mins = Vec::with_capacity(factors.len());
        let mut feasible_total = true;
        let mut sum = 0u32;
        for &f in &factors {
            match (1..=total).find(|&q| contracts(f, q, total)) {
                Some(q) => {
                    mins.push(q);
                    sum += q;
                }
                None => {
                    feasible_total = false;
                    break;
                }
            }
        }
        if feasible_total && sum <= total {
            // lexicographically smallest: keep minima, surplus to the last
            let last = mins.len() - 1;
            mins[last] += total - sum;
            return Ok(mins);
        }
    }
    Err(ConditionsError::CapExceeded { cap })
}

/// The tight two-dimensional condition for simple real magnitudes
/// `ln_l1 ≥ ln_l2 ≥ 0`:
/// `ln_l1 < −½·ln((1−ε)δ + ε)` and `ln_l1 + ln_l2 < −ln((1−ε)√δ + ε)`.
pub fn optimal2d_condition(
    ln_l1: f64,
    ln_l2: f64,
    ch: &ChannelParams,
) -> Result<bool, ConditionsError> {
    if ln_l1 < ln_l2 {
        return Err(ConditionsError::OrderViolation { ln_l1, ln_l2 });
    }
    let eps = ch.drop_prob();
    let delta = ch.delta();
    let single = -0.5 * ((1.0 - eps) * delta + eps).ln();
    let pair = -((1.0 - eps) * delta.sqrt() + eps).ln();
    Ok(ln_l1 < single && ln_l1 + ln_l2 < pair)
}

/// Equal-magnitude criterion: with `μ_1 + … + μ_{d_u}` unstable block
/// sizes sharing log-magnitude `common_ln`, stabilizable iff
/// `common_ln < −½·ln(ε + (1−ε)δ^{1/total})`.
pub fn equal_magnitude_condition(
    common_ln: f64,
    total_block_size: usize,
    ch: &ChannelParams,
) -> bool {
    let eps = ch.drop_prob();
    let delta = ch.delta();
    common_ln
        < -0.5 * (eps + (1.0 - eps) * delta.powf(1.0 / total_block_size as f64)).ln()
}

/// Closed form of `E[λ^{2T}]` for a phase needing `n` successes:
/// `(λ²(1−ε)/(1−ελ²))^n`. Errors when `ελ² ≥ 1`, where the underlying
/// geometric series diverges.
pub fn expected_round_factor(
    ln_l: f64,
    quota: u32,
    ch: &ChannelParams,
) -> Result<f64, ConditionsError> {
    let eps = ch.drop_prob();
    let lam2 = (2.0 * ln_l).exp();
    if eps * lam2 >= 1.0 {
        return Err(ConditionsError::DivergentMoment { value: eps * lam2 });
    }
    Ok((lam2 * (1.0 - eps) / (1.0 - eps * lam2)).powi(quota as i32))
}

const THETA_RESIDUAL_TOL: f64 = 1e-10;
const THETA_MAX_ITER: usize = 200;
const THETA_BRACKET_SHRINK: f64 = 1e-12;

/// Solves `θφ − ln[(1−ε)e^θ + ε] = 2·ln_l1` for θ by bisection on
/// `(½·ln δ, 0)`, shrunk by 1e−12 at both ends. The left endpoint has
/// positive sign exactly when the pair bound of
/// [`optimal2d_condition`] holds, so a sign change is guaranteed there.
pub fn solve_theta(
    ln_l1: f64,
    ln_l2: f64,
    ch: &ChannelParams,
) -> Result<ThetaSolution, ConditionsError> {
    if ln_l1 == ln_l2 {
        return Err(ConditionsError::DegenerateEqualMagnitudes);
    }
    if ln_l1 < ln_l2 {
        return Err(ConditionsError::OrderViolation { ln_l1, ln_l2 });
    }
    let eps = ch.drop_prob();
    let ln_delta = ch.delta().ln();
    let phi = 2.0 * (ln_l1 - ln_l2) / ln_delta;
    let f = |theta: f64| theta * phi - ((1.0 - eps) * theta.exp() + eps).ln() - 2.0 * ln_l1;

    let mut lo = 0.5 * ln_delta + THETA_BRACKET_SHRINK;
    let mut hi = -THETA_BRACKET_SHRINK;
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo <= 0.0 || f_hi >= 0.0 {
        return Err(ConditionsError::NoRoot);
    }
    let mut mid = 0.5 * (lo + hi);
    let mut res = f(mid);
    for _ in 0..THETA_MAX_ITER {
        if res.abs() < THETA_RESIDUAL_TOL {
            break;
        }
        if res > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        res = f(mid);
    }
    Ok(ThetaSolution {
        theta: mid,
        phi,
        drift: -((1.0 - eps) * mid.exp() + eps).ln(),
        residual: res,
    })
}

/// Smallest `n_1 ≤ cap` with `2·(δ·e^{−2θ})^{n_1} + ρ^{n_1} < 1`, where
/// `ρ = λ_1²δ(1−ε)/(1−ελ_1²)`. The stopping-overshoot constant is taken
/// as zero.
pub fn min_n1_for_contraction(
    theta: &ThetaSolution,
    ln_l1: f64,
    ch: &ChannelParams,
    cap: u32,
) -> Result<u32, ConditionsError> {
    let eps = ch.drop_prob();
    let delta = ch.delta();
    let lam2 = (2.0 * ln_l1).exp();
    if eps * lam2 >= 1.0 {
        return Err(ConditionsError::DivergentMoment { value: eps * lam2 });
    }
    let tilt_base = delta * (-2.0 * theta.theta).exp();
    let rho = lam2 * delta * (1.0 - eps) / (1.0 - eps * lam2);
    for n in 1..=cap {
        if 2.0 * tilt_base.powi(n as i32) + rho.powi(n as i32) < 1.0 {
            return Ok(n);
        }
    }
    Err(ConditionsError::CapExceeded { cap })
}

/// The balanced success allocation
/// `n_i* = (1/N)(n + 2t·Σ_j ln|λ_j|/ln δ) − 2t·ln|λ_i|/ln δ`.
///
/// The entries sum to `n` exactly. For skewed spectra at large `t` an
/// entry can be negative; values are returned raw and interpretation is
/// left to the caller.
pub fn oracle_allocation(ln_ls: &[f64], t: u64, n: u64, ch: &ChannelParams) -> Vec<f64> {
    let ln_delta = ch.delta().ln();
    let dims = ln_ls.len() as f64;
    let total: f64 = ln_ls.iter().sum();
    let base = (n as f64 + 2.0 * t as f64 * total / ln_delta) / dims;
    ln_ls
        .iter()
        .map(|&l| base - 2.0 * t as f64 * l / ln_delta)
        .collect()
}

/// Classifies every point of a `resolution × resolution` grid over
/// `[0, ln_max]²` by the four criteria, treating each point as a pair of
/// simple real magnitudes (sorted before evaluation, so the report is
/// symmetric across the diagonal). Rows are ordered `ln_l1` ascending,
/// then `ln_l2` ascending.
pub fn region_sweep(ch: &ChannelParams, ln_max: f64, resolution: usize) -> RegionReport {
    assert!(resolution >= 2, "resolution must be at least 2");
    assert!(ln_max > 0.0, "ln_max must be positive");
    let step = ln_max / (resolution - 1) as f64;
    let grid: Vec<f64> = (0..resolution).map(|i| i as f64 * step).collect();

    let cells: Vec<RegionCell> = with_pool(|| {
        grid.par_iter()
            .flat_map_iter(|&v1| {
                let grid = &grid;
                let ch = *ch;
                grid.iter().map(move |&v2| {
                    let (hi, lo) = if v1 >= v2 { (v1, v2) } else { (v2, v1) };
                    let spec = SystemSpec::magnitude_pair(hi, lo)
                        .expect("grid points are ordered and nonnegative");
                    RegionCell {
                        ln_l1: v1,
                        ln_l2: v2,
                        necessary: necessity_holds(&spec, &ch).holds,
                        tdma: tdma_sufficient(&spec, &ch),
                        adaptive: adaptive_feasible(&spec, &ch).feasible,
                        optimal2d: optimal2d_condition(hi, lo, &ch)
                            .expect("pair is sorted"),
                    }
                })
            })
            .collect()
    });

    RegionReport {
        cells,
        resolution,
        ln_max,
    }
}
