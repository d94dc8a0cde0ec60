//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `--nocapture` to see them) and enforcing its runtime budget.
//!
//! Reference constants are frozen from an independent 30-digit evaluation
//! of the closed forms; Monte Carlo checks run against independent
//! samplers written in this file, never against the code paths they test.

use nalgebra::{DMatrix, DVector};
use nclab::conditions::{
    adaptive_feasible, equal_magnitude_condition, expected_round_factor, min_n1_for_contraction,
    necessity_holds, optimal2d_condition, region_sweep, solve_theta, tdma_sufficient,
    ConditionsError,
};
use nclab::control::{deadbeat_gain_for, ControlError};
use nclab::model::{ChannelParams, EigenBlock, SystemSpec};
use nclab::sched::SchedulerConfig;
use nclab::sim::{martingale_probe, moment_curves_at, scheduler_moment_mc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::time::Instant;

/// −½·ln(0.85), the single-mode bound at ε = 0.7, δ = 0.5.
const SINGLE_BOUND: f64 = 0.08125946474888746;
/// −ln(0.7 + 0.3·√0.5), the pair-sum bound.
const PAIR_BOUND: f64 = 0.09197052487350542;
/// −½·ln(0.7 + 0.3·√0.5), the equal-magnitude bound for μ-total 2.
const DIAG_BOUND: f64 = 0.04598526243675271;
/// Root of the tilt equation at (0.05, 0.03), ε = 0.7, δ = 0.5.
const THETA_REF: f64 = -0.3058486107514837;

fn ch07() -> ChannelParams {
    ChannelParams::new(1.0, 1.0, 0.7).unwrap()
}

fn pair_spec(l1: f64, l2: f64) -> SystemSpec {
    SystemSpec::new(
        vec![EigenBlock::real(l1), EigenBlock::real(l2)],
        &[1.0, 1.0],
        None,
        None,
    )
    .unwrap()
}

/// Bisects the true→false flip of a predicate on [lo, hi] to width `tol`.
fn flip_point(mut lo: f64, mut hi: f64, tol: f64, pred: impl Fn(f64) -> bool) -> f64 {
    assert!(pred(lo) && !pred(hi), "flip not bracketed");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_01_fig3_thresholds() {
    let start = Instant::now();
    let ch = ch07();
    assert_eq!(ch.delta(), 0.5);

    // closed forms as computed by the library's inequality code paths:
    // recover each bound as the classification flip point
    let single = flip_point(0.0, 0.12, 1e-12, |l| {
        optimal2d_condition(l, 0.0, &ch).unwrap()
    });
    assert!(
        (single - SINGLE_BOUND).abs() < 1e-9,
        "single-mode bound {single} vs {SINGLE_BOUND}"
    );

    let pair = 0.06 + flip_point(0.0, 0.06, 1e-12, |l2| {
        optimal2d_condition(0.06, l2, &ch).unwrap()
    });
    assert!(
        (pair - PAIR_BOUND).abs() < 1e-9,
        "pair-sum bound {pair} vs {PAIR_BOUND}"
    );

    let diag = flip_point(1e-6, 0.12, 1e-12, |l| equal_magnitude_condition(l, 2, &ch));
    assert!(
        (diag - DIAG_BOUND).abs() < 1e-9,
        "diagonal bound {diag} vs {DIAG_BOUND}"
    );

    // consistency: the equal-magnitude bound with one block equals the
    // single-mode bound
    let diag1 = flip_point(1e-6, 0.12, 1e-12, |l| equal_magnitude_condition(l, 1, &ch));
    assert!((diag1 - SINGLE_BOUND).abs() < 1e-9);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "runtime {elapsed:?} >= 1 s");
    println!("criterion 1 (fig-3 thresholds to 1e-9): PASS in {elapsed:?}");
}

#[test]
fn criterion_02_region_containment() {
    let start = Instant::now();
    let ch = ch07();
    let report = region_sweep(&ch, 0.12, 200);
    assert_eq!(report.cells.len(), 200 * 200);

    let mut gap_cells = 0u32;
    for c in report.cells.iter().filter(|c| c.ln_l1 >= c.ln_l2) {
        assert!(!c.tdma || c.adaptive, "tdma => adaptive at {c:?}");
        assert!(!c.adaptive || c.optimal2d, "adaptive => optimal at {c:?}");
        assert!(!c.optimal2d || c.necessary, "optimal => necessary at {c:?}");
        assert_eq!(
            c.optimal2d, c.necessary,
            "for simple real pairs the tight condition equals necessity at {c:?}"
        );
        if c.adaptive != c.optimal2d {
            // the adaptive region touches the tight one exactly on the
            // diagonal and on the axes; gaps live strictly inside
            assert!(
                c.ln_l1 > c.ln_l2 && c.ln_l2 > 0.0,
                "gap cell must be strictly interior, found {c:?}"
            );
            gap_cells += 1;
        }
    }
    assert!(gap_cells > 0, "the adaptive-vs-optimal gap must be nonempty");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "runtime {elapsed:?} >= 10 s");
    println!(
        "criterion 2 (200x200 region containment, {gap_cells} gap cells): PASS in {elapsed:?}"
    );
}

/// Independent negative-binomial sampler: slots to collect `n` successes.
fn sample_negbin(rng: &mut ChaCha12Rng, n: u32, success_prob: f64) -> u32 {
    let mut t = 0u32;
    let mut successes = 0u32;
    while successes < n {
        t += 1;
        if rng.random_bool(success_prob) {
            successes += 1;
        }
    }
    t
}

#[test]
fn criterion_03_closed_form_vs_monte_carlo() {
    let start = Instant::now();
    let ch = ch07();
    let lam2: f64 = 1.1;
    let ln_l = lam2.ln() / 2.0;
    let mut rng = ChaCha12Rng::seed_from_u64(30_003);
    for quota in [1u32, 3] {
        let expected = expected_round_factor(ln_l, quota, &ch).unwrap();
        let draws = 1_000_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let t = sample_negbin(&mut rng, quota, 0.3);
            let v = lam2.powi(t as i32);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let var = (sum_sq - sum * sum / draws as f64) / (draws as f64 - 1.0);
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "n={quota}: MC {mean} vs closed form {expected} (se {se})"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "runtime {elapsed:?} >= 10 s");
    println!("criterion 3 (round-factor closed form vs 1e6-draw MC): PASS in {elapsed:?}");
}

#[test]
fn criterion_04_negative_binomial_distribution_fit() {
    let start = Instant::now();
    let eps = 0.7f64;
    let n = 2u32;
    let rounds = 100_000u64;
    // drive the adaptive scheduler itself and read T_k^1 off the round log
    let mut sched = nclab::sched::AdaptiveTdma::new(vec![n, 1]).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(40_004);
    while (sched.round_log().len() as u64) < rounds {
        sched.step(rng.random_bool(1.0 - eps));
    }
    let mut counts: Vec<u64> = Vec::new();
    for round in sched.round_log().iter().take(rounds as usize) {
        let t1 = round[0] as usize;
        if counts.len() <= t1 {
            counts.resize(t1 + 1, 0);
        }
        counts[t1] += 1;
    }
    // Pr(T = n + l) = C(n+l-1, n-1) (1-eps)^n eps^l; for n = 2 the
    // coefficient is l + 1
    let mut tv = 0.0;
    let mut modeled_mass = 0.0;
    for t in 2..counts.len().max(200) {
        let l = (t - 2) as f64;
        let p = (l + 1.0) * 0.3f64.powi(2) * eps.powf(l);
        let observed = counts.get(t).copied().unwrap_or(0) as f64 / rounds as f64;
        tv += 0.5 * (observed - p).abs();
        modeled_mass += p;
    }
    tv += 0.5 * (1.0 - modeled_mass); // tail the scan never reached
    assert!(tv < 0.01, "total variation distance {tv} >= 0.01");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "runtime {elapsed:?} >= 5 s");
    println!("criterion 4 (T distribution TV {tv:.5} < 0.01): PASS in {elapsed:?}");
}

#[test]
fn criterion_05_round_moment_contraction() {
    let start = Instant::now();
    let ch = ch07();
    let sol = solve_theta(0.05, 0.03, &ch).unwrap();
    let n1 = min_n1_for_contraction(&sol, 0.05, &ch, 64).unwrap();
    assert_eq!(n1, 10, "contraction scan must select n1 = 10");

    let moments = scheduler_moment_mc(
        &SchedulerConfig::Optimal2d { n1 },
        &[0.05, 0.03],
        &ch,
        100_000,
        50_005,
    )
    .unwrap();
    for (i, est) in moments.round_moments.iter().enumerate() {
        assert!(
            est.mean + 3.0 * est.std_error < 1.0,
            "pair {i} round moment {} + 3se {} not below 1",
            est.mean,
            est.std_error
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "runtime {elapsed:?} >= 30 s");
    println!(
        "criterion 5 (round moments {:.4}, {:.4} below 1 by 3se): PASS in {elapsed:?}",
        moments.round_moments[0].mean, moments.round_moments[1].mean
    );
}

#[test]
fn criterion_06_theta_solver() {
    let start = Instant::now();
    let ch = ch07();
    let sol = solve_theta(0.05, 0.03, &ch).unwrap();
    let half_ln_delta = 0.5 * 0.5f64.ln();
    assert!(sol.theta > half_ln_delta && sol.theta < 0.0);
    assert!(sol.residual.abs() < 1e-10);
    assert!((sol.theta - THETA_REF).abs() < 5e-4);
    assert!((sol.theta - (-0.3061)).abs() < 5e-4);

    // independent oracle: two-stage linear grid scan for the sign change
    let f = |theta: f64| {
        theta * sol.phi - (0.3 * theta.exp() + 0.7).ln() - 0.1
    };
    let mut coarse = half_ln_delta;
    let mut theta_scan = None;
    while coarse < 0.0 {
        if f(coarse) > 0.0 && f(coarse + 1e-4) <= 0.0 {
            let mut fine = coarse;
            while fine < coarse + 1e-4 {
                if f(fine) > 0.0 && f(fine + 1e-6) <= 0.0 {
                    theta_scan = Some(fine + 5e-7);
                    break;
                }
                fine += 1e-6;
            }
            break;
        }
        coarse += 1e-4;
    }
    let theta_scan = theta_scan.expect("scan oracle must find the sign change");
    assert!(
        (sol.theta - theta_scan).abs() < 2e-6,
        "solver {} vs scan {}",
        sol.theta,
        theta_scan
    );

    assert_eq!(
        solve_theta(0.06, 0.035, &ch),
        Err(ConditionsError::NoRoot),
        "the sum bound is violated at (0.06, 0.035)"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 0.1, "runtime {elapsed:?} >= 0.1 s");
    println!(
        "criterion 6 (theta {:.6} vs scan, residual {:.1e}): PASS in {elapsed:?}",
        sol.theta, sol.residual
    );
}

#[test]
fn criterion_07_martingale_optional_stopping() {
    let start = Instant::now();
    let ch = ch07();
    let sol = solve_theta(0.05, 0.03, &ch).unwrap();
    let probe = martingale_probe(&sol, 10, &ch, 1_000_000, 100_000, 70_007);
    assert!(
        (probe.one_step.mean - 1.0).abs() < 3.0 * probe.one_step.std_error,
        "one-step mean {} (se {})",
        probe.one_step.mean,
        probe.one_step.std_error
    );
    assert!(
        (probe.stopped.mean - 1.0).abs() < 3.0 * probe.stopped.std_error,
        "stopped mean {} (se {})",
        probe.stopped.mean,
        probe.stopped.std_error
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 20.0, "runtime {elapsed:?} >= 20 s");
    println!(
        "criterion 7 (martingale one-step {:.5}, stopped {:.5}): PASS in {elapsed:?}",
        probe.one_step.mean, probe.stopped.mean
    );
}

#[test]
fn criterion_08_closed_loop_decay_and_growth() {
    let start = Instant::now();
    let ch = ch07();
    let checkpoints = [200u64, 600];

    let stable = pair_spec(0.05, 0.03);
    let curves = moment_curves_at(
        &stable,
        &ch,
        &SchedulerConfig::Optimal2d { n1: 10 },
        2000,
        &checkpoints,
        80_008,
    )
    .unwrap();
    for i in 0..2 {
        assert!(
            curves.mean_moments[i][1] < curves.mean_moments[i][0],
            "coordinate {i}: moment grew from {} to {}",
            curves.mean_moments[i][0],
            curves.mean_moments[i][1]
        );
    }
    assert_eq!(
        curves.diverged_fraction,
        vec![0.0, 0.0],
        "no trial may trip the divergence guard at (0.05, 0.03)"
    );

    // outside the stabilizable region no quota achieves round contraction
    // (rho = 1.044 > 1), so any n1 works for the demonstration; n1 = 1
    // makes even the typical trajectory expand, which keeps the 10x check
    // far from Monte Carlo tail noise
    let unstable = pair_spec(0.085, 0.001);
    let contrast = moment_curves_at(
        &unstable,
        &ch,
        &SchedulerConfig::Optimal2d { n1: 1 },
        2000,
        &checkpoints,
        80_008,
    )
    .unwrap();
    assert!(
        contrast.mean_moments[0][1] >= 10.0 * contrast.mean_moments[0][0],
        "pair-1 moment must grow at least 10x: t200 {} vs t600 {}",
        contrast.mean_moments[0][0],
        contrast.mean_moments[0][1]
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "runtime {elapsed:?} >= 2 min");
    println!(
        "criterion 8 (decay {:.3e}->{:.3e} / growth {:.3e}->{:.3e}): PASS in {elapsed:?}",
        curves.mean_moments[0][0],
        curves.mean_moments[0][1],
        contrast.mean_moments[0][0],
        contrast.mean_moments[0][1]
    );
}

#[test]
fn criterion_09_codec_laws() {
    use nclab::channel::ChannelInstance;
    use nclab::codec::EstimatorState;
    use rand_distr::{Distribution, Normal};

    let start = Instant::now();
    let ch = ChannelParams::new(1.0, 1.0, 0.7).unwrap();
    let delta = ch.delta();

    // exact per-success contraction after init
    let mut st = EstimatorState::new(0, 3.0);
    let _ = st.encode(1.0, &ch);
    st.decode_update(0.4, true, &ch);
    let base = st.error_var();
    for k in 1..=60i32 {
        st.decode_update(0.05, true, &ch);
        let expected = base * delta.powi(k);
        assert!(
            (st.error_var() - expected).abs() <= 1e-12 * expected,
            "variance after {k} successes"
        );
    }

    // unbiasedness and variance law over 1e5 replays of one erasure record
    let record = [true, false, false, true, true, false, true];
    let replays = 100_000usize;
    let prior = 2.0f64;
    let mut rng = ChaCha12Rng::seed_from_u64(90_009);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let x0_dist = Normal::new(0.0, prior.sqrt()).unwrap();
    let mut errors = Vec::with_capacity(replays);
    let mut predicted = 0.0;
    for _ in 0..replays {
        let x0 = x0_dist.sample(&mut rng);
        let mut st = EstimatorState::new(0, prior);
        for &delivered in &record {
            let s = st.encode(x0, &ch);
            let r = if delivered { s } else { 0.0 } + noise.sample(&mut rng);
            st.decode_update(r, delivered, &ch);
        }
        predicted = st.error_var();
        errors.push(st.estimate() - x0);
    }
    let n = replays as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    let se_mean = (var / n).sqrt();
    assert!(mean.abs() < 3.0 * se_mean, "bias {mean} vs 3se {se_mean}");
    let se_var = predicted * (2.0 / (n - 1.0)).sqrt();
    assert!(
        (var - predicted).abs() < 3.0 * se_var,
        "sample variance {var} vs predicted {predicted} (se {se_var})"
    );

    // encoder-driven channel power over 1e5 slots within 5% of P
    let ch_power = ChannelParams::new(2.0, 1.0, 0.5).unwrap();
    let mut inst = ChannelInstance::new(ch_power, 90_010);
    let mut rng = ChaCha12Rng::seed_from_u64(90_011);
    let x0_dist = Normal::new(0.0, 1.3f64.sqrt()).unwrap();
    for _ in 0..2000 {
        let x0 = x0_dist.sample(&mut rng);
        let mut st = EstimatorState::new(0, 1.3);
        for _ in 0..50 {
            let s = st.encode(x0, &ch_power);
            let tx = inst.transmit(s);
            st.decode_update(tx.received, tx.delivered, &ch_power);
        }
    }
    let audit = inst.power_audit().unwrap();
    assert_eq!(audit.slots, 100_000);
    assert!(
        (audit.mean_power - 2.0).abs() < 0.05 * 2.0,
        "mean power {} vs budget 2.0",
        audit.mean_power
    );

    let elapsed = start.elapsed();
    println!(
        "criterion 9 (codec contraction/unbiasedness/power {:.4}): PASS in {elapsed:?}",
        audit.mean_power
    );
}

#[test]
fn criterion_10_deadbeat_gain() {
    let start = Instant::now();
    let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 3.0]));
    let b = DVector::from_row_slice(&[1.0, 1.0]);
    let k = deadbeat_gain_for(&a, &b).unwrap();
    assert!((k[0] - 4.0).abs() < 1e-9, "K_1 = {}", k[0]);
    assert!((k[1] + 9.0).abs() < 1e-9, "K_2 = {}", k[1]);

    // spectral radius through the squared closed loop: the matrix is
    // nilpotent, and eig((A+BK)^2)^(1/2) avoids the defective-eigenvalue
    // noise floor of a direct solve
    let closed = &a + &b * &k;
    let squared = &closed * &closed;
    let radius = squared
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm().sqrt())
        .fold(0.0, f64::max);
    assert!(radius < 1e-8, "max |eig(A+BK)| = {radius}");

    let b_bad = DVector::from_row_slice(&[1.0, 0.0]);
    assert!(matches!(
        deadbeat_gain_for(&a, &b_bad),
        Err(ControlError::NotControllable { .. })
    ));

    let elapsed = start.elapsed();
    println!("criterion 10 (deadbeat K = (4, -9), radius {radius:.2e}): PASS in {elapsed:?}");
}

/// Not a numbered criterion, but the quoted region cells double as an
/// end-to-end sanity check of the per-criterion classifications.
#[test]
fn quoted_cells_classify_as_reported() {
    let ch = ch07();
    let cases = [
        // (l1, l2, necessary, tdma, adaptive, optimal)
        (0.075, 0.012, true, false, false, true),
        (0.03, 0.02, true, true, true, true),
        (0.046, 0.046, false, false, false, false),
    ];
    for (l1, l2, nec, td, ad, opt) in cases {
        let spec = SystemSpec::magnitude_pair(l1, l2).unwrap();
        assert_eq!(necessity_holds(&spec, &ch).holds, nec, "necessary at ({l1},{l2})");
        assert_eq!(tdma_sufficient(&spec, &ch), td, "tdma at ({l1},{l2})");
        assert_eq!(adaptive_feasible(&spec, &ch).feasible, ad, "adaptive at ({l1},{l2})");
        assert_eq!(
            optimal2d_condition(l1, l2, &ch).unwrap(),
            opt,
            "optimal at ({l1},{l2})"
        );
    }
}
