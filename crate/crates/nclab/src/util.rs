//! Shared helpers: seed derivation, deterministic summation, and the
//! crate-wide thread pool.

use std::sync::OnceLock;

/// Environment variable that caps internal parallelism (worker count).
pub const THREADS_ENV: &str = "NCLAB_THREADS";

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Runs `f` inside the crate's thread pool.
///
/// `NCLAB_THREADS` caps the number of workers; when unset (or unparsable)
/// the rayon global pool is used as-is.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let pool = POOL.get_or_init(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(|n| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("failed to build thread pool")
            })
    });
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

/// Derives an independent per-trial seed from a master seed and a trial
/// index (splitmix64 finalizer over the mixed pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how a parallel caller scheduled their computation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// CSV real format: 17 significant digits, round-trips exactly.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Sample mean and standard error of the mean.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_deterministic_and_spreads() {
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
        assert_ne!(derive_seed(42, 7), derive_seed(42, 8));
        assert_ne!(derive_seed(42, 7), derive_seed(43, 7));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v = [1.5, -2.25, 3.0, 0.125, 7.0];
        assert_eq!(pairwise_sum(&v), 9.375);
    }

    #[test]
    fn mean_and_se_basics() {
        let (m, se) = mean_and_std_error(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(m, 1.0);
        assert_eq!(se, 0.0);
        let (m, se) = mean_and_std_error(&[0.0, 2.0]);
        assert_eq!(m, 1.0);
        assert!((se - (2.0f64 / 2.0).sqrt()).abs() < 1e-15);
    }
}
