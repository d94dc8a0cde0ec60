//! Stochastic simulation of the power-constrained lossy channel.
//!
//! Each instance owns two decorrelated substreams derived from one master
//! seed — one for erasures, one for noise — so the erasure pattern of a
//! run never depends on how many noise samples were drawn. The feedback
//! link is ideal: the realized `(r, γ)` of a slot is returned to the
//! caller, who may hand it to transmitter-side logic.

use crate::model::ChannelParams;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

const ERASURE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
/// Stream id left free for callers that need one more draw source
/// (e.g. initial-state sampling) tied to the same master seed.
pub const AUX_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("no transmissions recorded; nothing to audit")]
    EmptyAudit,
}

/// Outcome of one slot: the channel output `r = γ·s + n` and the erasure
/// flag `γ` (receiver-side channel state, relayed over the feedback link).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub received: f64,
    pub delivered: bool,
}

/// Running average-power account.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerAudit {
    pub mean_power: f64,
    pub slots: u64,
}

/// One channel trajectory with seeded randomness and power accounting.
/// Not shared across trajectories; spawn one instance per trial with a
/// per-trial seed.
#[derive(Debug, Clone)]
pub struct ChannelInstance {
    params: ChannelParams,
    erasure_rng: ChaCha12Rng,
    noise_rng: ChaCha12Rng,
    noise: Normal<f64>,
    power_sum: f64,
    slots: u64,
}

impl ChannelInstance {
    pub fn new(params: ChannelParams, seed: u64) -> Self {
        let mut erasure_rng = ChaCha12Rng::seed_from_u64(seed);
        erasure_rng.set_stream(ERASURE_STREAM);
        let mut noise_rng = ChaCha12Rng::seed_from_u64(seed);
        noise_rng.set_stream(NOISE_STREAM);
        let noise = Normal::new(0.0, params.noise_var().sqrt())
            .expect("noise variance validated by ChannelParams");
        Self {
            params,
            erasure_rng,
            noise_rng,
            noise,
            power_sum: 0.0,
            slots: 0,
        }
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// Sends one symbol: draws `γ ~ Bernoulli(1−ε)` and
    /// `n ~ N(0, σ_n²)`, charges `s²` to the power account, and returns
    /// `r = γ·s + n` with the realized erasure flag.
    pub fn transmit(&mut self, s: f64) -> Transmission {
        let delivered = self
            .erasure_rng
            .random_bool(1.0 - self.params.drop_prob());
        let noise = self.noise.sample(&mut self.noise_rng);
        self.power_sum += s * s;
        self.slots += 1;
        Transmission {
            received: if delivered { s + noise } else { noise },
            delivered,
        }
    }

    /// Mean of `s²` over every slot transmitted so far.
    pub fn power_audit(&self) -> Result<PowerAudit, ChannelError> {
        if self.slots == 0 {
            return Err(ChannelError::EmptyAudit);
        }
        Ok(PowerAudit {
            mean_power: self.power_sum / self.slots as f64,
            slots: self.slots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelParams;

    #[test]
    fn erasure_free_channel_always_delivers() {
        let ch = ChannelParams::new(1.0, 1.0, 0.0).unwrap();
        let mut inst = ChannelInstance::new(ch, 7);
        for _ in 0..200 {
            let tx = inst.transmit(1.25);
            assert!(tx.delivered);
        }
    }

    #[test]
    fn near_certain_erasure_drops_first_slot() {
        let ch = ChannelParams::new(1.0, 1.0, 1.0 - 1e-12).unwrap();
        let mut inst = ChannelInstance::new(ch, 1234);
        let tx = inst.transmit(3.0);
        assert!(!tx.delivered);
    }

    #[test]
    fn noiseless_limit_returns_input_exactly() {
        // sigma_n^2 = 1e-300 is below f64 resolution relative to s ~ 1
        let ch = ChannelParams::new(1.0, 1e-300, 0.0).unwrap();
        let mut inst = ChannelInstance::new(ch, 5);
        for k in 0..50 {
            let s = 0.5 + k as f64;
            assert_eq!(inst.transmit(s).received, s);
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_sequences() {
        let ch = ChannelParams::new(2.0, 0.5, 0.4).unwrap();
        let mut a = ChannelInstance::new(ch, 99);
        let mut b = ChannelInstance::new(ch, 99);
        for k in 0..500 {
            let ta = a.transmit(k as f64 * 0.1);
            let tb = b.transmit(k as f64 * 0.1);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn erasure_stream_independent_of_noise_usage() {
        // identical seeds, different symbols: the erasure pattern must match
        let ch = ChannelParams::new(1.0, 1.0, 0.3).unwrap();
        let mut a = ChannelInstance::new(ch, 42);
        let mut b = ChannelInstance::new(ch, 42);
        let pattern_a: Vec<bool> = (0..300).map(|_| a.transmit(1.0).delivered).collect();
        let pattern_b: Vec<bool> = (0..300).map(|k| b.transmit(k as f64).delivered).collect();
        assert_eq!(pattern_a, pattern_b);
    }

    #[test]
    fn empirical_rates_match_parameters() {
        let eps = 0.7;
        let ch = ChannelParams::new(1.0, 2.0, eps).unwrap();
        let mut inst = ChannelInstance::new(ch, 2024);
        let n = 100_000usize;
        let mut dropped = 0u64;
        let mut noise_sq = 0.0;
        for _ in 0..n {
            // s = 0 makes the output pure noise
            let tx = inst.transmit(0.0);
            if !tx.delivered {
                dropped += 1;
            }
            noise_sq += tx.received * tx.received;
        }
        let drop_rate = dropped as f64 / n as f64;
        let se_drop = (eps * (1.0 - eps) / n as f64).sqrt();
        assert!((drop_rate - eps).abs() < 3.0 * se_drop);
        // sample variance of N(0, 2): se of the mean of squares is
        // sqrt(2 sigma^4 / n)
        let var_hat = noise_sq / n as f64;
        let se_var = (2.0 * 4.0 / n as f64).sqrt();
        assert!((var_hat - 2.0).abs() < 3.0 * se_var);
    }

    #[test]
    fn power_audit_counts_and_errors() {
        let ch = ChannelParams::new(4.0, 1.0, 0.2).unwrap();
        let mut inst = ChannelInstance::new(ch, 8);
        assert_eq!(inst.power_audit(), Err(ChannelError::EmptyAudit));
        for _ in 0..100 {
            inst.transmit(2.0); // s^2 = 4 = P
        }
        let audit = inst.power_audit().unwrap();
        assert_eq!(audit.slots, 100);
        assert!((audit.mean_power - 4.0).abs() < 1e-12);
    }
}
