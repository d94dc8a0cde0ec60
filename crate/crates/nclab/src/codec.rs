//! Per-coordinate encoder/decoder pairs transmitting the initial state.
//!
//! Pair `i` carries `x_{i,0}`. Until the first successful reception the
//! encoder sends the prior-scaled initial value `s = √(P/σ²_{x0})·x_{i,0}`;
//! afterwards it sends the current estimation error scaled to full power,
//! `s = √(P/σ²_e)·(x̂ − x_{i,0})`. The decoder combines each delivered
//! output with the linear minimum-mean-square coefficient, which contracts
//! the error variance by exactly δ per success. On an erased slot the
//! combining coefficient is zero, so the state is unchanged and the
//! initial-form symbol is simply retransmitted until the first success.
//!
//! Both sides observe the erasure feedback, so one state machine serves
//! the pair. Besides the decoder estimate, the state carries the error
//! `x̂ − x_{i,0}` itself: updating the error directly (the same linear
//! update the estimate receives) keeps it accurate long after the
//! difference of two finite-precision numbers would have degenerated into
//! rounding noise.

use crate::model::ChannelParams;

/// Consensus state of one encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    coordinate_index: usize,
    estimate: f64,
    error: f64,
    error_var: f64,
    success_count: u64,
    initialized: bool,
    prior_var: f64,
    pending_initial: f64,
}

impl EstimatorState {
    /// New pair for coordinate `coordinate_index` whose payload has prior
    /// variance `prior_var`. The decoder estimate starts at zero, so the
    /// pre-init error variance equals the prior variance.
    pub fn new(coordinate_index: usize, prior_var: f64) -> Self {
        assert!(
            prior_var.is_finite() && prior_var > 0.0,
            "prior variance must be positive"
        );
        Self {
            coordinate_index,
            estimate: 0.0,
            error: 0.0,
            error_var: prior_var,
            success_count: 0,
            initialized: false,
            prior_var,
            pending_initial: 0.0,
        }
    }

    pub fn coordinate_index(&self) -> usize {
        self.coordinate_index
    }

    /// Current decoder estimate of `x_{i,0}`.
    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// Current estimation error `x̂ − x_{i,0}`.
    pub fn error(&self) -> f64 {
        self.error
    }

    /// Error variance conditioned on the realized erasure record. After
    /// the first success this equals `(σ²_{x0}·σ_n²/P)·δ^{count−1}`.
    pub fn error_var(&self) -> f64 {
        self.error_var
    }

    /// Total successful receptions, the first one included.
    pub fn success_count(&self) -> u64 {
        self.success_count
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    /// Produces the channel symbol for this slot. `E[s²] = P` by
    /// construction in both regimes. Once the tracked error has contracted
    /// to an exact zero (or its variance has left the representable
    /// range) the pair transmits zero.
    pub fn encode(&mut self, initial_value: f64, ch: &ChannelParams) -> f64 {
        if !self.initialized {
            self.pending_initial = initial_value;
            self.error = -initial_value; // estimate is still zero
            (ch.power() / self.prior_var).sqrt() * initial_value
        } else if self.error == 0.0 || self.error_var < f64::MIN_POSITIVE {
            0.0
        } else {
            (ch.power() / self.error_var).sqrt() * self.error
        }
    }

    /// Folds one channel output into the estimate. Erased slots leave the
    /// state untouched. The first success initializes the estimate by pure
    /// rescaling; later successes apply the combining coefficient
    /// `κ = √(P·σ²_e)/(P + σ_n²)` and contract the variance by δ.
    pub fn decode_update(&mut self, received: f64, delivered: bool, ch: &ChannelParams) {
        if !delivered {
            return;
        }
        if !self.initialized {
            self.estimate = (self.prior_var / ch.power()).sqrt() * received;
            self.error = self.estimate - self.pending_initial;
            self.error_var = self.prior_var * ch.noise_var() / ch.power();
            self.success_count = 1;
            self.initialized = true;
        } else {
            let kappa = (ch.power() * self.error_var).sqrt() / (ch.power() + ch.noise_var());
            self.estimate -= kappa * received;
            self.error -= kappa * received;
            self.error_var *= ch.delta();
            self.success_count += 1;
        }
    }
}
