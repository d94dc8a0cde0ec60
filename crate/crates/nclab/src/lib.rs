//! Schedulers, coding, and stabilizability analysis for single-input LTI
//! systems controlled over a power-constrained lossy channel.
//!
//! The channel model is `r = γ·s + n`: an i.i.d. Bernoulli erasure `γ`
//! (drop probability ε), additive white Gaussian noise `n` of variance
//! σ_n², and an average input power budget `E[s²] ≤ P`. The quantity
//! δ = σ_n²/(σ_n² + P) is the error-variance contraction factor earned
//! per successful reception; every analytic condition in this crate is a
//! statement about how fast the plant's unstable log-magnitudes outrun δ.
//!
//! Three transmission schedulers share the channel among per-coordinate
//! encoder/decoder pairs:
//!
//! - fixed TDMA: each pair owns a fixed number of slots per round,
//! - adaptive TDMA: each pair keeps the channel until a quota of
//!   *successful* receptions is met,
//! - an optimal two-phase scheduler for two-dimensional systems whose
//!   stopping rule rebalances success counts between the coordinates.
//!
//! Modules:
//! - [`model`]: plant/channel domain types and validation
//! - [`conditions`]: analytic stabilizability tests, the exponential-tilt
//!   equation solver, quota selection, and region sweeps
//! - [`channel`]: seeded stochastic channel simulation with power audit
//! - [`codec`]: per-coordinate initial-state encoder/decoder pairs
//! - [`sched`]: the three scheduler state machines
//! - [`control`]: certainty-equivalent controller and deadbeat gain synthesis
//! - [`sim`]: Monte Carlo harnesses (closed loop, round moments, martingale
//!   probes)
//! - [`cli`]: JSON config parsing and the command-line front end

pub mod channel;
pub mod cli;
pub mod codec;
pub mod conditions;
pub mod control;
pub mod model;
pub mod sched;
pub mod sim;
pub mod util;
