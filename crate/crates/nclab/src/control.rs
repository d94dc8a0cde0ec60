//! Certainty-equivalent control from the running initial-state estimate.
//!
//! The control law is `u_t = K·z_t` with
//! `z_t = A^t·x̂_t + Σ_{i=1}^t A^{t−i}B·u_{i−1}`, maintained by the
//! recursion `z_{t+1} = A·z_t + B·u_t + A^{t+1}(x̂_{t+1} − x̂_t)`. Any `K`
//! rendering `A + BK` Schur-stable works; [`deadbeat_gain`] places all
//! closed-loop poles at the origin, which makes `A + BK` nilpotent and
//! gives the fastest moment decay at this problem size.

use crate::model::SystemSpec;
use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

/// Reciprocal-condition threshold below which the controllability matrix
/// counts as singular.
const CTRB_RCOND_TOL: f64 = 1e-9;

/// Guard on the reconstructed state; beyond this the run is declared
/// diverged.
pub const STATE_GUARD: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("controllability matrix is numerically singular (reciprocal condition {rcond:.3e})")]
    NotControllable { rcond: f64 },
    #[error("reconstructed state exceeded {0:e}; run diverged")]
    Overflow(f64),
    #[error("supplied gain leaves spectral radius {0} >= 1")]
    UnstableGain(f64),
}

/// Single-input deadbeat gain via Ackermann's formula with all poles at
/// the origin: `K = −e_Nᵀ C⁻¹ Aᴺ` where `C = [B, AB, …, A^{N−1}B]`.
pub fn deadbeat_gain(spec: &SystemSpec) -> Result<RowDVector<f64>, ControlError> {
    deadbeat_gain_for(spec.a_matrix(), spec.input_vector())
}

/// [`deadbeat_gain`] on raw `(A, B)` matrices.
pub fn deadbeat_gain_for(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<RowDVector<f64>, ControlError> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "A must be square");
    assert_eq!(b.len(), n, "B must match A");

    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * col;
    }

    let sv = ctrb.clone().singular_values();
    let rcond = sv[sv.len() - 1] / sv[0];
    if !rcond.is_finite() || rcond < CTRB_RCOND_TOL {
        return Err(ControlError::NotControllable { rcond });
    }

    // row = e_N^T C^{-1}, i.e. C^T row^T = e_N
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let ct = ctrb.transpose();
    let lu = ct.clone().lu();
    let mut row = lu
        .solve(&e_n)
        .ok_or(ControlError::NotControllable { rcond })?;
    // one iterative-refinement pass; integral systems then solve exactly,
    // which keeps A + BK exactly nilpotent where it can be
    let residual = &e_n - &ct * &row;
    if let Some(correction) = lu.solve(&residual) {
        row += correction;
    }

    let mut a_pow = DMatrix::identity(n, n);
    for _ in 0..n {
        a_pow = a * a_pow;
    }
    Ok(-(RowDVector::from_iterator(n, row.iter().copied()) * a_pow))
}

/// Checks a user-supplied gain: `A + BK` must have spectral radius
/// strictly below one.
pub fn validate_gain(spec: &SystemSpec, gain: &RowDVector<f64>) -> Result<(), ControlError> {
    let closed = spec.a_matrix() + spec.input_vector() * gain;
    let radius = closed
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max);
    if radius < 1.0 {
        Ok(())
    } else {
        Err(ControlError::UnstableGain(radius))
    }
}

/// Controller state: the gain, the reconstructed state `z_t`, the running
/// power `A^t`, and the previous estimate/input feeding the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    gain: RowDVector<f64>,
    z: DVector<f64>,
    a_power: DMatrix<f64>,
    last_estimate: DVector<f64>,
    last_input: f64,
    steps: u64,
}

impl ControllerState {
    pub fn new(gain: RowDVector<f64>, state_dim: usize) -> Self {
        assert_eq!(gain.len(), state_dim, "gain length must match state dim");
        Self {
            gain,
            z: DVector::zeros(state_dim),
            a_power: DMatrix::identity(state_dim, state_dim),
            last_estimate: DVector::zeros(state_dim),
            last_input: 0.0,
            steps: 0,
        }
    }

    pub fn gain(&self) -> &RowDVector<f64> {
        &self.gain
    }

    /// The reconstructed state `z_t` after the latest step.
    pub fn reconstructed_state(&self) -> &DVector<f64> {
        &self.z
    }

    /// Advances one slot with the decoder's current estimate of `x_0` and
    /// returns the input `u_t = K·z_t`. Fails once any component of `z`
    /// passes the divergence guard.
    pub fn step(
        &mut self,
        estimate: &DVector<f64>,
        spec: &SystemSpec,
    ) -> Result<f64, ControlError> {
        if self.steps == 0 {
            self.z = estimate.clone();
        } else {
            self.a_power = spec.a_matrix() * &self.a_power;
            self.z = spec.a_matrix() * &self.z
                + spec.input_vector() * self.last_input
                + &self.a_power * (estimate - &self.last_estimate);
        }
        let u = (&self.gain * &self.z)[0];
        self.last_estimate.copy_from(estimate);
        self.last_input = u;
        self.steps += 1;
        let peak = self.z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !peak.is_finite() || peak > STATE_GUARD {
            return Err(ControlError::Overflow(STATE_GUARD));
        }
        Ok(u)
    }
}
