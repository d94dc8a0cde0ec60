//! Plant and channel domain types: eigenvalue structure, validation, and
//! the derived contraction factor δ.
//!
//! Eigenvalues are carried as natural-log magnitudes because every
//! stabilizability condition is a statement about `ln|λ_i|`; raw matrix
//! entries are only needed by the simulator. All types are immutable after
//! validation and safe to share across threads.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

/// Singular values below this are treated as zero in rank tests.
const RANK_TOL: f64 = 1e-9;

/// Tolerance when matching a supplied `A` against the declared blocks.
const EIG_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("blocks must be ordered by nonincreasing log-magnitude (violated at block {0})")]
    NotSorted(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("(A, B) is not stabilizable: mode with |lambda| = {magnitude} fails the rank test")]
    NotStabilizable { magnitude: f64 },
    #[error("block {index} has log-magnitude {log_magnitude}; strictly stable modes are out of scope")]
    StableEigenvalue { index: usize, log_magnitude: f64 },
    #[error("invalid channel parameter: {0}")]
    InvalidChannel(String),
}

/// One distinct unstable eigenvalue of the plant: its log-magnitude
/// `ln|λ_i|`, whether it is a complex-conjugate pair, and its algebraic
/// multiplicity `m_i`. The real block size is `μ_i = m_i` for real
/// eigenvalues and `2·m_i` for complex pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBlock {
    log_magnitude: f64,
    is_complex: bool,
    algebraic_multiplicity: usize,
}

impl EigenBlock {
    pub fn new(log_magnitude: f64, is_complex: bool, algebraic_multiplicity: usize) -> Self {
        Self {
            log_magnitude,
            is_complex,
            algebraic_multiplicity,
        }
    }

    /// A real eigenvalue of multiplicity one.
    pub fn real(log_magnitude: f64) -> Self {
        Self::new(log_magnitude, false, 1)
    }

    pub fn log_magnitude(&self) -> f64 {
        self.log_magnitude
    }

    pub fn is_complex(&self) -> bool {
        self.is_complex
    }

    pub fn algebraic_multiplicity(&self) -> usize {
        self.algebraic_multiplicity
    }

    /// `a_i`: 1 for a real eigenvalue, 2 for a complex-conjugate pair.
    pub fn arity(&self) -> usize {
        if self.is_complex {
            2
        } else {
            1
        }
    }

    /// Real Jordan block size `μ_i = a_i · m_i`.
    pub fn block_size(&self) -> usize {
        self.arity() * self.algebraic_multiplicity
    }
}

/// The plant: ordered eigenvalue blocks, input vector `B`, initial-state
/// covariance `Σ_{x0}`, and the state matrix `A` (assembled block-diagonal
/// from the blocks when not supplied).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    blocks: Vec<EigenBlock>,
    state_dim: usize,
    input_vector: DVector<f64>,
    initial_covariance: DMatrix<f64>,
    a_matrix: DMatrix<f64>,
}

impl SystemSpec {
    /// Builds and validates a spec. `initial_covariance` defaults to the
    /// identity; `a_matrix` defaults to the canonical block-diagonal
    /// realization of the blocks (real blocks use `λ = exp(ln|λ|)`,
    /// complex pairs a quarter-turn rotation scaled by the magnitude).
    pub fn new(
        blocks: Vec<EigenBlock>,
        input_vector: &[f64],
        initial_covariance: Option<DMatrix<f64>>,
        a_matrix: Option<DMatrix<f64>>,
    ) -> Result<Self, ModelError> {
        let state_dim: usize = blocks.iter().map(EigenBlock::block_size).sum();
        let a = match a_matrix {
            Some(a) => a,
            None => assemble_block_diagonal(&blocks),
        };
        let sigma = initial_covariance.unwrap_or_else(|| DMatrix::identity(state_dim, state_dim));
        let spec = SystemSpec {
            blocks,
            state_dim,
            input_vector: DVector::from_row_slice(input_vector),
            initial_covariance: sigma,
            a_matrix: a,
        };
        validate_system(spec)
    }

    /// A two-coordinate real spec standing for any realization with
    /// magnitudes `(e^{ln_l1}, e^{ln_l2})`, used when classifying points of
    /// the stabilizability region. Equal log-magnitudes denote *distinct*
    /// eigenvalues of equal magnitude, so the single-input rank test is
    /// skipped here; such specs are for condition evaluation, and gain
    /// synthesis still rejects genuinely uncontrollable realizations.
    pub fn magnitude_pair(ln_l1: f64, ln_l2: f64) -> Result<Self, ModelError> {
        if ln_l2 < 0.0 {
            return Err(ModelError::StableEigenvalue {
                index: 1,
                log_magnitude: ln_l2,
            });
        }
        if ln_l1 < ln_l2 {
            return Err(ModelError::NotSorted(1));
        }
        let blocks = vec![EigenBlock::real(ln_l1), EigenBlock::real(ln_l2)];
        let a = assemble_block_diagonal(&blocks);
        Ok(SystemSpec {
            blocks,
            state_dim: 2,
            input_vector: DVector::from_row_slice(&[1.0, 1.0]),
            initial_covariance: DMatrix::identity(2, 2),
            a_matrix: a,
        })
    }

    pub fn blocks(&self) -> &[EigenBlock] {
        &self.blocks
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_vector(&self) -> &DVector<f64> {
        &self.input_vector
    }

    pub fn initial_covariance(&self) -> &DMatrix<f64> {
        &self.initial_covariance
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    /// Per-coordinate log-magnitudes: each block contributes `μ_i` copies.
    pub fn coordinate_log_magnitudes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state_dim);
        for b in &self.blocks {
            out.extend(std::iter::repeat_n(b.log_magnitude(), b.block_size()));
        }
        out
    }

    /// True when `A` is real diagonal with simple eigenvalues, the only
    /// shape the closed-loop simulator supports.
    pub fn is_real_diagonal(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| !b.is_complex() && b.algebraic_multiplicity() == 1)
    }
}

/// Canonical block-diagonal realization of the declared blocks. Real
/// eigenvalues are taken positive (`λ = e^{ln|λ|}`) in a Jordan chain;
/// complex pairs use the scaled quarter-turn rotation, whose angle never
/// enters any magnitude-based condition.
fn assemble_block_diagonal(blocks: &[EigenBlock]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(EigenBlock::block_size).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let lam = b.log_magnitude().exp();
        if !b.is_complex() {
            let m = b.algebraic_multiplicity();
            for j in 0..m {
                a[(at + j, at + j)] = lam;
                if j + 1 < m {
                    a[(at + j, at + j + 1)] = 1.0;
                }
            }
            at += m;
        } else {
            let m = b.algebraic_multiplicity();
            for j in 0..m {
                let r = at + 2 * j;
                a[(r, r + 1)] = -lam;
                a[(r + 1, r)] = lam;
                if j + 1 < m {
                    a[(r, r + 2)] = 1.0;
                    a[(r + 1, r + 3)] = 1.0;
                }
            }
            at += 2 * m;
        }
    }
    a
}

/// Checks every structural invariant of a [`SystemSpec`] and returns the
/// spec unchanged on success. Validation is idempotent.
pub fn validate_system(spec: SystemSpec) -> Result<SystemSpec, ModelError> {
    for (i, b) in spec.blocks.iter().enumerate() {
        if b.log_magnitude() < 0.0 {
            return Err(ModelError::StableEigenvalue {
                index: i,
                log_magnitude: b.log_magnitude(),
            });
        }
        if b.algebraic_multiplicity() == 0 {
            return Err(ModelError::DimensionMismatch(format!(
                "block {i} has zero multiplicity"
            )));
        }
        if i > 0 && spec.blocks[i - 1].log_magnitude() < b.log_magnitude() {
            return Err(ModelError::NotSorted(i));
        }
    }
    let total: usize = spec.blocks.iter().map(EigenBlock::block_size).sum();
    if total != spec.state_dim || spec.state_dim == 0 {
        return Err(ModelError::DimensionMismatch(format!(
            "state_dim {} does not equal the total block size {}",
            spec.state_dim, total
        )));
    }
    if spec.input_vector.len() != spec.state_dim {
        return Err(ModelError::DimensionMismatch(format!(
            "input vector has length {}, expected {}",
            spec.input_vector.len(),
            spec.state_dim
        )));
    }
    if spec.a_matrix.nrows() != spec.state_dim || spec.a_matrix.ncols() != spec.state_dim {
        return Err(ModelError::DimensionMismatch(format!(
            "A is {}x{}, expected {}x{}",
            spec.a_matrix.nrows(),
            spec.a_matrix.ncols(),
            spec.state_dim,
            spec.state_dim
        )));
    }
    if spec.initial_covariance.nrows() != spec.state_dim
        || spec.initial_covariance.ncols() != spec.state_dim
    {
        return Err(ModelError::DimensionMismatch(format!(
            "initial covariance is {}x{}, expected {}x{}",
            spec.initial_covariance.nrows(),
            spec.initial_covariance.ncols(),
            spec.state_dim,
            spec.state_dim
        )));
    }
    if spec.initial_covariance.clone().cholesky().is_none() {
        return Err(ModelError::DimensionMismatch(
            "initial covariance is not positive definite".into(),
        ));
    }

    let eigs = spec.a_matrix.complex_eigenvalues();

    // Declared magnitudes and the realized spectrum must agree.
    let mut declared: Vec<f64> = spec
        .blocks
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.log_magnitude().exp(), b.block_size()))
        .collect();
    let mut realized: Vec<f64> = eigs.iter().map(|e| e.norm()).collect();
    declared.sort_by(|a, b| b.partial_cmp(a).unwrap());
    realized.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (d, r) in declared.iter().zip(realized.iter()) {
        if (d - r).abs() > EIG_MATCH_TOL * d.max(1.0) {
            return Err(ModelError::DimensionMismatch(format!(
                "A has an eigenvalue of magnitude {r} where the blocks declare {d}"
            )));
        }
    }

    // PBH rank test at every modeled (unstable) eigenvalue.
    let n = spec.state_dim;
    let mut tested: Vec<Complex<f64>> = Vec::new();
    for lam in eigs.iter() {
        if tested.iter().any(|t| (t - lam).norm() < 1e-8) {
            continue;
        }
        tested.push(*lam);
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n + 1);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = Complex::new(-spec.a_matrix[(r, c)], 0.0);
            }
            m[(r, r)] += lam;
            m[(r, n)] = Complex::new(spec.input_vector[r], 0.0);
        }
        let sv = m.singular_values();
        if sv[sv.len() - 1] < RANK_TOL {
            return Err(ModelError::NotStabilizable {
                magnitude: lam.norm(),
            });
        }
    }

    Ok(spec)
}

/// The lossy channel: average power budget `P`, noise variance σ_n², and
/// packet drop probability ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    power: f64,
    noise_var: f64,
    drop_prob: f64,
}

impl ChannelParams {
    pub fn new(power: f64, noise_var: f64, drop_prob: f64) -> Result<Self, ModelError> {
        if !power.is_finite() || power <= 0.0 {
            return Err(ModelError::InvalidChannel(format!(
                "power must be positive and finite, got {power}"
            )));
        }
        if !noise_var.is_finite() || noise_var <= 0.0 {
            return Err(ModelError::InvalidChannel(format!(
                "noise_var must be positive and finite, got {noise_var}"
            )));
        }
        if !drop_prob.is_finite() || !(0.0..1.0).contains(&drop_prob) {
            return Err(ModelError::InvalidChannel(format!(
                "drop_prob must lie in [0, 1), got {drop_prob}"
            )));
        }
        Ok(Self {
            power,
            noise_var,
            drop_prob,
        })
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn drop_prob(&self) -> f64 {
        self.drop_prob
    }

    /// δ = σ_n² / (σ_n² + P), strictly inside (0, 1).
    pub fn delta(&self) -> f64 {
        self.noise_var / (self.noise_var + self.power)
    }
}
