//! Dense complex linear algebra over small composite Hilbert spaces.
//!
//! Composite spaces are tensor products of a handful of factors (spin-1
//! triplets, region qubits, periodic position grids). Basis indices follow a
//! single row-major convention: the first factor varies slowest, so the
//! amplitude of `|i_0⟩⊗|i_1⟩⊗…` lives at `((i_0·d_1 + i_1)·d_2 + …)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Tolerance for exact algebraic identities (norms, commutators).
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Tolerance for spectral properties (Hermiticity, orthonormality).
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Tolerance for eigen-reconstruction `V Λ V†`.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;
/// Largest total dimension accepted anywhere in the crate.
pub const MAX_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HilbertError {
    #[error("subsystem shape must have at least one factor")]
    EmptyShape,
    #[error("subsystem {index} has dimension {dim}; every factor needs at least 2")]
    FactorTooSmall { index: usize, dim: usize },
    #[error("total dimension {0} exceeds the dense limit of {MAX_DIM}")]
    TooLarge(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("subsystem index {index} out of range for {count} factors")]
    InvalidSubsystem { index: usize, count: usize },
    #[error("subsystem {0} listed twice")]
    DuplicateSubsystem(usize),
    #[error("at least one subsystem must be kept")]
    EmptyKeep,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),
}

pub type Result<T> = std::result::Result<T, HilbertError>;

/// Factor dimensions of a composite space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsystemShape {
    dims: Vec<usize>,
}

impl SubsystemShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(HilbertError::EmptyShape);
        }
        if let Some((index, &dim)) = dims.iter().enumerate().find(|(_, &d)| d < 2) {
            return Err(HilbertError::FactorTooSmall { index, dim });
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if total > MAX_DIM {
            return Err(HilbertError::TooLarge(total));
        }
        Ok(Self { dims })
    }

    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn factors(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    /// Distance in the flat index between neighbouring values of factor `k`.
    pub fn stride(&self, k: usize) -> usize {
        self.dims[k + 1..].iter().product()
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self::new(dims)
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k < self.dims.len() {
            Ok(())
        } else {
            Err(HilbertError::InvalidSubsystem {
                index: k,
                count: self.dims.len(),
            })
        }
    }

    /// Coordinate of factor `k` in flat basis index `i`.
    pub fn digit(&self, i: usize, k: usize) -> usize {
        (i / self.stride(k)) % self.dims[k]
    }
}

/// A vector of complex amplitudes on a composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    shape: SubsystemShape,
    amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn new(shape: SubsystemShape, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != shape.total() {
            return Err(HilbertError::DimensionMismatch {
                expected: shape.total(),
                found: amplitudes.len(),
            });
        }
        Ok(Self { shape, amplitudes })
    }

    pub fn from_vec(shape: SubsystemShape, amplitudes: Vec<C64>) -> Result<Self> {
        Self::new(shape, DVector::from_vec(amplitudes))
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(shape: SubsystemShape, index: usize) -> Result<Self> {
        let n = shape.total();
        if index >= n {
            return Err(HilbertError::DimensionMismatch {
                expected: n,
                found: index,
            });
        }
        let mut amplitudes = DVector::zeros(n);
        amplitudes[index] = C64::new(1.0, 0.0);
        Ok(Self { shape, amplitudes })
    }

    pub fn shape(&self) -> &SubsystemShape {
        &self.shape
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalize(&self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(HilbertError::ZeroNorm);
        }
        Ok(Self {
            shape: self.shape.clone(),
            amplitudes: self.amplitudes.unscale(norm),
        })
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.shape != other.shape {
            return Err(HilbertError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Outer product `|ψ⟩⟨ψ|`.
    pub fn projector(&self) -> DMatrix<C64> {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    /// Born distribution of factor `k` alone.
    pub fn marginal(&self, k: usize) -> Result<Vec<f64>> {
        self.shape.check_index(k)?;
        let dk = self.shape.dims[k];
        let stride = self.shape.stride(k);
        let mut out = vec![0.0; dk];
        for (i, a) in self.amplitudes.iter().enumerate() {
            out[(i / stride) % dk] += a.norm_sqr();
        }
        Ok(out)
    }

    pub(crate) fn into_parts(self) -> (SubsystemShape, DVector<C64>) {
        (self.shape, self.amplitudes)
    }
}

/// A square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(HilbertError::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if matrix.nrows() > MAX_DIM {
            return Err(HilbertError::TooLarge(matrix.nrows()));
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(diagonal: &[C64]) -> Self {
        Self {
            matrix: DMatrix::from_diagonal(&DVector::from_column_slice(diagonal)),
        }
    }

    pub fn from_real_diagonal(diagonal: &[f64]) -> Self {
        let d: Vec<C64> = diagonal.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diagonal(&d)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| *z == C64::new(0.0, 0.0))
    }

    /// Largest entrywise deviation from `A = A†`.
    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// Largest entrywise deviation of `U·U†` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let n = self.dim();
        max_abs_diff(&(&self.matrix * self.matrix.adjoint()), &DMatrix::identity(n, n))
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self {
            matrix: self.matrix.kronecker(&other.matrix),
        }
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.dim() != self.dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: self.dim(),
                found: psi.dim(),
            });
        }
        StateVector::new(psi.shape.clone(), &self.matrix * &psi.amplitudes)
    }

    /// Spectral norm; the operator must be Hermitian.
    pub fn spectral_radius(&self) -> Result<f64> {
        let eig = hermitian_eig(self)?;
        Ok(eig
            .values
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs())))
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

/// Hermitian, unit-trace, positive operator on a composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    shape: SubsystemShape,
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-10) and positivity
    /// (smallest eigenvalue ≥ −1e-8).
    pub fn new(shape: SubsystemShape, matrix: DMatrix<C64>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(shape, matrix)?;
        rho.validate(SPECTRAL_TOL, SPECTRAL_TOL, 1e-8)?;
        Ok(rho)
    }

    /// Shape checks only. Used for intermediate integrator states and for
    /// reduced states whose trace is inherited from the parent.
    pub fn from_matrix_unchecked(shape: SubsystemShape, matrix: DMatrix<C64>) -> Result<Self> {
        let n = shape.total();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(HilbertError::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { shape, matrix })
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        Self {
            shape: psi.shape.clone(),
            matrix: psi.projector(),
        }
    }

    pub fn maximally_mixed(shape: SubsystemShape) -> Self {
        let n = shape.total();
        let matrix = DMatrix::identity(n, n).unscale(n as f64);
        Self { shape, matrix }
    }

    pub fn validate(&self, herm_tol: f64, trace_tol: f64, min_eig: f64) -> Result<()> {
        let herm = hermiticity_error(&self.matrix);
        if herm > herm_tol {
            return Err(HilbertError::InvalidDensity(format!(
                "Hermiticity deviation {herm:e}"
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > trace_tol || tr.im.abs() > trace_tol {
            return Err(HilbertError::InvalidDensity(format!("trace {tr}")));
        }
        let smallest = self.min_eigenvalue()?;
        if smallest < -min_eig.abs() {
            return Err(HilbertError::InvalidDensity(format!(
                "smallest eigenvalue {smallest:e}"
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> &SubsystemShape {
        &self.shape
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let eig = hermitian_eig_matrix(&self.matrix, f64::INFINITY)?;
        Ok(eig.values.first().copied().unwrap_or(0.0))
    }

    /// Populations `ρ_ii`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)].re).collect()
    }
}

/// `a ⊗ b` with the first factor slowest.
pub fn tensor_product(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    let shape = a.shape.concat(&b.shape)?;
    let nb = b.dim();
    let mut amps = DVector::zeros(shape.total());
    for (i, x) in a.amplitudes.iter().enumerate() {
        for (j, y) in b.amplitudes.iter().enumerate() {
            amps[i * nb + j] = x * y;
        }
    }
    StateVector::new(shape, amps)
}

/// `(I ⊗ … ⊗ op ⊗ … ⊗ I)ψ` with `op` on factor `k`. Does not normalize.
pub fn apply_on_subsystem(op: &Operator, k: usize, psi: &StateVector) -> Result<StateVector> {
    let shape = &psi.shape;
    shape.check_index(k)?;
    let dk = shape.dims[k];
    if op.dim() != dk {
        return Err(HilbertError::DimensionMismatch {
            expected: dk,
            found: op.dim(),
        });
    }
    let stride = shape.stride(k);
    let block = dk * stride;
    let src = &psi.amplitudes;
    let mut out = DVector::zeros(src.len());
    let m = &op.matrix;
    for outer in (0..src.len()).step_by(block) {
        for inner in 0..stride {
            let base = outer + inner;
            for r in 0..dk {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..dk {
                    acc += m[(r, c)] * src[base + c * stride];
                }
                out[base + r * stride] = acc;
            }
        }
    }
    StateVector::new(shape.clone(), out)
}

/// Embeds `op` acting on factor `k` into the full space.
pub fn embed(op: &Operator, k: usize, shape: &SubsystemShape) -> Result<Operator> {
    shape.check_index(k)?;
    if op.dim() != shape.dims[k] {
        return Err(HilbertError::DimensionMismatch {
            expected: shape.dims[k],
            found: op.dim(),
        });
    }
    let mut full = Operator::identity(1);
    for (j, &d) in shape.dims.iter().enumerate() {
        let factor = if j == k { op.clone() } else { Operator::identity(d) };
        full = full.kron(&factor);
    }
    Ok(full)
}

/// Reduced state on the factors listed in `keep` (in ascending factor order).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let shape = &rho.shape;
    if keep.is_empty() {
        return Err(HilbertError::EmptyKeep);
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    for w in kept.windows(2) {
        if w[0] == w[1] {
            return Err(HilbertError::DuplicateSubsystem(w[0]));
        }
    }
    for &k in &kept {
        shape.check_index(k)?;
    }
    let traced: Vec<usize> = (0..shape.factors()).filter(|k| !kept.contains(k)).collect();
    let kept_shape = SubsystemShape::new(kept.iter().map(|&k| shape.dims[k]).collect())?;
    if traced.is_empty() {
        return DensityMatrix::from_matrix_unchecked(kept_shape, rho.matrix.clone());
    }
    let traced_dims: Vec<usize> = traced.iter().map(|&k| shape.dims[k]).collect();
    let traced_total: usize = traced_dims.iter().product();
    let kept_total = kept_shape.total();

    // Flat offsets of each reduced basis index and each traced index.
    let offsets = |factors: &[usize], dims: &[usize], count: usize| -> Vec<usize> {
        (0..count)
            .map(|mut i| {
                let mut off = 0;
                for (&k, &d) in factors.iter().zip(dims).rev() {
                    off += (i % d) * shape.stride(k);
                    i /= d;
                }
                off
            })
            .collect()
    };
    let kept_off = offsets(&kept, kept_shape.dims(), kept_total);
    let traced_off = offsets(&traced, &traced_dims, traced_total);

    let mut out = DMatrix::zeros(kept_total, kept_total);
    for (r, &ro) in kept_off.iter().enumerate() {
        for (c, &co) in kept_off.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &t in &traced_off {
                acc += rho.matrix[(ro + t, co + t)];
            }
            out[(r, c)] = acc;
        }
    }
    DensityMatrix::from_matrix_unchecked(kept_shape, out)
}

/// Eigen-decomposition of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, i: usize) -> DVector<C64> {
        self.vectors.column(i).into_owned()
    }

    /// `Σ f(λ_i) v_i v_i†`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let s = f(v);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        scaled * self.vectors.adjoint()
    }

    pub fn reconstruct(&self) -> DMatrix<C64> {
        self.map_spectrum(|v| C64::new(v, 0.0))
    }

    /// `exp(−i·A·t)` for the decomposed operator `A`.
    pub fn propagator(&self, t: f64) -> Operator {
        Operator {
            matrix: self.map_spectrum(|v| C64::from_polar(1.0, -v * t)),
        }
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian operator.
pub fn hermitian_eig(op: &Operator) -> Result<HermitianEigen> {
    hermitian_eig_matrix(&op.matrix, SPECTRAL_TOL)
}

pub(crate) fn hermitian_eig_matrix(m: &DMatrix<C64>, herm_tol: f64) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(HilbertError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let err = hermiticity_error(m);
    if err > herm_tol {
        return Err(HilbertError::NotHermitian(err));
    }
    let sym = (m + m.adjoint()).unscale(2.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// `‖A‖₁ = Σ|λ_i|` for Hermitian `A`.
pub fn trace_norm(m: &DMatrix<C64>) -> Result<f64> {
    let eig = hermitian_eig_matrix(m, f64::INFINITY)?;
    Ok(eig.values.iter().map(|v| v.abs()).sum())
}

/// `½‖a − b‖₁`.
pub fn trace_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(HilbertError::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    Ok(0.5 * trace_norm(&(a - b))?)
}

pub fn hermiticity_error(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).norm()))
}
