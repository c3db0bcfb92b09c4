//! Deterministic ensemble oracle: the master equation
//!
//! ```text
//! dρ/dt = −(i/ħ)[H, ρ] − Σ_n λ_n (ρ − Σ_k L_n(x_k) ρ L_n(x_k) Δx)
//! ```
//!
//! discretized on exactly the grids the trajectory engine samples from.
//! Because every `L_n(x_k)` is diagonal in the position basis, the collapse
//! term is an entrywise damping of `ρ` by the overlap kernel
//! `G(q, q') = Δx Σ_k L(q − x_k) L(q' − x_k)`.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::grw::{GridAssignment, Grid, GrwError, GrwParams, Trajectory};
use crate::hilbert::{
    hermitian_eig, trace_distance, DensityMatrix, HilbertError, Operator, SubsystemShape, C64,
};

/// Bound on `dt·(Σ_n λ_n + ‖H‖/ħ)`.
pub const STEP_BOUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LindbladError {
    #[error(transparent)]
    Grw(#[from] GrwError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("dt·(rates + ‖H‖/ħ) = {product} exceeds {STEP_BOUND}")]
    StepTooLarge { product: f64 },
    #[error("`{0}` must be positive and finite")]
    InvalidConfig(&'static str),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("trajectory {index} has no sample at t = {time}")]
    NotSampled { index: usize, time: f64 },
    #[error("integrated state violates {0}")]
    InvariantViolated(String),
}

pub type Result<T> = std::result::Result<T, LindbladError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LindbladConfig {
    pub dt: f64,
    pub horizon: f64,
}

impl LindbladConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self { dt, horizon }
    }
}

/// `G(q, q') = Δx Σ_k L(q − x_k) L(q' − x_k)` by direct summation.
pub fn overlap_kernel(grid: &Grid, alpha: f64) -> DMatrix<f64> {
    let m = grid.points();
    let prefactor = (alpha / std::f64::consts::PI).powf(0.25);
    let l = |q: usize, k: usize| {
        let d = grid.offset_steps(k, q) as f64 * grid.spacing();
        prefactor * (-0.5 * alpha * d * d).exp()
    };
    DMatrix::from_fn(m, m, |q, qp| {
        (0..m).map(|k| l(q, k) * l(qp, k)).sum::<f64>() * grid.spacing()
    })
}

/// Continuum value of the overlap kernel: `exp(−α d²/4)`.
pub fn closed_form_overlap(alpha: f64, separation: f64) -> f64 {
    (-alpha * separation * separation / 4.0).exp()
}

/// Dephasing rate of `ρ(x, x')` for one collapsing particle:
/// `λ(1 − exp(−α(x − x')²/4))`.
pub fn closed_form_decay_rate(lambda: f64, alpha: f64, separation: f64) -> f64 {
    lambda * (1.0 - closed_form_overlap(alpha, separation))
}

#[derive(Debug, Clone)]
struct Dephasing {
    subsystem: usize,
    rate: f64,
    kernel: DMatrix<f64>,
}

/// The generator of the master equation on a fixed composite space.
#[derive(Debug, Clone)]
pub struct Lindbladian {
    shape: SubsystemShape,
    hamiltonian: Option<DMatrix<C64>>,
    hamiltonian_norm: f64,
    hbar: f64,
    dephasing: Vec<Dephasing>,
}

impl Lindbladian {
    pub fn new(
        shape: &SubsystemShape,
        hamiltonian: &Operator,
        params: &GrwParams,
        grid_map: &[GridAssignment],
    ) -> Result<Self> {
        let params = params.validated()?;
        if hamiltonian.dim() != shape.total() {
            return Err(HilbertError::DimensionMismatch {
                expected: shape.total(),
                found: hamiltonian.dim(),
            }
            .into());
        }
        let (h, norm) = if hamiltonian.is_zero() {
            (None, 0.0)
        } else {
            let eig = hermitian_eig(hamiltonian)?;
            let norm = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (Some(hamiltonian.matrix().clone()), norm)
        };
        let mut dephasing = Vec::with_capacity(grid_map.len());
        for a in grid_map {
            shape.check_index(a.subsystem)?;
            let found = shape.dims()[a.subsystem];
            if found != a.grid.points() {
                return Err(GrwError::GridMismatch {
                    subsystem: a.subsystem,
                    expected: a.grid.points(),
                    found,
                }
                .into());
            }
            dephasing.push(Dephasing {
                subsystem: a.subsystem,
                rate: params.lambda * a.amplification,
                kernel: overlap_kernel(&a.grid, params.alpha),
            });
        }
        Ok(Self {
            shape: shape.clone(),
            hamiltonian: h,
            hamiltonian_norm: norm,
            hbar: params.hbar,
            dephasing,
        })
    }

    pub fn total_rate(&self) -> f64 {
        self.dephasing.iter().map(|d| d.rate).sum()
    }

    /// `dt·(Σλ_n + ‖H‖/ħ)`.
    pub fn step_product(&self, dt: f64) -> f64 {
        dt * (self.total_rate() + self.hamiltonian_norm / self.hbar)
    }

    pub fn rhs(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let n = rho.nrows();
        let mut out = match &self.hamiltonian {
            Some(h) => {
                let comm = h * rho - rho * h;
                comm * C64::new(0.0, -1.0 / self.hbar)
            }
            None => DMatrix::zeros(n, n),
        };
        for d in &self.dephasing {
            let m = self.shape.dims()[d.subsystem];
            let stride = self.shape.stride(d.subsystem);
            for j in 0..n {
                let qj = (j / stride) % m;
                for i in 0..n {
                    let qi = (i / stride) % m;
                    out[(i, j)] -= rho[(i, j)] * (d.rate * (1.0 - d.kernel[(qi, qj)]));
                }
            }
        }
        out
    }

    fn rk4_step(&self, rho: &DMatrix<C64>, h: f64) -> DMatrix<C64> {
        let k1 = self.rhs(rho);
        let k2 = self.rhs(&(rho + &k1 * C64::new(h / 2.0, 0.0)));
        let k3 = self.rhs(&(rho + &k2 * C64::new(h / 2.0, 0.0)));
        let k4 = self.rhs(&(rho + &k3 * C64::new(h, 0.0)));
        rho + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0)
    }

    /// Classical fixed-step RK4 from `t = 0`, returning `ρ` at each of the
    /// ascending `times`. Each segment uses the largest step `≤ dt` that
    /// divides it evenly.
    pub fn integrate_to(&self, rho0: &DensityMatrix, dt: f64, times: &[f64]) -> Result<Vec<DensityMatrix>> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(LindbladError::InvalidConfig("dt"));
        }
        let product = self.step_product(dt);
        if product > STEP_BOUND {
            return Err(LindbladError::StepTooLarge { product });
        }
        if rho0.shape() != &self.shape {
            return Err(HilbertError::DimensionMismatch {
                expected: self.shape.total(),
                found: rho0.shape().total(),
            }
            .into());
        }
        let mut rho = rho0.matrix().clone();
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if !(t >= now) || !t.is_finite() {
                return Err(LindbladError::InvalidConfig("checkpoint times"));
            }
            let span = t - now;
            let steps = (span / dt - 1e-9).ceil().max(0.0) as usize;
            if steps > 0 {
                let h = span / steps as f64;
                for _ in 0..steps {
                    rho = self.rk4_step(&rho, h);
                }
            }
            now = t;
            let state = DensityMatrix::from_matrix_unchecked(self.shape.clone(), rho.clone())?;
            state
                .validate(1e-8, 1e-8, 1e-6)
                .map_err(|e| LindbladError::InvariantViolated(e.to_string()))?;
            out.push(state);
        }
        Ok(out)
    }
}

/// The right-hand side of the master equation at `rho`.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    hamiltonian: &Operator,
    params: &GrwParams,
    grid_map: &[GridAssignment],
) -> Result<DMatrix<C64>> {
    Ok(Lindbladian::new(rho.shape(), hamiltonian, params, grid_map)?.rhs(rho.matrix()))
}

/// `ρ(T)` by fixed-step RK4.
pub fn integrate(
    rho0: &DensityMatrix,
    hamiltonian: &Operator,
    params: &GrwParams,
    grid_map: &[GridAssignment],
    config: &LindbladConfig,
) -> Result<DensityMatrix> {
    if !(config.horizon > 0.0) || !config.horizon.is_finite() {
        return Err(LindbladError::InvalidConfig("horizon"));
    }
    let generator = Lindbladian::new(rho0.shape(), hamiltonian, params, grid_map)?;
    let mut states = generator.integrate_to(rho0, config.dt, &[config.horizon])?;
    Ok(states.pop().expect("one checkpoint"))
}

/// Running sums of `|ψ(t)⟩⟨ψ(t)|` over trajectories at fixed sample times.
#[derive(Debug, Clone)]
pub struct EnsembleDensity {
    times: Vec<f64>,
    sums: Vec<DMatrix<C64>>,
    count: usize,
}

impl EnsembleDensity {
    pub fn new(times: &[f64], dim: usize) -> Self {
        Self {
            times: times.to_vec(),
            sums: vec![DMatrix::zeros(dim, dim); times.len()],
            count: 0,
        }
    }

    pub fn add(&mut self, trajectory: &Trajectory) -> Result<()> {
        for (t, sum) in self.times.iter().zip(&mut self.sums) {
            let psi = trajectory.state_at(*t).ok_or(LindbladError::NotSampled {
                index: self.count,
                time: *t,
            })?;
            let a = psi.amplitudes();
            // Hermitian rank-one update.
            for j in 0..a.len() {
                let cj = a[j].conj();
                for i in 0..a.len() {
                    sum[(i, j)] += a[i] * cj;
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Adds another accumulator's sums; the result depends on merge order
    /// only through floating-point association.
    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `ρ_MC(t_i) = (1/K) Σ |ψ(t_i)⟩⟨ψ(t_i)|`.
    pub fn densities(&self) -> Result<Vec<DMatrix<C64>>> {
        if self.count == 0 {
            return Err(LindbladError::EmptyEnsemble);
        }
        Ok(self.sums.iter().map(|s| s.unscale(self.count as f64)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceDistanceReport {
    pub time: f64,
    pub ensemble_size: usize,
    /// `½‖ρ_MC − ρ_oracle‖₁`.
    pub distance: f64,
    /// Monte Carlo acceptance threshold `5/√K`.
    pub threshold: f64,
}

impl TraceDistanceReport {
    pub fn from_densities(time: f64, ensemble_size: usize, mc: &DMatrix<C64>, oracle: &DMatrix<C64>) -> Result<Self> {
        Ok(Self {
            time,
            ensemble_size,
            distance: trace_distance(mc, oracle)?,
            threshold: 5.0 / (ensemble_size as f64).sqrt(),
        })
    }

    pub fn passes(&self) -> bool {
        self.distance <= self.threshold
    }
}

/// Trace distance between the empirical ensemble state at `at` and the oracle.
pub fn ensemble_compare(
    trajectories: &[Trajectory],
    rho_oracle: &DensityMatrix,
    at: f64,
) -> Result<TraceDistanceReport> {
    if trajectories.is_empty() {
        return Err(LindbladError::EmptyEnsemble);
    }
    let mut acc = EnsembleDensity::new(&[at], rho_oracle.shape().total());
    for t in trajectories {
        acc.add(t)?;
    }
    let mc = acc.densities()?.pop().expect("one time");
    TraceDistanceReport::from_densities(at, trajectories.len(), &mc, rho_oracle.matrix())
}
