//! GRW stochastic collapse dynamics on periodic 1D position grids.
//!
//! A trajectory alternates exact unitary evolution with Gaussian localization
//! jumps. Jump times for each collapsing subsystem form an independent
//! Poisson process; at each jump the center is drawn from the discrete
//! density `p(x_k) = ‖L(x_k)ψ‖²·Δx` and the state is replaced by
//! `L(x_k)ψ/‖L(x_k)ψ‖`.
//!
//! The localization operator uses the 1D prefactor `(α/π)^{1/4}`, which makes
//! `∫L(x)²dx = 1`, and minimal-image distances on the ring.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use thiserror::Error;

use crate::hilbert::{
    hermitian_eig, HermitianEigen, HilbertError, Operator, StateVector, SubsystemShape, C64,
};
use crate::rng::StreamSeed;

/// Deviation of the raw jump density from unit mass that is reported as an
/// inadequate grid.
pub const GRID_ADEQUACY_TOL: f64 = 1e-3;
/// Jumps whose unnormalized result is smaller than this are rejected.
pub const ZERO_NORM_TOL: f64 = 1e-14;
/// Propagation step bound as a fraction of `ħ/‖H‖`.
pub const STEP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrwError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("`{name}` = {value} violates {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("coordinate {0} is not a grid point")]
    OffGrid(f64),
    #[error("subsystem {subsystem} has dimension {found} but its grid has {expected} points")]
    GridMismatch {
        subsystem: usize,
        expected: usize,
        found: usize,
    },
    #[error("grid too coarse or too small: jump density sums to {sum} before renormalization")]
    GridInadequate { sum: f64 },
    #[error("jump at {center} has zero probability (norm {norm:e})")]
    ZeroNormJump { center: f64, norm: f64 },
    #[error("step {dt} exceeds the stability bound {max}")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("horizon {horizon} is not an integer number of steps of {dt}")]
    HorizonNotMultiple { horizon: f64, dt: f64 },
}

pub type Result<T> = std::result::Result<T, GrwError>;

fn require(ok: bool, name: &'static str, value: f64, requirement: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(GrwError::InvalidParameter {
            name,
            value,
            requirement,
        })
    }
}

/// Model constants. `lambda` is the per-particle jump rate; `alpha` the
/// inverse squared localization width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrwParams {
    pub alpha: f64,
    pub lambda: f64,
    pub hbar: f64,
    pub mass: f64,
}

impl GrwParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        Self {
            alpha,
            lambda,
            hbar: 1.0,
            mass: 1.0,
        }
        .validated()
    }

    pub fn with_hbar(mut self, hbar: f64) -> Result<Self> {
        self.hbar = hbar;
        self.validated()
    }

    pub fn with_mass(mut self, mass: f64) -> Result<Self> {
        self.mass = mass;
        self.validated()
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        require(self.alpha > 0.0, "alpha", self.alpha, "alpha > 0")?;
        require(self.lambda >= 0.0, "lambda", self.lambda, "lambda >= 0")?;
        require(self.hbar > 0.0, "hbar", self.hbar, "hbar > 0")?;
        require(self.mass > 0.0, "mass", self.mass, "mass > 0")?;
        Ok(self)
    }

    /// Localization width `α^{-1/2}`.
    pub fn localization_width(&self) -> f64 {
        self.alpha.sqrt().recip()
    }
}

/// A periodic lattice of `points` sites with spacing `spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    points: usize,
    spacing: f64,
    origin: f64,
}

impl Grid {
    pub fn new(points: usize, spacing: f64, origin: f64) -> Result<Self> {
        require(points >= 8, "points", points as f64, "points >= 8")?;
        require(spacing > 0.0, "spacing", spacing, "spacing > 0")?;
        require(true, "origin", origin, "a finite origin")?;
        Ok(Self {
            points,
            spacing,
            origin,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Period of the ring, `M·Δx`.
    pub fn extent(&self) -> f64 {
        self.points as f64 * self.spacing
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.spacing
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.coordinate(k)).collect()
    }

    /// The `α` whose width `α^{-1/2}` spans four sites.
    pub fn default_alpha(&self) -> f64 {
        1.0 / (16.0 * self.spacing * self.spacing)
    }

    /// Site index of a lattice coordinate, wrapped onto the ring.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let rel = (x - self.origin) / self.spacing;
        let k = rel.round();
        if !rel.is_finite() || (rel - k).abs() > 1e-9 * rel.abs().max(1.0) {
            return Err(GrwError::OffGrid(x));
        }
        Ok((k as i64).rem_euclid(self.points as i64) as usize)
    }

    /// Signed minimal-image number of sites from `from` to `to`, in `(−M/2, M/2]`.
    pub fn offset_steps(&self, from: usize, to: usize) -> i64 {
        let m = self.points as i64;
        let d = (to as i64 - from as i64).rem_euclid(m);
        if d > m / 2 {
            d - m
        } else {
            d
        }
    }

    /// Minimal-image distance between two continuous coordinates.
    pub fn periodic_distance(&self, a: f64, b: f64) -> f64 {
        let l = self.extent();
        let d = (b - a).rem_euclid(l);
        d.min(l - d)
    }

    /// Signed minimal-image displacement from `a` to `b`.
    pub fn periodic_displacement(&self, a: f64, b: f64) -> f64 {
        let l = self.extent();
        let d = (b - a).rem_euclid(l);
        if d > l / 2.0 {
            d - l
        } else {
            d
        }
    }

    /// Checks that the ring resolves and contains a localization of width
    /// `α^{-1/2}`: `α·Δx² ≤ 0.1` and extent `≥ 10·α^{-1/2}`.
    pub fn resolves(&self, alpha: f64) -> bool {
        alpha * self.spacing * self.spacing <= 0.1 && self.extent() >= 10.0 / alpha.sqrt()
    }
}

/// `L(x)` evaluated at each minimal-image offset `j = (q − k) mod M`.
fn localization_profile(grid: &Grid, alpha: f64) -> Vec<f64> {
    let prefactor = (alpha / std::f64::consts::PI).powf(0.25);
    (0..grid.points)
        .map(|j| {
            let d = grid.offset_steps(0, j) as f64 * grid.spacing;
            prefactor * (-0.5 * alpha * d * d).exp()
        })
        .collect()
}

/// `L(center)` on a single grid: diagonal with entries
/// `(α/π)^{1/4}·exp(−(α/2)·d(q, center)²)`.
pub fn localization_operator(grid: &Grid, alpha: f64, center: f64) -> Result<Operator> {
    require(alpha > 0.0, "alpha", alpha, "alpha > 0")?;
    let k = grid.index_of(center)?;
    let profile = localization_profile(grid, alpha);
    let diag: Vec<f64> = (0..grid.points)
        .map(|q| profile[(q + grid.points - k) % grid.points])
        .collect();
    Ok(Operator::from_real_diagonal(&diag))
}

/// Discrete jump-center distribution over the sites of one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpDensity {
    /// Renormalized probabilities, one per site.
    pub probabilities: Vec<f64>,
    /// `Σ_k ‖L(x_k)ψ‖²·Δx` before renormalization.
    pub raw_total: f64,
    /// Site at which cumulative sums start.
    origin: usize,
}

impl JumpDensity {
    /// Inverse-CDF draw of a site, accumulating from the density's origin.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let m = self.probabilities.len();
        let ordered = (0..m).map(|i| (self.origin + i) % m);
        let total: f64 = ordered.clone().map(|k| self.probabilities[k]).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = self.origin;
        for k in ordered {
            let p = self.probabilities[k];
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = k;
            if acc > target {
                return k;
            }
        }
        last
    }

    pub fn mean_coordinate(&self, grid: &Grid) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| p * grid.coordinate(k))
            .sum()
    }
}

#[derive(Debug, Clone)]
struct CollapseTarget {
    subsystem: usize,
    grid: Grid,
    rate: f64,
    /// `L²` by offset.
    profile_sq: Vec<f64>,
    profile: Vec<f64>,
    origin: usize,
}

impl CollapseTarget {
    fn new(shape: &SubsystemShape, assignment: &GridAssignment, params: &GrwParams) -> Result<Self> {
        shape.check_index(assignment.subsystem)?;
        let found = shape.dims()[assignment.subsystem];
        if found != assignment.grid.points {
            return Err(GrwError::GridMismatch {
                subsystem: assignment.subsystem,
                expected: assignment.grid.points,
                found,
            });
        }
        require(
            assignment.amplification >= 0.0,
            "amplification",
            assignment.amplification,
            "amplification >= 0",
        )?;
        let profile = localization_profile(&assignment.grid, params.alpha);
        Ok(Self {
            subsystem: assignment.subsystem,
            grid: assignment.grid,
            rate: params.lambda * assignment.amplification,
            profile_sq: profile.iter().map(|l| l * l).collect(),
            profile,
            origin: assignment.sampling_origin % assignment.grid.points,
        })
    }

    fn density(&self, psi: &StateVector) -> Result<JumpDensity> {
        let m = self.grid.points;
        let marginal = psi.marginal(self.subsystem)?;
        let raw: Vec<f64> = (0..m)
            .map(|k| {
                let mut acc = 0.0;
                for (j, w) in self.profile_sq.iter().enumerate() {
                    acc += w * marginal[(k + j) % m];
                }
                acc * self.grid.spacing
            })
            .collect();
        let raw_total: f64 = (0..m).map(|i| raw[(self.origin + i) % m]).sum();
        if !raw_total.is_finite() || (raw_total - 1.0).abs() > GRID_ADEQUACY_TOL {
            return Err(GrwError::GridInadequate { sum: raw_total });
        }
        Ok(JumpDensity {
            probabilities: raw.iter().map(|p| p / raw_total).collect(),
            raw_total,
            origin: self.origin,
        })
    }

    fn jump(&self, psi: &StateVector, center: usize) -> Result<StateVector> {
        let m = self.grid.points;
        let shape = psi.shape();
        let stride = shape.stride(self.subsystem);
        let mut amps = psi.amplitudes().clone();
        let mut weights = vec![0.0; m];
        for (i, a) in amps.iter_mut().enumerate() {
            let q = (i / stride) % m;
            *a *= self.profile[(q + m - center) % m];
            weights[q] += a.norm_sqr();
        }
        // Summed outward from the center so that translated runs agree bit for bit.
        let norm = (0..m).map(|i| weights[(center + i) % m]).sum::<f64>().sqrt();
        if !(norm >= ZERO_NORM_TOL) {
            return Err(GrwError::ZeroNormJump {
                center: self.grid.coordinate(center),
                norm,
            });
        }
        Ok(StateVector::new(shape.clone(), amps.unscale(norm))?)
    }
}

/// `p(x_k) = ‖L(x_k)ψ‖²·Δx` for the grid factor `particle`, renormalized.
pub fn jump_density(
    psi: &StateVector,
    particle: usize,
    grid: &Grid,
    params: &GrwParams,
) -> Result<JumpDensity> {
    let target = CollapseTarget::new(psi.shape(), &GridAssignment::new(particle, *grid), params)?;
    target.density(psi)
}

/// `L(center)ψ/‖L(center)ψ‖` on the grid factor `particle`.
pub fn apply_jump(
    psi: &StateVector,
    particle: usize,
    center: f64,
    grid: &Grid,
    params: &GrwParams,
) -> Result<StateVector> {
    let target = CollapseTarget::new(psi.shape(), &GridAssignment::new(particle, *grid), params)?;
    target.jump(psi, grid.index_of(center)?)
}

/// Poisson jump times for `n_particles` independent processes of rate
/// `lambda`, merged and sorted by time.
pub fn sample_jump_times<R: Rng + ?Sized>(
    lambda: f64,
    n_particles: usize,
    horizon: f64,
    rng: &mut R,
) -> Vec<(f64, usize)> {
    sample_jump_times_with_rates(&vec![lambda; n_particles], horizon, rng)
}

/// As [`sample_jump_times`] with one rate per process.
pub fn sample_jump_times_with_rates<R: Rng + ?Sized>(
    rates: &[f64],
    horizon: f64,
    rng: &mut R,
) -> Vec<(f64, usize)> {
    let mut events = Vec::new();
    for (particle, &rate) in rates.iter().enumerate() {
        if !(rate > 0.0) || !(horizon > 0.0) {
            continue;
        }
        let exp = Exp::new(rate).expect("positive rate");
        let mut t = 0.0;
        loop {
            t += exp.sample(rng);
            if t > horizon {
                break;
            }
            events.push((t, particle));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    events
}

/// One localization event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    /// Subsystem index of the collapsing factor.
    pub particle: usize,
    pub center: f64,
    pub center_index: usize,
}

/// A single stochastic realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub jumps: Vec<JumpEvent>,
    pub seed: Option<StreamSeed>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    /// State recorded at time `t` (within 1e-9).
    pub fn state_at(&self, t: f64) -> Option<&StateVector> {
        self.sample_times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|i| &self.states[i])
    }
}

/// Which grid (and amplification of `λ`) collapses which factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridAssignment {
    pub subsystem: usize,
    pub grid: Grid,
    /// Effective jump rate is `amplification·λ`.
    pub amplification: f64,
    /// Site from which jump-center CDFs are accumulated.
    pub sampling_origin: usize,
}

impl GridAssignment {
    pub fn new(subsystem: usize, grid: Grid) -> Self {
        Self {
            subsystem,
            grid,
            amplification: 1.0,
            sampling_origin: 0,
        }
    }

    pub fn amplified(mut self, factor: f64) -> Self {
        self.amplification = factor;
        self
    }

    pub fn with_sampling_origin(mut self, origin: usize) -> Self {
        self.sampling_origin = origin;
        self
    }
}

/// Time discretization of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolveOptions {
    pub horizon: f64,
    pub dt: f64,
    /// States are recorded every this many steps (and at the horizon).
    pub record_every: usize,
}

impl EvolveOptions {
    pub fn new(horizon: f64, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            record_every: 1,
        }
    }

    pub fn recording_every(mut self, steps: usize) -> Self {
        self.record_every = steps;
        self
    }

    pub fn steps(&self) -> Result<usize> {
        require(self.horizon > 0.0, "horizon", self.horizon, "horizon > 0")?;
        require(self.dt > 0.0, "dt", self.dt, "dt > 0")?;
        require(
            self.record_every >= 1,
            "record_every",
            self.record_every as f64,
            "record_every >= 1",
        )?;
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(GrwError::HorizonNotMultiple {
                horizon: self.horizon,
                dt: self.dt,
            });
        }
        Ok(steps as usize)
    }

    /// Recorded times, starting at 0 and ending exactly at the horizon.
    pub fn sample_times(&self) -> Result<Vec<f64>> {
        let steps = self.steps()?;
        let mut ks: Vec<usize> = (0..=steps).step_by(self.record_every).collect();
        if ks.last() != Some(&steps) {
            ks.push(steps);
        }
        Ok(ks
            .into_iter()
            .map(|k| k as f64 * self.horizon / steps as f64)
            .collect())
    }
}

/// Precomputed propagator and collapse targets shared by every trajectory of
/// an ensemble.
#[derive(Debug, Clone)]
pub struct GrwEngine {
    shape: SubsystemShape,
    spectrum: Option<HermitianEigen>,
    hbar: f64,
    targets: Vec<CollapseTarget>,
    sample_times: Vec<f64>,
}

impl GrwEngine {
    pub fn new(
        shape: &SubsystemShape,
        hamiltonian: &Operator,
        params: &GrwParams,
        grid_map: &[GridAssignment],
        options: &EvolveOptions,
    ) -> Result<Self> {
        let params = params.validated()?;
        if hamiltonian.dim() != shape.total() {
            return Err(HilbertError::DimensionMismatch {
                expected: shape.total(),
                found: hamiltonian.dim(),
            }
            .into());
        }
        let sample_times = options.sample_times()?;
        let spectrum = if hamiltonian.is_zero() {
            None
        } else {
            let eig = hermitian_eig(hamiltonian)?;
            let norm = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let max = STEP_FRACTION * params.hbar / norm;
            if options.dt > max {
                return Err(GrwError::StepTooLarge {
                    dt: options.dt,
                    max,
                });
            }
            Some(eig)
        };
        let targets = grid_map
            .iter()
            .map(|a| CollapseTarget::new(shape, a, &params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape: shape.clone(),
            spectrum,
            hbar: params.hbar,
            targets,
            sample_times,
        })
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.sample_times
    }

    pub fn horizon(&self) -> f64 {
        *self.sample_times.last().expect("non-empty")
    }

    /// Advances `amps` by `exp(−iHτ/ħ)`.
    fn propagate(&self, amps: &mut DVector<C64>, tau: f64) {
        let Some(eig) = &self.spectrum else { return };
        if tau <= 0.0 {
            return;
        }
        let mut coeffs = eig.vectors.adjoint() * &*amps;
        for (c, &v) in coeffs.iter_mut().zip(&eig.values) {
            *c *= C64::from_polar(1.0, -v * tau / self.hbar);
        }
        *amps = &eig.vectors * coeffs;
    }

    pub fn run<R: Rng + ?Sized>(&self, psi0: &StateVector, rng: &mut R) -> Result<Trajectory> {
        if psi0.shape() != &self.shape {
            return Err(HilbertError::DimensionMismatch {
                expected: self.shape.total(),
                found: psi0.dim(),
            }
            .into());
        }
        let rates: Vec<f64> = self.targets.iter().map(|t| t.rate).collect();
        let events = sample_jump_times_with_rates(&rates, self.horizon(), rng);

        let (shape, mut amps) = psi0.clone().into_parts();
        let mut now = 0.0;
        let mut states = Vec::with_capacity(self.sample_times.len());
        let mut jumps = Vec::with_capacity(events.len());
        let mut pending = events.iter().peekable();
        for &t_sample in &self.sample_times {
            while let Some(&&(t_jump, which)) = pending.peek() {
                if t_jump > t_sample {
                    break;
                }
                pending.next();
                self.propagate(&mut amps, t_jump - now);
                now = t_jump;
                let target = &self.targets[which];
                let psi = StateVector::new(shape.clone(), amps)?;
                let density = target.density(&psi)?;
                let center = density.sample(rng);
                amps = target.jump(&psi, center)?.into_parts().1;
                jumps.push(JumpEvent {
                    time: t_jump,
                    particle: target.subsystem,
                    center: target.grid.coordinate(center),
                    center_index: center,
                });
            }
            self.propagate(&mut amps, t_sample - now);
            now = t_sample;
            states.push(StateVector::new(shape.clone(), amps.clone())?);
        }
        Ok(Trajectory {
            sample_times: self.sample_times.clone(),
            states,
            jumps,
            seed: None,
        })
    }

    pub fn run_seeded(&self, psi0: &StateVector, seed: StreamSeed) -> Result<Trajectory> {
        let mut rng = seed.rng();
        let mut traj = self.run(psi0, &mut rng)?;
        traj.seed = Some(seed);
        Ok(traj)
    }
}

/// One GRW realization from `psi0` over `options.horizon`.
pub fn evolve_trajectory<R: Rng + ?Sized>(
    psi0: &StateVector,
    hamiltonian: &Operator,
    params: &GrwParams,
    grid_map: &[GridAssignment],
    options: &EvolveOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    GrwEngine::new(psi0.shape(), hamiltonian, params, grid_map, options)?.run(psi0, rng)
}

/// Normalized Gaussian packet with position standard deviation `width`,
/// wrapped onto the ring by minimal image.
pub fn gaussian_packet(grid: &Grid, center: f64, width: f64) -> Result<StateVector> {
    require(width > 0.0, "width", width, "width > 0")?;
    let amps: Vec<C64> = (0..grid.points)
        .map(|k| {
            let d = grid.periodic_distance(grid.coordinate(k), center);
            C64::new((-d * d / (4.0 * width * width)).exp(), 0.0)
        })
        .collect();
    Ok(StateVector::from_vec(SubsystemShape::single(grid.points)?, amps)?.normalize()?)
}

/// `√w·φ(c1) + √(1−w)·φ(c2)`, normalized.
pub fn two_peak_state(
    grid: &Grid,
    first: f64,
    second: f64,
    width: f64,
    first_weight: f64,
) -> Result<StateVector> {
    require(
        (0.0..=1.0).contains(&first_weight),
        "weight",
        first_weight,
        "0 <= weight <= 1",
    )?;
    let a = gaussian_packet(grid, first, width)?;
    let b = gaussian_packet(grid, second, width)?;
    let amps = a.amplitudes().scale(first_weight.sqrt()) + b.amplitudes().scale((1.0 - first_weight).sqrt());
    Ok(StateVector::new(a.shape().clone(), amps)?.normalize()?)
}

/// Periodic finite-difference kinetic energy `−(ħ²/2m)∂²`. Translation invariant.
pub fn free_hamiltonian(grid: &Grid, params: &GrwParams) -> Operator {
    let m = grid.points;
    let scale = params.hbar * params.hbar / (2.0 * params.mass * grid.spacing * grid.spacing);
    let mut h = DMatrix::zeros(m, m);
    for q in 0..m {
        h[(q, q)] = C64::new(2.0 * scale, 0.0);
        h[(q, (q + 1) % m)] = C64::new(-scale, 0.0);
        h[((q + 1) % m, q)] = C64::new(-scale, 0.0);
    }
    Operator::new(h).expect("square")
}

/// Lattice momentum `ħk` on the ring, diagonal in the discrete Fourier basis.
/// `exp(−i·P·s·Δx/ħ)` translates by exactly `s` sites.
pub fn momentum_operator(grid: &Grid, hbar: f64) -> Operator {
    let m = grid.points;
    let wavenumber = |j: usize| {
        let j = if j > m / 2 { j as f64 - m as f64 } else { j as f64 };
        2.0 * std::f64::consts::PI * j / (m as f64 * grid.spacing)
    };
    let mut p = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..m {
                let k = wavenumber(j);
                acc += C64::from_polar(hbar * k, k * (r as f64 - c as f64) * grid.spacing);
            }
            p[(r, c)] = acc / m as f64;
        }
    }
    // Exact Hermitian symmetrization removes rounding asymmetry.
    Operator::new((&p + p.adjoint()).unscale(2.0)).expect("square")
}

/// Cyclic shift of factor `subsystem` by `steps` sites (`ψ'(q) = ψ(q − s)`).
pub fn translate_state(psi: &StateVector, subsystem: usize, steps: i64) -> Result<StateVector> {
    let shape = psi.shape();
    shape.check_index(subsystem)?;
    let m = shape.dims()[subsystem];
    let stride = shape.stride(subsystem);
    let shift = steps.rem_euclid(m as i64) as usize;
    let src = psi.amplitudes();
    let mut out = DVector::zeros(src.len());
    for i in 0..src.len() {
        let q = (i / stride) % m;
        let target = i - q * stride + ((q + shift) % m) * stride;
        out[target] = src[i];
    }
    Ok(StateVector::new(shape.clone(), out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{tensor_product, ALGEBRAIC_TOL};
    use crate::rng::StreamSeed;

    fn desk_grid() -> Grid {
        Grid::new(64, 1.0, 0.0).unwrap()
    }

    fn desk_params(lambda: f64) -> GrwParams {
        GrwParams::new(desk_grid().default_alpha(), lambda).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(
            GrwParams::new(0.0, 1.0),
            Err(GrwError::InvalidParameter { name: "alpha", .. })
        ));
        assert!(matches!(
            GrwParams::new(1.0, -1.0),
            Err(GrwError::InvalidParameter { name: "lambda", .. })
        ));
        assert!(GrwParams::new(1.0, 0.0).unwrap().with_mass(0.0).is_err());
        assert!(Grid::new(4, 1.0, 0.0).is_err());
        assert!(Grid::new(16, -1.0, 0.0).is_err());
    }

    #[test]
    fn grid_indexing_wraps() {
        let g = Grid::new(16, 0.5, -4.0).unwrap();
        assert_eq!(g.index_of(-4.0).unwrap(), 0);
        assert_eq!(g.index_of(-3.5).unwrap(), 1);
        assert_eq!(g.index_of(4.0).unwrap(), 0);
        assert!(matches!(g.index_of(-3.7), Err(GrwError::OffGrid(_))));
        assert_eq!(g.offset_steps(1, 15), -2);
        assert_eq!(g.offset_steps(15, 1), 2);
        assert_eq!(g.offset_steps(0, 8), 8);
    }

    #[test]
    fn localization_peak_value_and_symmetry() {
        let g = desk_grid();
        let alpha = g.default_alpha();
        let l = localization_operator(&g, alpha, 10.0).unwrap();
        let peak = (alpha / std::f64::consts::PI).powf(0.25);
        assert!((l.matrix()[(10, 10)].re - peak).abs() < 1e-15);
        for s in 1..32 {
            let left = l.matrix()[((10 + 64 - s) % 64, (10 + 64 - s) % 64)];
            let right = l.matrix()[((10 + s) % 64, (10 + s) % 64)];
            assert_eq!(left, right);
        }
        assert!(l.is_hermitian(0.0));
        assert!(matches!(
            localization_operator(&g, alpha, 10.5),
            Err(GrwError::OffGrid(_))
        ));
    }

    #[test]
    fn localization_completeness_by_direct_summation() {
        let g = desk_grid();
        let alpha = g.default_alpha();
        assert!(g.resolves(alpha));
        let mut sum = vec![0.0; 64];
        for k in 0..64 {
            let l = localization_operator(&g, alpha, g.coordinate(k)).unwrap();
            for q in 0..64 {
                sum[q] += l.matrix()[(q, q)].re.powi(2) * g.spacing();
            }
        }
        for s in sum {
            assert!((s - 1.0).abs() < 1e-6, "completeness sum {s}");
        }
    }

    #[test]
    fn density_of_sharp_packet_is_centered() {
        let g = desk_grid();
        let p = desk_params(1.0);
        let psi = gaussian_packet(&g, 20.0, 0.3).unwrap();
        let d = jump_density(&psi, 0, &g, &p).unwrap();
        assert!((d.raw_total - 1.0).abs() < 1e-6);
        assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.mean_coordinate(&g) - 20.0).abs() < g.spacing());
        let argmax = (0..64)
            .max_by(|&a, &b| d.probabilities[a].total_cmp(&d.probabilities[b]))
            .unwrap();
        assert_eq!(argmax, 20);
    }

    #[test]
    fn density_of_two_peaks_splits_evenly() {
        let g = desk_grid();
        let p = desk_params(1.0);
        let psi = two_peak_state(&g, 16.0, 48.0, 1.0, 0.5).unwrap();
        let d = jump_density(&psi, 0, &g, &p).unwrap();
        let left: f64 = (0..64)
            .filter(|&k| g.periodic_distance(g.coordinate(k), 16.0) < 16.0)
            .map(|k| d.probabilities[k])
            .sum();
        assert!((left - 0.5).abs() < 1e-3, "left mass {left}");
    }

    #[test]
    fn density_of_uniform_state_is_uniform() {
        let g = desk_grid();
        let p = desk_params(1.0);
        let amps = vec![C64::new(0.125, 0.0); 64];
        let psi = StateVector::from_vec(SubsystemShape::single(64).unwrap(), amps).unwrap();
        let d = jump_density(&psi, 0, &g, &p).unwrap();
        for q in d.probabilities {
            assert!((q - 1.0 / 64.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coarse_grid_is_reported() {
        let g = Grid::new(8, 1.0, 0.0).unwrap();
        // Width far below the spacing: the Riemann sum misses most of the mass.
        let p = GrwParams::new(50.0, 1.0).unwrap();
        let psi = gaussian_packet(&g, 3.0, 1.0).unwrap();
        assert!(matches!(
            jump_density(&psi, 0, &g, &p),
            Err(GrwError::GridInadequate { .. })
        ));
    }

    #[test]
    fn jump_on_narrow_gaussian_keeps_it() {
        // Gaussian product: ⟨ψ|Lψ⟩²/‖Lψ‖² = 2√(1+2ασ²)/(2+2ασ²) ≥ 1 − ασ².
        let g = Grid::new(256, 0.25, 0.0).unwrap();
        let p = GrwParams::new(1.0 / 16.0, 1.0).unwrap();
        let sigma = 0.5;
        let psi = gaussian_packet(&g, 32.0, sigma).unwrap();
        let out = apply_jump(&psi, 0, 32.0, &g, &p).unwrap();
        let x = 2.0 * p.alpha * sigma * sigma;
        let exact = 2.0 * (1.0 + x).sqrt() / (2.0 + x);
        let fid = psi.fidelity(&out).unwrap();
        assert!((fid - exact).abs() < 1e-9, "{fid} vs {exact}");
        assert!(fid >= 1.0 - p.alpha * sigma * sigma);
        assert!((out.norm() - 1.0).abs() < ALGEBRAIC_TOL);
    }

    #[test]
    fn jump_on_peak_selects_it() {
        let g = Grid::new(128, 1.0, 0.0).unwrap();
        let p = GrwParams::new(g.default_alpha(), 1.0).unwrap();
        // Separation 48 sites = 12 localization widths.
        let psi = two_peak_state(&g, 40.0, 88.0, 1.0, 0.5).unwrap();
        let out = apply_jump(&psi, 0, 40.0, &g, &p).unwrap();
        let near: f64 = (0..128)
            .filter(|&k| g.periodic_distance(g.coordinate(k), 40.0) < 24.0)
            .map(|k| out.amplitudes()[k].norm_sqr())
            .sum();
        assert!(near >= 1.0 - 1e-6);
    }

    #[test]
    fn jump_leaves_other_factor_untouched() {
        let g = Grid::new(16, 1.0, 0.0).unwrap();
        let p = GrwParams::new(0.25, 1.0).unwrap();
        let a = gaussian_packet(&g, 5.0, 2.0).unwrap();
        let b = gaussian_packet(&g, 11.0, 1.5).unwrap();
        let ab = tensor_product(&a, &b).unwrap();
        let out = apply_jump(&ab, 0, 6.0, &g, &p).unwrap();
        let a_jumped = apply_jump(&a, 0, 6.0, &g, &p).unwrap();
        let expected = tensor_product(&a_jumped, &b).unwrap();
        assert!((out.amplitudes() - expected.amplitudes()).norm() < ALGEBRAIC_TOL);
    }

    #[test]
    fn zero_probability_jump_is_an_error() {
        let g = desk_grid();
        let p = GrwParams::new(4.0, 1.0).unwrap();
        let psi = StateVector::basis(SubsystemShape::single(64).unwrap(), 0).unwrap();
        assert!(matches!(
            apply_jump(&psi, 0, 32.0, &g, &p),
            Err(GrwError::ZeroNormJump { .. })
        ));
    }

    #[test]
    fn no_rate_no_jumps() {
        let mut rng = StreamSeed::new(1, 0).rng();
        assert!(sample_jump_times(0.0, 3, 10.0, &mut rng).is_empty());
    }

    #[test]
    fn poisson_mean_count() {
        // λT = 10, 10⁴ runs: standard error √10/100.
        let runs = 10_000;
        let total: usize = (0..runs)
            .map(|i| sample_jump_times(2.0, 1, 5.0, &mut StreamSeed::new(3, i).rng()).len())
            .sum();
        let mean = total as f64 / runs as f64;
        assert!((mean - 10.0).abs() <= 3.0 * 10f64.sqrt() / 100.0, "mean {mean}");
    }

    #[test]
    fn two_particle_counts_are_poisson_with_summed_rate() {
        use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};
        let (lambda, horizon, runs) = (1.0, 2.5, 10_000u64);
        let law = Poisson::new(2.0 * lambda * horizon).unwrap();
        let top = 12;
        let mut observed = vec![0u64; top + 1];
        for i in 0..runs {
            let n = sample_jump_times(lambda, 2, horizon, &mut StreamSeed::new(4, i).rng()).len();
            observed[n.min(top)] += 1;
        }
        let expected: Vec<f64> = (0..=top)
            .map(|k| {
                let p = if k < top { law.pmf(k as u64) } else { law.sf(top as u64 - 1) };
                p * runs as f64
            })
            .collect();
        assert!(expected.iter().all(|&e| e >= 5.0));
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        let critical = ChiSquared::new(top as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 <= critical, "chi2 {chi2} > {critical}");
    }

    #[test]
    fn merged_times_are_sorted_and_labelled() {
        let mut rng = StreamSeed::new(9, 0).rng();
        let ev = sample_jump_times_with_rates(&[3.0, 0.0, 5.0], 4.0, &mut rng);
        assert!(ev.windows(2).all(|w| w[0].0 <= w[1].0));
        assert!(ev.iter().all(|&(t, p)| (0.0..=4.0).contains(&t) && p != 1));
        assert!(ev.iter().any(|&(_, p)| p == 0) && ev.iter().any(|&(_, p)| p == 2));
    }

    #[test]
    fn static_trajectory_without_dynamics() {
        let g = Grid::new(32, 1.0, 0.0).unwrap();
        let p = GrwParams::new(g.default_alpha(), 0.0).unwrap();
        let psi = gaussian_packet(&g, 10.0, 2.0).unwrap();
        let opts = EvolveOptions::new(1.0, 0.1);
        let mut rng = StreamSeed::new(0, 0).rng();
        let tr = evolve_trajectory(&psi, &Operator::zeros(32), &p, &[GridAssignment::new(0, g)], &opts, &mut rng)
            .unwrap();
        assert_eq!(tr.states.len(), 11);
        assert!(tr.jumps.is_empty());
        assert!(tr.states.iter().all(|s| s == &psi));
        assert_eq!(*tr.sample_times.last().unwrap(), 1.0);
    }

    #[test]
    fn unitary_trajectory_conserves_norm() {
        let g = Grid::new(32, 1.0, 0.0).unwrap();
        let p = GrwParams::new(g.default_alpha(), 0.0).unwrap();
        let h = free_hamiltonian(&g, &p);
        let psi = gaussian_packet(&g, 10.0, 2.0).unwrap();
        let opts = EvolveOptions::new(1.0, 0.005).recording_every(10);
        let tr = evolve_trajectory(&psi, &h, &p, &[GridAssignment::new(0, g)], &opts, &mut StreamSeed::new(0, 0).rng())
            .unwrap();
        assert_eq!(tr.states.len(), 21);
        for s in &tr.states {
            assert!((s.norm() - 1.0).abs() < 1e-10);
        }
        assert!(tr.final_state().fidelity(&psi).unwrap() < 0.999);
    }

    #[test]
    fn step_bound_is_enforced() {
        let g = Grid::new(32, 1.0, 0.0).unwrap();
        let p = GrwParams::new(g.default_alpha(), 0.0).unwrap();
        let h = free_hamiltonian(&g, &p); // ‖H‖ = 2
        let psi = gaussian_packet(&g, 10.0, 2.0).unwrap();
        let opts = EvolveOptions::new(1.0, 0.01);
        let err = evolve_trajectory(&psi, &h, &p, &[], &opts, &mut StreamSeed::new(0, 0).rng()).unwrap_err();
        assert!(matches!(err, GrwError::StepTooLarge { .. }));
        assert!(matches!(
            EvolveOptions::new(1.0, 0.3).steps(),
            Err(GrwError::HorizonNotMultiple { .. })
        ));
    }

    #[test]
    fn grid_must_match_factor() {
        let g = Grid::new(16, 1.0, 0.0).unwrap();
        let p = GrwParams::new(0.1, 1.0).unwrap();
        let psi = gaussian_packet(&Grid::new(32, 1.0, 0.0).unwrap(), 4.0, 1.0).unwrap();
        assert!(matches!(
            jump_density(&psi, 0, &g, &p),
            Err(GrwError::GridMismatch { .. })
        ));
    }

    #[test]
    fn trajectories_are_normalized_and_jumps_sorted() {
        let g = desk_grid();
        let p = desk_params(3.0);
        let h = free_hamiltonian(&g, &p.with_mass(10.0).unwrap());
        let psi = two_peak_state(&g, 16.0, 48.0, 1.5, 0.3).unwrap();
        let opts = EvolveOptions::new(2.0, 0.01).recording_every(20);
        let engine = GrwEngine::new(psi.shape(), &h, &p, &[GridAssignment::new(0, g)], &opts).unwrap();
        for i in 0..20 {
            let tr = engine.run_seeded(&psi, StreamSeed::new(11, i)).unwrap();
            assert!(tr.jumps.windows(2).all(|w| w[0].time <= w[1].time));
            assert!(tr.jumps.iter().all(|j| (0.0..=2.0).contains(&j.time)));
            for s in &tr.states {
                assert!((s.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn momentum_generates_exact_translations() {
        let g = Grid::new(16, 0.5, 0.0).unwrap();
        let p = momentum_operator(&g, 1.0);
        assert!(p.is_hermitian(1e-12));
        let u = hermitian_eig(&p).unwrap().propagator(3.0 * g.spacing());
        let psi = gaussian_packet(&g, 2.0, 0.7).unwrap();
        let moved = u.apply(&psi).unwrap();
        let expected = translate_state(&psi, 0, 3).unwrap();
        assert!((moved.amplitudes() - expected.amplitudes()).norm() < 1e-10);
    }

    #[test]
    fn translation_round_trip() {
        let g = Grid::new(16, 1.0, 0.0).unwrap();
        let a = gaussian_packet(&g, 3.0, 1.0).unwrap();
        let b = gaussian_packet(&g, 9.0, 2.0).unwrap();
        let ab = tensor_product(&a, &b).unwrap();
        let moved = translate_state(&ab, 1, 5).unwrap();
        let expected = tensor_product(&a, &translate_state(&b, 0, 5).unwrap()).unwrap();
        assert_eq!(moved, expected);
        assert_eq!(translate_state(&moved, 1, -5).unwrap(), ab);
    }
}
