//! End-to-end experiments that produce [`ExperimentReport`]s.
//!
//! Every trial draws from its own ChaCha stream `(master seed, trial index)`
//! and trials are reduced in index order, so reports are bit-identical for a
//! given seed regardless of thread count.

use serde::Serialize;
use thiserror::Error;

use crate::grw::{
    free_hamiltonian, gaussian_packet, translate_state, two_peak_state, EvolveOptions, Grid,
    GridAssignment, GrwEngine, GrwError, GrwParams, Trajectory,
};
use crate::hilbert::{
    hermitian_eig, partial_trace, tensor_product, DensityMatrix, HilbertError, Operator, StateVector,
    SubsystemShape, C64,
};
use crate::ks::{build_structure, ck_argument_trace, check_assignment, search_coloring, KsError, RaySet, Verdict};
use crate::lindblad::{EnsembleDensity, LindbladError, Lindbladian, TraceDistanceReport};
use crate::parallel::fold_trials;
use crate::report::{fmt17, Check, ExperimentReport, Observable, TrialTable};
use crate::rng::StreamSeed;
use crate::spin::{
    joint_table, sequential_table, triple_measurement, triple_probabilities, zero_ket, Order,
    OrthoTriple, SingletState, SpinError, TripleOutcome,
};
use crate::stats::{ks_two_sample, sigma_distance, two_proportion_sigmas, KsTwoSample};

/// Stream offset for control runs that share a master seed with the main runs.
const CONTROL_STREAM: u64 = 1 << 40;
/// A pointer branch lighter than this counts as collapsed.
pub const BRANCH_THRESHOLD: f64 = 0.01;

/// Which exit status a failure maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Invariant,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid `{key}`: {message}")]
    Config { key: &'static str, message: String },
    #[error(transparent)]
    Grw(#[from] GrwError),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Ks(#[from] KsError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl ScenarioError {
    fn config(key: &'static str, message: impl Into<String>) -> Self {
        Self::Config {
            key,
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            Self::Config { .. } => Config,
            Self::Grw(e) => grw_class(e),
            Self::Lindblad(e) => match e {
                LindbladError::Grw(g) => grw_class(g),
                LindbladError::InvalidConfig(_) => Config,
                LindbladError::StepTooLarge { .. } => Numerical,
                LindbladError::Hilbert(_)
                | LindbladError::EmptyEnsemble
                | LindbladError::NotSampled { .. }
                | LindbladError::InvariantViolated(_) => Invariant,
            },
            Self::Hilbert(_) | Self::Invariant(_) => Invariant,
            Self::Spin(e) => match e {
                SpinError::DegenerateDirection | SpinError::NotOrthogonal(..) => Config,
                _ => Invariant,
            },
            Self::Ks(e) => match e {
                KsError::Internal(_) | KsError::Spin(_) => Invariant,
                _ => Config,
            },
        }
    }

    /// The key a configuration error refers to, if known.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Config { key, .. } => Some(key),
            Self::Grw(GrwError::InvalidParameter { name, .. }) => Some(name),
            _ => None,
        }
    }
}

fn grw_class(e: &GrwError) -> ErrorClass {
    match e {
        GrwError::InvalidParameter { .. } => ErrorClass::Config,
        GrwError::Hilbert(_) => ErrorClass::Invariant,
        _ => ErrorClass::Numerical,
    }
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

fn require(ok: bool, key: &'static str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::config(key, message))
    }
}

fn counts_observable<const N: usize>(name: &str, labels: [&str; N], counts: [u64; N]) -> Observable {
    Observable::from_counts(name, &labels, &counts)
}

const TRIPLE_LABELS: [&str; 3] = ["011", "101", "110"];

/// Squared-spin measurements on the spin-0 pair, `b` first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingletConfig {
    pub triple_a: OrthoTriple,
    pub triple_b: OrthoTriple,
    pub trials: u64,
    pub seed: u64,
}

fn same_frame(a: &OrthoTriple, b: &OrthoTriple) -> bool {
    (0..3).all(|i| (a.axis(i).dot(&b.axis(i)).abs() - 1.0).abs() <= 1e-10)
}

#[derive(Default)]
struct SingletTally {
    joint: [[u64; 3]; 3],
    a_alone: [u64; 3],
    worst_infidelity: f64,
    rows: Vec<[usize; 4]>,
}

/// Per trial: `b` measures its triple on the pair, the post-state is checked
/// against the product of `0`-kets, then `a` measures. A control stream has
/// `a` measure the untouched pair.
pub fn run_singlet_spacetime(cfg: &SingletConfig) -> Result<ExperimentReport> {
    require(cfg.trials > 0, "trials", "must be at least 1")?;
    let same = same_frame(&cfg.triple_a, &cfg.triple_b);
    let singlet = SingletState::new();
    let psi = singlet.state();
    let one = SubsystemShape::single(3)?;

    let tally = fold_trials(
        cfg.trials,
        SingletTally::default,
        |acc, i| -> Result<()> {
            let mut rng = StreamSeed::new(cfg.seed, i).rng();
            let (ob, post) = triple_measurement(psi, 1, &cfg.triple_b, &mut rng)?;
            let k = StateVector::new(one.clone(), zero_ket(&cfg.triple_b.axis(ob.zero_axis)))?;
            let infidelity = 1.0 - post.fidelity(&tensor_product(&k, &k)?)?;
            if infidelity > 1e-12 {
                return Err(ScenarioError::Invariant(format!(
                    "trial {i}: post-measurement state is not a product of 0-kets (1 - F = {infidelity:e})"
                )));
            }
            let (oa, _) = triple_measurement(&post, 0, &cfg.triple_a, &mut rng)?;
            if same && oa != ob {
                return Err(ScenarioError::Invariant(format!(
                    "trial {i}: identical triples gave a = {}, b = {}",
                    oa.label(),
                    ob.label()
                )));
            }
            let mut control = StreamSeed::new(cfg.seed, CONTROL_STREAM + i).rng();
            let (oc, _) = triple_measurement(psi, 0, &cfg.triple_a, &mut control)?;
            acc.joint[oa.zero_axis][ob.zero_axis] += 1;
            acc.a_alone[oc.zero_axis] += 1;
            acc.worst_infidelity = acc.worst_infidelity.max(infidelity);
            acc.rows.push([i as usize, ob.zero_axis, oa.zero_axis, oc.zero_axis]);
            Ok(())
        },
        |total, part| {
            for (r, p) in total.joint.iter_mut().zip(part.joint) {
                for (x, y) in r.iter_mut().zip(p) {
                    *x += y;
                }
            }
            for (x, y) in total.a_alone.iter_mut().zip(part.a_alone) {
                *x += y;
            }
            total.worst_infidelity = total.worst_infidelity.max(part.worst_infidelity);
            total.rows.extend(part.rows);
        },
    )?;

    let n = cfg.trials;
    let b_counts: [u64; 3] = [0, 1, 2].map(|j| (0..3).map(|i| tally.joint[i][j]).sum());
    let a_counts: [u64; 3] = [0, 1, 2].map(|i| tally.joint[i].iter().sum());
    let agree: u64 = (0..3).map(|i| tally.joint[i][i]).sum();
    let mut joint_labels = Vec::new();
    let mut joint_counts = Vec::new();
    for (i, la) in TRIPLE_LABELS.iter().enumerate() {
        for (j, lb) in TRIPLE_LABELS.iter().enumerate() {
            joint_labels.push(format!("a{la}|b{lb}"));
            joint_counts.push(tally.joint[i][j]);
        }
    }
    let joint_refs: Vec<&str> = joint_labels.iter().map(String::as_str).collect();

    let exact = joint_table(psi, &cfg.triple_a, &cfg.triple_b)?;
    let a_exact_alone = triple_probabilities(psi, 0, &cfg.triple_a)?;
    let a_exact_after_b = sequential_table(psi, &cfg.triple_a, &cfg.triple_b, Order::BThenA)?.marginal_a();
    let exact_dev = (0..3)
        .map(|i| (a_exact_alone[i] - a_exact_after_b[i]).abs())
        .fold(0.0, f64::max);
    let sampled_sigmas = (0..3)
        .map(|i| two_proportion_sigmas(a_counts[i] as f64 / n as f64, n, tally.a_alone[i] as f64 / n as f64, n))
        .fold(0.0, f64::max);
    let b_sigmas = (0..3)
        .map(|j| sigma_distance(b_counts[j] as f64 / n as f64, exact.marginal_b()[j], n))
        .fold(0.0, f64::max);

    let mut report = ExperimentReport::new("singlet", Some(cfg.seed), cfg);
    report.trials = n;
    report.observables = vec![
        counts_observable("b_outcome", TRIPLE_LABELS, b_counts),
        counts_observable("a_outcome_after_b", TRIPLE_LABELS, a_counts),
        counts_observable("a_outcome_without_b", TRIPLE_LABELS, tally.a_alone),
        Observable::from_counts("joint", &joint_refs, &joint_counts),
        counts_observable("axis_agreement", ["agree", "disagree"], [agree, n - agree]),
    ];
    report.metric("same_triples", &same);
    report.metric("exact_joint_table", &exact);
    report.metric("exact_a_marginal", &a_exact_alone);
    report.metric("post_state_infidelity_max", &tally.worst_infidelity);
    report.checks = vec![
        Check::at_most("post_state_infidelity", tally.worst_infidelity, 1e-12),
        Check::at_most("a_marginal_exact_deviation", exact_dev, 1e-10),
        Check::at_most("a_marginal_sampled_sigmas", sampled_sigmas, 3.0),
        Check::at_most("b_marginal_sigmas", b_sigmas, 3.0),
    ];
    if same {
        report.checks.push(Check::at_least("agreement_frequency", agree as f64 / n as f64, 1.0));
        report.checks.push(Check::at_most("exact_disagreement_mass", exact.disagreement(), 1e-12));
    }
    let mut table = TrialTable::new(&["trial", "b_outcome", "a_outcome", "a_outcome_without_b"]);
    for [i, b, a, c] in tally.rows {
        table.push(vec![
            i.to_string(),
            TRIPLE_LABELS[b].into(),
            TRIPLE_LABELS[a].into(),
            TRIPLE_LABELS[c].into(),
        ]);
    }
    report.table = Some(table);
    Ok(report)
}

/// Two particles on two-region supports and a pointer for wing `a`.
///
/// Particle `a` sits in Δ1 or Δ3 and `b` in Δ2 or Δ4, each modeled as a qubit.
/// The pointer is a packet on a ring of `pointer_points` unit-spaced sites
/// whose jump rate is `amplification·λ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EprConfig {
    /// Region centers Δ1, Δ2, Δ3, Δ4.
    pub regions: [f64; 4],
    /// Particle packet width; regions must be ≥ 10 widths apart.
    pub packet_width: f64,
    pub pointer_points: usize,
    pub pointer_width: f64,
    /// Sites the pointer moves per branch.
    pub pointer_shift: usize,
    /// Pointer coupling `g`; `0` switches the measurement off.
    pub coupling: f64,
    pub amplification: f64,
    pub lambda: f64,
    /// `0` selects the default `1/(16Δx²)`.
    pub alpha: f64,
    pub t_measure: f64,
    pub trials: u64,
    pub seed: u64,
}

impl Default for EprConfig {
    fn default() -> Self {
        Self {
            regions: [-50.0, 20.0, -20.0, 50.0],
            packet_width: 1.0,
            pointer_points: 64,
            pointer_width: 2.0,
            pointer_shift: 12,
            coupling: 1.0,
            amplification: 100.0,
            lambda: 0.05,
            alpha: 0.0,
            t_measure: 4.0,
            trials: 1000,
            seed: 0,
        }
    }
}

impl EprConfig {
    fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.pointer_points, 1.0, 0.0)?)
    }

    fn params(&self, grid: &Grid) -> Result<GrwParams> {
        let alpha = if self.alpha == 0.0 { grid.default_alpha() } else { self.alpha };
        Ok(GrwParams::new(alpha, self.lambda)?)
    }

    /// Duration of the pointer coupling: the time a unit coupling needs to
    /// move the pointer by `pointer_shift` sites.
    pub fn coupling_time(&self) -> f64 {
        let g = if self.coupling > 0.0 { self.coupling } else { 1.0 };
        self.pointer_shift as f64 / g
    }

    pub fn validate(&self) -> Result<()> {
        require(self.trials > 0, "trials", "must be at least 1")?;
        require(self.packet_width > 0.0, "packet_width", "must be positive")?;
        require(self.pointer_width > 0.0, "pointer_width", "must be positive")?;
        require(self.coupling >= 0.0 && self.coupling.is_finite(), "coupling", "must be finite and >= 0")?;
        require(self.amplification >= 1.0, "amplification", "must be >= 1")?;
        require(self.t_measure > 0.0, "t_measure", "must be positive")?;
        require(self.lambda >= 0.0, "lambda", "must be >= 0")?;
        for i in 0..4 {
            for j in i + 1..4 {
                require(
                    (self.regions[i] - self.regions[j]).abs() >= 10.0 * self.packet_width,
                    "regions",
                    "regions must be pairwise separated by at least 10 packet widths",
                )?;
            }
        }
        require(
            self.amplification * self.lambda * self.t_measure >= 20.0,
            "t_measure",
            "amplification * lambda * t_measure must be >= 20",
        )?;
        require(
            self.pointer_shift as f64 >= 5.0 * self.pointer_width,
            "pointer_shift",
            "must be at least 5 pointer widths",
        )?;
        require(
            2.0 * self.pointer_shift as f64 + 10.0 * self.pointer_width <= self.pointer_points as f64,
            "pointer_points",
            "ring too small for both displaced pointer branches",
        )?;
        let grid = self.grid()?;
        let params = self.params(&grid)?;
        require(
            grid.resolves(params.alpha),
            "alpha",
            "pointer ring must resolve the localization width and hold 10 widths",
        )?;
        Ok(())
    }
}

/// `(weight on positive displacements, weight on negative)` of the pointer.
fn pointer_branches(psi: &StateVector, grid: &Grid, centre: usize) -> Result<(f64, f64)> {
    let marginal = psi.marginal(2)?;
    let m = grid.points() as i64;
    let (mut plus, mut minus) = (0.0, 0.0);
    for (q, p) in marginal.iter().enumerate() {
        let d = grid.offset_steps(centre, q);
        if d == 0 || d == m / 2 {
            plus += p / 2.0;
            minus += p / 2.0;
        } else if d > 0 {
            plus += p;
        } else {
            minus += p;
        }
    }
    Ok((plus, minus))
}

#[derive(Default)]
struct EprTally {
    a: [u64; 2],
    b: [u64; 2],
    b_given_a: [[u64; 2]; 2],
    inconclusive: u64,
    jumps: u64,
    rows: Vec<(u64, Option<usize>, usize, f64, f64, usize)>,
}

/// Runs the pointer coupling and the amplified collapse, then reads off the
/// pointer branch and samples the region of particle `b`.
pub fn run_epr_position(cfg: &EprConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let params = cfg.params(&grid)?;
    let m = cfg.pointer_points;
    let shape = SubsystemShape::new(vec![2, 2, m])?;
    let centre = m / 2;
    let ready = gaussian_packet(&grid, grid.coordinate(centre), cfg.pointer_width)?;
    let bell = StateVector::from_vec(
        SubsystemShape::new(vec![2, 2])?,
        [1.0, 0.0, 0.0, 1.0].map(|x| C64::new(x * std::f64::consts::FRAC_1_SQRT_2, 0.0)).to_vec(),
    )?;
    let psi0 = tensor_product(&bell, &ready)?;
    let pointer = [GridAssignment::new(2, grid).amplified(cfg.amplification)];

    // The premeasurement exp(−i g t_c Z_a ⊗ I_b ⊗ P) is impulsive: it moves
    // the pointer by ±pointer_shift sites, right on Δ1 and left on Δ3, before
    // the amplified collapse acts. Integer shifts are exact on the lattice.
    let t_c = cfg.coupling_time();
    let premeasured = if cfg.coupling > 0.0 {
        let za = Operator::from_real_diagonal(&[1.0, -1.0]);
        let p = crate::grw::momentum_operator(&grid, params.hbar);
        let h = Operator::new(za.kron(&Operator::identity(2)).kron(&p).matrix() * C64::new(cfg.coupling, 0.0))?;
        let u = hermitian_eig(&h)?.propagator(t_c / params.hbar);
        u.apply(&psi0)?
    } else {
        psi0.clone()
    };
    let phase2 = GrwEngine::new(
        &shape,
        &Operator::zeros(shape.total()),
        &params,
        &pointer,
        &EvolveOptions::new(cfg.t_measure, cfg.t_measure),
    )?;

    let tally = fold_trials(
        cfg.trials,
        EprTally::default,
        |acc, i| -> Result<()> {
            let mut rng = StreamSeed::new(cfg.seed, i).rng();
            let run = phase2.run(&premeasured, &mut rng)?;
            let psi = run.final_state();
            let (plus, minus) = pointer_branches(psi, &grid, centre)?;
            let b_probs = psi.marginal(1)?;
            let u: f64 = rand::Rng::random(&mut rng);
            let b = if u < b_probs[0] / (b_probs[0] + b_probs[1]) { 0 } else { 1 };
            let a = if plus.min(minus) <= BRANCH_THRESHOLD {
                Some(if plus >= minus { 0 } else { 1 })
            } else {
                None
            };
            acc.b[b] += 1;
            match a {
                Some(a) => {
                    acc.a[a] += 1;
                    acc.b_given_a[a][b] += 1;
                }
                None => acc.inconclusive += 1,
            }
            let jumps = run.jumps.len() as u64;
            acc.jumps += jumps;
            acc.rows.push((i, a, b, plus, minus, jumps as usize));
            Ok(())
        },
        |t, p| {
            for k in 0..2 {
                t.a[k] += p.a[k];
                t.b[k] += p.b[k];
                for l in 0..2 {
                    t.b_given_a[k][l] += p.b_given_a[k][l];
                }
            }
            t.inconclusive += p.inconclusive;
            t.jumps += p.jumps;
            t.rows.extend(p.rows);
        },
    )?;

    let n = cfg.trials;
    let conclusive = n - tally.inconclusive;
    let mut report = ExperimentReport::new("epr", Some(cfg.seed), cfg);
    report.trials = n;
    report.inconclusive = tally.inconclusive;
    report.observables = vec![
        counts_observable("a_region", ["D1", "D3"], tally.a),
        counts_observable("b_region", ["D2", "D4"], tally.b),
        counts_observable("b_region_given_a_D1", ["D2", "D4"], tally.b_given_a[0]),
        counts_observable("b_region_given_a_D3", ["D2", "D4"], tally.b_given_a[1]),
    ];
    report.metric("coupling_time", &t_c);
    report.metric("mean_jumps", &(tally.jumps as f64 / n as f64));
    report.metric("conclusive_trials", &conclusive);

    let b_sigmas = sigma_distance(tally.b[0] as f64 / n as f64, 0.5, n);
    report.checks.push(Check::at_most("b_marginal_sigmas", b_sigmas, 3.0));
    if cfg.coupling > 0.0 {
        let split = if conclusive > 0 {
            sigma_distance(tally.a[0] as f64 / conclusive as f64, 0.5, conclusive)
        } else {
            f64::INFINITY
        };
        let correct = tally.b_given_a[0][0] + tally.b_given_a[1][1];
        let correct_frac = if conclusive > 0 { correct as f64 / conclusive as f64 } else { 0.0 };
        report.metric("conditional_correct_fraction", &correct_frac);
        report.checks.push(Check::at_most("a_split_sigmas", split, 3.0));
        report.checks.push(Check::at_least("conditional_correct_fraction", correct_frac, 0.99));
    } else {
        // No coupling: the ensemble state of b follows from the master
        // equation, which is cheap here because the Hamiltonian vanishes.
        let generator = Lindbladian::new(&shape, &Operator::zeros(shape.total()), &params, &pointer)?;
        let dt = 0.05 / generator.step_product(1.0).max(1.0);
        let rho = generator
            .integrate_to(&DensityMatrix::from_pure(&psi0), dt, &[cfg.t_measure])?
            .pop()
            .expect("one checkpoint");
        let b_oracle = partial_trace(&rho, &[1])?.diagonal();
        report.metric("oracle_b_marginal", &b_oracle);
        report.checks.push(Check::at_most("oracle_b_marginal_deviation", (b_oracle[0] - 0.5).abs(), 1e-10));
    }

    let mut table = TrialTable::new(&["trial", "a_region", "b_region", "pointer_plus", "pointer_minus", "jumps"]);
    for (i, a, b, plus, minus, jumps) in tally.rows {
        table.push(vec![
            i.to_string(),
            a.map_or("inconclusive".into(), |a| ["D1", "D3"][a].to_string()),
            ["D2", "D4"][b].into(),
            fmt17(plus),
            fmt17(minus),
            jumps.to_string(),
        ]);
    }
    report.table = Some(table);
    Ok(report)
}

/// One particle on a ring in a superposition of two packets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoPeakSetup {
    pub points: usize,
    pub spacing: f64,
    pub lambda: f64,
    /// `0` selects the default `1/(16Δx²)`.
    pub alpha: f64,
    /// Particle mass for the kinetic term; `0` drops the Hamiltonian.
    pub mass: f64,
    pub peaks: [f64; 2],
    pub width: f64,
    /// Probability weight of the first peak.
    pub first_weight: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl TwoPeakSetup {
    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.points, self.spacing, 0.0)?)
    }

    pub fn params(&self) -> Result<GrwParams> {
        let grid = self.grid()?;
        let alpha = if self.alpha == 0.0 { grid.default_alpha() } else { self.alpha };
        let p = GrwParams::new(alpha, self.lambda)?;
        Ok(if self.mass > 0.0 { p.with_mass(self.mass)? } else { p })
    }

    pub fn hamiltonian(&self) -> Result<Operator> {
        require(self.mass >= 0.0, "mass", "must be >= 0")?;
        let grid = self.grid()?;
        Ok(if self.mass > 0.0 {
            free_hamiltonian(&grid, &self.params()?)
        } else {
            Operator::zeros(self.points)
        })
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        let grid = self.grid()?;
        require(self.width > 0.0, "width", "must be positive")?;
        require((0.0..=1.0).contains(&self.first_weight), "first_weight", "must lie in [0, 1]")?;
        Ok(two_peak_state(&grid, self.peaks[0], self.peaks[1], self.width, self.first_weight)?)
    }

    fn validate(&self) -> Result<()> {
        require(self.horizon > 0.0, "horizon", "must be positive")?;
        require(self.dt > 0.0, "dt", "must be positive")?;
        let grid = self.grid()?;
        let params = self.params()?;
        require(
            grid.resolves(params.alpha),
            "alpha",
            "grid must resolve the localization width and hold 10 widths",
        )?;
        let sep = grid.periodic_distance(self.peaks[0], self.peaks[1]);
        require(sep >= 6.0 * self.width, "peaks", "peaks must be at least 6 widths apart")?;
        Ok(())
    }

    fn engine(&self, record_every: usize) -> Result<GrwEngine> {
        let grid = self.grid()?;
        GrwEngine::new(
            &SubsystemShape::single(self.points)?,
            &self.hamiltonian()?,
            &self.params()?,
            &[GridAssignment::new(0, grid)],
            &EvolveOptions::new(self.horizon, self.dt).recording_every(record_every),
        )
        .map_err(Into::into)
    }

    /// Probability on sites nearer the first peak than the second.
    pub fn peak_weights(&self, psi: &StateVector) -> Result<(f64, f64)> {
        let grid = self.grid()?;
        let (mut first, mut second) = (0.0, 0.0);
        for (q, p) in psi.probabilities().iter().enumerate() {
            let x = grid.coordinate(q);
            let d1 = grid.periodic_distance(x, self.peaks[0]);
            let d2 = grid.periodic_distance(x, self.peaks[1]);
            if (d1 - d2).abs() < 1e-12 {
                first += p / 2.0;
                second += p / 2.0;
            } else if d1 < d2 {
                first += p;
            } else {
                second += p;
            }
        }
        Ok((first, second))
    }
}

impl Default for TwoPeakSetup {
    fn default() -> Self {
        Self {
            points: 64,
            spacing: 1.0,
            lambda: 1.0,
            alpha: 0.0,
            mass: 20.0,
            peaks: [20.0, 44.0],
            width: 2.0,
            first_weight: 0.5,
            horizon: 5.0,
            dt: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleConfig {
    pub setup: TwoPeakSetup,
    pub ensemble: u64,
    pub seed: u64,
}

/// Samples `ensemble` trajectories and compares their average density matrix
/// with the master-equation solution at `T/4, T/2, 3T/4, T`.
pub fn run_oracle_comparison(cfg: &OracleConfig) -> Result<ExperimentReport> {
    require(cfg.ensemble >= 100, "k", "ensemble size must be at least 100")?;
    let s = &cfg.setup;
    s.validate()?;
    let steps = EvolveOptions::new(s.horizon, s.dt).steps()?;
    require(steps % 4 == 0, "dt", "horizon / dt must be a multiple of 4")?;
    let engine = s.engine(steps / 4)?;
    let checkpoints: Vec<f64> = engine.sample_times()[1..].to_vec();
    let psi0 = s.initial_state()?;
    let dim = s.points;

    let acc = fold_trials(
        cfg.ensemble,
        || (EnsembleDensity::new(&checkpoints, dim), 0u64),
        |(acc, jumps), i| -> Result<()> {
            let traj = engine.run_seeded(&psi0, StreamSeed::new(cfg.seed, i))?;
            *jumps += traj.jumps.len() as u64;
            acc.add(&traj)?;
            Ok(())
        },
        |(a, ja), (b, jb)| {
            a.merge(&b);
            *ja += jb;
        },
    )?;
    let (ensemble, jumps) = acc;
    let mc = ensemble.densities()?;

    let grid = s.grid()?;
    let generator = Lindbladian::new(
        psi0.shape(),
        &s.hamiltonian()?,
        &s.params()?,
        &[GridAssignment::new(0, grid)],
    )?;
    let oracle = generator.integrate_to(&DensityMatrix::from_pure(&psi0), s.dt, &checkpoints)?;
    let distances = checkpoints
        .iter()
        .zip(mc.iter().zip(&oracle))
        .map(|(&t, (m, o))| TraceDistanceReport::from_densities(t, cfg.ensemble as usize, m, o.matrix()))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut report = ExperimentReport::new("oracle-compare", Some(cfg.seed), cfg);
    report.trials = cfg.ensemble;
    report.metric("trace_distances", &distances);
    report.metric("mean_jumps", &(jumps as f64 / cfg.ensemble as f64));
    report.metric("oracle_step", &s.dt);
    for d in &distances {
        report.checks.push(Check::at_most(&format!("trace_distance_t={:.4}", d.time), d.distance, d.threshold));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationConfig {
    pub setup: TwoPeakSetup,
    pub trials: u64,
    pub seed: u64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            setup: TwoPeakSetup {
                horizon: 20.0,
                dt: 0.05,
                first_weight: 0.3,
                ..TwoPeakSetup::default()
            },
            trials: 1000,
            seed: 0,
        }
    }
}

/// Runs independent trajectories from a two-peak state and records which
/// peak each one ends in.
pub fn run_localization(cfg: &LocalizationConfig) -> Result<ExperimentReport> {
    require(cfg.trials > 0, "trials", "must be at least 1")?;
    let s = &cfg.setup;
    s.validate()?;
    let steps = EvolveOptions::new(s.horizon, s.dt).steps()?;
    let engine = s.engine(steps)?;
    let psi0 = s.initial_state()?;
    let (w1, _) = s.peak_weights(&psi0)?;

    #[derive(Default)]
    struct Tally {
        branch: [u64; 2],
        localized: u64,
        jumps: u64,
        rows: Vec<(u64, usize, f64, f64, usize)>,
    }
    let tally = fold_trials(
        cfg.trials,
        Tally::default,
        |acc, i| -> Result<()> {
            let traj = engine.run_seeded(&psi0, StreamSeed::new(cfg.seed, i))?;
            let (a, b) = s.peak_weights(traj.final_state())?;
            let branch = if a >= b { 0 } else { 1 };
            acc.branch[branch] += 1;
            acc.localized += (a.max(b) >= 0.99) as u64;
            acc.jumps += traj.jumps.len() as u64;
            acc.rows.push((i, branch, a, b, traj.jumps.len()));
            Ok(())
        },
        |t, p| {
            t.branch[0] += p.branch[0];
            t.branch[1] += p.branch[1];
            t.localized += p.localized;
            t.jumps += p.jumps;
            t.rows.extend(p.rows);
        },
    )?;
    let n = cfg.trials;
    let mut report = ExperimentReport::new("grw-run", Some(cfg.seed), cfg);
    report.trials = n;
    report.observables = vec![
        counts_observable("branch", ["first", "second"], tally.branch),
        counts_observable("localized", ["yes", "no"], [tally.localized, n - tally.localized]),
    ];
    report.metric("initial_first_weight", &w1);
    report.metric("mean_jumps", &(tally.jumps as f64 / n as f64));
    report.checks = vec![
        Check::at_least("localized_fraction", tally.localized as f64 / n as f64, 0.99),
        Check::at_most("branch_sigmas", sigma_distance(tally.branch[0] as f64 / n as f64, w1, n), 3.0),
    ];
    let mut table = TrialTable::new(&["trial", "branch", "weight_first", "weight_second", "jumps"]);
    for (i, branch, a, b, jumps) in tally.rows {
        table.push(vec![
            i.to_string(),
            ["first", "second"][branch].into(),
            fmt17(a),
            fmt17(b),
            jumps.to_string(),
        ]);
    }
    report.table = Some(table);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationConfig {
    pub setup: TwoPeakSetup,
    /// Translation in sites.
    pub shift: i64,
    pub seeds: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationCovariance {
    /// Seed-matched runs without a Hamiltonian that are not bitwise translates.
    pub exact_mismatches: u64,
    /// Seed-matched runs with the kinetic term whose jump sites differ.
    pub kinetic_jump_mismatches: u64,
    /// Largest amplitude difference with the kinetic term.
    pub kinetic_max_deviation: f64,
    pub distribution: KsTwoSample,
}

fn translated(traj: &Trajectory, shift: i64) -> Result<Vec<StateVector>> {
    traj.states
        .iter()
        .map(|s| translate_state(s, 0, shift).map_err(Into::into))
        .collect()
}

/// Seed-matched and distributional checks that translating the initial state
/// translates the trajectory.
pub fn translation_covariance(cfg: &TranslationConfig) -> Result<TranslationCovariance> {
    let s = &cfg.setup;
    s.validate()?;
    let grid = s.grid()?;
    let m = s.points as i64;
    let origin = cfg.shift.rem_euclid(m) as usize;
    let psi0 = s.initial_state()?;
    let moved0 = translate_state(&psi0, 0, cfg.shift)?;
    let shape = SubsystemShape::single(s.points)?;
    let params = s.params()?;
    let steps = EvolveOptions::new(s.horizon, s.dt).steps()?;
    let options = EvolveOptions::new(s.horizon, s.dt).recording_every(steps.div_ceil(4).max(1));
    let plain = [GridAssignment::new(0, grid)];
    let shifted = [GridAssignment::new(0, grid).with_sampling_origin(origin)];
    let zero = Operator::zeros(s.points);
    let kinetic = s.hamiltonian()?;
    let engines = [
        GrwEngine::new(&shape, &zero, &params, &plain, &options)?,
        GrwEngine::new(&shape, &zero, &params, &shifted, &options)?,
        GrwEngine::new(&shape, &kinetic, &params, &plain, &options)?,
        GrwEngine::new(&shape, &kinetic, &params, &shifted, &options)?,
    ];
    let shift_index = |k: usize| ((k as i64 + cfg.shift).rem_euclid(m)) as usize;

    #[derive(Default)]
    struct Tally {
        exact: u64,
        jumps: u64,
        deviation: f64,
        original: Vec<f64>,
        moved: Vec<f64>,
    }
    let mean_offset = |psi: &StateVector, reference: f64| -> f64 {
        psi.probabilities()
            .iter()
            .enumerate()
            .map(|(q, p)| p * grid.periodic_displacement(reference, grid.coordinate(q)))
            .sum()
    };
    let reference = s.peaks[0];
    let moved_reference = reference + cfg.shift as f64 * s.spacing;
    let tally = fold_trials(
        cfg.seeds,
        Tally::default,
        |acc, i| -> Result<()> {
            let seed = StreamSeed::new(cfg.seed, i);
            let a = engines[0].run_seeded(&psi0, seed)?;
            let b = engines[1].run_seeded(&moved0, seed)?;
            let same_jumps = a.jumps.len() == b.jumps.len()
                && a.jumps.iter().zip(&b.jumps).all(|(x, y)| shift_index(x.center_index) == y.center_index);
            if !same_jumps || translated(&a, cfg.shift)? != b.states {
                acc.exact += 1;
            }
            let c = engines[2].run_seeded(&psi0, seed)?;
            let d = engines[3].run_seeded(&moved0, seed)?;
            let same_jumps = c.jumps.len() == d.jumps.len()
                && c.jumps.iter().zip(&d.jumps).all(|(x, y)| shift_index(x.center_index) == y.center_index);
            if same_jumps {
                for (x, y) in translated(&c, cfg.shift)?.iter().zip(&d.states) {
                    acc.deviation = acc.deviation.max((x.amplitudes() - y.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max));
                }
            } else {
                acc.jumps += 1;
            }
            // Independent streams for the distributional comparison.
            let e = engines[2].run_seeded(&psi0, StreamSeed::new(cfg.seed, CONTROL_STREAM + i))?;
            let f = engines[2].run_seeded(&moved0, StreamSeed::new(cfg.seed, 2 * CONTROL_STREAM + i))?;
            acc.original.push(mean_offset(e.final_state(), reference));
            acc.moved.push(mean_offset(f.final_state(), moved_reference));
            Ok(())
        },
        |t, p| {
            t.exact += p.exact;
            t.jumps += p.jumps;
            t.deviation = t.deviation.max(p.deviation);
            t.original.extend(p.original);
            t.moved.extend(p.moved);
        },
    )?;
    Ok(TranslationCovariance {
        exact_mismatches: tally.exact,
        kinetic_jump_mismatches: tally.jumps,
        kinetic_max_deviation: tally.deviation,
        distribution: ks_two_sample(&tally.original, &tally.moved, 0.01),
    })
}

/// Colorability verdict for a ray set. An uncolorable set is a successful
/// result, not an error.
pub fn run_ks_check(rays: &RaySet, source: &str) -> Result<ExperimentReport> {
    let structure = build_structure(rays);
    let cert = search_coloring(rays)?;
    let mut report = ExperimentReport::new("ks-check", None, &std::collections::BTreeMap::from([("rays", source)]));
    report.metric("rays", &rays.len());
    report.metric("pairs", &structure.pairs.len());
    report.metric("triples", &structure.triples.len());
    report.metric("verdict", &if cert.is_colorable() { "Colorable" } else { "Uncolorable" });
    report.metric("nodes_explored", &cert.nodes_explored);
    report.metric("propagation_steps", &cert.propagation_steps);
    if let Verdict::Colorable(w) = &cert.verdict {
        report.metric("witness", w);
        let valid = check_assignment(w, &structure)?.is_none();
        report.checks.push(Check::at_least("witness_valid", valid as u8 as f64, 1.0));
    }
    Ok(report)
}

/// The locality argument on an uncolorable ray set.
pub fn run_ck_trace(rays: &RaySet, source: &str) -> Result<ExperimentReport> {
    let trace = ck_argument_trace(rays)?;
    let mut report = ExperimentReport::new("ck-trace", None, &std::collections::BTreeMap::from([("rays", source)]));
    for step in &trace.steps {
        report.checks.push(Check::at_most(step.label, step.max_deviation, step.tolerance));
    }
    report.metric("trace", &trace);
    Ok(report)
}

/// Labels for the three outcomes of a triple measurement.
pub fn triple_label(outcome: TripleOutcome) -> &'static str {
    TRIPLE_LABELS[outcome.zero_axis]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::random_rotation;

    fn singlet(same: bool, trials: u64, seed: u64) -> SingletConfig {
        let b = OrthoTriple::standard();
        let a = if same {
            b
        } else {
            OrthoTriple::from_rotation(&random_rotation(&mut StreamSeed::new(99, 0).rng()))
        };
        SingletConfig { triple_a: a, triple_b: b, trials, seed }
    }

    #[test]
    fn singlet_same_triples_always_agree() {
        let r = run_singlet_spacetime(&singlet(true, 2000, 7)).unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
        assert_eq!(r.observable("axis_agreement").unwrap().frequency("agree"), Some(1.0));
        assert_eq!(r.table.as_ref().unwrap().rows.len(), 2000);
    }

    #[test]
    fn singlet_rotated_triples_keep_a_marginal() {
        let r = run_singlet_spacetime(&singlet(false, 3000, 8)).unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
        assert!(r.check("agreement_frequency").is_none());
        for o in &r.observables {
            assert!((o.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(o.frequencies.iter().all(|f| (0.0..=1.0).contains(f)));
        }
    }

    #[test]
    fn reports_are_reproducible_and_thread_independent() {
        let cfg = singlet(false, 700, 3);
        let a = run_singlet_spacetime(&cfg).unwrap().to_json();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_singlet_spacetime(&cfg).unwrap().to_json());
        assert_eq!(a, b);
        let c = run_singlet_spacetime(&SingletConfig { seed: 4, ..cfg }).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_trials_is_a_config_error() {
        let err = run_singlet_spacetime(&singlet(true, 0, 1)).unwrap_err();
        assert_eq!(err.key(), Some("trials"));
        assert_eq!(err.class(), ErrorClass::Config);
    }

    #[test]
    fn epr_pointer_selects_correlated_regions() {
        let r = run_epr_position(&EprConfig { trials: 300, seed: 11, ..EprConfig::default() }).unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
        assert_eq!(r.observable("b_region_given_a_D1").unwrap().count("D4"), Some(0));
        assert_eq!(r.observable("b_region_given_a_D3").unwrap().count("D2"), Some(0));
    }

    #[test]
    fn epr_without_coupling_matches_oracle() {
        let r = run_epr_position(&EprConfig { trials: 200, seed: 12, coupling: 0.0, ..EprConfig::default() }).unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
        assert!(r.check("oracle_b_marginal_deviation").is_some());
    }

    #[test]
    fn epr_config_validation_names_keys() {
        let close = EprConfig { regions: [0.0, 5.0, 30.0, 60.0], ..EprConfig::default() };
        assert_eq!(run_epr_position(&close).unwrap_err().key(), Some("regions"));
        let short = EprConfig { t_measure: 1.0, ..EprConfig::default() };
        assert_eq!(run_epr_position(&short).unwrap_err().key(), Some("t_measure"));
        let negative = EprConfig { lambda: -1.0, ..EprConfig::default() };
        assert_eq!(run_epr_position(&negative).unwrap_err().key(), Some("lambda"));
    }

    #[test]
    fn oracle_comparison_without_collapse_is_exact() {
        let setup = TwoPeakSetup { lambda: 0.0, ..TwoPeakSetup::default() };
        let r = run_oracle_comparison(&OracleConfig { setup, ensemble: 100, seed: 1 }).unwrap();
        let distances = r.metrics["trace_distances"].as_array().unwrap();
        assert_eq!(distances.len(), 4);
        for d in distances {
            assert!(d["distance"].as_f64().unwrap() <= 1e-8, "{d}");
        }
    }

    #[test]
    fn oracle_comparison_small_ensemble() {
        let r = run_oracle_comparison(&OracleConfig { setup: TwoPeakSetup::default(), ensemble: 1000, seed: 2 }).unwrap();
        assert_eq!(r.checks.len(), 4);
        assert!(r.all_passed(), "{:?}", r.checks);
        let err = run_oracle_comparison(&OracleConfig { setup: TwoPeakSetup::default(), ensemble: 99, seed: 2 }).unwrap_err();
        assert_eq!(err.key(), Some("k"));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        // Localization narrower than the spacing: the jump density loses mass.
        let setup = TwoPeakSetup { alpha: 4.0, ..TwoPeakSetup::default() };
        let err = run_localization(&LocalizationConfig { setup, trials: 10, seed: 0 }).unwrap_err();
        assert_eq!(err.key(), Some("alpha"));
        let grid = Grid::new(64, 1.0, 0.0).unwrap();
        let e = ScenarioError::from(GrwError::GridInadequate { sum: 0.9 });
        assert_eq!(e.class(), ErrorClass::Numerical);
        assert_eq!(ScenarioError::Invariant("x".into()).class(), ErrorClass::Invariant);
        assert!(grid.resolves(grid.default_alpha()));
    }

    #[test]
    fn localization_small_run() {
        let r = run_localization(&LocalizationConfig { trials: 200, seed: 5, ..LocalizationConfig::default() }).unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
    }

    #[test]
    fn translation_small_run() {
        let t = translation_covariance(&TranslationConfig {
            setup: TwoPeakSetup::default(),
            shift: -13,
            seeds: 100,
            seed: 9,
        })
        .unwrap();
        assert_eq!(t.exact_mismatches, 0);
        assert_eq!(t.kinetic_jump_mismatches, 0);
        assert!(t.kinetic_max_deviation < 1e-9);
    }
}
