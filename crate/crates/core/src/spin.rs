//! Spin-1 squared-spin measurements and the two-particle spin-0 state.
//!
//! Spin matrices use `ħ = 1` in the `S_z` basis ordered `(+1, 0, −1)`. For an
//! orthogonal triple the three operators `S²_x, S²_y, S²_z` commute and sum to
//! `2·I`; their joint eigenbasis is spanned by the `0`-eigenkets of the three
//! components, so a joint measurement reports which axis carries the `0`.

use nalgebra::{DVector, Rotation3, Unit, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::hilbert::{
    apply_on_subsystem, hermitian_eig, HilbertError, Operator, StateVector, SubsystemShape, C64,
    SPECTRAL_TOL,
};

/// Orthogonality and handedness tolerance for triples.
pub const TRIPLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpinError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("direction must be a finite non-zero vector")]
    DegenerateDirection,
    #[error("axes {0} and {1} are not orthogonal (dot {2:e})")]
    NotOrthogonal(usize, usize, f64),
    #[error("subsystem {0} is not a spin-1 factor")]
    NotSpinOne(usize),
    #[error("outcome probabilities sum to {0}, not 1")]
    ProbabilityLeak(f64),
}

pub type Result<T> = std::result::Result<T, SpinError>;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// A unit 3-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Serialize for Direction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.0.x, self.0.y, self.0.z].serialize(s)
    }
}

impl Direction {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::from_vector(Vector3::new(x, y, z))
    }

    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(SpinError::DegenerateDirection);
        }
        Ok(Self(v / n))
    }

    /// Polar angle `theta` from `+z`, azimuth `phi` from `+x`.
    pub fn spherical(theta: f64, phi: f64) -> Self {
        Self(Vector3::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        ))
    }

    pub fn x() -> Self {
        Self(Vector3::x())
    }

    pub fn y() -> Self {
        Self(Vector3::y())
    }

    pub fn z() -> Self {
        Self(Vector3::z())
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            if let Ok(d) = Self::from_vector(v) {
                return d;
            }
        }
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn rotated(&self, r: &Rotation3<f64>) -> Self {
        Self(r * self.0)
    }
}

/// Three mutually orthogonal directions forming a right-handed frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrthoTriple {
    axes: [Direction; 3],
}

impl OrthoTriple {
    /// Left-handed inputs are mirrored by flipping the third axis; squared
    /// spins are even under `n → −n`, so the measurement is unchanged.
    pub fn new(x: Direction, y: Direction, z: Direction) -> Result<Self> {
        let axes = [x, y, z];
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let d = axes[i].dot(&axes[j]);
            if d.abs() > TRIPLE_TOL {
                return Err(SpinError::NotOrthogonal(i, j, d));
            }
        }
        let det = x.0.cross(&y.0).dot(&z.0);
        let z = if det < 0.0 { Direction(-z.0) } else { z };
        Ok(Self { axes: [x, y, z] })
    }

    pub fn standard() -> Self {
        Self {
            axes: [Direction::x(), Direction::y(), Direction::z()],
        }
    }

    /// The standard frame turned by roll about `x`, then pitch about `y`,
    /// then yaw about `z` (radians).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::from_rotation(&Rotation3::from_euler_angles(roll, pitch, yaw))
    }

    /// The columns of `r`.
    pub fn from_rotation(r: &Rotation3<f64>) -> Self {
        Self::standard().rotated(r)
    }

    /// Uniformly random frame (Haar measure on SO(3)).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_rotation(&random_rotation(rng))
    }

    /// A frame whose first axis is `n`, completed deterministically.
    pub fn containing(n: Direction) -> Self {
        let v = n.0;
        let helper = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let second = (helper - v * v.dot(&helper)).normalize();
        let third = v.cross(&second);
        Self {
            axes: [n, Direction(second), Direction(third)],
        }
    }

    pub fn axes(&self) -> &[Direction; 3] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> Direction {
        self.axes[i]
    }

    pub fn rotated(&self, r: &Rotation3<f64>) -> Self {
        Self {
            axes: self.axes.map(|a| a.rotated(r)),
        }
    }

    /// Index of the axis parallel (or antiparallel) to `n`, if any.
    pub fn position_of(&self, n: &Direction) -> Option<usize> {
        self.axes
            .iter()
            .position(|a| (a.dot(n).abs() - 1.0).abs() <= TRIPLE_TOL)
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3<f64> {
    loop {
        let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if q.norm() > 1e-9 {
            let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
            return uq.to_rotation_matrix();
        }
    }
}

/// Outcome of a joint triple measurement: the axis that reported `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TripleOutcome {
    pub zero_axis: usize,
}

impl TripleOutcome {
    pub fn new(zero_axis: usize) -> Self {
        assert!(zero_axis < 3, "a triple has three axes");
        Self { zero_axis }
    }

    /// Values of `S²` on the three axes: one `0` and two `1`.
    pub fn values(&self) -> [u8; 3] {
        let mut v = [1; 3];
        v[self.zero_axis] = 0;
        v
    }

    pub fn label(&self) -> String {
        let v = self.values();
        format!("{}{}{}", v[0], v[1], v[2])
    }
}

/// `(S_x, S_y, S_z)` for spin 1 with `ħ = 1`.
pub fn spin_matrices() -> [Operator; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let i = C64::new(0.0, r);
    let z = c(0.0);
    let sx = nalgebra::DMatrix::from_row_slice(3, 3, &[z, c(r), z, c(r), z, c(r), z, c(r), z]);
    let sy = nalgebra::DMatrix::from_row_slice(3, 3, &[z, -i, z, i, z, -i, z, i, z]);
    let sz = nalgebra::DMatrix::from_row_slice(3, 3, &[c(1.0), z, z, z, z, z, z, z, c(-1.0)]);
    [sx, sy, sz].map(|m| Operator::new(m).expect("square"))
}

/// `n·S`.
pub fn spin_component(n: &Direction) -> Operator {
    let [sx, sy, sz] = spin_matrices();
    let v = n.vector();
    Operator::new(
        sx.matrix() * c(v.x) + sy.matrix() * c(v.y) + sz.matrix() * c(v.z),
    )
    .expect("square")
}

/// `(n·S)²`: spectrum `(0, 1, 1)`.
pub fn squared_spin(n: &Direction) -> Operator {
    let s = spin_component(n);
    &s * &s
}

/// The normalized ket with `n·S = 0`.
///
/// In the Cartesian basis `|x⟩ = (−|+1⟩ + |−1⟩)/√2`, `|y⟩ = i(|+1⟩ + |−1⟩)/√2`,
/// `|z⟩ = |0⟩` this is just `n_x|x⟩ + n_y|y⟩ + n_z|z⟩`.
pub fn zero_ket(n: &Direction) -> DVector<C64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let v = n.vector();
    DVector::from_vec(vec![
        C64::new(-v.x * r, v.y * r),
        c(v.z),
        C64::new(v.x * r, v.y * r),
    ])
}

/// `exp(−iθ u·S)` for the rotation `R(u, θ)`.
pub fn rotation_operator(r: &Rotation3<f64>) -> Operator {
    match r.axis_angle() {
        None => Operator::identity(3),
        Some((axis, angle)) => {
            let n = Direction(axis.into_inner());
            hermitian_eig(&spin_component(&n))
                .expect("spin component is Hermitian")
                .propagator(angle)
        }
    }
}

fn projector(ket: &DVector<C64>) -> Operator {
    Operator::new(ket * ket.adjoint()).expect("square")
}

fn check_spin_factor(psi: &StateVector, particle: usize) -> Result<()> {
    psi.shape().check_index(particle)?;
    if psi.shape().dims()[particle] != 3 {
        return Err(SpinError::NotSpinOne(particle));
    }
    Ok(())
}

/// Born probabilities that axis `i` of `triple` reports `0` on `particle`.
pub fn triple_probabilities(psi: &StateVector, particle: usize, triple: &OrthoTriple) -> Result<[f64; 3]> {
    check_spin_factor(psi, particle)?;
    let mut probs = [0.0; 3];
    for (i, axis) in triple.axes.iter().enumerate() {
        let projected = apply_on_subsystem(&projector(&zero_ket(axis)), particle, psi)?;
        probs[i] = projected.norm().powi(2);
    }
    Ok(probs)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if acc > target {
            return i;
        }
    }
    last
}

fn collapse(psi: &StateVector, particle: usize, triple: &OrthoTriple, outcome: TripleOutcome) -> Result<StateVector> {
    let ket = zero_ket(&triple.axes[outcome.zero_axis]);
    Ok(apply_on_subsystem(&projector(&ket), particle, psi)?.normalize()?)
}

/// Projective joint measurement of `S²` along the three axes of `triple`
/// on the spin-1 factor `particle`.
pub fn triple_measurement<R: Rng + ?Sized>(
    psi: &StateVector,
    particle: usize,
    triple: &OrthoTriple,
    rng: &mut R,
) -> Result<(TripleOutcome, StateVector)> {
    let probs = triple_probabilities(psi, particle, triple)?;
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SPECTRAL_TOL {
        return Err(SpinError::ProbabilityLeak(total));
    }
    let outcome = TripleOutcome::new(sample_index(&probs, rng));
    let post = collapse(psi, particle, triple, outcome)?;
    Ok((outcome, post))
}

/// The two-particle state of total spin 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SingletState(StateVector);

impl SingletState {
    /// `(|+1⟩|−1⟩ + |−1⟩|+1⟩ − |0⟩|0⟩)/√3` in the `S_z` basis.
    pub fn new() -> Self {
        Self::along(&Direction::z())
    }

    /// The same expansion written with the `n·S` eigenkets `U(R)|m⟩`, where
    /// `R` carries `z` onto `n`.
    pub fn along(n: &Direction) -> Self {
        let r = Rotation3::rotation_between(&Vector3::z(), n.vector())
            .unwrap_or_else(|| Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::x()), std::f64::consts::PI));
        let u = rotation_operator(&r);
        let ket = |m: usize| u.matrix().column(m).into_owned();
        let (plus, zero, minus) = (ket(0), ket(1), ket(2));
        let s = 1.0 / 3f64.sqrt();
        let amps = (plus.kronecker(&minus) + minus.kronecker(&plus) - zero.kronecker(&zero)).scale(s);
        let shape = SubsystemShape::new(vec![3, 3]).expect("valid shape");
        Self(StateVector::new(shape, amps).expect("dimension 9"))
    }

    pub fn state(&self) -> &StateVector {
        &self.0
    }
}

impl Default for SingletState {
    fn default() -> Self {
        Self::new()
    }
}

/// Probability that wing `a` reports `0` on axis `i` and wing `b` on axis `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointTable(pub [[f64; 3]; 3]);

impl JointTable {
    pub fn marginal_a(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.0[i].iter().sum())
    }

    pub fn marginal_b(&self) -> [f64; 3] {
        [0, 1, 2].map(|j| (0..3).map(|i| self.0[i][j]).sum())
    }

    /// Mass on outcome pairs that differ on at least one axis.
    pub fn disagreement(&self) -> f64 {
        (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| self.0[i][j])
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (self.0[i][j] - other.0[i][j]).abs())
            .fold(0.0, f64::max)
    }
}

/// Exact joint table of simultaneous triple measurements on factors 0 and 1.
pub fn joint_table(psi: &StateVector, triple_a: &OrthoTriple, triple_b: &OrthoTriple) -> Result<JointTable> {
    check_spin_factor(psi, 0)?;
    check_spin_factor(psi, 1)?;
    let mut t = [[0.0; 3]; 3];
    for (i, a) in triple_a.axes.iter().enumerate() {
        let pa = apply_on_subsystem(&projector(&zero_ket(a)), 0, psi)?;
        for (j, b) in triple_b.axes.iter().enumerate() {
            t[i][j] = apply_on_subsystem(&projector(&zero_ket(b)), 1, &pa)?.norm().powi(2);
        }
    }
    Ok(JointTable(t))
}

/// Which wing is measured first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Order {
    AThenB,
    BThenA,
}

/// Joint table built as `P(first)·P(second | collapsed state)`.
pub fn sequential_table(
    psi: &StateVector,
    triple_a: &OrthoTriple,
    triple_b: &OrthoTriple,
    order: Order,
) -> Result<JointTable> {
    let (first, first_triple, second, second_triple) = match order {
        Order::AThenB => (0, triple_a, 1, triple_b),
        Order::BThenA => (1, triple_b, 0, triple_a),
    };
    let p_first = triple_probabilities(psi, first, first_triple)?;
    let mut t = [[0.0; 3]; 3];
    for (i, &p) in p_first.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let post = collapse(psi, first, first_triple, TripleOutcome::new(i))?;
        let p_second = triple_probabilities(&post, second, second_triple)?;
        for (j, &q) in p_second.iter().enumerate() {
            match order {
                Order::AThenB => t[i][j] = p * q,
                Order::BThenA => t[j][i] = p * q,
            }
        }
    }
    Ok(JointTable(t))
}

/// Result of a measurement on the singlet, `a` optional.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMeasurement {
    pub a: Option<TripleOutcome>,
    pub b: TripleOutcome,
    pub post: StateVector,
}

/// Measures `triple_a` on particle `a` (if given) and then `triple_b` on
/// particle `b`, each on the state collapsed by the previous measurement.
pub fn singlet_joint_measure<R: Rng + ?Sized>(
    triple_a: Option<&OrthoTriple>,
    triple_b: &OrthoTriple,
    rng: &mut R,
) -> Result<JointMeasurement> {
    let mut psi = SingletState::new().0;
    let mut a = None;
    if let Some(ta) = triple_a {
        let (out, post) = triple_measurement(&psi, 0, ta, rng)?;
        a = Some(out);
        psi = post;
    }
    let (b, post) = triple_measurement(&psi, 1, triple_b, rng)?;
    Ok(JointMeasurement { a, b, post })
}

/// Law of a single `S²` outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryLaw {
    pub one: f64,
    pub zero: f64,
}

impl BinaryLaw {
    fn from_zero(zero: f64) -> Self {
        Self { one: 1.0 - zero, zero }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.one - other.one).abs().max((self.zero - other.zero).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParameterIndependence {
    /// Largest difference between the two `b` marginals.
    pub deviation: f64,
    pub b_without_a: BinaryLaw,
    pub b_with_nonselective_a: BinaryLaw,
    /// Law of `S²` at `a` on each axis of the `a` triple.
    pub a_axis_laws: [BinaryLaw; 3],
}

/// Compares `P(S²_{b:n})` with no measurement at `a` against the value after a
/// non-selective triple measurement at `a`, both from exact tables.
pub fn parameter_independence_check(triple_a: &OrthoTriple, n: &Direction) -> Result<ParameterIndependence> {
    let psi = SingletState::new().0;
    let pn = projector(&zero_ket(n));
    let without = apply_on_subsystem(&pn, 1, &psi)?.norm().powi(2);
    let mut with = 0.0;
    let mut a_zero = [0.0; 3];
    for (i, axis) in triple_a.axes.iter().enumerate() {
        let branch = apply_on_subsystem(&projector(&zero_ket(axis)), 0, &psi)?;
        a_zero[i] = branch.norm().powi(2);
        with += apply_on_subsystem(&pn, 1, &branch)?.norm().powi(2);
    }
    let b_without_a = BinaryLaw::from_zero(without);
    let b_with_nonselective_a = BinaryLaw::from_zero(with);
    Ok(ParameterIndependence {
        deviation: b_without_a.max_abs_diff(&b_with_nonselective_a),
        b_without_a,
        b_with_nonselective_a,
        a_axis_laws: a_zero.map(BinaryLaw::from_zero),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeDependence {
    /// `joint[a][b]` for values `a, b ∈ {0, 1}` of `S²_n` on both wings.
    pub joint: [[f64; 2]; 2],
    pub unconditional_b: BinaryLaw,
    pub b_given_a_one: BinaryLaw,
    pub b_given_a_zero: BinaryLaw,
}

impl OutcomeDependence {
    /// `P(1, 1) − P_a(1)·P_b(1)`; zero under outcome independence.
    pub fn factorization_gap(&self) -> f64 {
        let pa1 = self.joint[1][0] + self.joint[1][1];
        let pb1 = self.joint[0][1] + self.joint[1][1];
        self.joint[1][1] - pa1 * pb1
    }
}

/// Exact conditional laws of `S²_{b:n}` given `S²_{a:n}` on the singlet.
pub fn outcome_independence_check(n: &Direction) -> Result<OutcomeDependence> {
    let psi = SingletState::new().0;
    let p0 = projector(&zero_ket(n));
    let p1 = Operator::new(Operator::identity(3).matrix() - p0.matrix()).expect("square");
    let ops = [&p0, &p1];
    let mut joint = [[0.0; 2]; 2];
    for (va, pa) in ops.iter().enumerate() {
        let branch = apply_on_subsystem(pa, 0, &psi)?;
        for (vb, pb) in ops.iter().enumerate() {
            joint[va][vb] = apply_on_subsystem(pb, 1, &branch)?.norm().powi(2);
        }
    }
    let conditional = |va: usize| {
        let pa = joint[va][0] + joint[va][1];
        BinaryLaw {
            zero: joint[va][0] / pa,
            one: joint[va][1] / pa,
        }
    };
    Ok(OutcomeDependence {
        joint,
        unconditional_b: BinaryLaw {
            zero: joint[0][0] + joint[1][0],
            one: joint[0][1] + joint[1][1],
        },
        b_given_a_one: conditional(1),
        b_given_a_zero: conditional(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{max_abs_diff, partial_trace, tensor_product, DensityMatrix, ALGEBRAIC_TOL};
    use crate::rng::StreamSeed;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn identity3() -> DMatrix<C64> {
        DMatrix::identity(3, 3)
    }

    #[test]
    fn sz_is_diagonal() {
        let [_, _, sz] = spin_matrices();
        assert_eq!(sz, Operator::from_real_diagonal(&[1.0, 0.0, -1.0]));
    }

    #[test]
    fn casimir_is_two() {
        let [sx, sy, sz] = spin_matrices();
        let sum = (&sx * &sx).matrix() + (&sy * &sy).matrix() + (&sz * &sz).matrix();
        assert!(max_abs_diff(&sum, &identity3().scale(2.0)) < ALGEBRAIC_TOL);
    }

    #[test]
    fn angular_momentum_algebra() {
        let [sx, sy, sz] = spin_matrices();
        let comm = |a: &Operator, b: &Operator| (a * b).matrix() - (b * a).matrix();
        let i = C64::new(0.0, 1.0);
        assert!(max_abs_diff(&comm(&sx, &sy), &(sz.matrix() * i)) < ALGEBRAIC_TOL);
        assert!(max_abs_diff(&comm(&sy, &sz), &(sx.matrix() * i)) < ALGEBRAIC_TOL);
        assert!(max_abs_diff(&comm(&sz, &sx), &(sy.matrix() * i)) < ALGEBRAIC_TOL);
    }

    #[test]
    fn squared_components_commute() {
        let [sx, sy, sz] = spin_matrices();
        let (x2, y2, z2) = (&sx * &sx, &sy * &sy, &sz * &sz);
        for (a, b) in [(&x2, &y2), (&y2, &z2), (&x2, &z2)] {
            let comm = (a * b).matrix() - (b * a).matrix();
            assert!(comm.iter().all(|z| z.norm() < ALGEBRAIC_TOL));
        }
    }

    #[test]
    fn squared_spin_along_z() {
        assert_eq!(squared_spin(&Direction::z()), Operator::from_real_diagonal(&[1.0, 0.0, 1.0]));
    }

    #[test]
    fn zero_ket_agrees_with_eigensolver() {
        let mut rng = StreamSeed::new(5, 0).rng();
        for _ in 0..50 {
            let n = Direction::random(&mut rng);
            let eig = hermitian_eig(&squared_spin(&n)).unwrap();
            assert!(eig.values[0].abs() < 1e-10);
            let overlap = eig.vector(0).dotc(&zero_ket(&n)).norm();
            assert!((overlap - 1.0).abs() < 1e-10);
            let residual = spin_component(&n).matrix() * zero_ket(&n);
            assert!(residual.norm() < ALGEBRAIC_TOL);
        }
    }

    #[test]
    fn triple_validation_and_handedness() {
        let (x, y, z) = (Direction::x(), Direction::y(), Direction::z());
        assert!(matches!(
            OrthoTriple::new(x, Direction::new(1.0, 1.0, 0.0).unwrap(), z),
            Err(SpinError::NotOrthogonal(0, 1, _))
        ));
        let mirrored = OrthoTriple::new(x, y, Direction::new(0.0, 0.0, -1.0).unwrap()).unwrap();
        assert_eq!(mirrored, OrthoTriple::standard());
        let t = OrthoTriple::containing(Direction::new(1.0, 2.0, -0.5).unwrap());
        let [a, b, cc] = *t.axes();
        assert!(a.dot(&b).abs() < TRIPLE_TOL && a.dot(&cc).abs() < TRIPLE_TOL && b.dot(&cc).abs() < TRIPLE_TOL);
        assert!((a.vector().cross(b.vector()).dot(cc.vector()) - 1.0).abs() < TRIPLE_TOL);
        assert_eq!(Direction::new(0.0, 0.0, 0.0), Err(SpinError::DegenerateDirection));
    }

    #[test]
    fn eigenstate_gives_certain_outcome() {
        let mut rng = StreamSeed::new(8, 0).rng();
        for _ in 0..20 {
            let t = OrthoTriple::random(&mut rng);
            let psi = StateVector::new(SubsystemShape::single(3).unwrap(), zero_ket(&t.axis(1))).unwrap();
            let probs = triple_probabilities(&psi, 0, &t).unwrap();
            assert!((probs[1] - 1.0).abs() < 1e-12);
            let (out, post) = triple_measurement(&psi, 0, &t, &mut rng).unwrap();
            assert_eq!(out.values(), [1, 0, 1]);
            assert!((post.fidelity(&psi).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_preparation_gives_thirds() {
        // Identity/3 sampled as a uniform mixture over the S_z basis.
        let runs = 10_000;
        let t = OrthoTriple::random(&mut StreamSeed::new(1, 99).rng());
        let mut counts = [0usize; 3];
        for i in 0..runs {
            let mut rng = StreamSeed::new(12, i).rng();
            let basis = rand::Rng::random_range(&mut rng, 0..3);
            let psi = StateVector::basis(SubsystemShape::single(3).unwrap(), basis).unwrap();
            let (out, _) = triple_measurement(&psi, 0, &t, &mut rng).unwrap();
            counts[out.zero_axis] += 1;
        }
        let sigma = (1.0 / 3.0 * 2.0 / 3.0 / runs as f64).sqrt();
        for k in counts {
            assert!((k as f64 / runs as f64 - 1.0 / 3.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn singlet_b_marginal_is_two_thirds() {
        let psi = SingletState::new();
        let mut rng = StreamSeed::new(2, 0).rng();
        for _ in 0..10 {
            let probs = triple_probabilities(psi.state(), 1, &OrthoTriple::random(&mut rng)).unwrap();
            for p in probs {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singlet_reduced_state_is_maximally_mixed() {
        let rho = DensityMatrix::from_pure(SingletState::new().state());
        let red = partial_trace(&rho, &[1]).unwrap();
        assert!(max_abs_diff(red.matrix(), &identity3().unscale(3.0)) < ALGEBRAIC_TOL);
    }

    #[test]
    fn singlet_has_total_spin_zero() {
        let psi = SingletState::new();
        let id = Operator::identity(3);
        for s in spin_matrices() {
            let total = Operator::new(s.kron(&id).matrix() + id.kron(&s).matrix()).unwrap();
            assert!(total.apply(psi.state()).unwrap().norm() < ALGEBRAIC_TOL);
        }
    }

    #[test]
    fn singlet_is_basis_independent() {
        let reference = SingletState::new();
        let mut rng = StreamSeed::new(3, 0).rng();
        for _ in 0..20 {
            let n = Direction::random(&mut rng);
            let along = SingletState::along(&n);
            assert!((along.state().fidelity(reference.state()).unwrap() - 1.0).abs() < 1e-12);
            let diff = (along.state().amplitudes() - reference.state().amplitudes()).norm();
            assert!(diff < 1e-12, "global phase or amplitude mismatch {diff}");
            let u = rotation_operator(&random_rotation(&mut rng));
            let uu = u.kron(&u);
            let rotated = uu.apply(reference.state()).unwrap();
            assert!((rotated.fidelity(reference.state()).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_triples_agree() {
        let mut rng = StreamSeed::new(4, 0).rng();
        let t = OrthoTriple::random(&mut rng);
        for _ in 0..500 {
            let m = singlet_joint_measure(Some(&t), &t, &mut rng).unwrap();
            assert_eq!(m.a, Some(m.b));
        }
        let table = joint_table(SingletState::new().state(), &t, &t).unwrap();
        assert!(table.disagreement() < 1e-12);
    }

    #[test]
    fn collapse_to_product_of_zero_kets() {
        let mut rng = StreamSeed::new(6, 0).rng();
        let t = OrthoTriple::random(&mut rng);
        for _ in 0..50 {
            let m = singlet_joint_measure(Some(&t), &t, &mut rng).unwrap();
            let k = t.axis(m.b.zero_axis);
            let shape = SubsystemShape::single(3).unwrap();
            let ket = StateVector::new(shape, zero_ket(&k)).unwrap();
            let product = tensor_product(&ket, &ket).unwrap();
            assert!((m.post.fidelity(&product).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn measurement_order_does_not_matter() {
        let mut rng = StreamSeed::new(7, 0).rng();
        let psi = SingletState::new();
        for _ in 0..20 {
            let (ta, tb) = (OrthoTriple::random(&mut rng), OrthoTriple::random(&mut rng));
            let ab = sequential_table(psi.state(), &ta, &tb, Order::AThenB).unwrap();
            let ba = sequential_table(psi.state(), &ta, &tb, Order::BThenA).unwrap();
            let direct = joint_table(psi.state(), &ta, &tb).unwrap();
            assert!(ab.max_abs_diff(&ba) < 1e-12);
            assert!(ab.max_abs_diff(&direct) < 1e-12);
        }
    }

    #[test]
    fn parameter_independence_holds() {
        let mut rng = StreamSeed::new(9, 0).rng();
        for _ in 0..20 {
            let ta = OrthoTriple::random(&mut rng);
            let n = Direction::random(&mut rng);
            let pi = parameter_independence_check(&ta, &n).unwrap();
            assert!(pi.deviation <= 1e-12);
            for law in pi.a_axis_laws {
                assert!((law.one - 2.0 / 3.0).abs() < 1e-12 && (law.zero - 1.0 / 3.0).abs() < 1e-12);
            }
            // Shared axis.
            let shared = OrthoTriple::containing(n);
            assert!(parameter_independence_check(&shared, &n).unwrap().deviation <= 1e-12);
        }
    }

    #[test]
    fn outcome_dependence_is_perfect() {
        let n = Direction::new(0.3, -0.4, 0.8).unwrap();
        let od = outcome_independence_check(&n).unwrap();
        assert!((od.b_given_a_one.one - 1.0).abs() < 1e-12);
        assert!((od.b_given_a_zero.zero - 1.0).abs() < 1e-12);
        assert!((od.unconditional_b.one - 2.0 / 3.0).abs() < 1e-12);
        assert!((od.joint[1][1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((od.factorization_gap() - (2.0 / 3.0 - 4.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn measurement_requires_spin_factor() {
        let psi = StateVector::basis(SubsystemShape::new(vec![2, 3]).unwrap(), 0).unwrap();
        let err = triple_probabilities(&psi, 0, &OrthoTriple::standard()).unwrap_err();
        assert_eq!(err, SpinError::NotSpinOne(0));
    }

    #[test]
    fn unnormalized_state_is_rejected() {
        let shape = SubsystemShape::single(3).unwrap();
        let psi = StateVector::from_vec(shape, vec![c(1.0), c(1.0), c(0.0)]).unwrap();
        let err = triple_measurement(&psi, 0, &OrthoTriple::standard(), &mut StreamSeed::new(0, 0).rng());
        assert!(matches!(err, Err(SpinError::ProbabilityLeak(_))));
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation3<f64>> {
        any::<u64>().prop_map(|s| random_rotation(&mut StreamSeed::new(s, 0).rng()))
    }

    fn arb_direction() -> impl Strategy<Value = Direction> {
        (0.0f64..std::f64::consts::PI, 0.0f64..std::f64::consts::TAU).prop_map(|(t, p)| Direction::spherical(t, p))
    }

    proptest! {
        #[test]
        fn squared_spin_spectrum(n in arb_direction()) {
            let eig = hermitian_eig(&squared_spin(&n)).unwrap();
            for (v, e) in eig.values.iter().zip([0.0, 1.0, 1.0]) {
                prop_assert!((v - e).abs() < 1e-10);
            }
        }

        #[test]
        fn sum_rule_on_every_triple(r in arb_rotation()) {
            let t = OrthoTriple::from_rotation(&r);
            let sum = t.axes().iter().map(squared_spin).fold(DMatrix::zeros(3, 3), |acc, s| acc + s.matrix());
            prop_assert!(max_abs_diff(&sum, &identity3().scale(2.0)) < 1e-10);
        }

        #[test]
        fn rotation_covariance(r in arb_rotation(), n in arb_direction()) {
            let u = rotation_operator(&r);
            let conjugated = u.matrix() * squared_spin(&n).matrix() * u.matrix().adjoint();
            prop_assert!(max_abs_diff(&conjugated, squared_spin(&n.rotated(&r)).matrix()) < 1e-9);
        }

        #[test]
        fn singlet_isotropy(r in arb_rotation(), s1 in any::<u64>()) {
            let mut rng = StreamSeed::new(s1, 1).rng();
            let (ta, tb) = (OrthoTriple::random(&mut rng), OrthoTriple::random(&mut rng));
            let psi = SingletState::new();
            let base = joint_table(psi.state(), &ta, &tb).unwrap();
            let turned = joint_table(psi.state(), &ta.rotated(&r), &tb.rotated(&r)).unwrap();
            prop_assert!(base.max_abs_diff(&turned) < 1e-9);
        }
    }
}
