//! Exact measurement model: single counts, coincidence correlations, the
//! correlation matrix `Q'` and its singular structure, Lorentz singular
//! values, and concurrence read off the two-qubit visibilities.

use crate::jacobi::svd3;
use crate::optics::{
    apply_local, distill, exact_schedule, DistillOutcome, DistillationRecord, OpticsError,
};
use crate::qstate::{kron2, pauli, Matrix2c, Side, StateError, TwoQubitState};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Below this the third singular value is treated as zero and `q = +1`.
pub const TOL_DEGENERATE: f64 = 1e-9;
/// Largest marginal norm accepted as a distilled normal form.
pub const NORMAL_FORM_TOL: f64 = 1e-6;
/// Concurrences above `1 + CONSISTENCY_TOL` indicate inconsistent input.
pub const CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("setting vector is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("filter parameter f_{side} = {f} leaves nothing to detect")]
    ZeroFilter { side: Side, f: f64 },
    #[error("state is not in normal form (V_A = {v_a:.3e}, V_B = {v_b:.3e})")]
    NotNormalForm { v_a: f64, v_b: f64 },
    #[error("s0 = {0} must be positive")]
    NonPositiveS0(f64),
    #[error("inconsistent visibilities: concurrence {0} exceeds 1")]
    Inconsistent(f64),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

/// Detection-side rotation vectors of both parties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetSetting {
    pub v_a: [f64; 3],
    pub v_b: [f64; 3],
}

/// Unit vector `(sin t cos p, sin t sin p, cos t)`.
pub fn direction(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

impl DetSetting {
    pub fn new(v_a: Vector3<f64>, v_b: Vector3<f64>) -> Result<Self, DetectionError> {
        for v in [&v_a, &v_b] {
            let n = v.norm();
            if (n - 1.0).abs() > 1e-12 {
                return Err(DetectionError::NotUnit(n));
            }
        }
        Ok(DetSetting { v_a: v_a.into(), v_b: v_b.into() })
    }

    pub fn from_angles(theta_a: f64, phi_a: f64, theta_b: f64, phi_b: f64) -> Self {
        DetSetting { v_a: direction(theta_a, phi_a).into(), v_b: direction(theta_b, phi_b).into() }
    }

    /// Both parties along coordinate axes `i` and `j`.
    pub fn axes(i: usize, j: usize) -> Self {
        let e = |k: usize| {
            let mut v = [0.0; 3];
            v[k] = 1.0;
            v
        };
        DetSetting { v_a: e(i), v_b: e(j) }
    }

    pub fn vector(&self, side: Side) -> Vector3<f64> {
        match side {
            Side::A => Vector3::from(self.v_a),
            Side::B => Vector3::from(self.v_b),
        }
    }
}

/// Projector onto detector D1 after the rotation with vector `v`.
pub fn detector_projector(v: &Vector3<f64>) -> Matrix2c {
    let mut m = pauli(0);
    for l in 0..3 {
        m += pauli(l + 1).scale(v[l]);
    }
    m.scale(0.5)
}

/// `<n_1j (n_1jbar + n_2jbar)> = (1 + gamma_j . v) / 2`.
pub fn single_count(
    state: &TwoQubitState,
    side: Side,
    v: &Vector3<f64>,
) -> Result<f64, DetectionError> {
    let gamma = state.marginal(side)?.to_vector();
    Ok((1.0 + gamma.dot(v)) / 2.0)
}

/// Joint probabilities `P(D_iA, D_jB)` conditioned on both qubits passing
/// the filters, `i, j` in {1, 2}, evaluated as traces against projectors.
pub fn joint_probabilities(
    state: &TwoQubitState,
    setting: &DetSetting,
) -> Result<[[f64; 2]; 2], DetectionError> {
    let tr = state.trace();
    if tr <= 0.0 {
        return Err(StateError::ZeroTrace.into());
    }
    let pa = detector_projector(&setting.vector(Side::A));
    let pb = detector_projector(&setting.vector(Side::B));
    let id = pauli(0);
    let proj = |p: &Matrix2c, first: bool| if first { *p } else { id - p };
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let op = kron2(&proj(&pa, i == 0), &proj(&pb, j == 0));
            *cell = (state.matrix() * op).trace().re / tr;
        }
    }
    Ok(out)
}

/// `<dn_1A dn_1B>` from the raw joint detection probabilities.
pub fn cross_correlation_from_probabilities(
    state: &TwoQubitState,
    setting: &DetSetting,
) -> Result<f64, DetectionError> {
    let p = joint_probabilities(state, setting)?;
    Ok(p[0][0] - (p[0][0] + p[0][1]) * (p[0][0] + p[1][0]))
}

/// `<dn_1A dn_1B> = v_A Q' v_B^T / 4`.
pub fn cross_correlation(
    state: &TwoQubitState,
    setting: &DetSetting,
) -> Result<f64, DetectionError> {
    let q = q_matrix(state)?;
    Ok(quadratic_form(&q, &setting.vector(Side::A), &setting.vector(Side::B)) / 4.0)
}

pub fn quadratic_form(q: &Matrix3<f64>, v_a: &Vector3<f64>, v_b: &Vector3<f64>) -> f64 {
    v_a.dot(&(q * v_b))
}

/// `Q'_{ll'} = R_{ll'}/R_00 - R_{l0} R_{0l'} / R_00^2`, `l, l' = 1..3`.
pub fn q_matrix(state: &TwoQubitState) -> Result<Matrix3<f64>, DetectionError> {
    let r = state.r_matrix();
    let r00 = r.get(0, 0);
    if r00 <= 0.0 {
        return Err(StateError::ZeroTrace.into());
    }
    Ok(Matrix3::from_fn(|i, j| {
        r.get(i + 1, j + 1) / r00 - r.get(i + 1, 0) * r.get(0, j + 1) / (r00 * r00)
    }))
}

/// Singular structure of `Q'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDecomposition {
    pub q: [[f64; 3]; 3],
    /// Ordered `lambda_1 >= lambda_2 >= lambda_3 >= 0`.
    pub lambdas: [f64; 3],
    /// `vecs_a[l]` is the Alice setting at which the form shows `lambda_l`.
    pub vecs_a: [[f64; 3]; 3],
    pub vecs_b: [[f64; 3]; 3],
    pub q_sign: i32,
}

impl QDecomposition {
    pub fn q_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.q[i][j])
    }

    pub fn vec(&self, side: Side, l: usize) -> Vector3<f64> {
        match side {
            Side::A => Vector3::from(self.vecs_a[l]),
            Side::B => Vector3::from(self.vecs_b[l]),
        }
    }

    /// Detection setting at the `l`-th extremum.
    pub fn setting(&self, l: usize) -> DetSetting {
        DetSetting { v_a: self.vecs_a[l], v_b: self.vecs_b[l] }
    }

    /// `sum_l lambda_l v_{A,l} v_{B,l}^T`.
    pub fn reconstruct(&self) -> Matrix3<f64> {
        (0..3).fold(Matrix3::zeros(), |acc, l| {
            acc + self.vec(Side::A, l) * self.vec(Side::B, l).transpose() * self.lambdas[l]
        })
    }

    fn triad(&self, side: Side) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.vec(side, 0), self.vec(side, 1), self.vec(side, 2)])
    }

    /// `Det(v_A1, v_A2, v_A3) Det(v_B1, v_B2, v_B3)` from the stored triads.
    pub fn triad_sign(&self) -> f64 {
        self.triad(Side::A).determinant() * self.triad(Side::B).determinant()
    }
}

fn largest_component_sign(v: &Vector3<f64>) -> f64 {
    let mut best = 0usize;
    for i in 1..3 {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn decompose_q(q: &Matrix3<f64>) -> QDecomposition {
    let svd = svd3(q);
    let mut u = svd.u;
    let mut sigma = svd.sigma;
    for (i, s) in sigma.iter_mut().enumerate() {
        if *s < 0.0 {
            *s = -*s;
            u.set_column(i, &(-u.column(i)));
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let mut va: Vec<Vector3<f64>> = order.iter().map(|&i| u.column(i).into_owned()).collect();
    let mut vb: Vec<Vector3<f64>> = order.iter().map(|&i| svd.v.column(i).into_owned()).collect();
    let lambdas = [sigma[order[0]], sigma[order[1]], sigma[order[2]]];
    for l in 0..3 {
        let s = largest_component_sign(&va[l]);
        va[l] *= s;
        vb[l] *= s;
    }
    let q_sign = if lambdas[2] < TOL_DEGENERATE {
        // the third pair only matters through q * lambda_3 ~ 0
        va[2] = va[0].cross(&va[1]);
        vb[2] = vb[0].cross(&vb[1]);
        1
    } else {
        let det_a = Matrix3::from_columns(&[va[0], va[1], va[2]]).determinant();
        let det_b = Matrix3::from_columns(&[vb[0], vb[1], vb[2]]).determinant();
        if det_a * det_b < 0.0 {
            -1
        } else {
            1
        }
    };
    QDecomposition {
        q: std::array::from_fn(|i| std::array::from_fn(|j| q[(i, j)])),
        lambdas,
        vecs_a: std::array::from_fn(|l| va[l].into()),
        vecs_b: std::array::from_fn(|l| vb[l].into()),
        q_sign,
    }
}

/// Single-qubit visibilities and the three two-qubit extrema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibilities {
    pub v_a: f64,
    pub v_b: f64,
    pub v_ab: [f64; 3],
}

pub fn visibilities(state: &TwoQubitState) -> Result<Visibilities, DetectionError> {
    let v_a = state.marginal(Side::A)?.norm();
    let v_b = state.marginal(Side::B)?.norm();
    let dec = decompose_q(&q_matrix(state)?);
    Ok(Visibilities { v_a, v_b, v_ab: dec.lambdas })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzSingularValues {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    /// Carries the sign factor `q`.
    pub s3: f64,
}

impl LorentzSingularValues {
    pub fn from_parts(s0: f64, lambdas: [f64; 3], q_sign: i32) -> Self {
        LorentzSingularValues {
            s0,
            s1: s0 * lambdas[0],
            s2: s0 * lambdas[1],
            s3: q_sign as f64 * s0 * lambdas[2],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s0, self.s1, self.s2, self.s3]
    }
}

fn check_filters(f_a: f64, f_b: f64) -> Result<(), DetectionError> {
    for (side, f) in [(Side::A, f_a), (Side::B, f_b)] {
        if !(f > 0.0) {
            return Err(DetectionError::ZeroFilter { side, f });
        }
    }
    Ok(())
}

/// Lorentz singular values from a distilled normal form and the filter
/// parameters that produced it: `s0 = Tr(rho_dis) / (f_A f_B)`.
pub fn lorentz_singular_values(
    distilled: &TwoQubitState,
    f_a: f64,
    f_b: f64,
) -> Result<(LorentzSingularValues, QDecomposition), DetectionError> {
    check_filters(f_a, f_b)?;
    let v_a = distilled.marginal(Side::A)?.norm();
    let v_b = distilled.marginal(Side::B)?.norm();
    if v_a >= NORMAL_FORM_TOL || v_b >= NORMAL_FORM_TOL {
        return Err(DetectionError::NotNormalForm { v_a, v_b });
    }
    lorentz_singular_values_unchecked(distilled, f_a, f_b)
}

/// Same as [`lorentz_singular_values`] without the normal-form check; used
/// for the intermediate estimates of a running distillation.
pub fn lorentz_singular_values_unchecked(
    state: &TwoQubitState,
    f_a: f64,
    f_b: f64,
) -> Result<(LorentzSingularValues, QDecomposition), DetectionError> {
    check_filters(f_a, f_b)?;
    let dec = decompose_q(&q_matrix(state)?);
    let s0 = state.trace() / (f_a * f_b);
    Ok((LorentzSingularValues::from_parts(s0, dec.lambdas, dec.q_sign), dec))
}

/// Concurrence of the distilled state and of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concurrence {
    pub distilled: f64,
    pub initial: f64,
}

/// `s0 (-1 + lambda_1 + lambda_2 - q lambda_3) / 2` without the clip at 0.
pub fn concurrence_unclipped(s: &LorentzSingularValues) -> f64 {
    0.5 * (-s.s0 + s.s1 + s.s2 - s.s3)
}

pub fn concurrence_from_visibilities(
    s: &LorentzSingularValues,
) -> Result<Concurrence, DetectionError> {
    if !(s.s0 > 0.0) {
        return Err(DetectionError::NonPositiveS0(s.s0));
    }
    let raw = 0.5 * (-1.0 + (s.s1 + s.s2 - s.s3) / s.s0);
    let distilled = raw.max(0.0);
    let initial = s.s0 * distilled;
    for value in [distilled, initial] {
        if value > 1.0 + CONSISTENCY_TOL {
            return Err(DetectionError::Inconsistent(value));
        }
    }
    Ok(Concurrence { distilled: distilled.min(1.0), initial: initial.min(1.0) })
}

/// Full exact pipeline for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactAnalysis {
    pub record: DistillationRecord,
    pub decomposition: QDecomposition,
    pub singular_values: LorentzSingularValues,
    pub concurrence: Concurrence,
}

pub fn analyze_distilled(outcome: &DistillOutcome) -> Result<ExactAnalysis, DetectionError> {
    let record = &outcome.record;
    let (s, dec) = lorentz_singular_values(&outcome.state, record.op_a.f, record.op_b.f)?;
    Ok(ExactAnalysis {
        record: record.clone(),
        decomposition: dec,
        singular_values: s,
        concurrence: concurrence_from_visibilities(&s)?,
    })
}

/// Distill, then quantify.
pub fn analyze(
    state: &TwoQubitState,
    threshold: f64,
    max_iters: usize,
) -> Result<ExactAnalysis, DetectionError> {
    analyze_distilled(&distill(state, threshold, max_iters)?)
}

/// One point of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub round: usize,
    pub v_a: f64,
    pub v_b: f64,
    pub f_a: f64,
    pub f_b: f64,
    pub survival: f64,
    /// Concurrence of the initial state estimated from this configuration.
    pub concurrence: f64,
}

/// Exact per-step trace over the first `steps` distillation steps.
pub fn convergence_trace(
    state: &TwoQubitState,
    steps: usize,
) -> Result<Vec<TracePoint>, DetectionError> {
    let schedule = exact_schedule(state, steps)?;
    schedule
        .iter()
        .enumerate()
        .map(|(step, (op_a, op_b))| {
            let current = apply_local(state, op_a, op_b);
            let (s, _) = lorentz_singular_values_unchecked(&current, op_a.f, op_b.f)?;
            let c = concurrence_from_visibilities(&s)?;
            Ok(TracePoint {
                step,
                round: step.div_ceil(2),
                v_a: current.marginal(Side::A)?.norm(),
                v_b: current.marginal(Side::B)?.norm(),
                f_a: op_a.f,
                f_b: op_b.f,
                survival: current.trace(),
                concurrence: c.initial,
            })
        })
        .collect()
}

/// Points taken after complete rounds, i.e. at even step indices.
pub fn round_points(trace: &[TracePoint]) -> Vec<TracePoint> {
    trace.iter().filter(|p| p.step % 2 == 0).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::DEFAULT_MAX_ITERS;
    use crate::qstate::{bell_state, fixture, random_state, FixtureSpec, Matrix4c};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn diag3(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(a, b, c))
    }

    fn classical() -> TwoQubitState {
        let mut m = Matrix4c::zeros();
        m[(0, 0)] = Complex64::new(0.5, 0.0);
        m[(3, 3)] = Complex64::new(0.5, 0.0);
        TwoQubitState::new(m).unwrap()
    }

    fn up_up() -> TwoQubitState {
        let mut m = Matrix4c::zeros();
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        TwoQubitState::new(m).unwrap()
    }

    #[test]
    fn single_count_examples() {
        let id = fixture(FixtureSpec::MixedIdentity).unwrap().state;
        let v = direction(0.7, 1.3);
        assert_abs_diff_eq!(single_count(&id, Side::A, &v).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            single_count(&up_up(), Side::A, &Vector3::z()).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let w = fixture(FixtureSpec::Werner).unwrap().state;
        assert_abs_diff_eq!(single_count(&w, Side::A, &v).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cross_correlation_examples() {
        let bell = bell_state();
        let zz = DetSetting::axes(2, 2);
        assert_abs_diff_eq!(cross_correlation(&bell, &zz).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(
            cross_correlation_from_probabilities(&bell, &zz).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        let xy = DetSetting::axes(0, 1);
        assert_abs_diff_eq!(cross_correlation(&bell, &xy).unwrap(), 0.0, epsilon = 1e-12);
        let s = DetSetting::from_angles(0.4, 2.0, 1.1, 5.0);
        assert_abs_diff_eq!(cross_correlation(&up_up(), &s).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn q_matrix_examples() {
        let q = q_matrix(&bell_state()).unwrap();
        assert!((q - diag3(1.0, -1.0, 1.0)).norm() < 1e-12);
        let q = q_matrix(&classical()).unwrap();
        assert!((q - diag3(0.0, 0.0, 1.0)).norm() < 1e-12);
        let p = crate::qstate::random_product_state(4);
        assert!(q_matrix(&p).unwrap().norm() < 1e-12);
    }

    #[test]
    fn decompose_examples() {
        let d = decompose_q(&diag3(1.0, -1.0, 1.0));
        for l in d.lambdas {
            assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        }
        assert_eq!(d.q_sign, -1);

        let d = decompose_q(&Matrix3::zeros());
        assert_eq!(d.lambdas, [0.0; 3]);
        assert_eq!(d.q_sign, 1);

        let d = decompose_q(&diag3(0.9, 0.5, 0.1));
        assert_eq!(d.lambdas, [0.9, 0.5, 0.1]);
        assert_eq!(d.q_sign, 1);
    }

    #[test]
    fn decomposition_invariants_on_random_states() {
        for seed in 0..50 {
            let s = random_state(seed, 1 + (seed as usize % 4)).unwrap();
            let q = q_matrix(&s).unwrap();
            let d = decompose_q(&q);
            assert!((d.reconstruct() - q).norm() < 1e-10);
            assert!(d.lambdas[0] >= d.lambdas[1] && d.lambdas[1] >= d.lambdas[2]);
            assert!(d.lambdas[2] >= 0.0 && d.lambdas[0] <= 1.0 + 1e-10);
            assert_abs_diff_eq!(d.triad_sign(), d.q_sign as f64, epsilon = 1e-10);
            if d.lambdas[2] > TOL_DEGENERATE {
                assert_eq!(d.q_sign as f64, q.determinant().signum());
            }
            for l in 0..3 {
                let form = quadratic_form(&q, &d.vec(Side::A, l), &d.vec(Side::B, l));
                assert_abs_diff_eq!(form, d.lambdas[l], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn visibilities_examples() {
        let id = fixture(FixtureSpec::MixedIdentity).unwrap().state;
        let v = visibilities(&id).unwrap();
        assert_eq!((v.v_a, v.v_b), (0.0, 0.0));
        assert!(v.v_ab.iter().all(|&x| x.abs() < 1e-15));

        let v = visibilities(&bell_state()).unwrap();
        assert!(v.v_a < 1e-12 && v.v_b < 1e-12);
        for x in v.v_ab {
            assert_abs_diff_eq!(x, 1.0, epsilon = 1e-12);
        }

        let v = visibilities(&up_up()).unwrap();
        assert_abs_diff_eq!(v.v_a, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.v_b, 1.0, epsilon = 1e-15);
        assert!(v.v_ab.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn lorentz_examples() {
        let third = 2.0 / 3.0;
        let w = fixture(FixtureSpec::Werner).unwrap().state;
        let (s, _) = lorentz_singular_values(&w, 1.0, 1.0).unwrap();
        for (x, y) in s.as_array().iter().zip([1.0, third, third, -third]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
        let (s, _) = lorentz_singular_values(&bell_state(), 1.0, 1.0).unwrap();
        for (x, y) in s.as_array().iter().zip([1.0, 1.0, 1.0, -1.0]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
        let id = fixture(FixtureSpec::MixedIdentity).unwrap().state;
        let (s, _) = lorentz_singular_values(&id, 1.0, 1.0).unwrap();
        assert_eq!(s.as_array(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lorentz_rejects_bad_input() {
        let w = fixture(FixtureSpec::Werner).unwrap().state;
        assert!(matches!(
            lorentz_singular_values(&w, 0.0, 1.0),
            Err(DetectionError::ZeroFilter { side: Side::A, .. })
        ));
        let s = fixture(FixtureSpec::RhoEpsLambda { eps: 0.5, lambda: 0.8 }).unwrap().state;
        assert!(matches!(
            lorentz_singular_values(&s, 1.0, 1.0),
            Err(DetectionError::NotNormalForm { .. })
        ));
    }

    #[test]
    fn concurrence_examples() {
        let t = 2.0 / 3.0;
        let cases = [
            ([1.0, 1.0, 1.0, -1.0], 1.0),
            ([1.0, t, t, -t], 0.5),
            ([1.0, 1.0, 0.0, 0.0], 0.0),
        ];
        for (s, want) in cases {
            let s = LorentzSingularValues { s0: s[0], s1: s[1], s2: s[2], s3: s[3] };
            let c = concurrence_from_visibilities(&s).unwrap();
            assert_abs_diff_eq!(c.distilled, want, epsilon = 1e-12);
            assert_abs_diff_eq!(c.initial, want, epsilon = 1e-12);
        }
        // classically correlated state: oracle agrees on zero
        assert_eq!(crate::qstate::wootters_concurrence(&classical()), 0.0);
    }

    #[test]
    fn concurrence_errors() {
        let s = LorentzSingularValues { s0: 0.0, s1: 0.0, s2: 0.0, s3: 0.0 };
        assert!(matches!(
            concurrence_from_visibilities(&s),
            Err(DetectionError::NonPositiveS0(_))
        ));
        let s = LorentzSingularValues { s0: 1.0, s1: 1.5, s2: 1.5, s3: -1.5 };
        assert!(matches!(
            concurrence_from_visibilities(&s),
            Err(DetectionError::Inconsistent(_))
        ));
    }

    #[test]
    fn singular_values_match_direct_svd_of_scaled_r() {
        for seed in 0..20 {
            let s = random_state(seed + 100, 4).unwrap();
            let a = analyze(&s, 1e-10, DEFAULT_MAX_ITERS).unwrap();
            let f_ab = a.record.op_a.f * a.record.op_b.f;
            let outcome = distill(&s, 1e-10, DEFAULT_MAX_ITERS).unwrap();
            let r = outcome.state.r_matrix().to_matrix() / f_ab;
            let mut direct: Vec<f64> = r.svd(false, false).singular_values.iter().copied().collect();
            direct.sort_by(|a, b| b.total_cmp(a));
            let mut ours: Vec<f64> = a.singular_values.as_array().iter().map(|x| x.abs()).collect();
            ours.sort_by(|a, b| b.total_cmp(a));
            for (x, y) in ours.iter().zip(&direct) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }
}
