//! Local beam-splitter operations and the alternating distillation protocol.
//!
//! Each side holds one operator `D = F(f) U(theta, phi)`: a rotation
//! followed by a filter that passes `|u>` and attenuates `|d>` by `f`.
//! Distillation alternates between the two sides. In every step the active
//! side resets its operator, measures its own Bloch vector with the partner's
//! operator in place, and installs the operator that erases that Bloch
//! vector. The fixed point has both marginals maximally mixed.

use crate::qstate::{kron2, BlochVector, Matrix2c, Side, StateError, TwoQubitState};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Marginals this close to pure are treated as non-distillable.
pub const EPS_PURE: f64 = 1e-9;
pub const DEFAULT_EXACT_THRESHOLD: f64 = 1e-8;
pub const DEFAULT_SHOT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("invalid local operation: {0}")]
    InvalidOp(String),
    #[error("state is not distillable: side {side} has a pure marginal (|gamma| = {visibility})")]
    NotDistillable { side: Side, visibility: f64 },
    #[error(
        "no convergence after {iterations} steps (V_A = {v_a:.3e}, V_B = {v_b:.3e})"
    )]
    NoConvergence { iterations: usize, v_a: f64, v_b: f64, record: Box<DistillationRecord> },
    #[error("invalid threshold {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    State(#[from] StateError),
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `F(f) = diag(1, f)`.
pub fn filter_matrix(f: f64) -> Matrix2c {
    Matrix2c::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(f, 0.0))
}

/// Beam-splitter rotation. It maps the Bloch direction
/// `(sin t cos p, sin t sin p, cos t)` onto `+z`.
pub fn rotation_matrix(theta: f64, phi: f64) -> Matrix2c {
    let (ch, sh) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    Matrix2c::new(
        c(ch, 0.0),
        Complex64::from_polar(sh, -phi),
        -Complex64::from_polar(sh, phi),
        c(ch, 0.0),
    )
}

/// Polar angles `(theta, phi)` of a unit vector, `phi` in `[0, 2 pi)`.
pub fn polar_angles(v: &nalgebra::Vector3<f64>) -> (f64, f64) {
    let theta = v[2].clamp(-1.0, 1.0).acos();
    let mut phi = v[1].atan2(v[0]);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi = 0.0;
    }
    (theta, phi)
}

/// One side's distillation setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOp {
    pub f: f64,
    pub theta: f64,
    pub phi: f64,
}

impl LocalOp {
    pub const IDENTITY: LocalOp = LocalOp { f: 1.0, theta: 0.0, phi: 0.0 };

    pub fn new(f: f64, theta: f64, phi: f64) -> Result<Self, OpticsError> {
        if !(0.0..=1.0).contains(&f) {
            return Err(OpticsError::InvalidOp(format!("f = {f} outside [0, 1]")));
        }
        if !(0.0..=PI).contains(&theta) {
            return Err(OpticsError::InvalidOp(format!("theta = {theta} outside [0, pi]")));
        }
        if !(0.0..TAU).contains(&phi) {
            return Err(OpticsError::InvalidOp(format!("phi = {phi} outside [0, 2 pi)")));
        }
        Ok(LocalOp { f, theta, phi })
    }

    pub fn filter_only(f: f64) -> Result<Self, OpticsError> {
        Self::new(f, 0.0, 0.0)
    }

    pub fn rotation(&self) -> Matrix2c {
        rotation_matrix(self.theta, self.phi)
    }

    /// `F(f) U(theta, phi)`.
    pub fn operator(&self) -> Matrix2c {
        filter_matrix(self.f) * self.rotation()
    }

    pub fn is_identity(&self) -> bool {
        self.f == 1.0 && self.theta == 0.0
    }
}

/// `(D_A (x) D_B) rho (D_A (x) D_B)^dagger`, unnormalized.
pub fn apply_local(state: &TwoQubitState, op_a: &LocalOp, op_b: &LocalOp) -> TwoQubitState {
    let d = kron2(&op_a.operator(), &op_b.operator());
    TwoQubitState::from_matrix_unchecked(d * state.matrix() * d.adjoint())
}

/// The operator that turns a qubit with Bloch vector `gamma` into a
/// maximally mixed one: rotate `gamma` onto `-z`, then filter with
/// `f = sqrt((1 - |gamma|) / (1 + |gamma|))`.
pub fn erase_marginal(gamma: &BlochVector) -> Result<LocalOp, OpticsError> {
    erase_marginal_on(gamma, Side::A)
}

fn erase_marginal_on(gamma: &BlochVector, side: Side) -> Result<LocalOp, OpticsError> {
    let g = gamma.norm();
    if !g.is_finite() || g >= 1.0 - EPS_PURE {
        return Err(OpticsError::NotDistillable { side, visibility: g });
    }
    if g == 0.0 {
        return Ok(LocalOp::IDENTITY);
    }
    let f = ((1.0 - g) / (1.0 + g)).sqrt();
    // the rotation carries its own direction to +z, so aim it at -gamma
    let target = -gamma.to_vector() / g;
    let (theta, phi) = if target[0] == 0.0 && target[1] == 0.0 && target[2] < 0.0 {
        (PI, 0.0)
    } else {
        polar_angles(&target)
    };
    Ok(LocalOp { f, theta, phi })
}

/// One row of the distillation history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index; odd steps are Alice's, even steps Bob's.
    pub k: usize,
    pub side: Side,
    /// `|gamma|` measured by the active side with its own operator reset.
    pub visibility: f64,
    pub f: f64,
    pub theta: f64,
    pub phi: f64,
    /// Survival fraction of the configuration after this step.
    pub survival: f64,
    /// Copies consumed by this step and the check that follows it.
    pub copies: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillationRecord {
    pub op_a: LocalOp,
    pub op_b: LocalOp,
    /// Number of single-side steps taken.
    pub iterations: usize,
    pub survival: f64,
    /// Visibilities of the final configuration.
    pub final_v_a: f64,
    pub final_v_b: f64,
    pub history: Vec<StepRecord>,
    /// Copies consumed by checks and steps (zero in exact mode).
    pub copies_used: u64,
}

impl DistillationRecord {
    /// Completed Alice/Bob rounds; round `k` consists of steps `2k-1` and `2k`.
    pub fn rounds(&self) -> usize {
        self.iterations.div_ceil(2)
    }

    pub fn op(&self, side: Side) -> LocalOp {
        match side {
            Side::A => self.op_a,
            Side::B => self.op_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub record: DistillationRecord,
    /// Unnormalized final state; its trace is the survival fraction.
    pub state: TwoQubitState,
}

/// Result of checking both single-qubit visibilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub v_a: f64,
    pub v_b: f64,
    pub survival: f64,
    pub copies: u64,
}

/// How the protocol learns about single-qubit interference: exactly, or
/// from sampled detector counts.
pub trait VisibilityProbe {
    type Error: From<OpticsError>;

    /// Bloch vector of `side` measured with that side's operator reset to
    /// the identity and the partner's operator in place. Returns the copies
    /// consumed.
    fn measure_marginal(
        &mut self,
        source: &TwoQubitState,
        partner_op: &LocalOp,
        side: Side,
    ) -> Result<(BlochVector, u64), Self::Error>;

    /// Both visibilities of the current configuration.
    fn check(
        &mut self,
        source: &TwoQubitState,
        op_a: &LocalOp,
        op_b: &LocalOp,
    ) -> Result<Check, Self::Error>;
}

/// Noise-free probe reading marginals straight off the density matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactProbe;

impl VisibilityProbe for ExactProbe {
    type Error = OpticsError;

    fn measure_marginal(
        &mut self,
        source: &TwoQubitState,
        partner_op: &LocalOp,
        side: Side,
    ) -> Result<(BlochVector, u64), OpticsError> {
        let probed = match side {
            Side::A => apply_local(source, &LocalOp::IDENTITY, partner_op),
            Side::B => apply_local(source, partner_op, &LocalOp::IDENTITY),
        };
        Ok((probed.marginal(side)?, 0))
    }

    fn check(
        &mut self,
        source: &TwoQubitState,
        op_a: &LocalOp,
        op_b: &LocalOp,
    ) -> Result<Check, OpticsError> {
        let current = apply_local(source, op_a, op_b);
        Ok(Check {
            v_a: current.marginal(Side::A)?.norm(),
            v_b: current.marginal(Side::B)?.norm(),
            survival: current.trace(),
            copies: 0,
        })
    }
}

/// Side active in 1-based step `k`.
pub fn side_of_step(k: usize) -> Side {
    if k % 2 == 1 {
        Side::A
    } else {
        Side::B
    }
}

/// One exact step: the operator `side` installs given the partner's.
pub fn exact_step(
    source: &TwoQubitState,
    partner_op: &LocalOp,
    side: Side,
) -> Result<(LocalOp, f64), OpticsError> {
    let (gamma, _) = ExactProbe.measure_marginal(source, partner_op, side)?;
    Ok((erase_marginal_on(&gamma, side)?, gamma.norm()))
}

/// Runs the alternating protocol with an arbitrary probe.
pub fn run_protocol<P: VisibilityProbe>(
    state: &TwoQubitState,
    threshold: f64,
    max_iters: usize,
    probe: &mut P,
) -> Result<DistillOutcome, P::Error> {
    if !(threshold > 0.0) {
        return Err(OpticsError::BadThreshold(threshold).into());
    }
    let mut op_a = LocalOp::IDENTITY;
    let mut op_b = LocalOp::IDENTITY;
    let mut history: Vec<StepRecord> = Vec::new();
    let mut copies = 0u64;
    let mut k = 0usize;
    loop {
        let check = probe.check(state, &op_a, &op_b)?;
        copies += check.copies;
        if let Some(last) = history.last_mut() {
            last.survival = check.survival;
            last.copies += check.copies;
        }
        let record = |history: Vec<StepRecord>, copies| DistillationRecord {
            op_a,
            op_b,
            iterations: k,
            survival: check.survival,
            final_v_a: check.v_a,
            final_v_b: check.v_b,
            history,
            copies_used: copies,
        };
        if check.v_a < threshold && check.v_b < threshold {
            return Ok(DistillOutcome {
                record: record(history, copies),
                state: apply_local(state, &op_a, &op_b),
            });
        }
        if k >= max_iters {
            return Err(OpticsError::NoConvergence {
                iterations: k,
                v_a: check.v_a,
                v_b: check.v_b,
                record: Box::new(record(history, copies)),
            }
            .into());
        }
        k += 1;
        let side = side_of_step(k);
        let partner = match side {
            Side::A => op_b,
            Side::B => op_a,
        };
        let (gamma, used) = probe.measure_marginal(state, &partner, side)?;
        copies += used;
        let op = erase_marginal_on(&gamma, side)?;
        match side {
            Side::A => op_a = op,
            Side::B => op_b = op,
        }
        history.push(StepRecord {
            k,
            side,
            visibility: gamma.norm(),
            f: op.f,
            theta: op.theta,
            phi: op.phi,
            survival: f64::NAN,
            copies: used,
        });
    }
}

/// Exact-mode distillation to the normal form.
pub fn distill(
    state: &TwoQubitState,
    threshold: f64,
    max_iters: usize,
) -> Result<DistillOutcome, OpticsError> {
    run_protocol(state, threshold, max_iters, &mut ExactProbe)
}

/// Operators after each of the first `steps` exact steps (index 0 is the
/// untouched configuration). Stops early only on a non-distillable marginal.
pub fn exact_schedule(
    state: &TwoQubitState,
    steps: usize,
) -> Result<Vec<(LocalOp, LocalOp)>, OpticsError> {
    let mut ops = vec![(LocalOp::IDENTITY, LocalOp::IDENTITY)];
    let (mut op_a, mut op_b) = (LocalOp::IDENTITY, LocalOp::IDENTITY);
    for k in 1..=steps {
        match side_of_step(k) {
            Side::A => op_a = exact_step(state, &op_b, Side::A)?.0,
            Side::B => op_b = exact_step(state, &op_a, Side::B)?.0,
        }
        ops.push((op_a, op_b));
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{fixture, random_product_state, random_state, FixtureSpec, Matrix4c};
    use approx::assert_abs_diff_eq;

    fn qubit_state(gamma: &BlochVector) -> Matrix2c {
        gamma.density_matrix()
    }

    // Direct 2x2 arithmetic: Bloch vector after D rho D^dagger, normalized.
    fn transformed_bloch(op: &LocalOp, gamma: &BlochVector) -> (f64, BlochVector) {
        let d = op.operator();
        let out = d * qubit_state(gamma) * d.adjoint();
        let tr = out.trace().re;
        let comp = |l| (out * crate::qstate::pauli(l)).trace().re / tr;
        (tr, BlochVector::new(comp(1), comp(2), comp(3)))
    }

    #[test]
    fn identity_ops_leave_state_unchanged() {
        let s = random_state(3, 4).unwrap();
        let out = apply_local(&s, &LocalOp::IDENTITY, &LocalOp::IDENTITY);
        assert!((out.matrix() - s.matrix()).norm() < 1e-15);
        // U(0, phi) is the identity for any phi
        let op = LocalOp::new(1.0, 0.0, 2.0).unwrap();
        let out = apply_local(&s, &op, &op);
        assert!((out.matrix() - s.matrix()).norm() < 1e-15);
    }

    #[test]
    fn full_filter_halves_identity() {
        let id = fixture(FixtureSpec::MixedIdentity).unwrap().state;
        let out = apply_local(&id, &LocalOp::filter_only(0.0).unwrap(), &LocalOp::IDENTITY);
        assert_abs_diff_eq!(out.trace(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pi_rotation_flips_qubit_a() {
        let mut m = Matrix4c::zeros();
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        let uu = TwoQubitState::new(m).unwrap();
        let out = apply_local(&uu, &LocalOp::new(1.0, PI, 0.0).unwrap(), &LocalOp::IDENTITY);
        assert_abs_diff_eq!(out.trace(), 1.0, epsilon = 1e-15);
        // |uu> -> |du> up to phase
        assert_abs_diff_eq!(out.matrix()[(2, 2)].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn erase_examples() {
        assert_eq!(erase_marginal(&BlochVector::ZERO).unwrap(), LocalOp::IDENTITY);

        let g = 0.6;
        let gamma = BlochVector::new(0.0, 0.0, -g);
        let op = erase_marginal(&gamma).unwrap();
        assert_eq!(op.theta, 0.0);
        assert_abs_diff_eq!(op.f, ((1.0 - g) / (1.0 + g)).sqrt(), epsilon = 1e-15);
        assert!(transformed_bloch(&op, &gamma).1.norm() < 1e-10);

        let gamma = BlochVector::new(g, 0.0, 0.0);
        let op = erase_marginal(&gamma).unwrap();
        // rotation alone carries +x to -z
        let rot = LocalOp { f: 1.0, ..op };
        let (_, rotated) = transformed_bloch(&rot, &gamma);
        assert_abs_diff_eq!(rotated.components[2], -g, epsilon = 1e-12);
        assert!(transformed_bloch(&op, &gamma).1.norm() < 1e-10);
    }

    #[test]
    fn erase_along_plus_z_uses_pi_rotation() {
        let op = erase_marginal(&BlochVector::new(0.0, 0.0, 0.3)).unwrap();
        assert_eq!((op.theta, op.phi), (PI, 0.0));
    }

    #[test]
    fn pure_marginal_is_not_distillable() {
        assert!(matches!(
            erase_marginal(&BlochVector::new(0.0, 1.0, 0.0)),
            Err(OpticsError::NotDistillable { .. })
        ));
    }

    #[test]
    fn werner_needs_no_distillation() {
        let w = fixture(FixtureSpec::Werner).unwrap().state;
        let out = distill(&w, DEFAULT_EXACT_THRESHOLD, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(out.record.iterations, 0);
        assert_eq!(out.record.survival, 1.0);
        assert!(out.record.op_a.is_identity() && out.record.op_b.is_identity());
    }

    #[test]
    fn pure_state_needs_one_step() {
        for seed in 0..10 {
            let s = random_state(seed, 1).unwrap();
            let out = distill(&s, DEFAULT_EXACT_THRESHOLD, DEFAULT_MAX_ITERS).unwrap();
            assert_eq!(out.record.iterations, 1, "seed {seed}");
        }
    }

    #[test]
    fn product_state_needs_two_steps() {
        for seed in 0..10 {
            let s = random_product_state(seed);
            let out = distill(&s, DEFAULT_EXACT_THRESHOLD, DEFAULT_MAX_ITERS).unwrap();
            assert_eq!(out.record.iterations, 2, "seed {seed}");
        }
    }

    #[test]
    fn asymptotic_state_does_not_converge() {
        let s = fixture(FixtureSpec::AsymptoticFig2b).unwrap().state;
        match distill(&s, DEFAULT_EXACT_THRESHOLD, 60) {
            Err(OpticsError::NoConvergence { record, .. }) => {
                let fs: Vec<f64> =
                    record.history.iter().filter(|h| h.side == Side::A).map(|h| h.f).collect();
                assert!(fs.windows(2).all(|w| w[1] < w[0]));
                assert!(*fs.last().unwrap() < 0.15);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn record_survival_matches_trace() {
        let s = random_state(11, 4).unwrap();
        let out = distill(&s, DEFAULT_EXACT_THRESHOLD, DEFAULT_MAX_ITERS).unwrap();
        assert_abs_diff_eq!(out.record.survival, out.state.trace(), epsilon = 1e-15);
        assert!(out.record.final_v_a < DEFAULT_EXACT_THRESHOLD);
        assert!(out.record.final_v_b < DEFAULT_EXACT_THRESHOLD);
        for h in &out.record.history {
            assert!(h.survival.is_finite());
        }
    }

    #[test]
    fn bad_threshold_rejected() {
        let w = fixture(FixtureSpec::Werner).unwrap().state;
        assert!(matches!(distill(&w, 0.0, 10), Err(OpticsError::BadThreshold(_))));
    }

    #[test]
    fn op_range_validation() {
        assert!(LocalOp::new(1.1, 0.0, 0.0).is_err());
        assert!(LocalOp::new(0.5, 4.0, 0.0).is_err());
        assert!(LocalOp::new(0.5, 1.0, TAU).is_err());
    }
}
