//! Two-qubit state algebra.
//!
//! States are 4x4 complex density matrices in the fixed basis
//! `|uu>, |ud>, |du>, |dd>` (qubit A first) with `sigma_z |u> = +|u>`.
//! A state may be unnormalized: after local filtering its trace is the
//! probability that both qubits survive.

use nalgebra::{Matrix2, Matrix4, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

pub type Matrix2c = Matrix2<Complex64>;
pub type Matrix4c = Matrix4<Complex64>;

/// Maximum entrywise deviation from Hermiticity accepted by validation.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted as positive semidefinite.
pub const PSD_FLOOR: f64 = -1e-10;
/// Slack on the upper trace bound.
pub const TRACE_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StateError {
    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { min_eigenvalue: f64 },
    #[error("trace {trace} outside (0, 1]")]
    BadTrace { trace: f64 },
    #[error("non-physical R-matrix: reconstructed state has eigenvalue {min_eigenvalue:.3e}")]
    NonPhysical { min_eigenvalue: f64 },
    #[error("marginal undefined for a state with zero trace")]
    ZeroTrace,
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("fixture `{name}`: {reason}")]
    BadFixtureParams { name: String, reason: String },
    #[error("rank must be between 1 and 4, got {0}")]
    BadRank(usize),
    #[error("state file: {0}")]
    File(String),
}

/// Which of the two parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn partner(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::A => write!(f, "A"),
            Side::B => write!(f, "B"),
        }
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Pauli matrix `sigma_l`, with `sigma_0` the identity.
pub fn pauli(l: usize) -> Matrix2c {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match l {
        0 => Matrix2c::new(o, z, z, o),
        1 => Matrix2c::new(z, o, o, z),
        2 => Matrix2c::new(z, -i, i, z),
        3 => Matrix2c::new(o, z, z, -o),
        _ => panic!("Pauli index {l} out of range"),
    }
}

pub fn kron2(a: &Matrix2c, b: &Matrix2c) -> Matrix4c {
    let mut out = Matrix4c::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

fn hermitian_part(m: &Matrix4c) -> Matrix4c {
    (m + m.adjoint()).scale(0.5)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub(crate) fn hermitian_eigenvalues(m: &Matrix4c) -> [f64; 4] {
    let ev = hermitian_part(m).symmetric_eigenvalues();
    let mut out = [ev[0], ev[1], ev[2], ev[3]];
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// A real 3-vector of Pauli expectation values of one qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub components: [f64; 3],
}

impl BlochVector {
    pub const ZERO: BlochVector = BlochVector { components: [0.0; 3] };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { components: [x, y, z] }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        BlochVector::new(v[0], v[1], v[2])
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::from(self.components)
    }

    /// The single-qubit visibility `|gamma|`.
    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Normalized single-qubit density matrix `(I + gamma . sigma) / 2`.
    pub fn density_matrix(&self) -> Matrix2c {
        let mut m = pauli(0);
        for (l, g) in self.components.iter().enumerate() {
            m += pauli(l + 1).scale(*g);
        }
        m.scale(0.5)
    }
}

/// Real 4x4 Pauli-basis coefficients `R[l][l'] = Tr(rho sigma_l (x) sigma_l')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RMatrix {
    pub entries: [[f64; 4]; 4],
}

impl RMatrix {
    pub fn get(&self, l: usize, lp: usize) -> f64 {
        self.entries[l][lp]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.entries[i][j])
    }

    /// Inverse of [`TwoQubitState::r_matrix`]; rejects inputs whose
    /// reconstruction is not positive semidefinite.
    pub fn to_state(&self) -> Result<TwoQubitState, StateError> {
        from_r_matrix(self)
    }
}

/// A (possibly unnormalized) two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    matrix: Matrix4c,
}

impl TwoQubitState {
    /// Validates Hermiticity, positivity and a trace in (0, 1].
    pub fn new(matrix: Matrix4c) -> Result<Self, StateError> {
        let deviation = (matrix - matrix.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if deviation > HERMITIAN_TOL {
            return Err(StateError::NotHermitian { deviation });
        }
        let state = TwoQubitState { matrix: hermitian_part(&matrix) };
        let min_eigenvalue = state.eigenvalues()[0];
        if min_eigenvalue < PSD_FLOOR {
            return Err(StateError::NotPositive { min_eigenvalue });
        }
        let trace = state.trace();
        if !(trace > 0.0 && trace <= 1.0 + TRACE_TOL) {
            return Err(StateError::BadTrace { trace });
        }
        Ok(state)
    }

    /// Wraps a matrix produced by a trusted physical map. Only the
    /// Hermitian part is kept.
    pub(crate) fn from_matrix_unchecked(matrix: Matrix4c) -> Self {
        TwoQubitState { matrix: hermitian_part(&matrix) }
    }

    /// `|psi><psi|` for a normalized amplitude vector.
    pub fn pure(amplitudes: [Complex64; 4]) -> Result<Self, StateError> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(StateError::BadTrace { trace: 0.0 });
        }
        let psi = nalgebra::Vector4::from(amplitudes).unscale(norm);
        Self::new(psi * psi.adjoint())
    }

    pub fn product(rho_a: &Matrix2c, rho_b: &Matrix2c) -> Result<Self, StateError> {
        Self::new(kron2(rho_a, rho_b))
    }

    /// Convex (or general nonnegative) combination `sum w_i rho_i`.
    pub fn mixture(terms: &[(f64, &TwoQubitState)]) -> Result<Self, StateError> {
        let mut m = Matrix4c::zeros();
        for (w, s) in terms {
            m += s.matrix.scale(*w);
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &Matrix4c {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn normalized(&self) -> TwoQubitState {
        TwoQubitState { matrix: self.matrix.unscale(self.trace()) }
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 4] {
        hermitian_eigenvalues(&self.matrix)
    }

    pub fn r_matrix(&self) -> RMatrix {
        to_r_matrix(self)
    }

    pub fn marginal(&self, side: Side) -> Result<BlochVector, StateError> {
        marginal(self, side)
    }

    /// Reduced single-qubit density matrix (unnormalized).
    pub fn reduced(&self, side: Side) -> Matrix2c {
        let m = &self.matrix;
        let mut out = Matrix2c::zeros();
        for i in 0..2 {
            for j in 0..2 {
                out[(i, j)] = match side {
                    Side::A => m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)],
                    Side::B => m[(i, j)] + m[(2 + i, 2 + j)],
                };
            }
        }
        out
    }

    pub fn load_json(path: &Path) -> Result<Self, StateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StateError::File(format!("{}: {e}", path.display())))?;
        let file: StateFile =
            serde_json::from_str(&text).map_err(|e| StateError::File(e.to_string()))?;
        file.to_state()
    }
}

/// On-disk JSON representation of a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub matrix_re: [[f64; 4]; 4],
    pub matrix_im: [[f64; 4]; 4],
}

impl StateFile {
    pub fn from_state(state: &TwoQubitState) -> Self {
        let m = state.matrix();
        StateFile {
            matrix_re: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)].re)),
            matrix_im: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)].im)),
        }
    }

    pub fn to_state(&self) -> Result<TwoQubitState, StateError> {
        TwoQubitState::new(Matrix4c::from_fn(|i, j| {
            c(self.matrix_re[i][j], self.matrix_im[i][j])
        }))
    }
}

pub fn to_r_matrix(state: &TwoQubitState) -> RMatrix {
    let mut entries = [[0.0; 4]; 4];
    for (l, row) in entries.iter_mut().enumerate() {
        for (lp, entry) in row.iter_mut().enumerate() {
            *entry = (state.matrix() * kron2(&pauli(l), &pauli(lp))).trace().re;
        }
    }
    RMatrix { entries }
}

pub fn from_r_matrix(r: &RMatrix) -> Result<TwoQubitState, StateError> {
    let mut m = Matrix4c::zeros();
    for l in 0..4 {
        for lp in 0..4 {
            m += kron2(&pauli(l), &pauli(lp)).scale(r.entries[l][lp] / 4.0);
        }
    }
    let min_eigenvalue = hermitian_eigenvalues(&m)[0];
    if min_eigenvalue < PSD_FLOOR {
        return Err(StateError::NonPhysical { min_eigenvalue });
    }
    TwoQubitState::new(m)
}

/// Bloch vector of one side, conditioned on the state surviving:
/// `(R_l0)/R_00` for A and `(R_0l)/R_00` for B.
pub fn marginal(state: &TwoQubitState, side: Side) -> Result<BlochVector, StateError> {
    let reduced = state.reduced(side);
    let weight = reduced.trace().re;
    if weight <= 0.0 {
        return Err(StateError::ZeroTrace);
    }
    let comp = |l: usize| (reduced * pauli(l)).trace().re / weight;
    Ok(BlochVector::new(comp(1), comp(2), comp(3)))
}

/// Spin-flip concurrence of the normalized state.
///
/// The decreasing values `mu_i` are the square roots of the eigenvalues of
/// `rho rho~` with `rho~ = (Y (x) Y) rho* (Y (x) Y)`. They are taken as the
/// singular values of `sqrt(rho) sqrt(rho~)`, which avoids square-rooting
/// eigenvalues that sit at rounding level.
pub fn wootters_concurrence(state: &TwoQubitState) -> f64 {
    let rho = state.normalized();
    let sym = hermitian_part(rho.matrix());
    let eig = sym.symmetric_eigen();
    let sqrt_diag = Matrix4c::from_diagonal(&eig.eigenvalues.map(|x| {
        // eigenvalues at rounding level are treated as exact zeros
        if x < 1e-14 {
            c(0.0, 0.0)
        } else {
            c(x.sqrt(), 0.0)
        }
    }));
    let sqrt_rho = eig.eigenvectors * sqrt_diag * eig.eigenvectors.adjoint();
    let yy = kron2(&pauli(2), &pauli(2));
    let sqrt_flipped = yy * sqrt_rho.conjugate() * yy;
    let mut mus: Vec<f64> = (sqrt_rho * sqrt_flipped).singular_values().iter().copied().collect();
    mus.sort_by(|a, b| b.total_cmp(a));
    (mus[0] - mus[1] - mus[2] - mus[3]).clamp(0.0, 1.0)
}

fn haar_vector<R: Rng>(rng: &mut R) -> nalgebra::Vector4<Complex64> {
    let v = nalgebra::Vector4::from_fn(|_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let n = v.norm();
    v.unscale(n)
}

/// Reproducible random state of the given rank: a mixture of `rank`
/// Haar-random pure states with weights drawn uniformly from the simplex.
pub fn random_state(seed: u64, rank: usize) -> Result<TwoQubitState, StateError> {
    if !(1..=4).contains(&rank) {
        return Err(StateError::BadRank(rank));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..rank).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let mut m = Matrix4c::zeros();
    for w in raw {
        let psi = haar_vector(&mut rng);
        m += (psi * psi.adjoint()).scale(w / total);
    }
    let m = m.unscale(m.trace().re);
    TwoQubitState::new(hermitian_part(&m))
}

/// Random mixed single-qubit state with Bloch norm below `max_norm`.
pub fn random_qubit<R: Rng>(rng: &mut R, max_norm: f64) -> BlochVector {
    let dir = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let r = max_norm * rng.random::<f64>().cbrt();
    BlochVector::from_vector(&(dir * r))
}

/// Reproducible random product state `rho_A (x) rho_B` with both marginals
/// mixed (Bloch norms below 0.95).
pub fn random_product_state(seed: u64) -> TwoQubitState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_qubit(&mut rng, 0.95);
    let b = random_qubit(&mut rng, 0.95);
    TwoQubitState::product(&a.density_matrix(), &b.density_matrix())
        .expect("product of valid qubit states")
}

/// Named states used throughout the test suite and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FixtureSpec {
    Bell,
    Werner,
    MixedIdentity,
    RhoPrime { p: f64 },
    RhoEpsLambda { eps: f64, lambda: f64 },
    AsymptoticFig2b,
}

impl FixtureSpec {
    /// Parses a fixture name and its positional parameters.
    pub fn parse(name: &str, params: &[f64]) -> Result<Self, StateError> {
        let want = |n: usize| -> Result<(), StateError> {
            if params.len() != n {
                return Err(StateError::BadFixtureParams {
                    name: name.to_string(),
                    reason: format!("expected {n} parameter(s), got {}", params.len()),
                });
            }
            Ok(())
        };
        let spec = match name {
            "bell" => {
                want(0)?;
                FixtureSpec::Bell
            }
            "werner" => {
                want(0)?;
                FixtureSpec::Werner
            }
            "mixed_identity" => {
                want(0)?;
                FixtureSpec::MixedIdentity
            }
            "rho_prime" => {
                want(1)?;
                FixtureSpec::RhoPrime { p: params[0] }
            }
            "rho_eps_lambda" => {
                want(2)?;
                FixtureSpec::RhoEpsLambda { eps: params[0], lambda: params[1] }
            }
            "asymptotic_fig2b" => {
                want(0)?;
                FixtureSpec::AsymptoticFig2b
            }
            other => return Err(StateError::UnknownFixture(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FixtureSpec::Bell => "bell",
            FixtureSpec::Werner => "werner",
            FixtureSpec::MixedIdentity => "mixed_identity",
            FixtureSpec::RhoPrime { .. } => "rho_prime",
            FixtureSpec::RhoEpsLambda { .. } => "rho_eps_lambda",
            FixtureSpec::AsymptoticFig2b => "asymptotic_fig2b",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            FixtureSpec::RhoPrime { p } => vec![p],
            FixtureSpec::RhoEpsLambda { eps, lambda } => vec![eps, lambda],
            _ => vec![],
        }
    }

    /// Short label such as `rho_eps_lambda(0.5,0.8)`.
    pub fn label(&self) -> String {
        let params = self.params();
        if params.is_empty() {
            self.name().to_string()
        } else {
            let p: Vec<String> = params.iter().map(|x| format!("{x}")).collect();
            format!("{}({})", self.name(), p.join(","))
        }
    }

    fn validate(&self) -> Result<(), StateError> {
        let check = |label: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(StateError::BadFixtureParams {
                    name: self.name().to_string(),
                    reason: format!("{label} = {x} outside [0, 1]"),
                })
            }
        };
        match *self {
            FixtureSpec::RhoPrime { p } => check("p", p),
            FixtureSpec::RhoEpsLambda { eps, lambda } => {
                check("eps", eps)?;
                check("lambda", lambda)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateFixture {
    pub spec: FixtureSpec,
    pub state: TwoQubitState,
}

impl StateFixture {
    pub fn name(&self) -> &'static str {
        self.spec.name()
    }

    pub fn params(&self) -> Vec<f64> {
        self.spec.params()
    }
}

fn ket(amplitudes: [f64; 4]) -> nalgebra::Vector4<Complex64> {
    nalgebra::Vector4::from(amplitudes.map(|a| c(a, 0.0)))
}

fn projector(v: &nalgebra::Vector4<Complex64>) -> Matrix4c {
    v * v.adjoint()
}

fn basis_projector(i: usize) -> Matrix4c {
    let mut m = Matrix4c::zeros();
    m[(i, i)] = c(1.0, 0.0);
    m
}

/// `(|uu> + |dd>)/sqrt 2`.
pub fn bell_state() -> TwoQubitState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    TwoQubitState::new(projector(&ket([h, 0.0, 0.0, h]))).expect("valid")
}

pub fn fixture(spec: FixtureSpec) -> Result<StateFixture, StateError> {
    spec.validate()?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let bell = projector(&ket([h, 0.0, 0.0, h]));
    let identity = Matrix4c::identity().scale(0.25);
    let matrix = match spec {
        FixtureSpec::Bell => bell,
        FixtureSpec::Werner => bell.scale(2.0 / 3.0) + identity.scale(1.0 / 3.0),
        FixtureSpec::MixedIdentity => identity,
        FixtureSpec::RhoPrime { p } => {
            let mut m = bell;
            m[(0, 3)] += c((p - 1.0) / 2.0, 0.0);
            m[(3, 0)] += c((p - 1.0) / 2.0, 0.0);
            m
        }
        FixtureSpec::RhoEpsLambda { eps, lambda } => {
            let n = (1.0 + eps * eps).sqrt();
            let phi = ket([eps / n, 0.0, 0.0, 1.0 / n]);
            projector(&phi).scale(lambda)
                + (basis_projector(1) + basis_projector(2)).scale((1.0 - lambda) / 2.0)
        }
        FixtureSpec::AsymptoticFig2b => {
            // |Psi_+-> = (|du> +- |ud>)/sqrt 2
            let psi_plus = ket([0.0, h, h, 0.0]);
            let psi_minus = ket([0.0, -h, h, 0.0]);
            basis_projector(0).scale(0.5)
                + projector(&psi_plus).scale(0.4)
                + projector(&psi_minus).scale(0.1)
        }
    };
    Ok(StateFixture { spec, state: TwoQubitState::new(matrix)? })
}

/// The six states of the copy-count benchmark, in table order.
pub fn benchmark_fixtures() -> Vec<FixtureSpec> {
    vec![
        FixtureSpec::Bell,
        FixtureSpec::Werner,
        FixtureSpec::MixedIdentity,
        FixtureSpec::RhoPrime { p: 0.6 },
        FixtureSpec::RhoEpsLambda { eps: 0.9, lambda: 0.6 },
        FixtureSpec::RhoEpsLambda { eps: 0.5, lambda: 0.8 },
    ]
}
