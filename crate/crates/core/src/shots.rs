//! Finite-statistics simulation of the concentrator.
//!
//! Every injected copy ends in one of nine joint outcomes
//! `(D1A | D2A | D3A) x (D1B | D2B | D3B)`, where `D3` is the port that
//! collects the part removed by the filter. Visibilities, the correlation
//! matrix and the survival fraction are all estimated from these tallies.

use crate::detection::{decompose_q, DetSetting, DetectionError, QDecomposition};
use crate::optics::{
    filter_matrix, polar_angles, rotation_matrix, run_protocol, Check, DistillationRecord,
    LocalOp, OpticsError, VisibilityProbe, DEFAULT_SHOT_THRESHOLD,
};
use crate::qstate::{BlochVector, Matrix2c, Side, StateError, TwoQubitState};
use nalgebra::{Rotation3, Unit, Vector3};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SHOTS_GAMMA: u64 = 800;
pub const DEFAULT_SHOTS_Q: u64 = 500;
pub const DEFAULT_SHOTS_LAMBDA: u64 = 4000;
pub const DEFAULT_TARGET_HALFWIDTH: f64 = 0.01;
pub const DEFAULT_MAX_STEPS: usize = 200;
pub const MIN_REPLICATIONS: usize = 30;
/// Largest per-setting shot count visited by the copy-budget search.
pub const DEFAULT_SHOT_CAP: u64 = 1 << 20;
/// First point of the geometric search grid.
const GRID_START: f64 = 100.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ShotError {
    #[error("invalid shot plan: {0}")]
    BadPlan(String),
    #[error("all {0} injected copies were filtered out")]
    NoSurvivors(u64),
    #[error("at least {MIN_REPLICATIONS} replications are required, got {0}")]
    TooFewReplications(usize),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// ChaCha8 generator addressed by `(seed, stream)`; the pair fixes the
/// whole draw sequence.
#[derive(Debug, Clone)]
pub struct ShotRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl ShotRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        ShotRng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for ShotRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Outcome index on one side: 0 = D1, 1 = D2, 2 = D3 (filtered out).
pub const D1: usize = 0;
pub const D2: usize = 1;
pub const D3: usize = 2;

/// Tally of one or more sampling runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShotLedger {
    /// Copies injected (M).
    pub injected: u64,
    /// Copies ending in neither D3A nor D3B (N).
    pub survived: u64,
    /// `counts[a][b]` for Alice's outcome `a` and Bob's outcome `b`.
    pub counts: [[u64; 3]; 3],
    pub seed: u64,
}

impl ShotLedger {
    pub fn from_counts(counts: [[u64; 3]; 3], seed: u64) -> Self {
        let injected = counts.iter().flatten().sum();
        let survived = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| counts[a][b]).sum();
        ShotLedger { injected, survived, counts, seed }
    }

    /// `sum(counts) == M` and `N` equals the four surviving cells.
    pub fn is_consistent(&self) -> bool {
        *self == ShotLedger::from_counts(self.counts, self.seed)
    }

    /// Combines two tallies. Associative and commutative; keeps the smaller seed.
    pub fn merge(&self, other: &ShotLedger) -> ShotLedger {
        let mut counts = self.counts;
        for (row, other_row) in counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(other_row) {
                *c += o;
            }
        }
        ShotLedger::from_counts(counts, self.seed.min(other.seed))
    }

    /// `N / M`.
    pub fn survival_fraction(&self) -> f64 {
        if self.injected == 0 {
            return 0.0;
        }
        self.survived as f64 / self.injected as f64
    }

    fn require_survivors(&self) -> Result<f64, ShotError> {
        if self.survived == 0 {
            return Err(ShotError::NoSurvivors(self.injected));
        }
        Ok(self.survived as f64)
    }

    /// Fraction of survivors that fired D1 on `side`.
    pub fn d1_fraction(&self, side: Side) -> Result<f64, ShotError> {
        let n = self.require_survivors()?;
        let hits = match side {
            Side::A => self.counts[D1][D1] + self.counts[D1][D2],
            Side::B => self.counts[D1][D1] + self.counts[D2][D1],
        };
        Ok(hits as f64 / n)
    }

    /// Empirical `<dn_1A dn_1B>` over the survivors.
    pub fn correlation(&self) -> Result<f64, ShotError> {
        let n = self.require_survivors()?;
        let p11 = self.counts[D1][D1] as f64 / n;
        Ok(p11 - self.d1_fraction(Side::A)? * self.d1_fraction(Side::B)?)
    }

    /// Sampling variance of [`ShotLedger::correlation`] (delta method).
    pub fn correlation_variance(&self) -> Result<f64, ShotError> {
        let n = self.require_survivors()?;
        let pa = self.d1_fraction(Side::A)?;
        let pb = self.d1_fraction(Side::B)?;
        let cov = self.correlation()?;
        let mut m4 = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let x = if a == D1 { 1.0 } else { 0.0 } - pa;
                let y = if b == D1 { 1.0 } else { 0.0 } - pb;
                m4 += self.counts[a][b] as f64 / n * x * x * y * y;
            }
        }
        Ok(((m4 - cov * cov) / n).max(0.0))
    }
}

/// Copy allocation of a shot-mode run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotPlan {
    pub shots_per_gamma_setting: u64,
    pub shots_per_q_setting: u64,
    pub shots_per_lambda_setting: u64,
    pub distill_threshold: f64,
    pub target_halfwidth: f64,
    pub max_steps: usize,
}

impl Default for ShotPlan {
    fn default() -> Self {
        ShotPlan {
            shots_per_gamma_setting: DEFAULT_SHOTS_GAMMA,
            shots_per_q_setting: DEFAULT_SHOTS_Q,
            shots_per_lambda_setting: DEFAULT_SHOTS_LAMBDA,
            distill_threshold: DEFAULT_SHOT_THRESHOLD,
            target_halfwidth: DEFAULT_TARGET_HALFWIDTH,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl ShotPlan {
    /// Default plan with the given quantification shots.
    pub fn with_quantification(shots_q: u64, shots_lambda: u64) -> Self {
        ShotPlan { shots_per_q_setting: shots_q, shots_per_lambda_setting: shots_lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ShotError> {
        let shots = [
            ("shots_per_gamma_setting", self.shots_per_gamma_setting),
            ("shots_per_q_setting", self.shots_per_q_setting),
            ("shots_per_lambda_setting", self.shots_per_lambda_setting),
        ];
        for (name, value) in shots {
            if value == 0 {
                return Err(ShotError::BadPlan(format!("{name} must be positive")));
            }
        }
        if !(self.distill_threshold > 0.0 && self.distill_threshold <= 1.0) {
            return Err(ShotError::BadPlan(format!(
                "distill_threshold = {} outside (0, 1]",
                self.distill_threshold
            )));
        }
        if !(self.target_halfwidth > 0.0) {
            return Err(ShotError::BadPlan(format!(
                "target_halfwidth = {} must be positive",
                self.target_halfwidth
            )));
        }
        Ok(())
    }

    /// Copies spent on quantification: nine `Q'` settings and three maxima.
    pub fn quantification_copies(&self) -> u64 {
        9 * self.shots_per_q_setting + 3 * self.shots_per_lambda_setting
    }
}

/// Amplitude rows `<out| K` of the three outcomes on one side.
fn outcome_rows(op: &LocalOp, v: &Vector3<f64>) -> [[Complex64; 2]; 3] {
    let (theta, phi) = polar_angles(v);
    let u_dis = op.rotation();
    let m: Matrix2c = rotation_matrix(theta, phi) * filter_matrix(op.f) * u_dis;
    let lost = (1.0 - op.f * op.f).max(0.0).sqrt();
    [
        [m[(0, 0)], m[(0, 1)]],
        [m[(1, 0)], m[(1, 1)]],
        [u_dis[(1, 0)] * lost, u_dis[(1, 1)] * lost],
    ]
}

/// Exact probabilities of the nine joint outcomes for a normalized copy.
pub fn outcome_probabilities(
    state: &TwoQubitState,
    op_a: &LocalOp,
    op_b: &LocalOp,
    setting: &DetSetting,
) -> Result<[[f64; 3]; 3], ShotError> {
    let tr = state.trace();
    if !(tr > 0.0) {
        return Err(StateError::ZeroTrace.into());
    }
    let rows_a = outcome_rows(op_a, &setting.vector(Side::A));
    let rows_b = outcome_rows(op_b, &setting.vector(Side::B));
    let rho = state.matrix();
    let mut probs = [[0.0; 3]; 3];
    let mut total = 0.0;
    for (a, ra) in rows_a.iter().enumerate() {
        for (b, rb) in rows_b.iter().enumerate() {
            let amp = [ra[0] * rb[0], ra[0] * rb[1], ra[1] * rb[0], ra[1] * rb[1]];
            let mut p = Complex64::new(0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    p += amp[i] * rho[(i, j)] * amp[j].conj();
                }
            }
            let p = (p.re / tr).max(0.0);
            probs[a][b] = p;
            total += p;
        }
    }
    for p in probs.iter_mut().flatten() {
        *p /= total;
    }
    Ok(probs)
}

/// Multinomial draw by sequential conditional binomials.
fn multinomial<R: RngCore>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = left;
            break;
        }
        let cond = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let x = Binomial::new(left, cond).expect("probability in [0, 1]").sample(rng);
        out[i] = x;
        left -= x;
        mass -= p;
    }
    out
}

/// Sends `n_copies` copies through both interferometers at `setting`.
pub fn sample_copies(
    state: &TwoQubitState,
    op_a: &LocalOp,
    op_b: &LocalOp,
    setting: &DetSetting,
    n_copies: u64,
    rng: &mut ShotRng,
) -> Result<ShotLedger, ShotError> {
    if n_copies == 0 {
        return Err(ShotError::BadPlan("n_copies must be positive".into()));
    }
    let probs = outcome_probabilities(state, op_a, op_b, setting)?;
    let flat: Vec<f64> = probs.iter().flatten().copied().collect();
    let drawn = multinomial(n_copies, &flat, rng);
    let mut counts = [[0u64; 3]; 3];
    for (k, c) in drawn.into_iter().enumerate() {
        counts[k / 3][k % 3] = c;
    }
    Ok(ShotLedger::from_counts(counts, rng.seed()))
}

/// Estimates the Bloch vector of `side` from single counts at the three axis
/// settings. Returns the estimate and the merged tally.
pub fn estimate_gamma(
    state: &TwoQubitState,
    op_a: &LocalOp,
    op_b: &LocalOp,
    side: Side,
    shots_per_setting: u64,
    rng: &mut ShotRng,
) -> Result<(BlochVector, ShotLedger), ShotError> {
    let mut comps = [0.0; 3];
    let mut ledger = ShotLedger { seed: rng.seed(), ..Default::default() };
    for (i, comp) in comps.iter_mut().enumerate() {
        let run = sample_copies(state, op_a, op_b, &DetSetting::axes(i, i), shots_per_setting, rng)?;
        *comp = 2.0 * run.d1_fraction(side)? - 1.0;
        ledger = ledger.merge(&run);
    }
    Ok((BlochVector::new(comps[0], comps[1], comps[2]), ledger))
}

/// Both Bloch vectors from the same three runs at `(x,x)`, `(y,y)`, `(z,z)`.
pub fn estimate_gammas(
    state: &TwoQubitState,
    op_a: &LocalOp,
    op_b: &LocalOp,
    shots_per_setting: u64,
    rng: &mut ShotRng,
) -> Result<(BlochVector, BlochVector, ShotLedger), ShotError> {
    let mut ga = [0.0; 3];
    let mut gb = [0.0; 3];
    let mut ledger = ShotLedger { seed: rng.seed(), ..Default::default() };
    for i in 0..3 {
        let run = sample_copies(state, op_a, op_b, &DetSetting::axes(i, i), shots_per_setting, rng)?;
        ga[i] = 2.0 * run.d1_fraction(Side::A)? - 1.0;
        gb[i] = 2.0 * run.d1_fraction(Side::B)? - 1.0;
        ledger = ledger.merge(&run);
    }
    Ok((BlochVector::new(ga[0], ga[1], ga[2]), BlochVector::new(gb[0], gb[1], gb[2]), ledger))
}

/// Visibility probe backed by sampled counts.
pub struct ShotProbe<'a> {
    pub shots_per_setting: u64,
    pub rng: &'a mut ShotRng,
    pub ledger: ShotLedger,
}

impl<'a> ShotProbe<'a> {
    pub fn new(shots_per_setting: u64, rng: &'a mut ShotRng) -> Self {
        let seed = rng.seed();
        ShotProbe { shots_per_setting, rng, ledger: ShotLedger { seed, ..Default::default() } }
    }
}

impl VisibilityProbe for ShotProbe<'_> {
    type Error = ShotError;

    fn measure_marginal(
        &mut self,
        source: &TwoQubitState,
        partner_op: &LocalOp,
        side: Side,
    ) -> Result<(BlochVector, u64), ShotError> {
        let (op_a, op_b) = match side {
            Side::A => (LocalOp::IDENTITY, *partner_op),
            Side::B => (*partner_op, LocalOp::IDENTITY),
        };
        let (gamma, ledger) =
            estimate_gamma(source, &op_a, &op_b, side, self.shots_per_setting, self.rng)?;
        self.ledger = self.ledger.merge(&ledger);
        Ok((gamma, ledger.injected))
    }

    fn check(
        &mut self,
        source: &TwoQubitState,
        op_a: &LocalOp,
        op_b: &LocalOp,
    ) -> Result<Check, ShotError> {
        let (ga, gb, ledger) = estimate_gammas(source, op_a, op_b, self.shots_per_setting, self.rng)?;
        self.ledger = self.ledger.merge(&ledger);
        Ok(Check {
            v_a: ga.norm(),
            v_b: gb.norm(),
            survival: ledger.survival_fraction(),
            copies: ledger.injected,
        })
    }
}

/// Outcome of the noisy distillation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyDistillation {
    pub record: DistillationRecord,
    pub ledger: ShotLedger,
}

fn distill_stage(
    state: &TwoQubitState,
    plan: &ShotPlan,
    rng: &mut ShotRng,
) -> Result<NoisyDistillation, ShotError> {
    plan.validate()?;
    let mut probe = ShotProbe::new(plan.shots_per_gamma_setting, rng);
    let outcome = run_protocol(state, plan.distill_threshold, plan.max_steps, &mut probe)?;
    Ok(NoisyDistillation { record: outcome.record, ledger: probe.ledger })
}

/// The alternating protocol with every Bloch vector estimated from counts.
pub fn noisy_distill(
    state: &TwoQubitState,
    plan: &ShotPlan,
    rng: &mut ShotRng,
) -> Result<DistillationRecord, ShotError> {
    distill_stage(state, plan, rng).map(|d| d.record)
}

/// Rotates `v` by `delta` about a fixed axis perpendicular to it.
pub fn perturb_direction(v: &Vector3<f64>, delta: f64) -> Vector3<f64> {
    let mut least = 0;
    for i in 1..3 {
        if v[i].abs() < v[least].abs() {
            least = i;
        }
    }
    let axis = Unit::new_normalize(v.cross(&Vector3::ith(least, 1.0)));
    Rotation3::from_axis_angle(&axis, delta) * v
}

/// Copy of `dec` with every extremum direction rotated by `delta`.
pub fn perturb_decomposition(dec: &QDecomposition, delta: f64) -> QDecomposition {
    let mut out = dec.clone();
    for l in 0..3 {
        out.vecs_a[l] = perturb_direction(&dec.vec(Side::A, l), delta).into();
        out.vecs_b[l] = perturb_direction(&dec.vec(Side::B, l), delta).into();
    }
    out
}

/// Shot-mode concurrence estimate with its copy accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrenceEstimate {
    /// `max(0, unclipped)`.
    pub concurrence: f64,
    /// `s0 (-1 + lambda_1 + lambda_2 - q lambda_3) / 2`.
    pub unclipped: f64,
    pub stderr: f64,
    pub lambdas: [f64; 3],
    pub q_sign: i32,
    pub s0: f64,
    /// `N / M` over the quantification runs.
    pub survival: f64,
    pub k_dis: usize,
    pub final_v_a: f64,
    pub final_v_b: f64,
    pub op_a: LocalOp,
    pub op_b: LocalOp,
    pub copies_distill: u64,
    pub copies_quant: u64,
    pub total_copies: u64,
    pub seed: u64,
    pub stream: u64,
}

fn quantify(
    state: &TwoQubitState,
    stage: &NoisyDistillation,
    plan: &ShotPlan,
    rng: &mut ShotRng,
    perturb: Option<f64>,
) -> Result<ConcurrenceEstimate, ShotError> {
    let (op_a, op_b) = (stage.record.op_a, stage.record.op_b);
    let mut ledger = ShotLedger { seed: rng.seed(), ..Default::default() };

    let mut q_hat = nalgebra::Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let setting = DetSetting::axes(i, j);
            let run = sample_copies(state, &op_a, &op_b, &setting, plan.shots_per_q_setting, rng)?;
            q_hat[(i, j)] = 4.0 * run.correlation()?;
            ledger = ledger.merge(&run);
        }
    }
    let mut dec = decompose_q(&q_hat);
    if let Some(delta) = perturb {
        dec = perturb_decomposition(&dec, delta);
    }

    let mut lambdas = [0.0; 3];
    let mut lambda_vars = [0.0; 3];
    for l in 0..3 {
        let run = sample_copies(state, &op_a, &op_b, &dec.setting(l), plan.shots_per_lambda_setting, rng)?;
        lambdas[l] = 4.0 * run.correlation()?;
        lambda_vars[l] = 16.0 * run.correlation_variance()?;
        ledger = ledger.merge(&run);
    }

    let survival = ledger.survival_fraction();
    let ff = op_a.f * op_b.f;
    if !(ff > 0.0) {
        return Err(DetectionError::ZeroFilter { side: if op_a.f > 0.0 { Side::B } else { Side::A }, f: 0.0 }.into());
    }
    let s0 = survival / ff;
    let q = dec.q_sign as f64;
    let c_dis = 0.5 * (-1.0 + lambdas[0] + lambdas[1] - q * lambdas[2]);
    let unclipped = s0 * c_dis;
    let s0_var = survival * (1.0 - survival) / ledger.injected as f64 / (ff * ff);
    let var = (s0 / 2.0).powi(2) * lambda_vars.iter().sum::<f64>() + c_dis * c_dis * s0_var;

    let copies_distill = stage.record.copies_used;
    let copies_quant = ledger.injected;
    Ok(ConcurrenceEstimate {
        concurrence: unclipped.max(0.0),
        unclipped,
        stderr: var.sqrt(),
        lambdas,
        q_sign: dec.q_sign,
        s0,
        survival,
        k_dis: stage.record.iterations,
        final_v_a: stage.record.final_v_a,
        final_v_b: stage.record.final_v_b,
        op_a,
        op_b,
        copies_distill,
        copies_quant,
        total_copies: copies_distill + copies_quant,
        seed: rng.seed(),
        stream: rng.stream(),
    })
}

/// Noisy distillation followed by the twelve-setting quantification.
pub fn estimate_concurrence(
    state: &TwoQubitState,
    plan: &ShotPlan,
    rng: &mut ShotRng,
) -> Result<ConcurrenceEstimate, ShotError> {
    let stage = distill_stage(state, plan, rng)?;
    quantify(state, &stage, plan, rng, None)
}

/// As [`estimate_concurrence`], with every measured extremum direction
/// rotated by `delta` before the maxima are measured.
pub fn estimate_concurrence_perturbed(
    state: &TwoQubitState,
    plan: &ShotPlan,
    rng: &mut ShotRng,
    delta: f64,
) -> Result<ConcurrenceEstimate, ShotError> {
    let stage = distill_stage(state, plan, rng)?;
    quantify(state, &stage, plan, rng, Some(delta))
}

/// Settings of the copy-budget search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub target_halfwidth: f64,
    pub replications: usize,
    pub seed: u64,
    pub shot_cap: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            target_halfwidth: DEFAULT_TARGET_HALFWIDTH,
            replications: MIN_REPLICATIONS,
            seed: 1,
            shot_cap: DEFAULT_SHOT_CAP,
        }
    }
}

/// Cheapest plan found by [`min_copies_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub plan: ShotPlan,
    /// Mean distillation copies plus the quantification copies, rounded.
    pub total_copies: u64,
    pub mean_copies_distill: f64,
    pub copies_quant: u64,
    /// Most frequent number of distillation steps (smallest on ties).
    pub k_dis: usize,
    /// `(k, replications)` pairs, ascending in `k`.
    pub k_dis_histogram: Vec<(usize, usize)>,
    pub mean_concurrence: f64,
    pub std_concurrence: f64,
    pub mean_survival: f64,
    pub replications: usize,
    /// No grid point reached the target within the shot cap; the
    /// largest plan evaluated is reported instead.
    pub capped: bool,
}

/// Geometric grid `100 * 2^(i/2)` up to `cap`.
pub fn shot_grid(cap: u64) -> Vec<u64> {
    (0..)
        .map(|i| (GRID_START * 2f64.powf(i as f64 / 2.0)).round() as u64)
        .take_while(|&s| s <= cap)
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Evaluation {
    mean_c: f64,
    std_c: f64,
    mean_survival: f64,
}

/// Smallest total copy count whose concurrence estimates scatter by at most
/// the target half-width across replications. Replication `r` always draws
/// from stream `r`, so every grid point sees the same distillation runs.
pub fn min_copies_search(
    state: &TwoQubitState,
    base: &ShotPlan,
    config: &SearchConfig,
) -> Result<SearchOutcome, ShotError> {
    base.validate()?;
    if config.replications < MIN_REPLICATIONS {
        return Err(ShotError::TooFewReplications(config.replications));
    }
    if !(config.target_halfwidth > 0.0) {
        return Err(ShotError::BadPlan(format!(
            "target_halfwidth = {} must be positive",
            config.target_halfwidth
        )));
    }
    let grid = shot_grid(config.shot_cap);
    if grid.is_empty() {
        return Err(ShotError::BadPlan(format!("shot cap {} below the grid start", config.shot_cap)));
    }

    let mut stages = Vec::with_capacity(config.replications);
    for r in 0..config.replications {
        let mut rng = ShotRng::new(config.seed, r as u64);
        let stage = distill_stage(state, base, &mut rng)?;
        stages.push((stage, rng));
    }
    let mean_distill =
        stages.iter().map(|(s, _)| s.record.copies_used as f64).sum::<f64>() / stages.len() as f64;

    let evaluate = |shots_q: u64, shots_lambda: u64| -> Result<Evaluation, ShotError> {
        let plan = ShotPlan { shots_per_q_setting: shots_q, shots_per_lambda_setting: shots_lambda, ..*base };
        let mut cs = Vec::with_capacity(stages.len());
        let mut surv = 0.0;
        for (stage, rng) in &stages {
            let mut rng = rng.clone();
            let est = quantify(state, stage, &plan, &mut rng, None)?;
            cs.push(est.unclipped);
            surv += est.survival;
        }
        let (mean_c, std_c) = mean_std(&cs);
        Ok(Evaluation { mean_c, std_c, mean_survival: surv / stages.len() as f64 })
    };

    let total_of = |q: u64, l: u64| mean_distill + (9 * q + 3 * l) as f64;
    let mut best: Option<(u64, u64, Evaluation)> = None;
    for &q in &grid {
        if let Some((bq, bl, _)) = &best {
            if total_of(q, grid[0]) >= total_of(*bq, *bl) {
                break;
            }
        }
        for &l in &grid {
            if let Some((bq, bl, _)) = &best {
                if total_of(q, l) >= total_of(*bq, *bl) {
                    break;
                }
            }
            let eval = evaluate(q, l)?;
            if eval.std_c <= config.target_halfwidth {
                best = Some((q, l, eval));
                break;
            }
        }
    }
    let capped = best.is_none();
    let (q, l, eval) = match best {
        Some(b) => b,
        None => {
            let top = *grid.last().expect("non-empty grid");
            (top, top, evaluate(top, top)?)
        }
    };

    let mut hist: Vec<(usize, usize)> = Vec::new();
    let mut ks: Vec<usize> = stages.iter().map(|(s, _)| s.record.iterations).collect();
    ks.sort_unstable();
    for k in ks {
        match hist.last_mut() {
            Some((last, n)) if *last == k => *n += 1,
            _ => hist.push((k, 1)),
        }
    }
    let k_dis = hist.iter().fold((0, 0), |acc, &(k, n)| if n > acc.1 { (k, n) } else { acc }).0;
    let plan = ShotPlan { shots_per_q_setting: q, shots_per_lambda_setting: l, ..*base };
    Ok(SearchOutcome {
        plan,
        total_copies: total_of(q, l).round() as u64,
        mean_copies_distill: mean_distill,
        copies_quant: plan.quantification_copies(),
        k_dis,
        k_dis_histogram: hist,
        mean_concurrence: eval.mean_c,
        std_concurrence: eval.std_c,
        mean_survival: eval.mean_survival,
        replications: config.replications,
        capped,
    })
}
