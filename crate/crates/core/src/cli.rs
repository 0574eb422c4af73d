//! Command-line harness: argument parsing, report types and writers.
//!
//! Every command builds a serializable report that embeds the configuration
//! it was produced from, so a run can be replayed from its own output.

use crate::detection::{
    concurrence_from_visibilities, convergence_trace, lorentz_singular_values_unchecked,
    DetectionError, LorentzSingularValues, TracePoint,
};
use crate::optics::{
    distill, DistillationRecord, OpticsError, DEFAULT_EXACT_THRESHOLD, DEFAULT_MAX_ITERS,
    DEFAULT_SHOT_THRESHOLD,
};
use crate::qstate::{
    fixture, random_product_state, random_state, wootters_concurrence, FixtureSpec, Side,
    StateError, TwoQubitState,
};
use crate::shots::{
    estimate_concurrence, min_copies_search, ConcurrenceEstimate, SearchConfig, ShotError,
    ShotPlan, ShotRng, DEFAULT_MAX_STEPS, DEFAULT_SHOTS_GAMMA, DEFAULT_SHOTS_LAMBDA,
    DEFAULT_SHOTS_Q, DEFAULT_SHOT_CAP, DEFAULT_TARGET_HALFWIDTH, MIN_REPLICATIONS,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_NOT_DISTILLABLE: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;
pub const EXIT_BUDGET_CAP: i32 = 5;

const DEFAULT_TRACE_STEPS: usize = 60;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Shot(#[from] ShotError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::State(_) => EXIT_INVALID_INPUT,
            CliError::Shot(ShotError::BadPlan(_) | ShotError::TooFewReplications(_)) => {
                EXIT_INVALID_INPUT
            }
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qconc", version, about = "Distill and quantify two-qubit entanglement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact distillation and quantification with a convergence trace.
    Exact(ExactArgs),
    /// Shot-based estimate of the concurrence.
    Estimate(EstimateArgs),
    /// Minimum copy counts for the six benchmark states.
    Table1(Table1Args),
    /// Random states through the exact pipeline against the spin-flip formula.
    Sweep(SweepArgs),
    /// Spin-flip concurrence only.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StateArgs {
    /// Named state: bell, werner, mixed_identity, rho_prime, rho_eps_lambda, asymptotic_fig2b.
    #[arg(long, conflicts_with = "state", required_unless_present = "state")]
    pub fixture: Option<String>,
    /// Comma-separated fixture parameters.
    #[arg(long, value_delimiter = ',', requires = "fixture")]
    pub params: Vec<f64>,
    /// JSON file with `matrix_re` and `matrix_im`.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long, default_value_t = DEFAULT_EXACT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Steps included in the convergence trace.
    #[arg(long, default_value_t = DEFAULT_TRACE_STEPS)]
    pub trace_steps: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long, default_value_t = DEFAULT_SHOTS_GAMMA)]
    pub shots_gamma: u64,
    /// Defaults to the benchmark allocation for benchmark fixtures.
    #[arg(long)]
    pub shots_q: Option<u64>,
    #[arg(long)]
    pub shots_lambda: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_SHOT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct Table1Args {
    /// Run a single row, e.g. `werner` or `rho_eps_lambda(0.5,0.8)`.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, default_value_t = MIN_REPLICATIONS)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SHOTS_GAMMA)]
    pub shots_gamma: u64,
    #[arg(long, default_value_t = DEFAULT_SHOT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_TARGET_HALFWIDTH)]
    pub target: f64,
    #[arg(long, default_value_t = DEFAULT_SHOT_CAP)]
    pub shot_cap: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_iters: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 200)]
    pub n_states: usize,
    /// Rank of the random mixtures (1 gives pure states).
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    /// Random product states instead of mixtures.
    #[arg(long, conflicts_with = "rank")]
    pub product: bool,
    /// State `i` is drawn with seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EXACT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Shots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    Fixture(FixtureSpec),
    File(PathBuf),
}

impl StateSource {
    pub fn from_args(args: &StateArgs) -> Result<Self, CliError> {
        match (&args.fixture, &args.state) {
            (Some(name), None) => Ok(StateSource::Fixture(FixtureSpec::parse(name, &args.params)?)),
            (None, Some(path)) => Ok(StateSource::File(path.clone())),
            _ => Err(CliError::Invalid("exactly one of --fixture and --state is required".into())),
        }
    }

    pub fn load(&self) -> Result<TwoQubitState, CliError> {
        Ok(match self {
            StateSource::Fixture(spec) => fixture(*spec)?.state,
            StateSource::File(path) => TwoQubitState::load_json(path)?,
        })
    }

    pub fn label(&self) -> String {
        match self {
            StateSource::Fixture(spec) => spec.label(),
            StateSource::File(path) => path.display().to_string(),
        }
    }
}

/// Everything that determines a single-state run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub state_source: StateSource,
    pub seed: Option<u64>,
    pub plan: Option<ShotPlan>,
    pub threshold: f64,
    pub max_iters: usize,
    pub format: Format,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.threshold > 0.0) {
            return Err(CliError::Invalid(format!("threshold {} must be positive", self.threshold)));
        }
        match (self.mode, &self.plan) {
            (Mode::Shots, None) => Err(CliError::Invalid("shot mode requires a plan".into())),
            (Mode::Shots, Some(plan)) => Ok(plan.validate()?),
            (Mode::Exact, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    /// Still above threshold after the iteration cap.
    Asymptotic,
    NotDistillable,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged => EXIT_OK,
            Status::Asymptotic => EXIT_NO_CONVERGENCE,
            Status::NotDistillable => EXIT_NOT_DISTILLABLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub config: RunConfig,
    pub state: String,
    pub status: Status,
    pub message: Option<String>,
    pub record: Option<DistillationRecord>,
    pub lambdas: Option<[f64; 3]>,
    pub q_sign: Option<i32>,
    pub singular_values: Option<LorentzSingularValues>,
    pub concurrence_distilled: Option<f64>,
    pub concurrence_initial: Option<f64>,
    pub oracle_concurrence: f64,
    pub trace: Vec<TracePoint>,
}

pub fn cmd_exact(config: &RunConfig, trace_steps: usize) -> Result<ExactReport, CliError> {
    config.validate()?;
    let state = config.state_source.load()?;
    let mut report = ExactReport {
        config: config.clone(),
        state: config.state_source.label(),
        status: Status::Converged,
        message: None,
        record: None,
        lambdas: None,
        q_sign: None,
        singular_values: None,
        concurrence_distilled: None,
        concurrence_initial: None,
        oracle_concurrence: wootters_concurrence(&state),
        trace: Vec::new(),
    };
    let outcome = match distill(&state, config.threshold, config.max_iters) {
        Ok(outcome) => outcome,
        Err(OpticsError::NoConvergence { record, .. }) => {
            report.status = Status::Asymptotic;
            report.message = Some(format!(
                "no convergence after {} steps (V_A = {:.3e}, V_B = {:.3e})",
                record.iterations, record.final_v_a, record.final_v_b
            ));
            report.trace = convergence_trace(&state, record.iterations.min(trace_steps))?;
            report.record = Some(*record);
            return Ok(report);
        }
        Err(e @ OpticsError::NotDistillable { .. }) => {
            report.status = Status::NotDistillable;
            report.message = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(CliError::Detection(e.into())),
    };
    let record = &outcome.record;
    let (s, dec) = lorentz_singular_values_unchecked(&outcome.state, record.op_a.f, record.op_b.f)?;
    let c = concurrence_from_visibilities(&s)?;
    report.trace = convergence_trace(&state, record.iterations.min(trace_steps))?;
    report.lambdas = Some(dec.lambdas);
    report.q_sign = Some(dec.q_sign);
    report.singular_values = Some(s);
    report.concurrence_distilled = Some(c.distilled);
    report.concurrence_initial = Some(c.initial);
    report.record = Some(outcome.record);
    Ok(report)
}

/// Literature-reported comparison values for the benchmark states. These are
/// quoted figures, never computed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub fixture: FixtureSpec,
    pub copies_distill: u64,
    pub k_dis: usize,
    pub shots_q: u64,
    pub shots_lambda: u64,
    pub total: u64,
    pub tomography: u64,
    pub survival: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub label: String,
    pub distill_threshold: f64,
    pub target_halfwidth: f64,
    pub rows: Vec<ReferenceRow>,
}

pub fn reference_table() -> ReferenceTable {
    serde_json::from_str(include_str!("../data/reference_values.json"))
        .expect("bundled reference table parses")
}

pub fn reference_row(spec: &FixtureSpec) -> Option<ReferenceRow> {
    reference_table().rows.into_iter().find(|r| r.fixture == *spec)
}

/// Quantification allocation quoted for a benchmark state.
pub fn reference_plan(spec: &FixtureSpec) -> Option<ShotPlan> {
    reference_row(spec).map(|r| ShotPlan::with_quantification(r.shots_q, r.shots_lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub config: RunConfig,
    pub state: String,
    pub status: Status,
    pub message: Option<String>,
    pub estimate: Option<ConcurrenceEstimate>,
    pub oracle_concurrence: f64,
}

pub fn cmd_estimate(config: &RunConfig) -> Result<EstimateReport, CliError> {
    config.validate()?;
    let plan = config.plan.expect("validated");
    let state = config.state_source.load()?;
    let seed = config.seed.unwrap_or(1);
    let mut report = EstimateReport {
        config: config.clone(),
        state: config.state_source.label(),
        status: Status::Converged,
        message: None,
        estimate: None,
        oracle_concurrence: wootters_concurrence(&state),
    };
    match estimate_concurrence(&state, &plan, &mut ShotRng::new(seed, 0)) {
        Ok(est) => report.estimate = Some(est),
        Err(ShotError::Optics(OpticsError::NoConvergence { iterations, v_a, v_b, .. })) => {
            report.status = Status::Asymptotic;
            report.message = Some(format!(
                "no convergence after {iterations} steps (V_A = {v_a:.3e}, V_B = {v_b:.3e})"
            ));
        }
        Err(e @ ShotError::Optics(OpticsError::NotDistillable { .. })) => {
            report.status = Status::NotDistillable;
            report.message = Some(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub only: Option<String>,
    pub search: SearchConfig,
    pub base_plan: ShotPlan,
    pub format: Format,
}

/// One benchmark row. Columns prefixed `reported_` are quoted
/// literature figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub state: String,
    pub k_dis: usize,
    pub copies_distill: u64,
    pub copies_quant: u64,
    pub total: u64,
    pub shots_q: u64,
    pub shots_lambda: u64,
    pub c_estimate: f64,
    pub stderr: f64,
    pub survival: f64,
    pub oracle_concurrence: f64,
    pub capped: bool,
    pub reported_k_dis: Option<usize>,
    pub reported_copies_distill: Option<u64>,
    pub reported_total: Option<u64>,
    pub reported_tomography: Option<u64>,
    pub reported_survival: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub config: Table1Config,
    pub reference_label: String,
    pub rows: Vec<Table1Row>,
}

impl Table1Report {
    pub fn any_capped(&self) -> bool {
        self.rows.iter().any(|r| r.capped)
    }
}

pub fn table1_row(spec: &FixtureSpec, base: &ShotPlan, search: &SearchConfig) -> Result<Table1Row, CliError> {
    let state = fixture(*spec)?.state;
    let out = min_copies_search(&state, base, search)?;
    let reference = reference_row(spec);
    Ok(Table1Row {
        state: spec.label(),
        k_dis: out.k_dis,
        copies_distill: out.mean_copies_distill.round() as u64,
        copies_quant: out.copies_quant,
        total: out.total_copies,
        shots_q: out.plan.shots_per_q_setting,
        shots_lambda: out.plan.shots_per_lambda_setting,
        c_estimate: out.mean_concurrence.max(0.0),
        stderr: out.std_concurrence,
        survival: out.mean_survival,
        oracle_concurrence: wootters_concurrence(&state),
        capped: out.capped,
        reported_k_dis: reference.as_ref().map(|r| r.k_dis),
        reported_copies_distill: reference.as_ref().map(|r| r.copies_distill),
        reported_total: reference.as_ref().map(|r| r.total),
        reported_tomography: reference.as_ref().map(|r| r.tomography),
        reported_survival: reference.as_ref().map(|r| r.survival),
    })
}

pub fn cmd_table1(config: &Table1Config) -> Result<Table1Report, CliError> {
    config.base_plan.validate()?;
    let specs: Vec<FixtureSpec> = crate::qstate::benchmark_fixtures()
        .into_iter()
        .filter(|s| match &config.only {
            Some(filter) => s.label() == *filter || (s.params().is_empty() && s.name() == filter),
            None => true,
        })
        .collect();
    if specs.is_empty() {
        return Err(CliError::Invalid(format!(
            "no benchmark state matches `{}`",
            config.only.clone().unwrap_or_default()
        )));
    }
    // rows are independent; results keep input order
    let rows: Vec<Result<Table1Row, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| scope.spawn(move || table1_row(spec, &config.base_plan, &config.search)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("table row thread panicked")).collect()
    });
    Ok(Table1Report {
        config: config.clone(),
        reference_label: reference_table().label,
        rows: rows.into_iter().collect::<Result<_, _>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_states: usize,
    pub rank: usize,
    pub product: bool,
    pub seed: u64,
    pub threshold: f64,
    pub max_iters: usize,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub status: Status,
    pub steps: Option<usize>,
    pub c_pipeline: Option<f64>,
    pub c_oracle: f64,
    pub deviation: Option<f64>,
    /// `V_A^2 + C^2 - 1`, pure states only.
    pub complementarity: Option<f64>,
    pub max_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub max_deviation: f64,
    pub max_complementarity_residual: f64,
    pub max_lambda: f64,
    pub not_distillable: usize,
    pub asymptotic: usize,
    pub rows: Vec<SweepRow>,
}

fn sweep_row(config: &SweepConfig, seed: u64) -> Result<SweepRow, CliError> {
    let state = if config.product {
        random_product_state(seed)
    } else {
        random_state(seed, config.rank)?
    };
    let c_oracle = wootters_concurrence(&state);
    let mut row = SweepRow {
        seed,
        status: Status::Converged,
        steps: None,
        c_pipeline: None,
        c_oracle,
        deviation: None,
        complementarity: None,
        max_lambda: None,
    };
    match distill(&state, config.threshold, config.max_iters) {
        Ok(outcome) => {
            let rec = &outcome.record;
            let (s, dec) = lorentz_singular_values_unchecked(&outcome.state, rec.op_a.f, rec.op_b.f)?;
            let c = concurrence_from_visibilities(&s)?.initial;
            let v = state.marginal(Side::A)?.norm();
            row.steps = Some(rec.iterations);
            row.c_pipeline = Some(c);
            row.deviation = Some((c - c_oracle).abs());
            if config.rank == 1 && !config.product {
                row.complementarity = Some(v * v + c * c - 1.0);
            }
            row.max_lambda = Some(dec.lambdas[0]);
        }
        Err(OpticsError::NoConvergence { iterations, .. }) => {
            row.status = Status::Asymptotic;
            row.steps = Some(iterations);
        }
        Err(OpticsError::NotDistillable { .. }) => row.status = Status::NotDistillable,
        Err(e) => return Err(CliError::Detection(e.into())),
    }
    Ok(row)
}

pub fn cmd_sweep(config: &SweepConfig) -> Result<SweepReport, CliError> {
    if config.n_states == 0 {
        return Err(CliError::Invalid("--n-states must be positive".into()));
    }
    if !config.product && !(1..=4).contains(&config.rank) {
        return Err(StateError::BadRank(config.rank).into());
    }
    let rows = (0..config.n_states as u64)
        .map(|i| sweep_row(config, config.seed + i))
        .collect::<Result<Vec<_>, _>>()?;
    let fold_max = |f: fn(&SweepRow) -> Option<f64>| {
        rows.iter().filter_map(f).fold(0.0f64, |acc, x| acc.max(x.abs()))
    };
    Ok(SweepReport {
        config: config.clone(),
        max_deviation: fold_max(|r| r.deviation),
        max_complementarity_residual: fold_max(|r| r.complementarity),
        max_lambda: fold_max(|r| r.max_lambda),
        not_distillable: rows.iter().filter(|r| r.status == Status::NotDistillable).count(),
        asymptotic: rows.iter().filter(|r| r.status == Status::Asymptotic).count(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub state_source: StateSource,
    pub state: String,
    pub concurrence: f64,
}

pub fn cmd_oracle(source: &StateSource) -> Result<OracleReport, CliError> {
    let state = source.load()?;
    Ok(OracleReport {
        state_source: source.clone(),
        state: source.label(),
        concurrence: wootters_concurrence(&state),
    })
}

/// Flat one-line summary of an estimate, in the benchmark column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub state: String,
    pub status: Status,
    pub k_dis: Option<usize>,
    pub copies_distill: Option<u64>,
    pub copies_quant: Option<u64>,
    pub total: Option<u64>,
    pub c_estimate: Option<f64>,
    pub stderr: Option<f64>,
    pub survival: Option<f64>,
    pub oracle_concurrence: f64,
    pub seed: Option<u64>,
}

impl EstimateReport {
    pub fn row(&self) -> EstimateRow {
        let e = self.estimate.as_ref();
        EstimateRow {
            state: self.state.clone(),
            status: self.status,
            k_dis: e.map(|e| e.k_dis),
            copies_distill: e.map(|e| e.copies_distill),
            copies_quant: e.map(|e| e.copies_quant),
            total: e.map(|e| e.total_copies),
            c_estimate: e.map(|e| e.concurrence),
            stderr: e.map(|e| e.stderr),
            survival: e.map(|e| e.survival),
            oracle_concurrence: self.oracle_concurrence,
            seed: self.config.seed,
        }
    }
}

/// Serialized form of any report.
pub trait Report: Serialize {
    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError>;

    fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Json => Ok(self.to_json()?.into_bytes()),
            Format::Csv => {
                let mut buf = Vec::new();
                self.write_csv(&mut buf)?;
                Ok(buf)
            }
        }
    }
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

impl Report for ExactReport {
    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        write_rows(out, &self.trace)
    }
}

impl Report for EstimateReport {
    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        write_rows(out, &[self.row()])
    }
}

impl Report for Table1Report {
    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        write_rows(out, &self.rows)
    }
}

impl Report for SweepReport {
    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        write_rows(out, &self.rows)
    }
}

impl Report for OracleReport {
    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Row<'a> {
            state: &'a str,
            concurrence: f64,
        }
        write_rows(out, &[Row { state: &self.state, concurrence: self.concurrence }])
    }
}

/// Reads CSV rows back, e.g. to compare against an in-memory report.
pub fn read_csv_rows<T: for<'de> Deserialize<'de>>(data: &[u8]) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_reader(data);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

fn emit<R: Report>(report: &R, output: &OutputArgs) -> Result<(), CliError> {
    let bytes = report.render(output.format)?;
    match &output.out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

fn shot_plan(args: &PlanArgs, source: &StateSource) -> ShotPlan {
    let reference = match source {
        StateSource::Fixture(spec) => reference_plan(spec),
        StateSource::File(_) => None,
    }
    .unwrap_or_else(|| ShotPlan::with_quantification(DEFAULT_SHOTS_Q, DEFAULT_SHOTS_LAMBDA));
    ShotPlan {
        shots_per_gamma_setting: args.shots_gamma,
        shots_per_q_setting: args.shots_q.unwrap_or(reference.shots_per_q_setting),
        shots_per_lambda_setting: args.shots_lambda.unwrap_or(reference.shots_per_lambda_setting),
        distill_threshold: args.threshold,
        max_steps: args.max_iters,
        ..reference
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Exact(args) => {
            let config = RunConfig {
                mode: Mode::Exact,
                state_source: StateSource::from_args(&args.state)?,
                seed: None,
                plan: None,
                threshold: args.threshold,
                max_iters: args.max_iters,
                format: args.output.format,
            };
            let report = cmd_exact(&config, args.trace_steps)?;
            emit(&report, &args.output)?;
            Ok(report.status.exit_code())
        }
        Command::Estimate(args) => {
            let source = StateSource::from_args(&args.state)?;
            let plan = shot_plan(&args.plan, &source);
            let config = RunConfig {
                mode: Mode::Shots,
                state_source: source,
                seed: Some(args.seed),
                plan: Some(plan),
                threshold: plan.distill_threshold,
                max_iters: plan.max_steps,
                format: args.output.format,
            };
            let report = cmd_estimate(&config)?;
            emit(&report, &args.output)?;
            Ok(report.status.exit_code())
        }
        Command::Table1(args) => {
            let config = Table1Config {
                only: args.only.clone(),
                search: SearchConfig {
                    target_halfwidth: args.target,
                    replications: args.replications,
                    seed: args.seed,
                    shot_cap: args.shot_cap,
                },
                base_plan: ShotPlan {
                    shots_per_gamma_setting: args.shots_gamma,
                    distill_threshold: args.threshold,
                    target_halfwidth: args.target,
                    max_steps: args.max_iters,
                    ..ShotPlan::default()
                },
                format: args.output.format,
            };
            let report = cmd_table1(&config)?;
            emit(&report, &args.output)?;
            for row in report.rows.iter().filter(|r| r.capped) {
                eprintln!("warning: {} did not reach the target within the shot cap", row.state);
            }
            Ok(if report.any_capped() { EXIT_BUDGET_CAP } else { EXIT_OK })
        }
        Command::Sweep(args) => {
            let config = SweepConfig {
                n_states: args.n_states,
                rank: args.rank,
                product: args.product,
                seed: args.seed,
                threshold: args.threshold,
                max_iters: args.max_iters,
                format: args.output.format,
            };
            let report = cmd_sweep(&config)?;
            emit(&report, &args.output)?;
            Ok(EXIT_OK)
        }
        Command::Oracle(args) => {
            let report = cmd_oracle(&StateSource::from_args(&args.state)?)?;
            emit(&report, &args.output)?;
            Ok(EXIT_OK)
        }
    }
}

/// Entry point used by the binary.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_INPUT } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_config(mode: Mode, spec: FixtureSpec) -> RunConfig {
        RunConfig {
            mode,
            state_source: StateSource::Fixture(spec),
            seed: Some(1),
            plan: match mode {
                Mode::Shots => Some(reference_plan(&spec).unwrap_or_default()),
                Mode::Exact => None,
            },
            threshold: match mode {
                Mode::Shots => DEFAULT_SHOT_THRESHOLD,
                Mode::Exact => DEFAULT_EXACT_THRESHOLD,
            },
            max_iters: DEFAULT_MAX_ITERS,
            format: Format::Json,
        }
    }

    #[test]
    fn reference_table_has_six_rows_in_benchmark_order() {
        let table = reference_table();
        assert_eq!(table.label, "literature-reported");
        let specs: Vec<_> = table.rows.iter().map(|r| r.fixture).collect();
        assert_eq!(specs, crate::qstate::benchmark_fixtures());
        for r in &table.rows {
            assert_eq!(r.total, r.copies_distill + 9 * r.shots_q + 3 * r.shots_lambda);
        }
    }

    #[test]
    fn exact_bell_matches_oracle() {
        let r = cmd_exact(&fixture_config(Mode::Exact, FixtureSpec::Bell), 10).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert!((r.concurrence_initial.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.oracle_concurrence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_asymptotic_is_flagged() {
        let mut cfg = fixture_config(Mode::Exact, FixtureSpec::AsymptoticFig2b);
        cfg.max_iters = 40;
        let r = cmd_exact(&cfg, 60).unwrap();
        assert_eq!(r.status, Status::Asymptotic);
        assert_eq!(r.trace.len(), 41);
        assert_eq!(r.status.exit_code(), EXIT_NO_CONVERGENCE);
    }

    #[test]
    fn shot_mode_requires_plan() {
        let mut cfg = fixture_config(Mode::Shots, FixtureSpec::Bell);
        cfg.plan = None;
        assert!(matches!(cfg.validate(), Err(CliError::Invalid(_))));
    }

    #[test]
    fn json_round_trip() {
        let r = cmd_exact(&fixture_config(Mode::Exact, FixtureSpec::RhoEpsLambda { eps: 0.5, lambda: 0.8 }), 20)
            .unwrap();
        let back: ExactReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let e = cmd_estimate(&fixture_config(Mode::Shots, FixtureSpec::Werner)).unwrap();
        let back: EstimateReport = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn csv_round_trip() {
        let r = cmd_exact(&fixture_config(Mode::Exact, FixtureSpec::AsymptoticFig2b), 20).unwrap();
        let rows: Vec<TracePoint> = read_csv_rows(&r.render(Format::Csv).unwrap()).unwrap();
        assert_eq!(rows, r.trace);
        let e = cmd_estimate(&fixture_config(Mode::Shots, FixtureSpec::Bell)).unwrap();
        let rows: Vec<EstimateRow> = read_csv_rows(&e.render(Format::Csv).unwrap()).unwrap();
        assert_eq!(rows, vec![e.row()]);
    }

    #[test]
    fn estimate_is_deterministic() {
        let cfg = fixture_config(Mode::Shots, FixtureSpec::RhoPrime { p: 0.6 });
        let a = cmd_estimate(&cfg).unwrap().to_json().unwrap();
        let b = cmd_estimate(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_product_states() {
        let cfg = SweepConfig {
            n_states: 10,
            rank: 4,
            product: true,
            seed: 0,
            threshold: DEFAULT_EXACT_THRESHOLD,
            max_iters: DEFAULT_MAX_ITERS,
            format: Format::Json,
        };
        let r = cmd_sweep(&cfg).unwrap();
        assert!(r.max_lambda < 1e-9);
        assert!(r.rows.iter().all(|row| row.c_pipeline == Some(0.0) && row.steps == Some(2)));
    }

    #[test]
    fn sweep_rejects_bad_rank() {
        let cfg = SweepConfig {
            n_states: 1,
            rank: 5,
            product: false,
            seed: 0,
            threshold: 1e-8,
            max_iters: 10,
            format: Format::Json,
        };
        assert_eq!(cmd_sweep(&cfg).unwrap_err().exit_code(), EXIT_INVALID_INPUT);
    }

    #[test]
    fn parses_fixture_params() {
        let cli = Cli::try_parse_from([
            "qconc", "exact", "--fixture", "rho_eps_lambda", "--params", "0.5,0.8",
        ])
        .unwrap();
        let Command::Exact(args) = cli.command else { panic!("wrong command") };
        let src = StateSource::from_args(&args.state).unwrap();
        assert_eq!(src, StateSource::Fixture(FixtureSpec::RhoEpsLambda { eps: 0.5, lambda: 0.8 }));
    }

    #[test]
    fn state_sources_are_exclusive() {
        assert!(Cli::try_parse_from(["qconc", "oracle"]).is_err());
        assert!(Cli::try_parse_from(["qconc", "oracle", "--fixture", "bell", "--state", "x.json"]).is_err());
        assert_eq!(main_from_args(["qconc", "oracle", "--fixture", "nope"]), EXIT_INVALID_INPUT);
    }

    #[test]
    fn table1_filter_selects_one_row() {
        let cfg = Table1Config {
            only: Some("bell".into()),
            search: SearchConfig::default(),
            base_plan: ShotPlan::default(),
            format: Format::Json,
        };
        let r = cmd_table1(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].reported_total, Some(3900));
    }
}
