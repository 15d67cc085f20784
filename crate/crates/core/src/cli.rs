//! Command-line front end: run configuration, `simulate`, `audit` and `sweep`.
//!
//! Reports are written with shortest round-trip float formatting and fixed
//! key sets, so identical configurations give byte-identical output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{GridSpace, GridVector};
use crate::control::{self, ControlOperator, KappaEstimate, KappaOptions, ResolventBound};
use crate::error::Error;
use crate::generator::GeneratorModel;
use crate::iss::{self, FamilyMember, GainFit, GainFitOptions, Verdict, Witness};
use crate::parallel::Execution;
use crate::perturbation::{self, PerturbedSystem, SmallGain};
use crate::sampling;
use crate::scenarios::{Profile, ScenarioSpec};
use crate::semigroup::{EvolutionPlan, Method};
use crate::signal::{InputNorm, InputSignal};

/// Environment variable naming the default tolerance profile.
pub const TOLERANCE_ENV: &str = "POSISS_TOLERANCES";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    MissingFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "posiss", version, about = "Simulate and audit positive boundary-controlled systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the controlled system and write the trajectory as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the requested audits and write a JSON report.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectral verdict against trajectory evidence over a parameter range.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated parameter values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Entries above `−positivity` count as nonnegative in trajectories.
    pub positivity: f64,
    /// Half-width of the undecided band around `s = 0` and `r = 1`.
    pub guard_band: f64,
    /// Relative slack allowed when validating the fitted ISS estimate.
    pub validation_slack: f64,
}

impl Tolerances {
    pub fn profile(name: &str) -> Option<Tolerances> {
        match name {
            "default" => Some(Tolerances {
                positivity: crate::cone::POSITIVITY_TOL,
                guard_band: iss::GUARD_BAND,
                validation_slack: iss::VALIDATION_SLACK,
            }),
            "strict" => Some(Tolerances {
                positivity: 0.0,
                guard_band: 1e-12,
                validation_slack: 1e-12,
            }),
            "loose" => Some(Tolerances {
                positivity: 1e-9,
                guard_band: 1e-6,
                validation_slack: 1e-6,
            }),
            _ => None,
        }
    }

    /// Profile named by the environment, or `default`.
    pub fn from_env() -> CliResult<Tolerances> {
        match std::env::var(TOLERANCE_ENV) {
            Ok(name) => Tolerances::profile(name.trim()).ok_or_else(|| {
                CliError::Config(format!(
                    "{TOLERANCE_ENV} = {name:?} is not one of default, strict, loose"
                ))
            }),
            Err(_) => Ok(Tolerances::profile("default").expect("default profile exists")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub positivity: Option<f64>,
    pub guard_band: Option<f64>,
    pub validation_slack: Option<f64>,
}

/// An explicit `(A, B, P)` triple on a grid of the given length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixScenario {
    pub length: f64,
    /// Row-major generator.
    pub a: Vec<Vec<f64>>,
    /// Control column; defaults to the boundary injection `(1/h) e₀`.
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    /// Row-major perturbation; defaults to zero.
    #[serde(default)]
    pub p: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Preset(String),
    Spec(ScenarioSpec),
    Matrices { matrices: MatrixScenario },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    /// `bump`, `zero` or `random`.
    Named(String),
    Values(Vec<f64>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Named("bump".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSource {
    Inline { breakpoints: Vec<f64>, values: Vec<f64> },
    /// CSV with header `t,u`; relative paths resolve against the config file.
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub method: Method,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            t_end: 10.0,
            dt: 0.1,
            method: Method::ExactExponential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditParams {
    /// Defaults to `max(s(A), 0) + 1`.
    pub lambda0: Option<f64>,
    pub tau: f64,
    pub p: InputNorm,
    /// Defaults to 0 when `s(A) < 0`, else `s(A) + 1`. Values close to
    /// `s(A)` of an upwind matrix give very large `m_α`.
    pub alpha: Option<f64>,
    pub t_grid: Vec<f64>,
    /// Offsets added to `s(A + P)`.
    pub lambda_offsets: Vec<f64>,
    pub trials: usize,
    pub steps: usize,
    pub horizon: Option<f64>,
}

impl Default for AuditParams {
    fn default() -> Self {
        AuditParams {
            lambda0: None,
            tau: 1.0,
            p: InputNorm::L1,
            alpha: None,
            t_grid: vec![0.1, 1.0, 10.0],
            lambda_offsets: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            trials: 50,
            steps: 400,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub trajectory: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

pub const ALL_AUDITS: [&str; 7] = [
    "inverse_estimate",
    "admissibility",
    "resolvent_bound",
    "domination",
    "small_gain",
    "verdict",
    "gain_fit",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default)]
    pub input: Option<InputSource>,
    /// Defaults to every audit.
    #[serde(default)]
    pub audits: Option<Vec<String>>,
    #[serde(default)]
    pub audit_params: AuditParams,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default)]
    pub execution: Option<Execution>,
}

/// A parsed configuration together with the directory relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub tolerances: Tolerances,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> CliResult<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        LoadedConfig::new(config, base_dir, Tolerances::from_env()?)
    }

    pub fn new(config: RunConfig, base_dir: PathBuf, defaults: Tolerances) -> CliResult<LoadedConfig> {
        let o = &config.tolerances;
        let tolerances = Tolerances {
            positivity: o.positivity.unwrap_or(defaults.positivity),
            guard_band: o.guard_band.unwrap_or(defaults.guard_band),
            validation_slack: o.validation_slack.unwrap_or(defaults.validation_slack),
        };
        if [tolerances.positivity, tolerances.guard_band, tolerances.validation_slack]
            .iter()
            .any(|t| !(t.is_finite() && *t >= 0.0))
        {
            return Err(CliError::Config("tolerances must be finite and nonnegative".into()));
        }
        if let Some(audits) = &config.audits {
            if let Some(bad) = audits.iter().find(|a| !ALL_AUDITS.contains(&a.as_str())) {
                return Err(CliError::Config(format!(
                    "unknown audit {bad:?}; known audits are {}",
                    ALL_AUDITS.join(", ")
                )));
            }
        }
        Ok(LoadedConfig {
            config,
            base_dir,
            tolerances,
        })
    }

    fn exec(&self) -> Execution {
        self.config.execution.unwrap_or_default()
    }

    fn wants(&self, audit: &str) -> bool {
        match &self.config.audits {
            Some(list) => list.iter().any(|a| a == audit),
            None => true,
        }
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Everything the commands need from a scenario.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub kind: String,
    pub note: Option<String>,
    pub control: ControlOperator,
    pub system: PerturbedSystem,
    pub sufficient_condition: Option<bool>,
    pub inf_q_condition: Option<bool>,
}

fn spec_of(source: &ScenarioSource) -> CliResult<Option<ScenarioSpec>> {
    match source {
        ScenarioSource::Preset(name) => ScenarioSpec::preset(name)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("unknown scenario preset {name:?}"))),
        ScenarioSource::Spec(spec) => Ok(Some(spec.clone())),
        ScenarioSource::Matrices { .. } => Ok(None),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize, name: &str) -> CliResult<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("{name} must be a square {n}×{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn assemble_spec(spec: &ScenarioSpec) -> CliResult<Assembled> {
    let built = spec.build()?;
    let note = match spec {
        ScenarioSpec::Renewal { note, .. }
        | ScenarioSpec::RingTransport { note, .. }
        | ScenarioSpec::MarkovCycle { note, .. } => note.clone(),
    };
    Ok(Assembled {
        kind: spec.kind().into(),
        note,
        control: built.control,
        system: built.system,
        sufficient_condition: built.sufficient_condition,
        inf_q_condition: built.inf_q_condition,
    })
}

pub fn assemble(source: &ScenarioSource) -> CliResult<Assembled> {
    if let Some(spec) = spec_of(source)? {
        return assemble_spec(&spec);
    }
    let ScenarioSource::Matrices { matrices: m } = source else {
        unreachable!("presets and specs are handled above")
    };
    let n = m.a.len();
    let space = GridSpace::new(m.length, n.max(1))?;
    let a = GeneratorModel::from_matrix(space.clone(), rows_to_matrix(&m.a, n, "a")?)?;
    let control = match &m.b {
        Some(col) => ControlOperator::custom(DVector::from_column_slice(col))?,
        None => ControlOperator::boundary_dirichlet(&space),
    };
    if control.column().len() != n {
        return Err(CliError::Config(format!("b must have {n} entries")));
    }
    let p = match &m.p {
        Some(rows) => rows_to_matrix(rows, n, "p")?,
        None => DMatrix::zeros(n, n),
    };
    Ok(Assembled {
        kind: "matrices".into(),
        note: None,
        control,
        system: PerturbedSystem::from_matrix(&a, p)?,
        sufficient_condition: None,
        inf_q_condition: None,
    })
}

fn initial_state(cfg: &LoadedConfig, space: &std::sync::Arc<GridSpace>) -> CliResult<GridVector> {
    match &cfg.config.initial_state {
        InitialState::Named(name) => match name.as_str() {
            "bump" => {
                let l = space.length();
                Ok(GridVector::from_fn(space.clone(), |s| {
                    let z = (s - 0.2 * l) / (0.05 * l);
                    (-z * z).exp()
                }))
            }
            "zero" => Ok(GridVector::zeros(space.clone())),
            "random" => {
                let mut rng = sampling::rng(cfg.config.seed, 0);
                Ok(GridVector::from_vec(space.clone(), sampling::cone_values(&mut rng, space.cells()))?)
            }
            other => Err(CliError::Config(format!(
                "unknown initial state {other:?}; use bump, zero, random or an array"
            ))),
        },
        InitialState::Values(v) => Ok(GridVector::from_vec(space.clone(), v.clone())?),
    }
}

fn input_signal(cfg: &LoadedConfig) -> CliResult<InputSignal> {
    match &cfg.config.input {
        None => Ok(InputSignal::zero()),
        Some(InputSource::Inline { breakpoints, values }) => Ok(InputSignal::new(breakpoints.clone(), values.clone())?),
        Some(InputSource::File { file }) => {
            let path = cfg.resolve(file);
            InputSignal::read_csv(&path)
                .map_err(|source| CliError::MissingFile {
                    path: path.clone(),
                    source,
                })?
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub scenario: String,
    pub cells: usize,
    pub steps: usize,
    pub method: Method,
    pub resampled_input: bool,
    pub positivity_violations: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub final_norm: f64,
}

/// Trajectory CSV (header `t,x0,…`) and its summary.
pub fn simulate(cfg: &LoadedConfig) -> CliResult<(String, SimulationSummary)> {
    let sc = assemble(&cfg.config.scenario)?;
    let a = sc.system.perturbed();
    let x = initial_state(cfg, a.space())?;
    let u = input_signal(cfg)?;
    let plan = EvolutionPlan::new(cfg.config.plan.t_end, cfg.config.plan.dt, cfg.config.plan.method)?;
    let sol = control::mild_solution(a, &sc.control, &x, &u, &plan)?;
    let traj = &sol.trajectory;
    if traj.states.iter().any(|z| z.values().iter().any(|v| !v.is_finite())) {
        return Err(CliError::Numerical(Error::StepFailure("trajectory is not finite".into())));
    }

    let n = a.dim();
    let mut csv = String::from("t");
    for j in 0..n {
        write!(csv, ",x{j}").unwrap();
    }
    csv.push('\n');
    for (t, z) in traj.times.iter().zip(&traj.states) {
        csv.push_str(&fmt_f64(*t));
        for v in z.values().iter() {
            csv.push(',');
            csv.push_str(&fmt_f64(*v));
        }
        csv.push('\n');
    }

    let last = traj.times.len() - 1;
    let mut idx: Vec<usize> = (0..=10).map(|k| k * last / 10).collect();
    idx.dedup();
    let summary = SimulationSummary {
        seed: cfg.config.seed,
        scenario: sc.kind,
        cells: n,
        steps: last,
        method: plan.method,
        resampled_input: sol.resampled,
        positivity_violations: traj.positivity_violations(cfg.tolerances.positivity),
        checkpoints: idx
            .into_iter()
            .map(|k| Checkpoint {
                t: traj.times[k],
                norm: traj.states[k].l1_norm(),
            })
            .collect(),
        final_norm: traj.last().l1_norm(),
    };
    Ok((csv, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Software {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub kind: String,
    pub note: Option<String>,
    pub cells: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseEstimate {
    pub lambda0: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationSummary {
    pub holds: bool,
    pub violation_count: usize,
    pub first_violation: Option<perturbation::Violation>,
}

/// Audit report. Every key is always present; skipped audits are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub software: Software,
    pub seed: u64,
    pub scenario: ScenarioInfo,
    pub tolerances: Tolerances,
    pub audits: Vec<String>,
    pub s_a: f64,
    pub s_perturbed: f64,
    pub sufficient_condition: Option<bool>,
    pub inf_q_condition: Option<bool>,
    pub inverse_estimate: Option<InverseEstimate>,
    pub kappa: Option<KappaEstimate>,
    pub m_alpha: Option<ResolventBound>,
    pub domination: Option<DominationSummary>,
    pub small_gain: Option<SmallGain>,
    pub verdict: Option<Verdict>,
    pub fitted: Option<GainFit>,
    pub witness: Option<Witness>,
    /// Audit outcomes that are results rather than failures (refused fits,
    /// non-positive resolvents), keyed by audit name.
    pub notes: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

pub fn audit(cfg: &LoadedConfig) -> CliResult<AuditReport> {
    let sc = assemble(&cfg.config.scenario)?;
    let params = &cfg.config.audit_params;
    let exec = cfg.exec();
    let base = sc.system.base();
    let perturbed = sc.system.perturbed();
    let s_a = base.spectral_bound()?;
    let s_perturbed = iss::perturbed_spectral_bound(&sc.system)?;
    let mut notes = BTreeMap::new();
    let audits: Vec<String> = ALL_AUDITS
        .iter()
        .filter(|a| cfg.wants(a))
        .map(|a| a.to_string())
        .collect();

    let inverse_estimate = if cfg.wants("inverse_estimate") {
        let lambda0 = params.lambda0.unwrap_or(s_a.max(0.0) + 1.0);
        match base.inverse_estimate_constant(lambda0) {
            Ok(c) => Some(InverseEstimate { lambda0, c }),
            Err(e @ Error::NotPositive { .. }) => {
                notes.insert("inverse_estimate".into(), e.to_string());
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };

    let kappa = if cfg.wants("admissibility") {
        Some(control::admissibility_constant(
            base,
            &sc.control,
            params.tau,
            params.p,
            KappaOptions {
                seed: cfg.config.seed,
                exec,
                ..KappaOptions::default()
            },
        )?)
    } else {
        None
    };

    let m_alpha = if cfg.wants("resolvent_bound") {
        let alpha = params
            .alpha
            .unwrap_or(if s_a < 0.0 { 0.0 } else { s_a + 1.0 });
        let scale = alpha.abs().max(1.0);
        let lambdas: Vec<f64> = [1e-2, 1e-1, 1.0, 10.0, 100.0].iter().map(|d| alpha + d * scale).collect();
        Some(control::resolvent_bound_audit(base, &sc.control, alpha, &lambdas, params.p)?)
    } else {
        None
    };

    let domination = if cfg.wants("domination") {
        let scale = s_perturbed.abs().max(1.0);
        let lambdas: Vec<f64> = params.lambda_offsets.iter().map(|d| s_perturbed + d * scale).collect();
        let rep = perturbation::domination_check(&sc.system, &params.t_grid, &lambdas, exec)?;
        Some(DominationSummary {
            holds: rep.holds,
            violation_count: rep.violations.len(),
            first_violation: rep.violations.into_iter().next(),
        })
    } else {
        None
    };

    let small_gain = if cfg.wants("small_gain") || cfg.wants("verdict") || cfg.wants("gain_fit") {
        Some(sc.system.small_gain_radius()?)
    } else {
        None
    };

    let (mut verdict, mut witness) = (None, None);
    if cfg.wants("verdict") || cfg.wants("gain_fit") {
        let rep = iss::iss_verdict_with_band(&sc.system, params.p, cfg.tolerances.guard_band)?;
        verdict = Some(rep.verdict);
        witness = rep.witness;
    }

    let fitted = if cfg.wants("gain_fit") {
        let opts = GainFitOptions {
            trials: params.trials,
            horizon: params.horizon,
            steps: params.steps,
            seed: cfg.config.seed,
            p: params.p,
            exec,
            guard_band: cfg.tolerances.guard_band,
            slack: cfg.tolerances.validation_slack,
        };
        match iss::iss_gain_fit(&sc.system, &sc.control, &opts) {
            Ok(fit) => Some(fit),
            Err(e @ (Error::FitRefused(_) | Error::EstimateViolated { .. })) => {
                notes.insert("gain_fit".into(), e.to_string());
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    if !perturbed.is_metzler() {
        notes.insert("positivity".into(), "A + P is not a Metzler matrix".into());
    }

    Ok(AuditReport {
        software: Software {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        seed: cfg.config.seed,
        scenario: ScenarioInfo {
            kind: sc.kind.clone(),
            note: sc.note.clone(),
            cells: base.dim(),
            length: base.space().length(),
        },
        tolerances: cfg.tolerances,
        audits,
        s_a,
        s_perturbed,
        sufficient_condition: sc.sufficient_condition,
        inf_q_condition: sc.inf_q_condition,
        inverse_estimate,
        kappa,
        m_alpha,
        domination,
        small_gain: if cfg.wants("small_gain") { small_gain } else { None },
        verdict,
        fitted,
        witness,
        notes,
        warnings: sc.system.warnings().to_vec(),
    })
}

/// Parameters `sweep` can vary.
pub const SWEEP_PARAMS: [&str; 4] = ["beta0", "q0", "a", "n"];

pub fn parse_values(text: &str) -> CliResult<Vec<f64>> {
    let mut values = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: f64 = item
            .parse()
            .map_err(|_| CliError::Config(format!("sweep value {item:?} is not a number")))?;
        if !v.is_finite() {
            return Err(CliError::Config(format!("sweep value {item:?} is not finite")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(CliError::Config("sweep range is empty".into()));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    Ok(values)
}

fn with_parameter(spec: &ScenarioSpec, param: &str, value: f64) -> CliResult<ScenarioSpec> {
    let mut spec = spec.clone();
    let mismatch = || CliError::Config(format!("parameter {param} does not apply to a {} scenario", spec_kind(param)));
    match (&mut spec, param) {
        (ScenarioSpec::Renewal { beta, .. }, "beta0") => *beta = Profile::Constant(value),
        (ScenarioSpec::Renewal { q, .. }, "q0") => *q = Profile::Constant(value),
        (ScenarioSpec::RingTransport { a, .. }, "a") => *a = value,
        (_, "n") => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(CliError::Config(format!("cell count must be a positive integer, got {value}")));
            }
            let n = value as usize;
            match &mut spec {
                ScenarioSpec::Renewal { cells, .. } => *cells = Some(n),
                ScenarioSpec::RingTransport { cells, .. } | ScenarioSpec::MarkovCycle { cells, .. } => *cells = n,
            }
        }
        _ => return Err(mismatch()),
    }
    Ok(spec)
}

fn spec_kind(param: &str) -> &'static str {
    match param {
        "a" => "non-ring",
        _ => "non-renewal",
    }
}

/// One CSV row per parameter value, ascending.
pub fn sweep(cfg: &LoadedConfig, param: &str, values: &[f64]) -> CliResult<String> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(CliError::Config(format!(
            "unknown sweep parameter {param:?}; use one of {}",
            SWEEP_PARAMS.join(", ")
        )));
    }
    if values.is_empty() {
        return Err(CliError::Config("sweep range is empty".into()));
    }
    let spec = spec_of(&cfg.config.scenario)?
        .ok_or_else(|| CliError::Config("explicit matrices cannot be swept".into()))?;
    let mut family = Vec::with_capacity(values.len());
    for &v in values {
        let sc = assemble_spec(&with_parameter(&spec, param, v)?)?;
        family.push(FamilyMember {
            parameter: v,
            system: sc.system,
            control: sc.control,
        });
    }
    let params = &cfg.config.audit_params;
    let opts = GainFitOptions {
        trials: params.trials,
        horizon: params.horizon,
        steps: params.steps,
        seed: cfg.config.seed,
        p: params.p,
        exec: cfg.exec(),
        guard_band: cfg.tolerances.guard_band,
        slack: cfg.tolerances.validation_slack,
    };
    let rows = iss::iss_equivalence_sweep(&family, &opts)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let flag = |v: Option<bool>| v.map(|b| b.to_string()).unwrap_or_default();
    let mut csv = format!("{param},r,s_a,s_perturbed,verdict,mu,simulated_eiss,agreement,skipped\n");
    for row in rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(row.parameter),
            fmt_f64(row.small_gain_r),
            fmt_f64(row.s_a),
            opt(row.s_perturbed),
            row.verdict.label(),
            opt(row.mu),
            flag(row.simulated_eiss),
            flag(row.agreement),
            row.skipped
        )
        .unwrap();
    }
    Ok(csv)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialise");
    s.push('\n');
    s
}

/// Runs one command. Output goes to `--out`, else to the configured path,
/// else to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = LoadedConfig::read(&config)?;
            let (csv, summary) = simulate(&cfg)?;
            let target = out.or_else(|| cfg.config.output.trajectory.as_ref().map(|p| cfg.resolve(p)));
            match target {
                Some(path) => {
                    write_file(&path, &csv)?;
                    print!("{}", to_json(&summary));
                }
                None => {
                    print!("{csv}");
                    eprint!("{}", to_json(&summary));
                }
            }
        }
        Command::Audit { config, out } => {
            let cfg = LoadedConfig::read(&config)?;
            let report = to_json(&audit(&cfg)?);
            match out.or_else(|| cfg.config.output.report.as_ref().map(|p| cfg.resolve(p))) {
                Some(path) => write_file(&path, &report)?,
                None => print!("{report}"),
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = LoadedConfig::read(&config)?;
            let values = parse_values(&values)?;
            let table = sweep(&cfg, &param, &values)?;
            match out.or_else(|| cfg.config.output.table.as_ref().map(|p| cfg.resolve(p))) {
                Some(path) => write_file(&path, &table)?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}
