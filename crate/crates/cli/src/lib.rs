//! Batch commands for the `depthforge` binary.
//!
//! Settings come from an optional `key=value` config file overridden by
//! command-line flags. Every report echoes the effective settings as
//! `config.<key>,<value>` rows, and such a report is itself accepted as a
//! config file, so any run can be replayed from its output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use nalgebra::{DMatrix, DVector};

use depthforge::estimators::{
    deepest_search, fit_piq, fit_rrr, fit_tisp, RrrSampler, SparseSampler, FIXED_POINT_TOL,
};
use depthforge::geometry::{StiefelPoint, UnitVector};
use depthforge::influence::{location_influence, regression_influence, rrr_influence, Loss};
use depthforge::io::{format_param, load_csv, load_param, write_text};
use depthforge::linalg::spectral_norm;
use depthforge::riemannian::{
    oc_problem, pc_problem, vmf_order2_depth, vmf_problem, watson_order2_depth, watson_problem,
};
use depthforge::slacked::{
    default_lambda, nonnegative_problem, rrr_problem, sparse_rrr_problem, theta_problem,
    theta_sharp_problem,
};
use depthforge::solver::{
    solve_depth, Certificate, DepthProblem, DepthResult, Order2Result, Slack, SolverConfig,
    Surrogate,
};
use depthforge::threshold::{
    check_quantile_fixed_point, check_rrr_fixed_point, check_theta_fixed_point, RuleKind,
    ThresholdRule,
};
use depthforge::DepthError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Depth(#[from] DepthError),
}

impl CliError {
    /// 2 for invalid input, 3 for numeric or IO failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Depth(e) if e.is_validation() => 2,
            CliError::Depth(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Depth,
    Rank,
    Fit,
    Deepest,
    Check,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Depth => "depth",
            Task::Rank => "rank",
            Task::Fit => "fit",
            Task::Deepest => "deepest",
            Task::Check => "check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Location,
    Regression,
    Nonneg,
    Watson,
    Vmf,
    Vmf2,
    Watson2,
    Pc,
    Oc,
    Theta,
    ThetaSharp,
    Rrr,
    SparseRrr,
}

impl FromStr for Family {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "location" => Family::Location,
            "regression" => Family::Regression,
            "nonneg" => Family::Nonneg,
            "watson" => Family::Watson,
            "vmf" => Family::Vmf,
            "vmf2" => Family::Vmf2,
            "watson2" => Family::Watson2,
            "pc" => Family::Pc,
            "oc" => Family::Oc,
            "theta" => Family::Theta,
            "theta_sharp" => Family::ThetaSharp,
            "rrr" => Family::Rrr,
            "sparse_rrr" => Family::SparseRrr,
            other => return Err(config_err(format!("family: unknown family `{other}`"))),
        })
    }
}

impl Family {
    fn needs_response(self) -> bool {
        matches!(
            self,
            Family::Regression
                | Family::Nonneg
                | Family::Theta
                | Family::ThetaSharp
                | Family::Rrr
                | Family::SparseRrr
        )
    }
}

/// Command-line interface.
#[derive(Debug, Parser)]
#[command(name = "depthforge", version, about = "Riemannian and slacked depth computations")]
pub struct Cli {
    #[arg(value_enum)]
    pub task: Task,
    #[arg(long)]
    pub family: Option<String>,
    /// Samples (or predictors) as CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Responses as CSV.
    #[arg(long)]
    pub response: Option<PathBuf>,
    /// Candidate parameter file; repeat for `rank`.
    #[arg(long = "param")]
    pub params: Vec<PathBuf>,
    /// Stiefel factor `U` for sparse_rrr.
    #[arg(long)]
    pub loadings: Option<PathBuf>,
    /// Center vector for pc and oc.
    #[arg(long)]
    pub center: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa_sign: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// `key=value` settings file (a previous report also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where `fit` and `deepest` write the estimated parameter.
    #[arg(long)]
    pub param_out: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "family",
    "data",
    "response",
    "param",
    "loadings",
    "center",
    "lambda",
    "q",
    "rank",
    "rule",
    "loss",
    "kappa_sign",
    "rho",
    "budget",
    "seed",
    "out",
    "param_out",
    "solver.restarts",
    "solver.surrogate",
    "solver.bandwidth_start",
    "solver.bandwidth_end",
    "solver.stages",
    "solver.max_iters",
    "solver.step_init",
    "solver.step_shrink",
    "solver.zero_tol",
    "solver.pair_cap",
    "solver.random_seeds",
    "solver.polish_rounds",
];

/// Reads `key=value` lines, or `config.key,value` rows from a report.
pub fn parse_config_text(text: &str, source: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = if let Some(rest) = line.strip_prefix("config.") {
            match rest.split_once(',') {
                Some((k, v)) => (k.trim(), v.trim().trim_matches('"')),
                None => continue,
            }
        } else if let Some((k, v)) = line.split_once('=') {
            (k.trim(), v.trim())
        } else if line.contains(',') {
            // report rows other than the echoed configuration
            continue;
        } else {
            return Err(config_err(format!(
                "{}: line {}: expected `key=value`",
                source.display(),
                k + 1
            )));
        };
        if !KEYS.contains(&key) {
            return Err(config_err(format!(
                "{}: line {}: unknown key `{key}`",
                source.display(),
                k + 1
            )));
        }
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}

/// Effective settings: config file first, then command-line overrides.
pub fn merged_settings(cli: &Cli) -> CliResult<BTreeMap<String, String>> {
    let mut map = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| DepthError::Io {
                path: path.clone(),
                source: e,
            })?;
            parse_config_text(&text, path)?
        }
        None => BTreeMap::new(),
    };
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    set("family", cli.family.clone());
    set("data", path(&cli.data));
    set("response", path(&cli.response));
    if !cli.params.is_empty() {
        let joined: Vec<String> = cli.params.iter().map(|p| p.display().to_string()).collect();
        set("param", Some(joined.join(";")));
    }
    set("loadings", path(&cli.loadings));
    set("center", path(&cli.center));
    set("lambda", cli.lambda.map(|v| v.to_string()));
    set("q", cli.q.map(|v| v.to_string()));
    set("rank", cli.rank.map(|v| v.to_string()));
    set("rule", cli.rule.clone());
    set("loss", cli.loss.clone());
    set("kappa_sign", cli.kappa_sign.map(|v| v.to_string()));
    set("rho", cli.rho.map(|v| v.to_string()));
    set("budget", cli.budget.map(|v| v.to_string()));
    set("seed", cli.seed.map(|v| v.to_string()));
    set("solver.restarts", cli.restarts.map(|v| v.to_string()));
    set("out", path(&cli.out));
    set("param_out", path(&cli.param_out));
    Ok(map)
}

/// Validated settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub family: Family,
    pub data: PathBuf,
    pub response: Option<PathBuf>,
    pub params: Vec<PathBuf>,
    pub loadings: Option<PathBuf>,
    pub center: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub q: Option<usize>,
    pub rank: Option<usize>,
    pub rule: RuleKind,
    pub loss: Loss,
    pub kappa_sign: f64,
    pub rho: Option<f64>,
    pub budget: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub out: Option<PathBuf>,
    pub param_out: Option<PathBuf>,
    /// Settings as given, echoed into the report.
    pub echo: BTreeMap<String, String>,
}

fn parse_value<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> CliResult<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| config_err(format!("{key}: cannot parse `{v}`"))),
    }
}

impl RunConfig {
    pub fn from_settings(task: Task, map: BTreeMap<String, String>) -> CliResult<Self> {
        let family: Family = map
            .get("family")
            .ok_or_else(|| config_err("family: required"))?
            .parse()?;
        let data = map
            .get("data")
            .map(PathBuf::from)
            .ok_or_else(|| config_err("data: required"))?;
        let params: Vec<PathBuf> = map
            .get("param")
            .map(|s| s.split(';').filter(|p| !p.is_empty()).map(PathBuf::from).collect())
            .unwrap_or_default();
        let rule = match map.get("rule") {
            Some(r) => r.parse().map_err(|e: DepthError| config_err(format!("rule: {e}")))?,
            None => RuleKind::Soft,
        };
        let loss = match map.get("loss") {
            Some(l) => l.parse().map_err(|e: DepthError| config_err(format!("loss: {e}")))?,
            None => Loss::Squared,
        };
        let mut solver = SolverConfig::default();
        macro_rules! solver_field {
            ($key:literal, $field:ident) => {
                if let Some(v) = parse_value(&map, $key)? {
                    solver.$field = v;
                }
            };
        }
        solver_field!("solver.restarts", restarts);
        solver_field!("solver.bandwidth_start", bandwidth_start);
        solver_field!("solver.bandwidth_end", bandwidth_end);
        solver_field!("solver.stages", stages);
        solver_field!("solver.max_iters", max_iters);
        solver_field!("solver.step_init", step_init);
        solver_field!("solver.step_shrink", step_shrink);
        solver_field!("solver.zero_tol", zero_tol);
        solver_field!("solver.pair_cap", pair_cap);
        solver_field!("solver.random_seeds", random_seeds);
        solver_field!("solver.polish_rounds", polish_rounds);
        if let Some(s) = map.get("solver.surrogate") {
            solver.surrogate = s
                .parse::<Surrogate>()
                .map_err(|e| config_err(format!("solver.surrogate: {e}")))?;
        }
        let seed = parse_value(&map, "seed")?.unwrap_or(0);
        solver.seed = seed;
        solver
            .validate()
            .map_err(|e| config_err(format!("solver: {e}")))?;
        let cfg = RunConfig {
            task,
            family,
            data,
            response: map.get("response").map(PathBuf::from),
            params,
            loadings: map.get("loadings").map(PathBuf::from),
            center: map.get("center").map(PathBuf::from),
            lambda: parse_value(&map, "lambda")?,
            q: parse_value(&map, "q")?,
            rank: parse_value(&map, "rank")?,
            rule,
            loss,
            kappa_sign: parse_value(&map, "kappa_sign")?.unwrap_or(1.0),
            rho: parse_value(&map, "rho")?,
            budget: parse_value(&map, "budget")?.unwrap_or(500),
            seed,
            solver,
            out: map.get("out").map(PathBuf::from),
            param_out: map.get("param_out").map(PathBuf::from),
            echo: map,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let f = self.family;
        if f.needs_response() && self.response.is_none() {
            return Err(config_err(format!("response: required for family {f:?}")));
        }
        if f == Family::Rrr && self.rank.is_none() {
            return Err(config_err("rank: required for family rrr"));
        }
        if matches!(f, Family::ThetaSharp | Family::SparseRrr) && self.q.is_none() {
            return Err(config_err("q: required for this family"));
        }
        if f == Family::SparseRrr && self.loadings.is_none() {
            return Err(config_err("loadings: required for family sparse_rrr"));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(config_err("lambda: must be finite and nonnegative"));
            }
        }
        if let Some(r) = self.rho {
            if !(r.is_finite() && r > 0.0) {
                return Err(config_err("rho: must be finite and positive"));
            }
        }
        if self.budget == 0 {
            return Err(config_err("budget: must be at least 1"));
        }
        let fit_family = matches!(f, Family::Rrr | Family::Theta | Family::ThetaSharp);
        match self.task {
            Task::Depth | Task::Check if self.params.len() != 1 => {
                Err(config_err("param: exactly one parameter file required"))
            }
            Task::Rank if self.params.len() < 2 => {
                Err(config_err("param: rank needs at least two candidate files"))
            }
            Task::Fit | Task::Check if !fit_family => Err(config_err(format!(
                "family: {} supports rrr, theta and theta_sharp only",
                self.task.name()
            ))),
            Task::Deepest if !matches!(f, Family::Rrr | Family::ThetaSharp) => {
                Err(config_err("family: deepest supports rrr and theta_sharp only"))
            }
            _ => Ok(()),
        }
    }

    fn rho_for(&self, x: &DMatrix<f64>) -> f64 {
        self.rho.unwrap_or_else(|| default_rho(x, self.loss))
    }
}

/// `1.01 · L‖X‖₂²`, or 1 for a null design.
pub fn default_rho(x: &DMatrix<f64>, loss: Loss) -> f64 {
    let xn = spectral_norm(x);
    let rho = 1.01 * loss.lipschitz() * xn * xn;
    if rho > 0.0 {
        rho
    } else {
        1.0
    }
}

struct Inputs {
    x: DMatrix<f64>,
    y: Option<DMatrix<f64>>,
    loadings: Option<DMatrix<f64>>,
    center: Option<DVector<f64>>,
}

impl Inputs {
    fn load(cfg: &RunConfig) -> CliResult<Self> {
        let x = load_csv(&cfg.data)?.data;
        let y = match &cfg.response {
            Some(p) => {
                let y = load_csv(p)?.data;
                if y.nrows() != x.nrows() {
                    return Err(config_err(format!(
                        "response: {} rows but data has {}",
                        y.nrows(),
                        x.nrows()
                    )));
                }
                Some(y)
            }
            None => None,
        };
        let loadings = cfg.loadings.as_ref().map(load_param).transpose()?;
        let center = match &cfg.center {
            Some(p) => Some(column(&load_param(p)?, "center")?),
            None => None,
        };
        Ok(Inputs {
            x,
            y,
            loadings,
            center,
        })
    }

    fn y(&self) -> &DMatrix<f64> {
        self.y.as_ref().expect("response validated")
    }

    fn y_vec(&self) -> CliResult<DVector<f64>> {
        column(self.y(), "response")
    }
}

/// A matrix with a single row or column as a vector.
fn column(m: &DMatrix<f64>, what: &str) -> CliResult<DVector<f64>> {
    if m.ncols() == 1 {
        Ok(m.column(0).clone_owned())
    } else if m.nrows() == 1 {
        Ok(m.row(0).transpose())
    } else {
        Err(config_err(format!(
            "{what}: expected a vector, got a {}×{} matrix",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Family-independent summary of one depth evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub n: usize,
    pub normalized: f64,
    pub certificate: Certificate,
    pub direction: DVector<f64>,
    pub ambient_dim: usize,
    pub reduced_dim: usize,
    pub slack_kind: &'static str,
    pub slack_norm: f64,
    pub shift: f64,
}

impl Evaluation {
    fn from_depth(problem: &DepthProblem, r: DepthResult) -> Self {
        let (slack_kind, slack_norm) = match &r.slack {
            None => ("none", 0.0),
            Some(Slack::Vector(s)) => ("vector", s.amax()),
            Some(Slack::Ray(s)) => ("ray", s.amax()),
            Some(Slack::Matrix(l)) => ("spectral", spectral_norm(l)),
        };
        Evaluation {
            value: r.count as f64,
            n: r.n,
            normalized: r.normalized,
            certificate: r.certificate,
            direction: r.direction,
            ambient_dim: problem.ambient_dim(),
            reduced_dim: problem.reduced_dim(),
            slack_kind,
            slack_norm,
            shift: r.shift,
        }
    }

    fn from_order2(r: Order2Result, m: usize) -> Self {
        Evaluation {
            value: r.value,
            n: r.n,
            normalized: r.normalized,
            certificate: r.certificate,
            direction: r.direction,
            ambient_dim: m,
            reduced_dim: m.saturating_sub(1),
            slack_kind: "none",
            slack_norm: 0.0,
            shift: 0.0,
        }
    }
}

fn unit(param: &DMatrix<f64>) -> CliResult<UnitVector> {
    Ok(UnitVector::new(column(param, "param")?)?)
}

/// Scaled design `X/√ρ` and coefficients `√ρ β` used by the penalized family.
fn scaled_theta(cfg: &RunConfig, inp: &Inputs, beta: &DVector<f64>) -> CliResult<(DMatrix<f64>, DVector<f64>, ThresholdRule)> {
    let rho = cfg.rho_for(&inp.x);
    let s = rho.sqrt();
    let y = inp.y_vec()?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => default_lambda(&inp.x, &y)? / s,
    };
    let rule = ThresholdRule::new(cfg.rule, lambda)?;
    Ok((&inp.x / s, beta * s, rule))
}

fn depth_problem(cfg: &RunConfig, inp: &Inputs, param: &DMatrix<f64>) -> CliResult<DepthProblem> {
    let x = &inp.x;
    Ok(match cfg.family {
        Family::Location => DepthProblem::unconstrained(location_influence(x, &column(param, "param")?)?)?,
        Family::Regression => {
            let y = inp.y();
            let set = if y.ncols() == 1 {
                regression_influence(x, &inp.y_vec()?, &column(param, "param")?)?
            } else {
                rrr_influence(x, y, param)?
            };
            DepthProblem::unconstrained(set)?
        }
        Family::Nonneg => nonnegative_problem(x, &inp.y_vec()?, &column(param, "param")?)?,
        Family::Watson => watson_problem(x, &unit(param)?)?,
        Family::Vmf => vmf_problem(x, &unit(param)?)?,
        Family::Pc => pc_problem(x, inp.center.as_ref(), &StiefelPoint::new(param.clone())?)?,
        Family::Oc => oc_problem(x, inp.center.as_ref(), &StiefelPoint::new(param.clone())?)?,
        Family::Theta => {
            let (xs, beta, rule) = scaled_theta(cfg, inp, &column(param, "param")?)?;
            theta_problem(&xs, &inp.y_vec()?, &beta, &rule, cfg.loss)?
        }
        Family::ThetaSharp => theta_sharp_problem(
            x,
            &inp.y_vec()?,
            &column(param, "param")?,
            cfg.q.expect("validated"),
            cfg.loss,
        )?,
        Family::Rrr => rrr_problem(x, inp.y(), param, cfg.rank.expect("validated"))?,
        Family::SparseRrr => {
            let u = StiefelPoint::new(inp.loadings.clone().expect("validated"))?;
            sparse_rrr_problem(x, inp.y(), param, &u, cfg.q.expect("validated"))?
        }
        Family::Vmf2 | Family::Watson2 => unreachable!("order-2 families have no single problem"),
    })
}

fn evaluate(cfg: &RunConfig, inp: &Inputs, param: &DMatrix<f64>) -> CliResult<Evaluation> {
    let m = inp.x.ncols();
    match cfg.family {
        Family::Vmf2 => Ok(Evaluation::from_order2(
            vmf_order2_depth(&inp.x, &unit(param)?, &cfg.solver)?,
            m,
        )),
        Family::Watson2 => Ok(Evaluation::from_order2(
            watson_order2_depth(&inp.x, &unit(param)?, cfg.kappa_sign, &cfg.solver)?,
            m,
        )),
        _ => {
            let problem = depth_problem(cfg, inp, param)?;
            let result = solve_depth(&problem, &cfg.solver)?;
            Ok(Evaluation::from_depth(&problem, result))
        }
    }
}

/// Output of one command: CSV report and a human summary.
#[derive(Debug, Clone, Default)]
pub struct Report {
    rows: Vec<Vec<String>>,
    summary: String,
    /// Path the CSV report was written to, if any.
    pub written_to: Option<PathBuf>,
}

impl Report {
    fn field(&mut self, key: &str, value: impl ToString) {
        self.rows.push(vec![key.to_string(), value.to_string()]);
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn vector(&mut self, key: &str, v: &DVector<f64>) {
        let mut cells = vec![key.to_string()];
        cells.extend(v.iter().map(|x| format!("{x}")));
        self.rows.push(cells);
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }

    /// The report as CSV text.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_writer(Vec::new());
        for r in &self.rows {
            w.write_record(r).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 report")
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    /// Report rows as written to CSV.
    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    /// Second cell of the first row whose first cell is `key`.
    pub fn value(&self, key: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.first().map(String::as_str) == Some(key))
            .and_then(|r| r.get(1))
            .map(String::as_str)
    }
}

fn echo_config(report: &mut Report, cfg: &RunConfig) {
    for (k, v) in &cfg.echo {
        report.field(&format!("config.{k}"), v);
    }
}

fn write_evaluation(report: &mut Report, e: &Evaluation) {
    report.field("n", e.n);
    report.field("ambient_dim", e.ambient_dim);
    report.field("reduced_dim", e.reduced_dim);
    report.field("depth", e.value);
    report.field("normalized", e.normalized);
    report.field("certificate", e.certificate);
    report.vector("direction", &e.direction);
    report.field("slack", e.slack_kind);
    report.field("slack_norm", e.slack_norm);
    report.field("shift", e.shift);
}

fn header(report: &mut Report, cfg: &RunConfig) {
    report.field("task", cfg.task.name());
    report.field("family", cfg.echo.get("family").map(String::as_str).unwrap_or(""));
    report.field("seed", cfg.seed);
}

pub fn cmd_depth(cfg: &RunConfig) -> CliResult<Report> {
    let inp = Inputs::load(cfg)?;
    let param = load_param(&cfg.params[0])?;
    let e = evaluate(cfg, &inp, &param)?;
    let mut report = Report::default();
    header(&mut report, cfg);
    write_evaluation(&mut report, &e);
    echo_config(&mut report, cfg);
    report.line(format!(
        "depth {} of {} (normalized {:.6}), certificate {}",
        e.value, e.n, e.normalized, e.certificate
    ));
    Ok(report)
}

pub fn cmd_rank(cfg: &RunConfig) -> CliResult<Report> {
    let inp = Inputs::load(cfg)?;
    let params: Vec<DMatrix<f64>> = cfg.params.iter().map(load_param).collect::<Result<_, _>>()?;
    let shape = params[0].shape();
    if let Some(k) = params.iter().position(|p| p.shape() != shape) {
        return Err(config_err(format!(
            "param: {} has shape {:?}, expected {:?}",
            cfg.params[k].display(),
            params[k].shape(),
            shape
        )));
    }
    let mut scored = Vec::with_capacity(params.len());
    for (k, p) in params.iter().enumerate() {
        scored.push((k, evaluate(cfg, &inp, p)?));
    }
    // stable sort keeps input order among equal depths
    scored.sort_by(|a, b| b.1.normalized.total_cmp(&a.1.normalized));
    let mut report = Report::default();
    header(&mut report, cfg);
    report.field("candidates", params.len());
    report.row(
        ["position", "input_index", "param", "depth", "n", "normalized", "certificate"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for (pos, (k, e)) in scored.iter().enumerate() {
        report.row(vec![
            (pos + 1).to_string(),
            k.to_string(),
            cfg.params[*k].display().to_string(),
            e.value.to_string(),
            e.n.to_string(),
            e.normalized.to_string(),
            e.certificate.to_string(),
        ]);
        report.line(format!(
            "{:>3}. {} depth {} (normalized {:.6})",
            pos + 1,
            cfg.params[*k].display(),
            e.value,
            e.normalized
        ));
    }
    echo_config(&mut report, cfg);
    Ok(report)
}

pub fn cmd_check(cfg: &RunConfig) -> CliResult<Report> {
    let inp = Inputs::load(cfg)?;
    let param = load_param(&cfg.params[0])?;
    let rho = cfg.rho_for(&inp.x);
    let residual = match cfg.family {
        Family::Rrr => check_rrr_fixed_point(&param, &inp.x, inp.y(), cfg.rank.expect("validated"), rho)?,
        Family::Theta => {
            let (xs, beta, rule) = scaled_theta(cfg, &inp, &column(&param, "param")?)?;
            check_theta_fixed_point(&beta, &xs, &inp.y_vec()?, cfg.loss, &rule)?.residual
        }
        Family::ThetaSharp => check_quantile_fixed_point(
            &column(&param, "param")?,
            &inp.x,
            &inp.y_vec()?,
            cfg.loss,
            cfg.q.expect("validated"),
            rho,
        )?,
        _ => unreachable!("validated family"),
    };
    let pass = residual < FIXED_POINT_TOL;
    let mut report = Report::default();
    header(&mut report, cfg);
    report.field("rho", rho);
    report.field("residual", residual);
    report.field("tolerance", FIXED_POINT_TOL);
    report.field("pass", pass);
    echo_config(&mut report, cfg);
    report.line(format!(
        "fixed-point residual {residual:e}: {}",
        if pass { "pass" } else { "fail" }
    ));
    Ok(report)
}

fn emit_param(report: &mut Report, cfg: &RunConfig, param: &DMatrix<f64>) -> CliResult<()> {
    report.field("param_rows", param.nrows());
    report.field("param_cols", param.ncols());
    for (i, row) in param.row_iter().enumerate() {
        let mut cells = vec![format!("param.{i}")];
        cells.extend(row.iter().map(|x| format!("{x}")));
        report.row(cells);
    }
    if let Some(path) = &cfg.param_out {
        write_text(path, &format_param(param))?;
    }
    Ok(())
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<Report> {
    let inp = Inputs::load(cfg)?;
    let rho = cfg.rho_for(&inp.x);
    let (param, iterations, converged, objective, residual, degenerate) = match cfg.family {
        Family::Rrr => {
            let f = fit_rrr(&inp.x, inp.y(), cfg.rank.expect("validated"))?;
            (f.parameter, f.iterations, f.converged, f.objective, f.fixed_point_residual, f.degenerate)
        }
        Family::Theta => {
            let y = inp.y_vec()?;
            let lambda = match cfg.lambda {
                Some(l) => l,
                None => default_lambda(&inp.x, &y)? / rho.sqrt(),
            };
            let rule = ThresholdRule::new(cfg.rule, lambda)?;
            let f = fit_tisp(&inp.x, &y, &rule, cfg.loss, rho)?.fit;
            let p = DMatrix::from_column_slice(f.parameter.len(), 1, f.parameter.as_slice());
            (p, f.iterations, f.converged, f.objective, f.fixed_point_residual, f.degenerate)
        }
        Family::ThetaSharp => {
            let f = fit_piq(&inp.x, &inp.y_vec()?, cfg.q.expect("validated"), cfg.loss, rho)?;
            let p = DMatrix::from_column_slice(f.parameter.len(), 1, f.parameter.as_slice());
            (p, f.iterations, f.converged, f.objective, f.fixed_point_residual, f.degenerate)
        }
        _ => unreachable!("validated family"),
    };
    let mut report = Report::default();
    header(&mut report, cfg);
    report.field("rho", rho);
    report.field("iterations", iterations);
    report.field("converged", converged);
    report.field("objective", objective);
    report.field("residual", residual);
    report.field("degenerate", degenerate);
    emit_param(&mut report, cfg, &param)?;
    echo_config(&mut report, cfg);
    report.line(format!(
        "fit after {iterations} iterations, converged {converged}, residual {residual:e}"
    ));
    Ok(report)
}

pub fn cmd_deepest(cfg: &RunConfig) -> CliResult<Report> {
    let inp = Inputs::load(cfg)?;
    let mut report = Report::default();
    header(&mut report, cfg);
    let (best, outcome_fields, base_count, best_count, n) = match cfg.family {
        Family::Rrr => {
            let r = cfg.rank.expect("validated");
            let base = fit_rrr(&inp.x, inp.y(), r)?.parameter;
            let sampler = RrrSampler {
                x: &inp.x,
                y: inp.y(),
                r,
                base,
            };
            let depth_fn = |b: &DMatrix<f64>| {
                solve_depth(&rrr_problem(&inp.x, inp.y(), b, r)?, &cfg.solver)
            };
            let o = deepest_search(depth_fn, &sampler, cfg.budget, cfg.seed)?;
            let n = o.depth.n;
            (
                o.best,
                (o.best_index, o.evaluated, o.skipped),
                o.base_depth.count,
                o.depth.count,
                n,
            )
        }
        Family::ThetaSharp => {
            let q = cfg.q.expect("validated");
            let y = inp.y_vec()?;
            let rho = cfg.rho_for(&inp.x);
            let base = fit_piq(&inp.x, &y, q, cfg.loss, rho)?.parameter;
            let sampler = SparseSampler {
                x: &inp.x,
                y: &y,
                q,
                loss: cfg.loss,
                base,
            };
            let depth_fn = |b: &DVector<f64>| {
                solve_depth(&theta_sharp_problem(&inp.x, &y, b, q, cfg.loss)?, &cfg.solver)
            };
            let o = deepest_search(depth_fn, &sampler, cfg.budget, cfg.seed)?;
            let p = DMatrix::from_column_slice(o.best.len(), 1, o.best.as_slice());
            let n = o.depth.n;
            (
                p,
                (o.best_index, o.evaluated, o.skipped),
                o.base_depth.count,
                o.depth.count,
                n,
            )
        }
        _ => unreachable!("validated family"),
    };
    report.field("budget", cfg.budget);
    report.field("n", n);
    report.field("base_depth", base_count);
    report.field("best_depth", best_count);
    report.field("best_index", outcome_fields.0);
    report.field("evaluated", outcome_fields.1);
    report.field("skipped", outcome_fields.2);
    emit_param(&mut report, cfg, &best)?;
    echo_config(&mut report, cfg);
    report.line(format!(
        "deepest candidate #{} with depth {best_count} of {n} (base fit {base_count})",
        outcome_fields.0
    ));
    Ok(report)
}

/// Runs one command and writes its report to `--out` when given.
pub fn run(cli: &Cli) -> CliResult<Report> {
    let settings = merged_settings(cli)?;
    let cfg = RunConfig::from_settings(cli.task, settings)?;
    let report = match cfg.task {
        Task::Depth => cmd_depth(&cfg)?,
        Task::Rank => cmd_rank(&cfg)?,
        Task::Check => cmd_check(&cfg)?,
        Task::Fit => cmd_fit(&cfg)?,
        Task::Deepest => cmd_deepest(&cfg)?,
    };
    let mut report = report;
    if let Some(out) = &cfg.out {
        write_text(out, &report.to_csv())?;
        report.written_to = Some(out.clone());
    }
    Ok(report)
}

/// Applies `DEPTHFORGE_THREADS` to the global thread pool.
pub fn configure_threads(value: Option<&str>) -> CliResult<()> {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_err(format!("DEPTHFORGE_THREADS: expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_err(format!("DEPTHFORGE_THREADS: {e}")))
}

/// Human-readable block printed after a successful run.
pub fn render_summary(report: &Report, seconds: f64) -> String {
    let mut s = report.summary().to_string();
    let _ = writeln!(s, "wall time {seconds:.3} s");
    s
}
