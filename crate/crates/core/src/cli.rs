//! Command-line front end: argument definitions, series CSV I/O and JSON
//! reports.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 failed
//! `--check`.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::Error;
use crate::estimation::{Method, Series};
use crate::montecarlo::{
    check_table1, mc_mspe, replicate_table1, simulate, Estimator, Execution, Innovation, McConfig, Table1Tolerance,
    DEFAULT_BURN_IN,
};
use crate::selection::{bic_order, default_bic_penalty, forecast, select_predictor, subset_select};
use crate::theory::{f1, f2, h_step_order, loss_table, optimal_set, sigma_h2, ArModel};

#[derive(Debug, Parser)]
#[command(name = "ar-multistep", version, about = "Multistep AR predictor selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Limiting losses, h-step order and optimal candidates of a known model.
    Theory(TheoryArgs),
    /// Simulate a path to CSV, with a JSON sidecar describing it.
    Simulate(SimulateArgs),
    /// Choose order and method for a series by accumulated prediction errors.
    Select(SelectArgs),
    /// Multistep BIC order for a series.
    Bic(BicArgs),
    /// Direct order-one versus plug-in order-two ratio table at horizon 3.
    ReplicateTable1(Table1Args),
    /// Monte Carlo MSPE of one candidate predictor.
    Mspe(MspeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// AR coefficients a_1,...,a_p.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub coeffs: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
}

impl ModelArgs {
    fn model(&self) -> Result<ArModel, Error> {
        ArModel::new(self.coeffs.clone(), self.sigma2)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub h: usize,
    #[arg(long)]
    pub k_max: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Law {
    Normal,
    Uniform,
    StudentT,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = Law::Normal)]
    pub innovation: Law,
    /// Degrees of freedom for `student-t` (must exceed 8).
    #[arg(long, default_value_t = 10.0)]
    pub nu: f64,
}

impl SimArgs {
    fn innovation(&self) -> Innovation {
        match self.innovation {
            Law::Normal => Innovation::Normal,
            Law::Uniform => Innovation::Uniform,
            Law::StudentT => Innovation::StudentT { nu: self.nu },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Also write the innovations as an `eps` column.
    #[arg(long)]
    pub with_eps: bool,
    /// Series CSV path; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub h: usize,
    #[arg(long)]
    pub k_max: usize,
    /// Search all lag subsets of 1..=K instead of dense orders.
    #[arg(long)]
    pub subset: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BicArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub h: usize,
    #[arg(long)]
    pub k_max: usize,
    /// Penalty c_n per parameter; defaults to log n.
    #[arg(long)]
    pub penalty: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExecArgs {
    /// Run replications on one thread.
    #[arg(long)]
    pub sequential: bool,
}

impl ExecArgs {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorArg {
    SquaredError,
    Conditional,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::SquaredError => Estimator::SquaredError,
            EstimatorArg::Conditional => Estimator::Conditional,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Table1Args {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Defaults to 20000, or 4000 with `--reduced`.
    #[arg(long)]
    pub reps: Option<usize>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Conditional)]
    pub estimator: EstimatorArg,
    /// Exit with code 4 unless every row is within tolerance.
    #[arg(long)]
    pub check: bool,
    /// Reduced replication count with widened tolerance.
    #[arg(long)]
    pub reduced: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MspeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub h: usize,
    /// Lags of the candidate, e.g. `1,2` or `1,3`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lags: Vec<usize>,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub reps: usize,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::SquaredError)]
    pub estimator: EstimatorArg,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    PlugIn,
    Direct,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::PlugIn => Method::PlugIn,
            MethodArg::Direct => Method::Direct,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] Error),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Format(String),
    #[error("acceptance check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) if e.is_numerical() => 3,
            CliError::CheckFailed(_) => 4,
            _ => 2,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// JSON envelope of every report.
#[derive(Debug, Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub result: R,
}

fn emit<C: Serialize, R: Serialize>(
    command: &str,
    config: &C,
    result: R,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let report = Report {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        result,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Format(e.to_string()))?;
    write_text(&text, out)
}

fn write_text(text: &str, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| CliError::io(path, e)),
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `index,x[,eps]` rows, 17 significant digits.
pub fn write_series(path: &Path, series: &Series, eps: Option<&[f64]>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| CliError::io(path, e);
    if eps.is_some() {
        w.write_record(["index", "x", "eps"]).map_err(io_err)?;
    } else {
        w.write_record(["index", "x"]).map_err(io_err)?;
    }
    for (i, x) in series.values().iter().enumerate() {
        let idx = (i + 1).to_string();
        match eps {
            Some(e) => w.write_record([idx, sci(*x), sci(e[i])]),
            None => w.write_record([idx, sci(*x)]),
        }
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a series CSV; the `eps` column is returned when present.
pub fn read_series(path: &Path) -> Result<(Series, Option<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let headers = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let xi = col("x").ok_or_else(|| CliError::Format(format!("{}: missing `x` column", path.display())))?;
    let ei = col("eps");
    let mut xs = Vec::new();
    let mut es = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let parse = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Format(format!("{}: bad value on data row {}", path.display(), line + 1)))
        };
        xs.push(parse(xi)?);
        if let Some(i) = ei {
            es.push(parse(i)?);
        }
    }
    Ok((Series::new(xs)?, ei.map(|_| es)))
}

#[derive(Debug, Serialize)]
struct TheoryReport {
    p1: usize,
    p_h: usize,
    sigma_h2: f64,
    /// `f1(h, k)` for `k >= p1`, else null.
    f1: Vec<Option<f64>>,
    /// `f2(h, k)` for `k >= p_h`, else null.
    f2: Vec<Option<f64>>,
    loss_table: crate::theory::LossTable,
    optimal_set: Vec<(usize, Method)>,
    /// `f2(h, p_h) / f1(h, p1)`.
    direct_to_plugin_ratio: f64,
}

fn cmd_theory(a: &TheoryArgs) -> Result<(), CliError> {
    let model = a.model.model()?;
    let h = a.h;
    let p1 = model.order();
    let p_h = h_step_order(&model, h)?;
    let table = loss_table(&model, h, a.k_max)?;
    let report = TheoryReport {
        p1,
        p_h,
        sigma_h2: sigma_h2(&model, h),
        f1: (1..=a.k_max).map(|k| f1(&model, h, k).ok()).collect(),
        f2: (1..=a.k_max)
            .map(|k| if k >= p_h { f2(&model, h, k).ok() } else { None })
            .collect(),
        optimal_set: optimal_set(&table),
        loss_table: table,
        direct_to_plugin_ratio: f2(&model, h, p_h)? / f1(&model, h, p1)?,
    };
    emit("theory", a, report, &a.output.out)
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    coeffs: &'a [f64],
    sigma2: f64,
    n: usize,
    seed: u64,
    burn_in: usize,
    innovation: Innovation,
    series: String,
    with_eps: bool,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    // a zero variance is simulated as a unit-variance model with zero shocks
    let (model, innovation) = if a.model.sigma2 == 0.0 {
        (ArModel::new(a.model.coeffs.clone(), 1.0)?, Innovation::Zero)
    } else {
        (a.model.model()?, a.sim.innovation())
    };
    let path = simulate(&model, a.n, a.sim.burn_in, a.sim.seed, innovation)?;
    write_series(&a.out, &path.series, a.with_eps.then_some(path.innovations.as_slice()))?;
    let sidecar = Sidecar {
        coeffs: &a.model.coeffs,
        sigma2: a.model.sigma2,
        n: a.n,
        seed: a.sim.seed,
        burn_in: a.sim.burn_in,
        innovation,
        series: a.out.display().to_string(),
        with_eps: a.with_eps,
    };
    emit("simulate", a, sidecar, &Some(a.out.with_extension("json")))
}

#[derive(Debug, Serialize)]
struct SelectReport {
    n: usize,
    forecast: f64,
    /// Coefficients on lags `1..=max lag` of the chosen predictor.
    coefficients: Vec<f64>,
    selection: crate::selection::SelectionResult,
}

fn cmd_select(a: &SelectArgs) -> Result<(), CliError> {
    let (series, _) = read_series(&a.input)?;
    let result = if a.subset {
        subset_select(&series, a.h, a.k_max)?
    } else {
        select_predictor(&series, a.h, a.k_max)?
    };
    let lags = result.chosen.lags();
    let coef = match result.method {
        Method::PlugIn => crate::estimation::fit_plugin_lags(&series, a.h, &lags)?,
        Method::Direct => crate::estimation::fit_direct_lags(&series, a.h, &lags)?,
    };
    let report = SelectReport {
        n: series.len(),
        forecast: forecast(&series, &result)?,
        coefficients: coef,
        selection: result,
    };
    emit("select", a, report, &a.output.out)
}

fn cmd_bic(a: &BicArgs) -> Result<(), CliError> {
    let (series, _) = read_series(&a.input)?;
    let penalty = a.penalty.unwrap_or_else(|| default_bic_penalty(series.len()));
    let result = bic_order(&series, a.h, a.k_max, penalty)?;
    emit("bic", a, result, &a.output.out)
}

#[derive(Debug, Serialize)]
struct Table1Report {
    table: crate::montecarlo::Table1,
    tolerance: Table1Tolerance,
    checks: Vec<crate::montecarlo::Table1RowCheck>,
    passed: bool,
}

fn table1_csv(report: &Table1Report) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt_err = |e: csv::Error| CliError::Format(e.to_string());
    w.write_record([
        "a1",
        "a2",
        "sigma3_sq",
        "excess_direct",
        "excess_direct_se",
        "excess_plugin",
        "excess_plugin_se",
        "ratio",
        "ratio_se",
        "limit",
        "reference",
        "passed",
    ])
    .map_err(fmt_err)?;
    for (r, c) in report.table.rows.iter().zip(&report.checks) {
        let mut rec: Vec<String> = [
            r.coeffs[0],
            r.coeffs[1],
            r.sigma3_sq,
            r.excess_direct,
            r.excess_direct_se,
            r.excess_plugin,
            r.excess_plugin_se,
            r.ratio,
            r.ratio_se,
            r.limit,
            c.reference,
        ]
        .iter()
        .map(|v| sci(*v))
        .collect();
        rec.push(c.passed().to_string());
        w.write_record(&rec).map_err(fmt_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Format(e.to_string()))
}

fn cmd_table1(a: &Table1Args) -> Result<(), CliError> {
    let (default_reps, tolerance) = if a.reduced {
        (Table1Tolerance::REDUCED_REPS, Table1Tolerance::reduced())
    } else {
        (Table1Tolerance::FULL_REPS, Table1Tolerance::full())
    };
    let mut cfg = McConfig::new(a.n, a.reps.unwrap_or(default_reps), a.sim.seed).with_execution(a.exec.execution());
    cfg.burn_in = a.sim.burn_in;
    cfg.innovation = a.sim.innovation();
    let table = replicate_table1(&cfg, a.estimator.into())?;
    let checks = check_table1(&table, &tolerance);
    let passed = checks.iter().all(|c| c.passed());
    let report = Table1Report {
        table,
        tolerance,
        checks,
        passed,
    };
    match a.format {
        Format::Json => emit("replicate-table1", a, &report, &a.output.out)?,
        Format::Csv => write_text(table1_csv(&report)?.trim_end(), &a.output.out)?,
    }
    if a.check && !passed {
        let bad: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| format!("a2={} ratio {:.3}", c.a2, c.ratio))
            .collect();
        return Err(CliError::CheckFailed(bad.join(", ")));
    }
    Ok(())
}

fn cmd_mspe(a: &MspeArgs) -> Result<(), CliError> {
    let model = a.model.model()?;
    let mut cfg = McConfig::new(a.n, a.reps, a.sim.seed).with_execution(a.exec.execution());
    cfg.burn_in = a.sim.burn_in;
    cfg.innovation = a.sim.innovation();
    let est = mc_mspe(&model, a.h, &a.lags, a.method.into(), a.estimator.into(), &cfg)?;
    emit("mspe", a, est, &a.output.out)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Theory(a) => cmd_theory(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Select(a) => cmd_select(a),
        Command::Bic(a) => cmd_bic(a),
        Command::ReplicateTable1(a) => cmd_table1(a),
        Command::Mspe(a) => cmd_mspe(a),
    }
}
