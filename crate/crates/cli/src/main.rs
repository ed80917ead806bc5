use airy_decay::acceptance::{criterion, run_selected, Outcome, Status};
use airy_decay::airy1kernel::{CALIBRATION_SAFETY, DEFAULT_C2, DEFAULT_C_R2};
use airy_decay::covariance::{effective_window, hoeffding_cov, RELIABLE_LOWER};
use airy_decay::lpp::{
    mc_cov_star, mc_cross_check, mc_exceedance, mc_var_star, ExceedanceKind, McSummary,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const SCHEMA_VERSION: u32 = 1;
const THREADS_ENV: &str = "AIRY_DECAY_THREADS";

#[derive(Parser)]
#[command(
    name = "airy-decay",
    version,
    about = "Airy1 two-point covariance and last-passage Monte Carlo"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Covariance table over a sweep of u
    CovTable(CovTableArgs),
    /// Last-passage percolation estimators
    Lpp(LppArgs),
    /// Run the acceptance suite
    Validate(ValidateArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct CovTableArgs {
    #[arg(long, default_value_t = 0.5)]
    u_min: f64,
    #[arg(long, default_value_t = 4.0)]
    u_max: f64,
    #[arg(long, default_value_t = 0.5)]
    u_step: f64,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    window_lo: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    window_hi: f64,
    #[arg(long, default_value_t = 32)]
    grid_n: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum LppSub {
    /// Cov(L*(0), L*(u))
    Cov,
    /// Var(L*(0))
    Variance,
    /// Probability the geodesics from (0,0) and I(u) meet
    Coalesce,
    /// P(sup of the geodesic position >= u (2N)^{2/3})
    SupTransversal,
    /// P(geodesic endpoint position >= u (2N)^{2/3})
    Endpoint,
    /// Point-to-point lower tail at x = u
    LowerTail,
    /// Point-to-line upper tail at s = u
    UpperTail,
    /// Interval-to-line upper tail at s = u
    IntervalToLine,
    /// LPP covariance against the Airy1 covariance
    CrossCheck,
}

impl LppSub {
    fn kind(self) -> Option<ExceedanceKind> {
        Some(match self {
            LppSub::Coalesce => ExceedanceKind::Coalescence,
            LppSub::SupTransversal => ExceedanceKind::SupTransversal,
            LppSub::Endpoint => ExceedanceKind::Endpoint,
            LppSub::LowerTail => ExceedanceKind::LowerTailPp,
            LppSub::UpperTail => ExceedanceKind::UpperTailLine,
            LppSub::IntervalToLine => ExceedanceKind::IntervalToLine,
            _ => return None,
        })
    }

    fn name(self) -> String {
        self.to_possible_value().unwrap().get_name().to_string()
    }
}

#[derive(Args)]
struct LppArgs {
    #[arg(value_enum)]
    subcommand: LppSub,
    #[arg(long = "N", default_value_t = 400)]
    n: u64,
    #[arg(long, default_value_t = 1.0)]
    u: f64,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ValidateArgs {
    /// Skip the criteria marked slow
    #[arg(long)]
    quick: bool,
    /// Run only these criterion ids; the rest are reported as skipped
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<u8>>,
    /// Write a JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Argument(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Argument(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<airy_decay::Error> for CliError {
    fn from(e: airy_decay::Error) -> Self {
        match e {
            airy_decay::Error::Argument(_) | airy_decay::Error::Domain(_) => {
                CliError::Argument(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Argument(format!("cannot write {}: {e}", path.display()))
}

/// Everything needed to reproduce a run.
#[derive(Serialize)]
struct RunConfig {
    schema_version: u32,
    command: String,
    params: BTreeMap<String, Value>,
    seed: Option<u64>,
    output_path: Option<String>,
    format: Format,
    calibrated: BTreeMap<String, Value>,
    flags: Vec<String>,
}

impl RunConfig {
    fn new(command: &str, output: &OutputArgs, seed: Option<u64>) -> Self {
        let calibrated = BTreeMap::from([
            ("remainder_c2".to_string(), json!(DEFAULT_C2)),
            ("remainder_c".to_string(), json!(DEFAULT_C_R2)),
            ("calibration_safety".to_string(), json!(CALIBRATION_SAFETY)),
        ]);
        RunConfig {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            params: BTreeMap::new(),
            seed,
            output_path: output.out.as_ref().map(|p| p.display().to_string()),
            format: output.format,
            calibrated,
            flags: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.params.insert(key.to_string(), json!(value));
    }
}

/// A table: header plus rows of already formatted cells.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// JSON cannot hold non-finite numbers; they are written as strings.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn open(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(table: &Table, config: &RunConfig, output: &OutputArgs) -> Result<(), CliError> {
    let target = output.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let wrap = |e: io::Error| io_error(&target, e);
    let mut w = open(&output.out)?;
    match output.format {
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(&mut w);
            csv.write_record(&table.header).map_err(|e| wrap(e.into()))?;
            for row in &table.rows {
                csv.write_record(row.iter().map(cell_text))
                    .map_err(|e| wrap(e.into()))?;
            }
            csv.flush().map_err(wrap)?;
        }
        Format::Json => {
            let rows: Vec<BTreeMap<&str, &Value>> = table
                .rows
                .iter()
                .map(|r| table.header.iter().copied().zip(r).collect())
                .collect();
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "config": config,
                "rows": rows,
            });
            serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| wrap(e.into()))?;
            writeln!(w).map_err(wrap)?;
        }
    }
    w.flush().map_err(wrap)?;
    drop(w);
    let meta = serde_json::to_string_pretty(config).expect("config serialises");
    match &output.out {
        Some(p) => {
            let mut name = p.as_os_str().to_owned();
            name.push(".meta.json");
            let meta_path = PathBuf::from(name);
            std::fs::write(&meta_path, meta + "\n").map_err(|e| io_error(&meta_path, e))?;
        }
        None => eprintln!("{meta}"),
    }
    Ok(())
}

fn sweep_values(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0) || !(min <= max) || !min.is_finite() || !max.is_finite() {
        return Err(CliError::Argument(format!(
            "invalid sweep: u-min {min}, u-max {max}, u-step {step}"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| min + i as f64 * step).collect())
}

fn cov_table(args: &CovTableArgs) -> Result<(), CliError> {
    let us = sweep_values(args.u_min, args.u_max, args.u_step)?;
    let window = (args.window_lo, args.window_hi);
    let results = us
        .par_iter()
        .map(|&u| hoeffding_cov(u, window, args.grid_n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut config = RunConfig::new("cov-table", &args.output, None);
    config.param("u_min", args.u_min);
    config.param("u_max", args.u_max);
    config.param("u_step", args.u_step);
    config.param("window_lo", args.window_lo);
    config.param("window_hi", args.window_hi);
    config.param("grid_n", args.grid_n);
    config.param("integrated_window", effective_window(window));
    config.param("reliable_lower", RELIABLE_LOWER);
    let mut rows = Vec::new();
    for e in &results {
        if !e.reliable {
            config.flags.push(format!(
                "u = {}: unreliable (quad_err {:e} vs |cov| {:e})",
                e.u,
                e.quad_err,
                e.cov.abs().to_f64()
            ));
        }
        rows.push(vec![
            num(e.u),
            num(e.log_cov()),
            json!(e.cov.sign),
            num(e.window.0),
            num(e.window.1),
            num(e.quad_err),
            num(e.tail_budget),
            json!(e.regime.as_str()),
        ]);
    }
    let table = Table {
        header: vec![
            "u",
            "log_cov",
            "cov_sign",
            "window_alpha",
            "window_beta",
            "quad_err",
            "tail_budget",
            "regime",
        ],
        rows,
    };
    emit(&table, &config, &args.output)
}

fn summary_row(s: &McSummary, n: u64, u: f64, with_interval: bool) -> Vec<Value> {
    let mut row = vec![
        json!(s.estimand),
        json!(n),
        num(u),
        num(s.mean),
        num(s.stderr),
        json!(s.n_samples),
        json!(s.seed),
    ];
    if with_interval {
        let (lo, hi) = s.interval.unwrap_or((f64::NAN, f64::NAN));
        row.push(num(lo));
        row.push(num(hi));
    }
    row
}

fn lpp(args: &LppArgs) -> Result<(), CliError> {
    let mut config = RunConfig::new(&format!("lpp {}", args.subcommand.name()), &args.output, Some(args.seed));
    config.param("N", args.n);
    config.param("u", args.u);
    config.param("samples", args.samples);
    let mut header = vec!["estimand", "N", "u", "mean", "stderr", "n_samples", "seed"];
    let rows = match args.subcommand {
        LppSub::Cov => vec![summary_row(
            &mc_cov_star(args.n, args.u, args.samples, args.seed)?,
            args.n,
            args.u,
            false,
        )],
        LppSub::Variance => vec![summary_row(
            &mc_var_star(args.n, args.samples, args.seed)?,
            args.n,
            args.u,
            false,
        )],
        LppSub::CrossCheck => {
            let cc = mc_cross_check(args.n, args.u, args.samples, args.seed)?;
            config.param("airy_argument", cc.airy_u);
            config.param("airy_cov", cc.airy_cov);
            let rhs = McSummary {
                estimand: "airy_cov_scaled".into(),
                mean: cc.rhs,
                stderr: 0.0,
                n_samples: 0,
                seed: args.seed,
                interval: None,
            };
            vec![
                summary_row(&cc.lhs, args.n, args.u, false),
                summary_row(&rhs, args.n, args.u, false),
            ]
        }
        sub => {
            let kind = sub.kind().expect("exceedance subcommand");
            header.extend(["lo", "hi"]);
            vec![summary_row(
                &mc_exceedance(kind, args.n, args.u, args.samples, args.seed)?,
                args.n,
                args.u,
                true,
            )]
        }
    };
    emit(&Table { header, rows }, &config, &args.output)
}

fn validate(args: &ValidateArgs) -> Result<bool, CliError> {
    if let Some(bad) = args.criteria.iter().flatten().find(|id| criterion(**id).is_none()) {
        return Err(CliError::Argument(format!("no criterion with id {bad}")));
    }
    let outcomes: Vec<Outcome> = run_selected(args.quick, args.criteria.as_deref(), |o| {
        let mut out = io::stdout().lock();
        let _ = writeln!(out, "{}", o.line());
        let _ = out.flush();
    });
    let failed = outcomes.iter().any(|o| matches!(o.status, Status::Fail));
    let skipped = outcomes
        .iter()
        .filter(|o| matches!(o.status, Status::Skipped))
        .count();
    if args.quick {
        println!("quick mode: {skipped} slow criteria skipped");
    }
    println!("validate: {}", if failed { "FAILED" } else { "passed" });
    if let Some(path) = &args.out {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "quick": args.quick,
            "selected": args.criteria,
            "passed": !failed,
            "criteria": outcomes,
        });
        let text = serde_json::to_string_pretty(&doc).expect("report serialises");
        std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))?;
    }
    Ok(!failed)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Argument(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::CovTable(a) => cov_table(a).map(|()| true),
        Command::Lpp(a) => lpp(a).map(|()| true),
        Command::Validate(a) => validate(a),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ CliError::Argument(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
