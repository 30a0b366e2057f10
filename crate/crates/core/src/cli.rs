//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure (or an audit that found
//! violations), 2 usage or configuration error.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::conformal::{
    full_conformal_interval, read_numeric_csv, selective_conformal_stream, ConformalConfig, ConformalMode,
    IntervalSelection, PredictorSpec, SplitConformal, StreamSettings, TrainingSet, YGrid,
};
use crate::error::{Error, Result};
use crate::par;
use crate::posthoc::{read_run_jsonl, track_uniform_bound, write_bound_csv, PosthocConfig};
use crate::protocol::{fmt_f64, write_outcome_line, write_summary_line, Protocol, RunLog};
use crate::rules::MarginalRule;
use crate::scheduler::LordCi;
use crate::selection::{monotonicity_audit, MAX_AUDIT_HISTORY};
use crate::simulation::{
    inconsistency_demo, run_experiment, write_panel_csv, write_table1_csv, write_trace_csv, DemoConfig,
    ExperimentConfig, ReplicationSummary, Scheme, DESK_REPS, FULL_REPS,
};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "ONLINE_FCR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "online-fcr", version, about = "Online false coverage rate control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replicated sparse-signal experiment; writes summary.json, table1.csv and intervals_rep0.csv.
    Simulate(SimulateArgs),
    /// Runs the protocol over an observation stream, one JSON line per step.
    Stream(StreamArgs),
    /// Time-uniform FCP upper bound along a JSON-lines run log.
    Posthoc(PosthocArgs),
    /// Conformal prediction intervals, at a fixed level or under LORD-CI.
    Conformal(ConformalArgs),
    /// Exhaustive monotonicity audit of a selection rule.
    Audit(AuditArgs),
    /// Drop-and-readjust demonstration with conditional intervals.
    Demo(DemoArgs),
    /// Interval endpoints of a marginal rule over a grid of observations.
    Endpoints(EndpointsArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scheme name (repeatable), or `all`; defaults to the three table schemes.
    #[arg(long = "scheme")]
    pub schemes: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Replications (default 2000, or 10000 with --full-scale).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub full_scale: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// One observation per line, or a CSV with a column named `x`; `-` for stdin.
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PosthocArgs {
    /// JSON-lines run log as written by `stream`; `-` for stdin.
    #[arg(long)]
    pub log: String,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Knn,
    Ridge,
}

#[derive(Debug, Args)]
pub struct ConformalArgs {
    /// Training CSV: header row, last column is the response.
    #[arg(long)]
    pub train: PathBuf,
    /// Test CSV: the covariate columns, optionally followed by the response.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Split)]
    pub mode: ModeArg,
    /// Fixed miscoverage level for every test point.
    #[arg(long, conflicts_with = "fcr_alpha", required_unless_present = "fcr_alpha")]
    pub level: Option<f64>,
    /// Target FCR; levels come from LORD-CI and the output is a JSON-lines run log.
    #[arg(long)]
    pub fcr_alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = PredictorArg::Ridge)]
    pub predictor: PredictorArg,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    /// Full conformal grid size; the grid spans the training responses widened by their range.
    #[arg(long, default_value_t = 401)]
    pub grid_steps: usize,
    /// Report only intervals no wider than this (with --fcr-alpha).
    #[arg(long, conflicts_with = "exclude_value")]
    pub max_width: Option<f64>,
    /// Report only intervals excluding this value (with --fcr-alpha).
    #[arg(long)]
    pub exclude_value: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// JSON run configuration (the same format as `stream`).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub max_history: usize,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Symmetric,
    OneSided,
    Mqc,
}

#[derive(Debug, Args)]
pub struct EndpointsArgs {
    #[arg(long, value_enum, default_value_t = RuleArg::Mqc)]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 0.7)]
    pub psi: f64,
    #[arg(long, default_value_t = 0.1)]
    pub level: f64,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    pub x_min: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    pub x_max: f64,
    #[arg(long, default_value_t = 241)]
    pub steps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_exit() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) if e.is_broken_pipe() => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Stream(a) => stream(a),
        Command::Posthoc(a) => posthoc(a),
        Command::Conformal(a) => conformal(a),
        Command::Audit(a) => audit(a),
        Command::Demo(a) => demo(a),
        Command::Endpoints(a) => endpoints(a),
    }
}

/// `ONLINE_FCR_THREADS` if set, else the flag.
fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => flag,
    };
    if n == Some(0) {
        return Err(Error::invalid("thread count must be positive"));
    }
    Ok(n)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn input(spec: &str) -> Result<Box<dyn BufRead>> {
    Ok(if spec == "-" {
        Box::new(BufReader::new(io::stdin().lock()))
    } else {
        Box::new(BufReader::new(File::open(spec).map_err(|e| Error::io(spec, e))?))
    })
}

fn finish<W: Write>(mut w: W, what: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(what, e))
}

fn parse_schemes(names: &[String]) -> Result<Vec<Scheme>> {
    if names.is_empty() {
        return Ok(Scheme::TABLE.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        if n == "all" {
            out.extend(Scheme::ALL);
        } else {
            out.push(n.parse()?);
        }
    }
    out.dedup();
    Ok(out)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    summaries: &'a [ReplicationSummary],
    domination_violations: u64,
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let schemes = parse_schemes(&a.schemes)?;
    let n_reps = a.reps.unwrap_or(if a.full_scale { FULL_REPS } else { DESK_REPS });
    let configs: Vec<ExperimentConfig> = schemes
        .iter()
        .map(|&s| ExperimentConfig::for_scheme(s, a.alpha, a.m, n_reps, a.seed))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let threads = thread_count(a.threads)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let results = par::with_threads(threads, || {
        configs.iter().map(run_experiment).collect::<Result<Vec<_>>>()
    })??;

    let mut summaries = Vec::new();
    for r in &results {
        summaries.push(r.lord.clone());
        summaries.extend(r.conditional.clone());
    }
    let violations = results.iter().map(|r| r.domination_violations).sum();
    let mut w = create(&a.out_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(
        &mut w,
        &SimulateSummary {
            summaries: &summaries,
            domination_violations: violations,
        },
    )?;
    writeln!(w).map_err(|e| Error::io("summary.json", e))?;
    finish(w, "summary.json")?;
    let w = create(&a.out_dir.join("table1.csv"))?;
    write_table1_csv(w, &summaries)?;
    let traces: Vec<(&str, &[_])> = results
        .iter()
        .map(|r| (r.lord.scheme.as_str(), r.trace.as_slice()))
        .collect();
    write_trace_csv(create(&a.out_dir.join("intervals_rep0.csv"))?, &traces)?;

    let mut out = io::stdout().lock();
    let _ = writeln!(
        out,
        "alpha = {}, m = {}, n_reps = {}, seed = {}",
        a.alpha, a.m, n_reps, a.seed
    );
    let _ = writeln!(
        out,
        "{:<32} {:>15} {:>15} {:>18} {:>12}",
        "scheme:intervals", "FCR (se)", "pFCR (se)", "selected (se)", "sign-det"
    );
    for s in &summaries {
        let r = &s.rates;
        let _ = writeln!(
            out,
            "{:<32} {:>6.4} ({:.4}) {:>6.4} ({:.4}) {:>9.2} ({:>5.2}) {:>12.4}",
            format!("{}:{}", s.scheme, s.intervals),
            r.fcr.value,
            r.fcr.se,
            r.pfcr.value,
            r.pfcr.se,
            r.mean_selected.value,
            r.mean_selected.se,
            r.sign_determining_fraction.value
        );
    }
    Ok(0)
}

/// Observations from a stream: plain numbers, or CSV with a header naming `x`.
struct ObservationReader {
    column: Option<(usize, usize)>,
    line: usize,
}

impl ObservationReader {
    fn new() -> ObservationReader {
        ObservationReader { column: None, line: 0 }
    }

    /// The observation on `text`, `None` for blank or header lines.
    fn parse(&mut self, text: &str) -> Result<Option<f64>> {
        self.line += 1;
        let t = text.trim();
        if t.is_empty() {
            return Ok(None);
        }
        let malformed = |line, message: String| Error::MalformedInput { line, message };
        let field = match self.column {
            Some((k, width)) => {
                let fields: Vec<&str> = t.split(',').map(str::trim).collect();
                if fields.len() != width {
                    return Err(malformed(
                        self.line,
                        format!("expected {width} fields, found {}", fields.len()),
                    ));
                }
                fields[k]
            }
            None if self.line == 1 && t.parse::<f64>().is_err() => {
                let fields: Vec<&str> = t.split(',').map(str::trim).collect();
                let k = fields
                    .iter()
                    .position(|f| *f == "x")
                    .ok_or_else(|| malformed(1, format!("not a number and no column named x: {t:?}")))?;
                self.column = Some((k, fields.len()));
                return Ok(None);
            }
            None => t,
        };
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(malformed(self.line, format!("not a finite number: {field:?}"))),
        }
    }
}

fn stream(a: StreamArgs) -> Result<i32> {
    let cfg = RunConfig::from_path(&a.config)?.to_protocol()?;
    let mut protocol = Protocol::new(cfg)?;
    let reader = input(&a.input)?;
    let mut out = output(&a.out)?;
    let mut obs = ObservationReader::new();
    let mut outcomes = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(&a.input, e))?;
        let Some(x) = obs.parse(&line)? else { continue };
        let o = protocol.step(x)?;
        write_outcome_line(&mut out, &o)?;
        out.flush().map_err(|e| Error::io("<output>", e))?;
        outcomes.push(o);
    }
    let log = RunLog {
        alpha: protocol.config().alpha,
        outcomes,
        final_state: protocol.scheduler().clone(),
    };
    write_summary_line(&mut out, &log.summary())?;
    finish(out, "<output>")?;
    Ok(0)
}

fn posthoc(a: PosthocArgs) -> Result<i32> {
    let cfg = PosthocConfig::new(a.a, a.delta)?;
    let (levels, selections) = read_run_jsonl(input(&a.log)?)?;
    let points = track_uniform_bound(&levels, &selections, &cfg)?;
    let mut out = output(&a.out)?;
    write_bound_csv(&mut out, &points)?;
    finish(out, "<output>")?;
    Ok(0)
}

fn conformal(a: ConformalArgs) -> Result<i32> {
    let train = TrainingSet::from_csv_path(&a.train)?;
    let (_, rows) = read_numeric_csv(File::open(&a.test).map_err(|e| Error::io(&a.test, e))?)?;
    let dim = train.dim();
    let width = rows[0].len();
    if width != dim && width != dim + 1 {
        return Err(Error::invalid(format!(
            "test file has {width} columns; expected {dim} covariates, optionally followed by the response"
        )));
    }
    let test_xs: Vec<Vec<f64>> = rows.iter().map(|r| r[..dim].to_vec()).collect();
    let test_ys: Option<Vec<f64>> = (width == dim + 1).then(|| rows.iter().map(|r| r[dim]).collect());
    let predictor = match a.predictor {
        PredictorArg::Knn => PredictorSpec::KNearestMean { k: a.k },
        PredictorArg::Ridge => PredictorSpec::RidgeLinear { lambda: a.lambda },
    };
    let cfg = ConformalConfig {
        predictor,
        y_grid: (a.mode == ModeArg::Full).then(|| YGrid::around(train.ys(), a.grid_steps)),
        mode: match a.mode {
            ModeArg::Full => ConformalMode::Full,
            ModeArg::Split => ConformalMode::Split {
                train_fraction: a.train_fraction,
            },
        },
    };
    cfg.validate(train.len())?;
    let mut out = output(&a.out)?;
    if let Some(alpha) = a.fcr_alpha {
        let selection = match (a.max_width, a.exclude_value) {
            (Some(w), _) => IntervalSelection::WidthBudget { max_width: w },
            (_, Some(v)) => IntervalSelection::ExcludesValue { value: v },
            _ => IntervalSelection::All,
        };
        let settings = StreamSettings::new(alpha, test_xs.len().max(1));
        let log = selective_conformal_stream(&train, &test_xs, &selection, &cfg, &settings)?;
        log.write_jsonl(&mut out)?;
    } else {
        let level = a.level.expect("clap requires --level or --fcr-alpha");
        let split = match cfg.mode {
            ConformalMode::Split { .. } => Some(SplitConformal::fit(&train, &cfg)?),
            ConformalMode::Full => None,
        };
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["index", "prediction", "lo", "hi", "hull", "grid_edge"];
        if test_ys.is_some() {
            header.extend(["y", "covered"]);
        }
        w.write_record(&header)?;
        for (k, x) in test_xs.iter().enumerate() {
            let pi = match &split {
                Some(s) => s.interval(x, level)?,
                None => full_conformal_interval(&train, x, level, &cfg)?,
            };
            let (lo, hi) = (
                pi.interval.lo().map_or(String::new(), fmt_f64),
                pi.interval.hi().map_or(String::new(), fmt_f64),
            );
            let mut rec = vec![
                (k + 1).to_string(),
                fmt_f64(pi.prediction),
                lo,
                hi,
                (pi.hull as u8).to_string(),
                (pi.grid_edge as u8).to_string(),
            ];
            if let Some(ys) = &test_ys {
                rec.push(fmt_f64(ys[k]));
                rec.push((pi.interval.contains(ys[k]) as u8).to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
    }
    finish(out, "<output>")?;
    Ok(0)
}

fn audit(a: AuditArgs) -> Result<i32> {
    if a.max_history > MAX_AUDIT_HISTORY {
        return Err(Error::invalid(format!(
            "--max-history {} exceeds the supported {MAX_AUDIT_HISTORY}",
            a.max_history
        )));
    }
    let cfg = RunConfig::from_path(&a.spec)?.to_protocol()?;
    let template = LordCi::new(cfg.alpha, cfg.w0, cfg.gamma.clone())?;
    let threads = thread_count(a.threads)?;
    let report = par::with_threads(threads, || monotonicity_audit(&cfg.selection, &template, a.max_history))??;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    let _ = writeln!(out);
    Ok(if report.is_clean() { 0 } else { 1 })
}

fn demo(a: DemoArgs) -> Result<i32> {
    let cfg = DemoConfig {
        alpha: a.alpha,
        m: a.m,
        n_reps: a.reps,
        seed: a.seed,
    };
    if !(a.alpha > 0.0 && a.alpha < 0.5) {
        return Err(Error::invalid(format!("alpha must lie in (0, 0.5), got {}", a.alpha)));
    }
    if a.m == 0 || a.reps == 0 {
        return Err(Error::invalid("m and reps must be at least 1"));
    }
    let threads = thread_count(a.threads)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let report = par::with_threads(threads, || inconsistency_demo(&cfg))??;
    write_panel_csv(create(&a.out_dir.join("demo_panels.csv"))?, &report.runs[0].panels)?;
    let mut w = create(&a.out_dir.join("demo.json"))?;
    let brief = serde_json::json!({
        "config": report.config,
        "mean_counts": report.mean_counts,
        "mean_fcp_initial": report.mean_fcp_initial,
        "mean_fcp_after_drop": report.mean_fcp_after_drop,
        "mean_fcp_after_drop_se": report.mean_fcp_after_drop_se,
        "nonmonotone_runs": report.nonmonotone_runs,
        "lord_zero_crossers": report.lord_zero_crossers,
        "counts_rep0": report.runs[0].counts,
    });
    serde_json::to_writer_pretty(&mut w, &brief)?;
    writeln!(w).map_err(|e| Error::io("demo.json", e))?;
    finish(w, "demo.json")?;
    println!(
        "mean counts {:?}; mean FCP initial {:.4}, after dropping zero-crossers {:.4} (se {:.4})",
        report.mean_counts, report.mean_fcp_initial, report.mean_fcp_after_drop, report.mean_fcp_after_drop_se
    );
    Ok(0)
}

fn endpoints(a: EndpointsArgs) -> Result<i32> {
    let rule = match a.rule {
        RuleArg::Symmetric => MarginalRule::Symmetric,
        RuleArg::OneSided => MarginalRule::OneSided,
        RuleArg::Mqc => MarginalRule::Mqc { psi: a.psi },
    };
    rule.validate()?;
    if a.steps < 2 || !(a.x_min < a.x_max) {
        return Err(Error::invalid("need x_min < x_max and at least 2 steps"));
    }
    let prepared = rule.prepare(a.level)?;
    let mut out = output(&a.out)?;
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(["x", "lo", "hi", "lo_open", "hi_open"])?;
    for k in 0..a.steps {
        let x = a.x_min + (a.x_max - a.x_min) * k as f64 / (a.steps - 1) as f64;
        let rec = match prepared.interval(x) {
            crate::interval::Interval::Span {
                lo,
                hi,
                lo_open,
                hi_open,
            } => [
                fmt_f64(x),
                fmt_f64(lo),
                fmt_f64(hi),
                (lo_open as u8).to_string(),
                (hi_open as u8).to_string(),
            ],
            crate::interval::Interval::Empty => {
                [fmt_f64(x), String::new(), String::new(), String::new(), String::new()]
            }
        };
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    drop(w);
    finish(out, "<output>")?;
    Ok(0)
}
