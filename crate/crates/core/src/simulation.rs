//! Synthetic streams, replicated experiments, and the inconsistency demonstration.
//!
//! Every replication owns a ChaCha8 generator seeded with the experiment seed
//! and using the replication index as its stream id, so results do not depend
//! on how replications are scheduled across threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::metrics::{aggregate_rates, is_false_sign, AggregateReport, RateReport};
use crate::par;
use crate::protocol::{fmt_f64, sign_decision, Protocol, ProtocolConfig};
use crate::rules::{acceptance_radius, conditional_truncated_interval, MarginalRule, TruncationContext};
use crate::selection::RuleSpec;

/// Magnitude of the "null" parameters.
pub const NULL_MAGNITUDE: f64 = 1e-3;

/// Kind of a mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentKind {
    Point { value: f64 },
    OnePlusPoisson { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub kind: ComponentKind,
}

/// A finite mixture for the parameters θᵢ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

/// Poisson draw by CDF inversion (deterministic given the uniform stream).
pub fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

impl MixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<MixtureSpec> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if components.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(MixtureSpec { components })
    }

    /// ±0.001 with probability 0.45 each, `1 + Poisson(1)` with probability 0.1.
    pub fn sparse_signals() -> MixtureSpec {
        MixtureSpec {
            components: vec![
                MixtureComponent {
                    weight: 0.45,
                    kind: ComponentKind::Point { value: NULL_MAGNITUDE },
                },
                MixtureComponent {
                    weight: 0.45,
                    kind: ComponentKind::Point { value: -NULL_MAGNITUDE },
                },
                MixtureComponent {
                    weight: 0.1,
                    kind: ComponentKind::OnePlusPoisson { rate: 1.0 },
                },
            ],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc || k == last {
                return match c.kind {
                    ComponentKind::Point { value } => value,
                    ComponentKind::OnePlusPoisson { rate } => 1.0 + poisson_inversion(rng, rate) as f64,
                };
            }
        }
        unreachable!("mixture has at least one component")
    }
}

/// Parameters for the sparse-signal experiment: `±0.001` w.p. 0.45 each, `1 + Poisson(1)` w.p. 0.1.
pub fn gen_thetas_61<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let mix = MixtureSpec::sparse_signals();
    (0..m).map(|_| mix.sample(rng)).collect()
}

/// Parameters for the inconsistency demonstration: `(−1)ⁱ·0.001` w.p. 0.8
/// (indices start at 1), `2` w.p. 0.2.
pub fn gen_thetas_62<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    (1..=m)
        .map(|i| {
            let u: f64 = rng.random();
            if u < 0.8 {
                if i % 2 == 0 {
                    NULL_MAGNITUDE
                } else {
                    -NULL_MAGNITUDE
                }
            } else {
                2.0
            }
        })
        .collect()
}

/// How parameters are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamModel {
    Mixture(MixtureSpec),
    Alternating,
}

impl StreamModel {
    pub fn thetas<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<f64> {
        match self {
            StreamModel::Mixture(mix) => (0..m).map(|_| mix.sample(rng)).collect(),
            StreamModel::Alternating => gen_thetas_62(m, rng),
        }
    }
}

/// Generator for replication `rep` of an experiment seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Parameters and observations `xᵢ ~ N(θᵢ, 1)` for one replication.
pub fn draw_stream(model: &StreamModel, m: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let thetas = model.thetas(m, rng);
    let xs = thetas
        .iter()
        .map(|&t| t + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (thetas, xs)
}

/// The selection schemes of the sparse-signal experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// `|x| > 3`.
    #[serde(rename = "fixed-threshold")]
    FixedThreshold,
    /// Sign-determining selection with the symmetric rule.
    #[serde(rename = "sgn-det-symm")]
    SignDetSymmetric,
    /// Sign-determining selection with the MQC rule (ψ = 0.7).
    #[serde(rename = "sgn-det-mqc")]
    SignDetMqc,
    /// Sign-determining selection with the one-sided rule.
    #[serde(rename = "sgn-det-one-sided")]
    SignDetOneSided,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::FixedThreshold,
        Scheme::SignDetSymmetric,
        Scheme::SignDetMqc,
        Scheme::SignDetOneSided,
    ];

    /// The three schemes of the summary table.
    pub const TABLE: [Scheme; 3] = [Scheme::FixedThreshold, Scheme::SignDetSymmetric, Scheme::SignDetMqc];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::FixedThreshold => "fixed-threshold",
            Scheme::SignDetSymmetric => "sgn-det-symm",
            Scheme::SignDetMqc => "sgn-det-mqc",
            Scheme::SignDetOneSided => "sgn-det-one-sided",
        }
    }

    pub fn selection(&self) -> RuleSpec {
        let sd = |rule| RuleSpec::SignDetermining { rule, null_value: 0.0 };
        match self {
            Scheme::FixedThreshold => RuleSpec::FixedThreshold {
                threshold: 3.0,
                two_sided: true,
            },
            Scheme::SignDetSymmetric => sd(MarginalRule::Symmetric),
            Scheme::SignDetMqc => sd(MarginalRule::mqc()),
            Scheme::SignDetOneSided => sd(MarginalRule::OneSided),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scheme> {
        Scheme::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Scheme::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown scheme {s:?}; valid schemes: {}", names.join(", ")))
        })
    }
}

/// A replicated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scheme_name: String,
    pub model: StreamModel,
    pub m: usize,
    pub n_reps: usize,
    pub seed: u64,
    /// Must use LORD-CI marginal intervals; the conditional column is computed
    /// alongside on the same selections when `conditional_companion` is set.
    pub protocol: ProtocolConfig,
    pub conditional_companion: bool,
}

/// Desk-scale replication count.
pub const DESK_REPS: usize = 2_000;
/// Full-scale replication count.
pub const FULL_REPS: usize = 10_000;

impl ExperimentConfig {
    /// A sparse-signal experiment for one of the named schemes.
    pub fn for_scheme(scheme: Scheme, alpha: f64, m: usize, n_reps: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            scheme_name: scheme.name().to_string(),
            model: StreamModel::Mixture(MixtureSpec::sparse_signals()),
            m,
            n_reps,
            seed,
            protocol: ProtocolConfig::new(alpha, scheme.selection(), m),
            conditional_companion: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_reps == 0 {
            return Err(Error::invalid("m and n_reps must be at least 1"));
        }
        if !matches!(
            self.protocol.interval_mode,
            crate::protocol::IntervalMode::LordCiMarginal(_)
        ) {
            return Err(Error::invalid(
                "experiments run LORD-CI intervals; the conditional column is a companion",
            ));
        }
        self.protocol.validate()?;
        if self.conditional_companion {
            self.protocol.selection.selection_event(self.protocol.alpha / 2.0)?;
        }
        Ok(())
    }
}

/// One row of a replication dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub index: u64,
    pub theta: f64,
    pub x: f64,
    pub level: f64,
    pub selected: bool,
    pub lord: Option<Interval>,
    pub sign: i8,
    pub conditional: Option<Interval>,
    pub conditional_sign: i8,
}

/// Counts from one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationResult {
    pub lord: RateReport,
    pub conditional: Option<RateReport>,
    /// Steps where a false sign call came with a covering interval (must be 0).
    pub domination_violations: u64,
}

#[derive(Default)]
struct Tally {
    selected: u64,
    miscovered: u64,
    false_signs: u64,
    signs: u64,
    violations: u64,
}

impl Tally {
    fn add(&mut self, interval: &Interval, theta: f64) -> i8 {
        let miss = !interval.contains(theta);
        let (d, _) = sign_decision(interval);
        let wrong = is_false_sign(d, theta);
        self.selected += 1;
        self.miscovered += miss as u64;
        self.signs += (d != 0) as u64;
        self.false_signs += wrong as u64;
        self.violations += (wrong && !miss) as u64;
        d
    }

    fn report(&self, spent: f64) -> RateReport {
        RateReport::from_counts(
            self.selected,
            self.miscovered,
            spent,
            self.false_signs,
            self.signs,
            0,
            0,
        )
    }
}

/// Runs one replication; with `trace` set, also returns the per-step dump.
pub fn run_replication(cfg: &ExperimentConfig, rep: u64, trace: bool) -> Result<(ReplicationResult, Vec<TraceRow>)> {
    let mut rng = replication_rng(cfg.seed, rep);
    let (thetas, xs) = draw_stream(&cfg.model, cfg.m, &mut rng);
    let mut protocol = Protocol::new(cfg.protocol.clone())?;
    let alpha = cfg.protocol.alpha;
    let mut lord = Tally::default();
    let mut cond = Tally::default();
    let mut rows = Vec::with_capacity(if trace { cfg.m } else { 0 });
    for (k, (&theta, &x)) in thetas.iter().zip(&xs).enumerate() {
        let out = protocol.step(x)?;
        let mut conditional = None;
        let mut conditional_sign = 0;
        if let Some(interval) = out.interval {
            lord.add(&interval, theta);
            if cfg.conditional_companion {
                let ctx = cfg.protocol.selection.selection_event(out.level)?;
                let ci = conditional_truncated_interval(x, ctx, alpha)?;
                conditional_sign = cond.add(&ci, theta);
                conditional = Some(ci);
            }
        }
        if trace {
            rows.push(TraceRow {
                index: k as u64 + 1,
                theta,
                x,
                level: out.level,
                selected: out.selected,
                lord: out.interval,
                sign: out.sign,
                conditional,
                conditional_sign,
            });
        }
    }
    let spent = protocol.scheduler().spent();
    Ok((
        ReplicationResult {
            lord: lord.report(spent),
            conditional: cfg
                .conditional_companion
                .then(|| cond.report(alpha * cond.selected as f64)),
            domination_violations: lord.violations + cond.violations,
        },
        rows,
    ))
}

/// Aggregated results for one scheme under one interval mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub scheme: String,
    pub intervals: String,
    pub alpha: f64,
    pub m: usize,
    pub n_reps: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub rates: AggregateReport,
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub lord: ReplicationSummary,
    pub conditional: Option<ReplicationSummary>,
    pub domination_violations: u64,
    pub replications: Vec<ReplicationResult>,
    /// Full dump of replication 0.
    pub trace: Vec<TraceRow>,
}

fn run_all(cfg: &ExperimentConfig, parallel: bool) -> Result<Vec<(ReplicationResult, Vec<TraceRow>)>> {
    let job = |rep: usize| run_replication(cfg, rep as u64, rep == 0);
    let results = if parallel {
        par::map_range(cfg.n_reps, job)
    } else {
        par::map_range_sequential(cfg.n_reps, job)
    };
    results.into_iter().collect()
}

/// Runs all replications (in parallel when the `parallel` feature is on).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, true)
}

/// Like [`run_experiment`], optionally forcing a sequential loop.
pub fn run_experiment_with(cfg: &ExperimentConfig, parallel: bool) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut results = run_all(cfg, parallel)?;
    let trace = std::mem::take(&mut results[0].1);
    let replications: Vec<ReplicationResult> = results.into_iter().map(|(r, _)| r).collect();
    let summary = |intervals: &str, reports: Vec<RateReport>| -> Result<ReplicationSummary> {
        Ok(ReplicationSummary {
            scheme: cfg.scheme_name.clone(),
            intervals: intervals.to_string(),
            alpha: cfg.protocol.alpha,
            m: cfg.m,
            n_reps: cfg.n_reps,
            seed: cfg.seed,
            rates: aggregate_rates(&reports)?,
        })
    };
    let lord = summary("lord_ci", replications.iter().map(|r| r.lord).collect())?;
    let conditional = if cfg.conditional_companion {
        Some(summary(
            "conditional",
            replications.iter().filter_map(|r| r.conditional).collect(),
        )?)
    } else {
        None
    };
    Ok(ExperimentResult {
        lord,
        conditional,
        domination_violations: replications.iter().map(|r| r.domination_violations).sum(),
        replications,
        trace,
    })
}

/// Row labels of the summary table, in order.
pub const TABLE1_METRICS: [&str; 13] = [
    "fcr",
    "fcr_se",
    "mfcr",
    "mfcr_se",
    "pfcr",
    "pfcr_se",
    "fsr",
    "fsr_se",
    "mean_selected",
    "mean_selected_se",
    "sign_determining_fraction",
    "sign_determining_fraction_se",
    "n_reps",
];

fn metric_value(r: &AggregateReport, metric: &str) -> f64 {
    match metric {
        "fcr" => r.fcr.value,
        "fcr_se" => r.fcr.se,
        "mfcr" => r.mfcr.value,
        "mfcr_se" => r.mfcr.se,
        "pfcr" => r.pfcr.value,
        "pfcr_se" => r.pfcr.se,
        "fsr" => r.fsr.value,
        "fsr_se" => r.fsr.se,
        "mean_selected" => r.mean_selected.value,
        "mean_selected_se" => r.mean_selected.se,
        "sign_determining_fraction" => r.sign_determining_fraction.value,
        "sign_determining_fraction_se" => r.sign_determining_fraction.se,
        "n_reps" => r.n_reps as f64,
        _ => f64::NAN,
    }
}

/// Summary table: one row per metric, one column per `scheme:intervals`.
pub fn write_table1_csv<W: Write>(w: W, summaries: &[ReplicationSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["metric".to_string()];
    header.extend(summaries.iter().map(|s| format!("{}:{}", s.scheme, s.intervals)));
    out.write_record(&header)?;
    for metric in TABLE1_METRICS {
        let mut row = vec![metric.to_string()];
        row.extend(summaries.iter().map(|s| fmt_f64(metric_value(&s.rates, metric))));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("table1.csv", e))?;
    Ok(())
}

/// Column order of the replication dump.
pub const TRACE_CSV_HEADER: [&str; 16] = [
    "scheme",
    "index",
    "theta",
    "x",
    "level",
    "selected",
    "lo",
    "hi",
    "lo_open",
    "hi_open",
    "sign",
    "cond_lo",
    "cond_hi",
    "cond_lo_open",
    "cond_hi_open",
    "cond_sign",
];

fn interval_cells(i: Option<Interval>) -> [String; 4] {
    match i {
        Some(Interval::Span {
            lo,
            hi,
            lo_open,
            hi_open,
        }) => [
            fmt_f64(lo),
            fmt_f64(hi),
            (lo_open as u8).to_string(),
            (hi_open as u8).to_string(),
        ],
        _ => Default::default(),
    }
}

/// Writes replication dumps for several schemes into one CSV.
pub fn write_trace_csv<W: Write>(w: W, traces: &[(&str, &[TraceRow])]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_CSV_HEADER)?;
    for (scheme, rows) in traces {
        for r in rows.iter() {
            let mut rec = vec![
                scheme.to_string(),
                r.index.to_string(),
                fmt_f64(r.theta),
                fmt_f64(r.x),
                fmt_f64(r.level),
                (r.selected as u8).to_string(),
            ];
            rec.extend(interval_cells(r.lord));
            rec.push(r.sign.to_string());
            rec.extend(interval_cells(r.conditional));
            rec.push(r.conditional_sign.to_string());
            out.write_record(&rec)?;
        }
    }
    out.flush().map_err(|e| Error::io("intervals_rep0.csv", e))?;
    Ok(())
}

/// Settings for the inconsistency demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemoConfig {
    pub alpha: f64,
    pub m: usize,
    pub n_reps: usize,
    pub seed: u64,
}

/// One replication of the demonstration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRun {
    /// Number of intervals at the start of each iteration (first entry: all selections).
    pub counts: Vec<usize>,
    /// FCP of the conditional intervals built at each iteration.
    pub fcp_adjusted: Vec<f64>,
    /// FCP of the intervals kept after dropping zero-crossers at each iteration.
    pub fcp_after_drop: Vec<f64>,
    /// LORD-CI (sign-determining) intervals on the same stream that contain 0.
    pub lord_zero_crossers: usize,
    pub lord_selected: usize,
    /// Every conditional interval built, by iteration.
    pub panels: Vec<PanelRow>,
}

/// One conditional interval of the demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PanelRow {
    /// 1-based iteration of the drop-and-readjust loop.
    pub iteration: usize,
    pub theta: f64,
    pub x: f64,
    pub cutoff: f64,
    pub interval: Interval,
    /// Whether the interval excludes 0 (and so survives to the next iteration).
    pub kept: bool,
}

/// Aggregate over replications of the demonstration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub config: DemoConfig,
    /// Mean of `counts[k]` (runs that stopped earlier contribute their final count).
    pub mean_counts: Vec<f64>,
    /// Mean FCP of the conditional intervals at the first iteration.
    pub mean_fcp_initial: f64,
    /// Mean FCP after the first round of dropping zero-crossers.
    pub mean_fcp_after_drop: f64,
    pub mean_fcp_after_drop_se: f64,
    /// Runs whose counts ever increased (must be 0).
    pub nonmonotone_runs: usize,
    pub lord_zero_crossers: usize,
    pub runs: Vec<DemoRun>,
}

fn fcp_of(items: &[(f64, f64, f64, Interval)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().filter(|(theta, _, _, i)| !i.contains(*theta)).count() as f64 / items.len() as f64
}

/// One replication of the drop-and-readjust loop for two-sided LORD++
/// selection with conditional intervals.
pub fn inconsistency_run(cfg: &DemoConfig, rep: u64) -> Result<DemoRun> {
    let mut rng = replication_rng(cfg.seed, rep);
    let (thetas, xs) = draw_stream(&StreamModel::Alternating, cfg.m, &mut rng);
    let spec = RuleSpec::SignDetermining {
        rule: MarginalRule::Symmetric,
        null_value: 0.0,
    };
    let mut protocol = Protocol::new(ProtocolConfig::new(cfg.alpha, spec.clone(), cfg.m))?;
    // (θ, cutoff, x) for every selection
    let mut current: Vec<(f64, f64, f64)> = Vec::new();
    let mut lord_zero_crossers = 0;
    for (&theta, &x) in thetas.iter().zip(&xs) {
        let out = protocol.step(x)?;
        if let Some(i) = out.interval {
            lord_zero_crossers += i.contains(0.0) as usize;
            current.push((theta, spec.selection_event(out.level)?.cutoff(), x));
        }
    }
    let lord_selected = current.len();
    let mut counts = Vec::new();
    let mut fcp_adjusted = Vec::new();
    let mut fcp_after_drop = Vec::new();
    let mut panels = Vec::new();
    loop {
        counts.push(current.len());
        if current.is_empty() {
            break;
        }
        let built = current
            .iter()
            .map(|&(theta, c, x)| {
                let ci = conditional_truncated_interval(x, TruncationContext::TwoSided(c), cfg.alpha)?;
                Ok((theta, c, x, ci))
            })
            .collect::<Result<Vec<_>>>()?;
        fcp_adjusted.push(fcp_of(&built));
        let iteration = counts.len();
        panels.extend(built.iter().map(|&(theta, cutoff, x, interval)| PanelRow {
            iteration,
            theta,
            x,
            cutoff,
            interval,
            kept: !interval.contains(0.0),
        }));
        let kept: Vec<_> = built.into_iter().filter(|(_, _, _, i)| !i.contains(0.0)).collect();
        fcp_after_drop.push(fcp_of(&kept));
        if kept.len() == current.len() {
            break;
        }
        // Survivors have |x| at or beyond the implied cutoff r(0; c): re-adjust
        // with that tighter selection event. The implied cutoff can coincide
        // with |x| up to rounding; keep the event consistent with the observation.
        current = kept
            .iter()
            .map(|&(theta, c, x, _)| {
                Ok((
                    theta,
                    acceptance_radius(0.0, TruncationContext::TwoSided(c), cfg.alpha)?,
                    x,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        current.retain(|&(_, c, x)| x.abs() > c);
    }
    Ok(DemoRun {
        counts,
        fcp_adjusted,
        fcp_after_drop,
        lord_zero_crossers,
        lord_selected,
        panels,
    })
}

/// Column order of the demonstration dump.
pub const PANEL_CSV_HEADER: [&str; 10] = [
    "iteration",
    "theta",
    "x",
    "cutoff",
    "lo",
    "hi",
    "lo_open",
    "hi_open",
    "kept",
    "covers",
];

/// Writes the conditional intervals of one demonstration run.
pub fn write_panel_csv<W: Write>(w: W, rows: &[PanelRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PANEL_CSV_HEADER)?;
    for r in rows {
        let mut rec = vec![
            r.iteration.to_string(),
            fmt_f64(r.theta),
            fmt_f64(r.x),
            fmt_f64(r.cutoff),
        ];
        rec.extend(interval_cells(Some(r.interval)));
        rec.push((r.kept as u8).to_string());
        rec.push((r.interval.contains(r.theta) as u8).to_string());
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("demo_panels.csv", e))?;
    Ok(())
}

/// Runs the demonstration over `n_reps` replications.
pub fn inconsistency_demo(cfg: &DemoConfig) -> Result<IterationReport> {
    if cfg.m == 0 || cfg.n_reps == 0 {
        return Err(Error::invalid("m and n_reps must be at least 1"));
    }
    let runs = par::map_range(cfg.n_reps, |rep| inconsistency_run(cfg, rep as u64))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let depth = runs.iter().map(|r| r.counts.len()).max().unwrap_or(0);
    let n = runs.len() as f64;
    let mean_counts = (0..depth)
        .map(|k| {
            runs.iter()
                .map(|r| *r.counts.get(k).or(r.counts.last()).unwrap() as f64)
                .sum::<f64>()
                / n
        })
        .collect();
    let first = |v: &Vec<f64>| v.first().copied().unwrap_or(0.0);
    let after: Vec<f64> = runs.iter().map(|r| first(&r.fcp_after_drop)).collect();
    let mean_after = after.iter().sum::<f64>() / n;
    let se_after = if runs.len() > 1 {
        (after.iter().map(|v| (v - mean_after).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(IterationReport {
        config: *cfg,
        mean_counts,
        mean_fcp_initial: runs.iter().map(|r| first(&r.fcp_adjusted)).sum::<f64>() / n,
        mean_fcp_after_drop: mean_after,
        mean_fcp_after_drop_se: se_after,
        nonmonotone_runs: runs.iter().filter(|r| r.counts.windows(2).any(|w| w[1] > w[0])).count(),
        lord_zero_crossers: runs.iter().map(|r| r.lord_zero_crossers).sum(),
        runs,
    })
}
