//! The online interval protocol: commit a level, observe `x`, decide, report.
//!
//! Every step first commits `αᵢ` (a function of past selections only) and
//! receives a [`CommitToken`]; the observation can only be consumed by handing
//! that token back, so `xᵢ` cannot influence `αᵢ`.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::interval::Interval;
use crate::metrics::{self, StepRecord};
use crate::rules::{conditional_truncated_interval, MarginalRule, TruncationContext, TruncationShape};
use crate::scheduler::{GammaSequence, LordCi, SchedulerSnapshot};
use crate::selection::{RuleSpec, SelectionOutcome};

/// How reported intervals are built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalMode {
    /// The marginal rule at the committed LORD-CI level.
    LordCiMarginal(MarginalRule),
    /// The conditional truncated-normal interval at the nominal level α, with
    /// the truncation implied by the committed selection rule. `shape`, if
    /// given, must agree with that truncation.
    ConditionalAtNominal { shape: Option<TruncationShape> },
}

impl IntervalMode {
    pub fn name(&self) -> &'static str {
        match self {
            IntervalMode::LordCiMarginal(_) => "lord_ci",
            IntervalMode::ConditionalAtNominal { .. } => "conditional",
        }
    }
}

/// Wire form: `{"rule":"symmetric"}`, `{"rule":"one_sided"}`,
/// `{"rule":"mqc","psi":0.7}` or `{"rule":"conditional","shape":"two_sided"}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntervalModeRepr {
    rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<TruncationShape>,
}

impl Serialize for IntervalMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match *self {
            IntervalMode::LordCiMarginal(rule) => IntervalModeRepr {
                rule: rule.name().to_string(),
                psi: match rule {
                    MarginalRule::Mqc { psi } => Some(psi),
                    _ => None,
                },
                shape: None,
            },
            IntervalMode::ConditionalAtNominal { shape } => IntervalModeRepr {
                rule: "conditional".into(),
                psi: None,
                shape,
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntervalMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = IntervalModeRepr::deserialize(d)?;
        if r.rule == "conditional" {
            if r.psi.is_some() {
                return Err(D::Error::custom("conditional intervals take no psi"));
            }
            return Ok(IntervalMode::ConditionalAtNominal { shape: r.shape });
        }
        if r.shape.is_some() {
            return Err(D::Error::custom(format!("rule {} takes no shape", r.rule)));
        }
        let mut obj = serde_json::Map::new();
        obj.insert("rule".into(), r.rule.into());
        if let Some(psi) = r.psi {
            obj.insert("psi".into(), psi.into());
        }
        let rule: MarginalRule = serde_json::from_value(obj.into()).map_err(D::Error::custom)?;
        Ok(IntervalMode::LordCiMarginal(rule))
    }
}

/// Everything a protocol run needs.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub alpha: f64,
    pub w0: f64,
    pub gamma: GammaSequence,
    pub selection: RuleSpec,
    pub interval_mode: IntervalMode,
    pub horizon: usize,
}

impl ProtocolConfig {
    /// Defaults: `W₀ = α/2`, default weights, LORD-CI intervals from the
    /// selection rule's own marginal rule (symmetric for fixed thresholds).
    pub fn new(alpha: f64, selection: RuleSpec, horizon: usize) -> ProtocolConfig {
        let rule = selection.marginal_rule().unwrap_or_default();
        ProtocolConfig {
            alpha,
            w0: alpha / 2.0,
            gamma: GammaSequence::lord_default(horizon),
            selection,
            interval_mode: IntervalMode::LordCiMarginal(rule),
            horizon,
        }
    }

    pub fn with_interval_mode(mut self, mode: IntervalMode) -> ProtocolConfig {
        self.interval_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.w0 > 0.0 && self.w0 < self.alpha) {
            return Err(Error::invalid(format!("w0 must lie in (0, alpha), got {}", self.w0)));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        self.selection.validate()?;
        match self.interval_mode {
            IntervalMode::LordCiMarginal(rule) => {
                rule.validate()?;
                if let Some(sel) = self.selection.marginal_rule() {
                    if sel != rule {
                        return Err(Error::Config(format!(
                            "interval rule {} differs from the selection rule {}; reported intervals must be the candidate intervals",
                            rule.name(),
                            sel.name()
                        )));
                    }
                }
            }
            IntervalMode::ConditionalAtNominal { shape } => {
                if self.alpha >= 0.5 {
                    return Err(Error::invalid("conditional intervals need alpha < 0.5"));
                }
                let ctx = self.selection.selection_event(self.alpha / 2.0)?;
                let implied = match ctx {
                    TruncationContext::RightTail(_) => TruncationShape::RightTail,
                    TruncationContext::TwoSided(_) => TruncationShape::TwoSided,
                };
                if let Some(s) = shape {
                    if s != implied {
                        return Err(Error::Config(format!(
                            "conditional shape {s:?} does not match the selection event {implied:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// What is fixed before `xᵢ` is seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Commitment {
    pub index: u64,
    pub level: f64,
    /// Truncation region used by conditional intervals at this step.
    pub selection_event: Option<TruncationContext>,
}

/// Proof that step `index` was committed. Not `Clone`: it is consumed by
/// [`Protocol::observe`].
#[derive(Debug)]
pub struct CommitToken {
    protocol: u64,
    index: u64,
    level: f64,
}

impl CommitToken {
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn level(&self) -> f64 {
        self.level
    }
}

/// Per-step report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub index: u64,
    pub x: f64,
    pub level: f64,
    pub selected: bool,
    /// Present iff selected.
    pub interval: Option<Interval>,
    /// `Dᵢ`: +1 if the interval lies in (0, ∞), −1 if in (−∞, 0], else 0.
    pub sign: i8,
    /// `Dᵢ = −1` and the interval also excludes 0.
    pub strict_negative: bool,
    pub localized_index: Option<usize>,
}

impl StepOutcome {
    /// Error-rate record; `theta`, if known, fills in the miscoverage flag.
    pub fn record(&self, theta: Option<f64>) -> StepRecord {
        StepRecord {
            index: self.index,
            selected: self.selected,
            miscovered: match (self.selected, theta, self.interval) {
                (true, Some(t), Some(i)) => Some(!i.contains(t)),
                _ => None,
            },
            level: self.level,
            sign_decision: self.sign,
        }
    }
}

/// `Dᵢ` and the strict-negative flag for a reported interval.
pub fn sign_decision(interval: &Interval) -> (i8, bool) {
    match interval.sign_relative_to(0.0) {
        Some(s) => {
            let d = s.as_i8();
            (d, d == -1 && !interval.contains(0.0))
        }
        None => (0, false),
    }
}

static NEXT_PROTOCOL_ID: AtomicU64 = AtomicU64::new(1);

/// A running protocol instance.
#[derive(Debug)]
pub struct Protocol {
    id: u64,
    config: ProtocolConfig,
    scheduler: LordCi,
    pending: Option<u64>,
    /// `|x − θ₀|` below which sign-determining selection cannot fire at any
    /// level below α (levels are always below α).
    never_select_below: f64,
}

impl Protocol {
    pub fn new(config: ProtocolConfig) -> Result<Protocol> {
        config.validate()?;
        let scheduler = LordCi::new(config.alpha, config.w0, config.gamma.clone())?;
        let never_select_below = match config.selection {
            RuleSpec::SignDetermining { rule, .. } => rule.prepare(config.alpha)?.sign_threshold().max(0.0),
            _ => 0.0,
        };
        Ok(Protocol {
            id: NEXT_PROTOCOL_ID.fetch_add(1, Ordering::Relaxed),
            config,
            scheduler,
            pending: None,
            never_select_below,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn scheduler(&self) -> &LordCi {
        &self.scheduler
    }

    /// Fixes `αᵢ` and the selection event for the next step.
    pub fn commit(&mut self) -> Result<(Commitment, CommitToken)> {
        if let Some(i) = self.pending {
            return Err(Error::ProtocolOrder(format!(
                "step {i} is already committed and awaits its observation"
            )));
        }
        let index = self.scheduler.time();
        let level = self.scheduler.next_level();
        let selection_event = match self.config.interval_mode {
            IntervalMode::ConditionalAtNominal { .. } => Some(self.config.selection.selection_event(level)?),
            IntervalMode::LordCiMarginal(_) => None,
        };
        self.pending = Some(index);
        Ok((
            Commitment {
                index,
                level,
                selection_event,
            },
            CommitToken {
                protocol: self.id,
                index,
                level,
            },
        ))
    }

    /// Consumes the observation for a committed step.
    pub fn observe(&mut self, token: CommitToken, x: f64) -> Result<StepOutcome> {
        if token.protocol != self.id || self.pending != Some(token.index) {
            return Err(Error::ProtocolOrder(format!(
                "stale commit token for step {}",
                token.index
            )));
        }
        check_finite("observation", x)?;
        let level = token.level;
        let cfg = &self.config;
        let quick_reject = matches!(cfg.selection, RuleSpec::SignDetermining { null_value, .. }
            if (x - null_value).abs() < self.never_select_below);
        let (outcome, candidate) = if quick_reject {
            (SelectionOutcome::default(), None)
        } else {
            let prepared = cfg.selection.prepare(level)?;
            (prepared.decide(x), prepared.candidate(x))
        };
        let interval = if !outcome.selected {
            None
        } else {
            Some(match cfg.interval_mode {
                IntervalMode::LordCiMarginal(rule) => match candidate {
                    Some(i) => i,
                    None => rule.prepare(level)?.interval(x),
                },
                IntervalMode::ConditionalAtNominal { .. } => {
                    let ctx = cfg.selection.selection_event(level)?;
                    conditional_truncated_interval(x, ctx, cfg.alpha)?
                }
            })
        };
        let (sign, strict_negative) = interval.as_ref().map_or((0, false), sign_decision);
        self.scheduler.record_with_level(token.index, outcome.selected, level)?;
        self.pending = None;
        Ok(StepOutcome {
            index: token.index,
            x,
            level,
            selected: outcome.selected,
            interval,
            sign,
            strict_negative,
            localized_index: outcome.localized_index,
        })
    }

    /// Commit and observe in one call.
    pub fn step(&mut self, x: f64) -> Result<StepOutcome> {
        let (_, token) = self.commit()?;
        self.observe(token, x)
    }
}

/// Summary line written after a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub selected: u64,
    pub spent: f64,
    pub estimated_fcp: f64,
    pub scheduler: SchedulerSnapshot,
}

/// All outcomes of a run plus the final scheduler state.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub alpha: f64,
    pub outcomes: Vec<StepOutcome>,
    pub final_state: LordCi,
}

/// Column order of the flat CSV form of a run.
pub const RUN_CSV_HEADER: [&str; 7] = ["index", "level", "selected", "lo", "hi", "sign", "localized_index"];

/// Shortest exponent form that round-trips the `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

impl RunLog {
    pub fn levels(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.level).collect()
    }

    pub fn selections(&self) -> Vec<bool> {
        self.outcomes.iter().map(|o| o.selected).collect()
    }

    pub fn records(&self, thetas: Option<&[f64]>) -> Vec<StepRecord> {
        self.outcomes
            .iter()
            .enumerate()
            .map(|(k, o)| o.record(thetas.map(|t| t[k])))
            .collect()
    }

    pub fn estimated_fcp(&self) -> Result<f64> {
        metrics::estimated_fcp(&self.levels(), &self.selections())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            steps: self.outcomes.len() as u64,
            selected: self.final_state.num_selected() as u64,
            spent: self.final_state.spent(),
            estimated_fcp: self.final_state.estimated_fcp(),
            scheduler: self.final_state.snapshot(),
        }
    }

    /// One JSON object per step, then `{"summary": …}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for o in &self.outcomes {
            write_outcome_line(&mut w, o)?;
        }
        write_summary_line(&mut w, &self.summary())?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RUN_CSV_HEADER)?;
        for o in &self.outcomes {
            out.write_record(run_csv_row(o))?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn run_csv_row(o: &StepOutcome) -> [String; 7] {
    let (lo, hi) = match o.interval {
        Some(i) if !i.is_empty() => (fmt_f64(i.lo().unwrap()), fmt_f64(i.hi().unwrap())),
        _ => (String::new(), String::new()),
    };
    [
        o.index.to_string(),
        fmt_f64(o.level),
        (o.selected as u8).to_string(),
        lo,
        hi,
        o.sign.to_string(),
        o.localized_index.map_or(String::new(), |j| j.to_string()),
    ]
}

pub fn write_outcome_line<W: Write>(mut w: W, o: &StepOutcome) -> Result<()> {
    serde_json::to_writer(&mut w, o)?;
    w.write_all(b"\n").map_err(|e| Error::io("<output>", e))
}

pub fn write_summary_line<W: Write>(mut w: W, s: &RunSummary) -> Result<()> {
    serde_json::to_writer(&mut w, &serde_json::json!({ "summary": s }))?;
    w.write_all(b"\n").map_err(|e| Error::io("<output>", e))
}

/// Runs the protocol over a finite stream.
pub fn run_stream(config: &ProtocolConfig, observations: &[f64]) -> Result<RunLog> {
    let mut p = Protocol::new(config.clone())?;
    let outcomes = observations.iter().map(|&x| p.step(x)).collect::<Result<Vec<_>>>()?;
    Ok(RunLog {
        alpha: config.alpha,
        outcomes,
        final_state: p.scheduler,
    })
}

/// Levels and rejections of LORD++ online testing.
#[derive(Debug, Clone, PartialEq)]
pub struct TestingRun {
    pub levels: Vec<f64>,
    pub rejections: Vec<bool>,
}

/// LORD++ testing on the same scheduler: reject `Hᵢ` iff `pᵢ ≤ αᵢ`.
pub fn lordpp_testing_run(pvalues: &[f64], alpha: f64, w0: f64, gamma: GammaSequence) -> Result<TestingRun> {
    let mut s = LordCi::new(alpha, w0, gamma)?;
    let mut levels = Vec::with_capacity(pvalues.len());
    let mut rejections = Vec::with_capacity(pvalues.len());
    for (k, &p) in pvalues.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "p-value {} at position {} is outside [0, 1]",
                p,
                k + 1
            )));
        }
        let level = s.next_level();
        let reject = p <= level;
        s.step(reject);
        levels.push(level);
        rejections.push(reject);
    }
    Ok(TestingRun { levels, rejections })
}
