//! Time-uniform post-hoc upper bound on the false coverage proportion.
//!
//! With probability at least `1 − δ`, simultaneously for every `n`,
//!
//! ```text
//! FCP(n) ≤ (a + Σᵢ≤n αᵢ) / (Σᵢ≤n Sᵢ) · ln(1/δ) / (a · ln(1 + ln(1/δ)/a)).
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{fmt_f64, RunLog, StepOutcome};
use crate::scheduler::CompensatedSum;

/// Free constant `a` and confidence parameter `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosthocConfig {
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_a() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

impl Default for PosthocConfig {
    fn default() -> Self {
        PosthocConfig {
            a: default_a(),
            delta: default_delta(),
        }
    }
}

impl PosthocConfig {
    pub fn new(a: f64, delta: f64) -> Result<PosthocConfig> {
        let cfg = PosthocConfig { a, delta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!("a must be positive and finite, got {}", self.a)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// `ln(1/δ) / (a · ln(1 + ln(1/δ)/a))`.
    pub fn factor(&self) -> f64 {
        let l = -self.delta.ln();
        l / (self.a * (l / self.a).ln_1p())
    }
}

/// A bound value; `Vacuous` when nothing has been selected yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FcpBound {
    Finite(f64),
    Vacuous,
}

impl FcpBound {
    pub fn value(&self) -> Option<f64> {
        match *self {
            FcpBound::Finite(v) => Some(v),
            FcpBound::Vacuous => None,
        }
    }

    pub fn is_vacuous(&self) -> bool {
        matches!(self, FcpBound::Vacuous)
    }

    /// Whether `fcp` lies above the bound (never for a vacuous bound).
    pub fn is_exceeded_by(&self, fcp: f64) -> bool {
        matches!(*self, FcpBound::Finite(b) if fcp > b)
    }
}

impl fmt::Display for FcpBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FcpBound::Finite(v) => f.write_str(&fmt_f64(v)),
            FcpBound::Vacuous => f.write_str("vacuous"),
        }
    }
}

fn bound_from_sums(spent: f64, selected: u64, cfg: &PosthocConfig) -> FcpBound {
    if selected == 0 {
        FcpBound::Vacuous
    } else {
        FcpBound::Finite((cfg.a + spent) / selected as f64 * cfg.factor())
    }
}

fn check_lengths(levels: &[f64], selections: &[bool]) -> Result<()> {
    if levels.len() != selections.len() {
        return Err(Error::invalid(format!(
            "{} levels but {} selection indicators",
            levels.len(),
            selections.len()
        )));
    }
    Ok(())
}

/// The bound at prefix `n` (1-based).
pub fn fcp_upper_bound(levels: &[f64], selections: &[bool], cfg: &PosthocConfig, n: usize) -> Result<FcpBound> {
    cfg.validate()?;
    check_lengths(levels, selections)?;
    if n == 0 || n > levels.len() {
        return Err(Error::invalid(format!("prefix n = {n} outside 1..={}", levels.len())));
    }
    let mut spent = CompensatedSum::default();
    levels[..n].iter().for_each(|&l| spent.add(l));
    let selected = selections[..n].iter().filter(|&&s| s).count() as u64;
    Ok(bound_from_sums(spent.value(), selected, cfg))
}

/// One point of the tracked bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub n: u64,
    pub bound: FcpBound,
}

/// The bound at every prefix `n ≥ 1`.
pub fn track_uniform_bound(levels: &[f64], selections: &[bool], cfg: &PosthocConfig) -> Result<Vec<BoundPoint>> {
    cfg.validate()?;
    check_lengths(levels, selections)?;
    let mut spent = CompensatedSum::default();
    let mut selected = 0u64;
    Ok(levels
        .iter()
        .zip(selections)
        .enumerate()
        .map(|(k, (&l, &s))| {
            spent.add(l);
            selected += s as u64;
            BoundPoint {
                n: k as u64 + 1,
                bound: bound_from_sums(spent.value(), selected, cfg),
            }
        })
        .collect())
}

/// [`track_uniform_bound`] over a protocol run.
pub fn track_run_log(log: &RunLog, cfg: &PosthocConfig) -> Result<Vec<BoundPoint>> {
    track_uniform_bound(&log.levels(), &log.selections(), cfg)
}

pub const BOUND_CSV_HEADER: [&str; 2] = ["n", "bound"];

/// `n,bound` rows; vacuous bounds are written as `vacuous`.
pub fn write_bound_csv<W: Write>(w: W, points: &[BoundPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BOUND_CSV_HEADER)?;
    for p in points {
        out.write_record([p.n.to_string(), p.bound.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Levels and selection indicators from a JSON-lines run log (one step
/// outcome per line; a trailing `{"summary": …}` line and blank lines are
/// skipped).
pub fn read_run_jsonl<R: BufRead>(reader: R) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut levels = Vec::new();
    let mut selections = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<run log>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| Error::MalformedInput {
            line: k + 1,
            message: e.to_string(),
        })?;
        if value.get("summary").is_some() {
            continue;
        }
        let o: StepOutcome = serde_json::from_value(value).map_err(|e| Error::MalformedInput {
            line: k + 1,
            message: e.to_string(),
        })?;
        levels.push(o.level);
        selections.push(o.selected);
    }
    Ok((levels, selections))
}
