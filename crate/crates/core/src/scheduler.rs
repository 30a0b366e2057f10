//! Predictable level sequences: the LORD-CI update, alpha-spending, and a
//! decaying-memory variant.
//!
//! Levels are a function of the selection history only. The LORD-CI update
//! issued at time `i` is
//!
//! ```text
//! αᵢ = γᵢ·W₀ + (α − W₀)·γ_{i−τ₁} + α·Σ_{k ≥ 2, τₖ < i} γ_{i−τₖ}
//! ```
//!
//! where `τₖ` is the time of the k-th selection and `γⱼ = 0` for `j ≤ 0`.
//! Every selection adds a nonnegative term, so levels are monotone in the
//! history, and `Σαᵢ ≤ α·(ΣSᵢ ∨ 1)` holds at every prefix.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalizing constant of the default weight sequence.
pub const DEFAULT_GAMMA_CONSTANT: f64 = 0.0722;

/// Default LORD++ weights: `0.0722·ln(j∨2) / (j·e^{√ln j})`, zero for `j ≤ 0`.
pub fn gamma_default(j: i64) -> f64 {
    if j <= 0 {
        return 0.0;
    }
    let jf = j as f64;
    DEFAULT_GAMMA_CONSTANT * jf.max(2.0).ln() / (jf * jf.ln().sqrt().exp())
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, PartialEq)]
enum GammaSource {
    Default,
    Custom,
}

/// A nonincreasing, nonnegative weight sequence `γ₁, γ₂, …` with `Σγⱼ ≤ 1`.
///
/// Weights are tabulated up to a horizon. Past the horizon the default
/// sequence falls back to the closed form; a custom sequence is zero there.
#[derive(Debug, Clone)]
pub struct GammaSequence {
    table: Arc<[f64]>,
    source: GammaSource,
}

impl GammaSequence {
    /// The default LORD++ weights, memoized for `j ≤ horizon`.
    pub fn lord_default(horizon: usize) -> GammaSequence {
        let table: Vec<f64> = (1..=horizon as i64).map(gamma_default).collect();
        GammaSequence {
            table: table.into(),
            source: GammaSource::Default,
        }
    }

    /// A user-supplied sequence; must be nonnegative, nonincreasing and sum to at most one.
    pub fn from_weights(weights: Vec<f64>) -> Result<GammaSequence> {
        if weights.is_empty() {
            return Err(Error::invalid("gamma sequence is empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("gamma weights must be finite and nonnegative"));
        }
        if weights.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("gamma weights must be nonincreasing"));
        }
        let mut total = CompensatedSum::default();
        weights.iter().for_each(|&w| total.add(w));
        if total.value() > 1.0 + 1e-12 {
            return Err(Error::invalid(format!("gamma weights sum to {} > 1", total.value())));
        }
        Ok(GammaSequence {
            table: weights.into(),
            source: GammaSource::Custom,
        })
    }

    #[inline]
    pub fn weight(&self, j: i64) -> f64 {
        if j <= 0 {
            return 0.0;
        }
        match self.table.get(j as usize - 1) {
            Some(&w) => w,
            None => match self.source {
                GammaSource::Default => gamma_default(j),
                GammaSource::Custom => 0.0,
            },
        }
    }

    pub fn horizon(&self) -> usize {
        self.table.len()
    }

    pub fn is_default(&self) -> bool {
        self.source == GammaSource::Default
    }

    pub fn weights(&self) -> &[f64] {
        &self.table
    }

    /// Compensated partial sum `Σ_{j ≤ n} γⱼ`.
    pub fn partial_sum(&self, n: usize) -> f64 {
        let mut s = CompensatedSum::default();
        for j in 1..=n as i64 {
            s.add(self.weight(j));
        }
        s.value()
    }
}

/// Fixed alpha-spending level `α·γⱼ`; controls the probability of any miscoverage.
pub fn alpha_spending_level(j: i64, alpha: f64, gamma: &GammaSequence) -> f64 {
    alpha * gamma.weight(j)
}

/// State of the LORD-CI level scheduler.
///
/// `time` is the index of the next level to be issued. `selection_times`
/// and `spent` cover the recorded steps `1..time`.
#[derive(Debug, Clone)]
pub struct LordCi {
    alpha: f64,
    w0: f64,
    gamma: GammaSequence,
    time: u64,
    selection_times: Vec<u64>,
    spent: CompensatedSum,
}

/// JSON snapshot of a scheduler so a stream can be suspended and resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSnapshot {
    pub alpha: f64,
    pub w0: f64,
    pub time: u64,
    pub selection_times: Vec<u64>,
    pub spent: f64,
}

impl LordCi {
    pub fn new(alpha: f64, w0: f64, gamma: GammaSequence) -> Result<LordCi> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(w0 > 0.0 && w0 < alpha) {
            return Err(Error::invalid(format!(
                "w0 must lie in (0, alpha) = (0, {alpha}), got {w0}"
            )));
        }
        Ok(LordCi {
            alpha,
            w0,
            gamma,
            time: 1,
            selection_times: Vec::new(),
            spent: CompensatedSum::default(),
        })
    }

    /// Default configuration: `W₀ = α/2` and the default weights up to `horizon`.
    pub fn with_defaults(alpha: f64, horizon: usize) -> Result<LordCi> {
        LordCi::new(alpha, alpha / 2.0, GammaSequence::lord_default(horizon))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn gamma(&self) -> &GammaSequence {
        &self.gamma
    }

    /// Index of the step whose level is issued next.
    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn selection_times(&self) -> &[u64] {
        &self.selection_times
    }

    pub fn num_selected(&self) -> usize {
        self.selection_times.len()
    }

    /// `Σαⱼ` over recorded steps.
    pub fn spent(&self) -> f64 {
        self.spent.value()
    }

    /// `S₁…S_{time−1}` reconstructed from the selection times.
    pub fn history(&self) -> Vec<bool> {
        let mut h = vec![false; self.time as usize - 1];
        for &t in &self.selection_times {
            h[t as usize - 1] = true;
        }
        h
    }

    /// Estimated false coverage proportion `Σαⱼ / (ΣSⱼ ∨ 1)` over recorded steps.
    pub fn estimated_fcp(&self) -> f64 {
        self.spent() / (self.selection_times.len().max(1) as f64)
    }

    /// The level for the current time. Does not change the state.
    pub fn next_level(&self) -> f64 {
        let i = self.time as i64;
        let mut acc = CompensatedSum::default();
        acc.add(self.gamma.weight(i) * self.w0);
        if let Some((&first, rest)) = self.selection_times.split_first() {
            acc.add((self.alpha - self.w0) * self.gamma.weight(i - first as i64));
            let mut tail = CompensatedSum::default();
            for &t in rest {
                tail.add(self.gamma.weight(i - t as i64));
            }
            acc.add(self.alpha * tail.value());
        }
        acc.value()
    }

    /// Decaying-memory update: the initial wealth term carries `decay^{i−1}`
    /// and each selection credit carries `decay^{i−τₖ}`. With `decay = 1` this
    /// is exactly [`LordCi::next_level`].
    pub fn mem_next_level(&self, decay: f64) -> Result<f64> {
        check_decay(decay)?;
        if decay == 1.0 {
            return Ok(self.next_level());
        }
        let i = self.time as i64;
        let mut acc = CompensatedSum::default();
        acc.add(self.gamma.weight(i) * self.w0 * decay.powi((i - 1) as i32));
        if let Some((&first, rest)) = self.selection_times.split_first() {
            let lag = i - first as i64;
            acc.add((self.alpha - self.w0) * self.gamma.weight(lag) * decay.powi(lag as i32));
            let mut tail = CompensatedSum::default();
            for &t in rest {
                let lag = i - t as i64;
                tail.add(self.gamma.weight(lag) * decay.powi(lag as i32));
            }
            acc.add(self.alpha * tail.value());
        }
        Ok(acc.value())
    }

    /// Records `Sᵢ` for time `at`, charging the LORD-CI level of that time.
    pub fn record_decision(&mut self, at: u64, selected: bool) -> Result<()> {
        let level = self.next_level();
        self.record_with_level(at, selected, level)
    }

    /// Like [`LordCi::record_decision`] but charges a level the caller already
    /// computed (e.g. a decaying-memory level).
    pub fn record_with_level(&mut self, at: u64, selected: bool, level: f64) -> Result<()> {
        if at < self.time {
            return Err(Error::DoubleAdvance { time: at });
        }
        if at > self.time {
            return Err(Error::ProtocolOrder(format!(
                "recording time {at} but the scheduler is at time {}",
                self.time
            )));
        }
        self.spent.add(level);
        if selected {
            self.selection_times.push(at);
        }
        self.time += 1;
        Ok(())
    }

    /// Issues the current level and records the decision in one step.
    pub fn step(&mut self, selected: bool) -> f64 {
        let level = self.next_level();
        self.spent.add(level);
        if selected {
            self.selection_times.push(self.time);
        }
        self.time += 1;
        level
    }

    pub fn snapshot(&self) -> SchedulerSnapshot {
        SchedulerSnapshot {
            alpha: self.alpha,
            w0: self.w0,
            time: self.time,
            selection_times: self.selection_times.clone(),
            spent: self.spent(),
        }
    }

    pub fn restore(snapshot: &SchedulerSnapshot, gamma: GammaSequence) -> Result<LordCi> {
        let mut s = LordCi::new(snapshot.alpha, snapshot.w0, gamma)?;
        if snapshot.time == 0 {
            return Err(Error::invalid("snapshot time must be positive"));
        }
        if snapshot.selection_times.windows(2).any(|w| w[1] <= w[0])
            || snapshot.selection_times.iter().any(|&t| t == 0 || t >= snapshot.time)
        {
            return Err(Error::invalid(
                "snapshot selection times must be strictly increasing and precede the current time",
            ));
        }
        s.time = snapshot.time;
        s.selection_times = snapshot.selection_times.clone();
        s.spent.add(snapshot.spent);
        Ok(s)
    }
}

pub(crate) fn check_decay(decay: f64) -> Result<()> {
    if decay > 0.0 && decay <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("decay must lie in (0, 1], got {decay}")))
    }
}
