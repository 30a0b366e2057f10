//! Selection rules and the monotonicity audit.
//!
//! A rule sees the current observation `x` and the committed level `αᵢ`, never
//! raw past observations; history enters only through `αᵢ`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::interval::{pairwise_disjoint, Interval, IntervalSet};
use crate::normal;
use crate::par;
use crate::rules::{CiRule, MarginalRule, PreparedRule, TruncationContext};
use crate::scheduler::LordCi;

/// Declarative selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    /// Select when `x > threshold`, or `|x| > threshold` if two-sided.
    FixedThreshold {
        threshold: f64,
        #[serde(default)]
        two_sided: bool,
    },
    /// Select when the candidate interval lies on one side of `null_value`.
    SignDetermining {
        #[serde(default)]
        rule: MarginalRule,
        #[serde(default)]
        null_value: f64,
    },
    /// Select when the candidate interval lies inside exactly one target set.
    Localization {
        #[serde(default)]
        rule: MarginalRule,
        targets: Vec<IntervalSet>,
    },
    /// Select (reject the composite null) when the candidate interval misses `null_set`.
    CompositeTest {
        #[serde(default)]
        rule: MarginalRule,
        null_set: IntervalSet,
    },
}

/// Result of applying a selection rule to one observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected: bool,
    /// 1-based index of the target the candidate interval falls in.
    pub localized_index: Option<usize>,
    /// Side of the null value, for sign-determining rules.
    pub sign: Option<i8>,
}

impl SelectionOutcome {
    const NONE: SelectionOutcome = SelectionOutcome {
        selected: false,
        localized_index: None,
        sign: None,
    };

    fn selected() -> SelectionOutcome {
        SelectionOutcome {
            selected: true,
            ..SelectionOutcome::NONE
        }
    }
}

impl RuleSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RuleSpec::FixedThreshold { threshold, .. } => check_finite("threshold", *threshold),
            RuleSpec::SignDetermining { rule, null_value } => {
                rule.validate()?;
                check_finite("null_value", *null_value)
            }
            RuleSpec::Localization { rule, targets } => {
                rule.validate()?;
                if targets.is_empty() {
                    return Err(Error::invalid("localization needs at least one target"));
                }
                pairwise_disjoint(targets)
            }
            RuleSpec::CompositeTest { rule, .. } => rule.validate(),
        }
    }

    /// The marginal rule used to build candidate intervals, if any.
    pub fn marginal_rule(&self) -> Option<MarginalRule> {
        match self {
            RuleSpec::FixedThreshold { .. } => None,
            RuleSpec::SignDetermining { rule, .. }
            | RuleSpec::Localization { rule, .. }
            | RuleSpec::CompositeTest { rule, .. } => Some(*rule),
        }
    }

    /// Resolves the rule at a committed level.
    pub fn prepare(&self, level: f64) -> Result<PreparedSelection<'_>> {
        let rule = match self.marginal_rule() {
            Some(r) => Some(r.prepare(level)?),
            None => None,
        };
        Ok(PreparedSelection { spec: self, rule })
    }

    pub fn decide(&self, x: f64, level: f64) -> Result<SelectionOutcome> {
        check_finite("x", x)?;
        Ok(self.prepare(level)?.decide(x))
    }

    /// The selection event `{x : selected}` at `level` as a truncation region,
    /// when it has that form.
    pub fn selection_event(&self, level: f64) -> Result<TruncationContext> {
        match *self {
            RuleSpec::FixedThreshold {
                threshold,
                two_sided: false,
            } => Ok(TruncationContext::RightTail(threshold)),
            RuleSpec::FixedThreshold {
                threshold,
                two_sided: true,
            } => {
                if threshold < 0.0 {
                    return Err(Error::ConditionalUnavailable(format!(
                        "|x| > {threshold} selects everything"
                    )));
                }
                Ok(TruncationContext::TwoSided(threshold))
            }
            RuleSpec::SignDetermining { rule, null_value } => {
                if null_value != 0.0 {
                    return Err(Error::ConditionalUnavailable(format!(
                        "sign-determining selection around {null_value} (only 0 is supported)"
                    )));
                }
                Ok(TruncationContext::TwoSided(rule.prepare(level)?.sign_threshold()))
            }
            RuleSpec::Localization { .. } => Err(Error::ConditionalUnavailable("localization".into())),
            RuleSpec::CompositeTest { .. } => Err(Error::ConditionalUnavailable("composite testing".into())),
        }
    }
}

/// Free-function form of [`RuleSpec::decide`].
pub fn decide(spec: &RuleSpec, x: f64, level: f64) -> Result<SelectionOutcome> {
    spec.decide(x, level)
}

/// A selection rule with its level-dependent constants resolved.
#[derive(Debug, Clone, Copy)]
pub struct PreparedSelection<'a> {
    spec: &'a RuleSpec,
    rule: Option<PreparedRule>,
}

impl PreparedSelection<'_> {
    /// Candidate interval at `x`; `None` for fixed-threshold rules.
    pub fn candidate(&self, x: f64) -> Option<Interval> {
        self.rule.map(|r| r.interval(x))
    }

    pub fn prepared_rule(&self) -> Option<&PreparedRule> {
        self.rule.as_ref()
    }

    pub fn decide(&self, x: f64) -> SelectionOutcome {
        match self.spec {
            RuleSpec::FixedThreshold { threshold, two_sided } => {
                let stat = if *two_sided { x.abs() } else { x };
                if stat > *threshold {
                    SelectionOutcome::selected()
                } else {
                    SelectionOutcome::NONE
                }
            }
            RuleSpec::SignDetermining { null_value, .. } => {
                let candidate = self.candidate(x).unwrap_or(Interval::Empty);
                match candidate.sign_relative_to(*null_value) {
                    Some(sign) => {
                        debug_assert!(
                            !candidate.contains(*null_value) || sign.as_i8() == -1,
                            "sign-determining interval straddles the null value"
                        );
                        SelectionOutcome {
                            sign: Some(sign.as_i8()),
                            ..SelectionOutcome::selected()
                        }
                    }
                    None => SelectionOutcome::NONE,
                }
            }
            RuleSpec::Localization { targets, .. } => {
                let candidate = self.candidate(x).unwrap_or(Interval::Empty);
                if candidate.is_empty() {
                    return SelectionOutcome::NONE;
                }
                let mut hits = targets
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| k.contains_interval(&candidate));
                match (hits.next(), hits.next()) {
                    (Some((j, _)), None) => SelectionOutcome {
                        localized_index: Some(j + 1),
                        ..SelectionOutcome::selected()
                    },
                    _ => SelectionOutcome::NONE,
                }
            }
            RuleSpec::CompositeTest { null_set, .. } => {
                let candidate = self.candidate(x).unwrap_or(Interval::Empty);
                if null_set.intersects(&candidate) {
                    SelectionOutcome::NONE
                } else {
                    SelectionOutcome::selected()
                }
            }
        }
    }
}

/// The `|x|` cutoff at which sign-determining selection coincides with
/// rejecting `H₀: θ = 0` by the rule's usual p-value: `z_{level/2}` for the
/// symmetric rule, `z_level` for the one-sided rule.
pub fn equivalent_pvalue_threshold(spec: &RuleSpec, level: f64) -> Result<f64> {
    match spec {
        RuleSpec::SignDetermining { rule, .. } => match rule {
            MarginalRule::Symmetric => {
                crate::error::check_level(level)?;
                Ok(normal::upper_quantile(level / 2.0))
            }
            MarginalRule::OneSided => {
                crate::error::check_level(level)?;
                Ok(normal::upper_quantile(level))
            }
            MarginalRule::Mqc { .. } => Err(Error::NoClosedForm),
        },
        _ => Err(Error::invalid("p-value cutoffs exist only for sign-determining rules")),
    }
}

/// A history pair on which monotonicity fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// The larger history, as a 0/1 string `S₁S₂…`.
    pub history: String,
    /// The coordinatewise-smaller history.
    pub dominated: String,
    /// Observation at which the smaller history selects and the larger does not
    /// (absent for a level violation).
    pub x: Option<f64>,
    pub level: f64,
    pub dominated_level: f64,
}

/// Outcome of an exhaustive monotonicity audit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub max_history_len: usize,
    pub histories: usize,
    pub pairs: u64,
    pub x_points: usize,
    pub level_violations: u64,
    pub selection_violations: u64,
    /// Up to [`AuditReport::MAX_WITNESSES`] example violations.
    pub witnesses: Vec<Violation>,
}

impl AuditReport {
    pub const MAX_WITNESSES: usize = 20;

    pub fn is_clean(&self) -> bool {
        self.level_violations == 0 && self.selection_violations == 0
    }

    fn record(&mut self, v: Violation) {
        if self.witnesses.len() < Self::MAX_WITNESSES {
            self.witnesses.push(v);
        }
    }
}

/// Largest history length the audit enumerates.
pub const MAX_AUDIT_HISTORY: usize = 12;

/// Default audit grid: 201 equispaced points on `[−6, 6]`.
pub fn audit_grid() -> Vec<f64> {
    (0..=200).map(|k| -6.0 + 0.06 * k as f64).collect()
}

fn history_string(mask: u32, len: usize) -> String {
    (0..len).map(|b| if mask >> b & 1 == 1 { '1' } else { '0' }).collect()
}

fn replay_level(template: &LordCi, mask: u32, len: usize) -> f64 {
    let mut s = template.clone();
    for b in 0..len {
        s.step(mask >> b & 1 == 1);
    }
    s.next_level()
}

/// Exhaustive monotonicity audit for an arbitrary level-indexed selection rule.
///
/// For every history length `n ≤ max_len` and every coordinatewise-ordered
/// pair `s ⪰ s̃`, checks that the next level satisfies `α(s) ≥ α(s̃)` and that
/// `select(x, α(s)) ≥ select(x, α(s̃))` at every grid point and at the branch
/// points of the rule at both levels.
pub fn audit_selection<D, B>(select: D, branch_points: B, template: &LordCi, max_len: usize) -> Result<AuditReport>
where
    D: Fn(f64, f64) -> Result<bool> + Sync + Send,
    B: Fn(f64) -> Vec<f64> + Sync + Send,
{
    if max_len > MAX_AUDIT_HISTORY {
        return Err(Error::invalid(format!(
            "history length {max_len} exceeds the exhaustive audit cap {MAX_AUDIT_HISTORY}"
        )));
    }
    let grid = audit_grid();
    let words = grid.len().div_ceil(64);
    let mut report = AuditReport {
        max_history_len: max_len,
        x_points: grid.len(),
        ..AuditReport::default()
    };
    for len in 0..=max_len {
        let n = 1usize << len;
        // Per history: next level and the selection bitmap over the grid.
        let rows = par::map_range(n, |mask| -> Result<(f64, Vec<u64>, Vec<f64>)> {
            let level = replay_level(template, mask as u32, len);
            let mut bits = vec![0u64; words];
            for (k, &x) in grid.iter().enumerate() {
                if select(x, level)? {
                    bits[k / 64] |= 1 << (k % 64);
                }
            }
            Ok((level, bits, branch_points(level)))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        report.histories += n;
        for s in 0..n as u32 {
            // enumerate proper submasks t of s
            let mut t = s;
            loop {
                t = t.wrapping_sub(1) & s;
                if t == s {
                    break;
                }
                report.pairs += 1;
                let (ls, bs, ps) = &rows[s as usize];
                let (lt, bt, pt) = &rows[t as usize];
                if ls < lt {
                    report.level_violations += 1;
                    report.record(Violation {
                        history: history_string(s, len),
                        dominated: history_string(t, len),
                        x: None,
                        level: *ls,
                        dominated_level: *lt,
                    });
                }
                let mut bad_x = bs
                    .iter()
                    .zip(bt)
                    .enumerate()
                    .find(|(_, (a, b))| *b & !*a != 0)
                    .map(|(w, (a, b))| grid[w * 64 + (b & !a).trailing_zeros() as usize]);
                if bad_x.is_none() {
                    for &x in ps.iter().chain(pt) {
                        if select(x, *lt)? && !select(x, *ls)? {
                            bad_x = Some(x);
                            break;
                        }
                    }
                }
                if let Some(x) = bad_x {
                    report.selection_violations += 1;
                    report.record(Violation {
                        history: history_string(s, len),
                        dominated: history_string(t, len),
                        x: Some(x),
                        level: *ls,
                        dominated_level: *lt,
                    });
                }
                if t == 0 {
                    break;
                }
            }
        }
    }
    Ok(report)
}

/// Branch points of a rule at a level: where the candidate interval changes form.
fn rule_branch_points(rule: &PreparedRule) -> Vec<f64> {
    let mut pts = match rule {
        PreparedRule::Symmetric { z } | PreparedRule::OneSided { z } => vec![*z],
        PreparedRule::Mqc(d) => vec![
            d.z_psi,
            d.z_rest,
            d.z_half,
            d.theta_c,
            d.theta_c - d.z_psi,
            d.z_rest - d.theta_c,
        ],
    };
    let neg: Vec<f64> = pts.iter().map(|p| -p).collect();
    pts.extend(neg);
    pts
}

/// Monotonicity audit of a [`RuleSpec`] under LORD-CI levels from `template`.
pub fn monotonicity_audit(spec: &RuleSpec, template: &LordCi, history_len: usize) -> Result<AuditReport> {
    spec.validate()?;
    audit_selection(
        |x, level| Ok(spec.decide(x, level)?.selected),
        |level| {
            let mut pts = match spec {
                RuleSpec::FixedThreshold { threshold, .. } => vec![*threshold, -*threshold],
                _ => Vec::new(),
            };
            if let Some(Ok(rule)) = spec.marginal_rule().map(|r| r.prepare(level)) {
                pts.extend(rule_branch_points(&rule));
            }
            pts
        },
        template,
        history_len,
    )
}

/// Monotonicity audit of sign-determining selection driven by an arbitrary
/// interval rule (e.g. a test fixture that is not nested).
pub fn sign_determining_audit<R: CiRule>(rule: &R, template: &LordCi, history_len: usize) -> Result<AuditReport> {
    audit_selection(
        |x, level| Ok(rule.interval(x, level)?.is_sign_determining()),
        |_| Vec::new(),
        template,
        history_len,
    )
}
