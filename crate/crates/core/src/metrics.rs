//! Error-rate definitions as pure folds over per-step records.
//!
//! Every ratio uses the convention 0/0 = 0. Sign errors use the weak
//! convention: `θ = 0` counts as nonpositive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::{check_decay, CompensatedSum};

/// One step of a stream, as seen by the error-rate computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time index `i ≥ 1`.
    pub index: u64,
    /// `Sᵢ`.
    pub selected: bool,
    /// `Vᵢ`; only known when the parameter is known (simulation).
    pub miscovered: Option<bool>,
    /// `αᵢ`, the committed level.
    pub level: f64,
    /// `Dᵢ ∈ {−1, 0, 1}`.
    pub sign_decision: i8,
}

impl StepRecord {
    /// Checks the record invariants: miscoverage and sign decisions imply selection.
    pub fn validate(&self) -> Result<()> {
        if self.miscovered == Some(true) && !self.selected {
            return Err(Error::invalid(format!(
                "record {} is miscovered but not selected",
                self.index
            )));
        }
        if self.sign_decision != 0 && !self.selected {
            return Err(Error::invalid(format!(
                "record {} has a sign decision but is not selected",
                self.index
            )));
        }
        if !(-1..=1).contains(&self.sign_decision) {
            return Err(Error::invalid(format!(
                "record {} has sign decision {}",
                self.index, self.sign_decision
            )));
        }
        Ok(())
    }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn miscovered_flag(r: &StepRecord) -> Result<bool> {
    if !r.selected {
        return Ok(false);
    }
    r.miscovered.ok_or(Error::IncompleteOracle { index: r.index })
}

/// Realized false coverage proportion over records with `index ≤ t`.
pub fn fcp(records: &[StepRecord], t: u64) -> Result<f64> {
    let mut v = 0u64;
    let mut s = 0u64;
    for r in records.iter().filter(|r| r.index <= t) {
        v += miscovered_flag(r)? as u64;
        s += r.selected as u64;
    }
    Ok(ratio(v as f64, s as f64))
}

/// `Σαᵢ / (ΣSᵢ ∨ 1)`.
pub fn estimated_fcp(levels: &[f64], selections: &[bool]) -> Result<f64> {
    if levels.len() != selections.len() {
        return Err(Error::invalid(format!(
            "{} levels but {} selection flags",
            levels.len(),
            selections.len()
        )));
    }
    let mut spent = CompensatedSum::default();
    for &l in levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::invalid(format!("level must lie in (0, 1), got {l}")));
        }
        spent.add(l);
    }
    let s = selections.iter().filter(|&&b| b).count().max(1);
    Ok(spent.value() / s as f64)
}

/// Decaying-memory FCP: `Σ decay^{t−i}Vᵢ / Σ decay^{t−i}Sᵢ` over `index ≤ t`.
pub fn mem_weighted_fcp(records: &[StepRecord], decay: f64, t: u64) -> Result<f64> {
    check_decay(decay)?;
    if decay == 1.0 {
        return fcp(records, t);
    }
    let mut v = 0.0;
    let mut s = 0.0;
    for r in records.iter().filter(|r| r.index <= t) {
        let w = decay.powi((t - r.index) as i32);
        if miscovered_flag(r)? {
            v += w;
        }
        if r.selected {
            s += w;
        }
    }
    Ok(ratio(v, s))
}

/// True if a sign call `d` is wrong for parameter `theta` (θ = 0 counts as nonpositive).
#[inline]
pub fn is_false_sign(d: i8, theta: f64) -> bool {
    (d == 1 && theta <= 0.0) || (d == -1 && theta > 0.0)
}

/// `(false sign calls, total sign calls)` given the true parameters, aligned with `records`.
pub fn sign_error_counts(records: &[StepRecord], thetas: &[f64]) -> Result<(u64, u64)> {
    if records.len() != thetas.len() {
        return Err(Error::invalid(format!(
            "{} records but {} parameters",
            records.len(),
            thetas.len()
        )));
    }
    let mut wrong = 0;
    let mut total = 0;
    for (r, &theta) in records.iter().zip(thetas) {
        if r.sign_decision != 0 {
            total += 1;
            wrong += is_false_sign(r.sign_decision, theta) as u64;
        }
    }
    Ok((wrong, total))
}

/// Per-replication counts and proportions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub fcp: f64,
    pub est_fcp: f64,
    pub fsp: f64,
    pub flp: f64,
    pub n_selected: u64,
    pub n_miscovered: u64,
    pub false_signs: u64,
    pub total_signs: u64,
    pub false_localizations: u64,
    pub total_localizations: u64,
}

impl RateReport {
    /// Builds the proportions from raw counts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_counts(
        n_selected: u64,
        n_miscovered: u64,
        spent: f64,
        false_signs: u64,
        total_signs: u64,
        false_localizations: u64,
        total_localizations: u64,
    ) -> RateReport {
        RateReport {
            fcp: ratio(n_miscovered as f64, n_selected as f64),
            est_fcp: spent / n_selected.max(1) as f64,
            fsp: ratio(false_signs as f64, total_signs as f64),
            flp: ratio(false_localizations as f64, total_localizations as f64),
            n_selected,
            n_miscovered,
            false_signs,
            total_signs,
            false_localizations,
            total_localizations,
        }
    }

    /// Fraction of selected intervals that determine the sign.
    pub fn sign_determining_fraction(&self) -> f64 {
        ratio(self.total_signs as f64, self.n_selected as f64)
    }
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    fn mean_of(xs: impl Iterator<Item = f64> + Clone) -> Estimate {
        let n = xs.clone().count();
        if n == 0 {
            return Estimate::default();
        }
        let nf = n as f64;
        let mean = xs.clone().sum::<f64>() / nf;
        let se = if n > 1 {
            let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
            (var / nf).sqrt()
        } else {
            0.0
        };
        Estimate { value: mean, se }
    }

    /// `true` if `|value − target| ≤ tol`.
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.value - target).abs() <= tol
    }
}

/// Aggregated rates over replications.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_reps: usize,
    /// Mean of per-replication FCPs.
    pub fcr: Estimate,
    /// Ratio of mean miscoverages to mean selections (delta-method SE).
    pub mfcr: Estimate,
    /// Mean FCP over replications with at least one selection.
    pub pfcr: Estimate,
    /// Mean false sign proportion.
    pub fsr: Estimate,
    /// Mean false localization proportion.
    pub flr: Estimate,
    pub mean_selected: Estimate,
    /// Mean over replications with at least one selection of the sign-determining fraction.
    pub sign_determining_fraction: Estimate,
    pub n_reps_with_selection: usize,
}

/// Aggregates per-replication reports into FCR / mFCR / pFCR estimates.
pub fn aggregate_rates(reports: &[RateReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::invalid("at least one replication is required"));
    }
    let n = reports.len() as f64;
    let v_mean = reports.iter().map(|r| r.n_miscovered as f64).sum::<f64>() / n;
    let s_mean = reports.iter().map(|r| r.n_selected as f64).sum::<f64>() / n;
    let mfcr_value = ratio(v_mean, s_mean);
    let mfcr_se = if s_mean > 0.0 && reports.len() > 1 {
        // Delta method for a ratio of means.
        let (mut vv, mut ss, mut vs) = (0.0, 0.0, 0.0);
        for r in reports {
            let dv = r.n_miscovered as f64 - v_mean;
            let ds = r.n_selected as f64 - s_mean;
            vv += dv * dv;
            ss += ds * ds;
            vs += dv * ds;
        }
        let d = n - 1.0;
        let var = (vv / d - 2.0 * mfcr_value * vs / d + mfcr_value * mfcr_value * ss / d) / (s_mean * s_mean);
        (var.max(0.0) / n).sqrt()
    } else {
        0.0
    };
    let positive = reports.iter().filter(|r| r.n_selected > 0);
    Ok(AggregateReport {
        n_reps: reports.len(),
        fcr: Estimate::mean_of(reports.iter().map(|r| r.fcp)),
        mfcr: Estimate {
            value: mfcr_value,
            se: mfcr_se,
        },
        pfcr: Estimate::mean_of(positive.clone().map(|r| r.fcp)),
        fsr: Estimate::mean_of(reports.iter().map(|r| r.fsp)),
        flr: Estimate::mean_of(reports.iter().map(|r| r.flp)),
        mean_selected: Estimate::mean_of(reports.iter().map(|r| r.n_selected as f64)),
        sign_determining_fraction: Estimate::mean_of(positive.clone().map(|r| r.sign_determining_fraction())),
        n_reps_with_selection: positive.count(),
    })
}
