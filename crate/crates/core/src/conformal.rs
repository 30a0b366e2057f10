//! Conformal prediction intervals and their use in the online protocol.
//!
//! Both shipped predictors are linear smoothers: the fitted values on a
//! training set are linear in the responses. Full conformal therefore needs
//! only two refits per test point (with the hallucinated response at 0 and
//! at 1); every grid value is then evaluated exactly by interpolation.

use std::cmp::Ordering;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::interval::Interval;
use crate::par;
use crate::protocol::{sign_decision, RunLog, StepOutcome};
use crate::scheduler::{GammaSequence, LordCi};

/// Paired covariates and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl TrainingSet {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<TrainingSet> {
        if xs.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if xs.len() != ys.len() {
            return Err(Error::invalid(format!(
                "{} covariate rows but {} responses",
                xs.len(),
                ys.len()
            )));
        }
        let dim = xs[0].len();
        if let Some(k) = xs.iter().position(|x| x.len() != dim) {
            return Err(Error::invalid(format!(
                "row {k} has {} covariates, expected {dim}",
                xs[k].len()
            )));
        }
        if xs.iter().flatten().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::invalid("training data must be finite"));
        }
        Ok(TrainingSet { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// CSV with a header row; the last column is the response.
    pub fn from_csv<R: Read>(reader: R) -> Result<TrainingSet> {
        let (_, rows) = read_numeric_csv(reader)?;
        if rows.first().is_some_and(|r| r.len() < 2) {
            return Err(Error::MalformedInput {
                line: 1,
                message: "need at least one covariate column and the response column".into(),
            });
        }
        let (xs, ys) = rows
            .into_iter()
            .map(|mut r| {
                let y = r.pop().unwrap();
                (r, y)
            })
            .unzip();
        TrainingSet::new(xs, ys)
    }

    pub fn from_csv_path(path: &Path) -> Result<TrainingSet> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        TrainingSet::from_csv(f)
    }

    /// The points in a canonical order (by covariates, then response), so
    /// that fits do not depend on the order the data arrived in.
    fn canonical(&self) -> TrainingSet {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| lex_cmp(&self.xs[a], &self.xs[b]).then(self.ys[a].total_cmp(&self.ys[b])));
        TrainingSet {
            xs: idx.iter().map(|&k| self.xs[k].clone()).collect(),
            ys: idx.iter().map(|&k| self.ys[k]).collect(),
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(u, v)| u.total_cmp(v))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Header and numeric rows of a CSV file with a constant column count.
pub fn read_numeric_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::MalformedInput {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::MalformedInput {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MalformedInput {
                        line,
                        message: format!("not a finite number: {s:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedInput {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok((header, rows))
}

/// Regression algorithm used for the conformity scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    /// Mean response of the `k` nearest points (Euclidean; all points tied
    /// with the k-th distance are included). A point is its own neighbour.
    KNearestMean { k: usize },
    /// Least squares with an unpenalised intercept and ridge penalty `lambda`.
    RidgeLinear { lambda: f64 },
}

impl PredictorSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            PredictorSpec::KNearestMean { k } => {
                if k == 0 || k > n {
                    return Err(Error::invalid(format!("k must lie in 1..={n}, got {k}")));
                }
            }
            PredictorSpec::RidgeLinear { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
                }
            }
        }
        Ok(())
    }

    /// Fits on `(xs, ys)`.
    pub fn fit(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<Fitted> {
        self.validate(xs.len())?;
        Ok(match *self {
            PredictorSpec::KNearestMean { k } => Fitted::Knn {
                k,
                xs: xs.to_vec(),
                ys: ys.to_vec(),
            },
            PredictorSpec::RidgeLinear { lambda } => {
                let (intercept, coef) = ridge_fit(xs, ys, lambda)?;
                Fitted::Linear { intercept, coef }
            }
        })
    }

    /// Smoother weights: fitted value at point `j` is `Σₗ W[j][l]·yₗ`.
    fn smoother(&self, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let n = xs.len();
        self.validate(n)?;
        match *self {
            PredictorSpec::KNearestMean { k } => {
                let mut w = DMatrix::zeros(n, n);
                for j in 0..n {
                    let nb = neighbours(xs, &xs[j], k);
                    let share = 1.0 / nb.len() as f64;
                    for l in nb {
                        w[(j, l)] = share;
                    }
                }
                Ok(w)
            }
            PredictorSpec::RidgeLinear { lambda } => {
                // Hat matrix of the centred ridge fit: 1/n·11ᵀ + Xc (XcᵀXc + λI)⁻¹ Xcᵀ.
                let (xc, _) = centred(xs);
                let gram = xc.transpose() * &xc + DMatrix::identity(xc.ncols(), xc.ncols()) * lambda;
                let inv_xt = solve_sym(gram, xc.transpose())?;
                Ok(DMatrix::from_element(n, n, 1.0 / n as f64) + xc * inv_xt)
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Indices of the `k` nearest points to `q` plus any tied with the k-th.
fn neighbours(xs: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let d: Vec<f64> = xs.iter().map(|x| sq_dist(x, q)).collect();
    let mut scratch = d.clone();
    let (_, &mut cut, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    (0..xs.len()).filter(|&l| d[l] <= cut).collect()
}

fn centred(xs: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let n = xs.len();
    let p = xs[0].len();
    let x = DMatrix::from_fn(n, p, |i, j| xs[i][j]);
    let mean = x.row_mean().transpose();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - mean[j]);
    (xc, mean)
}

/// Solves `A·Z = B` for symmetric positive semidefinite `A`, falling back to
/// the minimum-norm solution when `A` is singular.
fn solve_sym(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    a.svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::NoConvergence(format!("ridge solve: {e}")))
}

fn ridge_fit(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> Result<(f64, DVector<f64>)> {
    let (xc, mean) = centred(xs);
    let y = DVector::from_column_slice(ys);
    let ybar = y.mean();
    let yc = y.add_scalar(-ybar);
    let gram = xc.transpose() * &xc + DMatrix::identity(xc.ncols(), xc.ncols()) * lambda;
    let coef = solve_sym(
        gram,
        DMatrix::from_column_slice(xc.ncols(), 1, (xc.transpose() * yc).as_slice()),
    )?
    .column(0)
    .into_owned();
    Ok((ybar - coef.dot(&mean), coef))
}

/// A fitted predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Knn { k: usize, xs: Vec<Vec<f64>>, ys: Vec<f64> },
    Linear { intercept: f64, coef: DVector<f64> },
}

impl Fitted {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Fitted::Knn { k, xs, ys } => {
                let nb = neighbours(xs, x, *k);
                nb.iter().map(|&l| ys[l]).sum::<f64>() / nb.len() as f64
            }
            Fitted::Linear { intercept, coef } => intercept + coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>(),
        }
    }
}

/// Grid of candidate responses for full conformal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YGrid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl YGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid(format!(
                "y grid needs finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.steps < 3 {
            return Err(Error::invalid(format!(
                "y grid needs at least 3 steps, got {}",
                self.steps
            )));
        }
        Ok(())
    }

    /// The observed response range widened by its own span on each side.
    pub fn around(ys: &[f64], steps: usize) -> YGrid {
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1.0);
        YGrid {
            lo: lo - span,
            hi: hi + span,
            steps,
        }
    }

    pub fn point(&self, k: usize) -> f64 {
        if k + 1 == self.steps {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.steps - 1) as f64
        }
    }
}

/// Full conformal on a grid, or split conformal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConformalMode {
    Full,
    Split { train_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalConfig {
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub y_grid: Option<YGrid>,
    pub mode: ConformalMode,
}

impl ConformalConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self.mode {
            ConformalMode::Full => {
                self.predictor.validate(n)?;
                self.y_grid
                    .ok_or_else(|| Error::invalid("full conformal needs a y grid"))?
                    .validate()
            }
            ConformalMode::Split { train_fraction } => {
                if !(train_fraction > 0.0 && train_fraction < 1.0) {
                    return Err(Error::invalid(format!(
                        "train_fraction must lie in (0, 1), got {train_fraction}"
                    )));
                }
                let (n_fit, n_cal) = split_sizes(n, train_fraction);
                if n_fit == 0 || n_cal == 0 {
                    return Err(Error::invalid(format!(
                        "split of {n} points at fraction {train_fraction} leaves an empty half"
                    )));
                }
                self.predictor.validate(n_fit)
            }
        }
    }
}

fn split_sizes(n: usize, train_fraction: f64) -> (usize, usize) {
    let n_fit = ((n as f64) * train_fraction).floor() as usize;
    (n_fit, n - n_fit)
}

/// A conformal interval with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub interval: Interval,
    /// Full conformal only: the included grid points were not contiguous and
    /// the interval is their convex hull.
    pub hull: bool,
    /// Full conformal only: an end point of the grid was included, so the
    /// true region may extend past the grid.
    pub grid_edge: bool,
    /// Point prediction at the test covariates.
    pub prediction: f64,
}

/// Counts `#{j : r_j ≥ r_new}` including the new point itself; `y` is kept
/// iff that count exceeds `level·(n+1)`.
fn conformal_keeps(count: usize, n_plus_1: usize, level: f64) -> bool {
    count as f64 / n_plus_1 as f64 > level
}

/// Full conformal prediction interval at `x_new`.
pub fn full_conformal_interval(
    train: &TrainingSet,
    x_new: &[f64],
    level: f64,
    cfg: &ConformalConfig,
) -> Result<PredictionInterval> {
    check_level(level)?;
    if cfg.mode != ConformalMode::Full {
        return Err(Error::invalid("full_conformal_interval needs mode full"));
    }
    cfg.validate(train.len())?;
    check_dim(train, x_new)?;
    let grid = cfg.y_grid.expect("validated");
    let train = train.canonical();
    let n1 = train.len() + 1;
    let mut xs = train.xs.clone();
    xs.push(x_new.to_vec());
    let w = cfg.predictor.smoother(&xs)?;
    // fitted(y) = base + slope·y, where y is the hallucinated response
    let mut y0 = train.ys.clone();
    y0.push(0.0);
    let base = &w * DVector::from_vec(y0.clone());
    let slope = w.column(n1 - 1).into_owned();
    let residuals = |y: f64| -> Vec<f64> {
        (0..n1)
            .map(|j| {
                let yj = if j + 1 == n1 { y } else { y0[j] };
                (yj - (base[j] + slope[j] * y)).abs()
            })
            .collect()
    };
    let keep = |k: usize| {
        let y = grid.point(k);
        let r = residuals(y);
        let new = r[n1 - 1];
        conformal_keeps(r.iter().filter(|&&v| v >= new).count(), n1, level)
    };
    let kept: Vec<bool> = if grid.steps * n1 >= 1 << 16 {
        par::map_range(grid.steps, keep)
    } else {
        (0..grid.steps).map(keep).collect()
    };
    let prediction = cfg.predictor.fit(&train.xs, &train.ys)?.predict(x_new);
    let first = kept.iter().position(|&b| b);
    let last = kept.iter().rposition(|&b| b);
    Ok(match (first, last) {
        (Some(a), Some(b)) => PredictionInterval {
            interval: Interval::closed(grid.point(a), grid.point(b)),
            hull: kept[a..=b].iter().any(|&v| !v),
            grid_edge: a == 0 || b + 1 == grid.steps,
            prediction,
        },
        _ => PredictionInterval {
            interval: Interval::Empty,
            hull: false,
            grid_edge: false,
            prediction,
        },
    })
}

fn check_dim(train: &TrainingSet, x: &[f64]) -> Result<()> {
    if x.len() != train.dim() {
        return Err(Error::invalid(format!(
            "test point has {} covariates, training data has {}",
            x.len(),
            train.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("test covariates must be finite"));
    }
    Ok(())
}

/// A split-conformal predictor: fitted on the first part of the training
/// data, calibrated on the rest.
#[derive(Debug, Clone)]
pub struct SplitConformal {
    fitted: Fitted,
    /// Sorted absolute calibration residuals.
    scores: Vec<f64>,
    dim: usize,
}

impl SplitConformal {
    pub fn fit(train: &TrainingSet, cfg: &ConformalConfig) -> Result<SplitConformal> {
        let ConformalMode::Split { train_fraction } = cfg.mode else {
            return Err(Error::invalid("split conformal needs mode split"));
        };
        cfg.validate(train.len())?;
        let (n_fit, _) = split_sizes(train.len(), train_fraction);
        let fitted = cfg.predictor.fit(&train.xs[..n_fit], &train.ys[..n_fit])?;
        let mut scores: Vec<f64> = train.xs[n_fit..]
            .iter()
            .zip(&train.ys[n_fit..])
            .map(|(x, &y)| (y - fitted.predict(x)).abs())
            .collect();
        scores.sort_by(f64::total_cmp);
        Ok(SplitConformal {
            fitted,
            scores,
            dim: train.dim(),
        })
    }

    pub fn n_cal(&self) -> usize {
        self.scores.len()
    }

    /// `⌈(1−level)(n_cal+1)⌉`.
    pub fn quantile_index(&self, level: f64) -> usize {
        let v = (1.0 - level) * (self.n_cal() + 1) as f64;
        // guard against 9.000000000000002-style rounding before the ceiling
        (v - 1e-9 * v.max(1.0)).ceil().max(1.0) as usize
    }

    /// Calibration quantile at `level`.
    pub fn radius(&self, level: f64) -> Result<f64> {
        check_level(level)?;
        let k = self.quantile_index(level);
        if k > self.n_cal() {
            return Err(Error::CalibrationTooSmall {
                index: k,
                n_cal: self.n_cal(),
            });
        }
        Ok(self.scores[k - 1])
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.fitted.predict(x)
    }

    pub fn interval(&self, x: &[f64], level: f64) -> Result<PredictionInterval> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "test point has {} covariates, training data has {}",
                x.len(),
                self.dim
            )));
        }
        let q = self.radius(level)?;
        let prediction = self.predict(x);
        Ok(PredictionInterval {
            interval: Interval::closed(prediction - q, prediction + q),
            hull: false,
            grid_edge: false,
            prediction,
        })
    }

    /// Like [`SplitConformal::interval`], but a quantile index past the
    /// calibration set yields the whole real line (the only valid answer).
    pub fn interval_or_real_line(&self, x: &[f64], level: f64) -> Result<PredictionInterval> {
        match self.interval(x, level) {
            Err(Error::CalibrationTooSmall { .. }) => Ok(PredictionInterval {
                interval: Interval::real_line(),
                hull: false,
                grid_edge: false,
                prediction: self.predict(x),
            }),
            other => other,
        }
    }
}

/// Split conformal prediction interval at `x_new`.
pub fn split_conformal_interval(
    train: &TrainingSet,
    x_new: &[f64],
    level: f64,
    cfg: &ConformalConfig,
) -> Result<PredictionInterval> {
    SplitConformal::fit(train, cfg)?.interval(x_new, level)
}

/// Which prediction intervals get reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntervalSelection {
    /// Every interval.
    All,
    /// Intervals no wider than `max_width`.
    WidthBudget { max_width: f64 },
    /// Intervals that exclude `value`.
    ExcludesValue { value: f64 },
    /// Test points whose covariates lie within `radius` of `center`.
    Neighborhood { center: Vec<f64>, radius: f64 },
}

impl IntervalSelection {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            IntervalSelection::All => Ok(()),
            IntervalSelection::WidthBudget { max_width } if *max_width >= 0.0 => Ok(()),
            IntervalSelection::WidthBudget { max_width } => Err(Error::invalid(format!(
                "width budget must be nonnegative, got {max_width}"
            ))),
            IntervalSelection::ExcludesValue { value } if value.is_finite() => Ok(()),
            IntervalSelection::ExcludesValue { value } => Err(Error::invalid(format!("reference value {value}"))),
            IntervalSelection::Neighborhood { center, radius } => {
                if center.len() != dim {
                    return Err(Error::invalid(format!(
                        "neighborhood centre has {} coordinates, data has {dim}",
                        center.len()
                    )));
                }
                if !(*radius >= 0.0) {
                    return Err(Error::invalid(format!("radius must be nonnegative, got {radius}")));
                }
                Ok(())
            }
        }
    }

    pub fn selects(&self, x: &[f64], interval: &Interval) -> bool {
        match self {
            IntervalSelection::All => true,
            IntervalSelection::WidthBudget { max_width } => !interval.is_empty() && interval.width() <= *max_width,
            IntervalSelection::ExcludesValue { value } => !interval.contains(*value),
            IntervalSelection::Neighborhood { center, radius } => sq_dist(x, center) <= radius * radius,
        }
    }
}

/// Scheduler settings for a selective conformal stream.
#[derive(Debug, Clone)]
pub struct StreamSettings {
    pub alpha: f64,
    pub w0: f64,
    pub gamma: GammaSequence,
}

impl StreamSettings {
    pub fn new(alpha: f64, horizon: usize) -> StreamSettings {
        StreamSettings {
            alpha,
            w0: alpha / 2.0,
            gamma: GammaSequence::lord_default(horizon),
        }
    }
}

/// LORD-CI over conformal intervals: for each test point commit `αᵢ`, build
/// the conformal interval at level `αᵢ`, and report it if selected.
///
/// In the returned log, `x` holds the point prediction. Split-conformal
/// levels too small for the calibration set give the real line.
pub fn selective_conformal_stream(
    train: &TrainingSet,
    test_xs: &[Vec<f64>],
    selection: &IntervalSelection,
    cfg: &ConformalConfig,
    settings: &StreamSettings,
) -> Result<RunLog> {
    selection.validate(train.dim())?;
    cfg.validate(train.len())?;
    let mut sched = LordCi::new(settings.alpha, settings.w0, settings.gamma.clone())?;
    let split = match cfg.mode {
        ConformalMode::Split { .. } => Some(SplitConformal::fit(train, cfg)?),
        ConformalMode::Full => None,
    };
    let mut outcomes = Vec::with_capacity(test_xs.len());
    for x in test_xs {
        check_dim(train, x)?;
        let index = sched.time();
        let level = sched.next_level();
        let pi = match &split {
            Some(s) => s.interval_or_real_line(x, level)?,
            None => full_conformal_interval(train, x, level, cfg)?,
        };
        let selected = selection.selects(x, &pi.interval);
        sched.record_with_level(index, selected, level)?;
        let (sign, strict_negative) = if selected {
            sign_decision(&pi.interval)
        } else {
            (0, false)
        };
        outcomes.push(StepOutcome {
            index,
            x: pi.prediction,
            level,
            selected,
            interval: selected.then_some(pi.interval),
            sign,
            strict_negative,
            localized_index: None,
        });
    }
    Ok(RunLog {
        alpha: settings.alpha,
        outcomes,
        final_state: sched,
    })
}
