//! Interval rules for a single Gaussian observation `X ~ N(θ, 1)`.
//!
//! Marginal rules:
//! * symmetric — `(x ± z_{a/2})`;
//! * one-sided — the central interval while `|x| ≤ z_a`, otherwise the
//!   half-interval that pins the sign, `(0, x + z_a)` or `(x − z_a, 0]`;
//! * MQC — a compromise between the two, built by inverting a family of
//!   acceptance regions (see [`MqcDesign`]).
//!
//! Conditional rule: given that `X` landed in a truncation region, invert the
//! shortest acceptance regions of the truncated normal law.
//!
//! Also here: CI-derived p-values and a sampler for the truncated law.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_level, Error, Result};
use crate::interval::{Interval, IntervalSet};
use crate::normal;
use crate::roots::illinois;

/// Default MQC shape parameter.
pub const DEFAULT_PSI: f64 = 0.7;

fn default_psi() -> f64 {
    DEFAULT_PSI
}

/// A marginal interval rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", try_from = "MarginalRuleRepr")]
pub enum MarginalRule {
    #[default]
    Symmetric,
    OneSided,
    Mqc {
        psi: f64,
    },
}

/// Wire form of [`MarginalRule`]; rejects unknown keys and a stray `psi`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginalRuleRepr {
    rule: String,
    psi: Option<f64>,
}

impl TryFrom<MarginalRuleRepr> for MarginalRule {
    type Error = String;

    fn try_from(r: MarginalRuleRepr) -> std::result::Result<Self, String> {
        let rule = match (r.rule.as_str(), r.psi) {
            ("symmetric", None) => MarginalRule::Symmetric,
            ("one_sided", None) => MarginalRule::OneSided,
            ("mqc", psi) => MarginalRule::Mqc {
                psi: psi.unwrap_or_else(default_psi),
            },
            ("symmetric" | "one_sided", Some(_)) => return Err(format!("rule {} takes no psi", r.rule)),
            (other, _) => return Err(format!("unknown rule {other:?}; expected symmetric, one_sided or mqc")),
        };
        rule.validate().map_err(|e| e.to_string())?;
        Ok(rule)
    }
}

impl MarginalRule {
    pub fn mqc() -> MarginalRule {
        MarginalRule::Mqc { psi: DEFAULT_PSI }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MarginalRule::Mqc { psi } if !(psi > 0.5 && psi < 1.0) => {
                Err(Error::invalid(format!("MQC psi must lie in (0.5, 1), got {psi}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MarginalRule::Symmetric => "symmetric",
            MarginalRule::OneSided => "one_sided",
            MarginalRule::Mqc { .. } => "mqc",
        }
    }

    /// Precomputes the quantiles needed at `level`.
    pub fn prepare(&self, level: f64) -> Result<PreparedRule> {
        check_level(level)?;
        self.validate()?;
        Ok(match *self {
            MarginalRule::Symmetric => PreparedRule::Symmetric {
                z: normal::upper_quantile(level / 2.0),
            },
            MarginalRule::OneSided => PreparedRule::OneSided {
                z: normal::upper_quantile(level),
            },
            MarginalRule::Mqc { psi } => PreparedRule::Mqc(MqcDesign::new(level, psi)),
        })
    }

    pub fn interval(&self, x: f64, level: f64) -> Result<Interval> {
        check_finite("x", x)?;
        Ok(self.prepare(level)?.interval(x))
    }
}

/// A marginal rule with its level-dependent constants resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreparedRule {
    Symmetric { z: f64 },
    OneSided { z: f64 },
    Mqc(MqcDesign),
}

impl PreparedRule {
    #[inline]
    pub fn interval(&self, x: f64) -> Interval {
        match *self {
            PreparedRule::Symmetric { z } => Interval::open(x - z, x + z),
            PreparedRule::OneSided { z } => {
                if x > z {
                    Interval::open(0.0, x + z)
                } else if x < -z {
                    Interval::new(x - z, 0.0, true, false)
                } else {
                    Interval::open(x - z, x + z)
                }
            }
            PreparedRule::Mqc(ref d) => d.interval(x),
        }
    }

    /// The cutoff `t` with: the interval at `x` determines the sign of θ
    /// exactly when `|x| ≥ t`.
    pub fn sign_threshold(&self) -> f64 {
        match *self {
            PreparedRule::Symmetric { z } | PreparedRule::OneSided { z } => z,
            PreparedRule::Mqc(ref d) => d.z_psi,
        }
    }
}

/// `(x − z_{level/2}, x + z_{level/2})`.
pub fn symmetric_interval(x: f64, level: f64) -> Result<Interval> {
    MarginalRule::Symmetric.interval(x, level)
}

/// Central interval for `|x| ≤ z_level`, sign-pinning half-interval otherwise.
pub fn one_sided_interval(x: f64, level: f64) -> Result<Interval> {
    MarginalRule::OneSided.interval(x, level)
}

/// Modified quasi-conventional interval with shape parameter `psi ∈ (0.5, 1)`.
pub fn mqc_interval(x: f64, level: f64, psi: f64) -> Result<Interval> {
    MarginalRule::Mqc { psi }.interval(x, level)
}

/// Ratio of the plateau half-width to `z_{ψa}`.
const MQC_PLATEAU: f64 = 1.5;
/// Rate at which the acceptance region recentres past the plateau.
const MQC_SLOPE: f64 = 0.5;

/// Acceptance regions behind the MQC rule at a fixed level `a`.
///
/// For `t = |θ|` the region is `(θ − u(t), θ + v(t))` when `θ > 0` and its
/// mirror `(θ − v(t), θ + u(t))` when `θ ≤ 0`, where, with `θc = 1.5·z_{ψa}`,
///
/// ```text
/// t < θc:  u = t + z_{ψa},                       v = z_{(1−ψ)a}
/// t ≥ θc:  u = min(z_{a/2}, z_{ψa} + k(t − θc)),  v = max(z_{a/2}, z_{(1−ψ)a} − k(t − θc))
/// ```
///
/// with `k = 1/2`. Each region has probability at least `1 − a` (exactly
/// `1 − a` past the plateau), both region endpoints are nondecreasing in θ so
/// the inverted set is an interval, and all constants grow as `a` shrinks so
/// the rule is nested. The inverted interval is the constant `(−θc, θc)` for
/// small `|x|`, determines the sign once `|x| ≥ z_{ψa}` (strictly between the
/// one-sided and symmetric cutoffs), and coincides with the symmetric
/// interval for large `|x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MqcDesign {
    pub z_psi: f64,
    pub z_rest: f64,
    pub z_half: f64,
    pub theta_c: f64,
    t_u: f64,
    t_v: f64,
}

/// One affine piece `U(θ) = slope·θ + intercept` on `(lo, hi)` (endpoints as flagged).
struct Piece {
    lo: f64,
    hi: f64,
    lo_incl: bool,
    hi_incl: bool,
    slope: f64,
    intercept: f64,
}

impl MqcDesign {
    pub fn new(level: f64, psi: f64) -> MqcDesign {
        let z_psi = normal::upper_quantile(psi * level);
        let z_rest = normal::upper_quantile((1.0 - psi) * level);
        let z_half = normal::upper_quantile(level / 2.0);
        let theta_c = MQC_PLATEAU * z_psi.max(0.0);
        MqcDesign {
            z_psi,
            z_rest,
            z_half,
            theta_c,
            t_u: theta_c + (z_half - z_psi) / MQC_SLOPE,
            t_v: theta_c + (z_rest - z_half) / MQC_SLOPE,
        }
    }

    #[inline]
    fn u(&self, t: f64) -> f64 {
        if t < self.theta_c {
            t + self.z_psi
        } else {
            self.z_half.min(self.z_psi + MQC_SLOPE * (t - self.theta_c))
        }
    }

    #[inline]
    fn v(&self, t: f64) -> f64 {
        if t < self.theta_c {
            self.z_rest
        } else {
            self.z_half.max(self.z_rest - MQC_SLOPE * (t - self.theta_c))
        }
    }

    /// The open acceptance region `(L(θ), U(θ))` for parameter value θ.
    #[inline]
    pub fn acceptance(&self, theta: f64) -> (f64, f64) {
        if theta > 0.0 {
            (theta - self.u(theta), theta + self.v(theta))
        } else {
            (theta - self.v(-theta), theta + self.u(-theta))
        }
    }

    #[inline]
    fn accepts(&self, theta: f64, x: f64) -> bool {
        let (l, u) = self.acceptance(theta);
        l < x && x < u
    }

    fn upper_pieces(&self) -> [Piece; 6] {
        let k = MQC_SLOPE;
        let (zp, zr, zh, tc) = (self.z_psi, self.z_rest, self.z_half, self.theta_c);
        [
            Piece {
                lo: f64::NEG_INFINITY,
                hi: -self.t_u,
                lo_incl: false,
                hi_incl: true,
                slope: 1.0,
                intercept: zh,
            },
            Piece {
                lo: -self.t_u,
                hi: -tc,
                lo_incl: false,
                hi_incl: true,
                slope: 1.0 - k,
                intercept: zp - k * tc,
            },
            Piece {
                lo: -tc,
                hi: 0.0,
                lo_incl: false,
                hi_incl: true,
                slope: 0.0,
                intercept: zp,
            },
            Piece {
                lo: 0.0,
                hi: tc,
                lo_incl: false,
                hi_incl: false,
                slope: 1.0,
                intercept: zr,
            },
            Piece {
                lo: tc,
                hi: self.t_v,
                lo_incl: tc > 0.0,
                hi_incl: false,
                slope: 1.0 - k,
                intercept: zr + k * tc,
            },
            Piece {
                lo: self.t_v,
                hi: f64::INFINITY,
                lo_incl: true,
                hi_incl: false,
                slope: 1.0,
                intercept: zh,
            },
        ]
    }

    /// `inf{θ : U(θ) > x}`, exact over the affine pieces of `U`.
    fn lower_end(&self, x: f64) -> f64 {
        for p in self.upper_pieces() {
            if p.lo > p.hi || (p.lo == p.hi && !(p.lo_incl && p.hi_incl)) {
                continue;
            }
            if p.slope == 0.0 {
                if p.intercept > x {
                    return p.lo;
                }
                continue;
            }
            let root = (x - p.intercept) / p.slope;
            if root < p.hi {
                return root.max(p.lo);
            }
        }
        f64::INFINITY
    }

    pub fn interval(&self, x: f64) -> Interval {
        // L(θ) = −U(−θ) away from θ = 0, so the upper end mirrors the lower one;
        // endpoint membership is decided pointwise.
        let lo = self.lower_end(x);
        let hi = -self.lower_end(-x);
        let lo_open = !(lo.is_finite() && self.accepts(lo, x));
        let hi_open = !(hi.is_finite() && self.accepts(hi, x));
        Interval::new(lo, hi, lo_open, hi_open)
    }
}

/// Shape of the selection event used for conditional inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationShape {
    RightTail,
    TwoSided,
}

/// The conditioning event `{X > c}` or `{|X| > c}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "c", rename_all = "snake_case")]
pub enum TruncationContext {
    RightTail(f64),
    TwoSided(f64),
}

impl TruncationContext {
    pub fn new(shape: TruncationShape, c: f64) -> Result<TruncationContext> {
        let ctx = match shape {
            TruncationShape::RightTail => TruncationContext::RightTail(c),
            TruncationShape::TwoSided => TruncationContext::TwoSided(c),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn cutoff(&self) -> f64 {
        match *self {
            TruncationContext::RightTail(c) | TruncationContext::TwoSided(c) => c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TruncationContext::RightTail(c) => check_finite("truncation cutoff", c),
            TruncationContext::TwoSided(c) => {
                check_finite("truncation cutoff", c)?;
                if c < 0.0 {
                    return Err(Error::invalid(format!(
                        "two-sided truncation cutoff must be nonnegative, got {c}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Whether `x` lies in the conditioning region.
    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            TruncationContext::RightTail(c) => x > c,
            TruncationContext::TwoSided(c) => x.abs() > c,
        }
    }

    fn describe(&self) -> String {
        match *self {
            TruncationContext::RightTail(c) => format!("selection event X > {c}"),
            TruncationContext::TwoSided(c) => format!("selection event |X| > {c}"),
        }
    }
}

/// Largest `|θ − x|` searched before declaring the conditional interval unbounded.
pub const CONDITIONAL_SEARCH_CAP: f64 = 1e8;

fn check_conditional_level(level: f64) -> Result<()> {
    check_level(level)?;
    if level >= 0.5 {
        return Err(Error::invalid(format!(
            "conditional intervals need level < 0.5, got {level}"
        )));
    }
    Ok(())
}

/// Solves `Φ̄(d + e) = exp(log_ratio)·Φ̄(d)` for `e ≥ 0` without forming `d + e`
/// when `d` is large.
fn tail_excess(d: f64, log_ratio: f64) -> f64 {
    if d < 8.0 {
        return normal::isf_log(log_ratio + normal::log_sf(d)) - d;
    }
    // h(e) = ln Φ̄(d+e) − ln Φ̄(d) − log_ratio, written through the Mills ratio R:
    // h(e) = −d·e − e²/2 + ln R(d+e) − ln R(d) − log_ratio, h'(e) = −1/R(d+e).
    // h is concave and decreasing, so Newton from e = 0 converges monotonically.
    let ln_r_d = normal::log_mills_ratio(d);
    let mut e = 0.0f64;
    for _ in 0..100 {
        let z = d + e;
        let h = -d * e - 0.5 * e * e + normal::log_mills_ratio(z) - ln_r_d - log_ratio;
        let step = h * normal::mills_ratio(z);
        e += step;
        if step.abs() <= 1e-15 * e.abs() {
            break;
        }
    }
    e
}

/// Half-width `r` of the shortest acceptance region `(θ−r, θ+r) ∩ S` of the
/// truncated law at `θ` under a two-sided truncation, solved by safeguarded Newton.
fn two_sided_radius(theta: f64, c: f64, level: f64) -> Result<f64> {
    let th = theta.abs();
    // In standardized coordinates z = y − θ the support is (−∞, a) ∪ (b, ∞).
    let a = -c - th;
    let b = c - th;
    let mass = normal::sf(c + th) + normal::sf(b);
    let target = (1.0 - level) * mass;
    let inside = |r: f64| -> (f64, f64) {
        let mut m = 0.0;
        let mut slope = 0.0;
        let phi = normal::pdf(r);
        if -r < a {
            m += normal::mass_between(-r, a.min(r));
            slope += phi * (1.0 + (r < a) as u8 as f64);
        }
        if r > b {
            m += normal::mass_between(b.max(-r), r);
            slope += phi * (1.0 + (-r > b) as u8 as f64);
        }
        (m - target, slope)
    };
    let mut lo = 0.0f64;
    let mut hi = a.abs().max(b.abs()).max(normal::upper_quantile(level * mass / 2.0));
    let mut r = normal::upper_quantile(level * mass / 2.0).clamp(lo, hi);
    for _ in 0..200 {
        let (f, slope) = inside(r);
        if f == 0.0 {
            return Ok(r);
        }
        if f < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let mut next = if slope > 0.0 { r - f / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() <= 1e-15 * r.max(1.0) || hi - lo <= 1e-15 * hi.max(1.0) {
            return Ok(next);
        }
        r = next;
    }
    Err(Error::NoConvergence(format!(
        "acceptance radius at theta = {theta}, c = {c}, level = {level}: bracket [{lo}, {hi}]"
    )))
}

/// Half-width `r(θ)` of the shortest `1 − level` acceptance region of the
/// truncated normal law at θ; the region is `(θ − r, θ + r) ∩ S`.
pub fn acceptance_radius(theta: f64, ctx: TruncationContext, level: f64) -> Result<f64> {
    check_conditional_level(level)?;
    ctx.validate()?;
    match ctx {
        TruncationContext::TwoSided(c) => two_sided_radius(theta, c, level),
        TruncationContext::RightTail(c) => {
            let d = c - theta;
            if d < 0.0 {
                let r = normal::upper_quantile(0.5 * (level + (1.0 - level) * normal::cdf(d)));
                if r <= -d {
                    return Ok(r);
                }
            }
            Ok(d + tail_excess(d, level.ln()))
        }
    }
}

/// `r(θ) − |x − θ|`: positive exactly when `x` lies in the acceptance region at θ.
/// Computed without cancellation for parameters far below a right-tail cutoff.
fn coverage_margin(theta: f64, x: f64, ctx: TruncationContext, level: f64) -> Result<f64> {
    match ctx {
        TruncationContext::TwoSided(c) => Ok(two_sided_radius(theta, c, level)? - (x - theta).abs()),
        TruncationContext::RightTail(c) => {
            let d = c - theta;
            if d < 0.0 {
                let r = normal::upper_quantile(0.5 * (level + (1.0 - level) * normal::cdf(d)));
                if r <= -d {
                    return Ok(r - (x - theta).abs());
                }
            }
            // Region is (c, c + e); x > c is given.
            Ok(c + tail_excess(d, level.ln()) - x)
        }
    }
}

fn boundary<F>(margin: &mut F, x: f64, direction: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let g0 = margin(x)?;
    if !(g0 > 0.0) {
        return Err(Error::NoConvergence(format!(
            "observation {x} is not inside its own acceptance region (margin {g0})"
        )));
    }
    let mut inner = x;
    let mut g_inner = g0;
    let mut step = 0.5;
    while step <= CONDITIONAL_SEARCH_CAP {
        let outer = x + direction * step;
        let g_outer = margin(outer)?;
        if g_outer <= 0.0 {
            return illinois(&mut *margin, inner, g_inner, outer, g_outer, 1e-13);
        }
        inner = outer;
        g_inner = g_outer;
        step *= 2.0;
    }
    Ok(direction * f64::INFINITY)
}

/// Confidence interval for θ conditional on `x` lying in the truncation region,
/// obtained by inverting shortest acceptance regions of the truncated law.
///
/// Endpoints are open. If an endpoint lies beyond [`CONDITIONAL_SEARCH_CAP`]
/// from `x` it is reported as infinite, which only enlarges the interval.
pub fn conditional_truncated_interval(x: f64, ctx: TruncationContext, level: f64) -> Result<Interval> {
    check_finite("x", x)?;
    check_conditional_level(level)?;
    ctx.validate()?;
    if !ctx.contains(x) {
        return Err(Error::OutsideSelectionEvent {
            x,
            event: ctx.describe(),
        });
    }
    let mut margin = |theta: f64| coverage_margin(theta, x, ctx, level);
    let lo = boundary(&mut margin, x, -1.0)?;
    let hi = boundary(&mut margin, x, 1.0)?;
    Ok(Interval::open(lo, hi))
}

/// Draws from `N(θ, 1)` conditioned on the truncation region, by inversion in log space.
pub fn sample_truncated<R: Rng + ?Sized>(rng: &mut R, theta: f64, ctx: TruncationContext) -> f64 {
    let right_tail = |rng: &mut R, theta: f64, c: f64| -> f64 {
        let u: f64 = rng.sample(Open01);
        theta + normal::isf_log(u.ln() + normal::log_sf(c - theta))
    };
    match ctx {
        TruncationContext::RightTail(c) => right_tail(rng, theta, c),
        TruncationContext::TwoSided(c) => {
            let right = normal::sf(c - theta);
            let left = normal::sf(c + theta);
            let pick: f64 = rng.sample(Open01);
            if pick * (left + right) < right {
                right_tail(rng, theta, c)
            } else {
                -right_tail(rng, -theta, c)
            }
        }
    }
}

/// A level-indexed family of confidence sets.
pub trait CiRule: Sync {
    fn interval(&self, x: f64, level: f64) -> Result<Interval>;
}

impl CiRule for MarginalRule {
    fn interval(&self, x: f64, level: f64) -> Result<Interval> {
        MarginalRule::interval(self, x, level)
    }
}

/// `sup{level : I(x, level) ∩ Θ₀ ≠ ∅}` by bisection to absolute tolerance 1e−10.
///
/// The indicator is first scanned on a fixed grid of levels; if it switches
/// back on after switching off, the rule is not nested and an error is raised.
pub fn ci_pvalue<R: CiRule + ?Sized>(rule: &R, x: f64, null_set: &IntervalSet) -> Result<f64> {
    check_finite("x", x)?;
    let hits = |level: f64| -> Result<bool> { Ok(null_set.intersects(&rule.interval(x, level)?)) };
    const EDGE: f64 = 1e-11;
    let mut grid = vec![EDGE, 1e-9, 1e-7, 1e-5, 1e-4, 1e-3];
    grid.extend((1..128).map(|k| k as f64 / 128.0));
    grid.push(1.0 - EDGE);
    let flags = grid.iter().map(|&l| hits(l)).collect::<Result<Vec<_>>>()?;
    if let Some(k) = flags.windows(2).position(|w| !w[0] && w[1]) {
        return Err(Error::NotNested { x, level: grid[k + 1] });
    }
    let Some(last_true) = flags.iter().rposition(|&f| f) else {
        return Ok(0.0);
    };
    if last_true == grid.len() - 1 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (grid[last_true], grid[last_true + 1]);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if hits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
