//! Standard normal distribution functions.
//!
//! The CDF and survival function go through `libm::erfc` (a rational
//! approximation with sub-ulp error over the range that matters here). Far
//! tails are handled in log space with the continued fraction for the Mills
//! ratio, so truncation masses like `Φ̄(200)` remain usable. Quantiles start
//! from Acklam's rational approximation and are polished with Newton steps
//! against the accurate survival function.

use std::f64::consts::FRAC_1_SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Argument above which the upper tail switches to the continued-fraction form.
pub const TAIL_SWITCH: f64 = 8.0;

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x).
#[inline]
pub fn cdf(x: f64) -> f64 {
    sf(-x)
}

/// Φ̄(x) = 1 − Φ(x), accurate in the upper tail.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Mills ratio Φ̄(x)/φ(x) for x ≥ TAIL_SWITCH via the Laplace continued fraction
/// evaluated with the modified Lentz method.
fn mills_ratio_tail(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    // R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...))))
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// ln of the Mills ratio Φ̄(x)/φ(x).
pub fn log_mills_ratio(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        log_sf(x) - log_pdf(x)
    } else {
        mills_ratio_tail(x).ln()
    }
}

/// Mills ratio Φ̄(x)/φ(x).
pub fn mills_ratio(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        sf(x) / pdf(x)
    } else {
        mills_ratio_tail(x)
    }
}

/// ln Φ̄(x), finite for every finite x.
pub fn log_sf(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        if x < -5.0 {
            // Φ̄(x) close to one; log1p keeps the small deficit.
            (-sf(-x)).ln_1p()
        } else {
            sf(x).ln()
        }
    } else {
        log_pdf(x) + mills_ratio_tail(x).ln()
    }
}

/// ln Φ(x).
#[inline]
pub fn log_cdf(x: f64) -> f64 {
    log_sf(-x)
}

/// Hazard φ(x)/Φ̄(x), stable in the upper tail.
fn hazard(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        pdf(x) / sf(x)
    } else {
        1.0 / mills_ratio_tail(x)
    }
}

const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

/// Acklam's lower-tail branch, parameterized by ln p so that it works for
/// probabilities below the smallest positive double.
fn acklam_lower_tail(log_p: f64) -> f64 {
    let q = (-2.0 * log_p).sqrt();
    (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
        / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
}

fn acklam_central(p: f64) -> f64 {
    let q = p - 0.5;
    let r = q * q;
    (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
        / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
}

/// Returns z with ln Φ̄(z) = `log_p`, for `log_p` < 0.
///
/// This is the workhorse behind every quantile in the crate; callers with a
/// plain probability go through [`upper_quantile`] or [`quantile`].
pub fn isf_log(log_p: f64) -> f64 {
    debug_assert!(log_p < 0.0);
    if log_p.is_infinite() {
        return f64::INFINITY;
    }
    let p = log_p.exp();
    let mut z = if log_p < P_LOW.ln() {
        -acklam_lower_tail(log_p)
    } else if p <= 1.0 - P_LOW {
        -acklam_central(p)
    } else {
        acklam_lower_tail((-log_p.exp_m1()).ln())
    };
    if z >= 0.0 {
        // Newton on g(z) = ln Φ̄(z) − ln p, g'(z) = −hazard(z).
        for _ in 0..3 {
            let g = log_sf(z) - log_p;
            z += g / hazard(z);
        }
    } else {
        // Lower half: refine on the CDF side, where Φ(z) = 1 − p is small.
        let log_q = (-log_p.exp_m1()).ln();
        for _ in 0..3 {
            let g = log_cdf(z) - log_q;
            z -= g / hazard(-z);
        }
    }
    z
}

/// z_p, the upper p-quantile: Φ̄(z_p) = p.
#[inline]
pub fn upper_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::INFINITY
    } else if p >= 1.0 {
        f64::NEG_INFINITY
    } else if p <= 0.5 {
        isf_log(p.ln())
    } else {
        -isf_log((1.0 - p).ln())
    }
}

/// Φ⁻¹(p).
#[inline]
pub fn quantile(p: f64) -> f64 {
    -upper_quantile(p)
}

/// Φ(b) − Φ(a) for a ≤ b, avoiding cancellation in either tail.
pub fn mass_between(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        sf(a) - sf(b)
    } else if b <= 0.0 {
        sf(-b) - sf(-a)
    } else {
        1.0 - sf(b) - sf(-a)
    }
}
