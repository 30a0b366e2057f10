//! Bracketed scalar root finding.

use crate::error::{Error, Result};

/// Illinois-modified regula falsi on a sign-changing bracket `[a, b]`.
///
/// Returns a point within `rel_tol·max(1, |root|)` of a root. Falls back to
/// bisection whenever the secant step stalls.
pub(crate) fn illinois<F>(mut f: F, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64, rel_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoConvergence(format!(
            "bracket [{a}, {b}] does not change sign (f = {fa}, {fb})"
        )));
    }
    let mut side = 0i8;
    for _ in 0..300 {
        if (b - a).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0) {
            return Ok(0.5 * (a + b));
        }
        let mut m = (a * fb - b * fa) / (fb - fa);
        let lo = a.min(b);
        let hi = a.max(b);
        if !(m > lo && m < hi) {
            m = 0.5 * (a + b);
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fb.signum() {
            b = m;
            fb = fm;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = m;
            fa = fm;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NoConvergence(format!(
        "no root within tolerance after 300 iterations, bracket [{a}, {b}]"
    )))
}
