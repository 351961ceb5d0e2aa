//! Log-gamma, digamma, and trigamma for positive arguments.
//!
//! All three use the same scheme: the recurrence relation shifts the
//! argument upward until the asymptotic (Stirling-type) series applies,
//! then the series is evaluated with enough Bernoulli terms that the
//! truncation error is far below 1e-10 across [1e-3, 1e6].

use crate::error::{Result, VbError};

/// Arguments at or above this threshold go straight to the asymptotic
/// series; smaller ones are shifted up by the recurrence first.
const SHIFT_THRESHOLD: f64 = 10.0;

/// ln(2 pi), shared by the Gaussian log densities.
pub const LN_2PI: f64 = 1.8378770664093454836;

fn check_positive(x: f64, name: &str) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(VbError::Domain(format!(
            "{name} requires a positive finite argument, got {x}"
        )));
    }
    Ok(())
}

/// Natural log of the gamma function for x > 0.
///
/// Uses ln Γ(x) = ln Γ(x + k) - ln(x (x+1) ... (x+k-1)) to reach the
/// asymptotic range, then Stirling's series with Bernoulli coefficients
/// through 1/x^13 (next omitted term is below 1e-16 at x = 10).
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_positive(x, "ln_gamma")?;
    let mut shift = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        shift += z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Bernoulli series: B2/(1*2) x^-1, -B4/(3*4) x^-3, ...
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2
                                        * (1.0 / 1188.0
                                            + inv2
                                                * (-691.0 / 360360.0
                                                    + inv2 * (1.0 / 156.0)))))));
    Ok((z - 0.5) * z.ln() - z + 0.5 * LN_2PI + series - shift)
}

/// Digamma (logarithmic derivative of gamma) for x > 0.
///
/// ψ(x) = ψ(x+1) - 1/x shifts into the asymptotic range; the series is
/// ln x - 1/(2x) - Σ B_{2n}/(2n x^{2n}).
pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 120.0
                    + inv2
                        * (1.0 / 252.0
                            + inv2
                                * (-1.0 / 240.0
                                    + inv2
                                        * (1.0 / 132.0
                                            + inv2
                                                * (-691.0 / 32760.0
                                                    + inv2 * (1.0 / 12.0)))))));
    Ok(acc + z.ln() - 0.5 * inv - series)
}

/// Trigamma (second derivative of ln gamma) for x > 0.
///
/// ψ'(x) = ψ'(x+1) + 1/x² shifts upward; the series is
/// 1/x + 1/(2x²) + Σ B_{2n}/x^{2n+1}.
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive(x, "trigamma")?;
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0
            + inv
                * (0.5
                    + inv
                        * (1.0 / 6.0
                            + inv2
                                * (-1.0 / 30.0
                                    + inv2
                                        * (1.0 / 42.0
                                            + inv2
                                                * (-1.0 / 30.0
                                                    + inv2
                                                        * (5.0 / 66.0
                                                            + inv2
                                                                * (-691.0 / 2730.0
                                                                    + inv2 * (7.0 / 6.0)))))))));
    Ok(acc + series)
}

/// Regularized lower incomplete gamma P(a, x) for a > 0, x >= 0.
///
/// The series representation converges fast for x < a + 1; elsewhere the
/// complement Q(a, x) comes from the Lentz continued fraction and
/// P = 1 - Q. Both share the prefactor exp(a ln x - x - ln Gamma(a)).
pub fn lower_incomplete_gamma_regularized(a: f64, x: f64) -> Result<f64> {
    check_positive(a, "lower_incomplete_gamma_regularized")?;
    if !x.is_finite() || x < 0.0 {
        return Err(VbError::Domain(format!(
            "lower_incomplete_gamma_regularized requires x >= 0, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a)?;
    const MAX_ITER: usize = 400;
    const REL_TOL: f64 = 1e-15;
    if x < a + 1.0 {
        // P(a,x) = prefactor * sum_{n>=0} x^n / (a (a+1) ... (a+n)).
        let mut term = 1.0 / a;
        let mut sum = term;
        for n in 1..=MAX_ITER {
            term *= x / (a + n as f64);
            sum += term;
            if term.abs() < sum.abs() * REL_TOL {
                return Ok((log_prefactor.exp() * sum).min(1.0));
            }
        }
    } else {
        // Q(a,x) = prefactor / (x + 1 - a - 1(1-a)/(x + 3 - a - ...)),
        // evaluated with the modified Lentz method.
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut f = d;
        for n in 1..=MAX_ITER {
            let an = -(n as f64) * (n as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            f *= delta;
            if (delta - 1.0).abs() < REL_TOL {
                return Ok((1.0 - log_prefactor.exp() * f).max(0.0));
            }
        }
    }
    Err(VbError::NonFinite(format!(
        "incomplete gamma did not converge at a = {a}, x = {x}"
    )))
}
