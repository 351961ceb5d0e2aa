//! Parametric distributions used by the solvers and samplers.
//!
//! Parameterizations follow the conventions used throughout the crate:
//! Normal carries a variance, Gamma and Exponential carry rates,
//! InverseGamma's rate acts on 1/x (so `InverseGamma(a, b)` has density
//! proportional to x^(-a-1) exp(-b/x)), and InverseGaussian carries a
//! location (its mean) and a scale, with density
//! sqrt(scale / (2 pi x^3)) exp(-scale (x - location)^2 / (2 location^2 x)).

use rand::distributions::Distribution;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbError};
use crate::special;

const LN_2PI: f64 = 1.8378770664093454836;

/// A validated distribution. Construct through the named constructors,
/// which reject non-finite or non-positive parameters where positivity
/// is required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistSpec {
    Normal { mean: f64, var: f64 },
    InverseGamma { shape: f64, rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Exponential { rate: f64 },
    InverseGaussian { location: f64, scale: f64 },
    Laplace { location: f64, scale: f64 },
}

/// First and second moments plus the mean of the reciprocal, each absent
/// when the corresponding integral does not converge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub inverse_mean: Option<f64>,
}

/// Special functions selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialFn {
    LnGamma,
    Digamma,
    Trigamma,
}

/// Evaluates the requested special function at x > 0.
pub fn special_fn(kind: SpecialFn, x: f64) -> Result<f64> {
    match kind {
        SpecialFn::LnGamma => special::ln_gamma(x),
        SpecialFn::Digamma => special::digamma(x),
        SpecialFn::Trigamma => special::trigamma(x),
    }
}

fn require(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(VbError::InvalidParameter(what.to_string()))
    }
}

fn finite_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl DistSpec {
    pub fn normal(mean: f64, var: f64) -> Result<Self> {
        require(mean.is_finite(), &format!("normal mean must be finite, got {mean}"))?;
        require(finite_positive(var), &format!("normal variance must be positive, got {var}"))?;
        Ok(Self::Normal { mean, var })
    }

    pub fn inverse_gamma(shape: f64, rate: f64) -> Result<Self> {
        require(finite_positive(shape), &format!("inverse-gamma shape must be positive, got {shape}"))?;
        require(finite_positive(rate), &format!("inverse-gamma rate must be positive, got {rate}"))?;
        Ok(Self::InverseGamma { shape, rate })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        require(finite_positive(shape), &format!("gamma shape must be positive, got {shape}"))?;
        require(finite_positive(rate), &format!("gamma rate must be positive, got {rate}"))?;
        Ok(Self::Gamma { shape, rate })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        require(finite_positive(rate), &format!("exponential rate must be positive, got {rate}"))?;
        Ok(Self::Exponential { rate })
    }

    pub fn inverse_gaussian(location: f64, scale: f64) -> Result<Self> {
        require(finite_positive(location), &format!("inverse-gaussian location must be positive, got {location}"))?;
        require(finite_positive(scale), &format!("inverse-gaussian scale must be positive, got {scale}"))?;
        Ok(Self::InverseGaussian { location, scale })
    }

    pub fn laplace(location: f64, scale: f64) -> Result<Self> {
        require(location.is_finite(), &format!("laplace location must be finite, got {location}"))?;
        require(finite_positive(scale), &format!("laplace scale must be positive, got {scale}"))?;
        Ok(Self::Laplace { location, scale })
    }

    /// Log density at x. Points outside the support give negative infinity.
    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, var } => {
                -0.5 * (LN_2PI + var.ln()) - (x - mean) * (x - mean) / (2.0 * var)
            }
            Self::InverseGamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - special::ln_gamma(shape).expect("validated shape")
                    - (shape + 1.0) * x.ln()
                    - rate / x
            }
            Self::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - special::ln_gamma(shape).expect("validated shape")
                    + (shape - 1.0) * x.ln()
                    - rate * x
            }
            Self::Exponential { rate } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                rate.ln() - rate * x
            }
            Self::InverseGaussian { location, scale } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let dev = x - location;
                0.5 * (scale.ln() - LN_2PI - 3.0 * x.ln())
                    - scale * dev * dev / (2.0 * location * location * x)
            }
            Self::Laplace { location, scale } => {
                -(2.0 * scale).ln() - (x - location).abs() / scale
            }
        }
    }

    /// Draws one value. Consumes randomness only from the supplied generator,
    /// so identical generator states give identical draws.
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            Self::Normal { mean, var } => rand_distr::Normal::new(mean, var.sqrt())
                .expect("validated parameters")
                .sample(rng),
            Self::InverseGamma { shape, rate } => {
                // If G ~ Gamma(shape, rate) then 1/G has the target law.
                let g = rand_distr::Gamma::new(shape, 1.0 / rate)
                    .expect("validated parameters")
                    .sample(rng);
                1.0 / g
            }
            Self::Gamma { shape, rate } => rand_distr::Gamma::new(shape, 1.0 / rate)
                .expect("validated parameters")
                .sample(rng),
            Self::Exponential { rate } => rand_distr::Exp::new(rate)
                .expect("validated parameters")
                .sample(rng),
            Self::InverseGaussian { location, scale } => {
                rand_distr::InverseGaussian::new(location, scale)
                    .expect("validated parameters")
                    .sample(rng)
            }
            Self::Laplace { location, scale } => {
                // Inverse CDF applied to u uniform on (-1/2, 1/2).
                let u: f64 = rand::Rng::gen_range(rng, -0.5..0.5);
                location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    /// Draws n values into a vector.
    pub fn sample_n(&self, n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Closed-form moments; entries that do not exist are None rather
    /// than NaN (for example the mean of an inverse-gamma with shape <= 1).
    pub fn moments(&self) -> MomentSet {
        match *self {
            Self::Normal { mean, var } => MomentSet {
                mean: Some(mean),
                variance: Some(var),
                inverse_mean: None,
            },
            Self::InverseGamma { shape, rate } => MomentSet {
                mean: (shape > 1.0).then(|| rate / (shape - 1.0)),
                variance: (shape > 2.0)
                    .then(|| rate * rate / ((shape - 1.0) * (shape - 1.0) * (shape - 2.0))),
                inverse_mean: Some(shape / rate),
            },
            Self::Gamma { shape, rate } => MomentSet {
                mean: Some(shape / rate),
                variance: Some(shape / (rate * rate)),
                inverse_mean: (shape > 1.0).then(|| rate / (shape - 1.0)),
            },
            Self::Exponential { rate } => MomentSet {
                mean: Some(1.0 / rate),
                variance: Some(1.0 / (rate * rate)),
                inverse_mean: None,
            },
            Self::InverseGaussian { location, scale } => MomentSet {
                mean: Some(location),
                variance: Some(location * location * location / scale),
                inverse_mean: Some(1.0 / location + 1.0 / scale),
            },
            Self::Laplace { location, scale } => MomentSet {
                mean: Some(location),
                variance: Some(2.0 * scale * scale),
                inverse_mean: None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Reference log densities computed with mpmath at 40 decimal digits.
    #[test]
    fn log_pdf_matches_reference_values() {
        let cases = [
            (DistSpec::normal(0.0, 1.0).unwrap(), 0.0, -0.9189385332046727),
            (DistSpec::normal(2.0, 4.0).unwrap(), 3.5, -1.8933357137646181),
            (DistSpec::inverse_gamma(1.0, 1.0).unwrap(), 1.0, -1.0),
            (DistSpec::inverse_gamma(3.0, 6.0).unwrap(), 2.5, -1.3830317003724006),
            (DistSpec::gamma(2.0, 4.0).unwrap(), 0.3, 0.36861591791384525),
            (DistSpec::exponential(2.5).unwrap(), 0.7, -0.8337092681258449),
            (DistSpec::inverse_gaussian(2.0, 4.0).unwrap(), 2.0, -1.2655121234846454),
            (DistSpec::inverse_gaussian(1.5, 0.8).unwrap(), 0.9, -0.9435806464861493),
            (DistSpec::laplace(1.0, 2.0).unwrap(), -0.5, -2.1362943611198906),
        ];
        for (d, x, want) in cases {
            let got = d.log_pdf(x);
            assert!((got - want).abs() < 1e-12, "{d:?} at {x}: got {got}, want {want}");
        }
    }

    #[test]
    fn out_of_support_points_give_negative_infinity() {
        assert_eq!(DistSpec::inverse_gamma(2.0, 3.0).unwrap().log_pdf(0.0), f64::NEG_INFINITY);
        assert_eq!(DistSpec::gamma(2.0, 3.0).unwrap().log_pdf(-1.0), f64::NEG_INFINITY);
        assert_eq!(DistSpec::exponential(1.0).unwrap().log_pdf(-0.1), f64::NEG_INFINITY);
        assert_eq!(DistSpec::inverse_gaussian(1.0, 1.0).unwrap().log_pdf(-2.0), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(DistSpec::normal(5.0, 0.0).is_err());
        assert!(DistSpec::normal(f64::NAN, 1.0).is_err());
        assert!(DistSpec::inverse_gamma(-1.0, 1.0).is_err());
        assert!(DistSpec::gamma(1.0, 0.0).is_err());
        assert!(DistSpec::exponential(-2.0).is_err());
        assert!(DistSpec::inverse_gaussian(0.0, 1.0).is_err());
        assert!(DistSpec::laplace(0.0, -1.0).is_err());
    }

    #[test]
    fn moments_match_closed_forms() {
        let ig = DistSpec::inverse_gamma(6.0, 12.0).unwrap().moments();
        assert_eq!(ig.mean, Some(12.0 / 5.0));
        assert_eq!(ig.inverse_mean, Some(0.5));
        let igauss = DistSpec::inverse_gaussian(2.0, 4.0).unwrap().moments();
        assert_eq!(igauss.mean, Some(2.0));
        assert_eq!(igauss.variance, Some(2.0));
        assert_eq!(igauss.inverse_mean, Some(0.75));
        let g = DistSpec::gamma(2.0, 4.0).unwrap().moments();
        assert_eq!(g.mean, Some(0.5));
        assert_eq!(g.variance, Some(0.125));
    }

    #[test]
    fn nonexistent_moments_are_flagged_absent() {
        let m = DistSpec::inverse_gamma(1.0, 2.0).unwrap().moments();
        assert_eq!(m.mean, None);
        assert_eq!(m.variance, None);
        let m2 = DistSpec::inverse_gamma(1.5, 2.0).unwrap().moments();
        assert!(m2.mean.is_some());
        assert_eq!(m2.variance, None);
        assert_eq!(DistSpec::gamma(0.5, 1.0).unwrap().moments().inverse_mean, None);
    }

    #[test]
    fn identical_seeds_give_identical_draws() {
        let families = [
            DistSpec::normal(1.0, 2.0).unwrap(),
            DistSpec::inverse_gamma(3.0, 6.0).unwrap(),
            DistSpec::gamma(0.7, 2.0).unwrap(),
            DistSpec::exponential(1.3).unwrap(),
            DistSpec::inverse_gaussian(2.0, 5.0).unwrap(),
            DistSpec::laplace(0.0, 1.0).unwrap(),
        ];
        for d in families {
            let a = d.sample_n(100, &mut ChaCha8Rng::seed_from_u64(42));
            let b = d.sample_n(100, &mut ChaCha8Rng::seed_from_u64(42));
            assert_eq!(a, b, "{d:?}");
        }
    }

    #[test]
    fn inverse_gamma_sample_mean_is_close() {
        // InverseGamma(3, 6): mean 3, variance 9, so the standard error of
        // the mean over 1e6 draws is 0.003.
        let d = DistSpec::inverse_gamma(3.0, 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mean = d.sample_n(n, &mut rng).iter().sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 4.0 * 0.003, "sample mean {mean}");
    }

    /// Simpson's rule over [lo, hi] with an even number of panels.
    fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
        let n = panels + panels % 2;
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn densities_integrate_to_one() {
        // Truncation bounds chosen so the omitted tail mass is far below
        // the 1% tolerance.
        let cases: [(DistSpec, f64, f64); 6] = [
            (DistSpec::normal(1.0, 4.0).unwrap(), -19.0, 21.0),
            (DistSpec::inverse_gamma(3.0, 6.0).unwrap(), 1e-4, 400.0),
            (DistSpec::gamma(2.0, 4.0).unwrap(), 0.0, 30.0),
            (DistSpec::exponential(2.5).unwrap(), 0.0, 30.0),
            (DistSpec::inverse_gaussian(2.0, 4.0).unwrap(), 1e-6, 120.0),
            (DistSpec::laplace(-1.0, 2.0).unwrap(), -80.0, 78.0),
        ];
        for (d, lo, hi) in cases {
            let mass = simpson(|x| d.log_pdf(x).exp(), lo, hi, 40_000);
            assert!((mass - 1.0).abs() < 0.01, "{d:?}: integral {mass}");
        }
    }

    #[test]
    fn sample_moments_match_analytic_moments() {
        // Parameter settings keep fourth moments finite so the empirical
        // standard error of the sample variance is itself well behaved.
        let cases = [
            DistSpec::normal(0.5, 2.25).unwrap(),
            DistSpec::inverse_gamma(8.0, 14.0).unwrap(),
            DistSpec::gamma(3.5, 2.0).unwrap(),
            DistSpec::exponential(0.8).unwrap(),
            DistSpec::inverse_gaussian(1.5, 6.0).unwrap(),
            DistSpec::laplace(2.0, 0.7).unwrap(),
        ];
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(20240811);
        for d in cases {
            let m = d.moments();
            let xs = d.sample_n(n, &mut rng);
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
            let se_mean = (var / n as f64).sqrt();
            let se_var = ((m4 - var * var) / n as f64).sqrt();
            let want_mean = m.mean.expect("moment exists for chosen parameters");
            let want_var = m.variance.expect("moment exists for chosen parameters");
            assert!(
                (mean - want_mean).abs() < 4.0 * se_mean,
                "{d:?} mean: {mean} vs {want_mean} (se {se_mean})"
            );
            assert!(
                (var - want_var).abs() < 4.0 * se_var,
                "{d:?} variance: {var} vs {want_var} (se {se_var})"
            );
        }
    }

    #[test]
    fn inverse_mean_matches_reciprocal_sample_mean() {
        let cases = [
            DistSpec::inverse_gamma(4.0, 9.0).unwrap(),
            DistSpec::gamma(5.0, 3.0).unwrap(),
            DistSpec::inverse_gaussian(2.0, 4.0).unwrap(),
        ];
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for d in cases {
            let want = d.moments().inverse_mean.unwrap();
            let xs = d.sample_n(n, &mut rng);
            let recip: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
            let mean = recip.iter().sum::<f64>() / n as f64;
            let var = recip.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - want).abs() < 4.0 * se, "{d:?}: {mean} vs {want}");
        }
    }

    #[test]
    fn special_fn_dispatches_by_kind() {
        assert!((special_fn(SpecialFn::LnGamma, 1.0).unwrap()).abs() < 1e-15);
        assert!((special_fn(SpecialFn::Digamma, 1.0).unwrap() + 0.5772156649015329).abs() < 1e-12);
        assert!((special_fn(SpecialFn::Trigamma, 1.0).unwrap() - 1.6449340668482264).abs() < 1e-12);
        assert!(special_fn(SpecialFn::LnGamma, -1.0).is_err());
    }
}
