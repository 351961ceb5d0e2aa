//! Independent checking tools: MCMC samplers, finite-difference
//! gradients, a Monte Carlo Fisher matrix, and posterior moment
//! comparison. Everything here is implemented without touching the
//! variational code paths it is used to check.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dist::DistSpec;
use crate::error::{Result, VbError};
use crate::ffvb::VariationalFamily;
use crate::mfvb::NormalModelHyper;

/// Draws from an MCMC run, one row per iteration (burn-in rows included;
/// the summary methods skip them).
#[derive(Debug, Clone)]
pub struct McmcOutput {
    pub draws: DMatrix<f64>,
    pub burn_in: usize,
    /// Proposal acceptance rate, for samplers that have one.
    pub acceptance: Option<f64>,
}

impl McmcOutput {
    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn n_retained(&self) -> usize {
        self.draws.nrows() - self.burn_in
    }

    /// Post-burn-in draws of one coordinate.
    pub fn retained(&self, j: usize) -> Vec<f64> {
        (self.burn_in..self.draws.nrows()).map(|i| self.draws[(i, j)]).collect()
    }

    pub fn mean(&self, j: usize) -> f64 {
        let v = self.retained(j);
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn sd(&self, j: usize) -> f64 {
        let v = self.retained(j);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
    }

    /// Batch-means standard error of the chain mean, which accounts for
    /// autocorrelation: the retained draws are cut into roughly sqrt(n)
    /// batches and the spread of the batch means is used.
    pub fn batch_se(&self, j: usize) -> f64 {
        let v = self.retained(j);
        let n = v.len();
        let b = ((n as f64).sqrt().floor() as usize).clamp(2, n / 2);
        let m = n / b;
        let means: Vec<f64> = (0..b)
            .map(|k| v[k * m..(k + 1) * m].iter().sum::<f64>() / m as f64)
            .collect();
        let grand = means.iter().sum::<f64>() / b as f64;
        let var_means =
            means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (b as f64 - 1.0);
        (var_means / b as f64).sqrt()
    }
}

fn resolve_burn_in(n_iter: usize, burn_in: Option<usize>) -> Result<usize> {
    let b = burn_in.unwrap_or(n_iter / 5);
    if b >= n_iter {
        return Err(VbError::Input(format!(
            "burn-in {b} must be smaller than the iteration count {n_iter}"
        )));
    }
    Ok(b)
}

/// Gibbs sampler for the normal model with unknown mean and variance.
/// The full conditionals are conjugate: mu | sigma^2 is normal and
/// sigma^2 | mu is inverse-gamma. Draw columns are (mu, sigma^2).
/// Requires at least 2000 iterations so the retained chain supports
/// batch-means standard errors.
pub fn gibbs_normal(
    y: &[f64],
    hyper: &NormalModelHyper,
    n_iter: usize,
    burn_in: Option<usize>,
    rng: &mut dyn RngCore,
) -> Result<McmcOutput> {
    hyper.validate()?;
    if y.len() < 2 {
        return Err(VbError::Input("the Gibbs sampler needs at least two observations".into()));
    }
    if n_iter < 2000 {
        return Err(VbError::Input(format!(
            "the Gibbs sampler needs at least 2000 iterations, got {n_iter}"
        )));
    }
    let burn_in = resolve_burn_in(n_iter, burn_in)?;
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let alpha_n = hyper.alpha0 + n / 2.0;

    // The chain starts at the sample moments; mu is then refreshed from
    // its full conditional before the first record.
    let mut mu;
    let mut sigma_sq = y.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>() / (n - 1.0);
    let mut draws = DMatrix::zeros(n_iter, 2);
    for i in 0..n_iter {
        let prec = 1.0 / hyper.sigma0_sq + n / sigma_sq;
        let mean = (hyper.mu0 / hyper.sigma0_sq + n * ybar / sigma_sq) / prec;
        let z: f64 = StandardNormal.sample(rng);
        mu = mean + z / prec.sqrt();

        let ss: f64 = y.iter().map(|v| (v - mu) * (v - mu)).sum();
        sigma_sq = DistSpec::inverse_gamma(alpha_n, hyper.beta0 + 0.5 * ss)?.sample(rng);

        draws[(i, 0)] = mu;
        draws[(i, 1)] = sigma_sq;
    }
    Ok(McmcOutput { draws, burn_in, acceptance: None })
}

/// Random-walk Metropolis with an isotropic Gaussian proposal. Works on
/// any target specified by its (unnormalized) log density.
pub fn rw_metropolis(
    log_post: &dyn Fn(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    step_sd: f64,
    n_iter: usize,
    burn_in: Option<usize>,
    rng: &mut dyn RngCore,
) -> Result<McmcOutput> {
    if !(step_sd > 0.0 && step_sd.is_finite()) {
        return Err(VbError::InvalidParameter(format!(
            "proposal scale must be positive, got {step_sd}"
        )));
    }
    if n_iter == 0 {
        return Err(VbError::Input("n_iter must be at least 1".into()));
    }
    let burn_in = resolve_burn_in(n_iter, burn_in)?;
    let d = x0.len();
    let mut x = x0.clone();
    let mut lp = log_post(&x);
    if !lp.is_finite() {
        return Err(VbError::Input(format!(
            "the starting point has non-finite log density: {:?}",
            x0.as_slice()
        )));
    }
    let mut draws = DMatrix::zeros(n_iter, d);
    let mut accepted = 0usize;
    for i in 0..n_iter {
        let prop = DVector::from_fn(d, |k, _| {
            let z: f64 = StandardNormal.sample(rng);
            x[k] + step_sd * z
        });
        let lp_prop = log_post(&prop);
        let u: f64 = rand::Rng::gen(&mut *rng);
        if lp_prop.is_finite() && u.ln() < lp_prop - lp {
            x = prop;
            lp = lp_prop;
            accepted += 1;
        }
        for k in 0..d {
            draws[(i, k)] = x[k];
         }
    }
    Ok(McmcOutput {
        draws,
        burn_in,
        acceptance: Some(accepted as f64 / n_iter as f64),
    })
}

/// Central-difference gradient of f at x with half-width h.
pub fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    assert!(h > 0.0, "half-width must be positive");
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Monte Carlo Fisher matrix: the sample covariance of the family score
/// over draws from q_lambda. Requires at least 100_000 samples so the
/// estimate is accurate enough to check analytic Fisher matrices against.
pub fn mc_fisher(
    family: &dyn VariationalFamily,
    lambda: &DVector<f64>,
    num_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<DMatrix<f64>> {
    if num_samples < 100_000 {
        return Err(VbError::Input(format!(
            "the Monte Carlo Fisher matrix needs at least 100000 samples, got {num_samples}"
        )));
    }
    let d = family.lambda_dim();
    let mut scores = Vec::with_capacity(num_samples);
    let mut mean = DVector::zeros(d);
    for _ in 0..num_samples {
        let theta = family.sample_theta(lambda, rng);
        let s = family.score(lambda, &theta)?;
        mean += &s;
        scores.push(s);
    }
    mean /= num_samples as f64;
    let mut fisher = DMatrix::zeros(d, d);
    for s in &scores {
        let c = s - &mean;
        fisher.syger(1.0, &c, &c, 1.0);
    }
    fisher /= num_samples as f64 - 1.0;
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in (i + 1)..d {
            fisher[(i, j)] = fisher[(j, i)];
        }
    }
    Ok(fisher)
}

/// One coordinate's moment comparison between an MCMC run and a
/// variational fit.
#[derive(Debug, Clone, Serialize)]
pub struct MomentEntry {
    pub mcmc_mean: f64,
    /// Batch-means standard error of the chain mean.
    pub mcmc_mean_se: f64,
    pub mcmc_sd: f64,
    pub vb_mean: f64,
    pub vb_sd: f64,
    pub abs_mean_diff: f64,
    pub abs_sd_diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentComparison {
    pub entries: Vec<MomentEntry>,
}

/// The variational side of a moment comparison: either analytic marginal
/// means and standard deviations, or a matrix of draws (one row per
/// sample).
pub enum VbSummary {
    Params { means: Vec<f64>, sds: Vec<f64> },
    Draws(DMatrix<f64>),
}

/// Compares posterior means and standard deviations coordinate by
/// coordinate.
pub fn compare_moments(mcmc: &McmcOutput, vb: &VbSummary) -> Result<MomentComparison> {
    let d = mcmc.dim();
    let (vb_means, vb_sds) = match vb {
        VbSummary::Params { means, sds } => {
            if means.len() != d || sds.len() != d {
                return Err(VbError::Input(format!(
                    "moment comparison needs {d} coordinates, got {} means and {} sds",
                    means.len(),
                    sds.len()
                )));
            }
            (means.clone(), sds.clone())
        }
        VbSummary::Draws(m) => {
            if m.ncols() != d {
                return Err(VbError::Input(format!(
                    "moment comparison needs {d} coordinates, got draws with {} columns",
                    m.ncols()
                )));
            }
            if m.nrows() < 2 {
                return Err(VbError::Input("draw-based comparison needs at least two rows".into()));
            }
            let n = m.nrows() as f64;
            let mut means = Vec::with_capacity(d);
            let mut sds = Vec::with_capacity(d);
            for j in 0..d {
                let mean = m.column(j).sum() / n;
                let var =
                    m.column(j).iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                means.push(mean);
                sds.push(var.sqrt());
            }
            (means, sds)
        }
    };
    let entries = (0..d)
        .map(|j| {
            let mcmc_mean = mcmc.mean(j);
            let mcmc_sd = mcmc.sd(j);
            MomentEntry {
                mcmc_mean,
                mcmc_mean_se: mcmc.batch_se(j),
                mcmc_sd,
                vb_mean: vb_means[j],
                vb_sd: vb_sds[j],
                abs_mean_diff: (mcmc_mean - vb_means[j]).abs(),
                abs_sd_diff: (mcmc_sd - vb_sds[j]).abs(),
            }
        })
        .collect();
    Ok(MomentComparison { entries })
}
