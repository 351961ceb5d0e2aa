//! Mean-field variational Bayes by coordinate ascent: closed-form factor
//! updates cycled until the variational parameters stop moving.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Result, VbError};
use crate::McEstimate;

/// Hyperparameters of the normal model with unknown mean and variance:
/// mu ~ Normal(mu0, sigma0_sq), sigma^2 ~ InverseGamma(alpha0, beta0).
#[derive(Debug, Clone)]
pub struct NormalModelHyper {
    pub mu0: f64,
    pub sigma0_sq: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl NormalModelHyper {
    /// Defaults used by the bundled demonstrations: a diffuse
    /// Normal(0, 100) prior on the mean and InverseGamma(1, 1) on the
    /// variance.
    pub fn demo_default() -> Self {
        Self { mu0: 0.0, sigma0_sq: 100.0, alpha0: 1.0, beta0: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() {
            return Err(VbError::InvalidParameter(format!(
                "prior mean must be finite, got {}",
                self.mu0
            )));
        }
        for (name, v) in [
            ("sigma0_sq", self.sigma0_sq),
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(VbError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Convergence controls for the coordinate-ascent fits.
#[derive(Debug, Clone)]
pub struct MfvbConfig {
    /// L2 threshold on the change of the monitored parameter vector.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MfvbConfig {
    fn default() -> Self {
        Self { tol: 1e-5, max_iter: 1000 }
    }
}

impl MfvbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(VbError::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(VbError::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fitted mean-field posterior for the normal model:
/// q(mu) = Normal(mu_q, sigma_sq_q), q(sigma^2) = InverseGamma(alpha_q, beta_q).
#[derive(Debug, Clone)]
pub struct NormalVBPosterior {
    pub mu_q: f64,
    pub sigma_sq_q: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl NormalVBPosterior {
    /// Posterior mean of sigma^2, beta_q / (alpha_q - 1).
    pub fn sigma_sq_mean(&self) -> Result<f64> {
        if self.alpha_q <= 1.0 {
            return Err(VbError::Domain(
                "the variance mean needs shape above one".into(),
            ));
        }
        Ok(self.beta_q / (self.alpha_q - 1.0))
    }
}

struct NormalDataStats {
    n: f64,
    ybar: f64,
    sum_y2: f64,
}

fn normal_stats(y: &[f64]) -> Result<NormalDataStats> {
    if y.len() < 2 {
        return Err(VbError::Input(
            "the normal-model fit needs at least two observations".into(),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(VbError::Input("observations must be finite".into()));
    }
    let n = y.len() as f64;
    Ok(NormalDataStats {
        n,
        ybar: y.iter().sum::<f64>() / n,
        sum_y2: y.iter().map(|v| v * v).sum(),
    })
}

fn fit_normal_impl(
    y: &[f64],
    hyper: &NormalModelHyper,
    cfg: &MfvbConfig,
    record: bool,
) -> Result<(NormalVBPosterior, Vec<[f64; 4]>)> {
    hyper.validate()?;
    cfg.validate()?;
    let stats = normal_stats(y)?;
    let (n, ybar, sum_y2) = (stats.n, stats.ybar, stats.sum_y2);

    // Start the Gaussian factor at the sample mean with the variance of
    // the sample mean; the inverse-gamma factor is produced by the first
    // update.
    let sample_var = y.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>() / (n - 1.0);
    let mut mu_q = ybar;
    let mut sigma_sq_q = sample_var / n;
    let mut alpha_q;
    let mut beta_q;

    let mut path = Vec::new();
    let mut prev: Option<[f64; 4]> = None;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        alpha_q = hyper.alpha0 + n / 2.0;
        beta_q = hyper.beta0 + 0.5 * sum_y2 - n * ybar * mu_q
            + (n / 2.0) * (mu_q * mu_q + sigma_sq_q);
        let e_prec = alpha_q / beta_q;
        let post_prec = 1.0 / hyper.sigma0_sq + n * e_prec;
        mu_q = (hyper.mu0 / hyper.sigma0_sq + n * ybar * e_prec) / post_prec;
        sigma_sq_q = 1.0 / post_prec;

        let cur = [mu_q, sigma_sq_q, alpha_q, beta_q];
        if record {
            path.push(cur);
        }
        if let Some(p) = prev {
            let delta: f64 = cur
                .iter()
                .zip(p.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if delta < cfg.tol {
                converged = true;
                prev = Some(cur);
                break;
            }
        }
        prev = Some(cur);
    }

    let [mu_q, sigma_sq_q, alpha_q, beta_q] = prev.expect("at least one iteration ran");
    Ok((
        NormalVBPosterior { mu_q, sigma_sq_q, alpha_q, beta_q, iterations, converged },
        path,
    ))
}

/// Coordinate-ascent fit of the mean-field posterior for the normal
/// model. Each cycle updates the inverse-gamma factor
/// (alpha_q = alpha0 + n/2, beta_q = beta0 + E_q[SS]/2) and then the
/// Gaussian factor given E[1/sigma^2] = alpha_q/beta_q; iteration stops
/// when the full parameter vector moves less than `cfg.tol` in L2 norm.
pub fn fit_normal_mfvb(
    y: &[f64],
    hyper: &NormalModelHyper,
    cfg: &MfvbConfig,
) -> Result<NormalVBPosterior> {
    fit_normal_impl(y, hyper, cfg, false).map(|(p, _)| p)
}

/// Same fit, additionally returning the parameter vector
/// (mu_q, sigma_sq_q, alpha_q, beta_q) after every cycle.
pub fn fit_normal_mfvb_path(
    y: &[f64],
    hyper: &NormalModelHyper,
    cfg: &MfvbConfig,
) -> Result<(NormalVBPosterior, Vec<[f64; 4]>)> {
    fit_normal_impl(y, hyper, cfg, true)
}

/// Monte Carlo estimate of the lower bound E_q[h(theta) - log q(theta)]
/// at a fitted mean-field posterior.
pub fn mfvb_lower_bound_normal(
    y: &[f64],
    hyper: &NormalModelHyper,
    posterior: &NormalVBPosterior,
    num_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<McEstimate> {
    let model = crate::models::normal_ig_model(y, hyper)?;
    let lambda = DVector::from_vec(vec![
        posterior.mu_q,
        posterior.sigma_sq_q,
        posterior.alpha_q,
        posterior.beta_q,
    ]);
    crate::ffvb::estimate_lb(&model, &crate::models::MeanFieldNormalIG, &lambda, num_samples, rng)
}

/// Fitted mean-field posterior for the shrinkage regression model:
/// q(beta) = Normal(mu_beta, sigma_beta), q(sigma^2) and q(lambda^2)
/// inverse-gamma and gamma factors, and independent inverse-Gaussian
/// factors on the local scales 1/tau_j with parameters
/// (mu_tau[j], lambda_tau[j]).
#[derive(Debug, Clone)]
pub struct LassoVBPosterior {
    pub mu_beta: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub alpha_sigma_sq: f64,
    pub beta_sigma_sq: f64,
    pub alpha_lambda_sq: f64,
    pub beta_lambda_sq: f64,
    pub mu_tau: DVector<f64>,
    pub lambda_tau: DVector<f64>,
    /// L2 movement of mu_beta at each cycle, in iteration order.
    pub delta_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LassoVBPosterior {
    /// Posterior mean of the noise variance, beta / (alpha - 1).
    pub fn sigma_sq_mean(&self) -> f64 {
        self.beta_sigma_sq / (self.alpha_sigma_sq - 1.0)
    }

    /// Posterior mean of the shrinkage parameter lambda^2.
    pub fn lambda_sq_mean(&self) -> f64 {
        self.alpha_lambda_sq / self.beta_lambda_sq
    }

    /// E[tau_j] under the inverse-Gaussian factor on 1/tau_j:
    /// 1/mu_tau[j] + 1/lambda_tau[j].
    pub fn tau_mean(&self, j: usize) -> f64 {
        1.0 / self.mu_tau[j] + 1.0 / self.lambda_tau[j]
    }

    /// E[1/tau_j], which equals mu_tau[j].
    pub fn inv_tau_mean(&self, j: usize) -> f64 {
        self.mu_tau[j]
    }
}

/// Coordinate-ascent fit of the Bayesian lasso. The response is modeled
/// as y = X beta + noise with a double-exponential shrinkage prior on
/// beta expressed through latent scales tau, a Gamma(r, delta) prior on
/// lambda^2 (r = delta = 0 gives the scale-free improper prior), and the
/// improper prior 1/sigma^2 on the noise variance. Each cycle updates
/// q(beta), q(lambda^2), the q(tau_j), and q(sigma^2) in that order;
/// iteration stops when mu_beta moves less than `cfg.tol` in L2 norm.
pub fn fit_lasso_mfvb(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    r: f64,
    delta: f64,
    cfg: &MfvbConfig,
) -> Result<LassoVBPosterior> {
    cfg.validate()?;
    let (n, p) = (x.nrows(), x.ncols());
    if n != y.len() {
        return Err(VbError::Input(format!(
            "design has {n} rows but the response has {} entries",
            y.len()
        )));
    }
    if n < 2 || p == 0 {
        return Err(VbError::Input(
            "the regression fit needs at least two rows and one column".into(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(VbError::Input("design and response must be finite".into()));
    }
    if r < 0.0 || delta < 0.0 || !r.is_finite() || !delta.is_finite() {
        return Err(VbError::InvalidParameter(format!(
            "shrinkage hyperparameters must be non-negative, got r = {r}, delta = {delta}"
        )));
    }

    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(y);
    let yty = y.dot(y);
    let nf = n as f64;
    let pf = p as f64;

    let alpha_sigma_sq = (nf + pf) / 2.0;
    let mut beta_sigma_sq = 0.5 * yty;
    let mut mu_tau = DVector::from_element(p, 1.0);
    let mut lambda_tau = DVector::from_element(p, 1.0);
    let alpha_lambda_sq = r + 1.0;
    let mut beta_lambda_sq = f64::NAN;

    let mut mu_beta = DVector::zeros(p);
    let mut sigma_beta = DMatrix::zeros(p, p);
    let mut prev_mu_beta: Option<DVector<f64>> = None;
    let mut delta_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        iterations += 1;

        // Gaussian factor on beta, using the current E[1/sigma^2] and
        // E[1/tau_j].
        let mut a = xtx.clone();
        for j in 0..p {
            a[(j, j)] += mu_tau[j];
        }
        let chol = nalgebra::Cholesky::new(a).ok_or_else(|| {
            VbError::LinAlg("X'X + diag(E[1/tau]) is not positive definite".into())
        })?;
        mu_beta = chol.solve(&xty);
        sigma_beta = chol.inverse() * (beta_sigma_sq / alpha_sigma_sq);

        // Gamma factor on lambda^2.
        beta_lambda_sq = delta
            + 0.5
                * (0..p)
                    .map(|j| 1.0 / mu_tau[j] + 1.0 / lambda_tau[j])
                    .sum::<f64>();
        let e_lambda_sq = alpha_lambda_sq / beta_lambda_sq;

        // Inverse-Gaussian factors on 1/tau_j, using the new E[lambda^2]
        // and the not-yet-updated E[1/sigma^2].
        let e_inv_sigma_sq = alpha_sigma_sq / beta_sigma_sq;
        let mut sum_m2_mu_tau = 0.0;
        for j in 0..p {
            let m2 = mu_beta[j] * mu_beta[j] + sigma_beta[(j, j)];
            mu_tau[j] = (e_lambda_sq / (e_inv_sigma_sq * m2)).sqrt();
            lambda_tau[j] = e_lambda_sq;
            sum_m2_mu_tau += m2 * mu_tau[j];
        }

        // Inverse-gamma factor on sigma^2; the trace term is
        // tr(X Sigma_beta X') = sum(X'X .* Sigma_beta).
        let resid = y - x * &mu_beta;
        let trace_term = xtx.component_mul(&sigma_beta).sum();
        beta_sigma_sq = 0.5 * resid.norm_squared() + 0.5 * trace_term + 0.5 * sum_m2_mu_tau;

        if let Some(prevv) = &prev_mu_beta {
            let d = (&mu_beta - prevv).norm();
            delta_trace.push(d);
            if d < cfg.tol {
                converged = true;
                break;
            }
        }
        prev_mu_beta = Some(mu_beta.clone());
    }

    Ok(LassoVBPosterior {
        mu_beta,
        sigma_beta,
        alpha_sigma_sq,
        beta_sigma_sq,
        alpha_lambda_sq,
        beta_lambda_sq,
        mu_tau,
        lambda_tau,
        delta_trace,
        iterations,
        converged,
    })
}
