//! Model definitions (joint log densities h(theta) = log p(y, theta)),
//! synthetic data generators, and the variational families used with the
//! stochastic engine.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dist::DistSpec;
use crate::error::{Result, VbError};
use crate::ffvb::{InitMethod, VariationalFamily, POSITIVITY_FLOOR};
use crate::mfvb::NormalModelHyper;
use crate::special::{ln_gamma, trigamma, LN_2PI};

/// Observations bundled for the normal-model demonstrations and tests.
pub const NORMAL_DEMO_DATA: [f64; 10] =
    [11.0, 12.0, 8.0, 10.0, 9.0, 8.0, 9.0, 10.0, 13.0, 7.0];

/// A target model for the stochastic optimizers: the dimension of theta,
/// the joint log density h(theta) = log p(y, theta) up to the evidence
/// (h returns negative infinity outside the support), and optionally its
/// gradient, required by the reparameterized strategies.
pub struct ModelSpec {
    dim: usize,
    h: Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    grad_h: Option<Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>>,
}

impl ModelSpec {
    pub fn new(dim: usize, h: Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>) -> Self {
        Self { dim, h, grad_h: None }
    }

    pub fn with_grad(
        dim: usize,
        h: Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
        grad_h: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    ) -> Self {
        Self { dim, h, grad_h: Some(grad_h) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self, theta: &DVector<f64>) -> f64 {
        (self.h)(theta)
    }

    pub fn has_grad(&self) -> bool {
        self.grad_h.is_some()
    }

    pub fn grad_h(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.grad_h {
            Some(g) => Ok(g(theta)),
            None => Err(VbError::Unsupported(
                "this model does not provide a gradient of h".into(),
            )),
        }
    }
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("has_grad", &self.grad_h.is_some())
            .finish()
    }
}

fn logpdf_normal(x: f64, mean: f64, var: f64) -> f64 {
    match DistSpec::normal(mean, var) {
        Ok(d) => d.log_pdf(x),
        Err(_) => f64::NAN,
    }
}

fn logpdf_inverse_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    match DistSpec::inverse_gamma(shape, rate) {
        Ok(d) => d.log_pdf(x),
        Err(_) => f64::NAN,
    }
}

/// Joint log density of the normal model with unknown mean and variance:
/// theta = (mu, sigma^2), mu ~ Normal(mu0, sigma0^2),
/// sigma^2 ~ InverseGamma(alpha0, beta0), y_i | theta ~ Normal(mu, sigma^2).
///
/// h(theta) = -((n+1)/2) ln 2pi - (1/2) ln sigma0^2
///            - (mu - mu0)^2 / (2 sigma0^2)
///            + alpha0 ln beta0 - ln Gamma(alpha0)
///            - (n/2 + alpha0 + 1) ln sigma^2 - beta0 / sigma^2
///            - sum_i (y_i - mu)^2 / (2 sigma^2).
pub fn normal_ig_model(y: &[f64], hyper: &NormalModelHyper) -> Result<ModelSpec> {
    hyper.validate()?;
    if y.is_empty() {
        return Err(VbError::Input("normal model needs at least one observation".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(VbError::Input("observations must be finite".into()));
    }
    let n = y.len() as f64;
    let sum_y: f64 = y.iter().sum();
    let sum_y2: f64 = y.iter().map(|v| v * v).sum();
    let hy = hyper.clone();
    let constant = -(n + 1.0) / 2.0 * LN_2PI - 0.5 * hy.sigma0_sq.ln()
        + hy.alpha0 * hy.beta0.ln()
        - ln_gamma(hy.alpha0)?;
    let log_coeff = n / 2.0 + hy.alpha0 + 1.0;

    let hy_h = hy.clone();
    let h = Box::new(move |theta: &DVector<f64>| -> f64 {
        let (mu, sigma_sq) = (theta[0], theta[1]);
        if sigma_sq <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ss = sum_y2 - 2.0 * mu * sum_y + n * mu * mu;
        constant
            - (mu - hy_h.mu0).powi(2) / (2.0 * hy_h.sigma0_sq)
            - log_coeff * sigma_sq.ln()
            - hy_h.beta0 / sigma_sq
            - ss / (2.0 * sigma_sq)
    });
    let grad = Box::new(move |theta: &DVector<f64>| -> DVector<f64> {
        let (mu, sigma_sq) = (theta[0], theta[1]);
        if sigma_sq <= 0.0 {
            return DVector::from_element(2, f64::NAN);
        }
        let ss = sum_y2 - 2.0 * mu * sum_y + n * mu * mu;
        let d_mu = -(mu - hy.mu0) / hy.sigma0_sq + (sum_y - n * mu) / sigma_sq;
        let d_s2 = -log_coeff / sigma_sq + hy.beta0 / (sigma_sq * sigma_sq)
            + ss / (2.0 * sigma_sq * sigma_sq);
        DVector::from_vec(vec![d_mu, d_s2])
    });
    Ok(ModelSpec::with_grad(2, h, grad))
}

/// Conjugate testbed: scalar theta with Normal(prior_mean, prior_var)
/// prior and Normal(theta, like_var) observations. The posterior and the
/// evidence are available in closed form, so estimator identities can be
/// checked exactly.
pub fn normal_known_variance_model(
    y: &[f64],
    like_var: f64,
    prior_mean: f64,
    prior_var: f64,
) -> ModelSpec {
    assert!(like_var > 0.0 && prior_var > 0.0, "variances must be positive");
    let y = y.to_vec();
    let y_grad = y.clone();
    let h = Box::new(move |theta: &DVector<f64>| -> f64 {
        let t = theta[0];
        let mut acc = logpdf_normal(t, prior_mean, prior_var);
        for &yi in &y {
            acc += logpdf_normal(yi, t, like_var);
        }
        acc
    });
    let grad = Box::new(move |theta: &DVector<f64>| -> DVector<f64> {
        let t = theta[0];
        let mut g = -(t - prior_mean) / prior_var;
        for &yi in &y_grad {
            g += (yi - t) / like_var;
        }
        DVector::from_vec(vec![g])
    });
    ModelSpec::with_grad(1, h, grad)
}

/// Exact posterior (mean, variance) for [`normal_known_variance_model`].
pub fn normal_known_variance_posterior(
    y: &[f64],
    like_var: f64,
    prior_mean: f64,
    prior_var: f64,
) -> (f64, f64) {
    let n = y.len() as f64;
    let sum_y: f64 = y.iter().sum();
    let prec = 1.0 / prior_var + n / like_var;
    ((prior_mean / prior_var + sum_y / like_var) / prec, 1.0 / prec)
}

/// Exact log evidence log p(y) for [`normal_known_variance_model`],
/// accumulated through the one-step-ahead predictive densities.
pub fn normal_known_variance_evidence(
    y: &[f64],
    like_var: f64,
    prior_mean: f64,
    prior_var: f64,
) -> f64 {
    let (mut m, mut v) = (prior_mean, prior_var);
    let mut acc = 0.0;
    for &yi in y {
        acc += logpdf_normal(yi, m, v + like_var);
        let prec = 1.0 / v + 1.0 / like_var;
        m = (m / v + yi / like_var) / prec;
        v = 1.0 / prec;
    }
    acc
}

/// Numerically stable log(1 + exp(a)).
pub fn stable_softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Logistic function 1 / (1 + exp(-a)).
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log likelihood of a logistic regression:
/// sum_i [ y_i x_i' theta - log(1 + exp(x_i' theta)) ].
pub fn logistic_log_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let eta = x * theta;
    let mut acc = 0.0;
    for i in 0..x.nrows() {
        acc += y[i] * eta[i] - stable_softplus(eta[i]);
    }
    acc
}

/// Joint log density of Bayesian logistic regression with a
/// Normal(0, prior_var * I) prior on the coefficients:
///
/// h(theta) = -(d/2) ln 2pi - (d/2) ln prior_var - theta'theta / (2 prior_var)
///            + y'X theta - sum_i log(1 + exp(x_i' theta)).
pub fn logistic_model(x: DMatrix<f64>, y: DVector<f64>, prior_var: f64) -> Result<ModelSpec> {
    if prior_var <= 0.0 || !prior_var.is_finite() {
        return Err(VbError::InvalidParameter(format!(
            "prior variance must be positive, got {prior_var}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(VbError::Input(format!(
            "design has {} rows but the response has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(VbError::Input("design matrix must be non-empty".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(VbError::Input("responses must be 0 or 1".into()));
    }
    let d = x.ncols();
    let constant = -(d as f64) / 2.0 * (LN_2PI + prior_var.ln());
    let x_grad = x.clone();
    let y_grad = y.clone();
    let h = Box::new(move |theta: &DVector<f64>| -> f64 {
        constant - theta.dot(theta) / (2.0 * prior_var) + logistic_log_likelihood(&x, &y, theta)
    });
    let grad = Box::new(move |theta: &DVector<f64>| -> DVector<f64> {
        let eta = &x_grad * theta;
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter().zip(y_grad.iter()).map(|(&e, &yi)| yi - sigmoid(e)),
        );
        x_grad.tr_mul(&resid) - theta / prior_var
    });
    Ok(ModelSpec::with_grad(d, h, grad))
}

/// Draws a sparse-regression dataset: an n x p design with standard
/// normal entries and mean-centered columns, and y = X beta + noise_sd * eps.
pub fn generate_lasso_data(
    n: usize,
    beta: &[f64],
    noise_sd: f64,
    rng: &mut dyn RngCore,
) -> (DMatrix<f64>, DVector<f64>) {
    assert!(n > 1 && !beta.is_empty() && noise_sd >= 0.0);
    let p = beta.len();
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            x[(i, j)] = StandardNormal.sample(rng);
        }
        let mean = x.column(j).sum() / n as f64;
        for i in 0..n {
            x[(i, j)] -= mean;
        }
    }
    let b = DVector::from_column_slice(beta);
    let mut y: DVector<f64> = &x * b;
    for i in 0..n {
        let e: f64 = StandardNormal.sample(rng);
        y[i] += noise_sd * e;
    }
    (x, y)
}

/// Draws a logistic-regression dataset whose design has an intercept
/// column of ones followed by standard normal covariates;
/// y_i ~ Bernoulli(sigmoid(x_i' theta)).
pub fn generate_logistic_data(
    n: usize,
    theta: &DVector<f64>,
    rng: &mut dyn RngCore,
) -> (DMatrix<f64>, DVector<f64>) {
    assert!(n > 0 && theta.len() > 0);
    let d = theta.len();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..d {
            x[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let eta = &x * theta;
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let u: f64 = rand::Rng::gen::<f64>(&mut *rng);
        y[i] = if u < sigmoid(eta[i]) { 1.0 } else { 0.0 };
    }
    (x, y)
}

fn draw_standard_normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

fn init_with_positivity(
    dim: usize,
    constrained: &[usize],
    method: &InitMethod,
    rng: &mut dyn RngCore,
) -> Result<DVector<f64>> {
    match method {
        InitMethod::Random => {
            let small = Normal::new(0.0, 0.01).expect("valid scale");
            let mut lambda = DVector::from_fn(dim, |_, _| small.sample(rng));
            for &i in constrained {
                lambda[i] = 1.0;
            }
            Ok(lambda)
        }
        InitMethod::Custom(v) => {
            if v.len() != dim {
                return Err(VbError::Input(format!(
                    "custom start has length {} but lambda has dimension {dim}",
                    v.len()
                )));
            }
            let mut lambda = v.clone();
            for &i in constrained {
                if lambda[i] < POSITIVITY_FLOOR {
                    lambda[i] = POSITIVITY_FLOOR;
                }
            }
            Ok(lambda)
        }
    }
}

fn clamp_coords(lambda: &mut DVector<f64>, constrained: &[usize]) {
    for &i in constrained {
        if lambda[i] < POSITIVITY_FLOOR {
            lambda[i] = POSITIVITY_FLOOR;
        }
    }
}

/// One-dimensional Gaussian family parameterized by mean and variance,
/// lambda = (m, v). Provides both gradient routes and the exact Fisher
/// matrix, which makes it the reference family for estimator tests.
#[derive(Debug, Clone, Copy)]
pub struct NormalMeanVar;

const NMV_CONSTRAINED: [usize; 1] = [1];

impl VariationalFamily for NormalMeanVar {
    fn theta_dim(&self) -> usize {
        1
    }

    fn lambda_dim(&self) -> usize {
        2
    }

    fn init_lambda(&self, method: &InitMethod, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        init_with_positivity(2, &NMV_CONSTRAINED, method, rng)
    }

    fn project(&self, lambda: &mut DVector<f64>) {
        clamp_coords(lambda, &NMV_CONSTRAINED);
    }

    fn sample_theta(&self, lambda: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        let eps = draw_standard_normal(rng);
        DVector::from_vec(vec![lambda[0] + lambda[1].sqrt() * eps])
    }

    fn log_q(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        logpdf_normal(theta[0], lambda[0], lambda[1])
    }

    fn score(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, v) = (lambda[0], lambda[1]);
        let d = theta[0] - m;
        Ok(DVector::from_vec(vec![d / v, -0.5 / v + d * d / (2.0 * v * v)]))
    }

    fn fisher(&self, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let v = lambda[1];
        if v <= 0.0 {
            return Err(VbError::Domain(format!("variance must be positive, got {v}")));
        }
        Ok(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0 / v,
            1.0 / (2.0 * v * v),
        ])))
    }

    fn sample_eps(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![draw_standard_normal(rng)]))
    }

    fn transform(&self, lambda: &DVector<f64>, eps: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![lambda[0] + lambda[1].sqrt() * eps[0]]))
    }

    fn grad_theta_log_q(
        &self,
        lambda: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![-(theta[0] - lambda[0]) / lambda[1]]))
    }

    fn pullback(
        &self,
        lambda: &DVector<f64>,
        eps: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        // theta = m + sqrt(v) eps, so d theta / dm = 1 and
        // d theta / dv = eps / (2 sqrt(v)).
        let sd = lambda[1].sqrt();
        Ok(DVector::from_vec(vec![v[0], v[0] * eps[0] / (2.0 * sd)]))
    }
}

/// Mean-field family for the normal model: q(mu, sigma^2) =
/// Normal(mu; mu_mu, sigma_mu^2) * InverseGamma(sigma^2; alpha, beta),
/// lambda = (mu_mu, sigma_mu^2, alpha, beta).
#[derive(Debug, Clone, Copy)]
pub struct MeanFieldNormalIG;

const MF_CONSTRAINED: [usize; 3] = [1, 2, 3];

impl VariationalFamily for MeanFieldNormalIG {
    fn theta_dim(&self) -> usize {
        2
    }

    fn lambda_dim(&self) -> usize {
        4
    }

    fn init_lambda(&self, method: &InitMethod, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        init_with_positivity(4, &MF_CONSTRAINED, method, rng)
    }

    fn project(&self, lambda: &mut DVector<f64>) {
        clamp_coords(lambda, &MF_CONSTRAINED);
    }

    fn sample_theta(&self, lambda: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        let mu = lambda[0] + lambda[1].sqrt() * draw_standard_normal(rng);
        let sigma_sq = match DistSpec::inverse_gamma(lambda[2], lambda[3]) {
            Ok(d) => d.sample(rng),
            Err(_) => f64::NAN,
        };
        DVector::from_vec(vec![mu, sigma_sq])
    }

    fn log_q(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        logpdf_normal(theta[0], lambda[0], lambda[1])
            + logpdf_inverse_gamma(theta[1], lambda[2], lambda[3])
    }

    fn score(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, v, alpha, beta) = (lambda[0], lambda[1], lambda[2], lambda[3]);
        let (mu, sigma_sq) = (theta[0], theta[1]);
        if sigma_sq <= 0.0 {
            return Err(VbError::Domain(format!(
                "variance draw must be positive, got {sigma_sq}"
            )));
        }
        let d = mu - m;
        Ok(DVector::from_vec(vec![
            d / v,
            -0.5 / v + d * d / (2.0 * v * v),
            beta.ln() - crate::special::digamma(alpha)? - sigma_sq.ln(),
            alpha / beta - 1.0 / sigma_sq,
        ]))
    }

    fn fisher(&self, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (v, alpha, beta) = (lambda[1], lambda[2], lambda[3]);
        if v <= 0.0 || alpha <= 0.0 || beta <= 0.0 {
            return Err(VbError::Domain(format!(
                "family parameters must be positive, got {:?}",
                lambda.as_slice()
            )));
        }
        let mut f = DMatrix::zeros(4, 4);
        f[(0, 0)] = 1.0 / v;
        f[(1, 1)] = 1.0 / (2.0 * v * v);
        f[(2, 2)] = trigamma(alpha)?;
        f[(2, 3)] = -1.0 / beta;
        f[(3, 2)] = -1.0 / beta;
        f[(3, 3)] = alpha / (beta * beta);
        Ok(f)
    }
}

/// Hybrid family for the normal model that keeps the exact conditional of
/// the variance: q(mu, sigma^2) = q(mu; mu_mu, sigma_mu^2) *
/// p(sigma^2 | y, mu), lambda = (mu_mu, sigma_mu^2). The conditional is
/// InverseGamma(alpha0 + n/2, beta0 + sum_i (y_i - mu)^2 / 2), so only the
/// two Gaussian parameters are optimized and their Fisher matrix is exact.
#[derive(Debug, Clone)]
pub struct HybridNormal {
    n: f64,
    sum_y: f64,
    sum_y2: f64,
    beta0: f64,
    /// Conditional shape alpha0 + n/2, fixed by the data size.
    alpha_n: f64,
}

const HYBRID_CONSTRAINED: [usize; 1] = [1];

impl HybridNormal {
    pub fn new(y: &[f64], hyper: &NormalModelHyper) -> Result<Self> {
        hyper.validate()?;
        if y.is_empty() {
            return Err(VbError::Input("hybrid family needs at least one observation".into()));
        }
        let n = y.len() as f64;
        Ok(Self {
            n,
            sum_y: y.iter().sum(),
            sum_y2: y.iter().map(|v| v * v).sum(),
            beta0: hyper.beta0,
            alpha_n: hyper.alpha0 + n / 2.0,
        })
    }

    /// Rate of the exact variance conditional at a given mean:
    /// beta0 + sum_i (y_i - mu)^2 / 2.
    pub fn conditional_rate(&self, mu: f64) -> f64 {
        self.beta0 + 0.5 * (self.sum_y2 - 2.0 * mu * self.sum_y + self.n * mu * mu)
    }

    pub fn conditional_shape(&self) -> f64 {
        self.alpha_n
    }

    /// Posterior mean of sigma^2 under the fitted family:
    /// E[beta0 + SS(mu)/2] / (alpha_n - 1) with mu ~ q. Requires
    /// alpha_n > 1, which holds for two or more observations.
    pub fn sigma_sq_mean(&self, lambda: &DVector<f64>) -> Result<f64> {
        if self.alpha_n <= 1.0 {
            return Err(VbError::Domain(
                "the variance mean needs conditional shape above one".into(),
            ));
        }
        let (m, v) = (lambda[0], lambda[1]);
        let e_rate = self.beta0
            + 0.5 * (self.sum_y2 - 2.0 * self.sum_y * m + self.n * (m * m + v));
        Ok(e_rate / (self.alpha_n - 1.0))
    }
}

impl VariationalFamily for HybridNormal {
    fn theta_dim(&self) -> usize {
        2
    }

    fn lambda_dim(&self) -> usize {
        2
    }

    fn init_lambda(&self, method: &InitMethod, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        init_with_positivity(2, &HYBRID_CONSTRAINED, method, rng)
    }

    fn project(&self, lambda: &mut DVector<f64>) {
        clamp_coords(lambda, &HYBRID_CONSTRAINED);
    }

    fn sample_theta(&self, lambda: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        let mu = lambda[0] + lambda[1].sqrt() * draw_standard_normal(rng);
        let sigma_sq = match DistSpec::inverse_gamma(self.alpha_n, self.conditional_rate(mu)) {
            Ok(d) => d.sample(rng),
            Err(_) => f64::NAN,
        };
        DVector::from_vec(vec![mu, sigma_sq])
    }

    fn log_q(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let (mu, sigma_sq) = (theta[0], theta[1]);
        logpdf_normal(mu, lambda[0], lambda[1])
            + logpdf_inverse_gamma(sigma_sq, self.alpha_n, self.conditional_rate(mu))
    }

    /// The conditional factor does not depend on lambda, so the score is
    /// the Gaussian score alone.
    fn score(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, v) = (lambda[0], lambda[1]);
        let d = theta[0] - m;
        Ok(DVector::from_vec(vec![d / v, -0.5 / v + d * d / (2.0 * v * v)]))
    }

    fn fisher(&self, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let v = lambda[1];
        if v <= 0.0 {
            return Err(VbError::Domain(format!("variance must be positive, got {v}")));
        }
        Ok(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0 / v,
            1.0 / (2.0 * v * v),
        ])))
    }
}
