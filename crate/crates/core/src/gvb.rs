//! Gaussian variational approximations with structured covariances.
//!
//! Two parameterizations are provided. The Cholesky form writes the
//! covariance as L L' with L lower triangular and optimizes
//! lambda = (mu, vech(L)) by reparameterized gradients. The factor form
//! writes it as b b' + diag(c)^2 (one factor plus a diagonal), which keeps
//! every operation, including an approximate natural gradient, at O(d)
//! cost per sample and therefore scales to high-dimensional posteriors.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Result, VbError};
use crate::ffvb::{
    clip_gradient, learning_rate, momentum_update, run_ffvb, FitResult, InitMethod, LbTrace,
    Strategy, Termination, TrainerConfig, VariationalFamily,
};
use crate::models::ModelSpec;
use crate::special::LN_2PI;

/// Length of the half-vectorization of a d x d lower triangle.
pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of entry (i, j), i >= j, in the column-stacked lower
/// triangle: column j starts at offset j*d - j*(j-1)/2.
pub fn vech_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < d);
    j * (2 * d - j + 1) / 2 + (i - j)
}

/// Rebuilds the lower-triangular matrix from its half-vectorization.
pub fn vech_to_lower(d: usize, v: &DVector<f64>) -> DMatrix<f64> {
    assert_eq!(v.len(), vech_len(d), "half-vectorization has the wrong length");
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in j..d {
            m[(i, j)] = v[vech_index(d, i, j)];
        }
    }
    m
}

/// Column-stacks the lower triangle of a square matrix.
pub fn lower_to_vech(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    assert_eq!(d, m.ncols(), "matrix must be square");
    let mut v = DVector::zeros(vech_len(d));
    for j in 0..d {
        for i in j..d {
            v[vech_index(d, i, j)] = m[(i, j)];
        }
    }
    v
}

/// Gaussian with covariance L L', lambda = (mu, vech(L)). The diagonal
/// of L is not sign-constrained; the covariance only depends on L L'.
#[derive(Debug, Clone)]
pub struct GaussianCholeskyParams {
    pub mu: DVector<f64>,
    pub l_vech: DVector<f64>,
}

impl GaussianCholeskyParams {
    pub fn new(mu: DVector<f64>, l_vech: DVector<f64>) -> Result<Self> {
        if l_vech.len() != vech_len(mu.len()) {
            return Err(VbError::Input(format!(
                "vech(L) has length {} but dimension {} needs {}",
                l_vech.len(),
                mu.len(),
                vech_len(mu.len())
            )));
        }
        Ok(Self { mu, l_vech })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn l_matrix(&self) -> DMatrix<f64> {
        vech_to_lower(self.dim(), &self.l_vech)
    }

    pub fn to_lambda(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.mu.len() + self.l_vech.len());
        v.rows_mut(0, self.mu.len()).copy_from(&self.mu);
        v.rows_mut(self.mu.len(), self.l_vech.len()).copy_from(&self.l_vech);
        v
    }

    pub fn from_lambda(d: usize, lambda: &DVector<f64>) -> Result<Self> {
        if lambda.len() != d + vech_len(d) {
            return Err(VbError::Input(format!(
                "lambda has length {} but dimension {d} needs {}",
                lambda.len(),
                d + vech_len(d)
            )));
        }
        Ok(Self {
            mu: lambda.rows(0, d).into_owned(),
            l_vech: lambda.rows(d, vech_len(d)).into_owned(),
        })
    }
}

/// theta = mu + L eps.
pub fn reparam_sample_cholesky(params: &GaussianCholeskyParams, eps: &DVector<f64>) -> DVector<f64> {
    &params.mu + params.l_matrix() * eps
}

/// Variational family with the Cholesky parameterization; supports the
/// reparameterization route only.
#[derive(Debug, Clone, Copy)]
pub struct CholeskyFamily {
    pub dim: usize,
}

impl CholeskyFamily {
    fn split<'a>(&self, lambda: &'a DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mu = lambda.rows(0, d).into_owned();
        let l = vech_to_lower(d, &lambda.rows(d, vech_len(d)).into_owned());
        (mu, l)
    }
}

impl VariationalFamily for CholeskyFamily {
    fn theta_dim(&self) -> usize {
        self.dim
    }

    fn lambda_dim(&self) -> usize {
        self.dim + vech_len(self.dim)
    }

    /// Random initialization draws each mean coordinate from
    /// Normal(0, 0.01^2) and starts L at 0.1 times the identity, so the
    /// initial approximation is tight and early steps stay stable.
    fn init_lambda(&self, method: &InitMethod, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        match method {
            InitMethod::Random => {
                let d = self.dim;
                let small = Normal::new(0.0, 0.01).expect("valid scale");
                let mut lambda = DVector::zeros(self.lambda_dim());
                for i in 0..d {
                    lambda[i] = small.sample(rng);
                }
                for i in 0..d {
                    lambda[d + vech_index(d, i, i)] = 0.1;
                }
                Ok(lambda)
            }
            InitMethod::Custom(v) => {
                if v.len() != self.lambda_dim() {
                    return Err(VbError::Input(format!(
                        "custom start has length {} but lambda has dimension {}",
                        v.len(),
                        self.lambda_dim()
                    )));
                }
                Ok(v.clone())
            }
        }
    }

    fn sample_theta(&self, lambda: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        let eps = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
        let (mu, l) = self.split(lambda);
        mu + l * eps
    }

    fn log_q(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let (mu, l) = self.split(lambda);
        // |Sigma|^(1/2) = prod |L_ii|, so a zero diagonal entry makes the
        // density degenerate.
        let mut half_logdet = 0.0;
        for i in 0..self.dim {
            let di = l[(i, i)].abs();
            if di == 0.0 {
                return f64::NAN;
            }
            half_logdet += di.ln();
        }
        let Some(z) = l.solve_lower_triangular(&(theta - mu)) else {
            return f64::NAN;
        };
        -(self.dim as f64) / 2.0 * LN_2PI - half_logdet - 0.5 * z.norm_squared()
    }

    fn sample_eps(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Ok(DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng)))
    }

    fn transform(&self, lambda: &DVector<f64>, eps: &DVector<f64>) -> Result<DVector<f64>> {
        let (mu, l) = self.split(lambda);
        Ok(mu + l * eps)
    }

    /// grad_theta log q = -Sigma^{-1}(theta - mu), computed with two
    /// triangular solves against L.
    fn grad_theta_log_q(
        &self,
        lambda: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (mu, l) = self.split(lambda);
        let z = l
            .solve_lower_triangular(&(theta - mu))
            .ok_or_else(|| VbError::LinAlg("L has a zero diagonal entry".into()))?;
        let w = l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| VbError::LinAlg("L has a zero diagonal entry".into()))?;
        Ok(-w)
    }

    /// The map is theta = mu + L eps, so the lambda-gradient of v'theta
    /// is v on the mean block and vech(v eps') on the vech(L) block.
    fn pullback(
        &self,
        _lambda: &DVector<f64>,
        eps: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d = self.dim;
        let mut out = DVector::zeros(self.lambda_dim());
        out.rows_mut(0, d).copy_from(v);
        for j in 0..d {
            for i in j..d {
                out[d + vech_index(d, i, j)] = v[i] * eps[j];
            }
        }
        Ok(out)
    }
}

/// Mean over a batch of base draws of the reparameterized lower bound
/// gradient for the Cholesky family, stacked as (mu block, vech(L) block).
pub fn reparam_gradient_cholesky(
    model: &ModelSpec,
    params: &GaussianCholeskyParams,
    eps_batch: &[DVector<f64>],
) -> Result<DVector<f64>> {
    if eps_batch.is_empty() {
        return Err(VbError::Input("the gradient needs at least one base draw".into()));
    }
    let family = CholeskyFamily { dim: params.dim() };
    let lambda = params.to_lambda();
    let mut acc = DVector::zeros(family.lambda_dim());
    for eps in eps_batch {
        let theta = family.transform(&lambda, eps)?;
        let g = model.grad_h(&theta)? - family.grad_theta_log_q(&lambda, &theta)?;
        acc += family.pullback(&lambda, eps, &g)?;
    }
    Ok(acc / eps_batch.len() as f64)
}

/// Fits a full-covariance Gaussian approximation by reparameterized
/// gradients with the adaptive step rule. The model must provide
/// grad h.
pub fn run_cholesky_gvb(
    model: &ModelSpec,
    cfg: &TrainerConfig,
    rng: &mut dyn RngCore,
) -> Result<FitResult> {
    let family = CholeskyFamily { dim: model.dim() };
    run_ffvb(model, &family, cfg, Strategy::ReparamAdaptive, rng)
}

/// Base draw for the factor parameterization: theta =
/// mu + eps1 * b + c .* eps2.
#[derive(Debug, Clone)]
pub struct EpsilonDraw {
    pub eps1: f64,
    pub eps2: DVector<f64>,
}

/// Gaussian with covariance b b' + diag(c)^2, lambda = (mu, b, c).
#[derive(Debug, Clone)]
pub struct GaussianFactorParams {
    pub mu: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl GaussianFactorParams {
    pub fn new(mu: DVector<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        if b.len() != mu.len() || c.len() != mu.len() {
            return Err(VbError::Input(format!(
                "factor parameter blocks must share one dimension, got {}, {}, {}",
                mu.len(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { mu, b, c })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn to_lambda(&self) -> DVector<f64> {
        let d = self.dim();
        let mut v = DVector::zeros(3 * d);
        v.rows_mut(0, d).copy_from(&self.mu);
        v.rows_mut(d, d).copy_from(&self.b);
        v.rows_mut(2 * d, d).copy_from(&self.c);
        v
    }

    pub fn from_lambda(d: usize, lambda: &DVector<f64>) -> Result<Self> {
        if lambda.len() != 3 * d {
            return Err(VbError::Input(format!(
                "lambda has length {} but dimension {d} needs {}",
                lambda.len(),
                3 * d
            )));
        }
        Ok(Self {
            mu: lambda.rows(0, d).into_owned(),
            b: lambda.rows(d, d).into_owned(),
            c: lambda.rows(2 * d, d).into_owned(),
        })
    }

    /// Dense covariance b b' + diag(c)^2, for checks and reporting; the
    /// fitting path never forms it.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut cov = &self.b * self.b.transpose();
        for i in 0..d {
            cov[(i, i)] += self.c[i] * self.c[i];
        }
        cov
    }
}

/// theta = mu + eps1 * b + c .* eps2.
pub fn factor_sample(params: &GaussianFactorParams, eps: &EpsilonDraw) -> DVector<f64> {
    &params.mu + &params.b * eps.eps1 + params.c.component_mul(&eps.eps2)
}

fn factor_check_scales(c: &DVector<f64>) -> Result<()> {
    if c.iter().any(|&ci| ci == 0.0) {
        return Err(VbError::Degenerate(
            "a diagonal scale coordinate is zero, so the density is singular".into(),
        ));
    }
    Ok(())
}

/// Gaussian log density under the factor covariance in O(d) time, using
/// the rank-one inversion
/// Sigma^{-1} = C^{-2} - C^{-2} b b' C^{-2} / (1 + b' C^{-2} b)
/// and the determinant |Sigma| = (prod c_i^2)(1 + sum b_i^2 / c_i^2).
pub fn factor_log_q(params: &GaussianFactorParams, theta: &DVector<f64>) -> Result<f64> {
    factor_check_scales(&params.c)?;
    let d = params.dim() as f64;
    let dev = theta - &params.mu;
    let mut log_det = 0.0;
    let mut kappa = 0.0; // b' C^{-2} b
    let mut quad = 0.0; // dev' C^{-2} dev
    let mut cross = 0.0; // b' C^{-2} dev
    for i in 0..params.dim() {
        let c2 = params.c[i] * params.c[i];
        log_det += c2.ln();
        kappa += params.b[i] * params.b[i] / c2;
        quad += dev[i] * dev[i] / c2;
        cross += params.b[i] * dev[i] / c2;
    }
    log_det += (1.0 + kappa).ln();
    Ok(-d / 2.0 * LN_2PI - 0.5 * log_det - 0.5 * (quad - cross * cross / (1.0 + kappa)))
}

/// grad_theta log q = -Sigma^{-1}(theta - mu) in O(d) time.
pub fn factor_grad_log_q(
    params: &GaussianFactorParams,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    factor_check_scales(&params.c)?;
    let dev = theta - &params.mu;
    let mut kappa = 0.0;
    let mut cross = 0.0;
    for i in 0..params.dim() {
        let c2 = params.c[i] * params.c[i];
        kappa += params.b[i] * params.b[i] / c2;
        cross += params.b[i] * dev[i] / c2;
    }
    let scale = cross / (1.0 + kappa);
    let mut g = DVector::zeros(params.dim());
    for i in 0..params.dim() {
        let c2 = params.c[i] * params.c[i];
        g[i] = -(dev[i] - scale * params.b[i]) / c2;
    }
    Ok(g)
}

/// Mean over a batch of base draws of the reparameterized lower bound
/// gradient for the factor family, stacked as (mu block, b block, c block):
/// (E[g], E[eps1 g], E[eps2 .* g]) with g = grad_theta h_lambda.
pub fn reparam_gradient_factor(
    model: &ModelSpec,
    params: &GaussianFactorParams,
    eps_batch: &[EpsilonDraw],
) -> Result<DVector<f64>> {
    if eps_batch.is_empty() {
        return Err(VbError::Input("the gradient needs at least one base draw".into()));
    }
    let d = params.dim();
    let mut acc = DVector::zeros(3 * d);
    for eps in eps_batch {
        let theta = factor_sample(params, eps);
        let g = model.grad_h(&theta)? - factor_grad_log_q(params, &theta)?;
        for i in 0..d {
            acc[i] += g[i];
            acc[d + i] += eps.eps1 * g[i];
            acc[2 * d + i] += eps.eps2[i] * g[i];
        }
    }
    Ok(acc / eps_batch.len() as f64)
}

/// An approximate natural gradient with a diagnostic for indefinite
/// curvature in the scale block.
#[derive(Debug, Clone)]
pub struct NagvacGradient {
    /// Stacked (mu block, b block, c block).
    pub value: DVector<f64>,
    /// Number of scale coordinates whose curvature proxy
    /// c_i^2 - 2 b_i^2 / c_i^4 was negative; the formula still applies
    /// but those coordinates are driven by an indefinite metric.
    pub negative_curvature_coords: usize,
}

/// Approximate inverse-Fisher mapping of a factor-family gradient in
/// O(d) time. With kappa1 = sum_i b_i^2 / c_i^2,
/// v1_i = c_i^2 - 2 b_i^2 / c_i^4, v2_i = b_i^2 / c_i^3 and
/// kappa2 = 1 / (2 (1 + sum_i v2_i^2 / v1_i)), the blocks are
///
///   mu: (g1'b) b + c^2 .* g1
///   b:  ((1 + kappa1) / (2 kappa1)) ((g2'b) b + c^2 .* g2)
///   c:  (1/2) g3 ./ v1 + kappa2 ((v2 ./ v1)' g3) (v2 ./ v1).
///
/// Errors: a zero loading vector or a zero scale coordinate makes the
/// mapping singular (`Degenerate`), as does an exactly zero v1
/// coordinate. Negative v1 coordinates are tolerated and counted.
pub fn nagvac_natural_gradient(
    b: &DVector<f64>,
    c: &DVector<f64>,
    grad: &DVector<f64>,
) -> Result<NagvacGradient> {
    let d = b.len();
    if c.len() != d || grad.len() != 3 * d {
        return Err(VbError::Input(format!(
            "blocks disagree: b has {d}, c has {}, gradient has {} (needs {})",
            c.len(),
            grad.len(),
            3 * d
        )));
    }
    factor_check_scales(c)?;
    let g1 = grad.rows(0, d);
    let g2 = grad.rows(d, d);
    let g3 = grad.rows(2 * d, d);

    let mut kappa1 = 0.0;
    for i in 0..d {
        kappa1 += b[i] * b[i] / (c[i] * c[i]);
    }
    if kappa1 < 1e-12 {
        return Err(VbError::Degenerate(
            "the loading vector is numerically zero, so the factor metric is singular".into(),
        ));
    }

    let mut v1 = DVector::zeros(d);
    let mut v2 = DVector::zeros(d);
    let mut negative = 0usize;
    for i in 0..d {
        let c2 = c[i] * c[i];
        v1[i] = c2 - 2.0 * b[i] * b[i] / (c2 * c2);
        v2[i] = b[i] * b[i] / (c2 * c[i]);
        if v1[i] == 0.0 {
            return Err(VbError::Degenerate(format!(
                "scale-curvature coordinate {i} is exactly zero"
            )));
        }
        if v1[i] < 0.0 {
            negative += 1;
        }
    }
    let mut ratio_sum = 0.0; // sum v2_i^2 / v1_i
    for i in 0..d {
        ratio_sum += v2[i] * v2[i] / v1[i];
    }
    let denom = 1.0 + ratio_sum;
    if denom == 0.0 {
        return Err(VbError::Degenerate(
            "the scale-block correction denominator vanishes".into(),
        ));
    }
    let kappa2 = 0.5 / denom;

    let mut out = DVector::zeros(3 * d);
    let g1b = g1.dot(&b.rows(0, d));
    let g2b = g2.dot(&b.rows(0, d));
    let bscale = (1.0 + kappa1) / (2.0 * kappa1);
    let mut w = DVector::zeros(d); // v2 ./ v1
    for i in 0..d {
        w[i] = v2[i] / v1[i];
    }
    let wg3 = w.dot(&g3.clone_owned());
    for i in 0..d {
        let c2 = c[i] * c[i];
        out[i] = g1b * b[i] + c2 * g1[i];
        out[d + i] = bscale * (g2b * b[i] + c2 * g2[i]);
        out[2 * d + i] = 0.5 * g3[i] / v1[i] + kappa2 * wg3 * w[i];
    }
    Ok(NagvacGradient { value: out, negative_curvature_coords: negative })
}

/// Variational family with the factor parameterization; the base draw is
/// the stacked (eps1, eps2) vector of d + 1 standard normals.
#[derive(Debug, Clone, Copy)]
pub struct FactorFamily {
    pub dim: usize,
}

impl FactorFamily {
    fn params(&self, lambda: &DVector<f64>) -> GaussianFactorParams {
        GaussianFactorParams {
            mu: lambda.rows(0, self.dim).into_owned(),
            b: lambda.rows(self.dim, self.dim).into_owned(),
            c: lambda.rows(2 * self.dim, self.dim).into_owned(),
        }
    }

    fn split_eps(&self, eps: &DVector<f64>) -> EpsilonDraw {
        EpsilonDraw { eps1: eps[0], eps2: eps.rows(1, self.dim).into_owned() }
    }
}

impl VariationalFamily for FactorFamily {
    fn theta_dim(&self) -> usize {
        self.dim
    }

    fn lambda_dim(&self) -> usize {
        3 * self.dim
    }

    /// Random initialization draws the mean and loading coordinates from
    /// Normal(0, 0.01^2) and starts every diagonal scale at 0.01, so the
    /// initial approximation is tight around the origin.
    fn init_lambda(&self, method: &InitMethod, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        match method {
            InitMethod::Random => {
                let small = Normal::new(0.0, 0.01).expect("valid scale");
                let mut lambda = DVector::zeros(3 * self.dim);
                for i in 0..2 * self.dim {
                    lambda[i] = small.sample(rng);
                }
                for i in 0..self.dim {
                    lambda[2 * self.dim + i] = 0.01;
                }
                Ok(lambda)
            }
            InitMethod::Custom(v) => {
                if v.len() != 3 * self.dim {
                    return Err(VbError::Input(format!(
                        "custom start has length {} but lambda has dimension {}",
                        v.len(),
                        3 * self.dim
                    )));
                }
                Ok(v.clone())
            }
        }
    }

    fn sample_theta(&self, lambda: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        let eps1: f64 = StandardNormal.sample(rng);
        let eps2 = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
        factor_sample(&self.params(lambda), &EpsilonDraw { eps1, eps2 })
    }

    fn log_q(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        factor_log_q(&self.params(lambda), theta).unwrap_or(f64::NAN)
    }

    fn sample_eps(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Ok(DVector::from_fn(self.dim + 1, |_, _| StandardNormal.sample(rng)))
    }

    fn transform(&self, lambda: &DVector<f64>, eps: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(factor_sample(&self.params(lambda), &self.split_eps(eps)))
    }

    fn grad_theta_log_q(
        &self,
        lambda: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        factor_grad_log_q(&self.params(lambda), theta)
    }

    /// theta = mu + eps1 b + c .* eps2, so the lambda-gradient of v'theta
    /// is (v, eps1 v, eps2 .* v).
    fn pullback(
        &self,
        _lambda: &DVector<f64>,
        eps: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d = self.dim;
        let e = self.split_eps(eps);
        let mut out = DVector::zeros(3 * d);
        for i in 0..d {
            out[i] = v[i];
            out[d + i] = e.eps1 * v[i];
            out[2 * d + i] = e.eps2[i] * v[i];
        }
        Ok(out)
    }
}

/// A factor-family fit with its run diagnostics.
#[derive(Debug, Clone)]
pub struct NagvacFit {
    pub fit: FitResult,
    /// Total count, over all iterations, of scale coordinates whose
    /// curvature proxy went negative inside the natural-gradient mapping.
    pub negative_curvature_coords: usize,
}

/// Fits the factor family by reparameterized gradients mapped through
/// the O(d) approximate natural gradient, with momentum. Progress is
/// tracked by a validation loss evaluated at each new iterate rather
/// than by the lower bound: the patience counter resets whenever the
/// newest loss ties or beats the running minimum, and the returned
/// iterate is the one with the smallest loss. The trace stores the
/// losses in `raw` (`smoothed` stays empty, `best_index` points at the
/// minimum).
pub fn run_nagvac(
    model: &ModelSpec,
    cfg: &TrainerConfig,
    validation_loss: &dyn Fn(&DVector<f64>) -> f64,
    rng: &mut dyn RngCore,
) -> Result<NagvacFit> {
    cfg.validate()?;
    let family = FactorFamily { dim: model.dim() };
    let d = model.dim();
    let s = cfg.num_samples;
    let mut negative_total = 0usize;

    let mut lambda = family.init_lambda(&cfg.init_method, rng)?;

    let batch_gradient = |lambda: &DVector<f64>,
                          label: &str,
                          rng: &mut dyn RngCore|
     -> Result<DVector<f64>> {
        let params = GaussianFactorParams::from_lambda(d, lambda)?;
        let mut acc = DVector::zeros(3 * d);
        for _ in 0..s {
            let eps1: f64 = StandardNormal.sample(rng);
            let eps2 = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let eps = EpsilonDraw { eps1, eps2 };
            let theta = factor_sample(&params, &eps);
            let g = model.grad_h(&theta)? - factor_grad_log_q(&params, &theta)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(VbError::NonFinite(format!(
                    "{label}: gradient is non-finite at theta = {:?}",
                    theta.as_slice()
                )));
            }
            for i in 0..d {
                acc[i] += g[i];
                acc[d + i] += eps.eps1 * g[i];
                acc[2 * d + i] += eps.eps2[i] * g[i];
            }
        }
        Ok(acc / s as f64)
    };

    let natural = |lambda: &DVector<f64>, g: &DVector<f64>, total: &mut usize| -> Result<DVector<f64>> {
        let b = lambda.rows(d, d).into_owned();
        let c = lambda.rows(2 * d, d).into_owned();
        let nat = nagvac_natural_gradient(&b, &c, g)?;
        *total += nat.negative_curvature_coords;
        Ok(nat.value)
    };

    // Initialization pass seeds the momentum with the first mapped
    // gradient.
    let g0 = batch_gradient(&lambda, "initialization", rng)?;
    let g0 = natural(&lambda, &g0, &mut negative_total)?;
    let mut momentum = clip_gradient(&g0, cfg.gradient_max);

    let mut trace = LbTrace::default();
    let mut best_loss = f64::INFINITY;
    let mut lambda_best = lambda.clone();
    let mut patience = 0usize;
    let mut termination = Termination::MaxIter;
    let mut iterations = 0usize;

    for t in 0..cfg.max_iter {
        iterations = t + 1;
        let label = format!("iteration {t}");
        let g = batch_gradient(&lambda, &label, rng)?;
        let g = natural(&lambda, &g, &mut negative_total)?;
        let g = clip_gradient(&g, cfg.gradient_max);
        momentum_update(&mut momentum, &g, cfg.momentum_weight);
        let alpha_t = learning_rate(t, cfg.learning_rate, cfg.step_adaptive);
        lambda += &momentum * alpha_t;
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(VbError::NonFinite(format!(
                "{label}: lambda became non-finite: {:?}",
                lambda.as_slice()
            )));
        }

        let loss = validation_loss(&lambda);
        if !loss.is_finite() {
            return Err(VbError::NonFinite(format!(
                "{label}: validation loss is {loss}"
            )));
        }
        let prev_min = best_loss;
        if loss < best_loss {
            best_loss = loss;
            lambda_best = lambda.clone();
            trace.best_index = t;
        }
        trace.raw.push(loss);
        if loss <= prev_min {
            patience = 0;
        } else {
            patience += 1;
            if patience >= cfg.max_patience {
                termination = Termination::Patience;
                break;
            }
        }
    }

    Ok(NagvacFit {
        fit: FitResult { lambda_best, trace, iterations, termination },
        negative_curvature_coords: negative_total,
    })
}
