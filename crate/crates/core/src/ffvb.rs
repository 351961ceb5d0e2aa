//! Stochastic fixed-form variational inference engine.
//!
//! The engine maximizes the evidence lower bound LB(lambda) =
//! E_q[h(theta) - log q_lambda(theta)] over the parameters of a
//! variational family, where h(theta) is the model's joint log density
//! (likelihood times prior, unnormalized posterior). Gradients are
//! estimated either from the score function
//! grad LB = E_q[grad_lambda log q_lambda(theta) * h_lambda(theta)],
//! optionally variance-reduced with per-coordinate control variates,
//! or by differentiating through a reparameterization theta = g(lambda, eps).
//! Steps use either a moment-normalized adaptive rule or a
//! natural-gradient-with-momentum rule; the learning rate is held at
//! its base value for the first `step_adaptive` iterations and decays
//! harmonically afterwards.
//!
//! Stopping is governed by a patience rule on a moving average of the
//! per-iteration lower bound estimates: the returned iterate is the one
//! whose smoothing window attained the largest averaged lower bound,
//! not the final iterate.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Result, VbError};
use crate::models::ModelSpec;
use crate::McEstimate;

/// Lower clamp applied by families to coordinates that must stay positive
/// (variances, shape and rate parameters).
pub const POSITIVITY_FLOOR: f64 = 1e-5;

/// Guard added inside the square root of the adaptive step denominator.
pub const EPS_DIV: f64 = 1e-8;

/// How the optimizer's starting point is chosen.
///
/// `Random` draws each unconstrained coordinate from Normal(0, 0.01^2)
/// and starts constrained coordinates at 1 (families that fix their own
/// scale, such as the Cholesky family, document their deviation).
#[derive(Debug, Clone)]
pub enum InitMethod {
    Random,
    Custom(DVector<f64>),
}

/// Gradient estimation route and step rule for [`run_ffvb`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Score-function gradient with control variates, adaptive step.
    CvAdaptive,
    /// Score-function gradient with control variates, natural gradient
    /// with momentum.
    CvNatural,
    /// Reparameterized gradient, adaptive step.
    ReparamAdaptive,
    /// Reparameterized gradient mapped through the inverse Fisher matrix,
    /// momentum step.
    ReparamNatural,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The smoothed objective failed to improve for `max_patience`
    /// consecutive evaluations.
    Patience,
    /// The iteration cap was reached first.
    MaxIter,
}

/// Tuning parameters for the stochastic optimizers.
///
/// Defaults: S = 50 Monte Carlo samples, learning rate 0.002, patience 20,
/// both moment weights 0.9, momentum weight 0.9, window 50, decay onset at
/// iteration 500, cap 1000 iterations, gradient clipping at norm 10.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    /// Monte Carlo samples per gradient estimate (S).
    pub num_samples: usize,
    /// Base step size (epsilon_0).
    pub learning_rate: f64,
    /// Consecutive non-improving smoothed evaluations tolerated (P).
    pub max_patience: usize,
    /// Exponential weight on the running gradient mean (beta_1).
    pub grad_weight1: f64,
    /// Exponential weight on the running squared-gradient mean (beta_2).
    pub grad_weight2: f64,
    /// Momentum weight for natural-gradient steps (alpha_m).
    pub momentum_weight: f64,
    /// Moving-average window for the lower bound trace (t_W).
    pub window_size: usize,
    /// Iteration after which the learning rate decays as eps_0 * tau / t.
    pub step_adaptive: usize,
    /// Hard iteration cap.
    pub max_iter: usize,
    /// Gradient estimates with a larger L2 norm are rescaled to this norm.
    pub gradient_max: f64,
    /// Seed callers use to build the generator driving the run.
    pub seed: u64,
    pub init_method: InitMethod,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            num_samples: 50,
            learning_rate: 0.002,
            max_patience: 20,
            grad_weight1: 0.9,
            grad_weight2: 0.9,
            momentum_weight: 0.9,
            window_size: 50,
            step_adaptive: 500,
            max_iter: 1000,
            gradient_max: 10.0,
            seed: 0,
            init_method: InitMethod::Random,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(VbError::InvalidParameter("num_samples must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(VbError::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, w) in [
            ("grad_weight1", self.grad_weight1),
            ("grad_weight2", self.grad_weight2),
            ("momentum_weight", self.momentum_weight),
        ] {
            if !(0.0..1.0).contains(&w) {
                return Err(VbError::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {w}"
                )));
            }
        }
        if self.window_size == 0 {
            return Err(VbError::InvalidParameter("window_size must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(VbError::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.gradient_max > 0.0) {
            return Err(VbError::InvalidParameter(format!(
                "gradient_max must be positive, got {}",
                self.gradient_max
            )));
        }
        Ok(())
    }
}

/// A variational family usable by the engine. The base operations
/// (sampling, log density, initialization) are required; the
/// score-function surface and the reparameterization surface each default
/// to an `Unsupported` error so a family only implements the routes it
/// actually supports, and [`run_ffvb`] reports a clear error when a
/// strategy asks for a missing route.
pub trait VariationalFamily {
    fn theta_dim(&self) -> usize;
    fn lambda_dim(&self) -> usize;

    /// Starting lambda. `Custom` vectors are validated for length and
    /// clamped into the feasible region.
    fn init_lambda(&self, method: &InitMethod, rng: &mut dyn RngCore) -> Result<DVector<f64>>;

    /// Clamps constrained coordinates back into the feasible region
    /// after a step. Families without constraints leave this empty.
    fn project(&self, _lambda: &mut DVector<f64>) {}

    fn sample_theta(&self, lambda: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64>;

    fn log_q(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> f64;

    /// Gradient of log q_lambda(theta) with respect to lambda.
    fn score(&self, _lambda: &DVector<f64>, _theta: &DVector<f64>) -> Result<DVector<f64>> {
        Err(VbError::Unsupported(
            "this family does not provide a lambda-score".into(),
        ))
    }

    /// Fisher information matrix of the family at lambda.
    fn fisher(&self, _lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        Err(VbError::Unsupported(
            "this family does not provide a Fisher matrix".into(),
        ))
    }

    /// Draws the base variable eps of the reparameterization map.
    fn sample_eps(&self, _rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Err(VbError::Unsupported(
            "this family does not provide a reparameterization".into(),
        ))
    }

    /// theta = g(lambda, eps).
    fn transform(&self, _lambda: &DVector<f64>, _eps: &DVector<f64>) -> Result<DVector<f64>> {
        Err(VbError::Unsupported(
            "this family does not provide a reparameterization".into(),
        ))
    }

    /// Gradient of log q_lambda(theta) with respect to theta.
    fn grad_theta_log_q(
        &self,
        _lambda: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Err(VbError::Unsupported(
            "this family does not provide a theta-gradient of log q".into(),
        ))
    }

    /// Jacobian-transpose product (d g / d lambda)^T v at (lambda, eps).
    fn pullback(
        &self,
        _lambda: &DVector<f64>,
        _eps: &DVector<f64>,
        _v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Err(VbError::Unsupported(
            "this family does not provide a reparameterization".into(),
        ))
    }
}

/// Running first and second moment estimates for the adaptive step rule.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    pub gbar: DVector<f64>,
    pub vbar: DVector<f64>,
}

impl AdaptiveState {
    /// Seeds both moments from the first gradient estimate.
    pub fn from_first_gradient(g0: &DVector<f64>) -> Self {
        Self {
            gbar: g0.clone(),
            vbar: g0.component_mul(g0),
        }
    }
}

/// Per-iteration lower bound bookkeeping.
///
/// `raw[t]` is the Monte Carlo lower bound estimate at the iterate the
/// iteration-t gradient batch was drawn from. `smoothed[k]` is the mean of
/// `raw[k..k + window]`, pushed once `k + window` values exist, so the
/// window covering iterations k..k+window-1 is recorded at index k.
/// `best_index` points into `smoothed` at its maximum for lower-bound
/// driven runs; validation-loss driven runs leave `smoothed` empty and
/// point `best_index` into `raw` at its minimum.
#[derive(Debug, Clone, Default)]
pub struct LbTrace {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub best_index: usize,
}

/// Outcome of a stochastic fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// The iterate whose smoothing window attained the best objective
    /// (not the final iterate).
    pub lambda_best: DVector<f64>,
    pub trace: LbTrace,
    /// Number of optimizer iterations executed.
    pub iterations: usize,
    pub termination: Termination,
}

/// Monte Carlo lower bound estimate: mean over S fresh draws of
/// h_lambda(theta) = h(theta) - log q_lambda(theta).
pub fn estimate_lb(
    model: &ModelSpec,
    family: &dyn VariationalFamily,
    lambda: &DVector<f64>,
    num_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<McEstimate> {
    if num_samples == 0 {
        return Err(VbError::InvalidParameter("num_samples must be at least 1".into()));
    }
    let mut vals = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let theta = family.sample_theta(lambda, rng);
        let h = model.h(&theta) - family.log_q(lambda, &theta);
        if !h.is_finite() {
            return Err(VbError::NonFinite(format!(
                "h_lambda is {h} at theta = {:?}",
                theta.as_slice()
            )));
        }
        vals.push(h);
    }
    Ok(McEstimate::from_values(&vals))
}

/// Score-function gradient estimate over a supplied batch:
/// mean over samples of score(theta_s) .* (h_lambda(theta_s) - c),
/// where the subtraction is per coordinate. Pass a zero vector for the
/// naive (no control variate) estimator. The control variates must have
/// been built from samples independent of `thetas` for the estimate to
/// stay unbiased.
pub fn score_gradient(
    model: &ModelSpec,
    family: &dyn VariationalFamily,
    lambda: &DVector<f64>,
    thetas: &[DVector<f64>],
    c: &DVector<f64>,
) -> Result<DVector<f64>> {
    if thetas.is_empty() {
        return Err(VbError::Input("score_gradient needs at least one sample".into()));
    }
    if c.len() != family.lambda_dim() {
        return Err(VbError::Input(format!(
            "control variate length {} does not match lambda dimension {}",
            c.len(),
            family.lambda_dim()
        )));
    }
    let mut acc = DVector::zeros(family.lambda_dim());
    for theta in thetas {
        let h = model.h(theta) - family.log_q(lambda, theta);
        if !h.is_finite() {
            return Err(VbError::NonFinite(format!(
                "h_lambda is {h} at theta = {:?}",
                theta.as_slice()
            )));
        }
        let score = family.score(lambda, theta)?;
        acc += score.zip_map(c, |s, ci| s * (h - ci));
    }
    Ok(acc / thetas.len() as f64)
}

/// Per-coordinate control variates estimated from a batch.
#[derive(Debug, Clone)]
pub struct ControlVariates {
    pub c: DVector<f64>,
    /// Coordinates whose score had zero sample variance; their control
    /// variate is set to zero.
    pub degenerate: Vec<usize>,
}

impl ControlVariates {
    pub fn zeros(dim: usize) -> Self {
        Self { c: DVector::zeros(dim), degenerate: Vec::new() }
    }
}

/// Estimates the variance-minimizing control variates
/// c_i = Cov(score_i * h_lambda, score_i) / Var(score_i)
/// from a sample batch, using two-pass sample covariances.
pub fn update_control_variates(
    model: &ModelSpec,
    family: &dyn VariationalFamily,
    lambda: &DVector<f64>,
    thetas: &[DVector<f64>],
) -> Result<ControlVariates> {
    if thetas.len() < 2 {
        return Err(VbError::Input(
            "control variate estimation needs at least two samples".into(),
        ));
    }
    let dim = family.lambda_dim();
    let n = thetas.len();
    let mut scores = Vec::with_capacity(n);
    let mut hvals = Vec::with_capacity(n);
    for theta in thetas {
        let h = model.h(theta) - family.log_q(lambda, theta);
        if !h.is_finite() {
            return Err(VbError::NonFinite(format!(
                "h_lambda is {h} at theta = {:?}",
                theta.as_slice()
            )));
        }
        scores.push(family.score(lambda, theta)?);
        hvals.push(h);
    }
    let mut c = DVector::zeros(dim);
    let mut degenerate = Vec::new();
    for i in 0..dim {
        let mean_s = scores.iter().map(|s| s[i]).sum::<f64>() / n as f64;
        let mean_p = scores.iter().zip(&hvals).map(|(s, h)| s[i] * h).sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (s, h) in scores.iter().zip(&hvals) {
            let ds = s[i] - mean_s;
            cov += (s[i] * h - mean_p) * ds;
            var += ds * ds;
        }
        if var == 0.0 {
            degenerate.push(i);
        } else {
            c[i] = cov / var;
        }
    }
    Ok(ControlVariates { c, degenerate })
}

/// Step size at iteration t: the base rate until `step_adaptive`, then
/// harmonic decay eps_0 * step_adaptive / t.
pub fn learning_rate(t: usize, eps0: f64, step_adaptive: usize) -> f64 {
    if t == 0 {
        eps0
    } else {
        eps0.min(eps0 * step_adaptive as f64 / t as f64)
    }
}

/// One adaptive update: folds the new gradient into the running moments
/// and returns the step alpha_t * gbar / sqrt(vbar + EPS_DIV).
pub fn adaptive_step(
    state: &mut AdaptiveState,
    grad: &DVector<f64>,
    alpha_t: f64,
    beta1: f64,
    beta2: f64,
) -> DVector<f64> {
    state.gbar = &state.gbar * beta1 + grad * (1.0 - beta1);
    state.vbar = &state.vbar * beta2 + grad.component_mul(grad) * (1.0 - beta2);
    state
        .gbar
        .zip_map(&state.vbar, |g, v| alpha_t * g / (v + EPS_DIV).sqrt())
}

/// Solves fisher * x = grad for the natural gradient via a Cholesky
/// factorization; errors when the matrix is not symmetric positive
/// definite.
pub fn natural_gradient(fisher: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if fisher.nrows() != fisher.ncols() || fisher.nrows() != grad.len() {
        return Err(VbError::Input(format!(
            "Fisher matrix is {}x{} but gradient has length {}",
            fisher.nrows(),
            fisher.ncols(),
            grad.len()
        )));
    }
    let chol = nalgebra::Cholesky::new(fisher.clone())
        .ok_or_else(|| VbError::LinAlg("Fisher matrix is not positive definite".into()))?;
    Ok(chol.solve(grad))
}

/// Exponential moving average update m <- alpha_m * m + (1 - alpha_m) * g.
pub fn momentum_update(momentum: &mut DVector<f64>, grad: &DVector<f64>, alpha_m: f64) {
    *momentum = &*momentum * alpha_m + grad * (1.0 - alpha_m);
}

/// Rescales the gradient to norm `threshold` when its L2 norm exceeds it.
pub fn clip_gradient(grad: &DVector<f64>, threshold: f64) -> DVector<f64> {
    let norm = grad.norm();
    if norm > threshold {
        grad * (threshold / norm)
    } else {
        grad.clone()
    }
}

/// Patience update driven by the smoothed trace: the counter resets to
/// zero whenever the newest smoothed value ties or beats the running
/// maximum, and the run stops once it reaches `max_patience`. Call only
/// after a new smoothed value has been pushed; with no smoothed values
/// yet the counter is passed through unchanged.
pub fn check_stop(trace: &LbTrace, patience: usize, max_patience: usize) -> (usize, bool) {
    let Some(&latest) = trace.smoothed.last() else {
        return (patience, false);
    };
    let max = trace.smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if latest >= max {
        (0, false)
    } else {
        let p = patience + 1;
        (p, p >= max_patience)
    }
}

enum StepRule {
    Adaptive(AdaptiveState),
    Momentum(DVector<f64>),
}

/// Draws a batch along the score route: per-sample lambda-scores and
/// h_lambda values.
#[allow(clippy::type_complexity)]
fn score_route_batch(
    model: &ModelSpec,
    family: &dyn VariationalFamily,
    lambda: &DVector<f64>,
    s: usize,
    iter_label: &str,
    rng: &mut dyn RngCore,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let mut scores = Vec::with_capacity(s);
    let mut hvals = Vec::with_capacity(s);
    for _ in 0..s {
        let theta = family.sample_theta(lambda, rng);
        let h = model.h(&theta) - family.log_q(lambda, &theta);
        if !h.is_finite() {
            return Err(VbError::NonFinite(format!(
                "{iter_label}: h_lambda is {h} at theta = {:?}",
                theta.as_slice()
            )));
        }
        scores.push(family.score(lambda, &theta)?);
        hvals.push(h);
    }
    Ok((scores, hvals))
}

/// Draws a batch along the reparameterization route: per-sample
/// lambda-gradients (pullbacks of grad_theta h_lambda) and h_lambda values.
#[allow(clippy::type_complexity)]
fn reparam_route_batch(
    model: &ModelSpec,
    family: &dyn VariationalFamily,
    lambda: &DVector<f64>,
    s: usize,
    iter_label: &str,
    rng: &mut dyn RngCore,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let mut grads = Vec::with_capacity(s);
    let mut hvals = Vec::with_capacity(s);
    for _ in 0..s {
        let eps = family.sample_eps(rng)?;
        let theta = family.transform(lambda, &eps)?;
        let h = model.h(&theta) - family.log_q(lambda, &theta);
        if !h.is_finite() {
            return Err(VbError::NonFinite(format!(
                "{iter_label}: h_lambda is {h} at theta = {:?}",
                theta.as_slice()
            )));
        }
        let grad_theta = model.grad_h(&theta)? - family.grad_theta_log_q(lambda, &theta)?;
        grads.push(family.pullback(lambda, &eps, &grad_theta)?);
        hvals.push(h);
    }
    Ok((grads, hvals))
}

fn control_variates_from(
    scores: &[DVector<f64>],
    hvals: &[f64],
    dim: usize,
) -> ControlVariates {
    let n = scores.len();
    let mut c = DVector::zeros(dim);
    let mut degenerate = Vec::new();
    for i in 0..dim {
        let mean_s = scores.iter().map(|s| s[i]).sum::<f64>() / n as f64;
        let mean_p = scores.iter().zip(hvals).map(|(s, h)| s[i] * h).sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (s, h) in scores.iter().zip(hvals) {
            let ds = s[i] - mean_s;
            cov += (s[i] * h - mean_p) * ds;
            var += ds * ds;
        }
        if var == 0.0 {
            degenerate.push(i);
        } else {
            c[i] = cov / var;
        }
    }
    ControlVariates { c, degenerate }
}

fn cv_combine(scores: &[DVector<f64>], hvals: &[f64], c: &DVector<f64>) -> DVector<f64> {
    let mut acc = DVector::zeros(c.len());
    for (s, h) in scores.iter().zip(hvals) {
        acc += s.zip_map(c, |si, ci| si * (h - ci));
    }
    acc / scores.len() as f64
}

fn mean_of(grads: &[DVector<f64>], dim: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(dim);
    for g in grads {
        acc += g;
    }
    acc / grads.len() as f64
}

/// Runs the fixed-form optimizer. The family must provide the operations
/// the chosen strategy needs: the lambda-score (plus a Fisher matrix for
/// `CvNatural`) for the control-variate strategies, or the
/// reparameterization surface and a model gradient for the reparameterized
/// strategies.
pub fn run_ffvb(
    model: &ModelSpec,
    family: &dyn VariationalFamily,
    cfg: &TrainerConfig,
    strategy: Strategy,
    rng: &mut dyn RngCore,
) -> Result<FitResult> {
    cfg.validate()?;
    if model.dim() != family.theta_dim() {
        return Err(VbError::Input(format!(
            "model dimension {} does not match family theta dimension {}",
            model.dim(),
            family.theta_dim()
        )));
    }
    let dim = family.lambda_dim();
    let s = cfg.num_samples;
    let score_route = matches!(strategy, Strategy::CvAdaptive | Strategy::CvNatural);
    let natural = matches!(strategy, Strategy::CvNatural | Strategy::ReparamNatural);

    let mut lambda = family.init_lambda(&cfg.init_method, rng)?;

    // Initialization pass: a first batch at lambda(0) seeds the step-rule
    // state and, on the score route, the control variates used at t = 0.
    let mut cv = ControlVariates::zeros(dim);
    let g0 = if score_route {
        let (scores, hvals) = score_route_batch(model, family, &lambda, s, "initialization", rng)?;
        let g = cv_combine(&scores, &hvals, &cv.c);
        cv = control_variates_from(&scores, &hvals, dim);
        g
    } else {
        let (grads, _hvals) = reparam_route_batch(model, family, &lambda, s, "initialization", rng)?;
        mean_of(&grads, dim)
    };
    let g0 = if natural {
        natural_gradient(&family.fisher(&lambda)?, &g0)?
    } else {
        g0
    };
    let g0 = clip_gradient(&g0, cfg.gradient_max);
    let mut step_rule = if natural {
        StepRule::Momentum(g0)
    } else {
        StepRule::Adaptive(AdaptiveState::from_first_gradient(&g0))
    };

    let mut trace = LbTrace::default();
    let mut best_smoothed = f64::NEG_INFINITY;
    let mut lambda_best = lambda.clone();
    let mut patience = 0usize;
    let mut termination = Termination::MaxIter;
    let mut iterations = 0usize;

    for t in 0..cfg.max_iter {
        iterations = t + 1;
        let label = format!("iteration {t}");
        let (mut g_t, hvals) = if score_route {
            let (scores, hvals) = score_route_batch(model, family, &lambda, s, &label, rng)?;
            let g = cv_combine(&scores, &hvals, &cv.c);
            // One-iteration lag: the variates just used came from the
            // previous batch; refresh them from this one.
            cv = control_variates_from(&scores, &hvals, dim);
            (g, hvals)
        } else {
            let (grads, hvals) = reparam_route_batch(model, family, &lambda, s, &label, rng)?;
            (mean_of(&grads, dim), hvals)
        };
        if natural {
            g_t = natural_gradient(&family.fisher(&lambda)?, &g_t)?;
        }
        g_t = clip_gradient(&g_t, cfg.gradient_max);

        let alpha_t = learning_rate(t, cfg.learning_rate, cfg.step_adaptive);
        let delta = match &mut step_rule {
            StepRule::Adaptive(state) => {
                adaptive_step(state, &g_t, alpha_t, cfg.grad_weight1, cfg.grad_weight2)
            }
            StepRule::Momentum(m) => {
                momentum_update(m, &g_t, cfg.momentum_weight);
                &*m * alpha_t
            }
        };

        let lb_t = hvals.iter().sum::<f64>() / s as f64;
        trace.raw.push(lb_t);

        let lambda_next = {
            let mut next = &lambda + delta;
            family.project(&mut next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(VbError::NonFinite(format!(
                    "{label}: lambda became non-finite: {:?}",
                    next.as_slice()
                )));
            }
            next
        };

        if trace.raw.len() >= cfg.window_size {
            let k = trace.raw.len() - cfg.window_size;
            let window_mean =
                trace.raw[k..].iter().sum::<f64>() / cfg.window_size as f64;
            trace.smoothed.push(window_mean);
            if window_mean > best_smoothed {
                best_smoothed = window_mean;
                // The window recorded at index k ends at the current
                // iterate, which the gradient batch was drawn from.
                lambda_best = lambda.clone();
                trace.best_index = k;
            }
            let (p, stop) = check_stop(&trace, patience, cfg.max_patience);
            patience = p;
            if stop {
                termination = Termination::Patience;
                lambda = lambda_next;
                break;
            }
        }
        lambda = lambda_next;
    }

    if trace.smoothed.is_empty() {
        // The run was shorter than one smoothing window; fall back to the
        // final iterate.
        lambda_best = lambda;
        trace.best_index = 0;
    }

    Ok(FitResult { lambda_best, trace, iterations, termination })
}
