use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use varbayes::dist::DistSpec;
use varbayes::ffvb::{run_ffvb, FitResult, InitMethod, Strategy, TrainerConfig};
use varbayes::gvb::{run_cholesky_gvb, run_nagvac, GaussianCholeskyParams, GaussianFactorParams};
use varbayes::mfvb::{
    fit_lasso_mfvb, fit_normal_mfvb_path, MfvbConfig, NormalModelHyper, NormalVBPosterior,
};
use varbayes::models::{
    logistic_log_likelihood, logistic_model, HybridNormal, MeanFieldNormalIG,
};
use varbayes::validate::gibbs_normal;

use crate::args::{
    manifest_argv, parse_float_list, resolve, resolve_opt, resolve_seed, resolve_threads, Command,
    CommonArgs, ConfigFile, FfvbNormalArgs, FfvbStrategy, GibbsNormalArgs, GvbLogisticArgs,
    MfvbLassoArgs, MfvbNormalArgs, NagvacLogisticArgs, NormalPriorArgs, TrainerArgs,
};
use crate::data::{
    center_in_place, load_regression, load_response, require_binary_response, Regression,
    RegressionOptions, SyntheticKind,
};
use crate::errors::CliError;
use crate::outputs::{
    lasso_trace_csv, lb_trace_csv, loss_trace_csv, mfvb_normal_trace_csv, results_json,
    termination_label, unix_now, write_all, DensityBlock, OutDir, ResultsDoc,
};

const GIBBS_TRACE_ROW_CAP: usize = 10_000;
/// Mean draws behind the mixture density of the variance under the
/// hybrid strategy.
const HYBRID_MIXTURE_DRAWS: usize = 2_000;

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::MfvbNormal(args) => run_mfvb_normal(args),
        Command::MfvbLasso(args) => run_mfvb_lasso(args),
        Command::FfvbNormal(args) => run_ffvb_normal(args),
        Command::GvbLogistic(args) => run_gvb_logistic(args),
        Command::NagvacLogistic(args) => run_nagvac_logistic(args),
        Command::GibbsNormal(args) => run_gibbs_normal(args),
    }
}

/// Resolved run plumbing shared by every command.
struct RunContext {
    out: OutDir,
    cfg: ConfigFile,
    seed: u64,
    threads: usize,
    argv: Vec<String>,
    started: u64,
}

fn context(common: &CommonArgs) -> Result<RunContext, CliError> {
    let cfg = ConfigFile::load(common.config.as_ref())?;
    let seed = resolve_seed(common, &cfg)?;
    let threads = resolve_threads(common, &cfg)?;
    let out = OutDir::create(&common.out_dir)?;
    Ok(RunContext { out, cfg, seed, threads, argv: manifest_argv(seed), started: unix_now() })
}

#[derive(Serialize, Clone)]
struct NormalPriorEcho {
    mu0: f64,
    sigma0: f64,
    alpha0: f64,
    beta0: f64,
}

fn resolve_normal_prior(
    args: &NormalPriorArgs,
    cfg: &ConfigFile,
) -> Result<(NormalModelHyper, NormalPriorEcho), CliError> {
    let mu0 = resolve(&args.mu0, cfg, "mu0", 0.0)?;
    let sigma0 = resolve(&args.sigma0, cfg, "sigma0", 10.0)?;
    let alpha0 = resolve(&args.alpha0, cfg, "alpha0", 1.0)?;
    let beta0 = resolve(&args.beta0, cfg, "beta0", 1.0)?;
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(CliError::Usage(format!("--sigma0 must be positive, got {sigma0}")));
    }
    let hyper = NormalModelHyper { mu0, sigma0_sq: sigma0 * sigma0, alpha0, beta0 };
    hyper.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((hyper, NormalPriorEcho { mu0, sigma0, alpha0, beta0 }))
}

#[derive(Serialize, Clone)]
struct TrainerEcho {
    learning_rate: f64,
    num_samples: usize,
    max_patience: usize,
    grad_weight1: f64,
    grad_weight2: f64,
    momentum_weight: f64,
    window_size: usize,
    step_adaptive: usize,
    max_iter: usize,
    gradient_max: f64,
    init_method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_values: Option<Vec<f64>>,
}

/// Builds the trainer configuration from flags, config file and the
/// built-in defaults. The decay onset defaults to half the resolved
/// iteration cap, and a custom start vector must match the variational
/// parameter dimension of the family in use.
fn resolve_trainer(
    args: &TrainerArgs,
    cfg: &ConfigFile,
    seed: u64,
    lambda_dim: usize,
) -> Result<(TrainerConfig, TrainerEcho), CliError> {
    let d = TrainerConfig::default();
    let max_iter = resolve(&args.max_iter, cfg, "max_iter", d.max_iter)?;
    let step_adaptive = resolve(&args.step_adaptive, cfg, "step_adaptive", max_iter / 2)?;
    let init_method_raw =
        resolve(&args.init_method, cfg, "init_method", "random".to_string())?.to_lowercase();
    let init_values_raw = resolve_opt(&args.init_values, cfg, "init_values")?;
    let (init_method, init_values) = match init_method_raw.as_str() {
        "random" => {
            if init_values_raw.is_some() {
                return Err(CliError::Usage(
                    "--init-values needs --init-method custom".into(),
                ));
            }
            (InitMethod::Random, None)
        }
        "custom" => {
            let Some(raw) = init_values_raw else {
                return Err(CliError::Usage(
                    "--init-method custom needs --init-values".into(),
                ));
            };
            let values = parse_float_list(&raw, "--init-values")?;
            if values.len() != lambda_dim {
                return Err(CliError::Usage(format!(
                    "--init-values has {} entries but this fit needs {lambda_dim}",
                    values.len()
                )));
            }
            (InitMethod::Custom(DVector::from_vec(values.clone())), Some(values))
        }
        other => {
            return Err(CliError::Usage(format!(
                "--init-method must be `random` or `custom`, got `{other}`"
            )))
        }
    };
    let config = TrainerConfig {
        num_samples: resolve(&args.num_samples, cfg, "num_samples", d.num_samples)?,
        learning_rate: resolve(&args.learning_rate, cfg, "learning_rate", d.learning_rate)?,
        max_patience: resolve(&args.max_patience, cfg, "max_patience", d.max_patience)?,
        grad_weight1: resolve(&args.grad_weight1, cfg, "grad_weight1", d.grad_weight1)?,
        grad_weight2: resolve(&args.grad_weight2, cfg, "grad_weight2", d.grad_weight2)?,
        momentum_weight: resolve(&args.momentum_weight, cfg, "momentum_weight", d.momentum_weight)?,
        window_size: resolve(&args.window_size, cfg, "window_size", d.window_size)?,
        step_adaptive,
        max_iter,
        gradient_max: resolve(&args.gradient_max, cfg, "gradient_max", d.gradient_max)?,
        seed,
        init_method,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let echo = TrainerEcho {
        learning_rate: config.learning_rate,
        num_samples: config.num_samples,
        max_patience: config.max_patience,
        grad_weight1: config.grad_weight1,
        grad_weight2: config.grad_weight2,
        momentum_weight: config.momentum_weight,
        window_size: config.window_size,
        step_adaptive: config.step_adaptive,
        max_iter: config.max_iter,
        gradient_max: config.gradient_max,
        init_method: init_method_raw,
        init_values,
    };
    Ok((config, echo))
}

/// Smoothed objective at the selected iterate, when the run lasted long
/// enough for the rolling window to produce one.
fn lb_smooth_best(fit: &FitResult) -> Option<f64> {
    fit.trace.smoothed.get(fit.trace.best_index).copied()
}

fn finish_line(command: &str, out_dir: &std::path::Path) {
    println!(
        "{command}: wrote results.json, trace.csv, densities.csv, manifest.json to {}",
        out_dir.display()
    );
}

// ---------------------------------------------------------------------
// mfvb-normal

#[derive(Serialize, Clone)]
struct MfvbNormalEcho {
    #[serde(flatten)]
    prior: NormalPriorEcho,
    tol: f64,
    max_iter: usize,
    threads: usize,
}

#[derive(Serialize)]
struct MfvbNormalFit {
    mu_q: f64,
    sigma_sq_q: f64,
    alpha_q: f64,
    beta_q: f64,
    sigma_sq_mean: f64,
    iterations: usize,
    converged: bool,
}

fn require_converged(p_converged: bool, tol: f64, iterations: usize) -> Result<(), CliError> {
    if !p_converged {
        return Err(CliError::Numeric(format!(
            "coordinate ascent still moved more than tol = {tol} after {iterations} iterations"
        )));
    }
    Ok(())
}

fn run_mfvb_normal(args: MfvbNormalArgs) -> Result<(), CliError> {
    let ctx = context(&args.common)?;
    let (y, dataset) = load_response(&args.data)?;
    let (hyper, prior_echo) = resolve_normal_prior(&args.prior, &ctx.cfg)?;
    let dflt = MfvbConfig::default();
    let tol = resolve(&args.tol, &ctx.cfg, "tol", dflt.tol)?;
    let max_iter = resolve(&args.max_iter, &ctx.cfg, "max_iter", dflt.max_iter)?;
    let cfg = MfvbConfig { tol, max_iter };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let (posterior, path) = fit_normal_mfvb_path(&y, &hyper, &cfg)?;
    require_converged(posterior.converged, tol, posterior.iterations)?;
    let fit = normal_fit_payload(&posterior)?;

    let echo = MfvbNormalEcho { prior: prior_echo, tol, max_iter, threads: ctx.threads };
    let doc = ResultsDoc {
        schema: 1,
        command: "mfvb-normal",
        seed: ctx.seed,
        config: echo.clone(),
        fit,
    };
    let blocks = vec![
        DensityBlock::normal("mu", posterior.mu_q, posterior.sigma_sq_q)?,
        DensityBlock::inverse_gamma("sigma_sq", posterior.alpha_q, posterior.beta_q)?,
    ];
    write_all(
        &ctx.out,
        "mfvb-normal",
        ctx.argv,
        dataset,
        &echo,
        ctx.seed,
        ctx.started,
        &results_json(&doc)?,
        &mfvb_normal_trace_csv(&path),
        &blocks,
    )?;
    finish_line("mfvb-normal", &args.common.out_dir);
    Ok(())
}

fn normal_fit_payload(posterior: &NormalVBPosterior) -> Result<MfvbNormalFit, CliError> {
    Ok(MfvbNormalFit {
        mu_q: posterior.mu_q,
        sigma_sq_q: posterior.sigma_sq_q,
        alpha_q: posterior.alpha_q,
        beta_q: posterior.beta_q,
        sigma_sq_mean: posterior.sigma_sq_mean()?,
        iterations: posterior.iterations,
        converged: posterior.converged,
    })
}

// ---------------------------------------------------------------------
// mfvb-lasso

#[derive(Serialize, Clone)]
struct MfvbLassoEcho {
    r: f64,
    delta: f64,
    tol: f64,
    max_iter: usize,
    threads: usize,
}

#[derive(Serialize)]
struct MfvbLassoFit {
    covariates: Vec<String>,
    beta_mean: Vec<f64>,
    beta_sd: Vec<f64>,
    sigma_sq_mean: f64,
    lambda_sq_mean: f64,
    iterations: usize,
    converged: bool,
}

fn run_mfvb_lasso(args: MfvbLassoArgs) -> Result<(), CliError> {
    let ctx = context(&args.common)?;
    let noise_sd = resolve(&args.noise_sd, &ctx.cfg, "noise_sd", 0.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let opts = RegressionOptions {
        data: &args.data,
        synthetic_n: resolve_opt(&args.synthetic_n, &ctx.cfg, "synthetic_n")?,
        synthetic_coeffs: (
            &resolve_opt(&args.synthetic_beta, &ctx.cfg, "synthetic_beta")?,
            "--synthetic-beta",
        ),
        intercept: false,
        standardize: false,
    };
    let Regression { mut x, mut y, names, spec } =
        load_regression(&opts, SyntheticKind::Lasso { noise_sd }, &mut rng)?;
    center_in_place(&mut x, &mut y);

    let r = resolve(&args.r, &ctx.cfg, "r", 0.0)?;
    let delta = resolve(&args.delta, &ctx.cfg, "delta", 0.0)?;
    let dflt = MfvbConfig::default();
    let tol = resolve(&args.tol, &ctx.cfg, "tol", dflt.tol)?;
    let max_iter = resolve(&args.max_iter, &ctx.cfg, "max_iter", dflt.max_iter)?;
    let cfg = MfvbConfig { tol, max_iter };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let posterior = fit_lasso_mfvb(&x, &y, r, delta, &cfg)?;
    require_converged(posterior.converged, tol, posterior.iterations)?;

    let p = posterior.mu_beta.len();
    let beta_sd: Vec<f64> = (0..p).map(|j| posterior.sigma_beta[(j, j)].sqrt()).collect();
    let fit = MfvbLassoFit {
        covariates: names.clone(),
        beta_mean: posterior.mu_beta.iter().copied().collect(),
        beta_sd: beta_sd.clone(),
        sigma_sq_mean: posterior.sigma_sq_mean(),
        lambda_sq_mean: posterior.lambda_sq_mean(),
        iterations: posterior.iterations,
        converged: posterior.converged,
    };
    let echo = MfvbLassoEcho { r, delta, tol, max_iter, threads: ctx.threads };
    let doc = ResultsDoc {
        schema: 1,
        command: "mfvb-lasso",
        seed: ctx.seed,
        config: echo.clone(),
        fit,
    };
    let mut blocks = Vec::with_capacity(p + 1);
    for j in 0..p {
        blocks.push(DensityBlock::normal(
            &format!("beta_{}", names[j]),
            posterior.mu_beta[j],
            posterior.sigma_beta[(j, j)],
        )?);
    }
    blocks.push(DensityBlock::inverse_gamma(
        "sigma_sq",
        posterior.alpha_sigma_sq,
        posterior.beta_sigma_sq,
    )?);
    write_all(
        &ctx.out,
        "mfvb-lasso",
        ctx.argv,
        spec,
        &echo,
        ctx.seed,
        ctx.started,
        &results_json(&doc)?,
        &lasso_trace_csv(&posterior.delta_trace),
        &blocks,
    )?;
    finish_line("mfvb-lasso", &args.common.out_dir);
    Ok(())
}

// ---------------------------------------------------------------------
// ffvb-normal

#[derive(Serialize, Clone)]
struct FfvbNormalEcho {
    strategy: &'static str,
    #[serde(flatten)]
    prior: NormalPriorEcho,
    #[serde(flatten)]
    trainer: TrainerEcho,
    threads: usize,
}

#[derive(Serialize)]
struct FfvbNormalFit {
    lambda_best: Vec<f64>,
    mu_mean: f64,
    mu_var: f64,
    /// Posterior mean of the variance; null when the fitted shape is
    /// at most 1, where that mean does not exist (an under-trained run
    /// can stop there — raise --max-iter).
    sigma_sq_mean: Option<f64>,
    iterations: usize,
    termination: &'static str,
    best_index: usize,
    lb_smooth_best: Option<f64>,
}

fn resolve_strategy(
    flag: &Option<FfvbStrategy>,
    cfg: &ConfigFile,
) -> Result<FfvbStrategy, CliError> {
    if let Some(s) = flag {
        return Ok(*s);
    }
    match cfg.get::<String>("strategy")? {
        None => Ok(FfvbStrategy::CvAdaptive),
        Some(raw) => match raw.as_str() {
            "cv-adaptive" => Ok(FfvbStrategy::CvAdaptive),
            "cv-natural" => Ok(FfvbStrategy::CvNatural),
            "hybrid" => Ok(FfvbStrategy::Hybrid),
            other => Err(CliError::Usage(format!(
                "strategy must be cv-adaptive, cv-natural or hybrid, got `{other}`"
            ))),
        },
    }
}

fn run_ffvb_normal(args: FfvbNormalArgs) -> Result<(), CliError> {
    let ctx = context(&args.common)?;
    let (y, dataset) = load_response(&args.data)?;
    let (hyper, prior_echo) = resolve_normal_prior(&args.prior, &ctx.cfg)?;
    let strategy = resolve_strategy(&args.strategy, &ctx.cfg)?;
    let model = varbayes::models::normal_ig_model(&y, &hyper)?;

    let lambda_dim = match strategy {
        FfvbStrategy::Hybrid => 2,
        _ => 4,
    };
    let (tcfg, trainer_echo) = resolve_trainer(&args.trainer, &ctx.cfg, ctx.seed, lambda_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);

    let (fit, sigma_sq_mean, blocks) = match strategy {
        FfvbStrategy::CvAdaptive | FfvbStrategy::CvNatural => {
            let family = MeanFieldNormalIG;
            let engine_strategy = if strategy == FfvbStrategy::CvAdaptive {
                Strategy::CvAdaptive
            } else {
                Strategy::CvNatural
            };
            let fit = run_ffvb(&model, &family, &tcfg, engine_strategy, &mut rng)?;
            let l = &fit.lambda_best;
            let sigma_sq_mean = (l[2] > 1.0).then(|| l[3] / (l[2] - 1.0));
            let blocks = vec![
                DensityBlock::normal("mu", l[0], l[1])?,
                DensityBlock::inverse_gamma("sigma_sq", l[2], l[3])?,
            ];
            (fit, sigma_sq_mean, blocks)
        }
        FfvbStrategy::Hybrid => {
            let family = HybridNormal::new(&y, &hyper)?;
            let fit = run_ffvb(&model, &family, &tcfg, Strategy::CvNatural, &mut rng)?;
            let sigma_sq_mean = family.sigma_sq_mean(&fit.lambda_best).ok();
            let l = &fit.lambda_best;
            let mut blocks = vec![DensityBlock::normal("mu", l[0], l[1])?];
            blocks.push(hybrid_sigma_sq_density(&family, l[0], l[1], &mut rng)?);
            (fit, sigma_sq_mean, blocks)
        }
    };

    let l = &fit.lambda_best;
    let payload = FfvbNormalFit {
        lambda_best: l.iter().copied().collect(),
        mu_mean: l[0],
        mu_var: l[1],
        sigma_sq_mean,
        iterations: fit.iterations,
        termination: termination_label(fit.termination),
        best_index: fit.trace.best_index,
        lb_smooth_best: lb_smooth_best(&fit),
    };
    let echo = FfvbNormalEcho {
        strategy: strategy.as_str(),
        prior: prior_echo,
        trainer: trainer_echo,
        threads: ctx.threads,
    };
    let doc = ResultsDoc {
        schema: 1,
        command: "ffvb-normal",
        seed: ctx.seed,
        config: echo.clone(),
        fit: payload,
    };
    write_all(
        &ctx.out,
        "ffvb-normal",
        ctx.argv,
        dataset,
        &echo,
        ctx.seed,
        ctx.started,
        &results_json(&doc)?,
        &lb_trace_csv(&fit.trace),
        &blocks,
    )?;
    finish_line("ffvb-normal", &args.common.out_dir);
    Ok(())
}

/// Marginal density of the variance under the hybrid family: the fit
/// keeps the variance conditional exact, so the marginal is a mixture
/// of inverse-gamma densities over mean draws.
fn hybrid_sigma_sq_density(
    family: &HybridNormal,
    mu_mean: f64,
    mu_var: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DensityBlock, CliError> {
    let shape = family.conditional_shape();
    if shape <= 2.0 {
        return Err(CliError::Numeric(format!(
            "the variance mixture needs conditional shape above 2, got {shape}"
        )));
    }
    let mu_dist = DistSpec::normal(mu_mean, mu_var)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let mut components = Vec::with_capacity(HYBRID_MIXTURE_DRAWS);
    let mut means = Vec::with_capacity(HYBRID_MIXTURE_DRAWS);
    let mut vars = Vec::with_capacity(HYBRID_MIXTURE_DRAWS);
    for _ in 0..HYBRID_MIXTURE_DRAWS {
        let mu = mu_dist.sample(rng);
        let rate = family.conditional_rate(mu);
        let m = rate / (shape - 1.0);
        means.push(m);
        vars.push(m * m / (shape - 2.0));
        components
            .push(DistSpec::inverse_gamma(shape, rate).map_err(|e| CliError::Numeric(e.to_string()))?);
    }
    let s = HYBRID_MIXTURE_DRAWS as f64;
    let mean = means.iter().sum::<f64>() / s;
    let mean_var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / s;
    let var = vars.iter().sum::<f64>() / s + mean_var;
    let sd = var.sqrt();
    let lo = (mean - 4.0 * sd).max(mean * 1e-6);
    Ok(DensityBlock {
        name: "sigma_sq".into(),
        lo,
        hi: mean + 4.0 * sd,
        pdf: Box::new(move |x| {
            components.iter().map(|c| c.log_pdf(x).exp()).sum::<f64>() / s
        }),
    })
}

// ---------------------------------------------------------------------
// gvb-logistic

#[derive(Serialize, Clone)]
struct LogisticEcho {
    prior_var: f64,
    #[serde(flatten)]
    trainer: TrainerEcho,
    threads: usize,
}

#[derive(Serialize)]
struct GvbLogisticFit {
    covariates: Vec<String>,
    theta_mean: Vec<f64>,
    theta_sd: Vec<f64>,
    iterations: usize,
    termination: &'static str,
    best_index: usize,
    lb_smooth_best: Option<f64>,
}

fn resolve_prior_var(flag: &Option<f64>, cfg: &ConfigFile) -> Result<f64, CliError> {
    let prior_var = resolve(flag, cfg, "prior_var", 50.0)?;
    if !(prior_var > 0.0 && prior_var.is_finite()) {
        return Err(CliError::Usage(format!("--prior-var must be positive, got {prior_var}")));
    }
    Ok(prior_var)
}

fn run_gvb_logistic(args: GvbLogisticArgs) -> Result<(), CliError> {
    let ctx = context(&args.common)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let opts = RegressionOptions {
        data: &args.data,
        synthetic_n: resolve_opt(&args.synthetic_n, &ctx.cfg, "synthetic_n")?,
        synthetic_coeffs: (
            &resolve_opt(&args.synthetic_theta, &ctx.cfg, "synthetic_theta")?,
            "--synthetic-theta",
        ),
        intercept: args.intercept,
        standardize: args.standardize,
    };
    let Regression { x, y, names, spec } =
        load_regression(&opts, SyntheticKind::Logistic, &mut rng)?;
    require_binary_response(&y)?;
    let d = x.ncols();
    let prior_var = resolve_prior_var(&args.prior_var, &ctx.cfg)?;
    let lambda_dim = d + d * (d + 1) / 2;
    let (tcfg, trainer_echo) = resolve_trainer(&args.trainer, &ctx.cfg, ctx.seed, lambda_dim)?;

    let model = logistic_model(x, y, prior_var)?;
    let fit = run_cholesky_gvb(&model, &tcfg, &mut rng)?;
    let params = GaussianCholeskyParams::from_lambda(d, &fit.lambda_best)?;
    let l_mat = params.l_matrix();
    let cov = &l_mat * l_mat.transpose();
    let theta_mean: Vec<f64> = params.mu.iter().copied().collect();
    let theta_sd: Vec<f64> = (0..d).map(|j| cov[(j, j)].sqrt()).collect();

    let payload = GvbLogisticFit {
        covariates: names.clone(),
        theta_mean: theta_mean.clone(),
        theta_sd: theta_sd.clone(),
        iterations: fit.iterations,
        termination: termination_label(fit.termination),
        best_index: fit.trace.best_index,
        lb_smooth_best: lb_smooth_best(&fit),
    };
    let echo = LogisticEcho { prior_var, trainer: trainer_echo, threads: ctx.threads };
    let doc = ResultsDoc {
        schema: 1,
        command: "gvb-logistic",
        seed: ctx.seed,
        config: echo.clone(),
        fit: payload,
    };
    let mut blocks = Vec::with_capacity(d);
    for j in 0..d {
        blocks.push(DensityBlock::normal(
            &format!("theta_{}", names[j]),
            theta_mean[j],
            cov[(j, j)],
        )?);
    }
    write_all(
        &ctx.out,
        "gvb-logistic",
        ctx.argv,
        spec,
        &echo,
        ctx.seed,
        ctx.started,
        &results_json(&doc)?,
        &lb_trace_csv(&fit.trace),
        &blocks,
    )?;
    finish_line("gvb-logistic", &args.common.out_dir);
    Ok(())
}

// ---------------------------------------------------------------------
// nagvac-logistic

#[derive(Serialize, Clone)]
struct NagvacEcho {
    prior_var: f64,
    val_frac: f64,
    #[serde(flatten)]
    trainer: TrainerEcho,
    threads: usize,
}

#[derive(Serialize)]
struct NagvacLogisticFit {
    covariates: Vec<String>,
    theta_mean: Vec<f64>,
    theta_sd: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    n_train: usize,
    n_validation: usize,
    min_validation_loss: f64,
    negative_curvature_coords: usize,
    iterations: usize,
    termination: &'static str,
}

fn run_nagvac_logistic(args: NagvacLogisticArgs) -> Result<(), CliError> {
    let ctx = context(&args.common)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let opts = RegressionOptions {
        data: &args.data,
        synthetic_n: resolve_opt(&args.synthetic_n, &ctx.cfg, "synthetic_n")?,
        synthetic_coeffs: (
            &resolve_opt(&args.synthetic_theta, &ctx.cfg, "synthetic_theta")?,
            "--synthetic-theta",
        ),
        intercept: args.intercept,
        standardize: args.standardize,
    };
    let Regression { x, y, names, spec } =
        load_regression(&opts, SyntheticKind::Logistic, &mut rng)?;
    require_binary_response(&y)?;
    let n = x.nrows();
    let d = x.ncols();
    let prior_var = resolve_prior_var(&args.prior_var, &ctx.cfg)?;
    let val_frac = resolve(&args.val_frac, &ctx.cfg, "val_frac", 0.2)?;
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(CliError::Usage(format!(
            "--val-frac must lie strictly between 0 and 1, got {val_frac}"
        )));
    }
    let n_val = ((n as f64 * val_frac).round() as usize).clamp(1, n - 2);
    let n_train = n - n_val;

    // The split is drawn from the run generator before training, so a
    // fixed seed fixes the partition as well.
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let pick = |rows: &[usize]| {
        let mut xm = nalgebra::DMatrix::zeros(rows.len(), d);
        let mut yv = DVector::zeros(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            xm.set_row(i, &x.row(r));
            yv[i] = y[r];
        }
        (xm, yv)
    };
    let (x_train, y_train) = pick(&order[..n_train]);
    let (x_val, y_val) = pick(&order[n_train..]);

    let (tcfg, trainer_echo) = resolve_trainer(&args.trainer, &ctx.cfg, ctx.seed, 3 * d)?;
    let model = logistic_model(x_train, y_train, prior_var)?;
    let loss = move |lambda: &DVector<f64>| {
        let mu = lambda.rows(0, d).into_owned();
        -logistic_log_likelihood(&x_val, &y_val, &mu)
    };
    let out = run_nagvac(&model, &tcfg, &loss, &mut rng)?;
    let params = GaussianFactorParams::from_lambda(d, &out.fit.lambda_best)?;
    let theta_mean: Vec<f64> = params.mu.iter().copied().collect();
    let theta_var: Vec<f64> =
        (0..d).map(|j| params.b[j] * params.b[j] + params.c[j] * params.c[j]).collect();
    let min_loss = out
        .fit
        .trace
        .raw
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let payload = NagvacLogisticFit {
        covariates: names.clone(),
        theta_mean: theta_mean.clone(),
        theta_sd: theta_var.iter().map(|v| v.sqrt()).collect(),
        b: params.b.iter().copied().collect(),
        c: params.c.iter().copied().collect(),
        n_train,
        n_validation: n_val,
        min_validation_loss: min_loss,
        negative_curvature_coords: out.negative_curvature_coords,
        iterations: out.fit.iterations,
        termination: termination_label(out.fit.termination),
    };
    let echo = NagvacEcho { prior_var, val_frac, trainer: trainer_echo, threads: ctx.threads };
    let doc = ResultsDoc {
        schema: 1,
        command: "nagvac-logistic",
        seed: ctx.seed,
        config: echo.clone(),
        fit: payload,
    };
    let mut blocks = Vec::with_capacity(d);
    for j in 0..d {
        blocks.push(DensityBlock::normal(
            &format!("theta_{}", names[j]),
            theta_mean[j],
            theta_var[j],
        )?);
    }
    write_all(
        &ctx.out,
        "nagvac-logistic",
        ctx.argv,
        spec,
        &echo,
        ctx.seed,
        ctx.started,
        &results_json(&doc)?,
        &loss_trace_csv(&out.fit.trace.raw),
        &blocks,
    )?;
    finish_line("nagvac-logistic", &args.common.out_dir);
    Ok(())
}

// ---------------------------------------------------------------------
// gibbs-normal

#[derive(Serialize, Clone)]
struct GibbsEcho {
    #[serde(flatten)]
    prior: NormalPriorEcho,
    iters: usize,
    burn_in: usize,
    threads: usize,
}

#[derive(Serialize)]
struct GibbsFit {
    mu_mean: f64,
    mu_sd: f64,
    mu_batch_se: f64,
    sigma_sq_mean: f64,
    sigma_sq_sd: f64,
    sigma_sq_batch_se: f64,
    iters: usize,
    burn_in: usize,
    retained: usize,
}

fn run_gibbs_normal(args: GibbsNormalArgs) -> Result<(), CliError> {
    let ctx = context(&args.common)?;
    let (y, dataset) = load_response(&args.data)?;
    let (hyper, prior_echo) = resolve_normal_prior(&args.prior, &ctx.cfg)?;
    let iters = resolve(&args.iters, &ctx.cfg, "iters", 10_000)?;
    let burn_in = resolve_opt(&args.burn_in, &ctx.cfg, "burn_in")?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let out = gibbs_normal(&y, &hyper, iters, burn_in, &mut rng)?;

    let fit = GibbsFit {
        mu_mean: out.mean(0),
        mu_sd: out.sd(0),
        mu_batch_se: out.batch_se(0),
        sigma_sq_mean: out.mean(1),
        sigma_sq_sd: out.sd(1),
        sigma_sq_batch_se: out.batch_se(1),
        iters,
        burn_in: out.burn_in,
        retained: out.n_retained(),
    };
    let echo =
        GibbsEcho { prior: prior_echo, iters, burn_in: out.burn_in, threads: ctx.threads };
    let doc = ResultsDoc {
        schema: 1,
        command: "gibbs-normal",
        seed: ctx.seed,
        config: echo.clone(),
        fit,
    };
    let blocks = vec![
        DensityBlock::kde("mu", &out.retained(0))?,
        DensityBlock::kde("sigma_sq", &out.retained(1))?,
    ];
    write_all(
        &ctx.out,
        "gibbs-normal",
        ctx.argv,
        dataset,
        &echo,
        ctx.seed,
        ctx.started,
        &results_json(&doc)?,
        &crate::outputs::gibbs_trace_csv(&out.draws, out.burn_in, GIBBS_TRACE_ROW_CAP),
        &blocks,
    )?;
    finish_line("gibbs-normal", &args.common.out_dir);
    Ok(())
}
