use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::errors::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "vb",
    version,
    about = "Variational Bayes fits for the bundled model catalogue",
    max_term_width = 100
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Mean-field coordinate ascent for the conjugate normal model.
    MfvbNormal(MfvbNormalArgs),
    /// Mean-field coordinate ascent for the Bayesian lasso.
    MfvbLasso(MfvbLassoArgs),
    /// Stochastic fixed-form VB for the normal model.
    FfvbNormal(FfvbNormalArgs),
    /// Gaussian VB with a Cholesky covariance for logistic regression.
    GvbLogistic(GvbLogisticArgs),
    /// Factor-covariance Gaussian VB for logistic regression.
    NagvacLogistic(NagvacLogisticArgs),
    /// Gibbs sampler for the conjugate normal model.
    GibbsNormal(GibbsNormalArgs),
}

/// Flags shared by every subcommand. Mergeable values are optional so
/// that a config file can fill them in; explicit flags always win.
#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Directory for the result files (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
    /// key = value file merged underneath explicit flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed. The VB_SEED environment variable overrides this flag.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads (this build runs single-threaded,
    /// so the cap is validated and recorded, nothing more).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Stochastic-trainer knobs, one flag per tuning parameter.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainerArgs {
    /// Base step size (the fixed learning rate before decay).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Monte Carlo samples per gradient estimate.
    #[arg(long)]
    pub num_samples: Option<usize>,
    /// Consecutive non-improving evaluations tolerated before stopping.
    #[arg(long)]
    pub max_patience: Option<usize>,
    /// Exponential weight on the running gradient mean.
    #[arg(long)]
    pub grad_weight1: Option<f64>,
    /// Exponential weight on the running squared-gradient mean.
    #[arg(long)]
    pub grad_weight2: Option<f64>,
    /// Momentum weight for natural-gradient steps.
    #[arg(long)]
    pub momentum_weight: Option<f64>,
    /// Moving-average window over the objective trace.
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Iteration after which the learning rate decays harmonically.
    #[arg(long)]
    pub step_adaptive: Option<usize>,
    /// Hard iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// L2 norm cap applied to gradient estimates.
    #[arg(long)]
    pub gradient_max: Option<f64>,
    /// Start point: "random" or "custom" (custom needs --init-values).
    #[arg(long)]
    pub init_method: Option<String>,
    /// Comma-separated start vector for --init-method custom.
    #[arg(long)]
    pub init_values: Option<String>,
}

/// Hyperparameters of the conjugate normal model. --sigma0 is the prior
/// standard deviation of the mean, so --sigma0 10 is a variance of 100.
#[derive(Args, Debug, Clone, Default)]
pub struct NormalPriorArgs {
    /// Prior mean of mu.
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Prior standard deviation of mu.
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// Shape of the inverse-gamma prior on the variance.
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Rate of the inverse-gamma prior on the variance.
    #[arg(long)]
    pub beta0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct MfvbNormalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV whose last column is the response; omit for the bundled
    /// ten-point demonstration data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub prior: NormalPriorArgs,
    /// Stop when the parameter vector moves less than this in L2 norm.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap for the coordinate ascent.
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MfvbLassoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with covariate columns and the response last. The design and
    /// response are always centered before the fit.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rows of synthetic regression data to generate instead of --data.
    #[arg(long)]
    pub synthetic_n: Option<usize>,
    /// Comma-separated generating coefficients for --synthetic-n.
    #[arg(long)]
    pub synthetic_beta: Option<String>,
    /// Noise standard deviation for the synthetic generator.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Shape of the gamma prior on the squared shrinkage parameter.
    #[arg(long)]
    pub r: Option<f64>,
    /// Rate of the gamma prior on the squared shrinkage parameter.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Stop when the coefficient mean moves less than this in L2 norm.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap for the coordinate ascent.
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FfvbStrategy {
    /// Score-function gradients with control variates and adaptive steps.
    CvAdaptive,
    /// Score-function gradients with control variates and natural-gradient
    /// momentum steps.
    CvNatural,
    /// Natural-gradient fit of the two-parameter family that keeps the
    /// variance conditional exact.
    Hybrid,
}

impl FfvbStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            FfvbStrategy::CvAdaptive => "cv-adaptive",
            FfvbStrategy::CvNatural => "cv-natural",
            FfvbStrategy::Hybrid => "hybrid",
        }
    }
}

#[derive(Args, Debug)]
pub struct FfvbNormalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV whose last column is the response; omit for the bundled
    /// ten-point demonstration data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Gradient and step rule.
    #[arg(long, value_enum)]
    pub strategy: Option<FfvbStrategy>,
    #[command(flatten)]
    pub prior: NormalPriorArgs,
    #[command(flatten)]
    pub trainer: TrainerArgs,
}

#[derive(Args, Debug)]
pub struct GvbLogisticArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with covariate columns and a 0/1 response last.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rows of synthetic logistic data to generate instead of --data.
    #[arg(long)]
    pub synthetic_n: Option<usize>,
    /// Comma-separated generating coefficients (intercept first) for
    /// --synthetic-n.
    #[arg(long)]
    pub synthetic_theta: Option<String>,
    /// Prepend a column of ones to CSV covariates.
    #[arg(long)]
    pub intercept: bool,
    /// Z-score CSV covariate columns before the fit.
    #[arg(long)]
    pub standardize: bool,
    /// Variance of the zero-mean normal prior on the coefficients.
    #[arg(long)]
    pub prior_var: Option<f64>,
    #[command(flatten)]
    pub trainer: TrainerArgs,
}

#[derive(Args, Debug)]
pub struct NagvacLogisticArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with covariate columns and a 0/1 response last.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rows of synthetic logistic data to generate instead of --data.
    #[arg(long)]
    pub synthetic_n: Option<usize>,
    /// Comma-separated generating coefficients (intercept first) for
    /// --synthetic-n.
    #[arg(long)]
    pub synthetic_theta: Option<String>,
    /// Prepend a column of ones to CSV covariates.
    #[arg(long)]
    pub intercept: bool,
    /// Z-score CSV covariate columns before the fit.
    #[arg(long)]
    pub standardize: bool,
    /// Variance of the zero-mean normal prior on the coefficients.
    #[arg(long)]
    pub prior_var: Option<f64>,
    /// Fraction of rows held out to drive the stopping rule.
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[command(flatten)]
    pub trainer: TrainerArgs,
}

#[derive(Args, Debug)]
pub struct GibbsNormalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV whose last column is the response; omit for the bundled
    /// ten-point demonstration data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub prior: NormalPriorArgs,
    /// Total sweeps, burn-in included.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Sweeps discarded from the front (default: a tenth of the total).
    #[arg(long)]
    pub burn_in: Option<usize>,
}

/// Keys a config file may set. Anything else is rejected so a typo
/// cannot silently fall back to a default.
const RECOGNIZED_KEYS: &[&str] = &[
    "learning_rate",
    "num_samples",
    "max_patience",
    "grad_weight1",
    "grad_weight2",
    "momentum_weight",
    "window_size",
    "step_adaptive",
    "max_iter",
    "gradient_max",
    "init_method",
    "init_values",
    "seed",
    "threads",
    "mu0",
    "sigma0",
    "alpha0",
    "beta0",
    "tol",
    "r",
    "delta",
    "prior_var",
    "val_frac",
    "iters",
    "burn_in",
    "strategy",
    "noise_sd",
    "synthetic_n",
    "synthetic_beta",
    "synthetic_theta",
];

/// Parsed config file: lower-cased keys with `-` normalized to `_`.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    origin: String,
}

impl ConfigFile {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::errors::io_usage(path, "read config file", &e))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{}: line {}: expected `key = value`, got `{raw}`",
                    path.display(),
                    idx + 1
                )));
            };
            let key = key.trim().to_lowercase().replace('-', "_");
            if !RECOGNIZED_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{}: line {}: unrecognized config key `{key}`",
                    path.display(),
                    idx + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values, origin: path.display().to_string() })
    }

    /// Typed lookup; a present but unparseable value is a usage error.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!(
                    "{}: config value for `{key}` is not valid here: `{raw}`",
                    self.origin
                ))
            }),
        }
    }
}

/// flag -> config file -> default, in that order.
pub fn resolve<T: FromStr + Clone>(
    flag: &Option<T>,
    cfg: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    if let Some(v) = flag {
        return Ok(v.clone());
    }
    Ok(cfg.get::<T>(key)?.unwrap_or(default))
}

/// Same, for values with no default (stay optional).
pub fn resolve_opt<T: FromStr + Clone>(
    flag: &Option<T>,
    cfg: &ConfigFile,
    key: &str,
) -> Result<Option<T>, CliError> {
    if let Some(v) = flag {
        return Ok(Some(v.clone()));
    }
    cfg.get::<T>(key)
}

/// Seed precedence: VB_SEED environment variable, then --seed, then the
/// config file, then 0.
pub fn resolve_seed(common: &CommonArgs, cfg: &ConfigFile) -> Result<u64, CliError> {
    if let Ok(raw) = std::env::var("VB_SEED") {
        return raw.trim().parse::<u64>().map_err(|_| {
            CliError::Usage(format!("VB_SEED must be an unsigned integer, got `{raw}`"))
        });
    }
    resolve(&common.seed, cfg, "seed", 0)
}

pub fn resolve_threads(common: &CommonArgs, cfg: &ConfigFile) -> Result<usize, CliError> {
    let threads = resolve(&common.threads, cfg, "threads", 1)?;
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    Ok(threads)
}

/// The argv recorded in the manifest: everything after the binary name,
/// with the resolved seed pinned as an explicit flag so a replay needs
/// neither VB_SEED nor the config file's seed line.
pub fn manifest_argv(seed: u64) -> Vec<String> {
    let mut argv: Vec<String> = std::env::args().skip(1).collect();
    for i in 0..argv.len() {
        if argv[i] == "--seed" {
            if i + 1 < argv.len() {
                argv[i + 1] = seed.to_string();
            }
            return argv;
        }
        if argv[i].starts_with("--seed=") {
            argv[i] = format!("--seed={seed}");
            return argv;
        }
    }
    argv.push("--seed".into());
    argv.push(seed.to_string());
    argv
}

/// Comma-separated float lists used by --synthetic-beta and friends.
pub fn parse_float_list(raw: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for piece in raw.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            return Err(CliError::Usage(format!("{flag}: empty entry in `{raw}`")));
        }
        let v: f64 = piece.parse().map_err(|_| {
            CliError::Usage(format!("{flag}: cannot parse `{piece}` as a number"))
        })?;
        if !v.is_finite() {
            return Err(CliError::Usage(format!("{flag}: entries must be finite")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{flag}: needs at least one entry")));
    }
    Ok(out)
}
