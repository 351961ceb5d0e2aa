use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use varbayes::dist::DistSpec;
use varbayes::ffvb::{LbTrace, Termination};

use crate::data::DatasetSpec;
use crate::errors::{io_usage, CliError};

pub const RESULTS_FILE: &str = "results.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const DENSITIES_FILE: &str = "densities.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Grid points per parameter in the density file.
pub const DENSITY_POINTS: usize = 200;

/// Output directory handle; creation happens once up front.
pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_usage(dir, "create", &e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, doc: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(doc)
            .map_err(|e| CliError::Usage(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_usage(&path, "write", &e))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| io_usage(&path, "write", &e))
    }
}

pub fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::Patience => "patience",
        Termination::MaxIter => "max-iter",
    }
}

/// Shortest round-trip float text; stable across runs for equal bits.
fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Objective trace of the stochastic runs: one row per iteration with
/// the raw bound and, where the rolling window has a value, the smoothed
/// bound written at the row indexed by the window start. The row index
/// of the lb_smooth maximum therefore equals the fit's best_index.
pub fn lb_trace_csv(trace: &LbTrace) -> String {
    let mut out = String::from("iter,lb,lb_smooth\n");
    for (k, raw) in trace.raw.iter().enumerate() {
        let smooth = trace.smoothed.get(k).map(|v| fmt(*v)).unwrap_or_default();
        out.push_str(&format!("{k},{},{smooth}\n", fmt(*raw)));
    }
    out
}

/// Validation-loss trace of the factor-covariance run.
pub fn loss_trace_csv(losses: &[f64]) -> String {
    let mut out = String::from("iter,loss\n");
    for (k, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", fmt(*loss)));
    }
    out
}

/// Parameter path of the conjugate-normal coordinate ascent.
pub fn mfvb_normal_trace_csv(path: &[[f64; 4]]) -> String {
    let mut out = String::from("iter,mu_q,sigma_sq_q,alpha_q,beta_q\n");
    for (k, row) in path.iter().enumerate() {
        out.push_str(&format!(
            "{k},{},{},{},{}\n",
            fmt(row[0]),
            fmt(row[1]),
            fmt(row[2]),
            fmt(row[3])
        ));
    }
    out
}

/// Coefficient-movement trace of the lasso coordinate ascent.
pub fn lasso_trace_csv(deltas: &[f64]) -> String {
    let mut out = String::from("iter,mu_beta_delta\n");
    for (k, d) in deltas.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", fmt(*d)));
    }
    out
}

/// Retained Gibbs draws, thinned to at most `max_rows` rows. The iter
/// column keeps the original sweep index (burn-in included).
pub fn gibbs_trace_csv(
    draws: &nalgebra::DMatrix<f64>,
    burn_in: usize,
    max_rows: usize,
) -> String {
    let retained = draws.nrows() - burn_in;
    let thin = retained.div_ceil(max_rows).max(1);
    let mut out = String::from("iter,mu,sigma_sq\n");
    let mut t = burn_in;
    while t < draws.nrows() {
        out.push_str(&format!("{t},{},{}\n", fmt(draws[(t, 0)]), fmt(draws[(t, 1)])));
        t += thin;
    }
    out
}

/// One marginal density to tabulate: a name, a grid, and a pdf.
pub struct DensityBlock {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub pdf: Box<dyn Fn(f64) -> f64>,
}

impl DensityBlock {
    /// Normal marginal over mean +/- 4 sd.
    pub fn normal(name: &str, mean: f64, var: f64) -> Result<Self, CliError> {
        let dist = DistSpec::normal(mean, var)
            .map_err(|e| CliError::Numeric(format!("density grid for {name}: {e}")))?;
        let sd = var.sqrt();
        Ok(Self {
            name: name.to_string(),
            lo: mean - 4.0 * sd,
            hi: mean + 4.0 * sd,
            pdf: Box::new(move |x| dist.log_pdf(x).exp()),
        })
    }

    /// Inverse-gamma marginal over mean +/- 4 sd, truncated to stay
    /// positive. When the sd does not exist (shape <= 2) the mean is
    /// used as the spread, and when even the mean does not exist
    /// (shape <= 1) the grid brackets the mode instead.
    pub fn inverse_gamma(name: &str, shape: f64, rate: f64) -> Result<Self, CliError> {
        let dist = DistSpec::inverse_gamma(shape, rate)
            .map_err(|e| CliError::Numeric(format!("density grid for {name}: {e}")))?;
        let (lo, hi) = if shape > 1.0 {
            let mean = rate / (shape - 1.0);
            let sd = if shape > 2.0 { mean / (shape - 2.0).sqrt() } else { mean };
            ((mean - 4.0 * sd).max(mean * 1e-6), mean + 4.0 * sd)
        } else {
            let mode = rate / (shape + 1.0);
            (mode * 0.02, mode * 50.0)
        };
        Ok(Self {
            name: name.to_string(),
            lo,
            hi,
            pdf: Box::new(move |x| dist.log_pdf(x).exp()),
        })
    }

    /// Gaussian kernel density over MCMC draws with Silverman's
    /// bandwidth, gridded over the draw mean +/- 4 sd.
    pub fn kde(name: &str, draws: &[f64]) -> Result<Self, CliError> {
        let n = draws.len();
        if n < 2 {
            return Err(CliError::Numeric(format!(
                "density grid for {name}: needs at least two draws"
            )));
        }
        let nf = n as f64;
        let mean = draws.iter().sum::<f64>() / nf;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let sd = var.sqrt();
        let mut sorted = draws.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| sorted[((nf - 1.0) * p).round() as usize];
        let iqr = q(0.75) - q(0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        if !(spread > 0.0) {
            return Err(CliError::Numeric(format!(
                "density grid for {name}: the draws are degenerate"
            )));
        }
        let h = 0.9 * spread * nf.powf(-0.2);
        let draws = sorted;
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * nf);
        Ok(Self {
            name: name.to_string(),
            lo: mean - 4.0 * sd,
            hi: mean + 4.0 * sd,
            pdf: Box::new(move |x| {
                draws.iter().map(|d| (-0.5 * ((x - d) / h).powi(2)).exp()).sum::<f64>() * norm
            }),
        })
    }
}

/// Renders the density file: param,x,density with 200 grid points per
/// parameter.
pub fn densities_csv(blocks: &[DensityBlock]) -> String {
    let mut out = String::from("param,x,density\n");
    for block in blocks {
        let step = (block.hi - block.lo) / (DENSITY_POINTS - 1) as f64;
        for i in 0..DENSITY_POINTS {
            let x = block.lo + step * i as f64;
            out.push_str(&format!("{},{},{}\n", block.name, fmt(x), fmt((block.pdf)(x))));
        }
    }
    out
}

/// The replay record written next to every result: the exact argv (seed
/// pinned), the data source, the resolved configuration, and the files
/// produced. Re-running the argv with VB_SEED unset reproduces the
/// output files byte for byte.
#[derive(Serialize)]
pub struct RunManifest<C: Serialize> {
    pub schema: u32,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub dataset: DatasetSpec,
    pub config: C,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: &'static str,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Results envelope shared by every command; `fit` carries the
/// command-specific payload.
#[derive(Serialize)]
pub struct ResultsDoc<C: Serialize, F: Serialize> {
    pub schema: u32,
    pub command: &'static str,
    pub seed: u64,
    pub config: C,
    pub fit: F,
}

pub fn write_all<C: Serialize + Clone>(
    out: &OutDir,
    command: &'static str,
    argv: Vec<String>,
    dataset: DatasetSpec,
    config: &C,
    seed: u64,
    started_unix: u64,
    results_text: &str,
    trace_csv: &str,
    density_blocks: &[DensityBlock],
) -> Result<(), CliError> {
    out.write_text(RESULTS_FILE, results_text)?;
    out.write_text(TRACE_FILE, trace_csv)?;
    out.write_text(DENSITIES_FILE, &densities_csv(density_blocks))?;
    let manifest = RunManifest {
        schema: 1,
        command,
        argv,
        dataset,
        config: config.clone(),
        seed,
        outputs: vec![
            RESULTS_FILE.to_string(),
            TRACE_FILE.to_string(),
            DENSITIES_FILE.to_string(),
        ],
        started_unix,
        finished_unix: unix_now(),
        version: env!("CARGO_PKG_VERSION"),
    };
    out.write_json(MANIFEST_FILE, &manifest)
}

/// Serializes the results envelope with a trailing newline.
pub fn results_json<C: Serialize, F: Serialize>(
    doc: &ResultsDoc<C, F>,
) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Usage(format!("cannot serialize results: {e}")))?;
    text.push('\n');
    Ok(text)
}
