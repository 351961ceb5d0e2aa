use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::Serialize;

use varbayes::models::{generate_lasso_data, generate_logistic_data, NORMAL_DEMO_DATA};

use crate::args::parse_float_list;
use crate::errors::{io_usage, CliError};

/// Where a run's data came from, recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// The ten-point demonstration sample bundled with the library.
    BuiltinDemo,
    Csv { path: String, rows: usize, cols: usize },
    SyntheticLasso { n: usize, beta: Vec<f64>, noise_sd: f64 },
    SyntheticLogistic { n: usize, theta: Vec<f64> },
}

/// A parsed CSV: header names plus an all-numeric cell matrix.
struct CsvTable {
    names: Vec<String>,
    cells: DMatrix<f64>,
}

/// Reads a UTF-8 CSV with a required header row; every body cell must
/// parse as a number. Errors carry 1-based row numbers (header = row 1)
/// and column names.
fn read_csv(path: &Path) -> Result<CsvTable, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_usage(path, "open", &e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: cannot read header row: {e}", path.display())))?
        .clone();
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if names.is_empty() {
        return Err(CliError::Usage(format!("{}: the header row is empty", path.display())));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 2;
        let record = record.map_err(|e| {
            CliError::Usage(format!("{}: row {row_no}: {e}", path.display()))
        })?;
        if record.len() != names.len() {
            return Err(CliError::Usage(format!(
                "{}: row {row_no} has {} fields but the header names {}",
                path.display(),
                record.len(),
                names.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "{}: row {row_no}, column {} ({}): cannot parse `{field}` as a number",
                    path.display(),
                    j + 1,
                    names[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Usage(format!(
                    "{}: row {row_no}, column {} ({}): value must be finite",
                    path.display(),
                    j + 1,
                    names[j]
                )));
            }
            rows.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(CliError::Usage(format!(
            "{}: no data rows below the header",
            path.display()
        )));
    }
    let cells = DMatrix::from_row_slice(n_rows, names.len(), &rows);
    Ok(CsvTable { names, cells })
}

/// Response-only input for the univariate normal commands: the last CSV
/// column, or the bundled demonstration data when --data is absent.
pub fn load_response(data: &Option<PathBuf>) -> Result<(Vec<f64>, DatasetSpec), CliError> {
    match data {
        None => Ok((NORMAL_DEMO_DATA.to_vec(), DatasetSpec::BuiltinDemo)),
        Some(path) => {
            let table = read_csv(path)?;
            let last = table.names.len() - 1;
            let y: Vec<f64> = table.cells.column(last).iter().copied().collect();
            let spec = DatasetSpec::Csv {
                path: path.display().to_string(),
                rows: table.cells.nrows(),
                cols: table.cells.ncols(),
            };
            Ok((y, spec))
        }
    }
}

/// Regression data plus covariate names and its manifest record.
pub struct Regression {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub spec: DatasetSpec,
}

pub struct RegressionOptions<'a> {
    pub data: &'a Option<PathBuf>,
    pub synthetic_n: Option<usize>,
    /// Generating coefficients, with the flag name for diagnostics.
    pub synthetic_coeffs: (&'a Option<String>, &'a str),
    pub intercept: bool,
    pub standardize: bool,
}

/// What to do with synthetic row counts: build lasso or logistic data.
pub enum SyntheticKind {
    Lasso { noise_sd: f64 },
    Logistic,
}

/// Loads covariates-plus-response from CSV or generates them. CSV
/// transforms run in a fixed order: standardize the covariates, then
/// prepend the intercept column. Synthetic data is emitted exactly as
/// generated, so the transform flags are rejected there.
pub fn load_regression(
    opts: &RegressionOptions,
    kind: SyntheticKind,
    rng: &mut dyn RngCore,
) -> Result<Regression, CliError> {
    let (flag_coeffs, coeff_flag_name) = opts.synthetic_coeffs;
    match (opts.data, opts.synthetic_n) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "--data and --synthetic-n are mutually exclusive".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "provide --data or a synthetic generator (--synthetic-n)".into(),
        )),
        (Some(path), None) => {
            let table = read_csv(path)?;
            if table.names.len() < 2 {
                return Err(CliError::Usage(format!(
                    "{}: regression input needs at least one covariate column \
                     besides the response",
                    path.display()
                )));
            }
            let spec = DatasetSpec::Csv {
                path: path.display().to_string(),
                rows: table.cells.nrows(),
                cols: table.cells.ncols(),
            };
            let p = table.names.len() - 1;
            let mut x = table.cells.columns(0, p).into_owned();
            let y = table.cells.column(p).into_owned();
            let mut names: Vec<String> = table.names[..p].to_vec();
            if opts.standardize {
                standardize_columns(&mut x, &names, path)?;
            }
            if opts.intercept {
                x = x.insert_column(0, 1.0);
                names.insert(0, "intercept".into());
            }
            Ok(Regression { x, y, names, spec })
        }
        (None, Some(n)) => {
            if opts.intercept || opts.standardize {
                return Err(CliError::Usage(
                    "--intercept and --standardize apply to CSV data only".into(),
                ));
            }
            if n < 2 {
                return Err(CliError::Usage("--synthetic-n must be at least 2".into()));
            }
            let Some(raw) = flag_coeffs else {
                return Err(CliError::Usage(format!(
                    "--synthetic-n needs {coeff_flag_name} with the generating coefficients"
                )));
            };
            let coeffs = parse_float_list(raw, coeff_flag_name)?;
            match kind {
                SyntheticKind::Lasso { noise_sd } => {
                    if !(noise_sd > 0.0 && noise_sd.is_finite()) {
                        return Err(CliError::Usage(format!(
                            "--noise-sd must be positive, got {noise_sd}"
                        )));
                    }
                    let (x, y) = generate_lasso_data(n, &coeffs, noise_sd, rng);
                    let names = (0..coeffs.len()).map(|j| format!("x{j}")).collect();
                    let spec = DatasetSpec::SyntheticLasso { n, beta: coeffs, noise_sd };
                    Ok(Regression { x, y, names, spec })
                }
                SyntheticKind::Logistic => {
                    let theta = DVector::from_vec(coeffs.clone());
                    let (x, y) = generate_logistic_data(n, &theta, rng);
                    let mut names = vec!["intercept".to_string()];
                    names.extend((1..theta.len()).map(|j| format!("x{j}")));
                    let spec = DatasetSpec::SyntheticLogistic { n, theta: coeffs };
                    Ok(Regression { x, y, names, spec })
                }
            }
        }
    }
}

/// Z-scores each column in place; a constant column cannot be scaled
/// and is reported by name.
fn standardize_columns(
    x: &mut DMatrix<f64>,
    names: &[String],
    path: &Path,
) -> Result<(), CliError> {
    let n = x.nrows() as f64;
    if x.nrows() < 2 {
        return Err(CliError::Usage(format!(
            "{}: --standardize needs at least two rows",
            path.display()
        )));
    }
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n;
        let var = x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(CliError::Usage(format!(
                "{}: column {} ({}) is constant and cannot be standardized",
                path.display(),
                j + 1,
                names[j]
            )));
        }
        let sd = var.sqrt();
        for i in 0..x.nrows() {
            x[(i, j)] = (x[(i, j)] - mean) / sd;
        }
    }
    Ok(())
}

/// Centers the response and every covariate column, the fixed
/// pre-processing of the lasso fit (its model carries no intercept).
pub fn center_in_place(x: &mut DMatrix<f64>, y: &mut DVector<f64>) {
    let n = x.nrows() as f64;
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n;
        for i in 0..x.nrows() {
            x[(i, j)] -= mean;
        }
    }
    let y_mean = y.sum() / n;
    for i in 0..y.len() {
        y[i] -= y_mean;
    }
}

/// The logistic commands need a 0/1 response.
pub fn require_binary_response(y: &DVector<f64>) -> Result<(), CliError> {
    for (i, v) in y.iter().enumerate() {
        if *v != 0.0 && *v != 1.0 {
            return Err(CliError::Usage(format!(
                "response row {}: logistic regression needs 0/1 responses, got {v}",
                i + 1
            )));
        }
    }
    Ok(())
}
