use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{synthetic_logistic, standardise_predictors, ConjugateGaussian, GaussianModel, LogisticModel, RecaptureData, RecaptureModel, TargetModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConjugate {
    pub truth: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogistic {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

/// JSON description of a model. Relative data paths are resolved against
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelManifest {
    Gaussian {
        mean: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sd: Option<Vec<f64>>,
    },
    ConjugateGaussian {
        prior_mean: Vec<f64>,
        prior_sd: f64,
        noise_sd: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        synthetic: Option<SyntheticConjugate>,
    },
    Logistic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        design: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response: Option<PathBuf>,
        /// Centre and scale raw predictors and add an intercept column.
        #[serde(default = "yes")]
        standardise: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior_sd: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        synthetic: Option<SyntheticLogistic>,
    },
    Recapture {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
    },
}

fn yes() -> bool {
    true
}

/// Reads a numeric CSV; a first row that does not parse is taken as a header.
pub(crate) fn read_numeric_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|v| v.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::invalid(format!("{}: row {}: {e}", path.display(), i + 1))),
        }
    }
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!("{}: no numeric data", path.display())));
    }
    Ok(DMatrix::from_fn(n, d, |i, k| rows[i][k]))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds the model a manifest describes.
pub fn build_model(m: &ModelManifest, base: &Path) -> Result<Box<dyn TargetModel>> {
    Ok(match m {
        ModelManifest::Gaussian { mean, cov, sd } => match (cov, sd) {
            (Some(c), None) => {
                let d = mean.len();
                if c.len() != d || c.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("covariance must be d×d"));
                }
                Box::new(GaussianModel::new(mean.clone(), DMatrix::from_fn(d, d, |i, j| c[i][j]))?)
            }
            (None, Some(s)) => Box::new(GaussianModel::diagonal(mean.clone(), s)?),
            (None, None) => Box::new(GaussianModel::diagonal(mean.clone(), &vec![1.0; mean.len()])?),
            (Some(_), Some(_)) => return Err(Error::invalid("give either cov or sd, not both")),
        },
        ModelManifest::ConjugateGaussian { prior_mean, prior_sd, noise_sd, data, synthetic } => {
            match (data, synthetic) {
                (Some(p), None) => {
                    let y = read_numeric_csv(&resolve(base, p))?;
                    Box::new(ConjugateGaussian::new(prior_mean.clone(), *prior_sd, *noise_sd, &y)?)
                }
                (None, Some(s)) => Box::new(ConjugateGaussian::synthetic(
                    prior_mean.clone(),
                    *prior_sd,
                    *noise_sd,
                    &s.truth,
                    s.n,
                    s.seed,
                )?),
                _ => return Err(Error::invalid("conjugate_gaussian needs exactly one of data or synthetic")),
            }
        }
        ModelManifest::Logistic { design, response, standardise, prior_sd, synthetic } => {
            let model = match (design, response, synthetic) {
                (Some(xp), Some(yp), None) => {
                    let raw = read_numeric_csv(&resolve(base, xp))?;
                    let y = read_numeric_csv(&resolve(base, yp))?;
                    if y.ncols() != 1 {
                        return Err(Error::invalid("response file must have one column"));
                    }
                    let x = if *standardise { standardise_predictors(&raw)? } else { raw };
                    let sds = prior_sd.clone().unwrap_or_else(|| LogisticModel::default_priors(x.ncols()));
                    LogisticModel::new(x, y.column(0).iter().copied().collect(), sds)?
                }
                (None, None, Some(s)) => {
                    let m = synthetic_logistic(s.n, s.d, s.seed)?;
                    match prior_sd {
                        Some(sds) => LogisticModel::new(m.design().clone(), m.response().to_vec(), sds.clone())?,
                        None => m,
                    }
                }
                _ => return Err(Error::invalid("logistic needs design and response files, or synthetic")),
            };
            Box::new(model)
        }
        ModelManifest::Recapture { data } => {
            let d = match data {
                Some(p) => serde_json::from_reader(std::fs::File::open(resolve(base, p))?)?,
                None => RecaptureData::dipper(),
            };
            Box::new(RecaptureModel::new(d)?)
        }
    })
}

/// Reads a manifest file and builds its model.
pub fn load_model(path: &Path) -> Result<(ModelManifest, Box<dyn TargetModel>)> {
    let text = std::fs::read_to_string(path)?;
    let m: ModelManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let model = build_model(&m, base)?;
    Ok((m, model))
}
