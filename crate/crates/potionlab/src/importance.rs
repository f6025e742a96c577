//! Parameter-importance estimators and tail-shape diagnostics.
//!
//! Importance assigns every parameter a non-negative score measuring how
//! much a set of samples relies on it. Two families are implemented:
//!
//! - `fim`: the diagonal of the empirical Fisher information — the mean
//!   squared cross-entropy gradient w.r.t. the *assigned* labels.
//! - `lf` / `xlf`: label-free scores — the mean absolute gradient of the
//!   l2 norm of the raw (pre-softmax) outputs raised to a power `w`
//!   (`lf` uses w = 2, `xlf` uses w = 1). Lower powers concentrate mass in
//!   fewer parameters, i.e. heavier-tailed importance distributions.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    f64s_to_le_bytes, le_bytes_to_f64s, read_bytes, rng_from, sha256_hex, write_bytes, View,
};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::{par, stats};

/// Importance estimator selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Empirical Fisher diagonal (squared assigned-label gradients).
    Fim,
    /// Label-free output-norm score with w = 2.
    Lf,
    /// Label-free output-norm score with w = 1 (heavier-tailed).
    Xlf,
}

impl Estimator {
    pub fn id(&self) -> &'static str {
        match self {
            Estimator::Fim => "fim",
            Estimator::Lf => "lf",
            Estimator::Xlf => "xlf",
        }
    }

    /// Output-norm power for the label-free estimators.
    pub fn exponent(&self) -> Option<f64> {
        match self {
            Estimator::Fim => None,
            Estimator::Lf => Some(2.0),
            Estimator::Xlf => Some(1.0),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Estimator> {
        match s {
            "fim" => Ok(Estimator::Fim),
            "lf" => Ok(Estimator::Lf),
            "xlf" => Ok(Estimator::Xlf),
            other => Err(Error::Config(format!(
                "unknown importance estimator '{other}' (expected fim, lf or xlf)"
            ))),
        }
    }
}

/// Per-parameter importance scores plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    /// One non-negative score per model parameter.
    pub values: Vec<f64>,
    /// Samples that hit the zero-output subgradient case (label-free
    /// estimators with w < 2 on an all-zero output); they contribute zero.
    pub degenerate_samples: usize,
}

impl Importance {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Empirical Fisher diagonal over the view: mean of squared per-sample
/// cross-entropy gradients w.r.t. the view's label column.
pub fn fisher_diagonal(model: &Model, data: &View) -> Result<Importance> {
    let dim = model.param_count();
    model.check_view(data)?;
    let total = par::try_sum_vectors(data.len(), dim, |j, buf| {
        let mut grad = vec![0.0; dim];
        model.ce_sample_stats(data.image(j), data.label(j), &mut grad);
        for (slot, &g) in buf.iter_mut().zip(&grad) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    sample: data.indices()[j],
                });
            }
            *slot += g * g;
        }
        Ok(())
    })?;
    let n = data.len() as f64;
    let values = total.into_iter().map(|v| v / n).collect();
    Ok(Importance {
        values,
        degenerate_samples: 0,
    })
}

/// Label-free importance: mean absolute gradient of ||output||_2^w over the
/// view. Never reads the label column.
pub fn output_norm_importance(model: &Model, data: &View, w: f64) -> Result<Importance> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::Config(format!("norm power w = {w} must be positive")));
    }
    let dim = model.param_count();
    model.check_view(data)?;
    // One extra reduction lane carries the degenerate-sample count.
    let mut total = par::try_sum_vectors(data.len(), dim + 1, |j, buf| {
        let mut grad = vec![0.0; dim];
        let degenerate = model.outnorm_gradient_into(data.image(j), w, &mut grad);
        if degenerate {
            buf[dim] += 1.0;
            return Ok(());
        }
        for (slot, &g) in buf.iter_mut().zip(&grad) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    sample: data.indices()[j],
                });
            }
            *slot += g.abs();
        }
        Ok(())
    })?;
    let degenerate_samples = total.pop().unwrap() as usize;
    let n = data.len() as f64;
    let values = total.into_iter().map(|v| v / n).collect();
    Ok(Importance {
        values,
        degenerate_samples,
    })
}

/// Dispatches to the selected estimator.
pub fn compute(estimator: Estimator, model: &Model, data: &View) -> Result<Importance> {
    match estimator.exponent() {
        None => fisher_diagonal(model, data),
        Some(w) => output_norm_importance(model, data, w),
    }
}

/// Shape diagnostics of an importance distribution after min-max scaling
/// to [0, 1]. Heavier tails show up as larger kurtosis and percentile
/// ratios and a larger near-zero fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub excess_kurtosis: f64,
    pub p99_over_p50: f64,
    pub p999_over_p50: f64,
    /// Fraction of scaled scores below 1e-3.
    pub frac_below_1e3: f64,
}

pub fn tail_stats(values: &[f64]) -> Result<TailStats> {
    let scaled = stats::min_max_scale(values)?;
    let excess_kurtosis = stats::excess_kurtosis(&scaled)?;
    let mut sorted = scaled.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p50 = stats::percentile_sorted(&sorted, 50.0);
    if p50 <= 0.0 {
        return Err(Error::Degenerate(
            "median importance is zero after scaling; percentile ratios undefined".into(),
        ));
    }
    let p99 = stats::percentile_sorted(&sorted, 99.0);
    let p999 = stats::percentile_sorted(&sorted, 99.9);
    let below = scaled.iter().filter(|&&v| v < 1e-3).count();
    Ok(TailStats {
        excess_kurtosis,
        p99_over_p50: p99 / p50,
        p999_over_p50: p999 / p50,
        frac_below_1e3: below as f64 / scaled.len() as f64,
    })
}

/// Synthetic single-parameter importance draws for studying how the norm
/// power shapes the distribution, without training anything: each pseudo
/// parameter has an output magnitude u ~ U[0,1) and a sensitivity
/// g ~ N(0,1), giving importance |d(u^w)/du * g| = |w * u^(w-1) * g|.
pub fn pseudo_output_importance(n: usize, w: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let g: f64 = rng.sample(StandardNormal);
            // The clamp guards the u = 0 pole when w < 1.
            (w * u.max(1e-12).powf(w - 1.0) * g).abs()
        })
        .collect()
}

const IMPORTANCE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportanceHeader {
    version: u32,
    kind: String,
    estimator: String,
    model_id: String,
    param_count: usize,
    degenerate_samples: usize,
    values_file: String,
    checksum: String,
}

/// An importance vector loaded from disk, with its provenance fields.
#[derive(Debug, Clone)]
pub struct StoredImportance {
    pub importance: Importance,
    pub estimator: String,
    pub model_id: String,
}

/// Writes `importance.json` + `values.f64` into `dir`.
pub fn save_importance(
    dir: &Path,
    importance: &Importance,
    estimator: Estimator,
    model_id: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob = f64s_to_le_bytes(&importance.values);
    let header = ImportanceHeader {
        version: IMPORTANCE_VERSION,
        kind: "importance".into(),
        estimator: estimator.id().into(),
        model_id: model_id.into(),
        param_count: importance.values.len(),
        degenerate_samples: importance.degenerate_samples,
        values_file: "values.f64".into(),
        checksum: sha256_hex(&[&blob]),
    };
    let json = serde_json::to_vec_pretty(&header)
        .map_err(|e| Error::json("importance header", e))?;
    write_bytes(&dir.join("importance.json"), &json)?;
    write_bytes(&dir.join("values.f64"), &blob)?;
    Ok(())
}

/// Loads an importance vector saved by [`save_importance`], verifying the
/// checksum and declared length.
pub fn load_importance(dir: &Path) -> Result<StoredImportance> {
    let header_path = dir.join("importance.json");
    let bytes = read_bytes(&header_path)?;
    let header: ImportanceHeader = serde_json::from_slice(&bytes)
        .map_err(|e| Error::json("importance header", e))?;
    if header.version != IMPORTANCE_VERSION || header.kind != "importance" {
        return Err(Error::corrupt(
            &header_path,
            format!("unsupported header (version {}, kind '{}')", header.version, header.kind),
        ));
    }
    let blob_path = dir.join(&header.values_file);
    let blob = read_bytes(&blob_path)?;
    if sha256_hex(&[&blob]) != header.checksum {
        return Err(Error::corrupt(&blob_path, "checksum mismatch"));
    }
    let values = le_bytes_to_f64s(&blob)?;
    if values.len() != header.param_count {
        return Err(Error::corrupt(
            &blob_path,
            format!("expected {} values, found {}", header.param_count, values.len()),
        ));
    }
    Ok(StoredImportance {
        importance: Importance {
            values,
            degenerate_samples: header.degenerate_samples,
        },
        estimator: header.estimator,
        model_id: header.model_id,
    })
}
