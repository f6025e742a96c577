//! Selective parameter dampening.
//!
//! Given a retain-set importance and a forget-set importance over the same
//! parameters, parameters whose forget importance exceeds `alpha` times
//! their retain importance are shrunk towards zero by
//! `beta = min(lambda * retain / forget, 1)`; everything else is left
//! bitwise untouched. `alpha = +inf` disables the edit entirely.
//!
//! The selection threshold can be derived from a search-ladder position
//! via [`percentile_from_siter`]: larger ladder values map to lower
//! percentiles of the retain/forget ratio distribution, i.e. more
//! aggressive edits.

use crate::error::{Error, Result};
use crate::importance::Importance;
use crate::nn::Model;
use crate::stats;

/// Forget-importance floor: parameters at or below this are never selected
/// and are excluded from the threshold's ratio distribution.
pub const FORGET_EPS: f64 = 1e-12;

/// Fixed-size bit set recording which parameters an edit touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    words: Vec<u64>,
    len: usize,
}

impl Bitmap {
    pub fn new(len: usize) -> Bitmap {
        Bitmap {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// True if every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Bitmap) -> bool {
        self.len == other.len
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }
}

/// Maps a search-ladder value to a ratio percentile:
/// `clamp(100 - log10(1 + 100 * s_iter), 0, 100)`.
pub fn percentile_from_siter(s_iter: f64) -> Result<f64> {
    if !(s_iter >= 0.0 && s_iter.is_finite()) {
        return Err(Error::Config(format!(
            "ladder value s_iter = {s_iter} must be finite and non-negative"
        )));
    }
    Ok((100.0 - (1.0 + 100.0 * s_iter).log10()).clamp(0.0, 100.0))
}

/// The `percentile`-th percentile (linear interpolation) of
/// `retain[i] / forget[i]` over parameters with `forget[i] > FORGET_EPS`.
pub fn select_alpha(retain: &[f64], forget: &[f64], percentile: f64) -> Result<f64> {
    if retain.len() != forget.len() {
        return Err(Error::Config(format!(
            "importance lengths differ: {} retain vs {} forget",
            retain.len(),
            forget.len()
        )));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Config(format!(
            "percentile {percentile} out of [0, 100]"
        )));
    }
    let ratios: Vec<f64> = retain
        .iter()
        .zip(forget)
        .filter(|&(_, &f)| f > FORGET_EPS)
        .map(|(&r, &f)| r / f)
        .collect();
    if ratios.is_empty() {
        return Err(Error::Degenerate(format!(
            "no parameter has forget importance above {FORGET_EPS}; cannot pick a threshold"
        )));
    }
    Ok(stats::percentile(&ratios, percentile))
}

/// A dampened model plus the set of parameters the edit selected.
#[derive(Debug, Clone)]
pub struct Dampened {
    pub model: Model,
    pub modified: Bitmap,
}

impl Dampened {
    pub fn modified_count(&self) -> usize {
        self.modified.count_ones()
    }
}

/// Applies the dampening rule, returning an edited copy of `model`.
///
/// Parameter `i` is selected iff `forget[i] > alpha * retain[i]` and
/// `forget[i] > FORGET_EPS`; its new value is
/// `min(lambda * retain[i] / forget[i], 1) * old`. Unselected parameters
/// are copied bitwise. `alpha = +inf` selects nothing.
pub fn dampen(
    model: &Model,
    retain: &Importance,
    forget: &Importance,
    alpha: f64,
    lambda: f64,
) -> Result<Dampened> {
    let dim = model.param_count();
    if retain.len() != dim || forget.len() != dim {
        return Err(Error::Config(format!(
            "importance lengths ({}, {}) do not match the {} model parameters",
            retain.len(),
            forget.len(),
            dim
        )));
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Config(format!(
            "selection threshold alpha = {alpha} must be non-negative"
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!(
            "dampening constant lambda = {lambda} must be positive and finite"
        )));
    }
    let mut modified = Bitmap::new(dim);
    let mut params = model.params.clone();
    if alpha.is_infinite() {
        let model = Model::from_params(model.spec().clone(), params)?;
        return Ok(Dampened { model, modified });
    }
    for i in 0..dim {
        let (r, f) = (retain.values[i], forget.values[i]);
        if f > FORGET_EPS && f > alpha * r {
            let beta = (lambda * r / f).min(1.0);
            params[i] *= beta;
            modified.set(i);
        }
    }
    let model = Model::from_params(model.spec().clone(), params)?;
    Ok(Dampened { model, modified })
}
