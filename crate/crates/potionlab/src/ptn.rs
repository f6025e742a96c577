//! Threshold search for poison unlearning.
//!
//! Dampening needs a selection threshold `alpha`; too timid leaves the
//! poison in place, too aggressive destroys the model. The search walks a
//! geometric ladder of aggressiveness values `s`, maps each to a ratio
//! percentile (see [`crate::dampening::percentile_from_siter`]), dampens a
//! *fresh copy of the original model* with the resulting `alpha`, and stops
//! as soon as the edited model's accuracy on the discovered forget set
//! drops to `rho` times the original model's. If the ladder is exhausted,
//! the best candidate seen (lowest forget accuracy, earliest tie) is
//! returned with an `Exhausted` status so callers can flag the run.
//!
//! With `wave > 1` the ladder is evaluated in waves of that many candidate
//! thresholds; candidates are independent, so waves parallelise cleanly,
//! and the winner — the first crossing in ladder order — is identical to
//! the sequential search's.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dampening::{dampen, percentile_from_siter, select_alpha, Bitmap, Dampened};
use crate::data::View;
use crate::error::{Error, Result};
use crate::importance::Importance;
use crate::nn::Model;
use crate::par;

fn default_rho() -> f64 {
    0.2
}

fn default_b_start() -> f64 {
    25.0
}

fn default_s_step() -> f64 {
    1.1
}

fn default_lambda() -> f64 {
    1.0
}

fn default_wave() -> usize {
    1
}

/// Search configuration. All fields have serde defaults, so a config file
/// may specify any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtnConfig {
    /// Stop once forget accuracy <= rho * original forget accuracy.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// The ladder starts at (|S_f| / |S_train|) * b_start.
    #[serde(default = "default_b_start")]
    pub b_start: f64,
    /// Geometric ladder ratio (> 1).
    #[serde(default = "default_s_step")]
    pub s_step: f64,
    /// Ladder ceiling; `None` means 1e6 * the starting value.
    #[serde(default)]
    pub s_max: Option<f64>,
    /// Dampening constant handed through to the edit rule.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Candidate thresholds evaluated per wave (1 = strictly sequential).
    #[serde(default = "default_wave")]
    pub wave: usize,
}

impl Default for PtnConfig {
    fn default() -> Self {
        PtnConfig {
            rho: default_rho(),
            b_start: default_b_start(),
            s_step: default_s_step(),
            s_max: None,
            lambda: default_lambda(),
            wave: default_wave(),
        }
    }
}

impl PtnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "search rho = {} must lie in [0, 1]",
                self.rho
            )));
        }
        if !(self.b_start > 0.0 && self.b_start.is_finite()) {
            return Err(Error::Config(format!(
                "search b_start = {} must be positive and finite",
                self.b_start
            )));
        }
        if !(self.s_step > 1.0 && self.s_step.is_finite()) {
            return Err(Error::Config(format!(
                "search s_step = {} must be greater than 1",
                self.s_step
            )));
        }
        if let Some(s_max) = self.s_max {
            if !(s_max > 0.0 && s_max.is_finite()) {
                return Err(Error::Config(format!(
                    "search s_max = {s_max} must be positive and finite"
                )));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "search lambda = {} must be positive and finite",
                self.lambda
            )));
        }
        if self.wave == 0 {
            return Err(Error::Config("search wave must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    /// The forget-accuracy target was reached.
    Converged,
    /// The ladder ran out; the outcome holds the best candidate seen.
    Exhausted,
}

/// One evaluated candidate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub s_iter: f64,
    pub percentile: f64,
    pub alpha: f64,
    pub modified_count: usize,
    pub forget_accuracy: f64,
    /// Wall-clock for this candidate (dampen + evaluate), microseconds.
    pub micros: u64,
}

/// The search result: the chosen edited model plus the full ladder trace.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub model: Model,
    pub modified: Bitmap,
    pub status: SearchStatus,
    /// Index into `trace` of the candidate the model was taken from.
    pub selected_iteration: usize,
    /// Forget accuracy of the unedited model (the stop target is
    /// `rho` times this).
    pub baseline_forget_accuracy: f64,
    pub s_start: f64,
    pub trace: Vec<IterationRecord>,
}

impl SearchOutcome {
    /// Trace entry of the selected candidate.
    pub fn selected(&self) -> &IterationRecord {
        &self.trace[self.selected_iteration]
    }
}

struct Candidate {
    record: IterationRecord,
    edit: Dampened,
}

fn evaluate_candidate(
    model: &Model,
    retain: &Importance,
    forget: &Importance,
    forget_view: &View,
    iteration: usize,
    s_iter: f64,
    lambda: f64,
) -> Result<Candidate> {
    let start = Instant::now();
    let percentile = percentile_from_siter(s_iter)?;
    let alpha = select_alpha(&retain.values, &forget.values, percentile)?;
    let edit = dampen(model, retain, forget, alpha, lambda)?;
    let forget_accuracy = edit.model.evaluate_accuracy(forget_view)?;
    let record = IterationRecord {
        iteration,
        s_iter,
        percentile,
        alpha,
        modified_count: edit.modified.count_ones(),
        forget_accuracy,
        micros: start.elapsed().as_micros() as u64,
    };
    Ok(Candidate { record, edit })
}

/// Runs the threshold search. `forget_view` must be a view of the training
/// set restricted to the discovered samples, labelled with the labels the
/// model was trained on; its dataset length supplies |S_train| for the
/// ladder start.
pub fn search(
    model: &Model,
    retain: &Importance,
    forget: &Importance,
    forget_view: &View,
    cfg: &PtnConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if forget_view.is_empty() {
        return Err(Error::Degenerate("search on an empty forget set".into()));
    }
    let train_size = forget_view.dataset().len();
    let s_start = forget_view.len() as f64 / train_size as f64 * cfg.b_start;
    let s_max = cfg.s_max.unwrap_or(1e6 * s_start);
    if s_max < s_start {
        return Err(Error::Config(format!(
            "search s_max = {s_max} is below the ladder start {s_start}"
        )));
    }
    let baseline = model.evaluate_accuracy(forget_view)?;
    let threshold = cfg.rho * baseline;

    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut best: Option<(f64, usize, Dampened)> = None;
    let mut iteration = 0usize;
    loop {
        // Ladder values for the next wave, stopping at the ceiling.
        let mut ladder = Vec::with_capacity(cfg.wave);
        for k in 0..cfg.wave {
            let s = s_start * cfg.s_step.powi((iteration + k) as i32);
            if s > s_max {
                break;
            }
            ladder.push(s);
        }
        if ladder.is_empty() {
            break;
        }
        let wave: Vec<Result<Candidate>> = par::map_collect(ladder.len(), |k| {
            evaluate_candidate(
                model,
                retain,
                forget,
                forget_view,
                iteration + k,
                ladder[k],
                cfg.lambda,
            )
        });
        // Scan in ladder order so the outcome matches the sequential walk.
        for result in wave {
            let candidate = result?;
            let acc = candidate.record.forget_accuracy;
            let index = trace.len();
            trace.push(candidate.record);
            if acc <= threshold {
                return Ok(SearchOutcome {
                    model: candidate.edit.model,
                    modified: candidate.edit.modified,
                    status: SearchStatus::Converged,
                    selected_iteration: index,
                    baseline_forget_accuracy: baseline,
                    s_start,
                    trace,
                });
            }
            let better = match &best {
                None => true,
                Some((best_acc, _, _)) => acc < *best_acc,
            };
            if better {
                best = Some((acc, index, candidate.edit));
            }
        }
        iteration += cfg.wave;
    }
    let (_, selected_iteration, edit) =
        best.expect("ladder holds at least one value since s_start <= s_max");
    Ok(SearchOutcome {
        model: edit.model,
        modified: edit.modified,
        status: SearchStatus::Exhausted,
        selected_iteration,
        baseline_forget_accuracy: baseline,
        s_start,
        trace,
    })
}
