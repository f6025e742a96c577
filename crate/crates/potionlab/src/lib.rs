//! Desk-scale laboratory for corrective unlearning of data-poisoning attacks.
//!
//! The crate trains small dense/convolutional classifiers on synthetic image
//! data, injects classic poisoning attacks (BadNet corner patches, sinusoidal
//! overlays, moving triggers, label flips), and then *heals* the poisoned
//! model by selectively dampening parameters that matter much more to the
//! discovered poison samples than to the training set at large. The search
//! over dampening aggressiveness (PTN search) walks a geometric ladder until
//! the forget-set accuracy collapses below a safety threshold.
//!
//! Everything is `f64`, seeded, and deterministic: identical configs and
//! seeds produce bitwise-identical models, importances, search traces and
//! result rows, with or without the `parallel` feature.
//!
//! Module map:
//! - [`nn`]: tensors, layer specs, forward/backward, SGD training, model IO.
//! - [`data`]: datasets, views, synthetic blob generator, manifest IO.
//! - [`poison`]: attack specs, trigger application, scenario construction.
//! - [`importance`]: Fisher-diagonal and output-norm parameter importances,
//!   tail statistics, importance IO.
//! - [`dampening`]: the selective dampening edit and its percentile helpers.
//! - [`ptn`]: sequential and parallel PTN search over the dampening ladder.
//! - [`harness`]: scenario runner, unlearning methods, metrics, sweeps,
//!   caching, CSV/JSON emission.
//! - [`report`]: summary/curves/times tables derived from result CSVs.

pub mod dampening;
pub mod data;
pub mod error;
pub mod harness;
pub mod importance;
pub mod nn;
pub mod par;
pub mod poison;
pub mod ptn;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
