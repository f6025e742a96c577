//! End-to-end benchmark scenarios: train a model on poisoned data, apply an
//! unlearning method, and score it against a retrained oracle.
//!
//! A scenario runs in phases — data, poison, train, oracle, unlearn,
//! metrics — and any failure carries its phase name. The two headline
//! metrics are *poison healed* (clean-label accuracy on triggered test
//! images, as a percentage of the oracle retrained without any manipulated
//! sample) and *model damage* (clean-test accuracy change against the
//! untouched starting model, in points). Trained models and importance
//! vectors are cached on disk keyed by content, so sweeps re-train and
//! re-differentiate as little as possible; cache writes go through a
//! temp-dir rename, first writer wins.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dampening::{dampen, Bitmap};
use crate::data::{
    derive_seed, generate_blobs, load_dataset, rng_from, sha256_hex, BlobSpec, Dataset,
    LabelMode, PoisonedDataset, View,
};
use crate::error::{Error, Result};
use crate::importance::{
    compute, load_importance, save_importance, Estimator, Importance,
};
use crate::nn::{
    load_model, model_content_id, save_model, train, InputShape, LayerSpec, Model, ModelSpec,
    TrainConfig,
};
use crate::poison::{build_scenario, AttackSpec, Discovery, Scenario, ScenarioSpec};
use crate::ptn::{search, IterationRecord, PtnConfig, SearchStatus};
use crate::{par, stats};

use rand::seq::SliceRandom;

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

/// An unlearning method (or control) the harness can apply to a poisoned
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Leave the poisoned model untouched (control row).
    None,
    /// Exact unlearning: retrain from scratch on the training set minus the
    /// *discovered* samples only.
    Eu,
    /// Fixed grid search over dampening strengths with Fisher importances,
    /// selected by an equally weighted forget-drop / validation-change score.
    SsdGrid,
    /// Threshold search driven by Fisher-diagonal importances.
    PtnSsd,
    /// Threshold search driven by squared-output-norm importances.
    PtnLf,
    /// Threshold search driven by plain-output-norm importances.
    PtnXlf,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::None,
        Method::Eu,
        Method::SsdGrid,
        Method::PtnSsd,
        Method::PtnLf,
        Method::PtnXlf,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Eu => "eu",
            Method::SsdGrid => "ssd_grid",
            Method::PtnSsd => "ptn_ssd",
            Method::PtnLf => "ptn_lf",
            Method::PtnXlf => "ptn_xlf",
        }
    }

    /// Importance estimator the method runs on, if it dampens at all.
    pub fn estimator(&self) -> Option<Estimator> {
        match self {
            Method::None | Method::Eu => None,
            Method::SsdGrid | Method::PtnSsd => Some(Estimator::Fim),
            Method::PtnLf => Some(Estimator::Lf),
            Method::PtnXlf => Some(Estimator::Xlf),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}' (expected one of none, eu, ssd_grid, ptn_ssd, ptn_lf, ptn_xlf)"
                ))
            })
    }
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// Where the clean dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Built-in Gaussian-blob generator; no files involved.
    Synthetic { spec: BlobSpec },
    /// A dataset directory written by `save_dataset`.
    Path { path: PathBuf },
}

impl DatasetSource {
    pub fn realise(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic { spec } => {
                let (train, test) = generate_blobs(spec)?;
                let json =
                    serde_json::to_vec(spec).map_err(|e| Error::json("blob spec", e))?;
                let id = format!("blobs-{}", &sha256_hex(&[&json])[..16]);
                Ok(Dataset { train, test, id })
            }
            DatasetSource::Path { path } => load_dataset(path),
        }
    }
}

/// Optimiser settings; the shuffle seed is derived from the scenario's train
/// seed so a config carries exactly one seed per concern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl TrainSettings {
    fn to_config(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            shuffle_seed,
        }
    }
}

/// The four independent random streams of a scenario. Model init and batch
/// shuffling derive from `train`; the poison placement from `poison`; the
/// forget-set draw from `discovery`; method-internal randomness (the grid
/// baseline's validation split) from `search`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub train: u64,
    pub poison: u64,
    pub discovery: u64,
    pub search: u64,
}

impl Seeds {
    /// Expands one replicate seed into the four per-concern seeds; used by
    /// sweeps so "5 seeds" means five values of a single knob.
    pub fn replicate(seed: u64) -> Seeds {
        Seeds {
            train: derive_seed(seed, "train"),
            poison: derive_seed(seed, "poison"),
            discovery: derive_seed(seed, "discovery"),
            search: derive_seed(seed, "search"),
        }
    }
}

/// Everything needed to run one scenario end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dataset: DatasetSource,
    /// Hidden layer widths of the MLP (each followed by a ReLU); empty means
    /// a single linear classifier.
    pub hidden: Vec<usize>,
    pub train: TrainSettings,
    pub attack: AttackSpec,
    pub sm_size: usize,
    pub discovery: Discovery,
    pub method: Method,
    #[serde(default)]
    pub ptn: PtnConfig,
    pub seeds: Seeds,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        // Dummy shuffle seed: only the numeric hyperparameters are checked.
        self.train.to_config(0).validate()?;
        self.ptn.validate()?;
        if self.sm_size == 0 {
            return Err(Error::Config("sm_size must be > 0".into()));
        }
        Ok(())
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            attack: self.attack.clone(),
            sm_size: self.sm_size,
            discovery: self.discovery,
            poison_seed: self.seeds.poison,
            discovery_seed: self.seeds.discovery,
            allow_target_class_in_sm: false,
        }
    }

    pub fn model_spec(&self, dataset: &Dataset) -> ModelSpec {
        let img = &dataset.train.images;
        let input = InputShape {
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
        };
        let mut layers = Vec::new();
        let mut inputs = img.sample_len();
        for &width in &self.hidden {
            layers.push(LayerSpec::Dense {
                inputs,
                outputs: width,
            });
            layers.push(LayerSpec::Relu);
            inputs = width;
        }
        layers.push(LayerSpec::Dense {
            inputs,
            outputs: dataset.train.classes as usize,
        });
        ModelSpec {
            input,
            classes: dataset.train.classes,
            seed: derive_seed(self.seeds.train, "init"),
            layers,
        }
    }
}

// ---------------------------------------------------------------------------
// Content-addressed cache
// ---------------------------------------------------------------------------

/// Disk cache for trained models and importance vectors. A `None` root
/// disables persistence (everything is recomputed in memory).
#[derive(Debug, Clone)]
pub struct Cache {
    root: Option<PathBuf>,
}

impl Cache {
    pub fn new(root: Option<PathBuf>) -> Self {
        Cache { root }
    }

    pub fn disabled() -> Self {
        Cache { root: None }
    }

    fn slot(&self, kind: &str, key: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(kind).join(key))
    }

    /// Publishes `dir` (a fully written temp dir) at `target`. Losing the
    /// rename race is fine: the winner wrote identical content, by
    /// determinism.
    fn publish(tmp: &Path, target: &Path) -> Result<()> {
        if target.exists() {
            let _ = std::fs::remove_dir_all(tmp);
            return Ok(());
        }
        match std::fs::rename(tmp, target) {
            Ok(()) => Ok(()),
            Err(_) if target.exists() => {
                let _ = std::fs::remove_dir_all(tmp);
                Ok(())
            }
            Err(e) => Err(Error::io(target, e)),
        }
    }

    fn tmp_sibling(target: &Path) -> Result<PathBuf> {
        let parent = target
            .parent()
            .expect("cache slot always has a parent directory");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let nonce = std::process::id();
        let tmp = parent.join(format!(
            ".tmp-{nonce}-{}",
            target.file_name().unwrap().to_string_lossy()
        ));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(tmp)
    }

    fn model(&self, key: &str) -> Result<Option<Model>> {
        match self.slot("models", key) {
            Some(dir) if dir.exists() => load_model(&dir).map(Some),
            _ => Ok(None),
        }
    }

    fn store_model(&self, key: &str, model: &Model) -> Result<()> {
        let Some(dir) = self.slot("models", key) else {
            return Ok(());
        };
        if dir.exists() {
            return Ok(());
        }
        let tmp = Self::tmp_sibling(&dir)?;
        save_model(&tmp, model)?;
        Self::publish(&tmp, &dir)
    }

    fn importance(&self, key: &str, estimator: Estimator, model_id: &str) -> Result<Option<Importance>> {
        let Some(dir) = self.slot("importance", key) else {
            return Ok(None);
        };
        if !dir.exists() {
            return Ok(None);
        }
        let stored = load_importance(&dir)?;
        if stored.estimator != estimator.id() || stored.model_id != model_id {
            return Err(Error::corrupt(
                &dir,
                format!(
                    "cache slot holds {}/{} but {}/{} was requested",
                    stored.estimator,
                    stored.model_id,
                    estimator.id(),
                    model_id
                ),
            ));
        }
        Ok(Some(stored.importance))
    }

    fn store_importance(
        &self,
        key: &str,
        importance: &Importance,
        estimator: Estimator,
        model_id: &str,
    ) -> Result<()> {
        let Some(dir) = self.slot("importance", key) else {
            return Ok(());
        };
        if dir.exists() {
            return Ok(());
        }
        let tmp = Self::tmp_sibling(&dir)?;
        save_importance(&tmp, importance, estimator, model_id)?;
        Self::publish(&tmp, &dir)
    }
}

fn indices_digest(indices: &[usize]) -> String {
    let bytes: Vec<u8> = indices
        .iter()
        .flat_map(|&i| (i as u64).to_le_bytes())
        .collect();
    sha256_hex(&[&bytes])
}

/// Cache key for a trained model: what it saw (dataset + poison + removed
/// rows) and how it was trained (spec + optimiser settings).
fn model_key(
    tag: &str,
    dataset_id: &str,
    attack: &AttackSpec,
    sm: &[usize],
    removed: &[usize],
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<String> {
    let attack_json = serde_json::to_vec(attack).map_err(|e| Error::json("attack spec", e))?;
    let spec_json = serde_json::to_vec(spec).map_err(|e| Error::json("model spec", e))?;
    let cfg_json = serde_json::to_vec(cfg).map_err(|e| Error::json("train config", e))?;
    Ok(sha256_hex(&[
        tag.as_bytes(),
        dataset_id.as_bytes(),
        &attack_json,
        indices_digest(sm).as_bytes(),
        indices_digest(removed).as_bytes(),
        &spec_json,
        &cfg_json,
    ])[..32]
        .to_string())
}

fn importance_key(model_id: &str, dataset_id: &str, estimator: Estimator, view: &View) -> String {
    sha256_hex(&[
        model_id.as_bytes(),
        dataset_id.as_bytes(),
        estimator.id().as_bytes(),
        indices_digest(view.indices()).as_bytes(),
    ])[..32]
        .to_string()
}

/// Trains (or loads) a model on the given view.
fn cached_train(cache: &Cache, key: &str, spec: &ModelSpec, view: &View, cfg: &TrainConfig) -> Result<Model> {
    if let Some(model) = cache.model(key)? {
        return Ok(model);
    }
    let mut model = Model::build(spec.clone())?;
    train(&mut model, view, cfg)?;
    cache.store_model(key, &model)?;
    Ok(model)
}

/// Computes (or loads) an importance vector for `model` over `view`.
fn cached_importance(
    cache: &Cache,
    dataset_id: &str,
    estimator: Estimator,
    model: &Model,
    model_id: &str,
    view: &View,
) -> Result<Importance> {
    let key = importance_key(model_id, dataset_id, estimator, view);
    if let Some(imp) = cache.importance(&key, estimator, model_id)? {
        return Ok(imp);
    }
    let imp = compute(estimator, model, view)?;
    cache.store_importance(&key, &imp, estimator, model_id)?;
    Ok(imp)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Percentage of the poison healed: clean-label accuracy on triggered test
/// images, normalised by the oracle retrained without any manipulated
/// sample (oracle = 100 by construction).
pub fn poison_healed(model: &Model, oracle: &Model, test_poisoned: &PoisonedDataset) -> Result<f64> {
    let view = View::full(test_poisoned, LabelMode::Clean);
    let denom = oracle.evaluate_accuracy(&view)?;
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "oracle accuracy on the triggered test split is zero".into(),
        ));
    }
    Ok(100.0 * model.evaluate_accuracy(&view)? / denom)
}

/// Clean-test accuracy change in points relative to the untouched starting
/// model; negative values mean the edit damaged the model.
pub fn model_damage(model: &Model, original: &Model, test_clean: &PoisonedDataset) -> Result<f64> {
    let view = View::full(test_clean, LabelMode::Clean);
    Ok(100.0 * (model.evaluate_accuracy(&view)? - original.evaluate_accuracy(&view)?))
}

// ---------------------------------------------------------------------------
// Grid-search baseline
// ---------------------------------------------------------------------------

/// Dampening strengths of the fixed-grid baseline.
pub const GRID_ALPHAS: [f64; 10] = [0.1, 1.0, 10.0, 50.0, 100.0, 500.0, 1000.0, 1e4, 1e5, 1e6];
/// The grid's weight-decay values, as multiples of each alpha.
pub const GRID_LAMBDA_FACTORS: [f64; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];

/// One evaluated grid point, kept for re-scoring and the trace sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub lambda: f64,
    pub modified_count: usize,
    pub forget_accuracy: f64,
    pub validation_accuracy: f64,
    pub score: f64,
}

struct GridOutcome {
    model: Model,
    modified: Bitmap,
    alpha: f64,
    lambda: f64,
    points: Vec<GridPoint>,
}

/// Evaluates all grid pairs and picks the best equally weighted average of
/// forget-accuracy drop and validation-accuracy change (earliest on ties).
fn ssd_grid(
    model: &Model,
    retain: &Importance,
    forget: &Importance,
    forget_view: &View,
    validation_view: &View,
) -> Result<GridOutcome> {
    let forget_before = model.evaluate_accuracy(forget_view)?;
    let validation_before = model.evaluate_accuracy(validation_view)?;
    let pairs: Vec<(f64, f64)> = GRID_ALPHAS
        .iter()
        .flat_map(|&a| GRID_LAMBDA_FACTORS.iter().map(move |&m| (a, m * a)))
        .collect();
    let evaluated: Vec<Result<(GridPoint, Model, Bitmap)>> = par::map_collect(pairs.len(), |k| {
        let (alpha, lambda) = pairs[k];
        let damped = dampen(model, retain, forget, alpha, lambda)?;
        let forget_accuracy = damped.model.evaluate_accuracy(forget_view)?;
        let validation_accuracy = damped.model.evaluate_accuracy(validation_view)?;
        let score = 0.5 * (forget_before - forget_accuracy)
            + 0.5 * (validation_accuracy - validation_before);
        Ok((
            GridPoint {
                alpha,
                lambda,
                modified_count: damped.modified.count_ones(),
                forget_accuracy,
                validation_accuracy,
                score,
            },
            damped.model,
            damped.modified,
        ))
    });
    let mut best: Option<(usize, Model, Bitmap)> = None;
    let mut points: Vec<GridPoint> = Vec::with_capacity(pairs.len());
    for (k, item) in evaluated.into_iter().enumerate() {
        let (point, damped_model, modified) = item?;
        let better = match &best {
            None => true,
            Some((idx, _, _)) => point.score > points[*idx].score,
        };
        points.push(point);
        if better {
            best = Some((k, damped_model, modified));
        }
    }
    let (idx, model, modified) = best.expect("grid is non-empty");
    Ok(GridOutcome {
        model,
        modified,
        alpha: points[idx].alpha,
        lambda: points[idx].lambda,
        points,
    })
}

/// The grid baseline's validation split: a seeded 10% subset of the training
/// rows, scored with clean labels, used for the selection metric only.
fn validation_indices(train_len: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..train_len).collect();
    all.shuffle(&mut rng_from(derive_seed(seed, "validation")));
    let keep = (train_len / 10).max(1);
    all.truncate(keep);
    all
}

// ---------------------------------------------------------------------------
// Scenario results
// ---------------------------------------------------------------------------

/// Everything measured about one scenario run. The CSV row is a fixed
/// projection of this; the JSON sidecar keeps the whole struct including
/// search traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub method: Method,
    pub attack: String,
    pub sm_size: usize,
    pub discovery: String,
    pub healed_pct: f64,
    pub damage_pts: f64,
    pub forget_accuracy_before: f64,
    pub forget_accuracy_after: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub modified_count: Option<usize>,
    pub iterations: Option<usize>,
    pub search_status: Option<SearchStatus>,
    pub t_importance_s: f64,
    pub t_search_s: f64,
    pub t_total_s: f64,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridPoint>>,
}

/// Fixed CSV column order; the timing columns are measurements, everything
/// else must be bitwise-reproducible for identical configs.
pub const CSV_COLUMNS: [&str; 18] = [
    "scenario_id",
    "method",
    "attack",
    "sm_size",
    "discovery",
    "healed_pct",
    "damage_pts",
    "alpha",
    "lambda",
    "modified_count",
    "iterations",
    "t_importance_s",
    "t_search_s",
    "t_total_s",
    "seed_train",
    "seed_poison",
    "seed_discovery",
    "seed_search",
];

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ScenarioResult {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// The row's fields in [`CSV_COLUMNS`] order. Floats use the shortest
    /// round-trip form; absent fields are empty.
    pub fn csv_fields(&self) -> [String; 18] {
        [
            self.scenario_id.clone(),
            self.method.id().to_string(),
            self.attack.clone(),
            self.sm_size.to_string(),
            self.discovery.clone(),
            self.healed_pct.to_string(),
            self.damage_pts.to_string(),
            fmt_opt_f64(self.alpha),
            fmt_opt_f64(self.lambda),
            fmt_opt_usize(self.modified_count),
            fmt_opt_usize(self.iterations),
            self.t_importance_s.to_string(),
            self.t_search_s.to_string(),
            self.t_total_s.to_string(),
            self.seeds.train.to_string(),
            self.seeds.poison.to_string(),
            self.seeds.discovery.to_string(),
            self.seeds.search.to_string(),
        ]
    }

    /// One CSV line (no terminator); fields never need quoting.
    pub fn csv_row(&self) -> String {
        self.csv_fields().join(",")
    }
}

/// Appends result rows to `path`, writing the header first when the file
/// does not exist yet.
pub fn append_results_csv(path: &Path, results: &[ScenarioResult]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let fail = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    if fresh {
        writer.write_record(CSV_COLUMNS).map_err(fail)?;
    }
    for r in results {
        writer.write_record(r.csv_fields()).map_err(fail)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes the full results (traces included) as a JSON array.
pub fn write_trace_sidecar(path: &Path, results: &[ScenarioResult]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let json = serde_json::to_vec_pretty(results).map_err(|e| Error::json("trace sidecar", e))?;
    crate::data::write_bytes(path, &json)
}

// ---------------------------------------------------------------------------
// Running one scenario
// ---------------------------------------------------------------------------

fn complement(n: usize, removed: &[usize]) -> Vec<usize> {
    let mut flags = vec![false; n];
    for &i in removed {
        flags[i] = true;
    }
    (0..n).filter(|&i| !flags[i]).collect()
}

struct MethodOutput {
    model: Model,
    alpha: Option<f64>,
    lambda: Option<f64>,
    modified_count: Option<usize>,
    iterations: Option<usize>,
    search_status: Option<SearchStatus>,
    trace: Option<Vec<IterationRecord>>,
    grid: Option<Vec<GridPoint>>,
    t_importance_s: f64,
    t_search_s: f64,
}

impl MethodOutput {
    fn plain(model: Model, t_search_s: f64) -> Self {
        MethodOutput {
            model,
            alpha: None,
            lambda: None,
            modified_count: None,
            iterations: None,
            search_status: None,
            trace: None,
            grid: None,
            t_importance_s: 0.0,
            t_search_s,
        }
    }
}

fn apply_method(
    cfg: &ScenarioConfig,
    cache: &Cache,
    dataset: &Dataset,
    scenario: &Scenario,
    spec: &ModelSpec,
    tcfg: &TrainConfig,
    poisoned: &Model,
) -> Result<MethodOutput> {
    let forget_view = View::subset(&scenario.train, scenario.meta.sf.clone(), LabelMode::Assigned);
    match cfg.method {
        Method::None => Ok(MethodOutput::plain(poisoned.clone(), 0.0)),
        Method::Eu => {
            let t = Instant::now();
            let keep = complement(scenario.train.len(), &scenario.meta.sf);
            let key = model_key(
                "eu",
                &dataset.id,
                &cfg.attack,
                &scenario.meta.sm,
                &scenario.meta.sf,
                spec,
                tcfg,
            )?;
            let view = View::subset(&scenario.train, keep, LabelMode::Assigned);
            let model = cached_train(cache, &key, spec, &view, tcfg)?;
            Ok(MethodOutput::plain(model, t.elapsed().as_secs_f64()))
        }
        Method::SsdGrid | Method::PtnSsd | Method::PtnLf | Method::PtnXlf => {
            let estimator = cfg.method.estimator().expect("dampening method");
            let model_id = model_content_id(poisoned);
            let retain_view = View::full(&scenario.train, LabelMode::Assigned);
            let t_imp = Instant::now();
            let retain =
                cached_importance(cache, &dataset.id, estimator, poisoned, &model_id, &retain_view)?;
            let forget =
                cached_importance(cache, &dataset.id, estimator, poisoned, &model_id, &forget_view)?;
            let t_importance_s = t_imp.elapsed().as_secs_f64();

            let t_search = Instant::now();
            if cfg.method == Method::SsdGrid {
                let validation = View::subset(
                    &scenario.train,
                    validation_indices(scenario.train.len(), cfg.seeds.search),
                    LabelMode::Clean,
                );
                let grid = ssd_grid(poisoned, &retain, &forget, &forget_view, &validation)?;
                Ok(MethodOutput {
                    model: grid.model,
                    alpha: Some(grid.alpha),
                    lambda: Some(grid.lambda),
                    modified_count: Some(grid.modified.count_ones()),
                    iterations: Some(grid.points.len()),
                    search_status: None,
                    trace: None,
                    grid: Some(grid.points),
                    t_importance_s,
                    t_search_s: t_search.elapsed().as_secs_f64(),
                })
            } else {
                let outcome = search(poisoned, &retain, &forget, &forget_view, &cfg.ptn)?;
                let selected = outcome.selected().clone();
                Ok(MethodOutput {
                    model: outcome.model,
                    alpha: Some(selected.alpha),
                    lambda: Some(cfg.ptn.lambda),
                    modified_count: Some(outcome.modified.count_ones()),
                    iterations: Some(outcome.trace.len()),
                    search_status: Some(outcome.status),
                    trace: Some(outcome.trace),
                    grid: None,
                    t_importance_s,
                    t_search_s: t_search.elapsed().as_secs_f64(),
                })
            }
        }
    }
}

/// Runs one scenario end to end: build the poisoned data, train (or load)
/// the poisoned model and the all-poison-removed oracle, apply the
/// configured method, and score healing and damage on the held-out test
/// splits. Deterministic apart from the timing fields.
pub fn run_scenario(cfg: &ScenarioConfig, cache: &Cache) -> Result<ScenarioResult> {
    let t_total = Instant::now();
    cfg.validate().map_err(|e| Error::phase("config", e))?;
    let dataset = cfg.dataset.realise().map_err(|e| Error::phase("data", e))?;
    let scenario = build_scenario(&dataset, &cfg.scenario_spec())
        .map_err(|e| Error::phase("poison", e))?;
    let spec = cfg.model_spec(&dataset);
    let tcfg = cfg.train.to_config(derive_seed(cfg.seeds.train, "shuffle"));

    let full_view = View::full(&scenario.train, LabelMode::Assigned);
    let poisoned_key = model_key("poisoned", &dataset.id, &cfg.attack, &scenario.meta.sm, &[], &spec, &tcfg)?;
    let poisoned = cached_train(cache, &poisoned_key, &spec, &full_view, &tcfg)
        .map_err(|e| Error::phase("train", e))?;

    let oracle_keep = complement(scenario.train.len(), &scenario.meta.sm);
    let oracle_key = model_key(
        "oracle",
        &dataset.id,
        &cfg.attack,
        &scenario.meta.sm,
        &scenario.meta.sm,
        &spec,
        &tcfg,
    )?;
    let oracle_view = View::subset(&scenario.train, oracle_keep, LabelMode::Assigned);
    let oracle = cached_train(cache, &oracle_key, &spec, &oracle_view, &tcfg)
        .map_err(|e| Error::phase("oracle", e))?;

    let output = apply_method(cfg, cache, &dataset, &scenario, &spec, &tcfg, &poisoned)
        .map_err(|e| Error::phase("unlearn", e))?;

    let forget_view = View::subset(&scenario.train, scenario.meta.sf.clone(), LabelMode::Assigned);
    let healed_pct = poison_healed(&output.model, &oracle, &scenario.test_poisoned)
        .map_err(|e| Error::phase("metrics", e))?;
    let damage_pts = model_damage(&output.model, &poisoned, &scenario.test_clean)
        .map_err(|e| Error::phase("metrics", e))?;
    let forget_accuracy_before = poisoned
        .evaluate_accuracy(&forget_view)
        .map_err(|e| Error::phase("metrics", e))?;
    let forget_accuracy_after = output
        .model
        .evaluate_accuracy(&forget_view)
        .map_err(|e| Error::phase("metrics", e))?;

    Ok(ScenarioResult {
        scenario_id: scenario.meta.id.clone(),
        method: cfg.method,
        attack: cfg.attack.kind_name().to_string(),
        sm_size: cfg.sm_size,
        discovery: cfg.discovery.label(),
        healed_pct,
        damage_pts,
        forget_accuracy_before,
        forget_accuracy_after,
        alpha: output.alpha,
        lambda: output.lambda,
        modified_count: output.modified_count,
        iterations: output.iterations,
        search_status: output.search_status,
        t_importance_s: output.t_importance_s,
        t_search_s: output.t_search_s,
        t_total_s: t_total.elapsed().as_secs_f64(),
        seeds: cfg.seeds,
        trace: output.trace,
        grid: output.grid,
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// A cross-product of scenario axes over a base config. Absent axes keep the
/// base value; `seeds` lists replicate seeds expanded via
/// [`Seeds::replicate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub sm_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub discoveries: Option<Vec<Discovery>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub rhos: Option<Vec<f64>>,
    #[serde(default)]
    pub s_steps: Option<Vec<f64>>,
}

impl SweepSpec {
    /// Expands the cross-product in a fixed order (replicate, sm, discovery,
    /// rho, s_step, method); the order defines the result row order.
    pub fn expand(&self) -> Vec<ScenarioConfig> {
        let seeds: Vec<Seeds> = match &self.seeds {
            Some(list) => list.iter().map(|&s| Seeds::replicate(s)).collect(),
            None => vec![self.base.seeds],
        };
        let sm_sizes = self.sm_sizes.clone().unwrap_or(vec![self.base.sm_size]);
        let discoveries = self.discoveries.clone().unwrap_or(vec![self.base.discovery]);
        let rhos = self.rhos.clone().unwrap_or(vec![self.base.ptn.rho]);
        let s_steps = self.s_steps.clone().unwrap_or(vec![self.base.ptn.s_step]);
        let methods = self.methods.clone().unwrap_or(vec![self.base.method]);
        let mut out = Vec::new();
        for &seed in &seeds {
            for &sm_size in &sm_sizes {
                for &discovery in &discoveries {
                    for &rho in &rhos {
                        for &s_step in &s_steps {
                            for &method in &methods {
                                let mut cfg = self.base.clone();
                                cfg.seeds = seed;
                                cfg.sm_size = sm_size;
                                cfg.discovery = discovery;
                                cfg.ptn.rho = rho;
                                cfg.ptn.s_step = s_step;
                                cfg.method = method;
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// A scenario that failed mid-sweep, flagged and skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepFailure {
    pub method: Method,
    pub sm_size: usize,
    pub discovery: String,
    pub seeds: Seeds,
    pub error: String,
}

/// Runs every expanded scenario, sharing the cache. Failures are collected,
/// not fatal; successful rows keep the expansion order.
pub fn sweep(spec: &SweepSpec, cache: &Cache) -> (Vec<ScenarioResult>, Vec<SweepFailure>) {
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for cfg in spec.expand() {
        match run_scenario(&cfg, cache) {
            Ok(row) => results.push(row),
            Err(e) => failures.push(SweepFailure {
                method: cfg.method,
                sm_size: cfg.sm_size,
                discovery: cfg.discovery.label(),
                seeds: cfg.seeds,
                error: e.to_string(),
            }),
        }
    }
    (results, failures)
}

/// Mean and sample standard deviation of a result column, for reports.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    (stats::mean(values), stats::sample_std(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Images, Split};
    use crate::nn::InputShape;

    fn blob_source() -> DatasetSource {
        DatasetSource::Synthetic {
            spec: BlobSpec {
                classes: 3,
                train: 200,
                test: 40,
                height: 8,
                width: 8,
                channels: 1,
                seed: 11,
            },
        }
    }

    fn base_config(method: Method) -> ScenarioConfig {
        ScenarioConfig {
            dataset: blob_source(),
            hidden: vec![16],
            train: TrainSettings {
                epochs: 30,
                batch_size: 16,
                learning_rate: 0.2,
                momentum: 0.9,
            },
            attack: AttackSpec::Badnet {
                target_class: 1,
                patch_fraction: 0.06,
            },
            sm_size: 6,
            discovery: Discovery::Fraction { fraction: 1.0 },
            method,
            ptn: PtnConfig::default(),
            seeds: Seeds {
                train: 1,
                poison: 2,
                discovery: 3,
                search: 4,
            },
        }
    }

    fn mask_timings(row: &str) -> String {
        let mut fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), CSV_COLUMNS.len());
        for (i, name) in CSV_COLUMNS.iter().enumerate() {
            if name.starts_with("t_") {
                fields[i] = "-";
            }
        }
        fields.join(",")
    }

    #[test]
    fn untouched_control_has_exactly_zero_damage() {
        let cfg = base_config(Method::None);
        let row = run_scenario(&cfg, &Cache::disabled()).unwrap();
        assert_eq!(row.damage_pts, 0.0);
        assert!(row.healed_pct.is_finite() && row.healed_pct >= 0.0);
        assert!(row.healed_pct < 100.0, "trigger should survive the control");
        assert_eq!(row.forget_accuracy_before, row.forget_accuracy_after);
        assert!(row.alpha.is_none());
        assert!(row.lambda.is_none());
        assert!(row.modified_count.is_none());
        assert!(row.iterations.is_none());
        assert_eq!(row.attack, "badnet");
        assert_eq!(row.discovery, "frac:1");
    }

    #[test]
    fn oracle_scores_perfectly_against_itself() {
        let cfg = base_config(Method::None);
        let dataset = cfg.dataset.realise().unwrap();
        let scenario = build_scenario(&dataset, &cfg.scenario_spec()).unwrap();
        let spec = cfg.model_spec(&dataset);
        let tcfg = cfg.train.to_config(derive_seed(cfg.seeds.train, "shuffle"));
        let keep = complement(scenario.train.len(), &scenario.meta.sm);
        let view = View::subset(&scenario.train, keep, LabelMode::Assigned);
        let mut oracle = Model::build(spec).unwrap();
        train(&mut oracle, &view, &tcfg).unwrap();
        let healed = poison_healed(&oracle, &oracle, &scenario.test_poisoned).unwrap();
        assert_eq!(healed, 100.0);
        let damage = model_damage(&oracle, &oracle, &scenario.test_clean).unwrap();
        assert_eq!(damage, 0.0);
    }

    #[test]
    fn full_discovery_retraining_is_bitwise_the_oracle() {
        // With every manipulated sample discovered, the retraining baseline
        // trains on exactly the oracle's view with the same seeds.
        let cfg = base_config(Method::Eu);
        let dataset = cfg.dataset.realise().unwrap();
        let scenario = build_scenario(&dataset, &cfg.scenario_spec()).unwrap();
        assert_eq!(scenario.meta.sf, scenario.meta.sm);
        let row = run_scenario(&cfg, &Cache::disabled()).unwrap();
        assert_eq!(row.healed_pct, 100.0);

        let spec = cfg.model_spec(&dataset);
        let tcfg = cfg.train.to_config(derive_seed(cfg.seeds.train, "shuffle"));
        let keep = complement(scenario.train.len(), &scenario.meta.sm);
        let view = View::subset(&scenario.train, keep, LabelMode::Assigned);
        let mut oracle = Model::build(spec.clone()).unwrap();
        train(&mut oracle, &view, &tcfg).unwrap();

        let key = model_key(
            "eu",
            &dataset.id,
            &cfg.attack,
            &scenario.meta.sm,
            &scenario.meta.sf,
            &spec,
            &tcfg,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(Some(dir.path().to_path_buf()));
        let _ = run_scenario(&cfg, &cache).unwrap();
        let eu_model = cache.model(&key).unwrap().expect("retrained model cached");
        let a: Vec<u64> = oracle.params.iter().map(|p| p.to_bits()).collect();
        let b: Vec<u64> = eu_model.params.iter().map(|p| p.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_configs_give_identical_rows_cold_and_warm() {
        let cfg = base_config(Method::PtnLf);
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(Some(dir.path().to_path_buf()));
        let cold = run_scenario(&cfg, &cache).unwrap();
        let warm = run_scenario(&cfg, &cache).unwrap();
        let fresh = run_scenario(&cfg, &Cache::disabled()).unwrap();
        assert_eq!(mask_timings(&cold.csv_row()), mask_timings(&warm.csv_row()));
        assert_eq!(mask_timings(&cold.csv_row()), mask_timings(&fresh.csv_row()));
        // Traces agree on everything except per-rung wall time.
        let (a, b) = (cold.trace.as_ref().unwrap(), warm.trace.as_ref().unwrap());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.iteration, y.iteration);
            assert_eq!(x.s_iter.to_bits(), y.s_iter.to_bits());
            assert_eq!(x.alpha.to_bits(), y.alpha.to_bits());
            assert_eq!(x.modified_count, y.modified_count);
            assert_eq!(x.forget_accuracy.to_bits(), y.forget_accuracy.to_bits());
        }
        assert_eq!(cold.iterations, Some(a.len()));
    }

    #[test]
    fn grid_selection_matches_an_exhaustive_rescore() {
        let cfg = base_config(Method::SsdGrid);
        let row = run_scenario(&cfg, &Cache::disabled()).unwrap();
        let points = row.grid.as_ref().expect("grid rows recorded");
        assert_eq!(points.len(), GRID_ALPHAS.len() * GRID_LAMBDA_FACTORS.len());
        // Re-score: the selected pair must be the earliest maximal score.
        let mut best = 0;
        for (i, p) in points.iter().enumerate() {
            if p.score > points[best].score {
                best = i;
            }
        }
        assert_eq!(row.alpha, Some(points[best].alpha));
        assert_eq!(row.lambda, Some(points[best].lambda));
        assert_eq!(row.iterations, Some(points.len()));
        // The scores follow the equally weighted form: the (unrecorded)
        // baselines cancel in score differences, so every pair must satisfy
        // s_i - s_0 = 0.5*(fa_0 - fa_i) + 0.5*(va_i - va_0) exactly-ish.
        let p0 = &points[0];
        for p in points {
            let want = 0.5 * (p0.forget_accuracy - p.forget_accuracy)
                + 0.5 * (p.validation_accuracy - p0.validation_accuracy);
            assert!((p.score - p0.score - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn sweep_runs_the_cross_product_and_keeps_order() {
        let spec = SweepSpec {
            base: base_config(Method::None),
            methods: Some(vec![Method::None, Method::Eu]),
            sm_sizes: None,
            discoveries: Some(vec![
                Discovery::Fraction { fraction: 1.0 },
                Discovery::Count { count: 1 },
            ]),
            seeds: Some(vec![7, 8]),
            rhos: None,
            s_steps: None,
        };
        let configs = spec.expand();
        assert_eq!(configs.len(), 8);
        // Innermost axis is the method; replicate is outermost.
        assert_eq!(configs[0].method, Method::None);
        assert_eq!(configs[1].method, Method::Eu);
        assert_eq!(configs[0].seeds, Seeds::replicate(7));
        assert_eq!(configs[7].seeds, Seeds::replicate(8));

        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(Some(dir.path().to_path_buf()));
        let (rows, failures) = sweep(&spec, &cache);
        assert!(failures.is_empty(), "failures: {failures:?}");
        assert_eq!(rows.len(), 8);
        for (row, cfg) in rows.iter().zip(&configs) {
            assert_eq!(row.method, cfg.method);
            assert_eq!(row.discovery, cfg.discovery.label());
            assert_eq!(row.seeds, cfg.seeds);
        }

        let csv = dir.path().join("results.csv");
        append_results_csv(&csv, &rows).unwrap();
        append_results_csv(&csv, &rows[..1]).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 8 + 1, "header written once, rows appended");
        assert_eq!(lines[0], ScenarioResult::csv_header());

        let sidecar = dir.path().join("trace.json");
        write_trace_sidecar(&sidecar, &rows).unwrap();
        let parsed: Vec<ScenarioResult> =
            serde_json::from_slice(&std::fs::read(&sidecar).unwrap()).unwrap();
        assert_eq!(parsed.len(), 8);
        assert_eq!(parsed[0].scenario_id, rows[0].scenario_id);
    }

    #[test]
    fn zero_accuracy_oracle_is_an_undefined_metric() {
        // A test split whose clean labels are never the zero class, scored
        // by an all-zero model (which always predicts class 0).
        let images = Images::zeros(4, 4, 4, 1);
        let test = PoisonedDataset::from_clean(images, vec![1, 1, 2, 1], 3, Split::TestClean).unwrap();
        let zero = Model::from_params(
            ModelSpec {
                input: InputShape {
                    height: 4,
                    width: 4,
                    channels: 1,
                },
                classes: 3,
                seed: 0,
                layers: vec![LayerSpec::Dense {
                    inputs: 16,
                    outputs: 3,
                }],
            },
            vec![0.0; 16 * 3 + 3],
        )
        .unwrap();
        let err = poison_healed(&zero, &zero, &test).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)), "{err}");
    }

    #[test]
    fn csv_row_prints_fixed_columns_with_empty_optionals() {
        let row = ScenarioResult {
            scenario_id: "abc123".into(),
            method: Method::Eu,
            attack: "badnet".into(),
            sm_size: 50,
            discovery: "frac:0.5".into(),
            healed_pct: 87.5,
            damage_pts: -1.25,
            forget_accuracy_before: 1.0,
            forget_accuracy_after: 0.5,
            alpha: None,
            lambda: None,
            modified_count: None,
            iterations: None,
            search_status: None,
            t_importance_s: 0.0,
            t_search_s: 1.5,
            t_total_s: 2.25,
            seeds: Seeds {
                train: 1,
                poison: 2,
                discovery: 3,
                search: 4,
            },
            trace: None,
            grid: None,
        };
        assert_eq!(
            row.csv_row(),
            "abc123,eu,badnet,50,frac:0.5,87.5,-1.25,,,,,0,1.5,2.25,1,2,3,4"
        );
        assert_eq!(
            ScenarioResult::csv_header(),
            "scenario_id,method,attack,sm_size,discovery,healed_pct,damage_pts,alpha,lambda,\
             modified_count,iterations,t_importance_s,t_search_s,t_total_s,seed_train,\
             seed_poison,seed_discovery,seed_search"
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.id()));
        }
        assert!("fisher".parse::<Method>().is_err());
    }

    #[test]
    fn validation_split_is_a_tenth_and_seeded() {
        let a = validation_indices(200, 4);
        let b = validation_indices(200, 4);
        let c = validation_indices(200, 5);
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&i| i < 200));
    }
}
