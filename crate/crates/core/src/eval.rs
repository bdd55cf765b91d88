//! Speaker-disjoint cross-validation, metrics, the experiment grid and
//! report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acoustics::{pool_functionals, FrameSeries};
use crate::corpus::{EmotionLabel, Sex};
use crate::embeddings::{pool_mean_std, FrameEmbeddings};
use crate::informativeness::WordInfo;
use crate::model::{self, Dataset, MlpConfig, Standardizer};
use crate::selection::{self, Criterion, Mode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot form {k} folds: {males} male and {females} female speakers (need at least {need} of each)")]
    InsufficientSpeakers {
        k: usize,
        males: usize,
        females: usize,
        need: usize,
    },
    #[error("cannot write report to {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Functionals,
    Embeddings,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 2] = [FeatureKind::Functionals, FeatureKind::Embeddings];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Functionals => "functionals",
            FeatureKind::Embeddings => "embeddings",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown feature kind {s:?} (expected functionals or embeddings)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_id: usize,
    /// One male then one female.
    pub test_speakers: Vec<u32>,
    pub val_speakers: Vec<u32>,
    pub train_speakers: Vec<u32>,
}

/// Fold `f` tests the `f`-th male and `f`-th female speaker (ids sorted, or
/// shuffled by `shuffle_seed`); its validation pair is the next male and
/// female in the same order.
pub fn make_folds(speakers: &[(u32, Sex)], k: usize, shuffle_seed: Option<u64>) -> Result<Vec<FoldSpec>, EvalError> {
    let unique: BTreeSet<(u32, Sex)> = speakers.iter().copied().collect();
    let by_sex = |sex| -> Vec<u32> { unique.iter().filter(|s| s.1 == sex).map(|s| s.0).collect() };
    let (mut males, mut females) = (by_sex(Sex::Male), by_sex(Sex::Female));
    let need = k.max(2);
    if k == 0 || males.len() < need || females.len() < need {
        return Err(EvalError::InsufficientSpeakers {
            k,
            males: males.len(),
            females: females.len(),
            need,
        });
    }
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        males.shuffle(&mut rng);
        females.shuffle(&mut rng);
    }
    Ok((0..k)
        .map(|f| {
            let test = vec![males[f], females[f]];
            let val = vec![males[(f + 1) % males.len()], females[(f + 1) % females.len()]];
            let train = unique
                .iter()
                .map(|s| s.0)
                .filter(|id| !test.contains(id) && !val.contains(id))
                .collect();
            FoldSpec {
                fold_id: f + 1,
                test_speakers: test,
                val_speakers: val,
                train_speakers: train,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro F1 over the seven emotion classes.
pub fn compute_metrics(pairs: &[(usize, usize)]) -> Metrics {
    compute_metrics_k(pairs, EmotionLabel::COUNT)
}

/// Macro F1 averages over all `classes`; a class with no true and no
/// predicted examples contributes 0.
pub fn compute_metrics_k(pairs: &[(usize, usize)], classes: usize) -> Metrics {
    assert!(!pairs.is_empty(), "metrics over zero predictions");
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for &(truth, pred) in pairs {
        assert!(truth < classes && pred < classes, "label out of range");
        if truth == pred {
            tp[truth] += 1;
        } else {
            fp[pred] += 1;
            fn_[truth] += 1;
        }
    }
    let f1_sum: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Metrics {
        accuracy: tp.iter().sum::<usize>() as f64 / pairs.len() as f64,
        macro_f1: f1_sum / classes as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        // Summation rounding would otherwise leave a tiny nonzero spread.
        return Some(Aggregate { mean: min, std: 0.0, min, max });
    }
    let (mean, std) = crate::pooling::mean_std_scalar(values.iter().copied());
    Some(Aggregate {
        mean: mean.clamp(min, max),
        std,
        min,
        max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub feature_kinds: Vec<FeatureKind>,
    pub criteria: Vec<Criterion>,
    /// `full_utterance` adds one baseline cell per feature kind.
    pub modes: Vec<Mode>,
    pub n_values: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            feature_kinds: FeatureKind::ALL.to_vec(),
            criteria: Criterion::ALL.to_vec(),
            modes: vec![Mode::TopN, Mode::IndependentN, Mode::FullUtterance],
            n_values: (1..=6).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub feature: FeatureKind,
    pub criterion: Option<Criterion>,
    pub mode: Mode,
    pub n: Option<usize>,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.criterion, self.n) {
            (Some(c), Some(n)) => write!(f, "{}/{}/{}/{}", self.feature, c, self.mode, n),
            _ => write!(f, "{}/{}", self.feature, self.mode),
        }
    }
}

impl GridConfig {
    /// Baseline first, then criterion x mode x n, per feature kind.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &feature in &self.feature_kinds {
            if self.modes.contains(&Mode::FullUtterance) {
                out.push(CellKey {
                    feature,
                    criterion: None,
                    mode: Mode::FullUtterance,
                    n: None,
                });
            }
            for &criterion in &self.criteria {
                for mode in [Mode::TopN, Mode::IndependentN] {
                    if !self.modes.contains(&mode) {
                        continue;
                    }
                    for &n in &self.n_values {
                        out.push(CellKey {
                            feature,
                            criterion: Some(criterion),
                            mode,
                            n: Some(n),
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub id: String,
    pub speaker_id: u32,
    pub sex: Sex,
    pub label: EmotionLabel,
    pub duration_s: f64,
}

/// Everything the grid needs, index-aligned with `utterances`.
#[derive(Debug, Clone, Default)]
pub struct ExperimentData {
    pub utterances: Vec<UtteranceMeta>,
    pub words: Vec<Vec<WordInfo>>,
    pub lld: Option<Vec<FrameSeries>>,
    /// `None` entries are utterances without an embedding file.
    pub embeddings: Option<Vec<Option<FrameEmbeddings>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub folds: usize,
    pub fold_seed: Option<u64>,
    /// Template; `input_dim` is set per cell and `seed` is offset by the fold id.
    pub model: MlpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub skipped_train: usize,
    pub skipped_test: usize,
    pub record: model::TrainRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<FoldResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub failed: bool,
    pub folds: Vec<FoldOutcome>,
    pub accuracy: Option<Aggregate>,
    pub macro_f1: Option<Aggregate>,
    /// Utterances excluded from this cell, by reason.
    pub skips: BTreeMap<String, usize>,
    pub feature_dim: usize,
}

impl CellResult {
    pub fn skipped(&self) -> usize {
        self.skips.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldSpec>,
    pub cells: Vec<CellResult>,
}

impl MetricsReport {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.failed)
    }

    pub fn cell(&self, key: &CellKey) -> Option<&CellResult> {
        self.cells.iter().find(|c| &c.key == key)
    }
}

/// Stores finished folds so an interrupted run can resume.
pub trait FoldCache: Sync {
    fn get(&self, key: &str) -> Option<FoldResult>;
    fn put(&self, key: &str, result: &FoldResult);
}

/// Feature vector of one utterance for one cell, or the reason it is skipped.
pub fn cell_feature(data: &ExperimentData, index: usize, key: &CellKey) -> Result<Vec<f64>, String> {
    let meta = &data.utterances[index];
    let sel = selection::select(
        &meta.id,
        &data.words[index],
        meta.duration_s,
        key.criterion.unwrap_or(Criterion::UnigramSr),
        key.mode,
        key.n.unwrap_or(1),
    )
    .map_err(|e| match e {
        selection::SelectionError::PositionUnavailable { .. } => "position unavailable".to_string(),
        selection::SelectionError::Unscored { .. } => "unscored".to_string(),
        other => other.to_string(),
    })?;
    match key.feature {
        FeatureKind::Functionals => {
            let lld = data.lld.as_ref().ok_or("no acoustic descriptors")?;
            pool_functionals(&lld[index], &sel)
                .map(|p| p.vector.0)
                .map_err(|e| match e {
                    crate::acoustics::AcousticsError::EmptySegment(_) => "empty segment".to_string(),
                    other => other.to_string(),
                })
        }
        FeatureKind::Embeddings => {
            let emb = data
                .embeddings
                .as_ref()
                .and_then(|e| e[index].as_ref())
                .ok_or("no embedding file")?;
            pool_mean_std(emb, &sel).map(|p| p.0).map_err(|e| match e {
                crate::embeddings::EmbeddingError::EmptySegment(_) => "empty segment".to_string(),
                other => other.to_string(),
            })
        }
    }
}

/// Row indices of one fold, restricted to utterances with a usable feature.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub skipped_train: usize,
    pub skipped_test: usize,
}

pub fn partition(features: &[Result<Vec<f64>, String>], data: &ExperimentData, fold: &FoldSpec) -> Partition {
    let mut p = Partition::default();
    for (i, meta) in data.utterances.iter().enumerate() {
        let usable = features[i].is_ok();
        let speaker = &meta.speaker_id;
        if fold.test_speakers.contains(speaker) {
            if usable {
                p.test.push(i)
            } else {
                p.skipped_test += 1
            }
        } else if fold.val_speakers.contains(speaker) {
            if usable {
                p.val.push(i)
            }
        } else if fold.train_speakers.contains(speaker) {
            if usable {
                p.train.push(i)
            } else {
                p.skipped_train += 1
            }
        }
    }
    p
}

/// Stacks the chosen rows into a matrix; every row must be usable.
pub fn stack(features: &[Result<Vec<f64>, String>], rows: &[usize], dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), dim), |(r, c)| features[rows[r]].as_ref().expect("usable row")[c])
}

pub fn labels(data: &ExperimentData, rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&i| data.utterances[i].label.index()).collect()
}

fn fold_key(features: &[Result<Vec<f64>, String>], data: &ExperimentData, fold: &FoldSpec, cfg: &MlpConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(fold).expect("serializable"));
    h.update(serde_json::to_vec(cfg).expect("serializable"));
    for (f, meta) in features.iter().zip(&data.utterances) {
        h.update(meta.id.as_bytes());
        h.update([meta.label.index() as u8]);
        match f {
            Ok(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
            Err(reason) => h.update(reason.as_bytes()),
        }
    }
    hex::encode(h.finalize())
}

/// Fits the standardizer on the training rows and trains one fold's model.
pub fn train_fold(
    features: &[Result<Vec<f64>, String>],
    dim: usize,
    data: &ExperimentData,
    part: &Partition,
    cfg: &MlpConfig,
) -> Result<(model::MlpParams, Standardizer, model::TrainRecord), String> {
    if part.train.is_empty() {
        return Err("no training utterances".into());
    }
    let mut x_train = stack(features, &part.train, dim);
    let standardizer = Standardizer::fit(x_train.view());
    standardizer.apply(&mut x_train);
    let mut x_val = stack(features, &part.val, dim);
    standardizer.apply(&mut x_val);
    let train_set = Dataset::new(x_train, labels(data, &part.train));
    let val_set = Dataset::new(x_val, labels(data, &part.val));
    let (params, record) = model::train(cfg, &train_set, Some(&val_set)).map_err(|e| e.to_string())?;
    Ok((params, standardizer, record))
}

/// Test-set metrics of a trained fold model.
pub fn test_fold(
    features: &[Result<Vec<f64>, String>],
    dim: usize,
    data: &ExperimentData,
    part: &Partition,
    params: &model::MlpParams,
    standardizer: &Standardizer,
) -> Result<Metrics, String> {
    if part.test.is_empty() {
        return Err("no test utterances".into());
    }
    let mut x_test = stack(features, &part.test, dim);
    standardizer.apply(&mut x_test);
    let predicted = params.predict_batch(x_test.view());
    let pairs: Vec<(usize, usize)> = labels(data, &part.test).into_iter().zip(predicted).collect();
    Ok(compute_metrics_k(&pairs, params.config.output_dim))
}

fn run_fold(
    features: &[Result<Vec<f64>, String>],
    dim: usize,
    data: &ExperimentData,
    fold: &FoldSpec,
    cfg: &MlpConfig,
) -> Result<FoldResult, String> {
    let part = partition(features, data, fold);
    if part.train.is_empty() {
        return Err("no training utterances".into());
    }
    if part.test.is_empty() {
        return Err("no test utterances".into());
    }
    let (params, standardizer, record) = train_fold(features, dim, data, &part, cfg)?;
    let m = test_fold(features, dim, data, &part, &params, &standardizer)?;
    Ok(FoldResult {
        fold_id: fold.fold_id,
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        n_train: part.train.len(),
        n_val: part.val.len(),
        n_test: part.test.len(),
        skipped_train: part.skipped_train,
        skipped_test: part.skipped_test,
        record,
    })
}

/// Model config for one cell and fold.
pub fn fold_model_config(template: &MlpConfig, input_dim: usize, fold: &FoldSpec) -> MlpConfig {
    MlpConfig {
        input_dim,
        seed: template.seed.wrapping_add(fold.fold_id as u64),
        ..template.clone()
    }
}

/// Features of every utterance for one cell, with skip reasons, in parallel.
pub fn cell_features(data: &ExperimentData, key: &CellKey) -> Vec<Result<Vec<f64>, String>> {
    (0..data.utterances.len()).into_par_iter().map(|i| cell_feature(data, i, key)).collect()
}

pub fn run_cell(
    data: &ExperimentData,
    key: CellKey,
    folds: &[FoldSpec],
    template: &MlpConfig,
    cache: Option<&dyn FoldCache>,
) -> CellResult {
    let features = cell_features(data, &key);
    let mut skips = BTreeMap::new();
    for reason in features.iter().filter_map(|f| f.as_ref().err()) {
        *skips.entry(reason.clone()).or_insert(0) += 1;
    }
    let dim = features.iter().find_map(|f| f.as_ref().ok()).map_or(0, Vec::len);
    let outcomes: Vec<FoldOutcome> = folds
        .par_iter()
        .map(|fold| {
            let result = if dim == 0 {
                Err("no usable utterances".to_string())
            } else {
                let cfg = fold_model_config(template, dim, fold);
                let ckey = fold_key(&features, data, fold, &cfg);
                match cache.and_then(|c| c.get(&ckey)) {
                    Some(hit) => Ok(hit),
                    None => {
                        let r = run_fold(&features, dim, data, fold, &cfg);
                        if let (Ok(res), Some(c)) = (&r, cache) {
                            c.put(&ckey, res);
                        }
                        r
                    }
                }
            };
            match result {
                Ok(r) => FoldOutcome {
                    fold_id: fold.fold_id,
                    result: Some(r),
                    error: None,
                },
                Err(e) => FoldOutcome {
                    fold_id: fold.fold_id,
                    result: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    let failed = outcomes.iter().any(|o| o.error.is_some());
    let ok: Vec<&FoldResult> = outcomes.iter().filter_map(|o| o.result.as_ref()).collect();
    let (accuracy, macro_f1) = if failed {
        (None, None)
    } else {
        (
            aggregate(&ok.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
            aggregate(&ok.iter().map(|r| r.macro_f1).collect::<Vec<_>>()),
        )
    };
    if failed {
        log::warn!("cell {key} failed");
    } else {
        log::info!("cell {key}: acc {:.4}", accuracy.map_or(f64::NAN, |a| a.mean));
    }
    CellResult {
        key,
        failed,
        folds: outcomes,
        accuracy,
        macro_f1,
        skips,
        feature_dim: dim,
    }
}

/// Every grid cell over every fold. Cells with a failing fold are marked
/// failed and the run continues.
pub fn run_experiment(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    cache: Option<&dyn FoldCache>,
) -> Result<MetricsReport, EvalError> {
    let speakers: Vec<(u32, Sex)> = data.utterances.iter().map(|u| (u.speaker_id, u.sex)).collect();
    let folds = make_folds(&speakers, cfg.folds, cfg.fold_seed)?;
    let cells = cfg
        .grid
        .cells()
        .into_par_iter()
        .map(|key| run_cell(data, key, &folds, &cfg.model, cache))
        .collect();
    Ok(MetricsReport { folds, cells })
}

/// Reproducibility record written next to the report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub fold_seed: Option<u64>,
    pub model_seed: u64,
    pub design: BTreeMap<String, String>,
    pub folds: Vec<FoldSpec>,
    pub skips: BTreeMap<String, BTreeMap<String, usize>>,
    pub failed_cells: Vec<String>,
}

/// SHA-256 of the canonical (sorted-key) JSON rendering.
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

impl RunManifest {
    pub fn new(config: serde_json::Value, report: &MetricsReport, fold_seed: Option<u64>, model_seed: u64) -> Self {
        let design = [
            ("segment_pooling", "frame_mask_over_whole_utterance_llds"),
            ("top_n_span_order", "temporal"),
            ("rank_order", "descending_norm_rank"),
            ("multi_token_rank", "mean_of_token_norm_ranks"),
            ("oov_unigram_probability", "1/(total+1)"),
            ("std", "population"),
            ("macro_f1_absent_class", "zero"),
            ("skip_policy", "exclude_from_train_and_test"),
            ("fold_pairing", if fold_seed.is_some() { "shuffled" } else { "sorted_by_speaker_id" }),
            ("validation", "one_male_one_female_from_training_speakers_curve_only"),
            ("standardization", "z_score_train_fold_statistics"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&config),
            config,
            fold_seed,
            model_seed,
            design,
            folds: report.folds.clone(),
            skips: report
                .cells
                .iter()
                .filter(|c| !c.skips.is_empty())
                .map(|c| (c.key.to_string(), c.skips.clone()))
                .collect(),
            failed_cells: report.cells.iter().filter(|c| c.failed).map(|c| c.key.to_string()).collect(),
        }
    }
}

fn pct(a: Option<Aggregate>) -> String {
    a.map_or_else(|| "NA".to_string(), |a| format!("{:.2}", 100.0 * a.mean))
}

fn opt_num(a: Option<Aggregate>, f: impl Fn(Aggregate) -> f64) -> String {
    a.map_or_else(|| "NA".to_string(), |a| format!("{:.6}", f(a)))
}

/// Accuracy/F1 table for one feature kind, percentages with two decimals.
pub fn table_csv(report: &MetricsReport, feature: FeatureKind) -> String {
    let mut out = String::from("mode,n");
    for c in Criterion::ALL {
        write!(out, ",{c}_acc,{c}_f1").unwrap();
    }
    out.push('\n');
    let cells: Vec<&CellResult> = report.cells.iter().filter(|c| c.key.feature == feature).collect();
    let mut rows: Vec<(Mode, Option<usize>)> = cells.iter().map(|c| (c.key.mode, c.key.n)).collect();
    rows.sort_by_key(|&(mode, n)| (mode == Mode::FullUtterance, mode, n));
    rows.dedup();
    for (mode, n) in rows {
        write!(out, "{},{}", mode, n.map(|n| n.to_string()).unwrap_or_default()).unwrap();
        for crit in Criterion::ALL {
            let cell = cells
                .iter()
                .find(|c| c.key.mode == mode && c.key.n == n && (c.key.criterion == Some(crit) || mode == Mode::FullUtterance));
            match cell {
                Some(c) => write!(out, ",{},{}", pct(c.accuracy), pct(c.macro_f1)).unwrap(),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Mean accuracy against n for every top-n criterion, plus baseline rows.
pub fn figure_csv(report: &MetricsReport) -> String {
    let mut out = String::from("feature,series,n,acc_mean,acc_std\n");
    for c in &report.cells {
        let series = match (c.key.mode, c.key.criterion) {
            (Mode::FullUtterance, _) => "baseline".to_string(),
            (Mode::TopN, Some(crit)) => crit.to_string(),
            _ => continue,
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            c.key.feature,
            series,
            c.key.n.map(|n| n.to_string()).unwrap_or_default(),
            opt_num(c.accuracy, |a| a.mean),
            opt_num(c.accuracy, |a| a.std)
        )
        .unwrap();
    }
    out
}

/// One row per cell, every mode.
pub fn cells_csv(report: &MetricsReport) -> String {
    let mut out = String::from("feature,criterion,mode,n,status,folds,acc_mean,acc_std,f1_mean,f1_std,skipped\n");
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.key.feature,
            c.key.criterion.map(|c| c.to_string()).unwrap_or_default(),
            c.key.mode,
            c.key.n.map(|n| n.to_string()).unwrap_or_default(),
            if c.failed { "failed" } else { "ok" },
            c.folds.iter().filter(|f| f.result.is_some()).count(),
            opt_num(c.accuracy, |a| a.mean),
            opt_num(c.accuracy, |a| a.std),
            opt_num(c.macro_f1, |a| a.mean),
            opt_num(c.macro_f1, |a| a.std),
            c.skipped()
        )
        .unwrap();
    }
    out
}

/// Writes `table_<feature>.csv`, `fig_accuracy_vs_n.csv`, `cells.csv`,
/// `report.json` and `manifest.json` into `out_dir`.
pub fn emit_report(report: &MetricsReport, manifest: &RunManifest, out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let write = |name: &str, contents: &[u8]| -> Result<PathBuf, EvalError> {
        let path = out_dir.join(name);
        fs::create_dir_all(out_dir)
            .and_then(|_| fs::write(&path, contents))
            .map_err(|source| EvalError::Write {
                path: path.clone(),
                source,
            })?;
        Ok(path)
    };
    let mut written = Vec::new();
    for feature in FeatureKind::ALL {
        written.push(write(&format!("table_{feature}.csv"), table_csv(report, feature).as_bytes())?);
    }
    written.push(write("fig_accuracy_vs_n.csv", figure_csv(report).as_bytes())?);
    written.push(write("cells.csv", cells_csv(report).as_bytes())?);
    written.push(write("report.json", &serde_json::to_vec_pretty(report)?)?);
    written.push(write("manifest.json", &serde_json::to_vec_pretty(manifest)?)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speakers(n: u32) -> Vec<(u32, Sex)> {
        (1..=n).map(|id| (id, if id % 2 == 1 { Sex::Male } else { Sex::Female })).collect()
    }

    #[test]
    fn ravdess_folds() {
        let folds = make_folds(&speakers(24), 10, None).unwrap();
        assert_eq!(folds.len(), 10);
        assert_eq!(folds[0].test_speakers, vec![1, 2]);
        assert_eq!(folds[0].val_speakers, vec![3, 4]);
        assert_eq!(folds[0].train_speakers.len(), 20);
        let tested: BTreeSet<u32> = folds.iter().flat_map(|f| f.test_speakers.clone()).collect();
        assert_eq!(tested.len(), 20);
        assert_eq!(24 - tested.len(), 4);
    }

    #[test]
    fn perfect_matching_with_twelve_folds() {
        let folds = make_folds(&speakers(24), 12, None).unwrap();
        let mut tested: Vec<u32> = folds.iter().flat_map(|f| f.test_speakers.clone()).collect();
        tested.sort_unstable();
        assert_eq!(tested, (1..=24).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_speakers() {
        assert!(matches!(
            make_folds(&speakers(3), 10, None),
            Err(EvalError::InsufficientSpeakers { males: 2, females: 1, .. })
        ));
    }

    #[test]
    fn shuffled_folds_are_seeded() {
        let a = make_folds(&speakers(24), 10, Some(5)).unwrap();
        assert_eq!(a, make_folds(&speakers(24), 10, Some(5)).unwrap());
        assert_ne!(a, make_folds(&speakers(24), 10, None).unwrap());
    }

    #[test]
    fn metric_examples() {
        let perfect: Vec<_> = (0..7).map(|c| (c, c)).collect();
        assert_eq!(compute_metrics(&perfect), Metrics { accuracy: 1.0, macro_f1: 1.0 });
        let single = compute_metrics(&[(3, 3)]);
        assert_eq!(single.accuracy, 1.0);
        assert!((single.macro_f1 - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_closed_form() {
        // 24 merged + 16 of each other class, always predicting class 1.
        let mut pairs = vec![(0, 1); 24];
        for c in 1..7 {
            pairs.extend(std::iter::repeat_n((c, 1), 16));
        }
        let m = compute_metrics(&pairs);
        let p = 16.0 / 120.0;
        assert!((m.accuracy - p).abs() < 1e-12);
        assert!((m.macro_f1 - 2.0 * p / (p + 1.0) / 7.0).abs() < 1e-12);
        assert!((m.macro_f1 - 0.0336).abs() < 1e-4);
    }

    #[test]
    fn grid_has_74_cells() {
        assert_eq!(GridConfig::default().cells().len(), 74);
        let baseline = GridConfig {
            modes: vec![Mode::FullUtterance],
            ..GridConfig::default()
        };
        assert_eq!(baseline.cells().len(), 2);
    }

    #[test]
    fn aggregate_bounds() {
        let a = aggregate(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((a.mean, a.std), (0.5, 0.0));
        assert!(aggregate(&[]).is_none());
    }

    #[test]
    fn empty_report_files_are_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = MetricsReport::default();
        let manifest = RunManifest::new(serde_json::json!({"a": 1}), &report, None, 0);
        emit_report(&report, &manifest, dir.path()).unwrap();
        for name in ["table_functionals.csv", "table_embeddings.csv", "fig_accuracy_vs_n.csv", "cells.csv"] {
            let text = fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text.lines().count(), 1, "{name}");
        }
        let back: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(config_hash(&back.config), manifest.config_hash);
    }

    #[test]
    fn one_cell_one_row() {
        let key = CellKey {
            feature: FeatureKind::Embeddings,
            criterion: Some(Criterion::LlmSr),
            mode: Mode::TopN,
            n: Some(4),
        };
        let agg = aggregate(&[0.6323]);
        let report = MetricsReport {
            folds: vec![],
            cells: vec![CellResult {
                key,
                failed: false,
                folds: vec![],
                accuracy: agg,
                macro_f1: agg,
                skips: BTreeMap::new(),
                feature_dim: 4,
            }],
        };
        let table = table_csv(&report, FeatureKind::Embeddings);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "top_n,4,,,63.23,63.23,,");
    }
}
