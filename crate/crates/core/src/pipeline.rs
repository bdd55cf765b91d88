//! Run configuration and the cached end-to-end stages.
//!
//! Layout of `out_dir`:
//!
//! ```text
//! corpus.jsonl  scores.jsonl  selections.jsonl
//! cache/lld/<id>-<hash>.sfv   cache/folds/<hash>.json
//! features/<cell>.csv         models/<cell>-fold<k>.smlp
//! report/                     tables, report.json, manifest.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acoustics::{AcousticsConfig, FrameSeries, LldExtractor};
use crate::corpus::{self, Utterance, TARGET_SAMPLE_RATE};
use crate::embeddings::FrameEmbeddings;
use crate::eval::{
    self, CellKey, ExperimentConfig, ExperimentData, FeatureKind, FoldCache, FoldResult, GridConfig, Metrics,
    MetricsReport, RunManifest, UtteranceMeta,
};
use crate::informativeness::{self, read_token_scores, UnigramModel, WordInfo};
use crate::model::{self, MlpConfig, OutputKind, TrainRecord};
use crate::selection::{self, Mode};
use crate::sfv::SfvMatrix;

const LLD_CACHE_VERSION: &[u8] = b"lld-v1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("paths.{key} is required")]
    MissingKey { key: &'static str },
    #[error("paths.{key} = {path} does not exist")]
    MissingPath { key: &'static str, path: PathBuf },
    #[error("{what} requires {key}, which is not available; generate it with `{command}` and set paths.{key}")]
    MissingProvider {
        what: String,
        key: &'static str,
        command: &'static str,
    },
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub audio_dir: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    pub token_scores: Option<PathBuf>,
    pub counts_file: Option<PathBuf>,
    pub embeddings_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            audio_dir: None,
            alignments: None,
            token_scores: None,
            counts_file: None,
            embeddings_dir: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Classifier settings; input width is fixed per cell and output is 7.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: Vec<usize>,
    pub dropout_p: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub output: OutputKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let r = MlpConfig::reference(1);
        Self {
            hidden: r.hidden,
            dropout_p: r.dropout_p,
            lr: r.lr,
            batch_size: r.batch_size,
            epochs: r.epochs,
            seed: r.seed,
            output: r.output,
            beta1: r.beta1,
            beta2: r.beta2,
            epsilon: r.epsilon,
        }
    }
}

impl ModelSettings {
    pub fn template(&self) -> MlpConfig {
        MlpConfig {
            input_dim: 1,
            hidden: self.hidden.clone(),
            dropout_p: self.dropout_p,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            output: self.output,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            ..MlpConfig::reference(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub folds: usize,
    /// Shuffles the speaker pairing; sorted by id when absent.
    pub fold_seed: Option<u64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            folds: 10,
            fold_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub grid: GridConfig,
    pub acoustics: AcousticsConfig,
    pub model: ModelSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, origin: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|source| PipelineError::ConfigParse {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn needs_language_model(&self) -> bool {
        self.grid.modes.iter().any(|&m| m != Mode::FullUtterance)
            && self.grid.criteria.iter().any(|c| c.needs_language_model())
    }

    fn needs_embeddings(&self) -> bool {
        self.grid.feature_kinds.contains(&FeatureKind::Embeddings)
    }

    /// Checks every referenced input exists and every value is usable.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let require = |key: &'static str, p: &Option<PathBuf>| -> Result<(), PipelineError> {
            match p {
                None => Err(PipelineError::MissingKey { key }),
                Some(p) if !p.exists() => Err(PipelineError::MissingPath { key, path: p.clone() }),
                Some(_) => Ok(()),
            }
        };
        require("audio_dir", &self.paths.audio_dir)?;
        require("alignments", &self.paths.alignments)?;
        require("counts_file", &self.paths.counts_file)?;
        if let Some(p) = &self.paths.token_scores {
            require("token_scores", &Some(p.clone()))?;
        }
        if let Some(p) = &self.paths.embeddings_dir {
            require("embeddings_dir", &Some(p.clone()))?;
        }
        if self.needs_language_model() && self.paths.token_scores.is_none() {
            let names: Vec<&str> = self
                .grid
                .criteria
                .iter()
                .filter(|c| c.needs_language_model())
                .map(|c| c.as_str())
                .collect();
            return Err(PipelineError::MissingProvider {
                what: format!("criterion {}", names.join(", ")),
                key: "token_scores",
                command: "surpsel-export token-scores",
            });
        }
        if self.needs_embeddings() && self.paths.embeddings_dir.is_none() {
            return Err(PipelineError::MissingProvider {
                what: "feature kind embeddings".into(),
                key: "embeddings_dir",
                command: "surpsel-export embeddings",
            });
        }
        let g = &self.grid;
        if g.feature_kinds.is_empty() || g.modes.is_empty() {
            return Err(PipelineError::Config("grid.feature_kinds and grid.modes must be non-empty".into()));
        }
        if g.modes.iter().any(|&m| m != Mode::FullUtterance) {
            if g.criteria.is_empty() || g.n_values.is_empty() {
                return Err(PipelineError::Config("grid.criteria and grid.n_values must be non-empty".into()));
            }
            if g.n_values.contains(&0) {
                return Err(PipelineError::Config("grid.n_values must be positive".into()));
            }
        }
        if self.eval.folds == 0 {
            return Err(PipelineError::Config("eval.folds must be positive".into()));
        }
        let a = &self.acoustics;
        if !(a.f0_min_hz > 0.0 && a.f0_min_hz < a.f0_max_hz) || a.n_mfcc == 0 || a.n_mfcc > a.n_mel || a.fft_size < 400 {
            return Err(PipelineError::Config(
                "acoustics: need 0 < f0_min_hz < f0_max_hz, 1 <= n_mfcc <= n_mel, fft_size >= 400".into(),
            ));
        }
        self.model.template().validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.audio_dir,
            &mut self.alignments,
            &mut self.token_scores,
            &mut self.counts_file,
            &mut self.embeddings_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }
}

/// Per-fold results stored as JSON files named by content hash.
pub struct DirFoldCache {
    dir: PathBuf,
}

impl DirFoldCache {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }
}

impl FoldCache for DirFoldCache {
    fn get(&self, key: &str) -> Option<FoldResult> {
        let text = fs::read_to_string(self.dir.join(format!("{key}.json"))).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn put(&self, key: &str, result: &FoldResult) {
        let path = self.dir.join(format!("{key}.json"));
        let tmp = self.dir.join(format!("{key}.json.tmp"));
        let written = fs::create_dir_all(&self.dir)
            .and_then(|_| fs::write(&tmp, serde_json::to_vec(result).expect("serializable")))
            .and_then(|_| fs::rename(&tmp, &path));
        if let Err(e) = written {
            log::warn!("cannot cache fold result {}: {e}", path.display());
        }
    }
}

#[derive(Debug, Serialize)]
struct CorpusRecord<'a> {
    id: &'a str,
    speaker_id: u32,
    sex: corpus::Sex,
    emotion: corpus::EmotionLabel,
    intensity: corpus::Intensity,
    transcript: &'a str,
    duration_s: f64,
    sample_rate_hz: u32,
    words: &'a [corpus::WordAlignment],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub words: Vec<WordInfo>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectStats {
    pub written: usize,
    pub skipped: usize,
}

/// Metrics of one separately trained and evaluated fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEvaluation {
    pub cell: String,
    pub fold_id: usize,
    pub n_test: usize,
    pub skipped_test: usize,
    pub metrics: Metrics,
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<usize, PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for r in records {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n").map_err(io_err(path))?;
        n += 1;
    }
    out.flush().map_err(io_err(path))?;
    Ok(n)
}

pub fn cell_slug(key: &CellKey) -> String {
    key.to_string().replace('/', "-")
}

pub struct Pipeline {
    pub config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.paths.out_dir
    }

    fn path(&self, key: Option<&PathBuf>) -> PathBuf {
        key.cloned().expect("validated")
    }

    /// Loads and validates the corpus; writes `corpus.jsonl`.
    pub fn prepare(&self) -> Result<Vec<Utterance>, PipelineError> {
        let p = &self.config.paths;
        let load = corpus::load_corpus(&self.path(p.audio_dir.as_ref()), &self.path(p.alignments.as_ref()))
            .map_err(stage("prepare"))?;
        for id in &load.excluded {
            log::warn!("no alignment for {id}");
        }
        write_lines(
            &self.out_dir().join("corpus.jsonl"),
            load.utterances.iter().map(|u| CorpusRecord {
                id: &u.id,
                speaker_id: u.speaker_id,
                sex: u.speaker_sex,
                emotion: u.emotion,
                intensity: u.intensity,
                transcript: &u.transcript,
                duration_s: u.duration_s(),
                sample_rate_hz: u.sample_rate_hz,
                words: &u.words,
            }),
        )?;
        Ok(load.utterances)
    }

    /// Per-word scores for every utterance; writes `scores.jsonl`.
    pub fn score(&self, utterances: &[Utterance]) -> Result<Vec<Vec<WordInfo>>, PipelineError> {
        let p = &self.config.paths;
        let unigram = UnigramModel::from_counts_file(&self.path(p.counts_file.as_ref())).map_err(stage("score"))?;
        let tokens = match &p.token_scores {
            Some(path) => Some(read_token_scores(path).map_err(stage("score"))?),
            None => None,
        };
        let mut unscored = 0;
        let words = utterances
            .iter()
            .map(|u| {
                let record = tokens.as_ref().and_then(|t| t.get(&u.id));
                if tokens.is_some() && record.is_none() {
                    unscored += 1;
                }
                if let Some(r) = record {
                    if r.text != u.transcript {
                        log::warn!("{}: token-score text {:?} differs from transcript {:?}", u.id, r.text, u.transcript);
                    }
                }
                informativeness::score_words(&u.words, &unigram, record.map(|r| (r.text.as_str(), r.tokens.as_slice())))
                    .map_err(|e| PipelineError::Stage {
                        stage: "score",
                        message: format!("{}: {e}", u.id),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if unscored > 0 {
            log::warn!("{unscored} utterances have no token scores; language-model criteria skip them");
        }
        write_lines(
            &self.out_dir().join("scores.jsonl"),
            utterances.iter().zip(&words).map(|(u, w)| ScoreRecord {
                id: u.id.clone(),
                words: w.clone(),
            }),
        )?;
        Ok(words)
    }

    /// Every selection of the grid; writes `selections.jsonl`.
    pub fn select(&self, utterances: &[Utterance], words: &[Vec<WordInfo>]) -> Result<SelectStats, PipelineError> {
        let mut stats = SelectStats::default();
        let mut keys: Vec<CellKey> = self.config.grid.cells();
        keys.retain(|k| k.feature == self.config.grid.feature_kinds[0]);
        let mut records = Vec::new();
        for key in &keys {
            for (u, w) in utterances.iter().zip(words) {
                match selection::select(
                    &u.id,
                    w,
                    u.duration_s(),
                    key.criterion.unwrap_or(selection::Criterion::UnigramSr),
                    key.mode,
                    key.n.unwrap_or(1),
                ) {
                    Ok(s) => records.push(s),
                    Err(e) => {
                        log::debug!("{}: {key}: {e}", u.id);
                        stats.skipped += 1;
                    }
                }
            }
        }
        stats.written = write_lines(&self.out_dir().join("selections.jsonl"), &records)?;
        Ok(stats)
    }

    fn lld_cache_path(&self, u: &Utterance) -> PathBuf {
        let mut h = Sha256::new();
        h.update(LLD_CACHE_VERSION);
        h.update(u.sample_rate_hz.to_le_bytes());
        h.update(serde_json::to_vec(&self.config.acoustics).expect("serializable"));
        for s in &u.samples {
            h.update(s.to_le_bytes());
        }
        let digest = hex::encode(h.finalize());
        self.out_dir().join("cache").join("lld").join(format!("{}-{}.sfv", u.id, &digest[..16]))
    }

    /// Frame descriptors for every utterance, computed once and cached.
    /// Pooling always reads the cached (f32) values, so cold and warm runs
    /// agree bit for bit.
    pub fn extract(&self, utterances: &[Utterance]) -> Result<Vec<FrameSeries>, PipelineError> {
        let extractor = LldExtractor::new(&self.config.acoustics, TARGET_SAMPLE_RATE);
        let dir = self.out_dir().join("cache").join("lld");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        utterances
            .par_iter()
            .map(|u| {
                let path = self.lld_cache_path(u);
                let matrix = match SfvMatrix::read(&path) {
                    Ok(m) => m,
                    Err(_) => {
                        let m = extractor.extract(&u.id, &u.samples).to_sfv();
                        m.write(&path).map_err(stage("extract"))?;
                        m
                    }
                };
                FrameSeries::from_sfv(&u.id, &matrix).map_err(stage("extract"))
            })
            .collect()
    }

    /// `<embeddings_dir>/<id>.sfv` per utterance; missing files are `None`.
    pub fn load_embeddings(&self, utterances: &[Utterance]) -> Result<Vec<Option<FrameEmbeddings>>, PipelineError> {
        let dir = self.path(self.config.paths.embeddings_dir.as_ref());
        let loaded: Vec<Option<FrameEmbeddings>> = utterances
            .par_iter()
            .map(|u| {
                let path = dir.join(format!("{}.sfv", u.id));
                if !path.exists() {
                    return Ok(None);
                }
                FrameEmbeddings::load(&path).map(Some).map_err(|e| PipelineError::Stage {
                    stage: "embeddings",
                    message: format!("{}: {e}", path.display()),
                })
            })
            .collect::<Result<_, _>>()?;
        let missing = loaded.iter().filter(|e| e.is_none()).count();
        if missing > 0 {
            log::warn!("{missing} utterances have no embedding file");
        }
        Ok(loaded)
    }

    /// Runs prepare, score, select and extraction as the grid requires.
    pub fn experiment_data(&self) -> Result<ExperimentData, PipelineError> {
        let utterances = self.prepare()?;
        let words = self.score(&utterances)?;
        self.select(&utterances, &words)?;
        let kinds = &self.config.grid.feature_kinds;
        let lld = if kinds.contains(&FeatureKind::Functionals) {
            Some(self.extract(&utterances)?)
        } else {
            None
        };
        let embeddings = if kinds.contains(&FeatureKind::Embeddings) {
            Some(self.load_embeddings(&utterances)?)
        } else {
            None
        };
        Ok(ExperimentData {
            utterances: utterances
                .iter()
                .map(|u| UtteranceMeta {
                    id: u.id.clone(),
                    speaker_id: u.speaker_id,
                    sex: u.speaker_sex,
                    label: u.emotion,
                    duration_s: u.duration_s(),
                })
                .collect(),
            words,
            lld,
            embeddings,
        })
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            grid: self.config.grid.clone(),
            folds: self.config.eval.folds,
            fold_seed: self.config.eval.fold_seed,
            model: self.config.model.template(),
        }
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir().join("report")
    }

    /// Full grid with fold caching, then report files.
    pub fn run(&self) -> Result<MetricsReport, PipelineError> {
        let data = self.experiment_data()?;
        let cache = DirFoldCache::new(self.out_dir().join("cache").join("folds"));
        let report = eval::run_experiment(&data, &self.experiment_config(), Some(&cache)).map_err(stage("evaluate"))?;
        let manifest = RunManifest::new(
            serde_json::to_value(&self.config)?,
            &report,
            self.config.eval.fold_seed,
            self.config.model.seed,
        );
        eval::emit_report(&report, &manifest, &self.report_dir()).map_err(stage("report"))?;
        Ok(report)
    }

    fn cell_matrix(&self, data: &ExperimentData, key: &CellKey) -> (Vec<Result<Vec<f64>, String>>, usize) {
        let features = eval::cell_features(data, key);
        let dim = features.iter().find_map(|f| f.as_ref().ok()).map_or(0, Vec::len);
        (features, dim)
    }

    /// Writes one cell's pooled features as CSV: id, speaker, label, values.
    pub fn pool(&self, data: &ExperimentData, key: &CellKey) -> Result<(PathBuf, usize), PipelineError> {
        let (features, dim) = self.cell_matrix(data, key);
        let mut out = String::from("id,speaker_id,label");
        for i in 0..dim {
            write!(out, ",f{i}").unwrap();
        }
        out.push('\n');
        let mut skipped = 0;
        for (meta, f) in data.utterances.iter().zip(&features) {
            match f {
                Ok(v) => {
                    write!(out, "{},{},{}", meta.id, meta.speaker_id, meta.label.as_str()).unwrap();
                    for x in v {
                        write!(out, ",{x}").unwrap();
                    }
                    out.push('\n');
                }
                Err(_) => skipped += 1,
            }
        }
        let path = self.out_dir().join("features").join(format!("{}.csv", cell_slug(key)));
        fs::create_dir_all(path.parent().unwrap()).map_err(io_err(&path))?;
        fs::write(&path, out).map_err(io_err(&path))?;
        Ok((path, skipped))
    }

    fn fold(&self, data: &ExperimentData, fold_id: usize) -> Result<eval::FoldSpec, PipelineError> {
        let speakers: Vec<_> = data.utterances.iter().map(|u| (u.speaker_id, u.sex)).collect();
        let folds = eval::make_folds(&speakers, self.config.eval.folds, self.config.eval.fold_seed).map_err(stage("train"))?;
        folds
            .into_iter()
            .find(|f| f.fold_id == fold_id)
            .ok_or_else(|| PipelineError::Config(format!("fold {fold_id} is outside 1..={}", self.config.eval.folds)))
    }

    pub fn checkpoint_path(&self, key: &CellKey, fold_id: usize) -> PathBuf {
        self.out_dir().join("models").join(format!("{}-fold{fold_id}.smlp", cell_slug(key)))
    }

    /// Trains one cell on one fold and saves the checkpoint.
    pub fn train(&self, data: &ExperimentData, key: &CellKey, fold_id: usize) -> Result<(PathBuf, TrainRecord), PipelineError> {
        let fold = self.fold(data, fold_id)?;
        let (features, dim) = self.cell_matrix(data, key);
        if dim == 0 {
            return Err(stage("train")(format!("cell {key} has no usable utterances")));
        }
        let part = eval::partition(&features, data, &fold);
        let cfg = eval::fold_model_config(&self.config.model.template(), dim, &fold);
        let (params, standardizer, record) = eval::train_fold(&features, dim, data, &part, &cfg).map_err(stage("train"))?;
        let path = self.checkpoint_path(key, fold_id);
        fs::create_dir_all(path.parent().unwrap()).map_err(io_err(&path))?;
        model::save_checkpoint(&path, &params, Some(&standardizer)).map_err(stage("train"))?;
        Ok((path, record))
    }

    /// Evaluates a saved checkpoint on its fold's test speakers.
    pub fn evaluate(
        &self,
        data: &ExperimentData,
        key: &CellKey,
        fold_id: usize,
        checkpoint: &Path,
    ) -> Result<FoldEvaluation, PipelineError> {
        let fold = self.fold(data, fold_id)?;
        let (features, dim) = self.cell_matrix(data, key);
        let (params, standardizer) = model::load_checkpoint(checkpoint).map_err(stage("evaluate"))?;
        if params.config.input_dim != dim {
            return Err(stage("evaluate")(format!(
                "checkpoint expects {} inputs, cell {key} has {dim}",
                params.config.input_dim
            )));
        }
        let standardizer = standardizer.ok_or_else(|| stage("evaluate")("checkpoint has no standardizer"))?;
        let part = eval::partition(&features, data, &fold);
        let metrics = eval::test_fold(&features, dim, data, &part, &params, &standardizer).map_err(stage("evaluate"))?;
        Ok(FoldEvaluation {
            cell: key.to_string(),
            fold_id,
            n_test: part.test.len(),
            skipped_test: part.skipped_test,
            metrics,
        })
    }
}

/// Re-emits the tables from a saved `report.json` and `manifest.json`.
pub fn rerender_report(report_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let read = |name: &str| -> Result<String, PipelineError> {
        let path = report_dir.join(name);
        fs::read_to_string(&path).map_err(io_err(&path))
    };
    let report: MetricsReport = serde_json::from_str(&read("report.json")?)?;
    let manifest: RunManifest = serde_json::from_str(&read("manifest.json")?)?;
    eval::emit_report(&report, &manifest, report_dir).map_err(stage("report"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{write_smoke_corpus, SmokeSpec};

    fn smoke_config(dir: &Path) -> RunConfig {
        let paths = write_smoke_corpus(
            &dir.join("data"),
            &SmokeSpec {
                speakers: 6,
                ..SmokeSpec::default()
            },
        )
        .unwrap();
        RunConfig {
            paths: PathsConfig {
                audio_dir: Some(paths.audio_dir),
                alignments: Some(paths.alignments),
                token_scores: paths.token_scores,
                counts_file: Some(paths.counts_file),
                embeddings_dir: paths.embeddings_dir,
                out_dir: dir.join("out"),
            },
            eval: EvalSettings {
                folds: 2,
                fold_seed: None,
            },
            model: ModelSettings {
                epochs: 2,
                hidden: vec![8],
                ..ModelSettings::default()
            },
            grid: GridConfig {
                n_values: vec![1, 2],
                ..GridConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml(), Path::new(""), Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
        let partial = RunConfig::from_toml("[grid]\nmodes = [\"baseline\"]\n", Path::new("/base"), Path::new("x")).unwrap();
        assert_eq!(partial.grid.modes, vec![Mode::FullUtterance]);
        assert_eq!(partial.paths.out_dir, PathBuf::from("/base/out"));
        assert!(RunConfig::from_toml("[grid]\nbogus = 1\n", Path::new(""), Path::new("x")).is_err());
    }

    #[test]
    fn llm_criteria_without_token_scores_names_exporter() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config(dir.path());
        cfg.paths.token_scores = None;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("surpsel-export token-scores"), "{err}");
        cfg.grid.criteria = vec![selection::Criterion::UnigramSr];
        cfg.validate().unwrap();
    }

    #[test]
    fn unigram_only_scores_have_no_llm_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config(dir.path());
        cfg.paths.token_scores = None;
        cfg.grid.criteria = vec![selection::Criterion::UnigramSr];
        let p = Pipeline::new(cfg).unwrap();
        let utts = p.prepare().unwrap();
        let words = p.score(&utts).unwrap();
        assert_eq!(words.len(), 48);
        let text = fs::read_to_string(p.out_dir().join("scores.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 48);
        assert!(!text.contains("llm"));
    }

    #[test]
    fn stages_are_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(smoke_config(dir.path())).unwrap();
        let first = p.run().unwrap();
        let files = ["corpus.jsonl", "scores.jsonl", "selections.jsonl", "report/report.json", "report/cells.csv"];
        let snapshot: Vec<Vec<u8>> = files.iter().map(|f| fs::read(p.out_dir().join(f)).unwrap()).collect();
        let second = p.run().unwrap();
        assert_eq!(first, second);
        for (f, before) in files.iter().zip(snapshot) {
            assert_eq!(fs::read(p.out_dir().join(f)).unwrap(), before, "{f}");
        }
        assert_eq!(first.cells.len(), 2 * (1 + 3 * 2 * 2));
    }

    #[test]
    fn train_then_evaluate_single_fold() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(smoke_config(dir.path())).unwrap();
        let data = p.experiment_data().unwrap();
        let key = CellKey {
            feature: FeatureKind::Functionals,
            criterion: None,
            mode: Mode::FullUtterance,
            n: None,
        };
        let (path, skipped) = p.pool(&data, &key).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 49);
        let (ckpt, record) = p.train(&data, &key, 1).unwrap();
        assert_eq!(record.train_loss.len(), 2);
        let eval = p.evaluate(&data, &key, 1, &ckpt).unwrap();
        assert_eq!(eval.n_test, 16);
    }
}
