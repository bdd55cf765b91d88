//! Feed-forward emotion classifier trained from scratch with Adam.
//!
//! Hidden layers use ReLU. Inverted dropout follows every hidden layer
//! except the last one. The default head is one independent sigmoid per
//! class trained with binary cross-entropy against one-hot targets and
//! decoded by argmax; a softmax + cross-entropy head is available for
//! comparison.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input row {row} has non-finite value at column {column}")]
    NonFiniteInput { row: usize, column: usize },
    #[error("input has {got} features, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    SigmoidBce,
    SoftmaxCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
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

impl MlpConfig {
    /// Four hidden layers [256, 128, 64, 32], 7 outputs, dropout 0.1,
    /// lr 1e-4, batch 200, 100 epochs.
    pub fn reference(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![256, 128, 64, 32],
            output_dim: 7,
            dropout_p: 0.1,
            lr: 1e-4,
            batch_size: 200,
            epochs: 100,
            seed: 0,
            output: OutputKind::SigmoidBce,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.output_dim);
        sizes.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m_w: Vec<Array2<f64>>,
    pub v_w: Vec<Array2<f64>>,
    pub m_b: Vec<Array1<f64>>,
    pub v_b: Vec<Array1<f64>>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
    pub adam: AdamState,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weight: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer (after dropout where applied).
    pub inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pub pre: Vec<Array2<f64>>,
    /// Retain-and-scale masks for layers with dropout.
    pub masks: Vec<Option<Array2<f64>>>,
    pub probs: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>) -> Self {
        assert_eq!(x.nrows(), y.len(), "rows and labels differ");
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Glorot-uniform weights, zero biases, zeroed Adam moments.
pub fn init_params(config: &MlpConfig) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_with(config, &mut rng)
}

fn init_with(config: &MlpConfig, rng: &mut ChaCha8Rng) -> MlpParams {
    let dims = config.layer_dims();
    let layers: Vec<Layer> = dims
        .iter()
        .map(|&(out, inp)| {
            let limit = (6.0 / (inp + out) as f64).sqrt();
            Layer {
                weight: Array2::from_shape_simple_fn((out, inp), || rng.gen_range(-limit..limit)),
                bias: Array1::zeros(out),
            }
        })
        .collect();
    let adam = AdamState {
        m_w: dims.iter().map(|&d| Array2::zeros(d)).collect(),
        v_w: dims.iter().map(|&d| Array2::zeros(d)).collect(),
        m_b: dims.iter().map(|&(o, _)| Array1::zeros(o)).collect(),
        v_b: dims.iter().map(|&(o, _)| Array1::zeros(o)).collect(),
        step: 0,
    };
    MlpParams {
        config: config.clone(),
        layers,
        adam,
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_finite(x: ArrayView2<f64>) -> Result<(), ModelError> {
    for ((row, column), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(ModelError::NonFiniteInput { row, column });
        }
    }
    Ok(())
}

impl MlpParams {
    fn n_hidden(&self) -> usize {
        self.config.hidden.len()
    }

    fn has_dropout(&self, layer: usize) -> bool {
        layer + 1 < self.n_hidden() && self.config.dropout_p > 0.0
    }

    /// Batch forward pass. Passing an RNG turns on training-mode dropout.
    pub fn forward_batch(&self, x: ArrayView2<f64>, mut dropout: Option<&mut ChaCha8Rng>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.config.dropout_p;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(a);
            if l == last {
                let probs = match self.config.output {
                    OutputKind::SigmoidBce => z.mapv(sigmoid),
                    OutputKind::SoftmaxCe => softmax_rows(&z),
                };
                return ForwardCache {
                    inputs,
                    pre,
                    masks,
                    probs,
                };
            }
            let mut h = z.mapv(|v| v.max(0.0));
            let mask = match dropout.as_deref_mut() {
                Some(rng) if self.has_dropout(l) => {
                    let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    h *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            a = h;
        }
        unreachable!("network has an output layer")
    }

    /// Mean loss of a batch under this model's head.
    pub fn batch_loss(&self, probs: &Array2<f64>, labels: &[usize]) -> f64 {
        let k = self.config.output_dim;
        let total: f64 = probs
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(p, &y)| match self.config.output {
                OutputKind::SigmoidBce => bce_loss(p.as_slice().expect("row-major"), &one_hot(y, k)),
                OutputKind::SoftmaxCe => -p[y].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln(),
            })
            .sum();
        total / labels.len() as f64
    }

    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Gradients {
        let batch = labels.len() as f64;
        let k = self.config.output_dim;
        let scale = match self.config.output {
            OutputKind::SigmoidBce => 1.0 / (batch * k as f64),
            OutputKind::SoftmaxCe => 1.0 / batch,
        };
        let mut delta = cache.probs.clone();
        for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
        }
        delta *= scale;

        let n = self.layers.len();
        let mut weight = vec![Array2::zeros((0, 0)); n];
        let mut bias = vec![Array1::zeros(0); n];
        for l in (0..n).rev() {
            weight[l] = delta.t().dot(&cache.inputs[l]);
            bias[l] = delta.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let mut prev = delta.dot(&self.layers[l].weight);
            if let Some(mask) = &cache.masks[l - 1] {
                prev *= mask;
            }
            prev.zip_mut_with(&cache.pre[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
        Gradients { weight, bias }
    }

    pub fn adam_step(&mut self, grads: &Gradients) {
        let (b1, b2, eps, lr) = (self.config.beta1, self.config.beta2, self.config.epsilon, self.config.lr);
        let adam = &mut self.adam;
        adam.step += 1;
        let t = adam.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (l, layer) in self.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weight)
                .and(&mut adam.m_w[l])
                .and(&mut adam.v_w[l])
                .and(&grads.weight[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut adam.m_b[l])
                .and(&mut adam.v_b[l])
                .and(&grads.bias[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.forward_batch(x, None)
            .probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("row-major")))
            .collect()
    }
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Single-example forward pass.
pub fn forward(
    params: &MlpParams,
    x: &[f64],
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    if x.len() != params.config.input_dim {
        return Err(ModelError::InputDim {
            expected: params.config.input_dim,
            got: x.len(),
        });
    }
    let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
    check_finite(view)?;
    let cache = params.forward_batch(view, dropout);
    Ok((cache.probs.row(0).to_vec(), cache))
}

/// Mean over outputs of `-[y ln p + (1-y) ln(1-p)]`, with `p` clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &[f64], target: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / probs.len() as f64
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &MlpParams, x: &[f64]) -> Result<usize, ModelError> {
    Ok(argmax(&forward(params, x, None)?.0))
}

fn validate_data(config: &MlpConfig, data: &Dataset) -> Result<(), ModelError> {
    if data.x.ncols() != config.input_dim {
        return Err(ModelError::InputDim {
            expected: config.input_dim,
            got: data.x.ncols(),
        });
    }
    if let Some(&label) = data.y.iter().find(|&&y| y >= config.output_dim) {
        return Err(ModelError::Label {
            label,
            classes: config.output_dim,
        });
    }
    check_finite(data.x.view())
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len().max(1) as f64
}

/// Mini-batch Adam for a fixed number of epochs; returns the final-epoch
/// parameters. Inputs are expected to be standardized already.
pub fn train(
    config: &MlpConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
) -> Result<(MlpParams, TrainRecord), ModelError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    validate_data(config, train_set)?;
    if let Some(v) = val_set {
        validate_data(config, v)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_with(config, &mut rng);
    let mut record = TrainRecord::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.x.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.y[i]).collect();
            let cache = params.forward_batch(x.view(), Some(&mut rng));
            let loss = params.batch_loss(&cache.probs, &y);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch });
            }
            loss_sum += loss * idx.len() as f64;
            let grads = params.backward(&cache, &y);
            params.adam_step(&grads);
        }
        record.train_loss.push(loss_sum / train_set.len() as f64);
        if let Some(v) = val_set.filter(|v| !v.is_empty()) {
            let cache = params.forward_batch(v.x.view(), None);
            record.val_loss.push(params.batch_loss(&cache.probs, &v.y));
            let pred: Vec<usize> = cache
                .probs
                .rows()
                .into_iter()
                .map(|r| argmax(r.as_slice().expect("row-major")))
                .collect();
            record.val_accuracy.push(accuracy(&pred, &v.y));
        }
    }
    Ok((params, record))
}

/// Per-feature z-scoring fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let std = x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"SMLP";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: MlpConfig,
    seed: u64,
    shapes: Vec<(usize, usize)>,
    #[serde(default)]
    standardizer: Option<Standardizer>,
}

/// Writes `SMLP`, `u32` version, `u32` header length, a JSON header (config
/// echo, seed, layer shapes, optional standardizer), then every weight
/// matrix and bias vector as little-endian `f32`, layer by layer.
pub fn save_checkpoint(path: &Path, params: &MlpParams, standardizer: Option<&Standardizer>) -> Result<(), ModelError> {
    let header = CheckpointHeader {
        config: params.config.clone(),
        seed: params.config.seed,
        shapes: params.layers.iter().map(|l| l.weight.dim()).collect(),
        standardizer: standardizer.cloned(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for layer in &params.layers {
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, Option<Standardizer>), ModelError> {
    let bytes = fs::read(path)?;
    let bad = |m: String| ModelError::Checkpoint(m);
    if bytes.len() < 12 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not an SMLP checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12 + header_len..).ok_or_else(|| bad("header truncated".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[12..12 + header_len]).map_err(|e| bad(e.to_string()))?;
    if header.shapes != header.config.layer_dims() {
        return Err(bad("layer shapes disagree with config".into()));
    }
    let expected: usize = header.shapes.iter().map(|(o, i)| o * i + o).sum();
    if body.len() != expected * 4 {
        return Err(bad(format!("expected {expected} values, got {} bytes", body.len())));
    }
    let mut values = body.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    let mut params = init_params(&header.config);
    for layer in &mut params.layers {
        layer.weight.iter_mut().for_each(|w| *w = values.next().unwrap());
        layer.bias.iter_mut().for_each(|b| *b = values.next().unwrap());
    }
    Ok((params, header.standardizer))
}
