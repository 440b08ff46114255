//! Dense two-layer ReLU classifier with exact backpropagation and mini-batch
//! SGD. The training loss can carry an L1 penalty restricted to chosen
//! first-layer input columns.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::domain(format!(
                "matrix: {} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// The base classifier `f`: `w2 · relu(w1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MlpModel {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        let model = MlpModel { w1, b1, w2, b2 };
        model.validate()?;
        Ok(model)
    }

    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        MlpModel {
            w1: Matrix::zeros(hidden, input_dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(classes, hidden),
            b2: vec![0.0; classes],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, classes: usize, rng: &mut RngStream) -> Self {
        let mut model = MlpModel::zeros(input_dim, hidden, classes);
        let limit1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        for w in model.w1.as_mut_slice() {
            *w = (2.0 * rng.uniform() - 1.0) * limit1;
        }
        let limit2 = (6.0 / (hidden + classes) as f64).sqrt();
        for w in model.w2.as_mut_slice() {
            *w = (2.0 * rng.uniform() - 1.0) * limit2;
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = self.w1.rows();
        if self.b1.len() != hidden || self.w2.cols() != hidden {
            return Err(Error::domain(format!(
                "model: hidden size mismatch (w1 rows {hidden}, b1 {}, w2 cols {})",
                self.b1.len(),
                self.w2.cols()
            )));
        }
        if self.b2.len() != self.w2.rows() {
            return Err(Error::domain(format!(
                "model: class count mismatch (w2 rows {}, b2 {})",
                self.w2.rows(),
                self.b2.len()
            )));
        }
        if self.w2.rows() == 0 || self.w1.cols() == 0 || hidden == 0 {
            return Err(Error::domain("model: empty layer"));
        }
        if !self.parameters().all(f64::is_finite) {
            return Err(Error::domain("model: non-finite parameter"));
        }
        Ok(())
    }

    fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .as_slice()
            .iter()
            .chain(&self.b1)
            .chain(self.w2.as_slice())
            .chain(&self.b2)
            .copied()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut hidden = vec![0.0; self.hidden_dim()];
        let mut logits = vec![0.0; self.num_classes()];
        self.forward_into(x, &mut hidden, &mut logits);
        Ok(logits)
    }

    /// Unchecked forward pass into caller-provided buffers.
    pub(crate) fn forward_into(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        for (h, (b, out)) in self.b1.iter().zip(hidden.iter_mut()).enumerate() {
            *out = (b + dot(self.w1.row(h), x)).max(0.0);
        }
        for (c, (b, out)) in self.b2.iter().zip(logits.iter_mut()).enumerate() {
            *out = b + dot(self.w2.row(c), hidden);
        }
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Softmax probabilities.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let logits = self.forward(x)?;
        Ok(softmax(&logits))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_checkpoint_string();
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    pub fn to_checkpoint_string(&self) -> String {
        let ckpt = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            dims: Dims {
                input: self.input_dim(),
                hidden: self.hidden_dim(),
                classes: self.num_classes(),
            },
            w1: self.w1.as_slice().to_vec(),
            b1: self.b1.clone(),
            w2: self.w2.as_slice().to_vec(),
            b2: self.b2.clone(),
        };
        let mut s = serde_json::to_string_pretty(&ckpt).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported schema_version {}",
                ckpt.schema_version
            )));
        }
        let Dims {
            input,
            hidden,
            classes,
        } = ckpt.dims;
        let shape_err = |name: &str, got: usize, want: usize| {
            Error::Checkpoint(format!("{name} has {got} values, dims require {want}"))
        };
        if ckpt.w1.len() != hidden * input {
            return Err(shape_err("w1", ckpt.w1.len(), hidden * input));
        }
        if ckpt.b1.len() != hidden {
            return Err(shape_err("b1", ckpt.b1.len(), hidden));
        }
        if ckpt.w2.len() != classes * hidden {
            return Err(shape_err("w2", ckpt.w2.len(), classes * hidden));
        }
        if ckpt.b2.len() != classes {
            return Err(shape_err("b2", ckpt.b2.len(), classes));
        }
        MlpModel::new(
            Matrix::from_vec(hidden, input, ckpt.w1)?,
            ckpt.b1,
            Matrix::from_vec(classes, hidden, ckpt.w2)?,
            ckpt.b2,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct Dims {
    input: usize,
    hidden: usize,
    classes: usize,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    dims: Dims,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(x: Vec<f64>, label: usize) -> Self {
        Example { x, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l1_lambda: f64,
    /// Input columns that receive the L1 penalty. Empty means no column.
    pub l1_mask: Vec<bool>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            epochs: 50,
            batch_size: 128,
            learning_rate: 0.05,
            l1_lambda: 0.01,
            l1_mask: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain("train: learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("train: batch_size must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::domain("train: hidden must be at least 1"));
        }
        if !(self.l1_lambda >= 0.0) || !self.l1_lambda.is_finite() {
            return Err(Error::domain("train: l1_lambda must be non-negative"));
        }
        if !self.l1_mask.is_empty() && self.l1_mask.len() != input_dim {
            return Err(Error::domain(format!(
                "train: l1_mask has {} entries, input dim is {input_dim}",
                self.l1_mask.len()
            )));
        }
        Ok(())
    }

    fn masked(&self, col: usize) -> bool {
        self.l1_mask.get(col).copied().unwrap_or(false)
    }
}

/// Mean softmax cross-entropy plus the masked L1 term, with exact gradients.
///
/// The gradient is returned in a model-shaped container. Subgradients are 0 at
/// the ReLU kink and at `|w| = 0`.
pub fn loss_and_gradients(
    model: &MlpModel,
    batch: &[Example],
    cfg: &TrainConfig,
) -> Result<(f64, MlpModel)> {
    if batch.is_empty() {
        return Err(Error::domain("loss_and_gradients: empty batch"));
    }
    let (input, hidden_dim, classes) = (model.input_dim(), model.hidden_dim(), model.num_classes());
    let mut grad = MlpModel::zeros(input, hidden_dim, classes);
    let mut hidden = vec![0.0; hidden_dim];
    let mut logits = vec![0.0; classes];
    let mut d_hidden = vec![0.0; hidden_dim];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for ex in batch {
        model.check_input(&ex.x)?;
        if ex.label >= classes {
            return Err(Error::domain(format!(
                "label {} out of range for {classes} classes",
                ex.label
            )));
        }
        model.forward_into(&ex.x, &mut hidden, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        loss += (log_total - logits[ex.label]) * scale;

        // d loss / d logits = softmax - onehot
        d_hidden.fill(0.0);
        for c in 0..classes {
            let g = ((logits[c] - log_total).exp() - if c == ex.label { 1.0 } else { 0.0 }) * scale;
            grad.b2[c] += g;
            let w2_row = model.w2.row(c);
            let gw2 = &mut grad.w2.as_mut_slice()[c * hidden_dim..(c + 1) * hidden_dim];
            for h in 0..hidden_dim {
                gw2[h] += g * hidden[h];
                d_hidden[h] += g * w2_row[h];
            }
        }
        for h in 0..hidden_dim {
            // hidden[h] > 0 iff the unit is active
            if hidden[h] <= 0.0 {
                continue;
            }
            let g = d_hidden[h];
            grad.b1[h] += g;
            let gw1 = &mut grad.w1.as_mut_slice()[h * input..(h + 1) * input];
            for (gw, xi) in gw1.iter_mut().zip(&ex.x) {
                *gw += g * xi;
            }
        }
    }

    if cfg.l1_lambda > 0.0 {
        for col in (0..input).filter(|&c| cfg.masked(c)) {
            for h in 0..hidden_dim {
                let w = model.w1.get(h, col);
                loss += cfg.l1_lambda * w.abs();
                let sign = if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let g = grad.w1.get(h, col) + cfg.l1_lambda * sign;
                grad.w1.set(h, col, g);
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub examples: Vec<Example>,
    pub num_classes: usize,
}

impl LabeledData {
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::domain("dataset is empty"));
        }
        let dim = examples[0].x.len();
        if dim == 0 {
            return Err(Error::domain("dataset has zero-dimensional inputs"));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.x.len() != dim {
                return Err(Error::domain(format!("example {i} has {} features, expected {dim}", ex.x.len())));
            }
            if ex.label >= num_classes {
                return Err(Error::domain(format!(
                    "example {i} has label {} but there are {num_classes} classes",
                    ex.label
                )));
            }
        }
        Ok(LabeledData {
            examples,
            num_classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.examples[0].x.len()
    }
}

/// Seeded-shuffle mini-batch SGD with a constant learning rate.
pub fn train(data: &LabeledData, cfg: &TrainConfig) -> Result<MlpModel> {
    let input = data.input_dim();
    cfg.validate(input)?;
    let mut rng = RngStream::new(cfg.seed, 0);
    let mut model = MlpModel::init(input, cfg.hidden, data.num_classes, &mut rng);
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data.examples[i].clone()));
            let (_, grad) = loss_and_gradients(&model, &batch, cfg)?;
            sgd_step(&mut model, &grad, cfg.learning_rate);
        }
        if !model.parameters().all(f64::is_finite) {
            return Err(Error::domain("train: parameters diverged to non-finite values"));
        }
    }
    Ok(model)
}

fn sgd_step(model: &mut MlpModel, grad: &MlpModel, lr: f64) {
    let pairs = [
        (model.w1.as_mut_slice(), grad.w1.as_slice()),
        (model.b1.as_mut_slice(), grad.b1.as_slice()),
        (model.w2.as_mut_slice(), grad.w2.as_slice()),
        (model.b2.as_mut_slice(), grad.b2.as_slice()),
    ];
    for (params, grads) in pairs {
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }
}

pub fn accuracy(model: &MlpModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::domain("accuracy: no examples"));
    }
    let mut correct = 0usize;
    for ex in examples {
        if model.predict_label(&ex.x)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}
