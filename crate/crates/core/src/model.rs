//! Two-hidden-layer perceptron trained with plain SGD.
//!
//! Hidden layers use ReLU. The classification head is softmax with
//! cross-entropy loss, the regression head is the identity with half squared
//! error. [`sgd_step`] applies `w - eta * sum_x grad L(w, x)`, i.e. the
//! gradient is summed (not averaged) over the batch.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{invalid, Error, Result};
use crate::seeds;

/// Probability floor applied before taking logs in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub output_dim: usize,
    pub task: Task,
}

impl Architecture {
    pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

    pub fn new(
        input_dim: usize,
        hidden: [usize; 2],
        output_dim: usize,
        task: Task,
    ) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            hidden,
            output_dim,
            task,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Architecture matching the dataset's feature count and output width.
    pub fn for_dataset(ds: &Dataset, hidden: [usize; 2]) -> Result<Self> {
        Self::new(ds.n_features(), hidden, ds.output_dim(), ds.task)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.output_dim == 0 {
            return Err(invalid(format!("zero-sized layer in {self:?}")));
        }
        if self.task == Task::Regression && self.output_dim != 1 {
            return Err(invalid("regression head must have a single output"));
        }
        if self.task == Task::Classification && self.output_dim < 2 {
            return Err(invalid("classification head needs at least two outputs"));
        }
        Ok(())
    }

    fn dims(&self) -> [usize; 4] {
        [
            self.input_dim,
            self.hidden[0],
            self.hidden[1],
            self.output_dim,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
    pub step_count: u64,
    pub seed: u64,
}

/// Gradient with the same layout as a [`Checkpoint`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn zeros(arch: &Architecture) -> Self {
        Gradient {
            layers: arch
                .dims()
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// Flattened entries, layer by layer (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Rmse,
}

/// Performance metric. Scores returned by [`evaluate_metric`] are oriented so
/// that larger is always better (RMSE is negated).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
}

impl MetricSpec {
    pub const ACCURACY: MetricSpec = MetricSpec {
        kind: MetricKind::Accuracy,
    };
    pub const RMSE: MetricSpec = MetricSpec {
        kind: MetricKind::Rmse,
    };

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => Self::ACCURACY,
            Task::Regression => Self::RMSE,
        }
    }

    pub fn higher_is_better(&self) -> bool {
        self.kind == MetricKind::Accuracy
    }

    /// Convert a raw metric value into an oriented score.
    pub fn orient(&self, raw: f64) -> f64 {
        if self.higher_is_better() {
            raw
        } else {
            -raw
        }
    }

    /// Inverse of [`MetricSpec::orient`].
    pub fn raw(&self, oriented: f64) -> f64 {
        self.orient(oriented)
    }

    fn task(&self) -> Task {
        match self.kind {
            MetricKind::Accuracy => Task::Classification,
            MetricKind::Rmse => Task::Regression,
        }
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<Checkpoint> {
    arch.validate()?;
    let mut rng = seeds::rng(seed);
    let layers = arch
        .dims()
        .windows(2)
        .map(|w| {
            let bound = 1.0 / (w[0] as f64).sqrt();
            Layer {
                weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                    rng.random_range(-bound..bound)
                }),
                bias: Array1::zeros(w[1]),
            }
        })
        .collect();
    Ok(Checkpoint {
        arch: *arch,
        layers,
        step_count: 0,
        seed,
    })
}

struct Activations {
    post: [Array2<f64>; 2],
    output: Array2<f64>,
}

impl Checkpoint {
    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Activations> {
        self.check_input(&x)?;
        let mut a1 = affine(x, &self.layers[0]);
        a1.mapv_inplace(relu);
        let mut a2 = affine(a1.view(), &self.layers[1]);
        a2.mapv_inplace(relu);
        let output = affine(a2.view(), &self.layers[2]);
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(Activations {
            post: [a1, a2],
            output,
        })
    }

    /// Raw head output: logits for classification, predictions for regression.
    pub fn outputs(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Class probabilities (classification) or predictions (regression).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = self.outputs(x)?;
        if self.arch.task == Task::Classification {
            softmax_rows(&mut out);
        }
        Ok(out)
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self - eta * grad`, incrementing the step counter.
    pub fn apply(&self, grad: &Gradient, eta: f64) -> Checkpoint {
        let mut next = self.clone();
        for (l, g) in next.layers.iter_mut().zip(&grad.layers) {
            l.weights.scaled_add(-eta, &g.weights);
            l.bias.scaled_add(-eta, &g.bias);
        }
        next.step_count += 1;
        next
    }

    /// Write `<stem>.bin` (little-endian f64 parameters) and `<stem>.json`
    /// (shapes and metadata).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let sidecar = CheckpointSidecar {
            arch: self.arch,
            shapes: self
                .layers
                .iter()
                .map(|l| (l.weights.nrows(), l.weights.ncols()))
                .collect(),
            step_count: self.step_count,
            seed: self.seed,
        };
        let bin = stem.with_extension("bin");
        let mut f = std::fs::File::create(&bin).map_err(|source| Error::Io {
            path: bin.clone(),
            source,
        })?;
        let bytes: Vec<u8> = self
            .flatten()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        f.write_all(&bytes)
            .map_err(|source| Error::Io { path: bin, source })?;
        let json = stem.with_extension("json");
        std::fs::write(&json, serde_json::to_vec_pretty(&sidecar)?)
            .map_err(|source| Error::Io { path: json, source })?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Checkpoint> {
        let json = stem.with_extension("json");
        let text = std::fs::read(&json).map_err(|source| Error::Io { path: json, source })?;
        let sidecar: CheckpointSidecar = serde_json::from_slice(&text)?;
        let bin = stem.with_extension("bin");
        let mut bytes = Vec::new();
        std::fs::File::open(&bin)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| Error::Io { path: bin, source })?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let expected: usize = sidecar.shapes.iter().map(|(r, c)| r * c + c).sum();
        if values.len() != expected || bytes.len() % 8 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds {} values, sidecar describes {expected}",
                values.len()
            )));
        }
        let mut it = values.into_iter();
        let layers = sidecar
            .shapes
            .iter()
            .map(|&(r, c)| Layer {
                weights: Array2::from_shape_vec((r, c), it.by_ref().take(r * c).collect()).unwrap(),
                bias: Array1::from_iter(it.by_ref().take(c)),
            })
            .collect();
        Ok(Checkpoint {
            arch: sidecar.arch,
            layers,
            step_count: sidecar.step_count,
            seed: sidecar.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointSidecar {
    arch: Architecture,
    shapes: Vec<(usize, usize)>,
    step_count: u64,
    seed: u64,
}

/// `x W + b` with the bias broadcast into the output before the product.
fn affine(x: ArrayView2<'_, f64>, layer: &Layer) -> Array2<f64> {
    let mut z = layer
        .bias
        .broadcast((x.nrows(), layer.bias.len()))
        .expect("bias row")
        .to_owned();
    general_mat_mul(1.0, &x, &layer.weights, 1.0, &mut z);
    z
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn check_batch(w: &Checkpoint, x: &ArrayView2<'_, f64>, y: &ArrayView1<'_, f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(invalid("empty batch"));
    }
    if x.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if w.arch.task == Task::Classification {
        if let Some(bad) = y
            .iter()
            .find(|&&t| t < 0.0 || t as usize >= w.arch.output_dim)
        {
            return Err(Error::ShapeMismatch(format!(
                "class id {bad} outside model outputs"
            )));
        }
    }
    w.check_input(x)
}

/// Per-row loss; the output delta is written into `delta` (d loss / d output).
fn head(task: Task, output: &Array2<f64>, y: &ArrayView1<'_, f64>, delta: &mut Array2<f64>) -> f64 {
    let mut total = 0.0;
    match task {
        Task::Classification => {
            for ((out_row, mut d_row), &t) in output.rows().into_iter().zip(delta.rows_mut()).zip(y)
            {
                let class = t as usize;
                let max = out_row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + out_row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let log_p = out_row[class] - lse;
                if log_p < PROB_FLOOR.ln() {
                    // Clamped region: constant loss, zero gradient.
                    total -= PROB_FLOOR.ln();
                    d_row.fill(0.0);
                } else {
                    total -= log_p;
                    Zip::from(&mut d_row)
                        .and(&out_row)
                        .for_each(|d, &o| *d = (o - lse).exp());
                    d_row[class] -= 1.0;
                }
            }
        }
        Task::Regression => {
            for ((out_row, mut d_row), &t) in output.rows().into_iter().zip(delta.rows_mut()).zip(y)
            {
                let r = out_row[0] - t;
                total += 0.5 * r * r;
                d_row[0] = r;
            }
        }
    }
    total
}

/// Mean loss over the batch.
pub fn batch_loss(w: &Checkpoint, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    check_batch(w, &x, &y)?;
    let act = w.forward(x)?;
    let mut delta = Array2::zeros(act.output.dim());
    Ok(head(w.arch.task, &act.output, &y, &mut delta) / x.nrows() as f64)
}

fn backprop(
    w: &Checkpoint,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    scale: f64,
) -> Result<Gradient> {
    check_batch(w, &x, &y)?;
    let act = w.forward(x)?;
    let mut delta = Array2::zeros(act.output.dim());
    head(w.arch.task, &act.output, &y, &mut delta);
    delta *= scale;

    let mut layers = Vec::with_capacity(3);
    let inputs = [x, act.post[0].view(), act.post[1].view()];
    for l in (0..3).rev() {
        let g = Layer {
            weights: inputs[l].t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        };
        if l > 0 {
            let mut next = delta.dot(&w.layers[l].weights.t());
            Zip::from(&mut next)
                .and(&act.post[l - 1])
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            delta = next;
        }
        layers.push(g);
    }
    layers.reverse();
    let grad = Gradient { layers };
    if grad
        .layers
        .iter()
        .any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(grad)
}

/// Gradient of the mean batch loss.
pub fn loss_gradient(
    w: &Checkpoint,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<Gradient> {
    let n = x.nrows().max(1) as f64;
    backprop(w, x, y, 1.0 / n)
}

/// Gradient of the summed batch loss.
pub fn gradient_sum(
    w: &Checkpoint,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<Gradient> {
    backprop(w, x, y, 1.0)
}

/// One SGD update with the gradient summed over the batch, evaluated at `w`.
pub fn sgd_step(
    w: &Checkpoint,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    eta: f64,
) -> Result<Checkpoint> {
    if !(eta >= 0.0) {
        return Err(invalid(format!("learning rate {eta} must be non-negative")));
    }
    let g = gradient_sum(w, x, y)?;
    Ok(w.apply(&g, eta))
}

/// Parameter `index` in [`Checkpoint::flatten`] order.
fn param_mut(w: &mut Checkpoint, mut index: usize) -> &mut f64 {
    for l in &mut w.layers {
        if index < l.weights.len() {
            return l.weights.iter_mut().nth(index).expect("index in range");
        }
        index -= l.weights.len();
        if index < l.bias.len() {
            return &mut l.bias[index];
        }
        index -= l.bias.len();
    }
    panic!("parameter index out of range")
}

/// Largest relative error between [`loss_gradient`] and central finite
/// differences of [`batch_loss`] with step `h`, over every parameter.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    w: &Checkpoint,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    h: f64,
) -> Result<f64> {
    let analytic = loss_gradient(w, x, y)?.flatten();
    let mut probe = w.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = *param_mut(&mut probe, i);
        *param_mut(&mut probe, i) = orig + h;
        let up = batch_loss(&probe, x, y)?;
        *param_mut(&mut probe, i) = orig - h;
        let down = batch_loss(&probe, x, y)?;
        *param_mut(&mut probe, i) = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            eta: 0.001,
            batch_size: 32,
        }
    }
}

/// Fresh model trained with mini-batch SGD. Initial weights and batch order
/// are both derived from `seed`.
pub fn train(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Checkpoint> {
    let w = init_params(arch, seeds::derive(seed, seeds::tag::INIT))?;
    train_from(w, ds, cfg, seed)
}

/// Continue training an existing checkpoint.
pub fn train_from(
    mut w: Checkpoint,
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Checkpoint> {
    let n = ds.n_rows();
    if n == 0 {
        return Err(invalid("empty training set"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(invalid("epochs and batch size must be positive"));
    }
    let mut rng = seeds::rng(seeds::derive(seed, seeds::tag::SHUFFLE));
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        if cfg.batch_size >= n {
            let (x, y) = ds.view();
            w = sgd_step(&w, x, y, cfg.eta)?;
            continue;
        }
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = ds.features.select(Axis(0), batch);
            let y = ds.targets.select(Axis(0), batch);
            w = sgd_step(&w, x.view(), y.view(), cfg.eta)?;
        }
    }
    Ok(w)
}

/// Oriented score of `w` on `x`/`y`.
pub fn score(
    w: &Checkpoint,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    m: MetricSpec,
) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(invalid("empty evaluation set"));
    }
    if m.task() != w.arch.task {
        return Err(Error::TaskMismatch(format!(
            "{:?} metric on a {:?} model",
            m.kind, w.arch.task
        )));
    }
    let out = w.outputs(x)?;
    let n = x.nrows() as f64;
    let raw = match m.kind {
        MetricKind::Accuracy => {
            let correct = out
                .rows()
                .into_iter()
                .zip(y)
                .filter(|(row, &t)| argmax(row) == t as usize)
                .count();
            correct as f64 / n
        }
        MetricKind::Rmse => {
            let mse = out
                .column(0)
                .iter()
                .zip(y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n;
            mse.sqrt()
        }
    };
    Ok(m.orient(raw))
}

/// Oriented score of `w` on a whole dataset.
pub fn evaluate_metric(w: &Checkpoint, ds: &Dataset, m: MetricSpec) -> Result<f64> {
    if ds.task != w.arch.task {
        return Err(Error::TaskMismatch("dataset and model tasks differ".into()));
    }
    let (x, y) = ds.view();
    score(w, x, y, m)
}

fn argmax(row: &ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
