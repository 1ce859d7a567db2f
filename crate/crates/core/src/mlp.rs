//! Fully connected classifiers with a log-softmax output layer.
//!
//! The function under analysis is the class log-posterior
//! `f_c(x) = log P(Y = c | x)`; [`InputGradient`] exposes its exact gradient
//! with respect to the input, and [`gradient_field`] stacks those gradients
//! over a dataset.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{BinReader, BinWriter};
use crate::data::Dataset;
use crate::error::{PsaError, Result};
use crate::linalg::{Matrix, Vector};

const CHECKPOINT_MAGIC: &[u8; 4] = b"PSAM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Logistic,
    Relu,
}

impl UnitKind {
    fn code(self) -> u8 {
        match self {
            UnitKind::Logistic => 0,
            UnitKind::Relu => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(UnitKind::Logistic),
            1 => Some(UnitKind::Relu),
            _ => None,
        }
    }

    #[inline]
    fn activate(self, z: f64) -> f64 {
        match self {
            UnitKind::Logistic => 1.0 / (1.0 + (-z).exp()),
            UnitKind::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    #[inline]
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            UnitKind::Logistic => h * (1.0 - h),
            UnitKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for UnitKind {
    type Err = PsaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "sigmoid" => Ok(UnitKind::Logistic),
            "relu" => Ok(UnitKind::Relu),
            other => Err(PsaError::domain(format!("unknown unit kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for UnitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UnitKind::Logistic => "logistic",
            UnitKind::Relu => "relu",
        })
    }
}

/// Inverted-dropout keep probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub input_keep: f64,
    pub hidden_keep: f64,
}

impl Default for Dropout {
    fn default() -> Self {
        Dropout {
            input_keep: 0.8,
            hidden_keep: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Input width, hidden widths, class count.
    pub layer_sizes: Vec<usize>,
    pub unit_kind: UnitKind,
    pub dropout: Option<Dropout>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl MlpConfig {
    /// Desk-scale setup for the synthetic digits: 784-100-10 logistic, lr 0.1.
    pub fn desk_default() -> Self {
        MlpConfig {
            layer_sizes: vec![784, 100, 10],
            unit_kind: UnitKind::Logistic,
            dropout: None,
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 100,
            seed: 0,
        }
    }

    fn validate(&self, input_dim: usize, num_classes: usize) -> Result<()> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(PsaError::domain(format!("bad layer sizes {sizes:?}")));
        }
        if sizes[0] != input_dim {
            return Err(PsaError::dim(format!(
                "input layer {} but data dimension {input_dim}",
                sizes[0]
            )));
        }
        if sizes[sizes.len() - 1] != num_classes {
            return Err(PsaError::dim(format!(
                "output layer {} but {num_classes} classes",
                sizes[sizes.len() - 1]
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PsaError::domain("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(PsaError::domain("batch size must be positive"));
        }
        if let Some(d) = self.dropout {
            for keep in [d.input_keep, d.hidden_keep] {
                if !(keep > 0.0 && keep <= 1.0) {
                    return Err(PsaError::domain(format!(
                        "keep probability {keep} outside (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Vector,
}

impl Layer {
    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            (0..self.weights.rows())
                .map(|o| self.bias[o] + dot_unchecked(self.weights.row(o), input)),
        );
    }

    /// Accumulates `W^T delta` into `out`.
    fn backprop(&self, delta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (acc, w) in out.iter_mut().zip(self.weights.row(o)) {
                *acc += d * w;
            }
        }
    }
}

#[inline]
fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Anything whose class scores can be differentiated with respect to the input.
pub trait InputGradient: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Exact `d f_c / d x` at `x`.
    fn input_gradient(&self, x: &[f64], class: usize) -> Result<Vector>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    unit_kind: UnitKind,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>, unit_kind: UnitKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(PsaError::domain("model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.rows() {
                return Err(PsaError::dim(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].weights.rows() != l.weights.cols() {
                return Err(PsaError::dim(format!(
                    "layer {i} expects {} inputs, previous layer gives {}",
                    l.weights.cols(),
                    layers[i - 1].weights.rows()
                )));
            }
            let finite = l.weights.as_slice().iter().chain(l.bias.iter());
            if finite.into_iter().any(|v| !v.is_finite()) {
                return Err(PsaError::domain(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        Ok(Mlp { layers, unit_kind })
    }

    /// All-zero parameters; the posterior is uniform everywhere.
    pub fn zeros(layer_sizes: &[usize], unit_kind: UnitKind) -> Result<Self> {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[1], w[0]),
                bias: Vector::zeros(w[1]),
            })
            .collect();
        Mlp::from_layers(layers, unit_kind)
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        unit_kind: UnitKind,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weights: Matrix::from_row_major_unchecked(fan_out, fan_in, data),
                    bias: Vector::zeros(fan_out),
                }
            })
            .collect();
        Mlp::from_layers(layers, unit_kind)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn unit_kind(&self) -> UnitKind {
        self.unit_kind
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.cols())
            .chain(self.layers.iter().map(|l| l.weights.rows()))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(PsaError::dim(format!(
                "input of length {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PsaError::domain("input has non-finite entries"));
        }
        Ok(())
    }

    /// Pre-activations and activations of every layer; the last entry of
    /// `zs` holds the output logits.
    fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &hs[i - 1] };
            let mut z = Vec::new();
            layer.affine(input, &mut z);
            if i + 1 < self.layers.len() {
                hs.push(z.iter().map(|&v| self.unit_kind.activate(v)).collect());
            }
            zs.push(z);
        }
        (zs, hs)
    }

    /// `log P(Y = c | x)` for every class, via a max-shifted log-sum-exp.
    pub fn forward_logp(&self, x: &Vector) -> Result<Vector> {
        self.check_input(x.as_slice())?;
        let (zs, _) = self.forward_trace(x.as_slice());
        Ok(Vector::from_vec_unchecked(log_softmax(
            zs.last().expect("at least one layer"),
        )))
    }

    pub fn predict(&self, x: &Vector) -> Result<usize> {
        let logp = self.forward_logp(x)?;
        Ok(argmax(logp.as_slice()))
    }

    /// Fraction of misclassified samples.
    pub fn error_rate(&self, data: &Dataset) -> Result<f64> {
        let mut wrong = 0usize;
        for s in data.samples() {
            if self.predict(&s.pixels)? != s.label {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / data.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        w.u8(self.unit_kind.code())?;
        w.len32(self.layers.len())?;
        for l in &self.layers {
            w.len32(l.weights.rows())?;
            w.len32(l.weights.cols())?;
            w.f64s(l.weights.as_slice())?;
            w.f64s(l.bias.as_slice())?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, _) = BinReader::open(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let code = r.u8()?;
        let unit_kind = UnitKind::from_code(code)
            .ok_or_else(|| r.format_error(format!("unknown unit kind code {code}")))?;
        let count = r.len32()?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let out = r.len32()?;
            let inp = r.len32()?;
            let weights = Matrix::from_row_major(out, inp, r.f64s(out * inp)?)?;
            let bias = Vector::from_vec(r.f64s(out)?)?;
            layers.push(Layer { weights, bias });
        }
        r.expect_eof()?;
        Mlp::from_layers(layers, unit_kind)
    }
}

impl InputGradient for Mlp {
    fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.rows()
    }

    fn input_gradient(&self, x: &[f64], class: usize) -> Result<Vector> {
        if class >= self.num_classes() {
            return Err(PsaError::domain(format!(
                "class {class} out of range 0..{}",
                self.num_classes()
            )));
        }
        self.check_input(x)?;
        let (zs, hs) = self.forward_trace(x);
        let logp = log_softmax(zs.last().expect("at least one layer"));
        // d log p_c / d z_j = [j == c] - p_j
        let mut delta: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(j, lp)| if j == class { 1.0 } else { 0.0 } - lp.exp())
            .collect();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let mut back = vec![0.0; layer.weights.cols()];
            layer.backprop(&delta, &mut back);
            if i > 0 {
                for ((b, &z), &h) in back.iter_mut().zip(&zs[i - 1]).zip(&hs[i - 1]) {
                    *b *= self.unit_kind.derivative(z, h);
                }
            }
            delta = back;
        }
        Ok(Vector::from_vec_unchecked(delta))
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Affine class scores `f_c(x) = w_c . x + b_c`, e.g. a linear discriminant.
/// Its input gradient is the constant `w_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScores {
    /// `classes x d`.
    pub weights: Matrix,
    pub bias: Vector,
}

impl InputGradient for LinearScores {
    fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    fn input_gradient(&self, x: &[f64], class: usize) -> Result<Vector> {
        if class >= self.num_classes() {
            return Err(PsaError::domain(format!("class {class} out of range")));
        }
        if x.len() != self.input_dim() {
            return Err(PsaError::dim("input length mismatch"));
        }
        Ok(Vector::from_vec_unchecked(self.weights.row(class).to_vec()))
    }
}

/// Input gradients of one class score over a dataset, one row per sample in
/// dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub rows: Matrix,
    pub class: usize,
    pub tag: String,
}

impl GradientField {
    pub fn new(rows: Matrix, class: usize, tag: impl Into<String>) -> Result<Self> {
        if rows.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(PsaError::domain("gradient field has non-finite entries"));
        }
        Ok(GradientField {
            rows,
            class,
            tag: tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.rows.row(n)
    }
}

pub fn gradient_field<M: InputGradient + ?Sized>(
    model: &M,
    data: &Dataset,
    class: usize,
) -> Result<GradientField> {
    gradient_field_threaded(model, data, class, 1)
}

/// Same as [`gradient_field`], computed on `threads` workers. Each row is
/// produced by the same arithmetic regardless of the worker count, so the
/// result is bit-identical.
pub fn gradient_field_threaded<M: InputGradient + ?Sized>(
    model: &M,
    data: &Dataset,
    class: usize,
    threads: usize,
) -> Result<GradientField> {
    let d = model.input_dim();
    if data.dim() != d {
        return Err(PsaError::dim(format!(
            "dataset dimension {} but model input {d}",
            data.dim()
        )));
    }
    let n = data.len();
    let mut buf = vec![0.0; n * d];
    let threads = threads.clamp(1, n.max(1));
    let chunk_rows = n.div_ceil(threads);

    let fill = |rows: &mut [f64], start: usize| -> Result<()> {
        for (k, out) in rows.chunks_mut(d).enumerate() {
            let g = model.input_gradient(data.samples()[start + k].pixels.as_slice(), class)?;
            out.copy_from_slice(g.as_slice());
        }
        Ok(())
    };

    if threads == 1 {
        fill(&mut buf, 0)?;
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = buf
                .chunks_mut(chunk_rows * d)
                .enumerate()
                .map(|(t, rows)| {
                    let fill = &fill;
                    scope.spawn(move || fill(rows, t * chunk_rows))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect::<Result<Vec<()>>>()
        })?;
    }
    let tag = format!("{}:class{class}:n{n}", data.split());
    GradientField::new(Matrix::from_row_major_unchecked(n, d, buf), class, tag)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches (dropout active).
    pub train_loss: f64,
    pub train_error: f64,
    pub valid_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_error,valid_error\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                e.epoch, e.train_loss, e.train_error, e.valid_error
            ));
        }
        s
    }
}

struct Gradients {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.as_slice().len()])
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }
}

/// Forward + backward for one sample, accumulating into `grads`. Returns the
/// sample's negative log-likelihood.
fn accumulate_sample<R: Rng + ?Sized>(
    model: &Mlp,
    x: &[f64],
    label: usize,
    dropout: Option<Dropout>,
    rng: &mut R,
    grads: &mut Gradients,
) -> f64 {
    let depth = model.layers.len();
    let kind = model.unit_kind;

    // activations[i] is the (dropped-out) input of layer i.
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(depth);

    let mask_for = |len: usize, keep: f64, rng: &mut R| -> Vec<f64> {
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    };

    let input = match dropout {
        Some(d) if d.input_keep < 1.0 => {
            let m = mask_for(x.len(), d.input_keep, rng);
            let a = x.iter().zip(&m).map(|(v, k)| v * k).collect();
            masks.push(m);
            a
        }
        _ => {
            masks.push(Vec::new());
            x.to_vec()
        }
    };
    activations.push(input);

    for (i, layer) in model.layers.iter().enumerate() {
        let mut z = Vec::new();
        layer.affine(&activations[i], &mut z);
        if i + 1 < depth {
            let h: Vec<f64> = z.iter().map(|&v| kind.activate(v)).collect();
            let a = match dropout {
                Some(d) if d.hidden_keep < 1.0 => {
                    let m = mask_for(h.len(), d.hidden_keep, rng);
                    let a = h.iter().zip(&m).map(|(v, k)| v * k).collect();
                    masks.push(m);
                    a
                }
                _ => {
                    masks.push(Vec::new());
                    h.clone()
                }
            };
            hs.push(h);
            activations.push(a);
        }
        zs.push(z);
    }

    let logp = log_softmax(&zs[depth - 1]);
    let loss = -logp[label];
    let mut delta: Vec<f64> = logp
        .iter()
        .enumerate()
        .map(|(j, lp)| lp.exp() - if j == label { 1.0 } else { 0.0 })
        .collect();

    for i in (0..depth).rev() {
        let layer = &model.layers[i];
        let input = &activations[i];
        let gw = &mut grads.weights[i];
        let cols = layer.weights.cols();
        for (o, &d) in delta.iter().enumerate() {
            grads.biases[i][o] += d;
            if d == 0.0 {
                continue;
            }
            for (g, a) in gw[o * cols..(o + 1) * cols].iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if i == 0 {
            break;
        }
        let mut back = vec![0.0; cols];
        layer.backprop(&delta, &mut back);
        let mask = &masks[i];
        for (k, b) in back.iter_mut().enumerate() {
            let m = if mask.is_empty() { 1.0 } else { mask[k] };
            *b *= m * kind.derivative(zs[i - 1][k], hs[i - 1][k]);
        }
        delta = back;
    }
    loss
}

/// Mini-batch SGD on the mean negative log-posterior of the true class.
///
/// Sample order is reshuffled every epoch from `config.seed`; dropout, when
/// configured, is active only here. Fails with [`PsaError::Training`] as soon
/// as a minibatch loss is non-finite.
pub fn train_sgd(
    config: &MlpConfig,
    train: &Dataset,
    valid: &Dataset,
) -> Result<(Mlp, TrainingLog)> {
    config.validate(train.dim(), train.num_classes())?;
    if valid.dim() != train.dim() {
        return Err(PsaError::dim("train and valid dimensions differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Mlp::random(&config.layer_sizes, config.unit_kind, &mut rng)?;
    let mut grads = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &train.samples()[i];
                batch_loss += accumulate_sample(
                    &model,
                    s.pixels.as_slice(),
                    s.label,
                    config.dropout,
                    &mut rng,
                    &mut grads,
                );
            }
            if !batch_loss.is_finite() {
                return Err(PsaError::Training {
                    epoch,
                    reason: format!("minibatch loss is {batch_loss}"),
                });
            }
            loss_sum += batch_loss;
            let step = config.learning_rate / batch.len() as f64;
            for (layer, (gw, gb)) in model
                .layers
                .iter_mut()
                .zip(grads.weights.iter().zip(&grads.biases))
            {
                for (w, g) in layer.weights.as_mut_slice().iter_mut().zip(gw) {
                    *w -= step * g;
                }
                for (b, g) in layer.bias.as_mut_slice().iter_mut().zip(gb) {
                    *b -= step * g;
                }
            }
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_error: model.error_rate(train)?,
            valid_error: model.error_rate(valid)?,
        };
        if !stats.train_loss.is_finite() {
            return Err(PsaError::Training {
                epoch,
                reason: "epoch loss is not finite".into(),
            });
        }
        log.epochs.push(stats);
    }
    if model.layers.iter().any(|l| {
        l.weights
            .as_slice()
            .iter()
            .chain(l.bias.iter())
            .any(|v| !v.is_finite())
    }) {
        return Err(PsaError::Training {
            epoch: config.epochs,
            reason: "parameters became non-finite".into(),
        });
    }
    Ok((model, log))
}
