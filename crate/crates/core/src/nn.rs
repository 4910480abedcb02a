//! Dense feed-forward networks trained with plain minibatch SGD on MSE.
//!
//! Weights are stored per layer as row-major `out x in` matrices. Batched
//! passes go through `matrixmultiply::dgemm`; everything is `f64`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("unsupported model schema version {found} (expected {MODEL_SCHEMA_VERSION})")]
    VersionMismatch { found: u64 },
    #[error("invalid training spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Softmax,
}

/// Multilayer perceptron with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

/// Parameter gradients, shaped like the network's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// All entries in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Activations of a batched forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    batch: usize,
    // activations[0] is the input; activations[l + 1] is the output of layer l.
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network outputs, row-major `batch x output_size`.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an input layer")
    }
}

/// Minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NnError::InvalidSpec("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidSpec("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(NnError::InvalidSpec("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// `C (m x n) = alpha * A (m x k) * B (k x n) + beta * C`, arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given dimensions
    // and strides (checked above in debug builds, guaranteed by callers).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Mlp {
    /// Seeded network with weights and biases drawn from
    /// `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(layer_sizes: &[usize], output_activation: OutputActivation, seed: u64) -> Result<Self, NnError> {
        Self::check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect());
            biases.push((0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect());
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output_activation,
        })
    }

    /// Network from explicit parameters; `weights[l]` is row-major `out x in`.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        output_activation: OutputActivation,
    ) -> Result<Self, NnError> {
        Self::check_sizes(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(shape_err(format!(
                "{layers} layers but {} weight and {} bias arrays",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] {
                return Err(shape_err(format!(
                    "layer {l} weights have {} entries, expected {}",
                    weights[l].len(),
                    pair[0] * pair[1]
                )));
            }
            if biases[l].len() != pair[1] {
                return Err(shape_err(format!(
                    "layer {l} biases have {} entries, expected {}",
                    biases[l].len(),
                    pair[1]
                )));
            }
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(shape_err("non-finite parameter"));
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            output_activation,
        })
    }

    fn check_sizes(layer_sizes: &[usize]) -> Result<(), NnError> {
        if layer_sizes.len() < 2 {
            return Err(shape_err("need at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(shape_err("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Flattened parameters: layer by layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    /// Mutable access to the `index`-th entry of [`Mlp::params`].
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                return Some(&mut w[index]);
            }
            index -= w.len();
            if index < b.len() {
                return Some(&mut b[index]);
            }
            index -= b.len();
        }
        None
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(input, 1)?.activations.pop().expect("output layer"))
    }

    /// Forward pass over a row-major `batch x input_size` matrix.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(inputs, batch)?.activations.pop().expect("output layer"))
    }

    pub fn forward_trace(&self, inputs: &[f64], batch: usize) -> Result<Trace, NnError> {
        if batch == 0 || inputs.len() != batch * self.input_size() {
            return Err(shape_err(format!(
                "input has {} values, expected {batch} x {}",
                inputs.len(),
                self.input_size()
            )));
        }
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(inputs.to_vec());
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(&self.biases[l]);
            }
            // Z = X * W^T + b
            gemm(
                batch,
                fan_in,
                fan_out,
                1.0,
                &activations[l],
                (fan_in, 1),
                &self.weights[l],
                (1, fan_in),
                1.0,
                &mut z,
            );
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.output_activation == OutputActivation::Softmax {
                z.chunks_mut(fan_out).for_each(softmax_in_place);
            }
            activations.push(z);
        }
        Ok(Trace { batch, activations })
    }

    /// Backpropagates `d_output` (gradient of the loss with respect to the
    /// network outputs, `batch x output_size`) through a trace of this net.
    pub fn backward_trace(&self, trace: &Trace, d_output: &[f64]) -> Result<Gradients, NnError> {
        let batch = trace.batch;
        let out = self.output_size();
        if d_output.len() != batch * out || trace.activations.len() != self.layer_sizes.len() {
            return Err(shape_err(format!(
                "output gradient has {} values, expected {batch} x {out}",
                d_output.len()
            )));
        }
        let mut delta = d_output.to_vec();
        if self.output_activation == OutputActivation::Softmax {
            // dz = s * (ds - <ds, s>)
            for (d, s) in delta.chunks_mut(out).zip(trace.output().chunks(out)) {
                let dot: f64 = d.iter().zip(s).map(|(a, b)| a * b).sum();
                d.iter_mut().zip(s).for_each(|(di, si)| *di = si * (*di - dot));
            }
        }
        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.weights.len()).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let input = &trace.activations[l];
            // dW = dZ^T * X
            gemm(
                fan_out,
                batch,
                fan_in,
                1.0,
                &delta,
                (1, fan_out),
                input,
                (fan_in, 1),
                0.0,
                &mut grads.weights[l],
            );
            for row in delta.chunks(fan_out) {
                grads.biases[l].iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if l > 0 {
                // dX = dZ * W, masked by the ReLU that produced X.
                let mut d_input = vec![0.0; batch * fan_in];
                gemm(
                    batch,
                    fan_out,
                    fan_in,
                    1.0,
                    &delta,
                    (fan_out, 1),
                    &self.weights[l],
                    (fan_in, 1),
                    0.0,
                    &mut d_input,
                );
                d_input.iter_mut().zip(input).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = d_input;
            }
        }
        Ok(grads)
    }

    /// Gradients of the single-sample MSE loss.
    pub fn backward(&self, input: &[f64], target: &[f64]) -> Result<Gradients, NnError> {
        Ok(self.mse_gradients(input, target, 1)?.1)
    }

    /// Batch loss (mean of per-sample MSE) and its gradients.
    pub fn mse_gradients(&self, inputs: &[f64], targets: &[f64], batch: usize) -> Result<(f64, Gradients), NnError> {
        let trace = self.forward_trace(inputs, batch)?;
        let out = self.output_size();
        if targets.len() != batch * out {
            return Err(shape_err(format!(
                "targets have {} values, expected {batch} x {out}",
                targets.len()
            )));
        }
        let scale = 1.0 / (batch * out) as f64;
        let mut loss = 0.0;
        let d_output: Vec<f64> = trace
            .output()
            .iter()
            .zip(targets)
            .map(|(p, t)| {
                let diff = p - t;
                loss += diff * diff;
                2.0 * diff * scale
            })
            .collect();
        let grads = self.backward_trace(&trace, &d_output)?;
        Ok((loss * scale, grads))
    }

    /// `params -= learning_rate * gradients`.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<(), NnError> {
        let matches = grads.weights.len() == self.weights.len()
            && grads.biases.len() == self.biases.len()
            && grads.weights.iter().zip(&self.weights).all(|(g, w)| g.len() == w.len())
            && grads.biases.iter().zip(&self.biases).all(|(g, b)| g.len() == b.len());
        if !matches {
            return Err(shape_err("gradient shapes do not match the network"));
        }
        let params = self.weights.iter_mut().chain(self.biases.iter_mut());
        let deltas = grads.weights.iter().chain(&grads.biases);
        for (p, g) in params.zip(deltas) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= learning_rate * g);
        }
        Ok(())
    }

    /// Trains with plain SGD; see [`Mlp::fit_with`].
    pub fn fit_mse<R: Rng>(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        spec: &TrainSpec,
        rng: &mut R,
    ) -> Result<f64, NnError> {
        self.fit_with(inputs, targets, spec, &mut Stepper::Sgd, rng)
    }

    /// Trains on `(inputs[i], targets[i])` pairs with shuffled minibatches;
    /// returns the final full-dataset MSE.
    pub fn fit_with<R: Rng>(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        spec: &TrainSpec,
        stepper: &mut Stepper,
        rng: &mut R,
    ) -> Result<f64, NnError> {
        spec.validate()?;
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(shape_err(format!(
                "{} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..spec.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(spec.batch_size) {
                x.clear();
                y.clear();
                for &i in chunk {
                    x.extend_from_slice(&inputs[i]);
                    y.extend_from_slice(&targets[i]);
                }
                let (_, grads) = self.mse_gradients(&x, &y, chunk.len())?;
                stepper.step(self, &grads, spec.learning_rate)?;
            }
        }
        let x: Vec<f64> = inputs.concat();
        let y: Vec<f64> = targets.concat();
        let pred = self.forward_batch(&x, inputs.len())?;
        mse_loss(&pred, &y)
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            output_activation: self.output_activation,
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_model_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| NnError::CorruptModel(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| NnError::CorruptModel("missing schema_version".into()))?;
        if version != u64::from(MODEL_SCHEMA_VERSION) {
            return Err(NnError::VersionMismatch { found: version });
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| NnError::CorruptModel(e.to_string()))?;
        Self::from_parts(file.layer_sizes, file.weights, file.biases, file.output_activation)
            .map_err(|e| NnError::CorruptModel(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Optimizer choice for training loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Adam moment estimates for one network (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(net: &Mlp) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, learning_rate: f64) -> Result<(), NnError> {
        let same = |a: &Gradients, b: &Gradients| {
            a.weights.len() == b.weights.len()
                && a.weights.iter().zip(&b.weights).all(|(x, y)| x.len() == y.len())
                && a.biases.iter().zip(&b.biases).all(|(x, y)| x.len() == y.len())
        };
        if !same(grads, &self.m) || !same(&Gradients::zeros_like(net), &self.m) {
            return Err(shape_err("gradient shapes do not match the optimizer state"));
        }
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let params = net.weights.iter_mut().chain(net.biases.iter_mut());
        let g = grads.weights.iter().chain(&grads.biases);
        let m = self.m.weights.iter_mut().chain(self.m.biases.iter_mut());
        let v = self.v.weights.iter_mut().chain(self.v.biases.iter_mut());
        for (((p, g), m), v) in params.zip(g).zip(m).zip(v) {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
        Ok(())
    }
}

/// Applies SGD or Adam updates to one network.
#[derive(Debug, Clone, PartialEq)]
pub enum Stepper {
    Sgd,
    Adam(AdamState),
}

impl Stepper {
    pub fn new(optimizer: Optimizer, net: &Mlp) -> Self {
        match optimizer {
            Optimizer::Sgd => Stepper::Sgd,
            Optimizer::Adam => Stepper::Adam(AdamState::new(net)),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, learning_rate: f64) -> Result<(), NnError> {
        match self {
            Stepper::Sgd => net.sgd_step(grads, learning_rate),
            Stepper::Adam(state) => state.step(net, grads, learning_rate),
        }
    }
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub layer_sizes: Vec<usize>,
    pub output_activation: OutputActivation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Mean of squared componentwise differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(shape_err(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}
