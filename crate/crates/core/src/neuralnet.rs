//! Small fully connected networks with tanh hidden layers and a linear output,
//! trained by mini-batch momentum SGD on mean squared error.
//!
//! Two shapes are used by the pipeline: the parametric embedding network
//! (14 → 100 → 2) and the risk regressor (2 → 5 → 1).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    /// tanh hidden layers, linear output.
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Linear,
        }
    }

    pub fn nn_tsne() -> Self {
        Self::new(vec![14, 100, 2])
    }

    pub fn nn_risk(hidden: usize) -> Self {
        Self::new(vec![2, hidden, 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "invalid layer sizes {:?}: need >= 2 layers of width >= 1",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// Dense layer, weights stored `n_out × n_in` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    #[inline]
    fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.n_in + i]
    }
}

/// Per-output mean/std applied to training targets; outputs are mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStandardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl TargetStandardizer {
    /// Zero-variance outputs keep a unit scale.
    pub fn fit(targets: &Matrix) -> Self {
        let n = targets.rows().max(1) as f64;
        let cols = targets.cols();
        let mut means = vec![0.0; cols];
        for r in targets.iter_rows() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; cols];
        for r in targets.iter_rows() {
            for ((s, v), m) in stds.iter_mut().zip(r).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in stds.iter_mut() {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Self { means, stds }
    }

    #[inline]
    fn standardize(&self, j: usize, v: f64) -> f64 {
        (v - self.means[j]) / self.stds[j]
    }

    #[inline]
    fn restore(&self, j: usize, v: f64) -> f64 {
        v * self.stds[j] + self.means[j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
    pub target_standardizer: Option<TargetStandardizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> Result<Mlp> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_sizes
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            let mut layer = Layer::zeros(n_in, n_out);
            layer
                .weights
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-a..a));
            layer
        })
        .collect();
    Ok(Mlp {
        spec: spec.clone(),
        layers,
        target_standardizer: None,
    })
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| *v == 0.0))
    }
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output_activation
        } else {
            self.spec.hidden_activation
        }
    }

    /// Forward pass of one sample, recording every layer's activations.
    /// `acts[0]` is the input; `acts[L]` the raw (standardized-space) output.
    fn forward_trace(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len() + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let (prev, next) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            out.clear();
            for o in 0..layer.n_out {
                let w = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                let z: f64 = layer.biases[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(act.apply(z));
            }
        }
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Network output before de-standardization.
    pub fn forward_raw(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        let mut acts = Vec::new();
        for (r, row) in x.iter_rows().enumerate() {
            self.forward_trace(row, &mut acts);
            out.row_mut(r).copy_from_slice(acts.last().unwrap());
        }
        Ok(out)
    }

    /// Predictions in target units.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = self.forward_raw(x)?;
        if let Some(s) = &self.target_standardizer {
            for r in 0..out.rows() {
                for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                    *v = s.restore(j, *v);
                }
            }
        }
        Ok(out)
    }

    /// Single-sample convenience wrapper around [`Mlp::forward`].
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.row(0).to_vec())
    }

    pub fn parameters_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// Mean over batch and outputs of (raw output − standardized target)², with
/// backpropagated parameter gradients. Targets are given in original units.
pub fn mse_loss_and_gradients(mlp: &Mlp, x: &Matrix, targets: &Matrix) -> Result<(f64, Gradients)> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    batch_loss_and_gradients(mlp, x, targets, &rows)
}

fn batch_loss_and_gradients(
    mlp: &Mlp,
    x: &Matrix,
    targets: &Matrix,
    rows: &[usize],
) -> Result<(f64, Gradients)> {
    mlp.check_width(x)?;
    if targets.rows() != x.rows() || targets.cols() != mlp.output_dim() {
        return Err(Error::InvalidInput(format!(
            "targets are {}x{}, expected {}x{}",
            targets.rows(),
            targets.cols(),
            x.rows(),
            mlp.output_dim()
        )));
    }
    let n_layers = mlp.layers.len();
    let n_out = mlp.output_dim();
    let scale = 1.0 / (rows.len().max(1) * n_out) as f64;
    let mut grads = Gradients::zeros_like(mlp);
    let mut acts: Vec<Vec<f64>> = Vec::new();
    let mut delta: Vec<f64> = Vec::new();
    let mut next_delta: Vec<f64> = Vec::new();
    let mut loss = 0.0;

    for &r in rows {
        mlp.forward_trace(x.row(r), &mut acts);
        let out = &acts[n_layers];
        delta.clear();
        for (j, (&pred, &t)) in out.iter().zip(targets.row(r)).enumerate() {
            let t = match &mlp.target_standardizer {
                Some(s) => s.standardize(j, t),
                None => t,
            };
            let e = pred - t;
            loss += e * e;
            delta.push(2.0 * e * scale * mlp.activation(n_layers - 1).derivative_from_output(pred));
        }
        for l in (0..n_layers).rev() {
            let layer = &mlp.layers[l];
            let input = &acts[l];
            let g = &mut grads.layers[l];
            for o in 0..layer.n_out {
                let d = delta[o];
                g.biases[o] += d;
                let gw = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (w, a) in gw.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if l > 0 {
                let act = mlp.activation(l - 1);
                next_delta.clear();
                for i in 0..layer.n_in {
                    let s: f64 = (0..layer.n_out).map(|o| layer.weight(o, i) * delta[o]).sum();
                    next_delta.push(s * act.derivative_from_output(input[i]));
                }
                std::mem::swap(&mut delta, &mut next_delta);
            }
        }
    }
    Ok((loss * scale, grads))
}

/// Trains a copy of `mlp`; returns the model and the per-epoch mean loss.
pub fn train(mlp: &Mlp, x: &Matrix, targets: &Matrix, cfg: &TrainConfig) -> Result<(Mlp, Vec<f64>)> {
    cfg.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::InvalidInput("training needs at least one sample".into()));
    }
    if targets.rows() != n {
        return Err(Error::InvalidInput(format!(
            "{n} inputs but {} targets",
            targets.rows()
        )));
    }
    let mut model = mlp.clone();
    model.target_standardizer = Some(TargetStandardizer::fit(targets));
    let mut velocity = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_loss_and_gradients(&model, x, targets, batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss in epoch {epoch}"
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            for ((layer, v), g) in model
                .layers
                .iter_mut()
                .zip(velocity.layers.iter_mut())
                .zip(&grads.layers)
            {
                let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
                let vels = v.weights.iter_mut().chain(v.biases.iter_mut());
                let gs = g.weights.iter().chain(&g.biases);
                for ((p, vel), gv) in params.zip(vels).zip(gs) {
                    *vel = cfg.momentum * *vel - cfg.learning_rate * gv;
                    *p += *vel;
                }
            }
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || !model.parameters_finite() {
            return Err(Error::Numeric(format!("training diverged in epoch {epoch}")));
        }
        history.push(mean);
    }
    Ok((model, history))
}

/// Fits the 14 → 100 → 2 map from normalized features onto t-SNE coordinates.
pub fn fit_nn_tsne(x_train: &Matrix, y_train: &Matrix, cfg: &TrainConfig) -> Result<Mlp> {
    if x_train.rows() != y_train.rows() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} embedding rows",
            x_train.rows(),
            y_train.rows()
        )));
    }
    let mlp = init_mlp(&MlpSpec::nn_tsne(), cfg.seed)?;
    Ok(train(&mlp, x_train, y_train, cfg)?.0)
}

/// Fits the 2 → hidden → 1 regressor from embedding coordinates onto real
/// targets (the 0/1 claim indicator, or any other per-point value).
pub fn fit_nn_risk_values(y_train: &Matrix, values: &[f64], hidden: usize, cfg: &TrainConfig) -> Result<Mlp> {
    if y_train.rows() != values.len() {
        return Err(Error::InvalidInput(format!(
            "{} embedding rows but {} targets",
            y_train.rows(),
            values.len()
        )));
    }
    let mlp = init_mlp(&MlpSpec::nn_risk(hidden), cfg.seed)?;
    let targets = Matrix::from_vec(values.len(), 1, values.to_vec())?;
    Ok(train(&mlp, y_train, &targets, cfg)?.0)
}

pub fn fit_nn_risk(y_train: &Matrix, claims: &[bool], hidden: usize, cfg: &TrainConfig) -> Result<Mlp> {
    let values: Vec<f64> = claims.iter().map(|c| f64::from(u8::from(*c))).collect();
    fit_nn_risk_values(y_train, &values, hidden, cfg)
}
