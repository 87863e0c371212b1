//! Comparison models trained on either the 2D embedding or the 14D features:
//! least squares, logistic regression, CART regression trees, random forests,
//! least-squares gradient boosting and a small MLP, plus holdout grid search.
//!
//! Unbounded outputs are min-max normalized over the training predictions,
//! which leaves every ranking metric unchanged.

use std::fmt;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics;
use crate::neuralnet::{self, Mlp, MlpSpec, TrainConfig};

const RIDGE_JITTER: f64 = 1e-8;
pub const LOGISTIC_ITERATIONS: usize = 500;
pub const LOGISTIC_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_MIN_LEAF: usize = 5;
pub const DEFAULT_SHRINKAGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Logistic,
    Tree,
    Forest,
    Boost,
    Mlp,
}

impl ModelKind {
    /// The five rows of the comparison tables, in table order.
    pub const TABLE: [ModelKind; 5] = [
        ModelKind::Linear,
        ModelKind::Logistic,
        ModelKind::Mlp,
        ModelKind::Forest,
        ModelKind::Boost,
    ];

    pub fn is_linear(self) -> bool {
        matches!(self, ModelKind::Linear | ModelKind::Logistic)
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Linear => "Linear Regression",
            ModelKind::Logistic => "Logistic Regression",
            ModelKind::Tree => "Decision Tree",
            ModelKind::Forest => "Random Forest Regressor",
            ModelKind::Boost => "Gradient Boost Regressor",
            ModelKind::Mlp => "Neural Network",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Boost => "boost",
            ModelKind::Mlp => "mlp",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "linear" => ModelKind::Linear,
            "logistic" => ModelKind::Logistic,
            "tree" => ModelKind::Tree,
            "forest" => ModelKind::Forest,
            "boost" => ModelKind::Boost,
            "mlp" | "nn" => ModelKind::Mlp,
            other => return Err(Error::Config(format!("unknown model kind {other:?}"))),
        })
    }
}

/// Kind-specific tuning knobs; unused fields stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub shrinkage: Option<f64>,
    pub hidden: Option<usize>,
}

impl Hyperparameters {
    pub fn trees(n_trees: usize, max_depth: usize) -> Self {
        Self {
            n_trees: Some(n_trees),
            max_depth: Some(max_depth),
            ..Default::default()
        }
    }

    pub fn depth(max_depth: usize) -> Self {
        Self {
            max_depth: Some(max_depth),
            ..Default::default()
        }
    }

    pub fn hidden(hidden: usize) -> Self {
        Self {
            hidden: Some(hidden),
            ..Default::default()
        }
    }
}

impl fmt::Display for Hyperparameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(v) = self.n_trees {
            parts.push(format!("n_trees={v}"));
        }
        if let Some(v) = self.max_depth {
            parts.push(format!("max_depth={v}"));
        }
        if let Some(v) = self.shrinkage {
            parts.push(format!("shrinkage={v}"));
        }
        if let Some(v) = self.hidden {
            parts.push(format!("hidden={v}"));
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(";"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Regression tree; node 0 is the root. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    k = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match &t.nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    /// Intercept first.
    Linear { coefficients: Vec<f64> },
    /// Intercept first, on standardized inputs.
    Logistic { coefficients: Vec<f64>, means: Vec<f64>, stds: Vec<f64> },
    Tree(Tree),
    Forest(Vec<Tree>),
    Boost { init: f64, shrinkage: f64, trees: Vec<Tree> },
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: ModelKind,
    pub params: ModelParams,
    pub hyperparameters: Hyperparameters,
    /// Min/max of training predictions; `None` for bounded (logistic) outputs.
    pub output_range: Option<(f64, f64)>,
}

impl BaselineModel {
    pub fn predict_raw(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(match &self.params {
            ModelParams::Linear { coefficients } => {
                check_width(x, coefficients.len() - 1)?;
                x.iter_rows()
                    .map(|r| coefficients[0] + r.iter().zip(&coefficients[1..]).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            }
            ModelParams::Logistic { coefficients, means, stds } => {
                check_width(x, means.len())?;
                x.iter_rows()
                    .map(|r| sigmoid(logit(coefficients, &standardize_row(r, means, stds))))
                    .collect()
            }
            ModelParams::Tree(t) => x.iter_rows().map(|r| t.predict_row(r)).collect(),
            ModelParams::Forest(trees) => x
                .iter_rows()
                .map(|r| trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / trees.len() as f64)
                .collect(),
            ModelParams::Boost { init, shrinkage, trees } => x
                .iter_rows()
                .map(|r| init + trees.iter().map(|t| shrinkage * t.predict_row(r)).sum::<f64>())
                .collect(),
            ModelParams::Mlp(m) => m.forward(x)?.column(0),
        })
    }

    /// Risk in [0, 1]. A degenerate training range (flat up to rounding)
    /// maps everything to 0.5.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let raw = self.predict_raw(x)?;
        Ok(match self.output_range {
            None => raw,
            Some((lo, hi)) if hi - lo > 1e-6 * hi.abs().max(lo.abs()).max(1.0) => raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect(),
            Some(_) => vec![0.5; raw.len()],
        })
    }
}

fn check_width(x: &Matrix, expected: usize) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::InvalidInput(format!(
            "model expects {expected} features, got {}",
            x.cols()
        )));
    }
    Ok(())
}

fn targets(y: &[bool]) -> Vec<f64> {
    metrics::labels_as_f64(y)
}

fn check_xy(x: &Matrix, y: &[bool]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    Ok(())
}

fn with_training_range(kind: ModelKind, params: ModelParams, hyper: Hyperparameters, x: &Matrix) -> Result<BaselineModel> {
    let mut model = BaselineModel {
        kind,
        params,
        hyperparameters: hyper,
        output_range: None,
    };
    let raw = model.predict_raw(x)?;
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    model.output_range = Some((lo, hi));
    Ok(model)
}

/// Solves the symmetric positive definite system `a · x = b` by Cholesky.
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Numeric("singular Gram matrix".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i * n + k] * z[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    Ok(x)
}

/// Ordinary least squares through the normal equations, with an intercept.
pub fn fit_linear(x: &Matrix, y: &[bool]) -> Result<BaselineModel> {
    fit_linear_values(x, &targets(y))
}

pub fn fit_linear_values(x: &Matrix, y: &[f64]) -> Result<BaselineModel> {
    if x.rows() != y.len() {
        return Err(Error::InvalidInput("row/label count mismatch".into()));
    }
    let p = x.cols() + 1;
    if x.rows() <= x.cols() {
        return Err(Error::InvalidInput(format!(
            "least squares needs more rows ({}) than features ({})",
            x.rows(),
            x.cols()
        )));
    }
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut aug = vec![1.0; p];
    for (r, &t) in x.iter_rows().zip(y) {
        aug[1..].copy_from_slice(r);
        for i in 0..p {
            rhs[i] += aug[i] * t;
            for j in 0..=i {
                gram[i * p + j] += aug[i] * aug[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[j * p + i] = gram[i * p + j];
        }
        gram[i * p + i] += RIDGE_JITTER;
    }
    let coefficients = cholesky_solve(&gram, &rhs, p)?;
    with_training_range(ModelKind::Linear, ModelParams::Linear { coefficients }, Hyperparameters::default(), x)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(coef: &[f64], row: &[f64]) -> f64 {
    coef[0] + row.iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>()
}

fn standardize_row(r: &[f64], means: &[f64], stds: &[f64]) -> Vec<f64> {
    r.iter()
        .zip(means)
        .zip(stds)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

/// Full-batch gradient descent on the mean negative log-likelihood of
/// standardized inputs. Returns coefficients and the NLL before each step.
pub(crate) fn logistic_descent(z: &Matrix, y: &[f64], iterations: usize, lr: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = z.cols() + 1;
    let n = z.rows() as f64;
    let mut coef = vec![0.0; p];
    let mut history = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let mut grad = vec![0.0; p];
        let mut nll = 0.0;
        for (r, &t) in z.iter_rows().zip(y) {
            let s = logit(&coef, r);
            // log(1 + e^s) − t·s, evaluated stably.
            nll += s.max(0.0) + (-s.abs()).exp().ln_1p() - t * s;
            let e = sigmoid(s) - t;
            grad[0] += e;
            for (g, v) in grad[1..].iter_mut().zip(r) {
                *g += e * v;
            }
        }
        let nll = nll / n;
        if !nll.is_finite() {
            return Err(Error::Numeric(format!("logistic regression diverged at iteration {it}")));
        }
        history.push(nll);
        for (c, g) in coef.iter_mut().zip(&grad) {
            *c -= lr * g / n;
        }
    }
    Ok((coef, history))
}

pub fn fit_logistic(x: &Matrix, y: &[bool]) -> Result<BaselineModel> {
    check_xy(x, y)?;
    let all: Vec<usize> = (0..x.rows()).collect();
    let norm = dataset::fit_normalizer(x, &all)?;
    let stds: Vec<f64> = norm.stds.iter().map(|s| if *s == 0.0 { 1.0 } else { *s }).collect();
    let mut z = x.clone();
    for r in 0..z.rows() {
        let row = standardize_row(x.row(r), &norm.means, &stds);
        z.row_mut(r).copy_from_slice(&row);
    }
    let (coefficients, _) = logistic_descent(&z, &targets(y), LOGISTIC_ITERATIONS, LOGISTIC_LEARNING_RATE)?;
    Ok(BaselineModel {
        kind: ModelKind::Logistic,
        params: ModelParams::Logistic {
            coefficients,
            means: norm.means,
            stds,
        },
        hyperparameters: Hyperparameters::default(),
        output_range: None,
    })
}

/// Candidate split of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Sum of squared errors of the two children.
    pub sse: f64,
    pub n_left: usize,
}

#[inline]
fn improves(candidate: f64, best: f64, scale: f64) -> bool {
    candidate < best - 1e-12 * scale.max(1.0)
}

/// Best variance-reducing split over `features` (ascending), scanning the
/// midpoints between consecutive distinct sorted values. Ties go to the
/// earliest (feature, threshold) in that order.
fn best_split(x: &Matrix, y: &[f64], idx: &[usize], features: &[usize], min_leaf: usize) -> Option<SplitChoice> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    let parent_sse = (total_sq - total * total / n as f64).max(0.0);
    let mut best: Option<SplitChoice> = None;
    let mut best_sse = parent_sse;
    let mut sorted = idx.to_vec();
    for &f in features {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let (mut s, mut sq) = (0.0, 0.0);
        for k in 0..n - 1 {
            let v = y[sorted[k]];
            s += v;
            sq += v * v;
            let n_left = k + 1;
            if n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let (a, b) = (x.get(sorted[k], f), x.get(sorted[k + 1], f));
            if a == b {
                continue;
            }
            let left = (sq - s * s / n_left as f64).max(0.0);
            let (rs, rsq) = (total - s, total_sq - sq);
            let right = (rsq - rs * rs / (n - n_left) as f64).max(0.0);
            let sse = left + right;
            if improves(sse, best_sse, parent_sse) {
                let mut threshold = 0.5 * (a + b);
                if threshold >= b {
                    threshold = a;
                }
                best_sse = sse;
                best = Some(SplitChoice { feature: f, threshold, sse, n_left });
            }
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    /// Features tried per split; `None` means all.
    subsample: Option<(usize, &'a mut ChaCha8Rng)>,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(TreeNode::Leaf { value: mean });
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let p = self.x.cols();
        let features: Vec<usize> = match &mut self.subsample {
            Some((m, rng)) if *m < p => {
                let mut f = index::sample(&mut **rng, p, *m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let Some(choice) = best_split(self.x, self.y, idx, &features, self.min_leaf) else {
            return id;
        };
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x.get(i, choice.feature) <= choice.threshold);
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left: l,
            right: r,
        };
        id
    }
}

fn grow_tree(
    x: &Matrix,
    y: &[f64],
    mut idx: Vec<usize>,
    max_depth: usize,
    min_leaf: usize,
    subsample: Option<(usize, &mut ChaCha8Rng)>,
) -> Tree {
    let mut b = TreeBuilder {
        x,
        y,
        max_depth,
        min_leaf,
        subsample,
        nodes: Vec::new(),
    };
    b.build(&mut idx, 0);
    Tree { nodes: b.nodes }
}

/// CART regression tree on real-valued targets.
pub fn fit_tree_values(x: &Matrix, y: &[f64], max_depth: usize, min_leaf: usize) -> Result<Tree> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(Error::InvalidInput("tree needs matching, non-empty rows and targets".into()));
    }
    if min_leaf == 0 {
        return Err(Error::Config("min_leaf must be >= 1".into()));
    }
    Ok(grow_tree(x, y, (0..x.rows()).collect(), max_depth, min_leaf, None))
}

pub fn fit_tree(x: &Matrix, y: &[bool], max_depth: usize, min_leaf: usize) -> Result<BaselineModel> {
    check_xy(x, y)?;
    let tree = fit_tree_values(x, &targets(y), max_depth, min_leaf)?;
    with_training_range(ModelKind::Tree, ModelParams::Tree(tree), Hyperparameters::depth(max_depth), x)
}

/// Forest switches; both on for the regular model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestOptions {
    pub bootstrap: bool,
    pub feature_subsampling: bool,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self {
            bootstrap: true,
            feature_subsampling: true,
        }
    }
}

pub fn fit_forest(x: &Matrix, y: &[bool], n_trees: usize, max_depth: usize, seed: u64) -> Result<BaselineModel> {
    fit_forest_with(x, y, n_trees, max_depth, seed, ForestOptions::default())
}

/// Bagged CART trees with ⌈√p⌉ candidate features per split. Per-tree seeds
/// are drawn up front from the master seed, so trees can grow in parallel.
pub fn fit_forest_with(
    x: &Matrix,
    y: &[bool],
    n_trees: usize,
    max_depth: usize,
    seed: u64,
    opts: ForestOptions,
) -> Result<BaselineModel> {
    check_xy(x, y)?;
    if n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    let t = targets(y);
    let n = x.rows();
    let m = (x.cols() as f64).sqrt().ceil() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n_trees).map(|_| master.next_u64()).collect();
    let trees: Vec<Tree> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let idx: Vec<usize> = if opts.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let sub = opts.feature_subsampling.then_some((m, &mut rng));
            grow_tree(x, &t, idx, max_depth, DEFAULT_MIN_LEAF, sub)
        })
        .collect();
    with_training_range(
        ModelKind::Forest,
        ModelParams::Forest(trees),
        Hyperparameters::trees(n_trees, max_depth),
        x,
    )
}

/// Least-squares boosting: start from the mean, add shrunken residual trees.
pub fn fit_boost(x: &Matrix, y: &[bool], n_trees: usize, max_depth: usize, shrinkage: f64) -> Result<BaselineModel> {
    fit_boost_with(x, y, n_trees, max_depth, shrinkage, DEFAULT_MIN_LEAF)
}

pub fn fit_boost_with(
    x: &Matrix,
    y: &[bool],
    n_trees: usize,
    max_depth: usize,
    shrinkage: f64,
    min_leaf: usize,
) -> Result<BaselineModel> {
    check_xy(x, y)?;
    let t = targets(y);
    let init = t.iter().sum::<f64>() / t.len() as f64;
    let mut f = vec![init; t.len()];
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let residual: Vec<f64> = t.iter().zip(&f).map(|(a, b)| a - b).collect();
        let tree = fit_tree_values(x, &residual, max_depth, min_leaf)?;
        for (fi, r) in f.iter_mut().zip(x.iter_rows()) {
            *fi += shrinkage * tree.predict_row(r);
        }
        trees.push(tree);
    }
    let hyper = Hyperparameters {
        shrinkage: Some(shrinkage),
        ..Hyperparameters::trees(n_trees, max_depth)
    };
    with_training_range(ModelKind::Boost, ModelParams::Boost { init, shrinkage, trees }, hyper, x)
}

pub fn fit_mlp(x: &Matrix, y: &[bool], hidden: usize, cfg: &TrainConfig) -> Result<BaselineModel> {
    check_xy(x, y)?;
    let spec = MlpSpec::new(vec![x.cols(), hidden, 1]);
    let init = neuralnet::init_mlp(&spec, cfg.seed)?;
    let tgt = Matrix::from_vec(y.len(), 1, targets(y))?;
    let (mlp, _) = neuralnet::train(&init, x, &tgt, cfg)?;
    with_training_range(ModelKind::Mlp, ModelParams::Mlp(mlp), Hyperparameters::hidden(hidden), x)
}

/// Fits one model of `kind`, filling missing hyperparameters with defaults.
pub fn fit_model(
    kind: ModelKind,
    x: &Matrix,
    y: &[bool],
    hyper: &Hyperparameters,
    seed: u64,
    mlp_cfg: &TrainConfig,
) -> Result<BaselineModel> {
    match kind {
        ModelKind::Linear => fit_linear(x, y),
        ModelKind::Logistic => fit_logistic(x, y),
        ModelKind::Tree => fit_tree(x, y, hyper.max_depth.unwrap_or(5), DEFAULT_MIN_LEAF),
        ModelKind::Forest => fit_forest(x, y, hyper.n_trees.unwrap_or(10), hyper.max_depth.unwrap_or(5), seed),
        ModelKind::Boost => fit_boost(
            x,
            y,
            hyper.n_trees.unwrap_or(15),
            hyper.max_depth.unwrap_or(5),
            hyper.shrinkage.unwrap_or(DEFAULT_SHRINKAGE),
        ),
        ModelKind::Mlp => {
            let cfg = TrainConfig {
                seed,
                ..mlp_cfg.clone()
            };
            fit_mlp(x, y, hyper.hidden.unwrap_or(10), &cfg)
        }
    }
}

/// Candidate hyperparameters per kind and the holdout protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchSpec {
    pub linear: Vec<Hyperparameters>,
    pub logistic: Vec<Hyperparameters>,
    pub tree: Vec<Hyperparameters>,
    pub forest: Vec<Hyperparameters>,
    pub boost: Vec<Hyperparameters>,
    pub mlp: Vec<Hyperparameters>,
    pub validation_fraction: f64,
    pub seed: u64,
    pub mlp_train: TrainConfig,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        let trees = |counts: &[usize], depths: &[usize]| {
            counts
                .iter()
                .flat_map(|&n| depths.iter().map(move |&d| Hyperparameters::trees(n, d)))
                .collect::<Vec<_>>()
        };
        Self {
            linear: vec![Hyperparameters::default()],
            logistic: vec![Hyperparameters::default()],
            tree: vec![Hyperparameters::depth(3), Hyperparameters::depth(5)],
            forest: trees(&[10, 20], &[3, 5]),
            boost: trees(&[15, 20], &[3, 5]),
            mlp: vec![Hyperparameters::hidden(5), Hyperparameters::hidden(10), Hyperparameters::hidden(100)],
            validation_fraction: 0.2,
            seed: 0,
            mlp_train: TrainConfig {
                epochs: 100,
                ..TrainConfig::default()
            },
        }
    }
}

impl GridSearchSpec {
    pub fn grid(&self, kind: ModelKind) -> &[Hyperparameters] {
        match kind {
            ModelKind::Linear => &self.linear,
            ModelKind::Logistic => &self.logistic,
            ModelKind::Tree => &self.tree,
            ModelKind::Forest => &self.forest,
            ModelKind::Boost => &self.boost,
            ModelKind::Mlp => &self.mlp,
        }
    }

    pub fn grid_mut(&mut self, kind: ModelKind) -> &mut Vec<Hyperparameters> {
        match kind {
            ModelKind::Linear => &mut self.linear,
            ModelKind::Logistic => &mut self.logistic,
            ModelKind::Tree => &mut self.tree,
            ModelKind::Forest => &mut self.forest,
            ModelKind::Boost => &mut self.boost,
            ModelKind::Mlp => &mut self.mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: Hyperparameters,
    pub best_auc: f64,
    /// Validation AUC per grid point, in grid order.
    pub table: Vec<(Hyperparameters, f64)>,
}

/// Single holdout: fit every grid point on the sub-training part and keep the
/// first one with the highest validation AUC.
pub fn grid_search(kind: ModelKind, x: &Matrix, y: &[bool], spec: &GridSearchSpec) -> Result<GridSearchResult> {
    check_xy(x, y)?;
    let grid = spec.grid(kind);
    if grid.is_empty() {
        return Err(Error::Config(format!("empty hyperparameter grid for {kind}")));
    }
    if !(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0) {
        return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
    }
    let holdout = dataset::split(x.rows(), 1.0 - spec.validation_fraction, spec.seed)?;
    let (xt, yt) = (x.select_rows(&holdout.train_indices), pick(y, &holdout.train_indices));
    let (xv, yv) = (x.select_rows(&holdout.test_indices), pick(y, &holdout.test_indices));
    let table: Vec<(Hyperparameters, f64)> = grid
        .iter()
        .map(|h| {
            let model = fit_model(kind, &xt, &yt, h, spec.seed, &spec.mlp_train)?;
            let auc = metrics::roc_auc(&model.predict(&xv)?, &yv)?;
            Ok((h.clone(), auc))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, (_, auc)) in table.iter().enumerate() {
        if *auc > table[best].1 {
            best = k;
        }
    }
    Ok(GridSearchResult {
        best: table[best].0.clone(),
        best_auc: table[best].1,
        table,
    })
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSpace {
    /// The 2D embedding plane.
    Embedding2D,
    /// The normalized 14D feature space.
    Features14D,
}

impl fmt::Display for FeatureSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSpace::Embedding2D => "2d",
            FeatureSpace::Features14D => "14d",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub space: FeatureSpace,
    pub auc: f64,
    pub hyperparameters: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTables {
    pub embedding_2d: Vec<ComparisonRow>,
    pub features_14d: Vec<ComparisonRow>,
}

impl ComparisonTables {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,space,auc,hyperparameters\n");
        for r in self.embedding_2d.iter().chain(&self.features_14d) {
            out.push_str(&format!("{},{},{},{}\n", r.model, r.space, r.auc, r.hyperparameters));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (title, rows) in [
            ("Risk estimation in the 2D embedding space", &self.embedding_2d),
            ("Risk estimation in the original 14D feature space", &self.features_14d),
        ] {
            out.push_str(title);
            out.push('\n');
            out.push_str(&format!("  {:<26} {:>7}  {}\n", "Model", "AUC", "Tuning parameters"));
            for r in rows {
                out.push_str(&format!("  {:<26} {:>7.4}  {}\n", r.model.label(), r.auc, r.hyperparameters));
            }
            out.push('\n');
        }
        out
    }

    pub fn auc(&self, space: FeatureSpace, kind: ModelKind) -> Option<f64> {
        let rows = match space {
            FeatureSpace::Embedding2D => &self.embedding_2d,
            FeatureSpace::Features14D => &self.features_14d,
        };
        rows.iter().find(|r| r.model == kind).map(|r| r.auc)
    }
}

/// Inputs for one feature space: training and test design matrices.
pub struct SpaceData<'a> {
    pub train: &'a Matrix,
    pub test: &'a Matrix,
}

/// Grid-searches, refits on the full training set and scores the test set
/// for every kind in both spaces.
pub fn compare_spaces(
    space_2d: SpaceData<'_>,
    space_14d: SpaceData<'_>,
    train_labels: &[bool],
    test_labels: &[bool],
    kinds: &[ModelKind],
    spec: &GridSearchSpec,
) -> Result<ComparisonTables> {
    let run = |data: &SpaceData<'_>, space: FeatureSpace| -> Result<Vec<ComparisonRow>> {
        kinds
            .iter()
            .map(|&kind| {
                let search = grid_search(kind, data.train, train_labels, spec)?;
                let model = fit_model(kind, data.train, train_labels, &search.best, spec.seed, &spec.mlp_train)?;
                let auc = metrics::roc_auc(&model.predict(data.test)?, test_labels)?;
                log::info!("{space} {kind}: test AUC {auc:.4} ({})", search.best);
                Ok(ComparisonRow {
                    model: kind,
                    space,
                    auc,
                    hyperparameters: search.best,
                })
            })
            .collect()
    };
    Ok(ComparisonTables {
        embedding_2d: run(&space_2d, FeatureSpace::Embedding2D)?,
        features_14d: run(&space_14d, FeatureSpace::Features14D)?,
    })
}
