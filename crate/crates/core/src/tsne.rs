//! Exact t-SNE.
//!
//! Input affinities are Gaussian conditionals calibrated per row to a target
//! perplexity, symmetrized into a joint distribution `P`. The 2D map is found
//! by momentum gradient descent on `KL(P || Q)` where `Q` uses a Student-t
//! kernel. Everything is O(N²) per iteration; `P` is held as a packed strict
//! upper triangle so N = 20000 stays within a couple of gigabytes.
//!
//! Pair sums are evaluated over fixed row tiles whose partial results are
//! reduced in tile order, so the output does not depend on the number of
//! worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const SIGMA_MIN: f64 = 1e-20;
const SIGMA_MAX: f64 = 1e20;
const Q_FLOOR: f64 = 1e-12;
const KERNEL_CUTOFF: f64 = 230.0;

/// Rows per tile in the pair loops and in streamed affinity calibration.
const TILE_ROWS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration_factor: f64,
    pub exaggeration_iterations: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_iteration: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Tolerance on |log2(perplexity) - log2(target)|.
    pub sigma_search_tolerance: f64,
    pub sigma_search_max_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 500.0,
            n_iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration_factor: 12.0,
            exaggeration_iterations: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_iteration: 250,
            init_scale: 1e-4,
            seed: 0,
            sigma_search_tolerance: 1e-5,
            sigma_search_max_iterations: 50,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if n_points < 2 {
            return fail(format!("t-SNE needs at least 2 points, got {n_points}"));
        }
        if !(self.perplexity > 0.0) {
            return fail("perplexity must be > 0".into());
        }
        // A row of N-1 neighbours reaches at most perplexity N-1 (uniform row).
        if self.perplexity > (n_points - 1) as f64 {
            return fail(format!(
                "perplexity {} exceeds n_points - 1 = {}",
                self.perplexity,
                n_points - 1
            ));
        }
        if self.n_iterations == 0
            || self.exaggeration_iterations == 0
            || self.momentum_switch_iteration == 0
            || self.sigma_search_max_iterations == 0
        {
            return fail("iteration counts must be >= 1".into());
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("early_exaggeration_factor", self.early_exaggeration_factor),
            ("momentum_initial", self.momentum_initial),
            ("momentum_final", self.momentum_final),
            ("init_scale", self.init_scale),
            ("sigma_search_tolerance", self.sigma_search_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be a positive finite number"));
            }
        }
        Ok(())
    }
}

/// Joint input affinities `P`, symmetric with zero diagonal and unit total mass.
///
/// Stored as the strict upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    upper: Vec<f64>,
}

#[inline]
fn row_offset(n: usize, i: usize) -> usize {
    // Start of row i's strip (entries (i, i+1..n)) in the packed triangle.
    i * (2 * n - i - 1) / 2
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => 0.0,
            Less => self.upper[row_offset(self.n, i) + (j - i - 1)],
            Greater => self.upper[row_offset(self.n, j) + (i - j - 1)],
        }
    }

    /// Σ_ij p_ij over ordered pairs.
    pub fn total_mass(&self) -> f64 {
        2.0 * self.upper.iter().sum::<f64>()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.set(i, j, self.get(i, j));
            }
        }
        m
    }

    /// Wraps a dense symmetric matrix. The lower triangle is ignored.
    pub fn from_dense_symmetric(m: &Matrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::InvalidInput("affinity matrix must be square".into()));
        }
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(m.get(i, j));
            }
        }
        Ok(Self { n, upper })
    }

    fn strip(&self, i: usize) -> &[f64] {
        let start = row_offset(self.n, i);
        &self.upper[start..start + (self.n - i - 1)]
    }
}

/// Result of a t-SNE run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub y: Matrix,
    /// KL(P || Q) at each iteration, always against the un-exaggerated `P`.
    pub kl_history: Vec<f64>,
}

/// Conditional affinities and the bandwidths that produced them.
#[derive(Debug, Clone)]
pub struct ConditionalAffinities {
    /// Row-stochastic, zero diagonal.
    pub p: Matrix,
    pub sigmas: Vec<f64>,
    /// Rows whose bandwidth search stopped at the iteration cap.
    pub unconverged: Vec<usize>,
}

pub fn pairwise_sq_distances(x: &Matrix) -> Result<Matrix> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    let mut d = Matrix::zeros(n, n);
    d.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| sq_distance_row(x, i, row));
    Ok(d)
}

#[inline]
fn sq_distance_row(x: &Matrix, i: usize, out: &mut [f64]) {
    let xi = x.row(i);
    for (j, o) in out.iter_mut().enumerate() {
        *o = if j == i {
            0.0
        } else {
            xi.iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
    }
}

struct RowCalibration {
    sigma: f64,
    converged: bool,
}

/// Fills `out` with exp(-(d_j - d_min) / 2σ²) (diagonal 0) and returns the
/// Shannon entropy in bits of the normalized row together with the mass.
fn row_entropy_bits(dist: &[f64], self_idx: usize, d_min: f64, sigma: f64, out: &mut [f64]) -> (f64, f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut mass = 0.0;
    let mut weighted = 0.0;
    for (j, (o, d)) in out.iter_mut().zip(dist).enumerate() {
        if j == self_idx {
            *o = 0.0;
            continue;
        }
        let a = (d - d_min) * inv;
        // Kernel values below e^-230 (~1e-100) are flushed to zero: they are
        // numerically invisible but would otherwise turn into subnormals,
        // which are orders of magnitude slower in every later pass.
        let e = if a < KERNEL_CUTOFF { (-a).exp() } else { 0.0 };
        *o = e;
        mass += e;
        if e > 0.0 {
            weighted += a * e;
        }
    }
    let nats = mass.ln() + weighted / mass;
    (nats / std::f64::consts::LN_2, mass)
}

/// Bisects σ (geometrically, starting at 1) until the row's perplexity
/// matches the target; writes the normalized row into `out`.
fn calibrate_row(
    dist: &[f64],
    self_idx: usize,
    log2_target: f64,
    tol: f64,
    max_iter: usize,
    out: &mut [f64],
) -> Result<RowCalibration> {
    let mut d_min = f64::INFINITY;
    for (j, d) in dist.iter().enumerate() {
        if j == self_idx {
            continue;
        }
        if !d.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite distance between rows {self_idx} and {j}"
            )));
        }
        d_min = d_min.min(*d);
    }

    let mut sigma = 1.0f64;
    let (mut lo, mut hi): (Option<f64>, Option<f64>) = (None, None);
    let mut best = (f64::INFINITY, sigma);
    let mut converged = false;
    let mut mass = 0.0;
    for _ in 0..max_iter {
        let (bits, m) = row_entropy_bits(dist, self_idx, d_min, sigma, out);
        mass = m;
        let diff = bits - log2_target;
        if diff.abs() < best.0 {
            best = (diff.abs(), sigma);
        }
        if diff.abs() <= tol {
            converged = true;
            break;
        }
        let next = if diff > 0.0 {
            hi = Some(sigma);
            lo.map_or(sigma / 2.0, |l| (l * sigma).sqrt())
        } else {
            lo = Some(sigma);
            hi.map_or(sigma * 2.0, |h| (h * sigma).sqrt())
        };
        let next = next.clamp(SIGMA_MIN, SIGMA_MAX);
        if next == sigma {
            break;
        }
        sigma = next;
    }
    if !converged {
        sigma = best.1;
        mass = row_entropy_bits(dist, self_idx, d_min, sigma, out).1;
    }
    out.iter_mut().for_each(|v| *v /= mass);
    Ok(RowCalibration { sigma, converged })
}

/// Perplexity-calibrated conditionals p_{j|i} from a dense distance matrix.
pub fn conditional_affinities(
    d: &Matrix,
    perplexity: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ConditionalAffinities> {
    let n = d.rows();
    if d.cols() != n || n < 2 {
        return Err(Error::InvalidInput("distance matrix must be square with N >= 2".into()));
    }
    if !(perplexity > 0.0) || perplexity > (n - 1) as f64 {
        return Err(Error::Config(format!(
            "perplexity {perplexity} must lie in (0, {}]",
            n - 1
        )));
    }
    let log2_target = perplexity.log2();
    let mut p = Matrix::zeros(n, n);
    let results: Vec<Result<RowCalibration>> = p
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, out)| calibrate_row(d.row(i), i, log2_target, tol, max_iter, out))
        .collect();
    let mut sigmas = Vec::with_capacity(n);
    let mut unconverged = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        sigmas.push(r.sigma);
        if !r.converged {
            unconverged.push(i);
        }
    }
    Ok(ConditionalAffinities {
        p,
        sigmas,
        unconverged,
    })
}

/// p_ij = (p_{j|i} + p_{i|j}) / 2N.
pub fn symmetrize(p_cond: &Matrix) -> AffinityMatrix {
    let n = p_cond.rows();
    let denom = 2.0 * n as f64;
    let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            upper.push((p_cond.get(i, j) + p_cond.get(j, i)) / denom);
        }
    }
    AffinityMatrix { n, upper }
}

/// Summary of a streamed affinity calibration.
#[derive(Debug, Clone)]
pub struct CalibrationSummary {
    pub sigmas: Vec<f64>,
    pub unconverged: Vec<usize>,
}

/// Computes `P` straight from the features without materializing the N×N
/// distance or conditional matrices. Bit-identical to
/// `symmetrize(conditional_affinities(pairwise_sq_distances(x)))`.
pub fn joint_affinities(
    x: &Matrix,
    perplexity: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(AffinityMatrix, CalibrationSummary)> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidInput("feature matrix contains non-finite values".into()));
    }
    if !(perplexity > 0.0) || perplexity > (n - 1) as f64 {
        return Err(Error::Config(format!(
            "perplexity {perplexity} must lie in (0, {}]",
            n - 1
        )));
    }
    let log2_target = perplexity.log2();
    let mut upper = vec![0.0; n * (n - 1) / 2];
    let mut sigmas = Vec::with_capacity(n);
    let mut unconverged = Vec::new();
    let mut block = vec![0.0; TILE_ROWS.min(n) * n];

    for start in (0..n).step_by(TILE_ROWS) {
        let end = (start + TILE_ROWS).min(n);
        let rows = &mut block[..(end - start) * n];
        let results: Vec<Result<RowCalibration>> = rows
            .par_chunks_mut(n)
            .enumerate()
            .map_init(
                || vec![0.0; n],
                |dist, (k, out)| {
                    let i = start + k;
                    sq_distance_row(x, i, dist);
                    calibrate_row(dist, i, log2_target, tol, max_iter, out)
                },
            )
            .collect();
        for (k, r) in results.into_iter().enumerate() {
            let r = r?;
            let i = start + k;
            sigmas.push(r.sigma);
            if !r.converged {
                unconverged.push(i);
            }
            let row = &rows[k * n..(k + 1) * n];
            // Row i deposits p_{j|i} into pair (min, max); row i < j is always
            // seen first, so each pair sums as p_{j|i} + p_{i|j}.
            for (j, &v) in row.iter().enumerate() {
                match j.cmp(&i) {
                    std::cmp::Ordering::Greater => upper[row_offset(n, i) + (j - i - 1)] += v,
                    std::cmp::Ordering::Less => upper[row_offset(n, j) + (i - j - 1)] += v,
                    std::cmp::Ordering::Equal => {}
                }
            }
        }
    }
    let denom = 2.0 * n as f64;
    upper.iter_mut().for_each(|v| *v /= denom);
    Ok((AffinityMatrix { n, upper }, CalibrationSummary { sigmas, unconverged }))
}

/// Student-t affinities of a low-dimensional map.
#[derive(Debug, Clone)]
pub struct LowDimAffinities {
    /// Normalized affinities, zero diagonal, unit mass.
    pub q: Matrix,
    /// Kernel weights (1 + ‖y_i − y_j‖²)⁻¹ with zero diagonal.
    pub w: Matrix,
}

pub fn low_dim_affinities(y: &Matrix) -> LowDimAffinities {
    let n = y.rows();
    let mut w = Matrix::zeros(n, n);
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2: f64 = y
                .row(i)
                .iter()
                .zip(y.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = 1.0 / (1.0 + d2);
            w.set(i, j, v);
            z += v;
        }
    }
    let mut q = w.clone();
    q.as_mut_slice().iter_mut().for_each(|v| *v /= z);
    LowDimAffinities { q, w }
}

/// Σ_ij p_ij ln(p_ij / q_ij), skipping p_ij = 0 and flooring q at 1e-12.
pub fn kl_divergence(p: &AffinityMatrix, q: &Matrix) -> f64 {
    let n = p.n();
    let mut c = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i != j && pij > 0.0 {
                c += pij * (pij / q.get(i, j).max(Q_FLOOR)).ln();
            }
        }
    }
    c
}

/// Per-tile partial sums of the pair loop.
struct TileSums {
    /// Attractive term Σ_j p_ij w_ij (y_i − y_j), 2 per point.
    attract: Vec<f64>,
    /// Repulsive term Σ_j w_ij² (y_i − y_j), 2 per point.
    repulse: Vec<f64>,
    z: f64,
    /// Σ_{i<j} p_ij ln w_ij.
    p_log_w: f64,
    /// Smallest kernel weight over all pairs (a lower bound for those with p_ij > 0).
    min_w: f64,
}

fn tile_sums(p: &AffinityMatrix, y: &[f64], start: usize, end: usize, with_kl: bool) -> TileSums {
    let n = p.n;
    let mut t = TileSums {
        attract: vec![0.0; 2 * n],
        repulse: vec![0.0; 2 * n],
        z: 0.0,
        p_log_w: 0.0,
        min_w: f64::INFINITY,
    };
    for i in start..end {
        let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
        let strip = p.strip(i);
        let (mut a0, mut a1, mut r0, mut r1, mut zi) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut t_plw, mut t_min) = (0.0, f64::INFINITY);
        for (k, &pij) in strip.iter().enumerate() {
            let j = i + 1 + k;
            let dx = yi0 - y[2 * j];
            let dy = yi1 - y[2 * j + 1];
            let u = 1.0 + dx * dx + dy * dy;
            let w = 1.0 / u;
            let pw = pij * w;
            let ww = w * w;
            a0 += pw * dx;
            a1 += pw * dy;
            r0 += ww * dx;
            r1 += ww * dy;
            zi += w;
            t.attract[2 * j] -= pw * dx;
            t.attract[2 * j + 1] -= pw * dy;
            t.repulse[2 * j] -= ww * dx;
            t.repulse[2 * j + 1] -= ww * dy;
            if with_kl {
                // Branch-free: zero affinities add 0 · ln w = 0.
                t_plw -= pij * u.ln();
                t_min = t_min.min(w);
            }
        }
        t.attract[2 * i] += a0;
        t.attract[2 * i + 1] += a1;
        t.repulse[2 * i] += r0;
        t.repulse[2 * i + 1] += r1;
        t.z += zi;
        t.p_log_w += t_plw;
        t.min_w = t.min_w.min(t_min);
    }
    t
}

struct GradientEval {
    grad: Vec<f64>,
    kl: Option<f64>,
}

/// Gradient of KL(exaggeration·P || Q) at `y` (flat N×2), and optionally the
/// un-exaggerated cost. `sum_p_log_p` is Σ_ij p_ij ln p_ij over ordered pairs.
fn evaluate(p: &AffinityMatrix, y: &[f64], exaggeration: f64, sum_p_log_p: Option<f64>) -> GradientEval {
    let n = p.n;
    let with_kl = sum_p_log_p.is_some();
    let tiles: Vec<(usize, usize)> = (0..n)
        .step_by(TILE_ROWS)
        .map(|s| (s, (s + TILE_ROWS).min(n)))
        .collect();
    let parts: Vec<TileSums> = tiles
        .par_iter()
        .map(|&(s, e)| tile_sums(p, y, s, e, with_kl))
        .collect();

    let mut attract = vec![0.0; 2 * n];
    let mut repulse = vec![0.0; 2 * n];
    let (mut z_half, mut p_log_w, mut min_w) = (0.0, 0.0, f64::INFINITY);
    for t in &parts {
        for (a, v) in attract.iter_mut().zip(&t.attract) {
            *a += v;
        }
        for (r, v) in repulse.iter_mut().zip(&t.repulse) {
            *r += v;
        }
        z_half += t.z;
        p_log_w += t.p_log_w;
        min_w = min_w.min(t.min_w);
    }
    let z = 2.0 * z_half;
    let grad = attract
        .iter()
        .zip(&repulse)
        .map(|(a, r)| 4.0 * (exaggeration * a - r / z))
        .collect();

    let kl = sum_p_log_p.map(|plogp| {
        if min_w / z < Q_FLOOR {
            exact_kl(p, y, z)
        } else {
            // Σ p ln(p/q) = Σ p ln p − Σ p ln w + ln Z · Σ p, with Σ p = 1.
            plogp - 2.0 * p_log_w + z.ln() * p.total_mass()
        }
    });
    GradientEval { grad, kl }
}

/// Pairwise KL with the q floor applied; used when the closed form would skip it.
fn exact_kl(p: &AffinityMatrix, y: &[f64], z: f64) -> f64 {
    let n = p.n;
    let mut c = 0.0;
    for i in 0..n {
        for (k, &pij) in p.strip(i).iter().enumerate() {
            if pij <= 0.0 {
                continue;
            }
            let j = i + 1 + k;
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let q = (1.0 / (1.0 + dx * dx + dy * dy)) / z;
            c += 2.0 * pij * (pij / q.max(Q_FLOOR)).ln();
        }
    }
    c
}

fn sum_p_log_p(p: &AffinityMatrix) -> f64 {
    2.0 * p
        .upper
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// ∂KL(P || Q)/∂y for a 2D map `y` (N×2).
pub fn kl_gradient(p: &AffinityMatrix, y: &Matrix) -> Result<Matrix> {
    if y.rows() != p.n() || y.cols() != 2 {
        return Err(Error::InvalidInput(format!(
            "embedding is {}x{}, expected {}x2",
            y.rows(),
            y.cols(),
            p.n()
        )));
    }
    let g = evaluate(p, y.as_slice(), 1.0, None).grad;
    Matrix::from_vec(p.n(), 2, g)
}

/// Runs exact t-SNE on the rows of `x`.
pub fn run_tsne(x: &Matrix, cfg: &TsneConfig) -> Result<Embedding> {
    let n = x.rows();
    cfg.validate(n)?;
    let (p, summary) = joint_affinities(
        x,
        cfg.perplexity,
        cfg.sigma_search_tolerance,
        cfg.sigma_search_max_iterations,
    )?;
    if !summary.unconverged.is_empty() {
        log::warn!(
            "{} row(s) did not reach the perplexity tolerance",
            summary.unconverged.len()
        );
    }
    Ok(optimize(&p, cfg))
}

/// Gradient descent on a precomputed `P`.
pub fn optimize(p: &AffinityMatrix, cfg: &TsneConfig) -> Embedding {
    let n = p.n();
    let plogp = sum_p_log_p(p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<f64> = (0..2 * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.init_scale * z
        })
        .collect();
    let mut update = vec![0.0; 2 * n];
    let mut kl_history = Vec::with_capacity(cfg.n_iterations);

    for it in 0..cfg.n_iterations {
        let exaggeration = if it < cfg.exaggeration_iterations {
            cfg.early_exaggeration_factor
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch_iteration {
            cfg.momentum_initial
        } else {
            cfg.momentum_final
        };
        let eval = evaluate(p, &y, exaggeration, Some(plogp));
        kl_history.push(eval.kl.unwrap_or(f64::NAN));
        for ((u, yv), g) in update.iter_mut().zip(y.iter_mut()).zip(&eval.grad) {
            *u = momentum * *u - cfg.learning_rate * g;
            *yv += *u;
        }
        if it % 100 == 0 {
            log::debug!("t-SNE iteration {it}: KL {:.5}", kl_history[it]);
        }
    }
    Embedding {
        y: Matrix::from_vec(n, 2, y).expect("shape is n x 2"),
        kl_history,
    }
}
