//! Discretized risk surface over the embedding plane.
//!
//! A trained risk regressor is evaluated at the centres of a 100×100 grid
//! spanning the training embedding, min-max normalized with the range of its
//! predictions on the training points, zeroed wherever no training point
//! falls, and smoothed once with the uniform 3×3 kernel. Scoring a new
//! contract is a pixel lookup; pixels outside the 3×3-dilated occupancy
//! mask are out of surface.

use serde::{Deserialize, Serialize};

use crate::dataset::{self, ContractRecord, Normalizer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neuralnet::{self, Mlp, TrainConfig};

pub const GRID_SIZE: usize = 100;
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.02;

/// Grid bounds and pixel arithmetic. Row 0 is the bottom (`y_min`) edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cells: usize,
}

impl GridGeometry {
    /// Bounding box of the embedding, widened by `margin_fraction` of its
    /// extent on every side.
    pub fn from_embedding(y: &Matrix, margin_fraction: f64) -> Result<Self> {
        if y.cols() != 2 || y.rows() < 2 {
            return Err(Error::InvalidInput("grid geometry needs an N×2 embedding with N >= 2".into()));
        }
        if !(margin_fraction.is_finite() && margin_fraction >= 0.0) {
            return Err(Error::Config("margin_fraction must be >= 0".into()));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for r in y.iter_rows() {
            x0 = x0.min(r[0]);
            x1 = x1.max(r[0]);
            y0 = y0.min(r[1]);
            y1 = y1.max(r[1]);
        }
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::Numeric("degenerate embedding bounding box".into()));
        }
        let (mx, my) = (margin_fraction * (x1 - x0), margin_fraction * (y1 - y0));
        Ok(Self {
            x_min: x0 - mx,
            x_max: x1 + mx,
            y_min: y0 - my,
            y_max: y1 + my,
            cells: GRID_SIZE,
        })
    }

    fn axis_cell(v: f64, lo: f64, hi: f64, cells: usize) -> Option<usize> {
        if !(v >= lo && v <= hi) {
            return None;
        }
        let c = ((v - lo) / (hi - lo) * cells as f64).floor() as usize;
        Some(c.min(cells - 1))
    }

    /// `(row, col)` of the cell containing the point; cells are half-open
    /// except the last, which also owns the upper edge.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = Self::axis_cell(x, self.x_min, self.x_max, self.cells)?;
        let row = Self::axis_cell(y, self.y_min, self.y_max, self.cells)?;
        Some((row, col))
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let dx = (self.x_max - self.x_min) / self.cells as f64;
        let dy = (self.y_max - self.y_min) / self.cells as f64;
        (
            self.x_min + (col as f64 + 0.5) * dx,
            self.y_min + (row as f64 + 0.5) * dy,
        )
    }

    pub fn n_pixels(&self) -> usize {
        self.cells * self.cells
    }
}

/// Outcome of scoring one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RiskScore {
    Value(f64),
    OutOfSurface,
}

impl RiskScore {
    pub fn value(self) -> Option<f64> {
        match self {
            RiskScore::Value(v) => Some(v),
            RiskScore::OutOfSurface => None,
        }
    }
}

/// Run-length encoding for masks: alternating run lengths, starting with a
/// (possibly empty) run of `false`.
mod rle {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn encode(mask: &[bool]) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &b in mask {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn decode(runs: &[usize]) -> Vec<bool> {
        let mut out = Vec::with_capacity(runs.iter().sum());
        for (k, &len) in runs.iter().enumerate() {
            out.extend(std::iter::repeat_n(k % 2 == 1, len));
        }
        out
    }

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        encode(mask).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Ok(decode(&Vec::<usize>::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSurface {
    pub geometry: GridGeometry,
    /// Normalization range: regressor predictions over the training points.
    pub raw_min: f64,
    pub raw_max: f64,
    #[serde(with = "rle")]
    pub occupancy: Vec<bool>,
    #[serde(with = "rle")]
    pub valid: Vec<bool>,
    /// `cells × cells`, row-major, row 0 at `y_min`.
    pub grid: Vec<f64>,
}

impl RiskSurface {
    #[inline]
    pub fn value_at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.geometry.cells + col]
    }

    pub fn score(&self, x: f64, y: f64) -> RiskScore {
        match self.geometry.locate(x, y) {
            Some((r, c)) if self.valid[r * self.geometry.cells + c] => RiskScore::Value(self.value_at(r, c)),
            _ => RiskScore::OutOfSurface,
        }
    }

    pub fn score_points(&self, points: &Matrix) -> Vec<RiskScore> {
        points.iter_rows().map(|p| self.score(p[0], p[1])).collect()
    }

    /// Sum of absolute differences between horizontally and vertically
    /// adjacent pixels.
    pub fn total_variation(&self) -> f64 {
        let n = self.geometry.cells;
        let mut tv = 0.0;
        for r in 0..n {
            for c in 0..n {
                let v = self.value_at(r, c);
                if c + 1 < n {
                    tv += (v - self.value_at(r, c + 1)).abs();
                }
                if r + 1 < n {
                    tv += (v - self.value_at(r + 1, c)).abs();
                }
            }
        }
        tv
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.geometry.n_pixels();
        if self.grid.len() != n || self.occupancy.len() != n || self.valid.len() != n {
            return Err(Error::InvalidInput("surface arrays do not match the grid size".into()));
        }
        if self.valid != dilate3x3(&self.occupancy, self.geometry.cells) {
            return Err(Error::InvalidInput("valid mask is not the dilated occupancy".into()));
        }
        for (k, v) in self.grid.iter().enumerate() {
            if !(0.0..=1.0).contains(v) || (!self.valid[k] && *v != 0.0) {
                return Err(Error::InvalidInput(format!("grid value {v} at pixel {k} violates the surface invariants")));
            }
        }
        Ok(())
    }
}

/// Uniform 3×3 mean filter; taps outside the grid contribute zero.
pub fn smooth3x3(grid: &[f64], cells: usize) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for r in 0..cells {
        for c in 0..cells {
            let mut s = 0.0;
            for rr in r.saturating_sub(1)..=(r + 1).min(cells - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(cells - 1) {
                    s += grid[rr * cells + cc];
                }
            }
            out[r * cells + c] = s / 9.0;
        }
    }
    out
}

/// Dilation by the 3×3 structuring element.
pub fn dilate3x3(mask: &[bool], cells: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 0..cells {
        for c in 0..cells {
            if !mask[r * cells + c] {
                continue;
            }
            for rr in r.saturating_sub(1)..=(r + 1).min(cells - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(cells - 1) {
                    out[rr * cells + cc] = true;
                }
            }
        }
    }
    out
}

/// Pixels containing at least one embedding point.
pub fn occupancy(geometry: &GridGeometry, embedding: &Matrix) -> Vec<bool> {
    let mut occ = vec![false; geometry.n_pixels()];
    for p in embedding.iter_rows() {
        if let Some((r, c)) = geometry.locate(p[0], p[1]) {
            occ[r * geometry.cells + c] = true;
        }
    }
    occ
}

/// Zero empty pixels, smooth, and cut to the dilated occupancy.
/// `normalized` holds the per-pixel values already mapped into [0, 1].
pub fn assemble_surface(
    geometry: GridGeometry,
    mut normalized: Vec<f64>,
    occupancy: Vec<bool>,
    raw_min: f64,
    raw_max: f64,
) -> RiskSurface {
    for (v, occ) in normalized.iter_mut().zip(&occupancy) {
        if !occ {
            *v = 0.0;
        }
    }
    let mut grid = smooth3x3(&normalized, geometry.cells);
    let valid = dilate3x3(&occupancy, geometry.cells);
    for (v, ok) in grid.iter_mut().zip(&valid) {
        if !ok {
            *v = 0.0;
        } else {
            *v = v.clamp(0.0, 1.0);
        }
    }
    RiskSurface {
        geometry,
        raw_min,
        raw_max,
        occupancy,
        valid,
        grid,
    }
}

fn pixel_centers(geometry: &GridGeometry) -> Matrix {
    let n = geometry.cells;
    let mut m = Matrix::zeros(n * n, 2);
    for r in 0..n {
        for c in 0..n {
            let (x, y) = geometry.pixel_center(r, c);
            m.set(r * n + c, 0, x);
            m.set(r * n + c, 1, y);
        }
    }
    m
}

/// Builds the surface of a trained risk regressor over its training embedding.
pub fn build_surface(nn_risk: &Mlp, embedding: &Matrix, geometry: &GridGeometry) -> Result<RiskSurface> {
    if nn_risk.input_dim() != 2 || nn_risk.output_dim() != 1 {
        return Err(Error::InvalidInput("risk network must map R² to R".into()));
    }
    let train_pred = nn_risk.forward(embedding)?.column(0);
    let raw_min = train_pred.iter().copied().fold(f64::INFINITY, f64::min);
    let raw_max = train_pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(raw_max > raw_min) {
        return Err(Error::Numeric("degenerate risk range".into()));
    }
    let span = raw_max - raw_min;
    let normalized: Vec<f64> = nn_risk
        .forward(&pixel_centers(geometry))?
        .column(0)
        .into_iter()
        .map(|v| ((v - raw_min) / span).clamp(0.0, 1.0))
        .collect();
    Ok(assemble_surface(
        *geometry,
        normalized,
        occupancy(geometry, embedding),
        raw_min,
        raw_max,
    ))
}

/// Surface of an arbitrary per-point value (e.g. the insurer's risk), built
/// exactly like the claim surface: fit a regressor of the risk network's
/// shape, then discretize, zero, smooth.
pub fn build_value_surface(
    values: &[f64],
    embedding: &Matrix,
    geometry: &GridGeometry,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<(RiskSurface, Mlp)> {
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("surface values must lie in [0, 1]".into()));
    }
    let nn = neuralnet::fit_nn_risk_values(embedding, values, hidden, cfg)?;
    let surface = build_surface(&nn, embedding, geometry)?;
    Ok((surface, nn))
}

/// Per-record result of the full inference chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBatch {
    /// NN-mapped 2D coordinates, one row per record.
    pub coordinates: Matrix,
    pub scores: Vec<RiskScore>,
    /// Indices of records that landed on the surface.
    pub retained: Vec<usize>,
}

impl ScoredBatch {
    pub fn n_out_of_surface(&self) -> usize {
        self.scores.len() - self.retained.len()
    }

    pub fn retained_values(&self) -> Vec<f64> {
        self.retained
            .iter()
            .map(|&i| self.scores[i].value().expect("retained scores carry values"))
            .collect()
    }
}

/// Normalize → map to the plane → look up the surface.
pub fn score_batch(
    surface: &RiskSurface,
    nn_tsne: &Mlp,
    normalizer: &Normalizer,
    records: &[ContractRecord],
) -> Result<ScoredBatch> {
    if records.is_empty() {
        return Ok(ScoredBatch {
            coordinates: Matrix::zeros(0, 2),
            scores: Vec::new(),
            retained: Vec::new(),
        });
    }
    let x = normalizer.apply(&dataset::encode_features(records))?;
    let coordinates = nn_tsne.forward(&x)?;
    let scores = surface.score_points(&coordinates);
    let retained = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, RiskScore::Value(_)))
        .map(|(i, _)| i)
        .collect();
    Ok(ScoredBatch {
        coordinates,
        scores,
        retained,
    })
}
