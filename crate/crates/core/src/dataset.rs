//! Contract schema, CSV ingestion, feature encoding, normalization, splitting,
//! insurer-risk extraction and the synthetic portfolio generator.
//!
//! Feature layout is fixed: seven continuous columns
//! (lat, lon, car_price, engine_power, policyholder_age, license_age, vehicle_age)
//! followed by a one-hot block over the seven vehicle types `T1..T7`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const N_CONTINUOUS: usize = 7;
pub const N_VEHICLE_TYPES: usize = 7;
pub const N_FEATURES: usize = N_CONTINUOUS + N_VEHICLE_TYPES;

/// Required CSV columns, in documented order.
pub const REQUIRED_COLUMNS: [&str; 9] = [
    "lat",
    "lon",
    "car_price",
    "engine_power",
    "ph_age",
    "license_age",
    "vehicle_age",
    "vehicle_type",
    "claim",
];

/// Opaque vehicle category. The seven types carry no meaning beyond identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleType {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
}

impl VehicleType {
    pub const ALL: [VehicleType; N_VEHICLE_TYPES] = [
        VehicleType::T1,
        VehicleType::T2,
        VehicleType::T3,
        VehicleType::T4,
        VehicleType::T5,
        VehicleType::T6,
        VehicleType::T7,
    ];

    /// Zero-based position in the one-hot block.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for VehicleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.index() + 1)
    }
}

impl FromStr for VehicleType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let idx = s
            .strip_prefix('T')
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|d| (1..=N_VEHICLE_TYPES).contains(d))
            .ok_or_else(|| format!("unknown vehicle type {s:?}"))?;
        Ok(Self::ALL[idx - 1])
    }
}

/// One insurance policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractRecord {
    pub home_lat: f64,
    pub home_lon: f64,
    pub car_price: f64,
    pub engine_power: f64,
    pub policyholder_age: f64,
    pub license_age: f64,
    pub vehicle_age: f64,
    pub vehicle_type: VehicleType,
    pub claim: bool,
    pub premium: Option<f64>,
    pub vehicle_value: Option<f64>,
    /// Generating cluster of a synthetic record. Test-only provenance.
    pub cluster: Option<usize>,
}

impl ContractRecord {
    pub fn continuous(&self) -> [f64; N_CONTINUOUS] {
        [
            self.home_lat,
            self.home_lon,
            self.car_price,
            self.engine_power,
            self.policyholder_age,
            self.license_age,
            self.vehicle_age,
        ]
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses contracts from CSV text.
///
/// An empty input (no header at all) yields no records. Optional `premium`,
/// `vehicle_value` and `cluster` columns may be absent or left empty per row.
pub fn parse_contracts(csv_text: &str) -> Result<Vec<ContractRecord>> {
    if csv_text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();

    let mut position = [usize::MAX; REQUIRED_COLUMNS.len()];
    let (mut premium_col, mut value_col, mut cluster_col) = (None, None, None);
    for (i, name) in headers.iter().enumerate() {
        let name = name.trim();
        if let Some(k) = REQUIRED_COLUMNS.iter().position(|c| *c == name) {
            position[k] = i;
        } else {
            match name {
                "premium" => premium_col = Some(i),
                "vehicle_value" => value_col = Some(i),
                "cluster" => cluster_col = Some(i),
                other => return Err(Error::Schema(format!("unknown column {other:?}"))),
            }
        }
    }
    let missing: Vec<&str> = REQUIRED_COLUMNS
        .iter()
        .zip(position.iter())
        .filter(|(_, p)| **p == usize::MAX)
        .map(|(c, _)| *c)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing required column(s): {}",
            missing.join(", ")
        )));
    }

    let n_cols = headers.len();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != n_cols {
            return Err(parse_err(
                line,
                format!("expected {n_cols} fields, found {}", row.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            let raw = row[position[k]].trim();
            let v: f64 = raw.parse().map_err(|_| {
                parse_err(line, format!("{}: {raw:?} is not a number", REQUIRED_COLUMNS[k]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("{} is not finite", REQUIRED_COLUMNS[k])));
            }
            Ok(v)
        };
        let positive_opt = |col: Option<usize>, name: &str| -> Result<Option<f64>> {
            let Some(c) = col else { return Ok(None) };
            let raw = row[c].trim();
            if raw.is_empty() {
                return Ok(None);
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("{name}: {raw:?} is not a number")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_err(line, format!("{name} must be > 0")));
            }
            Ok(Some(v))
        };

        let vehicle_type: VehicleType = row[position[7]]
            .trim()
            .parse()
            .map_err(|e: String| parse_err(line, e))?;
        let claim = match row[position[8]].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(parse_err(line, "claim must be 0 or 1")),
        };
        let cluster = match cluster_col {
            Some(c) if !row[c].trim().is_empty() => Some(
                row[c]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(line, "cluster must be a non-negative integer"))?,
            ),
            _ => None,
        };

        records.push(ContractRecord {
            home_lat: num(0)?,
            home_lon: num(1)?,
            car_price: num(2)?,
            engine_power: num(3)?,
            policyholder_age: num(4)?,
            license_age: num(5)?,
            vehicle_age: num(6)?,
            vehicle_type,
            claim,
            premium: positive_opt(premium_col, "premium")?,
            vehicle_value: positive_opt(value_col, "vehicle_value")?,
            cluster,
        });
    }
    Ok(records)
}

/// Serializes contracts in the documented CSV layout.
///
/// Premium columns are written when any record carries them; the cluster
/// column only when `with_cluster` is set (the synthetic sidecar).
pub fn write_contracts(records: &[ContractRecord], with_cluster: bool) -> String {
    let with_premium = records
        .iter()
        .any(|r| r.premium.is_some() || r.vehicle_value.is_some());
    let mut out = REQUIRED_COLUMNS.join(",");
    if with_premium {
        out.push_str(",premium,vehicle_value");
    }
    if with_cluster {
        out.push_str(",cluster");
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let c = r.continuous();
        for v in c {
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(&r.vehicle_type.to_string());
        out.push(',');
        out.push(if r.claim { '1' } else { '0' });
        if with_premium {
            out.push(',');
            out.push_str(&opt(r.premium));
            out.push(',');
            out.push_str(&opt(r.vehicle_value));
        }
        if with_cluster {
            out.push(',');
            if let Some(k) = r.cluster {
                out.push_str(&k.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Encodes records into the N×14 feature matrix.
pub fn encode_features(records: &[ContractRecord]) -> Matrix {
    let mut m = Matrix::zeros(records.len(), N_FEATURES);
    for (i, r) in records.iter().enumerate() {
        let row = m.row_mut(i);
        row[..N_CONTINUOUS].copy_from_slice(&r.continuous());
        row[N_CONTINUOUS + r.vehicle_type.index()] = 1.0;
    }
    m
}

pub fn claims(records: &[ContractRecord]) -> Vec<bool> {
    records.iter().map(|r| r.claim).collect()
}

/// Per-column z-score parameters fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
}

impl Normalizer {
    /// Columns with zero variance; they normalize to 0.
    pub fn flagged(&self) -> Vec<usize> {
        self.stds
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn apply(&self, matrix: &Matrix) -> Result<Matrix> {
        apply_normalizer(self, matrix)
    }
}

pub fn fit_normalizer(matrix: &Matrix, rows: &[usize]) -> Result<Normalizer> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("normalizer needs at least one row".into()));
    }
    let n = rows.len() as f64;
    let cols = matrix.cols();
    let mut means = vec![0.0; cols];
    for &i in rows {
        for (m, v) in means.iter_mut().zip(matrix.row(i)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; cols];
    for &i in rows {
        for ((s, v), m) in stds.iter_mut().zip(matrix.row(i)).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    Ok(Normalizer { means, stds })
}

pub fn apply_normalizer(norm: &Normalizer, matrix: &Matrix) -> Result<Matrix> {
    if matrix.cols() != norm.means.len() {
        return Err(Error::InvalidInput(format!(
            "normalizer fitted on {} columns, matrix has {}",
            norm.means.len(),
            matrix.cols()
        )));
    }
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(&norm.means).zip(&norm.stds) {
            *v = if *s == 0.0 { 0.0 } else { (*v - m) / s };
        }
    }
    Ok(out)
}

/// Train/test partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Seeded uniform shuffle; the first `floor(n * train_fraction)` rows train.
///
/// The floor carries a 1e-9 guard so that fractions such as 2/3 land on the
/// intended integer (30000 · 2/3 = 20000, not 19999).
pub fn split(n_rows: usize, train_fraction: f64, seed: u64) -> Result<DataSplit> {
    if n_rows < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot split {n_rows} row(s); need at least 2"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((n_rows as f64) * train_fraction + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_indices = idx.split_off(n_train);
    Ok(DataSplit {
        train_indices: idx,
        test_indices,
        seed,
    })
}

/// Premium / vehicle-value ratio, min-max normalized over the given records.
pub fn insurer_risk(records: &[ContractRecord]) -> Result<Vec<f64>> {
    let mut missing = Vec::new();
    let mut ratios = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        match (r.premium, r.vehicle_value) {
            (Some(p), Some(v)) => ratios.push(p / v),
            _ => missing.push(i),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(20).map(|i| i.to_string()).collect();
        return Err(Error::Schema(format!(
            "premium/vehicle_value missing for {} row(s): {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 20 { ", ..." } else { "" }
        )));
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Ratios equal up to rounding carry no ranking information.
    if !(max - min > 1e-12 * max.abs().max(min.abs())) {
        return Err(Error::Numeric("degenerate insurer risk".into()));
    }
    Ok(ratios.iter().map(|r| (r - min) / (max - min)).collect())
}

/// Parameters of the planted-risk portfolio generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_contracts: usize,
    pub cluster_weights: Vec<f64>,
    pub cluster_claim_probs: Vec<f64>,
    /// K rows of 7 continuous-feature means.
    pub cluster_centers: Vec<Vec<f64>>,
    /// K rows of 7 continuous-feature standard deviations.
    pub cluster_spreads: Vec<Vec<f64>>,
    /// K categorical distributions over T1..T7.
    pub vehicle_type_probs: Vec<Vec<f64>>,
    /// Premium rate per unit of vehicle value, one per cluster (must be distinct).
    pub premium_base_rates: Vec<f64>,
    pub premium_loading_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// Three segments whose sizes and claim probabilities follow the
    /// low/medium/high risk groups observed on real test data
    /// (8592/302/1055 contracts with 464/38/236 claims).
    ///
    /// The two risky segments share one vehicle type that the low-risk
    /// segment never uses. A one-hot column dominates z-scored distances, so
    /// a rare type inside a small segment would split it into t-SNE islands
    /// too small to survive the surface smoothing. T5 and T7 stay unused.
    fn default() -> Self {
        Self {
            n_contracts: 30000,
            cluster_weights: vec![0.864, 0.030, 0.106],
            cluster_claim_probs: vec![0.054, 0.126, 0.224],
            cluster_centers: vec![
                vec![47.0, 8.0, 25000.0, 90.0, 47.0, 24.0, 6.0],
                vec![46.2, 6.6, 42000.0, 160.0, 34.0, 12.0, 2.0],
                vec![47.7, 9.3, 16000.0, 125.0, 24.0, 4.0, 11.0],
            ],
            cluster_spreads: vec![
                vec![0.3, 0.4, 5000.0, 18.0, 9.0, 7.0, 2.5],
                vec![0.2, 0.3, 6000.0, 20.0, 6.0, 4.0, 1.0],
                vec![0.25, 0.3, 3500.0, 18.0, 3.5, 1.5, 2.5],
            ],
            vehicle_type_probs: vec![
                vec![0.35, 0.30, 0.20, 0.15, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            ],
            premium_base_rates: vec![0.030, 0.034, 0.038],
            premium_loading_noise: 0.2,
            seed: 42,
        }
    }
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|v| v.is_finite() && *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.cluster_weights.len();
        let fail = |m: String| Err(Error::Config(m));
        if self.n_contracts == 0 {
            return fail("n_contracts must be at least 1".into());
        }
        if k == 0 {
            return fail("at least one cluster is required".into());
        }
        if !is_distribution(&self.cluster_weights) {
            return fail("cluster_weights must be non-negative and sum to 1".into());
        }
        let lens = [
            ("cluster_claim_probs", self.cluster_claim_probs.len()),
            ("cluster_centers", self.cluster_centers.len()),
            ("cluster_spreads", self.cluster_spreads.len()),
            ("vehicle_type_probs", self.vehicle_type_probs.len()),
            ("premium_base_rates", self.premium_base_rates.len()),
        ];
        for (name, len) in lens {
            if len != k {
                return fail(format!("{name} has {len} entries, expected {k}"));
            }
        }
        if self
            .cluster_claim_probs
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return fail("cluster_claim_probs must lie in [0, 1]".into());
        }
        for c in 0..k {
            if self.cluster_centers[c].len() != N_CONTINUOUS
                || self.cluster_centers[c].iter().any(|v| !v.is_finite())
            {
                return fail(format!("cluster_centers[{c}] must hold {N_CONTINUOUS} finite values"));
            }
            if self.cluster_spreads[c].len() != N_CONTINUOUS
                || self.cluster_spreads[c].iter().any(|v| !(v.is_finite() && *v >= 0.0))
            {
                return fail(format!(
                    "cluster_spreads[{c}] must hold {N_CONTINUOUS} non-negative values"
                ));
            }
            if self.vehicle_type_probs[c].len() != N_VEHICLE_TYPES
                || !is_distribution(&self.vehicle_type_probs[c])
            {
                return fail(format!(
                    "vehicle_type_probs[{c}] must be a distribution over {N_VEHICLE_TYPES} types"
                ));
            }
            // car_price doubles as vehicle value, so it needs positive support.
            if self.cluster_centers[c][2] <= 0.0 {
                return fail(format!("cluster_centers[{c}] car_price mean must be > 0"));
            }
        }
        if self
            .premium_base_rates
            .iter()
            .any(|r| !(r.is_finite() && *r > 0.0))
        {
            return fail("premium_base_rates must be positive".into());
        }
        for a in 0..k {
            for b in a + 1..k {
                if self.premium_base_rates[a] == self.premium_base_rates[b] {
                    return fail("premium_base_rates must be distinct per cluster".into());
                }
            }
        }
        if !(self.premium_loading_noise.is_finite() && self.premium_loading_noise >= 0.0) {
            return fail("premium_loading_noise must be >= 0".into());
        }
        Ok(())
    }
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws a planted-risk portfolio.
///
/// Car price (the vehicle value) and the premium loading are redrawn until
/// positive, so the insurer ratio is always defined.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<ContractRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_contracts);
    for _ in 0..cfg.n_contracts {
        let k = draw_categorical(&mut rng, &cfg.cluster_weights);
        let mut feats = [0.0; N_CONTINUOUS];
        for (j, f) in feats.iter_mut().enumerate() {
            let (mu, sd) = (cfg.cluster_centers[k][j], cfg.cluster_spreads[k][j]);
            loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                *f = mu + sd * z;
                if j != 2 || *f > 0.0 {
                    break;
                }
            }
        }
        let vehicle_type = VehicleType::ALL[draw_categorical(&mut rng, &cfg.vehicle_type_probs[k])];
        let claim = rng.gen::<f64>() < cfg.cluster_claim_probs[k];
        let loading = loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            let l = 1.0 + cfg.premium_loading_noise * z;
            if l > 0.0 {
                break l;
            }
        };
        let vehicle_value = feats[2];
        out.push(ContractRecord {
            home_lat: feats[0],
            home_lon: feats[1],
            car_price: feats[2],
            engine_power: feats[3],
            policyholder_age: feats[4],
            license_age: feats[5],
            vehicle_age: feats[6],
            vehicle_type,
            claim,
            premium: Some(vehicle_value * cfg.premium_base_rates[k] * loading),
            vehicle_value: Some(vehicle_value),
            cluster: Some(k),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const HEADER: &str = "lat,lon,car_price,engine_power,ph_age,license_age,vehicle_age,vehicle_type,claim";

    fn record(t: VehicleType) -> ContractRecord {
        ContractRecord {
            home_lat: 1.0,
            home_lon: 2.0,
            car_price: 3.0,
            engine_power: 4.0,
            policyholder_age: 5.0,
            license_age: 6.0,
            vehicle_age: 7.0,
            vehicle_type: t,
            claim: false,
            premium: None,
            vehicle_value: None,
            cluster: None,
        }
    }

    #[test]
    fn parses_single_row_and_encodes_type() {
        let text = format!("{HEADER}\n47.1,8.2,20000,90,40,20,5,T3,1\n");
        let recs = parse_contracts(&text).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].claim);
        assert_eq!(recs[0].premium, None);
        let m = encode_features(&recs);
        assert_eq!(&m.row(0)[7..], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_claim_with_line_number() {
        let text = format!("{HEADER}\n47.1,8.2,20000,90,40,20,5,T3,0\n47.1,8.2,20000,90,40,20,5,T3,2\n");
        match parse_contracts(&text).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("claim must be 0 or 1"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_malformed_rows() {
        let bad_arity = format!("{HEADER}\n47.1,8.2,20000,90,40,20,T3,1\n");
        assert!(matches!(parse_contracts(&bad_arity), Err(Error::Parse { line: 2, .. })));
        let bad_num = format!("{HEADER}\n47.1,x,20000,90,40,20,5,T3,1\n");
        assert!(matches!(parse_contracts(&bad_num), Err(Error::Parse { .. })));
        let bad_type = format!("{HEADER}\n47.1,8,20000,90,40,20,5,T8,1\n");
        assert!(matches!(parse_contracts(&bad_type), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_claim_column_is_schema_error() {
        let text = "lat,lon,car_price,engine_power,ph_age,license_age,vehicle_age,vehicle_type\n1,2,3,4,5,6,7,T1\n";
        assert!(matches!(parse_contracts(text), Err(Error::Schema(_))));
    }

    #[test]
    fn premium_absent_makes_insurer_risk_fail_cleanly() {
        let text = format!("{HEADER}\n47.1,8.2,20000,90,40,20,5,T3,1\n");
        let recs = parse_contracts(&text).unwrap();
        assert!(matches!(insurer_risk(&recs), Err(Error::Schema(_))));
    }

    #[test]
    fn one_hot_blocks() {
        let m = encode_features(&[record(VehicleType::T1), record(VehicleType::T7)]);
        assert_eq!(&m.row(0)[7..], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&m.row(1)[7..], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        for r in m.iter_rows() {
            assert_eq!(r[7..].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn normalizer_formulas() {
        let m = Matrix::from_rows(&[[2.0, 5.0, 1.0], [4.0, 5.0, 0.0], [6.0, 5.0, 1.0]]).unwrap();
        let norm = fit_normalizer(&m, &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(norm.means[0], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(norm.stds[0], (8.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(norm.stds[0], 1.63299, epsilon = 1e-5);
        assert_eq!(norm.means[1], 5.0);
        assert_eq!(norm.flagged(), vec![1]);
        let out = norm.apply(&m).unwrap();
        assert_abs_diff_eq!(out.get(0, 0), -1.2247, epsilon = 1e-4);
        assert_eq!(out.get(1, 0), 0.0);
        assert_abs_diff_eq!(out.get(2, 0), 1.2247, epsilon = 1e-4);
        assert!(out.column(1).iter().all(|v| *v == 0.0));

        let balanced = Matrix::from_rows(&[[1.0], [0.0], [1.0], [0.0]]).unwrap();
        let n = fit_normalizer(&balanced, &[0, 1, 2, 3]).unwrap();
        assert_eq!((n.means[0], n.stds[0]), (0.5, 0.5));
    }

    #[test]
    fn normalizer_uses_only_given_rows() {
        let m = Matrix::from_rows(&[[0.0], [2.0], [100.0]]).unwrap();
        let n = fit_normalizer(&m, &[0, 1]).unwrap();
        assert_eq!((n.means[0], n.stds[0]), (1.0, 1.0));
        assert!(fit_normalizer(&m, &[]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split(30000, 2.0 / 3.0, 7).unwrap();
        assert_eq!((s.train_indices.len(), s.test_indices.len()), (20000, 10000));
        assert_eq!(s, split(30000, 2.0 / 3.0, 7).unwrap());
        let s = split(3, 2.0 / 3.0, 1).unwrap();
        assert_eq!((s.train_indices.len(), s.test_indices.len()), (2, 1));
        let s = split(9000, 2.0 / 3.0, 1).unwrap();
        assert_eq!(s.train_indices.len(), 6000);
        assert!(split(1, 0.5, 0).is_err());
        assert!(split(10, 1.0, 0).is_err());
    }

    #[test]
    fn insurer_risk_min_max() {
        let mk = |p: f64| ContractRecord {
            premium: Some(p),
            vehicle_value: Some(1.0),
            ..record(VehicleType::T1)
        };
        let r = insurer_risk(&[mk(0.02), mk(0.05), mk(0.08)]).unwrap();
        assert_abs_diff_eq!(r[0], 0.0);
        assert_abs_diff_eq!(r[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], 1.0);
        let r = insurer_risk(&[mk(0.2), mk(0.4)]).unwrap();
        assert_eq!(r, vec![0.0, 1.0]);
        assert!(matches!(insurer_risk(&[mk(0.3), mk(0.3)]), Err(Error::Numeric(_))));
    }

    #[test]
    fn synthetic_defaults_match_group_statistics() {
        let cfg = SyntheticConfig::default();
        assert_eq!(cfg.cluster_weights, vec![0.864, 0.030, 0.106]);
        assert_eq!(cfg.cluster_claim_probs, vec![0.054, 0.126, 0.224]);
        // 8592/9949, 302/9949, 1055/9949 and 464/8592, 38/302, 236/1055.
        for (w, count) in cfg.cluster_weights.iter().zip([8592.0, 302.0, 1055.0]) {
            assert!((w - count / 9949.0).abs() < 5e-4);
        }
        for (p, (c, n)) in cfg
            .cluster_claim_probs
            .iter()
            .zip([(464.0, 8592.0), (38.0, 302.0), (236.0, 1055.0)])
        {
            assert!((p - c / n).abs() < 5e-4);
        }
    }

    #[test]
    fn synthetic_claim_ratio_and_cluster_frequencies() {
        let cfg = SyntheticConfig::default();
        let recs = generate_synthetic(&cfg).unwrap();
        assert_eq!(recs.len(), 30000);
        let ratio = recs.iter().filter(|r| r.claim).count() as f64 / 30000.0;
        assert!((ratio - 0.074).abs() <= 0.006, "claim ratio {ratio}");
        for (k, w) in cfg.cluster_weights.iter().enumerate() {
            let f = recs.iter().filter(|r| r.cluster == Some(k)).count() as f64 / 30000.0;
            assert!((f - w).abs() <= 3.0 * (w * (1.0 - w) / 30000.0).sqrt(), "cluster {k}: {f}");
        }
        assert!(recs.iter().all(|r| r.premium.unwrap() > 0.0 && r.vehicle_value.unwrap() > 0.0));
        assert_eq!(recs, generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn synthetic_without_noise_and_constant_rate_is_degenerate() {
        let cfg = SyntheticConfig {
            n_contracts: 200,
            premium_loading_noise: 0.0,
            cluster_weights: vec![1.0],
            cluster_claim_probs: vec![0.1],
            cluster_centers: vec![SyntheticConfig::default().cluster_centers[0].clone()],
            cluster_spreads: vec![SyntheticConfig::default().cluster_spreads[0].clone()],
            vehicle_type_probs: vec![SyntheticConfig::default().vehicle_type_probs[0].clone()],
            premium_base_rates: vec![0.03],
            seed: 1,
        };
        let recs = generate_synthetic(&cfg).unwrap();
        let err = insurer_risk(&recs).unwrap_err();
        assert!(err.to_string().contains("degenerate insurer risk"));
    }

    #[test]
    fn synthetic_config_validation() {
        let mut cfg = SyntheticConfig {
            n_contracts: 0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        cfg.n_contracts = 10;
        cfg.cluster_weights = vec![0.5, 0.3, 0.3];
        assert!(cfg.validate().is_err());
        cfg.cluster_weights = vec![0.5, 0.3, 0.2];
        cfg.cluster_claim_probs[1] = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_round_trip_with_sidecar() {
        let cfg = SyntheticConfig {
            n_contracts: 25,
            ..Default::default()
        };
        let recs = generate_synthetic(&cfg).unwrap();
        let back = parse_contracts(&write_contracts(&recs, true)).unwrap();
        assert_eq!(recs, back);
        let plain = parse_contracts(&write_contracts(&recs, false)).unwrap();
        assert!(plain.iter().all(|r| r.cluster.is_none()));
        assert!(parse_contracts("").unwrap().is_empty());
        assert!(parse_contracts(HEADER).unwrap().is_empty());
    }
}
