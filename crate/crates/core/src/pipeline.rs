//! End-to-end orchestration and the persisted model artifact.
//!
//! split → normalize → t-SNE → NN_tsne → NN_risk → surface (+ insurer surface).

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, ComparisonTables, GridSearchSpec, ModelKind, SpaceData};
use crate::dataset::{self, ContractRecord, DataSplit, Normalizer, N_FEATURES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{self, EvalReport, DEFAULT_GROUP_BOUNDARIES};
use crate::neuralnet::{self, Mlp, TrainConfig};
use crate::surface::{self, GridGeometry, RiskSurface, ScoredBatch, DEFAULT_MARGIN_FRACTION};
use crate::tsne::{self, TsneConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MIN_TRAINING_RECORDS: usize = 100;

/// Everything that steers a training run. Stage seeds derive from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub tsne: TsneConfig,
    pub nn_tsne: TrainConfig,
    pub nn_risk: TrainConfig,
    /// Hidden width of the 2 → h → 1 risk regressor.
    pub risk_hidden: usize,
    pub margin_fraction: f64,
    pub group_boundaries: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub grid: GridSearchSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_fraction: 2.0 / 3.0,
            tsne: TsneConfig::default(),
            nn_tsne: TrainConfig::default(),
            nn_risk: TrainConfig::default(),
            risk_hidden: 5,
            margin_fraction: DEFAULT_MARGIN_FRACTION,
            group_boundaries: DEFAULT_GROUP_BOUNDARIES.to_vec(),
            models: ModelKind::TABLE.to_vec(),
            grid: GridSearchSpec::default(),
        }
    }
}

impl RunConfig {
    /// Copy with every stage seed derived from the master seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.tsne.seed = self.seed.wrapping_add(1);
        c.nn_tsne.seed = self.seed.wrapping_add(2);
        c.nn_risk.seed = self.seed.wrapping_add(3);
        c.grid.seed = self.seed.wrapping_add(5);
        c
    }

    pub fn insurer_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.risk_hidden == 0 {
            return Err(Error::Config("risk_hidden must be >= 1".into()));
        }
        if !(self.margin_fraction.is_finite() && self.margin_fraction >= 0.0) {
            return Err(Error::Config("margin_fraction must be >= 0".into()));
        }
        check_boundaries(&self.group_boundaries)?;
        self.nn_tsne.validate()?;
        self.nn_risk.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }
}

pub fn check_boundaries(b: &[f64]) -> Result<()> {
    if b.iter().any(|v| !(0.0..=1.0).contains(v)) || b.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "group boundaries must be strictly increasing values in [0, 1], got {b:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsurerSurface {
    pub nn: Mlp,
    pub surface: RiskSurface,
}

/// The persisted outcome of `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineArtifact {
    pub format_version: u32,
    /// SHA-256 of the normalized training features.
    pub lineage: String,
    pub config: RunConfig,
    pub split: DataSplit,
    pub normalizer: Normalizer,
    /// Training-set t-SNE coordinates, in `split.train_indices` order.
    pub embedding: Matrix,
    pub train_claims: Vec<bool>,
    pub nn_tsne: Mlp,
    pub nn_risk: Mlp,
    pub surface: RiskSurface,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insurer: Option<InsurerSurface>,
}

impl PipelineArtifact {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported artifact format_version {} (expected {FORMAT_VERSION})",
                v.format_version
            )));
        }
        let a: Self = serde_json::from_str(text)?;
        a.check_consistency()?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Dimensions and sizes of every component must agree.
    pub fn check_consistency(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(format!("inconsistent artifact: {m}")));
        let n_train = self.split.train_indices.len();
        if self.embedding.as_slice().len() != self.embedding.rows() * self.embedding.cols()
            || self.embedding.rows() != n_train
            || self.embedding.cols() != 2
        {
            return bad(format!("embedding is not {n_train}x2"));
        }
        if self.train_claims.len() != n_train {
            return bad("claim vector length differs from training size".into());
        }
        if self.normalizer.means.len() != N_FEATURES || self.normalizer.stds.len() != N_FEATURES {
            return bad("normalizer width".into());
        }
        if self.nn_tsne.input_dim() != N_FEATURES || self.nn_tsne.output_dim() != 2 {
            return bad("NN_tsne must map 14 -> 2".into());
        }
        let risk_nets = std::iter::once(&self.nn_risk).chain(self.insurer.as_ref().map(|i| &i.nn));
        for nn in risk_nets {
            if nn.input_dim() != 2 || nn.output_dim() != 1 {
                return bad("risk networks must map 2 -> 1".into());
            }
        }
        let surfaces = std::iter::once(&self.surface).chain(self.insurer.as_ref().map(|i| &i.surface));
        for s in surfaces {
            if s.geometry != self.surface.geometry {
                return bad("surfaces disagree on grid geometry".into());
            }
            s.check_invariants()?;
        }
        if self.lineage.len() != 64 {
            return bad("lineage hash".into());
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.split.train_indices.len() + self.split.test_indices.len()
    }

    pub fn score(&self, records: &[ContractRecord]) -> Result<ScoredBatch> {
        surface::score_batch(&self.surface, &self.nn_tsne, &self.normalizer, records)
    }
}

/// Hex SHA-256 over the little-endian bytes of a feature matrix.
pub fn lineage_hash(features: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((features.rows() as u64).to_le_bytes());
    h.update((features.cols() as u64).to_le_bytes());
    for v in features.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Products of a training run beyond the artifact itself.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub artifact: PipelineArtifact,
    pub kl_history: Vec<f64>,
    pub train_records: Vec<ContractRecord>,
    pub test_records: Vec<ContractRecord>,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f().map_err(|e| e.in_stage(name))?;
    log::info!("{name}: {:.2}s", t0.elapsed().as_secs_f64());
    Ok(out)
}

pub fn train(records: &[ContractRecord], cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if records.len() < MIN_TRAINING_RECORDS {
        return Err(Error::InvalidInput(format!(
            "training needs at least {MIN_TRAINING_RECORDS} records, got {}",
            records.len()
        )));
    }
    let cfg = cfg.resolved();
    let split = dataset::split(records.len(), cfg.train_fraction, cfg.seed)?;
    let train_records = select(records, &split.train_indices);
    let test_records = select(records, &split.test_indices);
    let train_claims = dataset::claims(&train_records);

    let (normalizer, x_train) = stage("normalize", || {
        let raw = dataset::encode_features(&train_records);
        let all: Vec<usize> = (0..raw.rows()).collect();
        let norm = dataset::fit_normalizer(&raw, &all)?;
        let flagged = norm.flagged();
        if !flagged.is_empty() {
            log::warn!("zero-variance feature column(s) {flagged:?} are encoded as 0");
        }
        let x = norm.apply(&raw)?;
        Ok((norm, x))
    })?;
    let lineage = lineage_hash(&x_train);

    let embedding = stage("tsne", || tsne::run_tsne(&x_train, &cfg.tsne))?;
    if let Some(last) = embedding.kl_history.last() {
        log::info!("tsne: final KL {last:.5}");
    }
    let nn_tsne = stage("nn_tsne", || neuralnet::fit_nn_tsne(&x_train, &embedding.y, &cfg.nn_tsne))?;
    let geometry = GridGeometry::from_embedding(&embedding.y, cfg.margin_fraction)?;
    let (nn_risk, risk_surface) = stage("nn_risk", || {
        let nn = neuralnet::fit_nn_risk(&embedding.y, &train_claims, cfg.risk_hidden, &cfg.nn_risk)?;
        let s = surface::build_surface(&nn, &embedding.y, &geometry)?;
        Ok((nn, s))
    })?;

    let has_insurer = train_records
        .iter()
        .all(|r| r.premium.is_some() && r.vehicle_value.is_some());
    let insurer = if has_insurer {
        Some(stage("insurer_surface", || {
            let values = dataset::insurer_risk(&train_records)?;
            let icfg = TrainConfig {
                seed: cfg.insurer_seed(),
                ..cfg.nn_risk.clone()
            };
            let (surface, nn) = surface::build_value_surface(&values, &embedding.y, &geometry, cfg.risk_hidden, &icfg)?;
            Ok(InsurerSurface { nn, surface })
        })?)
    } else {
        None
    };

    let artifact = PipelineArtifact {
        format_version: FORMAT_VERSION,
        lineage,
        config: cfg,
        split,
        normalizer,
        embedding: embedding.y,
        train_claims,
        nn_tsne,
        nn_risk,
        surface: risk_surface,
        insurer,
    };
    artifact.check_consistency()?;
    Ok(TrainOutput {
        artifact,
        kl_history: embedding.kl_history,
        train_records,
        test_records,
    })
}

/// `row,y1,y2,risk,status` with status `ok` or `out_of_surface`.
pub fn scores_csv(batch: &ScoredBatch) -> String {
    let mut out = String::from("row,y1,y2,risk,status\n");
    for (i, s) in batch.scores.iter().enumerate() {
        let (y1, y2) = (batch.coordinates.get(i, 0), batch.coordinates.get(i, 1));
        match s.value() {
            Some(v) => out.push_str(&format!("{i},{y1},{y2},{v},ok\n")),
            None => out.push_str(&format!("{i},{y1},{y2},,out_of_surface\n")),
        }
    }
    out
}

pub fn embedding_csv(y: &Matrix) -> String {
    let mut out = String::from("y1,y2\n");
    for r in y.iter_rows() {
        out.push_str(&format!("{},{}\n", r[0], r[1]));
    }
    out
}

pub fn kl_trace_csv(kl: &[f64]) -> String {
    let mut out = String::from("iteration,kl\n");
    for (i, v) in kl.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

/// Scores `records` and builds the report over the retained ones. With
/// `insurer`, the insurer risk of the retained records is reported alongside.
pub fn evaluate(
    artifact: &PipelineArtifact,
    records: &[ContractRecord],
    boundaries: &[f64],
    insurer: bool,
) -> Result<(EvalReport, ScoredBatch)> {
    check_boundaries(boundaries)?;
    if records.is_empty() {
        return Err(Error::InvalidInput("no contracts to evaluate".into()));
    }
    let batch = artifact.score(records)?;
    let kept = select(records, &batch.retained);
    let labels = dataset::claims(&kept);
    let scores = batch.retained_values();
    let insurer_scores = if insurer {
        Some(dataset::insurer_risk(&kept)?)
    } else {
        None
    };
    let report = metrics::build_report(
        &scores,
        &labels,
        batch.n_out_of_surface(),
        boundaries,
        insurer_scores.as_deref(),
    )?;
    Ok((report, batch))
}

/// Runs the baseline models in both spaces on the artifact's own split of
/// the full portfolio it was trained on.
pub fn compare(
    artifact: &PipelineArtifact,
    records: &[ContractRecord],
    kinds: &[ModelKind],
    spec: &GridSearchSpec,
) -> Result<ComparisonTables> {
    if records.len() != artifact.n_records() {
        return Err(Error::InvalidInput(format!(
            "compare needs the {} records the artifact was trained on, got {}",
            artifact.n_records(),
            records.len()
        )));
    }
    if kinds.is_empty() {
        return Err(Error::Config("no model kinds to compare".into()));
    }
    let train = select(records, &artifact.split.train_indices);
    let test = select(records, &artifact.split.test_indices);
    let x_train = artifact.normalizer.apply(&dataset::encode_features(&train))?;
    if lineage_hash(&x_train) != artifact.lineage {
        return Err(Error::InvalidInput(
            "data does not match the artifact's training lineage".into(),
        ));
    }
    let x_test = artifact.normalizer.apply(&dataset::encode_features(&test))?;
    let y_train = artifact.nn_tsne.forward(&x_train)?;
    let y_test = artifact.nn_tsne.forward(&x_test)?;
    baselines::compare_spaces(
        SpaceData {
            train: &y_train,
            test: &y_test,
        },
        SpaceData {
            train: &x_train,
            test: &x_test,
        },
        &dataset::claims(&train),
        &dataset::claims(&test),
        kinds,
        spec,
    )
}

/// Grid cell of every training point; used by rendering and tests.
pub fn training_pixels(artifact: &PipelineArtifact) -> Vec<Option<(usize, usize)>> {
    let g = &artifact.surface.geometry;
    artifact
        .embedding
        .iter_rows()
        .map(|r| g.locate(r[0], r[1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SyntheticConfig;

    fn small_run() -> (Vec<ContractRecord>, RunConfig) {
        let records = dataset::generate_synthetic(&SyntheticConfig {
            n_contracts: 300,
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let mut cfg = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        cfg.tsne.perplexity = 30.0;
        cfg.tsne.n_iterations = 300;
        cfg.nn_tsne.epochs = 20;
        cfg.nn_risk.epochs = 20;
        (records, cfg)
    }

    #[test]
    fn artifact_round_trip_is_byte_identical() {
        let (records, cfg) = small_run();
        let out = train(&records, &cfg).unwrap();
        assert_eq!(out.train_records.len(), 200);
        assert_eq!(out.test_records.len(), 100);
        assert!(out.artifact.insurer.is_some());
        let json = out.artifact.to_json().unwrap();
        let back = PipelineArtifact::from_json(&json).unwrap();
        assert_eq!(back, out.artifact);
        assert_eq!(back.to_json().unwrap(), json);

        let on_map = out.artifact.surface.score_points(&out.artifact.embedding);
        assert!(on_map.iter().all(|s| s.value().is_some()));
        let batch = out.artifact.score(&out.test_records).unwrap();
        assert_eq!(batch.scores.len(), 100);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (records, cfg) = small_run();
        let json = train(&records, &cfg).unwrap().artifact.to_json().unwrap();
        let bumped = json.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(matches!(PipelineArtifact::from_json(&bumped), Err(Error::Schema(_))));
    }

    #[test]
    fn too_few_records() {
        let (records, cfg) = small_run();
        assert!(matches!(train(&records[..50], &cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scores_csv_layout() {
        let batch = ScoredBatch {
            coordinates: Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(),
            scores: vec![surface::RiskScore::Value(0.25), surface::RiskScore::OutOfSurface],
            retained: vec![0],
        };
        assert_eq!(scores_csv(&batch), "row,y1,y2,risk,status\n0,1,2,0.25,ok\n1,3,4,,out_of_surface\n");
    }

    #[test]
    fn boundaries_are_checked() {
        assert!(check_boundaries(&[0.3, 0.5]).is_ok());
        assert!(check_boundaries(&[0.5, 0.3]).is_err());
        assert!(check_boundaries(&[1.5]).is_err());
    }
}
