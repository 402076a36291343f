//! Case-study harnesses: dataset construction, baselines and evaluation for
//! static remote beam inference, delayed sequence inference and angular power
//! spectrum inference.

mod aps;
mod dependence_run;
mod sequence;
mod static_task;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dependence::{CcaError, DependenceError};
use crate::features::{angular_features, build_dft_codebook, Codebook, FeatureError};
use crate::neural::NeuralError;
use crate::scene::{channel_at, Point, Scene, SceneConfig, SceneError};

pub use aps::{aps_input_features, aps_log_target, build_aps_dataset, normalized_link_aps, ApsDataset, ApsRecord, ApsTaskConfig};
pub use dependence_run::{run_dependence, DependenceTaskConfig};
pub use sequence::{
    build_sequence_dataset, evaluate_sequence, SequenceDataset, SequenceModel, SequencePoint, SequencePredictors, SequenceRecord,
    SequenceReport, SequenceRow, SequenceTaskConfig,
};
pub use static_task::{
    build_static_dataset, evaluate_static, evaluate_static_with, lo_baseline, StaticDataset, StaticPredictor,
    StaticRecord, StaticReport,
};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Dependence(#[from] DependenceError),
    #[error(transparent)]
    Cca(#[from] CcaError),
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("codebook mismatch: {0}")]
    CodebookMismatch(String),
    #[error("train and test sets share {0} records")]
    NotDisjoint(usize),
    #[error("empty dataset")]
    Empty,
}

/// Source sites feeding the model and the remote site whose beam is inferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub scene: SceneConfig,
    pub source_sites: Vec<String>,
    pub target_site: String,
    /// Oversampling factor of the target codebook.
    pub oversampling: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            source_sites: vec!["mbs".into()],
            target_site: "sbs".into(),
            oversampling: 1,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        self.scene.validate()?;
        if self.source_sites.is_empty() {
            return Err(TaskError::Config("at least one source site is required".into()));
        }
        if self.oversampling == 0 {
            return Err(TaskError::Config("oversampling must be at least 1".into()));
        }
        if self.scene.users.count == 0 {
            return Err(TaskError::Config("scenes must contain at least one user".into()));
        }
        for id in self.source_sites.iter().chain([&self.target_site]) {
            if !self.scene.sites.iter().any(|s| &s.id == id) {
                return Err(TaskError::Scene(SceneError::UnknownSite(id.clone())));
            }
        }
        Ok(())
    }

    pub fn target_codebook(&self) -> Result<Codebook, TaskError> {
        let site = self
            .scene
            .sites
            .iter()
            .find(|s| s.id == self.target_site)
            .ok_or_else(|| SceneError::UnknownSite(self.target_site.clone()))?;
        Ok(build_dft_codebook(site.num_elements(), self.oversampling))
    }

    /// Total feature length across source sites.
    pub fn feature_dim(&self) -> usize {
        self.source_sites
            .iter()
            .filter_map(|id| self.scene.sites.iter().find(|s| &s.id == id))
            .map(|s| s.num_elements())
            .sum()
    }
}

/// Concatenated angular features of every source site for a user position.
pub(crate) fn source_features(
    scene: &Scene,
    sources: &[String],
    user: u32,
    pos: &Point,
) -> Result<Vec<f64>, TaskError> {
    let mut f = Vec::new();
    for id in sources {
        let site = scene.site(id)?;
        let h = channel_at(scene, site, user, pos, 0)?;
        f.extend(angular_features(&h));
    }
    Ok(f)
}

/// SHA-256 over the exact bits of a record's numeric content.
pub fn record_hash(parts: &[&[f64]], labels: &[usize]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        for v in *p {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    for l in labels {
        h.update((*l as u64).to_le_bytes());
    }
    h.finalize().into()
}

pub(crate) fn complex_parts(h: &[Complex64]) -> Vec<f64> {
    h.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Number of hashes present in both lists.
pub fn shared_records(a: &[[u8; 32]], b: &[[u8; 32]]) -> usize {
    let set: std::collections::HashSet<&[u8; 32]> = a.iter().collect();
    b.iter().filter(|h| set.contains(h)).count()
}

/// Sorted normalized errors with quantile access.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCdf {
    values: Vec<f64>,
}

impl ErrorCdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self, TaskError> {
        if values.is_empty() {
            return Err(TaskError::Empty);
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(TaskError::Config("normalized errors must lie in [0, 1]".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Nearest-rank quantile: the smallest value with at least `p·n` values at or below it.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.values.len();
        let rank = (p.clamp(0.0, 1.0) * n as f64).ceil() as usize;
        self.values[rank.clamp(1, n) - 1]
    }

    /// Empirical CDF at `x`: fraction of values strictly below `x`.
    pub fn fraction_below(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v < x) as f64 / self.values.len() as f64
    }

    pub fn deciles(&self) -> Vec<f64> {
        (1..10).map(|d| self.quantile(d as f64 / 10.0)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Mean and half-width of the normal-approximation 95% interval.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}
