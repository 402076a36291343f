//! Experiment configuration files (TOML).
//!
//! Unknown keys are collected with their full path instead of failing on the
//! first one, and semantic checks report every problem at once. The seed,
//! the codebook size and the SINR threshold have no defaults.

use std::path::{Path, PathBuf};

use csilab_core::dependence::{LocalizationMode, ScalingConfig};
use csilab_core::neural::{OptimizerKind, TrainConfig};
use csilab_core::scene::SceneConfig;
use csilab_core::scheduling::GroupingConfig;
use csilab_core::tasks::{ApsTaskConfig, DependenceTaskConfig, LinkConfig, SequenceTaskConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}", .errors.join("\n"))]
pub struct ConfigError {
    pub errors: Vec<String>,
}

impl ConfigError {
    fn one(msg: impl Into<String>) -> Self {
        Self { errors: vec![msg.into()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Dependence,
    Static,
    Sequence,
    Grouping,
    Scaling,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dependence => "dependence",
            Self::Static => "static",
            Self::Sequence => "sequence",
            Self::Grouping => "grouping",
            Self::Scaling => "scaling",
        }
    }

    fn uses_codebook(&self) -> bool {
        !matches!(self, Self::Scaling)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    /// Macro and small site sharing scatterers, LoS enabled.
    Default,
    /// Road with a fixed scatterer map and LoS blockers.
    Mobility,
    /// Users clustered in angularly separated hotspots.
    Hotspots,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<ScenePreset>,
    /// Full scene description; overrides the preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<SceneConfig>,
    /// Layout for the array-size scaling experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSection {
    /// Number of target codewords; must equal target elements times oversampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook_size: Option<usize>,
    #[serde(default = "one")]
    pub oversampling: usize,
    #[serde(default = "one")]
    pub source_oversampling: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_sites: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_site: Option<String>,
    #[serde(default = "d_source_grid")]
    pub source_grid: usize,
    #[serde(default = "d_target_grid")]
    pub target_grid: usize,
    #[serde(default = "d_snapshots")]
    pub snapshots: usize,
    #[serde(default = "d_input_len")]
    pub input_len: usize,
    #[serde(default = "d_output_len")]
    pub output_len: usize,
}

fn one() -> usize {
    1
}
fn d_source_grid() -> usize {
    128
}
fn d_target_grid() -> usize {
    1024
}
fn d_snapshots() -> usize {
    8
}
fn d_input_len() -> usize {
    5
}
fn d_output_len() -> usize {
    2
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            codebook_size: None,
            oversampling: 1,
            source_oversampling: 1,
            source_sites: None,
            target_site: None,
            source_grid: d_source_grid(),
            target_grid: d_target_grid(),
            snapshots: d_snapshots(),
            input_len: d_input_len(),
            output_len: d_output_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_gru_hidden")]
    pub gru_hidden: usize,
    /// Replace the learned model by the best-codeword oracle.
    #[serde(default)]
    pub oracle: bool,
}

fn d_hidden() -> Vec<usize> {
    vec![100, 100, 100]
}
fn d_gru_hidden() -> usize {
    96
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            gru_hidden: d_gru_hidden(),
            oracle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSection {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub patience: usize,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    64
}
fn d_epochs() -> usize {
    30
}
fn d_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: d_lr(),
            batch_size: d_batch(),
            epochs: d_epochs(),
            optimizer: d_optimizer(),
            patience: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSection {
    #[serde(default = "d_train_points")]
    pub train_points: usize,
    #[serde(default = "d_test_points")]
    pub test_points: usize,
    #[serde(default = "d_sample_counts")]
    pub sample_counts: Vec<usize>,
    #[serde(default = "d_trajectories")]
    pub trajectories: usize,
    #[serde(default = "d_train_trajectories")]
    pub train_trajectories: usize,
    #[serde(default = "d_delays")]
    pub delays: Vec<usize>,
    #[serde(default = "d_windows")]
    pub windows_per_trajectory: usize,
    #[serde(default = "d_stride")]
    pub window_stride: usize,
    /// Standard deviation (m) of the position used by the location baseline.
    #[serde(default = "d_noise")]
    pub position_noise_std: f64,
    #[serde(default = "d_user_counts")]
    pub user_counts: Vec<usize>,
    #[serde(default = "d_drops")]
    pub drops: usize,
    #[serde(default = "d_snr")]
    pub snr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinr_min: Option<f64>,
    #[serde(default = "d_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "d_aps_points")]
    pub aps_train_points: usize,
    #[serde(default = "d_element_counts")]
    pub element_counts: Vec<usize>,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_modes")]
    pub scaling_modes: Vec<LocalizationMode>,
}

fn d_train_points() -> usize {
    20000
}
fn d_test_points() -> usize {
    5000
}
fn d_sample_counts() -> Vec<usize> {
    vec![1000, 5000, 20000]
}
fn d_trajectories() -> usize {
    6000
}
fn d_train_trajectories() -> usize {
    5000
}
fn d_delays() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}
fn d_windows() -> usize {
    4
}
fn d_stride() -> usize {
    5
}
fn d_noise() -> f64 {
    1.0
}
fn d_user_counts() -> Vec<usize> {
    vec![4, 8, 16, 32]
}
fn d_drops() -> usize {
    50
}
fn d_snr() -> f64 {
    10.0
}
fn d_taus() -> Vec<f64> {
    vec![0.3]
}
fn d_aps_points() -> usize {
    4000
}
fn d_element_counts() -> Vec<usize> {
    vec![8, 16, 32, 64, 128]
}
fn d_trials() -> usize {
    2000
}
fn d_modes() -> Vec<LocalizationMode> {
    vec![LocalizationMode::TwoSites, LocalizationMode::OneSite]
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            train_points: d_train_points(),
            test_points: d_test_points(),
            sample_counts: d_sample_counts(),
            trajectories: d_trajectories(),
            train_trajectories: d_train_trajectories(),
            delays: d_delays(),
            windows_per_trajectory: d_windows(),
            window_stride: d_stride(),
            position_noise_std: d_noise(),
            user_counts: d_user_counts(),
            drops: d_drops(),
            snr_db: d_snr(),
            sinr_min: None,
            taus: d_taus(),
            aps_train_points: d_aps_points(),
            element_counts: d_element_counts(),
            trials: d_trials(),
            scaling_modes: d_modes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::one(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Parses and validates; unknown keys and semantic problems are all reported.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut errors = Vec::new();
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::one(e.to_string()))?;
    let parsed: Result<ExperimentConfig, _> = serde_ignored::deserialize(de, |path| {
        errors.push(format!("unknown key `{path}`"));
    });
    let cfg = match parsed {
        Ok(c) => c,
        Err(e) => {
            errors.push(e.to_string().trim_end().to_string());
            return Err(ConfigError { errors });
        }
    };
    errors.extend(cfg.problems());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { errors })
    }
}

impl ExperimentConfig {
    /// Minimal configuration of a kind with every optional section defaulted.
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed: Some(seed),
            output_dir: None,
            scene: SceneSection::default(),
            features: FeatureSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical serialization, ignoring the output directory.
    pub fn hash_hex(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let errors = self.problems();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { errors })
        }
    }

    /// Master seed; `validate` guarantees it is present.
    pub fn master_seed(&self) -> u64 {
        self.seed.expect("validated configuration has a seed")
    }

    pub fn scene_config(&self) -> SceneConfig {
        if let Some(c) = &self.scene.custom {
            return c.clone();
        }
        let preset = self.scene.preset.unwrap_or(match self.kind {
            ExperimentKind::Sequence => ScenePreset::Mobility,
            ExperimentKind::Grouping => ScenePreset::Hotspots,
            _ => ScenePreset::Default,
        });
        match preset {
            ScenePreset::Default => SceneConfig::default(),
            ScenePreset::Mobility => SequenceTaskConfig::standard_mobility().link.scene,
            ScenePreset::Hotspots => GroupingConfig::separable_hotspots().aps.scene,
        }
    }

    pub fn link_config(&self) -> LinkConfig {
        let d = LinkConfig::default();
        LinkConfig {
            scene: self.scene_config(),
            source_sites: self.features.source_sites.clone().unwrap_or(d.source_sites),
            target_site: self.features.target_site.clone().unwrap_or(d.target_site),
            oversampling: self.features.oversampling,
        }
    }

    pub fn dependence_config(&self) -> DependenceTaskConfig {
        DependenceTaskConfig {
            link: self.link_config(),
            source_oversampling: self.features.source_oversampling,
            ridge: 1e-9,
        }
    }

    pub fn sequence_config(&self) -> SequenceTaskConfig {
        let e = &self.evaluation;
        SequenceTaskConfig {
            link: self.link_config(),
            input_len: self.features.input_len,
            output_len: self.features.output_len,
            delays: e.delays.clone(),
            windows_per_trajectory: e.windows_per_trajectory,
            window_stride: e.window_stride,
            position_noise_std: e.position_noise_std,
        }
    }

    /// Grouping setup at the first threshold in `evaluation.taus`.
    pub fn grouping_config(&self) -> GroupingConfig {
        let link = self.link_config();
        let e = &self.evaluation;
        GroupingConfig {
            aps: ApsTaskConfig {
                scene: link.scene,
                source_site: link.source_sites[0].clone(),
                target_site: link.target_site,
                source_grid: self.features.source_grid,
                target_grid: self.features.target_grid,
                snapshots: self.features.snapshots,
            },
            user_counts: e.user_counts.clone(),
            drops: e.drops,
            snr_db: e.snr_db,
            sinr_min: e.sinr_min.unwrap_or(f64::NAN),
            tau: e.taus.first().copied().unwrap_or(0.3),
            oversampling: self.features.oversampling,
        }
    }

    pub fn scaling_config(&self) -> ScalingConfig {
        self.scene.scaling.clone().unwrap_or_default()
    }

    /// Training settings with the seed derived from the master seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            optimizer: t.optimizer,
            seed,
            patience: t.patience,
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.seed.is_none() {
            errs.push("`seed` is required".into());
        }
        if self.scene.custom.is_some() && self.scene.preset.is_some() {
            errs.push("scene: give either `preset` or `custom`, not both".into());
        }
        let f = &self.features;
        let e = &self.evaluation;
        if f.oversampling == 0 || f.source_oversampling == 0 {
            errs.push("features: oversampling factors must be at least 1".into());
        }
        if self.kind.uses_codebook() {
            let link = self.link_config();
            if let Err(err) = link.validate() {
                errs.push(format!("scene: {err}"));
            }
            match f.codebook_size {
                None => errs.push("features: `codebook_size` is required".into()),
                Some(k) => {
                    if let Some(site) = link.scene.sites.iter().find(|s| s.id == link.target_site) {
                        let expect = site.num_elements() * f.oversampling;
                        if k != expect {
                            errs.push(format!(
                                "features: codebook_size {k} does not match {} elements x oversampling {}",
                                site.num_elements(),
                                f.oversampling
                            ));
                        }
                    }
                }
            }
        }
        let t = &self.training;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            errs.push("training: learning_rate must be finite and non-negative".into());
        }
        if t.batch_size == 0 {
            errs.push("training: batch_size must be at least 1".into());
        }
        if self.model.hidden.contains(&0) || self.model.gru_hidden == 0 {
            errs.push("model: layer widths must be positive".into());
        }
        match self.kind {
            ExperimentKind::Dependence => {
                if e.sample_counts.is_empty() || e.sample_counts.contains(&0) {
                    errs.push("evaluation: sample_counts must be non-empty and positive".into());
                }
            }
            ExperimentKind::Static => {
                if e.train_points == 0 || e.test_points == 0 {
                    errs.push("evaluation: train_points and test_points must be positive".into());
                }
            }
            ExperimentKind::Sequence => {
                if e.train_trajectories == 0 || e.train_trajectories >= e.trajectories {
                    errs.push("evaluation: need 0 < train_trajectories < trajectories".into());
                }
                if let Err(err) = self.sequence_config().validate() {
                    errs.push(format!("sequence: {err}"));
                }
            }
            ExperimentKind::Grouping => {
                match e.sinr_min {
                    None => errs.push("evaluation: `sinr_min` is required".into()),
                    Some(s) if !(s >= 0.0) || !s.is_finite() => {
                        errs.push("evaluation: sinr_min must be finite and non-negative".into())
                    }
                    _ => {}
                }
                if e.taus.is_empty() || e.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    errs.push("evaluation: taus must be non-empty and lie in [0, 1]".into());
                }
                if e.aps_train_points == 0 {
                    errs.push("evaluation: aps_train_points must be positive".into());
                }
                if e.sinr_min.is_some_and(|s| s >= 0.0) {
                    if let Err(err) = self.grouping_config().validate() {
                        errs.push(format!("grouping: {err}"));
                    }
                }
            }
            ExperimentKind::Scaling => {
                if e.element_counts.is_empty() || e.element_counts.windows(2).any(|w| w[0] >= w[1]) || e.element_counts[0] == 0 {
                    errs.push("evaluation: element_counts must be positive and strictly increasing".into());
                }
                if e.trials == 0 || e.scaling_modes.is_empty() {
                    errs.push("evaluation: trials and scaling_modes must be non-empty".into());
                }
            }
        }
        errs
    }
}
