use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{record_hash, TaskError};
use crate::features::{compute_aps, log_whiten_relative, Aps};
use crate::scene::{channel_at, sample_scene, Point, Scene, SceneConfig};
use crate::seed::{derive_seed, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApsTaskConfig {
    pub scene: SceneConfig,
    pub source_site: String,
    pub target_site: String,
    pub source_grid: usize,
    pub target_grid: usize,
    /// Subcarriers averaged into each spectrum.
    pub snapshots: usize,
}

impl ApsTaskConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        self.scene.validate()?;
        if self.snapshots == 0 {
            return Err(TaskError::Config("snapshots must be at least 1".into()));
        }
        if self.scene.users.count == 0 {
            return Err(TaskError::Config("scenes must contain at least one user".into()));
        }
        for (id, grid) in [(&self.source_site, self.source_grid), (&self.target_site, self.target_grid)] {
            let site = self
                .scene
                .sites
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| TaskError::Config(format!("unknown site `{id}`")))?;
            if grid < site.num_elements() {
                return Err(TaskError::Config(format!(
                    "grid {grid} smaller than the {} elements of `{id}`",
                    site.num_elements()
                )));
            }
        }
        Ok(())
    }
}

/// Spectrum of one link averaged over `snapshots` subcarriers and scaled so
/// that the average per-element channel power is one. Returns the spectrum and
/// the equally scaled subcarrier-0 channel.
pub fn normalized_link_aps(
    scene: &Scene,
    site_id: &str,
    user: u32,
    pos: &Point,
    grid: usize,
    snapshots: usize,
) -> Result<(Aps, Vec<Complex64>), TaskError> {
    let site = scene.site(site_id)?;
    let hs = (0..snapshots as u32)
        .map(|s| channel_at(scene, site, user, pos, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut aps = compute_aps(&hs, grid)?;
    let total = aps.total_power();
    if !(total > 0.0) {
        return Err(TaskError::Feature(crate::features::FeatureError::DegenerateInput));
    }
    let c = site.num_elements() as f64 / total;
    aps.bins.iter_mut().for_each(|b| *b *= c);
    let h0 = hs[0].iter().map(|v| v * c.sqrt()).collect();
    Ok((aps, h0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApsRecord {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

impl ApsRecord {
    pub fn hash(&self) -> [u8; 32] {
        record_hash(&[&self.source, &self.target], &[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApsDataset {
    pub records: Vec<ApsRecord>,
    pub source_grid: usize,
    pub target_grid: usize,
    pub seed: u64,
}

impl ApsDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Log-whitened source spectrum used as network input.
pub fn aps_input_features(bins: &[f64]) -> Vec<f64> {
    log_whiten_relative(bins)
}

/// Natural log of the spectrum with a floor of `1e-12` times its maximum.
pub fn aps_log_target(bins: &[f64]) -> Vec<f64> {
    let max = bins.iter().cloned().fold(0.0_f64, f64::max);
    let floor = if max > 0.0 { max * 1e-12 } else { f64::MIN_POSITIVE };
    bins.iter().map(|&b| b.max(floor).ln()).collect()
}

/// Pairs of (source, target) spectra, one per scene draw for its first user.
pub fn build_aps_dataset(cfg: &ApsTaskConfig, n_points: usize, seed: u64) -> Result<ApsDataset, TaskError> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let scene = sample_scene(&cfg.scene, derive_seed(seed, streams::DATASET, i as u64))?;
        let u = &scene.users[0];
        let (src, _) = normalized_link_aps(&scene, &cfg.source_site, u.id, &u.position, cfg.source_grid, cfg.snapshots)?;
        let (tgt, _) = normalized_link_aps(&scene, &cfg.target_site, u.id, &u.position, cfg.target_grid, cfg.snapshots)?;
        records.push(ApsRecord {
            source: src.bins,
            target: tgt.bins,
        });
    }
    Ok(ApsDataset {
        records,
        source_grid: cfg.source_grid,
        target_grid: cfg.target_grid,
        seed,
    })
}
