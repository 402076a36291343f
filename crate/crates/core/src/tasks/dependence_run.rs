use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LinkConfig, TaskError};
use crate::dependence::{avg_canonical_correlation, mutual_information, stack_real_imag, DependenceSummary, DiscreteJoint};
use crate::features::{build_dft_codebook, quantize};
use crate::scene::{channel_at, sample_scene};
use crate::seed::{derive_seed, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependenceTaskConfig {
    /// The first source site is quantized against the target site.
    pub link: LinkConfig,
    pub source_oversampling: usize,
    /// Relative diagonal loading for the canonical correlation analysis.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_ridge() -> f64 {
    1e-9
}

/// Plug-in MI between quantized source and target channels and the average
/// canonical correlation between the raw channels, for each prefix size.
pub fn run_dependence(
    cfg: &DependenceTaskConfig,
    sample_counts: &[usize],
    seed: u64,
) -> Result<Vec<DependenceSummary>, TaskError> {
    cfg.link.validate()?;
    if cfg.source_oversampling == 0 {
        return Err(TaskError::Config("source oversampling must be at least 1".into()));
    }
    let n = sample_counts.iter().copied().max().ok_or(TaskError::Empty)?;
    if sample_counts.contains(&0) {
        return Err(TaskError::Config("sample counts must be positive".into()));
    }
    let src_id = &cfg.link.source_sites[0];
    let find = |id: &str| cfg.link.scene.sites.iter().find(|s| s.id == id).expect("validated");
    let (ms, mt) = (find(src_id).num_elements(), find(&cfg.link.target_site).num_elements());
    let cb_s = build_dft_codebook(ms, cfg.source_oversampling);
    let cb_t = cfg.link.target_codebook()?;
    let mut pairs = Vec::with_capacity(n);
    let mut x = DMatrix::zeros(n, 2 * ms);
    let mut y = DMatrix::zeros(n, 2 * mt);
    for i in 0..n {
        let scene = sample_scene(&cfg.link.scene, derive_seed(seed, streams::DATASET, i as u64))?;
        let u = &scene.users[0];
        let hs = channel_at(&scene, scene.site(src_id)?, u.id, &u.position, 0)?;
        let ht = channel_at(&scene, scene.site(&cfg.link.target_site)?, u.id, &u.position, 0)?;
        pairs.push((quantize(&hs, &cb_s)?, quantize(&ht, &cb_t)?));
        x.row_mut(i).copy_from_slice(&stack_real_imag(&hs));
        y.row_mut(i).copy_from_slice(&stack_real_imag(&ht));
    }
    sample_counts
        .iter()
        .map(|&k| {
            let joint = DiscreteJoint::from_pairs(pairs[..k].iter().copied(), cb_s.len(), cb_t.len())?;
            let avg_cca = avg_canonical_correlation(&x.rows(0, k).into_owned(), &y.rows(0, k).into_owned(), cfg.ridge)?;
            Ok(DependenceSummary {
                samples: k,
                alphabet_a: cb_s.len(),
                alphabet_b: cb_t.len(),
                entropy_b_bits: joint.entropy_cols(),
                mi_bits: mutual_information(&joint),
                avg_cca,
            })
        })
        .collect()
}
