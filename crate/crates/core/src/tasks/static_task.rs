use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{complex_parts, record_hash, shared_records, source_features, ErrorCdf, LinkConfig, TaskError};
use crate::features::{normalized_error, quantize, Codebook};
use crate::neural::{mlp_forward_batch, predict_topk, rows_to_matrix, MlpModel, Targets};
use crate::scene::{channel_at, sample_scene, Point, Site};
use crate::seed::{derive_seed, rng_for, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct StaticRecord {
    pub features: Vec<f64>,
    pub target: usize,
    /// Target-site channel, kept for gain evaluation.
    pub h_target: Vec<Complex64>,
    pub user_position: Point,
}

impl StaticRecord {
    pub fn hash(&self) -> [u8; 32] {
        record_hash(&[&self.features, &complex_parts(&self.h_target)], &[self.target])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticDataset {
    pub records: Vec<StaticRecord>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl StaticDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn hashes(&self) -> Vec<[u8; 32]> {
        self.records.iter().map(StaticRecord::hash).collect()
    }

    /// First `n_train` records and the rest; fails if the halves share a record.
    pub fn split(&self, n_train: usize) -> Result<(StaticDataset, StaticDataset), TaskError> {
        if n_train > self.len() {
            return Err(TaskError::Config(format!("cannot take {n_train} of {} records", self.len())));
        }
        let part = |r: &[StaticRecord]| StaticDataset {
            records: r.to_vec(),
            ..self.clone_meta()
        };
        let (a, b) = (part(&self.records[..n_train]), part(&self.records[n_train..]));
        a.verify_disjoint(&b)?;
        Ok((a, b))
    }

    fn clone_meta(&self) -> StaticDataset {
        StaticDataset {
            records: Vec::new(),
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            seed: self.seed,
        }
    }

    pub fn verify_disjoint(&self, other: &StaticDataset) -> Result<(), TaskError> {
        match shared_records(&self.hashes(), &other.hashes()) {
            0 => Ok(()),
            n => Err(TaskError::NotDisjoint(n)),
        }
    }

    pub fn feature_matrix(&self) -> Array2<f64> {
        let rows: Vec<&[f64]> = self.records.iter().map(|r| r.features.as_slice()).collect();
        rows_to_matrix(&rows)
    }

    pub fn labels(&self) -> Targets {
        Targets::Labels(self.records.iter().map(|r| r.target).collect())
    }
}

/// One record per scene draw: features of the first user at the source sites,
/// target = best codeword for its channel at the target site.
pub fn build_static_dataset(cfg: &LinkConfig, n_points: usize, seed: u64) -> Result<StaticDataset, TaskError> {
    cfg.validate()?;
    if n_points == 0 {
        return Err(TaskError::Config("n_points must be at least 1".into()));
    }
    let codebook = cfg.target_codebook()?;
    let mut records = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let scene = sample_scene(&cfg.scene, derive_seed(seed, streams::DATASET, i as u64))?;
        let user = &scene.users[0];
        let features = source_features(&scene, &cfg.source_sites, user.id, &user.position)?;
        let site = scene.site(&cfg.target_site)?;
        let h_target = channel_at(&scene, site, user.id, &user.position, 0)?;
        let target = quantize(&h_target, &codebook)?;
        records.push(StaticRecord {
            features,
            target,
            h_target,
            user_position: user.position,
        });
    }
    Ok(StaticDataset {
        records,
        feature_dim: cfg.feature_dim(),
        num_classes: codebook.len(),
        seed,
    })
}

/// Location-based beam: bearing from a Gaussian-perturbed position estimate,
/// assuming line of sight.
pub fn lo_baseline(
    position: &Point,
    noise_std: f64,
    site: &Site,
    codebook: &Codebook,
    rng: &mut impl Rng,
) -> Result<usize, TaskError> {
    if !(noise_std >= 0.0) {
        return Err(TaskError::Config("position noise std must be non-negative".into()));
    }
    let est = if noise_std > 0.0 {
        let n = Normal::new(0.0, noise_std).expect("valid std");
        position.offset(n.sample(rng), n.sample(rng))
    } else {
        *position
    };
    if codebook.num_elements() != site.num_elements() {
        return Err(TaskError::CodebookMismatch(format!(
            "codebook for {} elements, site has {}",
            codebook.num_elements(),
            site.num_elements()
        )));
    }
    Ok(codebook.nearest_to_angle(site.array.spacing, site.relative_angle_to(&est)))
}

pub enum StaticPredictor<'a> {
    Model(&'a MlpModel),
    /// Predicts the true best codeword, second choice the next-best.
    Oracle,
    /// Two distinct uniformly random codewords per point.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticReport {
    pub top1: ErrorCdf,
    /// Best of the two top candidates, chosen with the true channel.
    pub top2: ErrorCdf,
    pub top1_accuracy: f64,
    pub top2_accuracy: f64,
    /// Per-point errors in dataset order.
    pub top1_errors: Vec<f64>,
    pub top2_errors: Vec<f64>,
}

fn top2_of_gains(codebook: &Codebook, h: &[Complex64]) -> Result<[usize; 2], TaskError> {
    let g = codebook.gains(h)?;
    let order = predict_topk(&g, 2.min(g.len()))?;
    Ok([order[0], *order.get(1).unwrap_or(&order[0])])
}

pub fn evaluate_static_with(
    test: &StaticDataset,
    codebook: &Codebook,
    predictor: StaticPredictor<'_>,
) -> Result<StaticReport, TaskError> {
    if test.is_empty() {
        return Err(TaskError::Empty);
    }
    if codebook.len() != test.num_classes {
        return Err(TaskError::CodebookMismatch(format!(
            "codebook has {} codewords, dataset {} classes",
            codebook.len(),
            test.num_classes
        )));
    }
    let k = codebook.len();
    let picks: Vec<[usize; 2]> = match predictor {
        StaticPredictor::Model(m) => {
            if m.d_out() != k || m.d_in() != test.feature_dim {
                return Err(TaskError::CodebookMismatch(format!(
                    "model maps {} -> {}, dataset {} -> {k}",
                    m.d_in(),
                    m.d_out(),
                    test.feature_dim
                )));
            }
            let mut out = Vec::with_capacity(test.len());
            for chunk in test.records.chunks(2048) {
                let rows: Vec<&[f64]> = chunk.iter().map(|r| r.features.as_slice()).collect();
                let p = mlp_forward_batch(m, &rows_to_matrix(&rows))?;
                for row in p.rows() {
                    let t = predict_topk(row.as_slice().expect("contiguous"), 2.min(k))?;
                    out.push([t[0], *t.get(1).unwrap_or(&t[0])]);
                }
            }
            out
        }
        StaticPredictor::Oracle => test
            .records
            .iter()
            .map(|r| top2_of_gains(codebook, &r.h_target))
            .collect::<Result<_, _>>()?,
        StaticPredictor::Random { seed } => (0..test.len())
            .map(|i| {
                let mut rng = rng_for(seed, streams::BASELINE, i as u64);
                let s = sample(&mut rng, k, 2.min(k));
                [s.index(0), s.iter().nth(1).unwrap_or(s.index(0))]
            })
            .collect(),
    };
    let mut e1 = Vec::with_capacity(test.len());
    let mut e2 = Vec::with_capacity(test.len());
    let (mut hit1, mut hit2) = (0usize, 0usize);
    for (r, [a, b]) in test.records.iter().zip(&picks) {
        let ea = normalized_error(&r.h_target, *a, codebook)?;
        let eb = normalized_error(&r.h_target, *b, codebook)?;
        e1.push(ea);
        e2.push(ea.min(eb));
        hit1 += (*a == r.target) as usize;
        hit2 += (*a == r.target || *b == r.target) as usize;
    }
    let n = test.len() as f64;
    Ok(StaticReport {
        top1: ErrorCdf::new(e1.clone())?,
        top2: ErrorCdf::new(e2.clone())?,
        top1_accuracy: hit1 as f64 / n,
        top2_accuracy: hit2 as f64 / n,
        top1_errors: e1,
        top2_errors: e2,
    })
}

pub fn evaluate_static(model: &MlpModel, test: &StaticDataset, codebook: &Codebook) -> Result<StaticReport, TaskError> {
    evaluate_static_with(test, codebook, StaticPredictor::Model(model))
}
