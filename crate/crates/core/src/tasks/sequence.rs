use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{complex_parts, lo_baseline, mean_ci95, record_hash, shared_records, source_features, LinkConfig, TaskError};
use crate::features::{gain_ratio, quantize, Codebook};
use crate::neural::{
    gru_forward_batch, mlp_forward_batch, predict_topk, rows_to_matrix, GruSeq2Seq, MlpModel, SequenceBatch, Targets,
};
use crate::scene::{
    channel_at, sample_scene, LosPolicy, Point, Region, SceneConfig, ScatterPlacement, ScattererGroup, Segment,
    UserDistribution,
};
use crate::seed::{derive_seed, rng_for, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceTaskConfig {
    pub link: LinkConfig,
    pub input_len: usize,
    pub output_len: usize,
    /// Delays (in slots) drawn uniformly per record. A delay of `d` means the
    /// first scored slot is `d + 1` slots after the last input slot.
    pub delays: Vec<usize>,
    pub windows_per_trajectory: usize,
    /// Slots between consecutive window starts on one trajectory.
    pub window_stride: usize,
    /// Standard deviation of the position estimate used by the location baseline (m).
    #[serde(default = "default_noise")]
    pub position_noise_std: f64,
}

fn default_noise() -> f64 {
    1.0
}

impl SequenceTaskConfig {
    /// Vehicles on a straight two-way road 100 m in front of the small site,
    /// a fixed map of reflectors between the macro site and the road, and two
    /// walls that block the small site's line of sight over parts of the road.
    pub fn standard_mobility() -> Self {
        let mut scene = SceneConfig::default();
        scene.users = UserDistribution {
            count: 1,
            region: Region::Rect {
                x: [-120.0, 120.0],
                y: [399.0, 401.0],
            },
            speed: [2.0, 4.0],
            headings: vec![0.0, PI],
        };
        scene.scatterer_groups = vec![ScattererGroup {
            count: 8,
            placement: ScatterPlacement::Region {
                region: Region::Rect {
                    x: [-150.0, 150.0],
                    y: [360.0, 390.0],
                },
            },
            reflectivity: [0.2, 0.6],
            map_seed: Some(2024),
            sites: None,
        }];
        scene.los_enabled = LosPolicy {
            enabled: true,
            blocked_links: Vec::new(),
            blockers: vec![
                Segment {
                    a: Point::new(-40.0, 450.0),
                    b: Point::new(-20.0, 450.0),
                },
                Segment {
                    a: Point::new(25.0, 450.0),
                    b: Point::new(45.0, 450.0),
                },
            ],
        };
        SequenceTaskConfig {
            link: LinkConfig {
                scene,
                ..LinkConfig::default()
            },
            input_len: 5,
            output_len: 2,
            delays: vec![1, 2, 3, 4, 5],
            windows_per_trajectory: 4,
            window_stride: 5,
            position_noise_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        self.link.validate()?;
        if self.input_len == 0 || self.output_len == 0 {
            return Err(TaskError::Config("input_len and output_len must be at least 1".into()));
        }
        if self.delays.is_empty() {
            return Err(TaskError::Config("delay set must not be empty".into()));
        }
        if self.windows_per_trajectory == 0 || self.window_stride == 0 {
            return Err(TaskError::Config("windows_per_trajectory and window_stride must be at least 1".into()));
        }
        if !(self.position_noise_std >= 0.0) {
            return Err(TaskError::Config("position noise std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn max_delay(&self) -> usize {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    /// Decoder steps needed to reach the last scored slot of any record.
    pub fn horizon(&self) -> usize {
        self.max_delay() + self.output_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub trajectory: usize,
    pub window: usize,
    /// Source features for `input_len` consecutive slots.
    pub inputs: Vec<Vec<f64>>,
    /// Best target codeword at the last input slot.
    pub current_target: usize,
    /// Best target codeword for each of the `horizon` slots after the last input.
    pub future_targets: Vec<usize>,
    pub future_channels: Vec<Vec<Complex64>>,
    pub delay: usize,
    /// True user position at the last input slot.
    pub last_position: Point,
}

impl SequenceRecord {
    pub fn hash(&self) -> [u8; 32] {
        let mut parts: Vec<&[f64]> = self.inputs.iter().map(|v| v.as_slice()).collect();
        let ch: Vec<Vec<f64>> = self.future_channels.iter().map(|h| complex_parts(h)).collect();
        parts.extend(ch.iter().map(|v| v.as_slice()));
        let mut labels = self.future_targets.clone();
        labels.push(self.current_target);
        labels.push(self.delay);
        record_hash(&parts, &labels)
    }

    /// Decoder steps that are scored for this record.
    pub fn scored_steps(&self, output_len: usize) -> std::ops::Range<usize> {
        self.delay..self.delay + output_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub records: Vec<SequenceRecord>,
    pub input_len: usize,
    pub output_len: usize,
    pub horizon: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn hashes(&self) -> Vec<[u8; 32]> {
        self.records.iter().map(SequenceRecord::hash).collect()
    }

    fn with_records(&self, records: Vec<SequenceRecord>) -> SequenceDataset {
        SequenceDataset {
            records,
            input_len: self.input_len,
            output_len: self.output_len,
            horizon: self.horizon,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            seed: self.seed,
        }
    }

    /// Splits by trajectory so windows of one trajectory never straddle the split.
    pub fn split_trajectories(&self, n_train: usize) -> Result<(SequenceDataset, SequenceDataset), TaskError> {
        let (a, b): (Vec<_>, Vec<_>) = self.records.iter().cloned().partition(|r| r.trajectory < n_train);
        let (a, b) = (self.with_records(a), self.with_records(b));
        match shared_records(&a.hashes(), &b.hashes()) {
            0 => Ok((a, b)),
            n => Err(TaskError::NotDisjoint(n)),
        }
    }

    /// Time-major training batch supervising every decoder step.
    pub fn to_batch(&self) -> SequenceBatch {
        let inputs = (0..self.input_len)
            .map(|t| {
                let rows: Vec<&[f64]> = self.records.iter().map(|r| r.inputs[t].as_slice()).collect();
                rows_to_matrix(&rows)
            })
            .collect();
        let targets = (0..self.horizon)
            .map(|k| Targets::Labels(self.records.iter().map(|r| r.future_targets[k]).collect()))
            .collect();
        SequenceBatch { inputs, targets }
    }

    /// Snapshot pairs (last input features, current best codeword).
    pub fn static_pairs(&self) -> (Array2<f64>, Targets) {
        let rows: Vec<&[f64]> = self.records.iter().map(|r| r.inputs[self.input_len - 1].as_slice()).collect();
        (
            rows_to_matrix(&rows),
            Targets::Labels(self.records.iter().map(|r| r.current_target).collect()),
        )
    }
}

/// Simulates `n_trajectories` scene draws with moving users and cuts
/// `windows_per_trajectory` windows from each.
pub fn build_sequence_dataset(
    cfg: &SequenceTaskConfig,
    n_trajectories: usize,
    seed: u64,
) -> Result<SequenceDataset, TaskError> {
    cfg.validate()?;
    let codebook = cfg.link.target_codebook()?;
    let horizon = cfg.horizon();
    let mut records = Vec::with_capacity(n_trajectories * cfg.windows_per_trajectory);
    for traj in 0..n_trajectories {
        let scene = sample_scene(&cfg.link.scene, derive_seed(seed, streams::DATASET, traj as u64))?;
        let user = &scene.users[0];
        let site = scene.site(&cfg.link.target_site)?;
        let target_at = |slot: u64| -> Result<(Vec<Complex64>, usize), TaskError> {
            let h = channel_at(&scene, site, user.id, &user.position_at(slot), 0)?;
            let k = quantize(&h, &codebook)?;
            Ok((h, k))
        };
        for w in 0..cfg.windows_per_trajectory {
            let start = (w * cfg.window_stride) as u64;
            let last = start + cfg.input_len as u64 - 1;
            let inputs = (start..=last)
                .map(|s| source_features(&scene, &cfg.link.source_sites, user.id, &user.position_at(s)))
                .collect::<Result<Vec<_>, _>>()?;
            let (_, current_target) = target_at(last)?;
            let mut future_targets = Vec::with_capacity(horizon);
            let mut future_channels = Vec::with_capacity(horizon);
            for k in 0..horizon as u64 {
                let (h, t) = target_at(last + 1 + k)?;
                future_targets.push(t);
                future_channels.push(h);
            }
            let idx = records.len() as u64;
            let mut rng = rng_for(seed, streams::DELAY, idx);
            let delay = cfg.delays[rng.random_range(0..cfg.delays.len())];
            records.push(SequenceRecord {
                trajectory: traj,
                window: w,
                inputs,
                current_target,
                future_targets,
                future_channels,
                delay,
                last_position: user.position_at(last),
            });
        }
    }
    Ok(SequenceDataset {
        records,
        input_len: cfg.input_len,
        output_len: cfg.output_len,
        horizon,
        feature_dim: cfg.link.feature_dim(),
        num_classes: codebook.len(),
        seed,
    })
}

pub enum SequenceModel<'a> {
    Gru(&'a GruSeq2Seq),
    /// Picks the true best codeword at every scored slot.
    Oracle,
}

/// Predictors compared on the same records. The static model and the
/// location baseline both act on the last input slot.
pub struct SequencePredictors<'a> {
    pub sequence: Option<SequenceModel<'a>>,
    pub static_model: Option<&'a MlpModel>,
    pub location_baseline: bool,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequencePoint {
    pub point_id: usize,
    pub delay: usize,
    /// Mean gain ratio over the scored slots, per predictor.
    pub sequence: Option<f64>,
    /// Sequence model with the better of its two top candidates per slot.
    pub sequence_top2: Option<f64>,
    pub static_model: Option<f64>,
    pub location: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRow {
    pub delay: usize,
    pub count: usize,
    pub sequence: Option<f64>,
    pub static_model: Option<f64>,
    pub location: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub points: Vec<SequencePoint>,
    pub rows: Vec<SequenceRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl SequenceReport {
    /// Overall mean ratio of each predictor across all points.
    pub fn overall(&self) -> SequenceRow {
        SequenceRow {
            delay: usize::MAX,
            count: self.points.len(),
            sequence: mean(self.points.iter().filter_map(|p| p.sequence)),
            static_model: mean(self.points.iter().filter_map(|p| p.static_model)),
            location: mean(self.points.iter().filter_map(|p| p.location)),
        }
    }

    /// Paired mean difference `sequence - static` at one delay and its 95% half-width.
    pub fn paired_sequence_vs_static(&self, delay: usize) -> Option<(f64, f64)> {
        let d: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.delay == delay)
            .filter_map(|p| Some(p.sequence? - p.static_model?))
            .collect();
        (!d.is_empty()).then(|| mean_ci95(&d))
    }
}

fn ratio_over(rec: &SequenceRecord, steps: std::ops::Range<usize>, pick: impl Fn(usize) -> usize, cb: &Codebook) -> Result<f64, TaskError> {
    let n = steps.len() as f64;
    let mut s = 0.0;
    for k in steps {
        s += gain_ratio(&rec.future_channels[k], pick(k), cb)?;
    }
    Ok(s / n)
}

/// Mean beamforming-gain ratio against the best codeword, per delay bucket.
pub fn evaluate_sequence(
    cfg: &SequenceTaskConfig,
    data: &SequenceDataset,
    predictors: &SequencePredictors<'_>,
) -> Result<SequenceReport, TaskError> {
    if data.is_empty() {
        return Err(TaskError::Empty);
    }
    let cb = cfg.link.target_codebook()?;
    if cb.len() != data.num_classes {
        return Err(TaskError::CodebookMismatch(format!(
            "codebook has {} codewords, dataset {} classes",
            cb.len(),
            data.num_classes
        )));
    }
    let site = cfg
        .link
        .scene
        .sites
        .iter()
        .find(|s| s.id == cfg.link.target_site)
        .ok_or_else(|| TaskError::Config("unknown target site".into()))?;

    // top-2 candidates per record and decoder step
    let seq_picks: Option<Vec<Vec<[usize; 2]>>> = match &predictors.sequence {
        Some(SequenceModel::Gru(m)) => {
            if m.d_out() != cb.len() || m.d_in() != data.feature_dim {
                return Err(TaskError::CodebookMismatch("sequence model dimensions".into()));
            }
            let mut all = Vec::with_capacity(data.len());
            for chunk in data.records.chunks(1024) {
                let part = data.with_records(chunk.to_vec()).to_batch();
                let outs = gru_forward_batch(m, &part.inputs, data.horizon)?;
                for i in 0..chunk.len() {
                    let steps = outs
                        .iter()
                        .map(|o| {
                            let t = predict_topk(o.row(i).as_slice().expect("contiguous"), 2.min(cb.len()))?;
                            Ok([t[0], *t.get(1).unwrap_or(&t[0])])
                        })
                        .collect::<Result<Vec<_>, TaskError>>()?;
                    all.push(steps);
                }
            }
            Some(all)
        }
        Some(SequenceModel::Oracle) => Some(
            data.records
                .iter()
                .map(|r| r.future_targets.iter().map(|&t| [t, t]).collect())
                .collect(),
        ),
        None => None,
    };
    let static_picks: Option<Vec<usize>> = match predictors.static_model {
        Some(m) => {
            let (x, _) = data.static_pairs();
            let p = mlp_forward_batch(m, &x)?;
            Some(
                p.rows()
                    .into_iter()
                    .map(|r| predict_topk(r.as_slice().expect("contiguous"), 1).map(|v| v[0]))
                    .collect::<Result<_, _>>()?,
            )
        }
        None => None,
    };

    let mut points = Vec::with_capacity(data.len());
    for (i, rec) in data.records.iter().enumerate() {
        let steps = rec.scored_steps(data.output_len);
        let (sequence, sequence_top2) = match &seq_picks {
            Some(p) => {
                let top1 = ratio_over(rec, steps.clone(), |k| p[i][k][0], &cb)?;
                let mut s = 0.0;
                for k in steps.clone() {
                    let a = gain_ratio(&rec.future_channels[k], p[i][k][0], &cb)?;
                    let b = gain_ratio(&rec.future_channels[k], p[i][k][1], &cb)?;
                    s += a.max(b);
                }
                (Some(top1), Some(s / steps.len() as f64))
            }
            None => (None, None),
        };
        let static_model = match &static_picks {
            Some(p) => Some(ratio_over(rec, steps.clone(), |_| p[i], &cb)?),
            None => None,
        };
        let location = if predictors.location_baseline {
            let mut rng = rng_for(predictors.noise_seed, streams::NOISE, i as u64);
            let k = lo_baseline(&rec.last_position, cfg.position_noise_std, site, &cb, &mut rng)?;
            Some(ratio_over(rec, steps.clone(), |_| k, &cb)?)
        } else {
            None
        };
        points.push(SequencePoint {
            point_id: i,
            delay: rec.delay,
            sequence,
            sequence_top2,
            static_model,
            location,
        });
    }

    let mut delays: Vec<usize> = points.iter().map(|p| p.delay).collect();
    delays.sort_unstable();
    delays.dedup();
    let rows = delays
        .into_iter()
        .map(|d| {
            let sel = || points.iter().filter(move |p| p.delay == d);
            SequenceRow {
                delay: d,
                count: sel().count(),
                sequence: mean(sel().filter_map(|p| p.sequence)),
                static_model: mean(sel().filter_map(|p| p.static_model)),
                location: mean(sel().filter_map(|p| p.location)),
            }
        })
        .collect();
    Ok(SequenceReport { points, rows })
}
