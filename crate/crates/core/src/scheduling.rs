//! Multi-user grouping from angular power spectra.
//!
//! Users whose spectra overlap strongly conflict and must not share a
//! resource. A greedy coloring of the conflict graph yields groups that are
//! served on orthogonal resources; users inside a group share power equally
//! and are beamformed with the DFT codeword at their spectrum peak.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::features::{build_dft_codebook, inner, norm_sqr, Aps, Codebook};
use crate::neural::{mlp_forward_batch, rows_to_matrix, MlpModel, NeuralError};
use crate::scene::{sample_scene, ArrayGeometry, Point, Region, ScatterPlacement, ScattererGroup, SceneConfig};
use crate::seed::{derive_seed, streams};
use crate::tasks::{aps_input_features, mean_ci95, normalized_link_aps, ApsTaskConfig, TaskError};

#[derive(Debug, thiserror::Error)]
pub enum SchedulingError {
    #[error("spectra have different lengths ({0} vs {1})")]
    GridMismatch(usize, usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("beam for user {0} is not unit norm")]
    BeamNorm(usize),
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inferred-spectrum mode needs a trained model")]
    MissingModel,
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Cosine similarity of two nonnegative spectra; 0 if either is all zero.
pub fn aps_overlap(a: &[f64], b: &[f64]) -> Result<f64, SchedulingError> {
    if a.len() != b.len() {
        return Err(SchedulingError::GridMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictGraph {
    adjacency: Vec<Vec<usize>>,
    overlaps: Vec<Vec<f64>>,
    /// Users whose spectrum was all zero (overlap treated as 0).
    pub degenerate: Vec<usize>,
}

impl ConflictGraph {
    /// Graph on `n` vertices from an explicit edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, SchedulingError> {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n || u == v {
                return Err(SchedulingError::Mismatch(format!("invalid edge ({u}, {v})")));
            }
            if !adjacency[u].contains(&v) {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
        adjacency.iter_mut().for_each(|a| a.sort_unstable());
        Ok(Self {
            adjacency,
            overlaps: vec![vec![0.0; n]; n],
            degenerate: Vec::new(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn overlap(&self, u: usize, v: usize) -> f64 {
        self.overlaps[u][v]
    }
}

/// Edge `(u, v)` iff the spectra overlap by more than `tau`.
pub fn build_conflict_graph(spectra: &[Vec<f64>], tau: f64) -> Result<ConflictGraph, SchedulingError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(SchedulingError::Config(format!("threshold {tau} outside [0, 1]")));
    }
    let n = spectra.len();
    let mut adjacency = vec![Vec::new(); n];
    let mut overlaps = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in u + 1..n {
            let o = aps_overlap(&spectra[u], &spectra[v])?;
            overlaps[u][v] = o;
            overlaps[v][u] = o;
            if o > tau {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
    }
    adjacency.iter_mut().for_each(|a| a.sort_unstable());
    let degenerate = (0..n).filter(|&u| spectra[u].iter().all(|&x| x == 0.0)).collect();
    Ok(ConflictGraph {
        adjacency,
        overlaps,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    /// Group index of each user.
    pub group_of: Vec<usize>,
    pub num_groups: usize,
}

impl GroupAssignment {
    pub fn single_group(n: usize) -> Self {
        Self {
            group_of: vec![0; n],
            num_groups: usize::from(n > 0),
        }
    }

    pub fn orthogonal(n: usize) -> Self {
        Self {
            group_of: (0..n).collect(),
            num_groups: n,
        }
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.group_of.len()).filter(|&u| self.group_of[u] == g).collect()
    }

    /// True if no edge joins two users of the same group.
    pub fn is_proper(&self, graph: &ConflictGraph) -> bool {
        (0..graph.num_vertices()).all(|u| graph.neighbors(u).iter().all(|&v| self.group_of[u] != self.group_of[v]))
    }
}

/// Welsh–Powell order (degree descending, then id) with smallest free color.
pub fn greedy_color(graph: &ConflictGraph) -> GroupAssignment {
    let n = graph.num_vertices();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| graph.degree(b).cmp(&graph.degree(a)).then(a.cmp(&b)));
    let mut color = vec![usize::MAX; n];
    let mut num_groups = 0;
    for u in order {
        let mut used: Vec<bool> = vec![false; graph.degree(u) + 1];
        for &v in graph.neighbors(u) {
            if color[v] < used.len() {
                used[color[v]] = true;
            }
        }
        let c = used.iter().position(|&x| !x).expect("degree + 1 slots");
        color[u] = c;
        num_groups = num_groups.max(c + 1);
    }
    GroupAssignment {
        group_of: color,
        num_groups,
    }
}

/// Sum rate in bits/s/Hz with groups time-sharing equally and equal power
/// inside each group. Users below `sinr_min` contribute nothing.
pub fn sum_rate(
    channels: &[Vec<Complex64>],
    groups: &GroupAssignment,
    beams: &[Vec<Complex64>],
    power: f64,
    noise: f64,
    sinr_min: f64,
) -> Result<f64, SchedulingError> {
    let n = channels.len();
    if beams.len() != n || groups.group_of.len() != n {
        return Err(SchedulingError::Mismatch(format!(
            "{n} channels, {} beams, {} assignments",
            beams.len(),
            groups.group_of.len()
        )));
    }
    if !(sinr_min >= 0.0) || !(noise > 0.0) || !(power >= 0.0) {
        return Err(SchedulingError::Config("power, noise and sinr_min must be valid".into()));
    }
    for (u, w) in beams.iter().enumerate() {
        if (norm_sqr(w) - 1.0).abs() > 1e-9 || w.len() != channels[u].len() {
            return Err(SchedulingError::BeamNorm(u));
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in 0..groups.num_groups {
        let members = groups.members(g);
        if members.is_empty() {
            return Err(SchedulingError::EmptyGroup(g));
        }
        let p = power / members.len() as f64;
        for &u in &members {
            let signal = p * inner(&beams[u], &channels[u]).norm_sqr();
            let interference: f64 = members
                .iter()
                .filter(|&&v| v != u)
                .map(|&v| p * inner(&beams[v], &channels[u]).norm_sqr())
                .sum();
            let sinr = signal / (interference + noise);
            if sinr >= sinr_min {
                total += (1.0 + sinr).log2();
            }
        }
    }
    if groups.group_of.iter().any(|&g| g >= groups.num_groups) {
        return Err(SchedulingError::Mismatch("group index out of range".into()));
    }
    Ok(total / groups.num_groups as f64)
}

/// Codeword nearest to the spectral peak.
pub fn peak_beam(aps: &Aps, codebook: &Codebook) -> usize {
    let g = aps.peak().unwrap_or(aps.len() / 2);
    codebook.nearest_to_spatial_frequency(aps.spatial_frequency(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingMode {
    InferredAps,
    TrueAps,
    AllAtOnce,
    Orthogonal,
}

impl GroupingMode {
    pub const ALL: [GroupingMode; 4] = [Self::InferredAps, Self::TrueAps, Self::AllAtOnce, Self::Orthogonal];

    pub fn name(&self) -> &'static str {
        match self {
            Self::InferredAps => "inferred-aps",
            Self::TrueAps => "true-aps",
            Self::AllAtOnce => "all-at-once",
            Self::Orthogonal => "orthogonal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingConfig {
    /// Scene family and spectrum settings; the user count is overridden per run.
    pub aps: ApsTaskConfig,
    pub user_counts: Vec<usize>,
    /// Independent scene draws per user count.
    pub drops: usize,
    pub snr_db: f64,
    pub sinr_min: f64,
    pub tau: f64,
    /// Oversampling of the beam codebook at the target site.
    pub oversampling: usize,
}

impl GroupingConfig {
    /// A 32-element small site serving users gathered in four hotspots
    /// 100 m away at well separated bearings, with weak scatterers close to
    /// each user. Users in one hotspot share a beam; hotspots do not.
    pub fn separable_hotspots() -> Self {
        let mut scene = SceneConfig::default();
        scene.sites[1].array = ArrayGeometry::half_wavelength(32, -FRAC_PI_2);
        let sbs = scene.sites[1].position;
        let centers = [-50.0f64, -20.0, 10.0, 40.0]
            .iter()
            .map(|deg| {
                let a = -FRAC_PI_2 + deg.to_radians();
                sbs.offset(100.0 * a.cos(), 100.0 * a.sin())
            })
            .collect();
        scene.users.region = Region::Hotspots { centers, radius: 1.5 };
        scene.scatterer_groups = vec![ScattererGroup {
            count: 2,
            placement: ScatterPlacement::AroundUsers { radius: 10.0 },
            reflectivity: [0.05, 0.2],
            map_seed: None,
            sites: None,
        }];
        scene.subcarrier_offset = 1e-3;
        Self {
            aps: ApsTaskConfig {
                scene,
                source_site: "mbs".into(),
                target_site: "sbs".into(),
                source_grid: 128,
                target_grid: 1024,
                snapshots: 8,
            },
            user_counts: vec![4, 8, 16, 32],
            drops: 50,
            snr_db: 10.0,
            sinr_min: 0.2,
            tau: 0.3,
            oversampling: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SchedulingError> {
        self.aps.validate()?;
        if self.user_counts.is_empty() || self.user_counts.contains(&0) {
            return Err(SchedulingError::Config("user counts must be positive".into()));
        }
        if self.drops == 0 || self.oversampling == 0 {
            return Err(SchedulingError::Config("drops and oversampling must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(SchedulingError::Config("tau must lie in [0, 1]".into()));
        }
        if !(self.sinr_min >= 0.0) || !self.snr_db.is_finite() {
            return Err(SchedulingError::Config("sinr_min must be non-negative and snr finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingRow {
    pub user_count: usize,
    pub mode: GroupingMode,
    pub tau: f64,
    pub mean_sum_rate: f64,
    pub ci95: f64,
    /// Per-drop sum rates, for paired comparisons.
    pub samples: Vec<f64>,
}

/// Per-user quantities of one scene drop.
struct DropUsers {
    channels: Vec<Vec<Complex64>>,
    true_aps: Vec<Aps>,
    source_aps: Vec<Vec<f64>>,
}

fn draw_users(cfg: &GroupingConfig, users: usize, seed: u64) -> Result<DropUsers, SchedulingError> {
    let mut scene_cfg = cfg.aps.scene.clone();
    scene_cfg.users.count = users;
    let scene = sample_scene(&scene_cfg, seed).map_err(TaskError::from)?;
    let mut out = DropUsers {
        channels: Vec::with_capacity(users),
        true_aps: Vec::with_capacity(users),
        source_aps: Vec::with_capacity(users),
    };
    for u in &scene.users {
        let pos: Point = u.position;
        let (t, h) = normalized_link_aps(&scene, &cfg.aps.target_site, u.id, &pos, cfg.aps.target_grid, cfg.aps.snapshots)?;
        let (s, _) = normalized_link_aps(&scene, &cfg.aps.source_site, u.id, &pos, cfg.aps.source_grid, cfg.aps.snapshots)?;
        out.channels.push(h);
        out.true_aps.push(t);
        out.source_aps.push(s.bins);
    }
    Ok(out)
}

/// Mean sum rate per user count and mode over independent scene drops.
/// Every mode sees the same drops, so rows of one user count are paired.
pub fn evaluate_grouping_experiment(
    cfg: &GroupingConfig,
    modes: &[GroupingMode],
    model: Option<&MlpModel>,
    seed: u64,
) -> Result<Vec<GroupingRow>, SchedulingError> {
    cfg.validate()?;
    if modes.contains(&GroupingMode::InferredAps) {
        let m = model.ok_or(SchedulingError::MissingModel)?;
        if m.d_in() != cfg.aps.source_grid || m.d_out() != cfg.aps.target_grid {
            return Err(SchedulingError::Mismatch(format!(
                "model maps {} -> {}, spectra {} -> {}",
                m.d_in(),
                m.d_out(),
                cfg.aps.source_grid,
                cfg.aps.target_grid
            )));
        }
    }
    let m_target = cfg
        .aps
        .scene
        .sites
        .iter()
        .find(|s| s.id == cfg.aps.target_site)
        .map(|s| s.num_elements())
        .ok_or_else(|| SchedulingError::Config("unknown target site".into()))?;
    let codebook = build_dft_codebook(m_target, cfg.oversampling);
    let power = 10f64.powf(cfg.snr_db / 10.0);
    let noise = 1.0;

    let mut rows = Vec::new();
    for &users in &cfg.user_counts {
        let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.drops); modes.len()];
        for d in 0..cfg.drops {
            let drop_seed = derive_seed(derive_seed(seed, streams::GROUPING, users as u64), streams::GROUPING, d as u64);
            let du = draw_users(cfg, users, drop_seed)?;
            let true_beams: Vec<Vec<Complex64>> = du
                .true_aps
                .iter()
                .map(|a| codebook.codeword(peak_beam(a, &codebook)).to_vec())
                .collect();
            let true_bins: Vec<Vec<f64>> = du.true_aps.iter().map(|a| a.bins.clone()).collect();
            for (mi, mode) in modes.iter().enumerate() {
                let rate = match mode {
                    GroupingMode::TrueAps => {
                        let g = greedy_color(&build_conflict_graph(&true_bins, cfg.tau)?);
                        sum_rate(&du.channels, &g, &true_beams, power, noise, cfg.sinr_min)?
                    }
                    GroupingMode::InferredAps => {
                        let m = model.expect("checked above");
                        let feats: Vec<Vec<f64>> = du.source_aps.iter().map(|s| aps_input_features(s)).collect();
                        let rows_in: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
                        let inferred = mlp_forward_batch(m, &rows_to_matrix(&rows_in))?;
                        let spectra: Vec<Aps> = inferred
                            .rows()
                            .into_iter()
                            .map(|r| Aps {
                                bins: r.to_vec(),
                                grid: du.true_aps[0].grid.clone(),
                            })
                            .collect();
                        let beams: Vec<Vec<Complex64>> = spectra
                            .iter()
                            .map(|a| codebook.codeword(peak_beam(a, &codebook)).to_vec())
                            .collect();
                        let bins: Vec<Vec<f64>> = spectra.into_iter().map(|a| a.bins).collect();
                        let g = greedy_color(&build_conflict_graph(&bins, cfg.tau)?);
                        sum_rate(&du.channels, &g, &beams, power, noise, cfg.sinr_min)?
                    }
                    GroupingMode::AllAtOnce => sum_rate(
                        &du.channels,
                        &GroupAssignment::single_group(users),
                        &true_beams,
                        power,
                        noise,
                        cfg.sinr_min,
                    )?,
                    GroupingMode::Orthogonal => sum_rate(
                        &du.channels,
                        &GroupAssignment::orthogonal(users),
                        &true_beams,
                        power,
                        noise,
                        cfg.sinr_min,
                    )?,
                };
                samples[mi].push(rate);
            }
        }
        for (mi, mode) in modes.iter().enumerate() {
            let (mean, ci) = mean_ci95(&samples[mi]);
            rows.push(GroupingRow {
                user_count: users,
                mode: *mode,
                tau: cfg.tau,
                mean_sum_rate: mean,
                ci95: ci,
                samples: std::mem::take(&mut samples[mi]),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn test_overlap_examples() {
        assert!((aps_overlap(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(aps_overlap(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((aps_overlap(&[1.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(aps_overlap(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(aps_overlap(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn test_graph_thresholds() {
        let spectra = vec![vec![1.0, 0.5], vec![0.5, 1.0], vec![0.2, 0.9]];
        assert_eq!(build_conflict_graph(&spectra, 1.0).unwrap().num_edges(), 0);
        assert_eq!(build_conflict_graph(&spectra, 0.0).unwrap().num_edges(), 3);
        assert!(build_conflict_graph(&spectra, 1.5).is_err());
    }

    #[test]
    fn test_graph_counts_edges_above_threshold() {
        let spectra = vec![vec![1.0, 0.0, 0.0], vec![0.6, 0.8, 0.0], vec![0.0, 0.6, 0.8], vec![0.0, 0.0, 1.0]];
        let g = build_conflict_graph(&spectra, 0.5).unwrap();
        assert!((g.overlap(0, 1) - 0.6).abs() < 1e-15);
        assert!((g.overlap(1, 2) - 0.48).abs() < 1e-15);
        assert!((g.overlap(2, 3) - 0.8).abs() < 1e-15);
        assert_eq!(g.num_edges(), 2);
        assert!(g.has_edge(0, 1) && g.has_edge(3, 2) && !g.has_edge(1, 2));
    }

    #[test]
    fn test_coloring_examples() {
        let empty = ConflictGraph::from_edges(5, &[]).unwrap();
        assert_eq!(greedy_color(&empty).num_groups, 1);
        let k4 = ConflictGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        assert_eq!(greedy_color(&k4).num_groups, 4);
        let path = ConflictGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let g = greedy_color(&path);
        assert_eq!(g.num_groups, 2);
        assert_eq!(g.members(g.group_of[1]), vec![1]);
        assert_eq!(g.group_of[0], g.group_of[2]);
    }

    fn e(k: usize, m: usize) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); m];
        v[k] = Complex64::new(1.0, 0.0);
        v
    }

    #[test]
    fn test_sum_rate_single_user_below_threshold() {
        let h = vec![vec![Complex64::new(0.1, 0.0), Complex64::new(0.0, 0.0)]];
        let r = sum_rate(&h, &GroupAssignment::single_group(1), &[e(0, 2)], 1.0, 1.0, 0.2).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn test_sum_rate_orthogonal_channels_one_group() {
        let h = vec![e(0, 2).iter().map(|v| v * 2.0).collect(), e(1, 2).iter().map(|v| v * 3.0).collect::<Vec<_>>()];
        let beams = vec![e(0, 2), e(1, 2)];
        let (p, s2) = (4.0, 0.5);
        let r = sum_rate(&h, &GroupAssignment::single_group(2), &beams, p, s2, 0.2).unwrap();
        let expect = (1.0 + (p / 2.0) * 4.0 / s2).log2() + (1.0 + (p / 2.0) * 9.0 / s2).log2();
        assert!((r - expect).abs() < 1e-12);
        let o = sum_rate(&h, &GroupAssignment::orthogonal(2), &beams, p, s2, 0.2).unwrap();
        let expect = ((1.0 + p * 4.0 / s2).log2() + (1.0 + p * 9.0 / s2).log2()) / 2.0;
        assert!((o - expect).abs() < 1e-12);
    }

    #[test]
    fn test_sum_rate_rejects_empty_group_and_bad_beam() {
        let h = vec![e(0, 2)];
        let bad = GroupAssignment {
            group_of: vec![1],
            num_groups: 2,
        };
        assert!(matches!(sum_rate(&h, &bad, &[e(0, 2)], 1.0, 1.0, 0.0), Err(SchedulingError::EmptyGroup(0))));
        let w = vec![vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)]];
        assert!(matches!(
            sum_rate(&h, &GroupAssignment::single_group(1), &w, 1.0, 1.0, 0.0),
            Err(SchedulingError::BeamNorm(0))
        ));
    }

    fn small_cfg() -> GroupingConfig {
        let mut c = GroupingConfig::separable_hotspots();
        c.user_counts = vec![1, 6];
        c.drops = 4;
        c.aps.snapshots = 2;
        c
    }

    #[test]
    fn test_single_user_baselines_coincide() {
        let rows = evaluate_grouping_experiment(&small_cfg(), &GroupingMode::ALL[1..], None, 3).unwrap();
        let get = |u, m| rows.iter().find(|r| r.user_count == u && r.mode == m).unwrap().mean_sum_rate;
        assert_eq!(get(1, GroupingMode::AllAtOnce), get(1, GroupingMode::Orthogonal));
        assert_eq!(get(1, GroupingMode::TrueAps), get(1, GroupingMode::Orthogonal));
    }

    #[test]
    fn test_zero_threshold_degenerates_to_orthogonal() {
        let mut c = small_cfg();
        c.tau = 0.0;
        let rows = evaluate_grouping_experiment(&c, &[GroupingMode::TrueAps, GroupingMode::Orthogonal], None, 4).unwrap();
        for pair in rows.chunks(2) {
            assert_eq!(pair[0].samples, pair[1].samples);
        }
    }

    #[test]
    fn test_experiment_is_deterministic_and_needs_model() {
        let c = small_cfg();
        let a = evaluate_grouping_experiment(&c, &[GroupingMode::TrueAps], None, 5).unwrap();
        assert_eq!(a, evaluate_grouping_experiment(&c, &[GroupingMode::TrueAps], None, 5).unwrap());
        assert!(matches!(
            evaluate_grouping_experiment(&c, &[GroupingMode::InferredAps], None, 5),
            Err(SchedulingError::MissingModel)
        ));
    }

    fn random_graph() -> impl Strategy<Value = ConflictGraph> {
        (1usize..25).prop_flat_map(|n| {
            prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
                let mut edges = Vec::new();
                let mut k = 0;
                for u in 0..n {
                    for v in u + 1..n {
                        if bits[k] {
                            edges.push((u, v));
                        }
                        k += 1;
                    }
                }
                ConflictGraph::from_edges(n, &edges).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn prop_greedy_coloring_is_proper_and_bounded(g in random_graph()) {
            let a = greedy_color(&g);
            prop_assert!(a.is_proper(&g));
            let max_deg = (0..g.num_vertices()).map(|u| g.degree(u)).max().unwrap_or(0);
            prop_assert!(a.num_groups <= max_deg + 1);
            for c in 0..a.num_groups {
                prop_assert!(!a.members(c).is_empty());
            }
        }
    }

    fn rate_inputs() -> impl Strategy<Value = (Vec<Vec<Complex64>>, Vec<usize>)> {
        (1usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 4), n),
                prop::collection::vec(0usize..3, n),
            )
                .prop_map(|(h, g)| {
                    let h = h.into_iter().map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).collect();
                    (h, g)
                })
        })
    }

    fn compact(g: &[usize]) -> GroupAssignment {
        let mut ids: Vec<usize> = g.to_vec();
        ids.sort_unstable();
        ids.dedup();
        GroupAssignment {
            group_of: g.iter().map(|x| ids.binary_search(x).unwrap()).collect(),
            num_groups: ids.len(),
        }
    }

    proptest! {
        #[test]
        fn prop_sum_rate_relabel_invariant_and_threshold_monotone((h, g) in rate_inputs(), t in 0.0f64..3.0) {
            let cb = build_dft_codebook(4, 1);
            let beams: Vec<Vec<Complex64>> = (0..h.len()).map(|u| cb.codeword(u % 4).to_vec()).collect();
            let a = compact(&g);
            let base = sum_rate(&h, &a, &beams, 5.0, 1.0, t).unwrap();
            // reverse users and relabel groups
            let n = h.len();
            let hr: Vec<_> = h.iter().rev().cloned().collect();
            let br: Vec<_> = beams.iter().rev().cloned().collect();
            let gr = GroupAssignment {
                group_of: a.group_of.iter().rev().map(|&x| a.num_groups - 1 - x).collect(),
                num_groups: a.num_groups,
            };
            let rel = sum_rate(&hr, &gr, &br, 5.0, 1.0, t).unwrap();
            prop_assert!((base - rel).abs() <= 1e-9 * base.max(1.0));
            prop_assert_eq!(n, hr.len());
            let higher = sum_rate(&h, &a, &beams, 5.0, 1.0, t + 0.5).unwrap();
            prop_assert!(higher <= base);
        }
    }
}
