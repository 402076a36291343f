//! Experiment stages: datasets, training, evaluation and reports.
//!
//! Every stage is a function of the validated configuration and its master
//! seed; sub-seeds come from [`derive_seed`] with a fixed stream per use.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use csilab_core::dependence::remote_aoa_scaling;
use csilab_core::neural::{Checkpoint, GruSeq2Seq, Head, MlpModel, Targets};
use csilab_core::scene::sample_scene;
use csilab_core::scheduling::{evaluate_grouping_experiment, GroupingMode, GroupingRow};
use csilab_core::seed::{derive_seed, streams};
use csilab_core::tasks::{
    aps_input_features, aps_log_target, build_aps_dataset, build_sequence_dataset, build_static_dataset, evaluate_sequence,
    evaluate_static_with, run_dependence, ApsDataset, ErrorCdf, SequenceDataset, SequenceModel, SequencePredictors,
    StaticDataset, StaticPredictor,
};
use ndarray::Array2;

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::dataset_file::{
    aps_from_file, aps_to_file, sequence_from_file, sequence_to_file, static_from_file, static_to_file, DatasetFile,
};
use crate::report::{load_model, num, opt_num, save_model, write_csv, Provenance};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error:\n{0}")]
    Config(#[from] ConfigError),
    #[error("{stage} failed: {message}")]
    Pipeline { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline { .. } => 3,
        }
    }
}

fn at<E: Display>(stage: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Pipeline {
        stage,
        message: e.to_string(),
    }
}

pub const STATIC_TRAIN: &str = "train.dataset";
pub const STATIC_TEST: &str = "test.dataset";
pub const SEQUENCE_DATA: &str = "sequence.dataset";
pub const APS_DATA: &str = "aps.dataset";
pub const MLP_MODEL: &str = "model.ckpt";
pub const GRU_MODEL: &str = "gru.ckpt";
pub const LOG_FILE: &str = "run.log";

/// Validated configuration, output directory and run log.
pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub prov: Provenance,
    pub threads: usize,
}

impl RunContext {
    pub fn new(cfg: ExperimentConfig, out: PathBuf, threads: usize) -> Result<Self, CliError> {
        cfg.validate()?;
        if threads == 0 {
            return Err(ConfigError {
                errors: vec!["--threads must be at least 1".into()],
            }
            .into());
        }
        std::fs::create_dir_all(&out).map_err(at("output directory"))?;
        let prov = Provenance {
            config_hash: cfg.hash_hex(),
            seed: cfg.master_seed(),
        };
        let ctx = Self { cfg, out, prov, threads };
        ctx.log(&format!(
            "kind {} seed {} config_hash {} threads {}",
            ctx.cfg.kind.name(),
            ctx.prov.seed,
            ctx.prov.config_hash,
            ctx.threads
        ));
        Ok(ctx)
    }

    fn seed(&self, stream: u64, idx: u64) -> u64 {
        derive_seed(self.prov.seed, stream, idx)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Appends a timestamped line to the run log; timestamps live only here.
    pub fn log(&self, msg: &str) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(self.path(LOG_FILE)) {
            let _ = writeln!(f, "{t} {msg}");
        }
    }

    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        write_csv(&self.path(name), &self.prov, header, rows).map_err(at("report"))?;
        self.log(&format!("wrote {name}"));
        Ok(())
    }

    fn write_dataset(&self, name: &str, file: &DatasetFile) -> Result<(), CliError> {
        let f = std::fs::File::create(self.path(name)).map_err(at("dataset"))?;
        let mut w = std::io::BufWriter::new(f);
        file.write(&mut w).map_err(at("dataset"))?;
        w.flush().map_err(at("dataset"))?;
        self.log(&format!("wrote {name} ({} records)", file.records.len()));
        Ok(())
    }

    fn wrong_kind(&self, what: &str) -> CliError {
        ConfigError {
            errors: vec![format!("{what} is not available for kind `{}`", self.cfg.kind.name())],
        }
        .into()
    }
}

fn read_dataset(path: &Path) -> Result<DatasetFile, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Pipeline {
        stage: "dataset",
        message: format!("{}: {e}", path.display()),
    })?;
    DatasetFile::read(std::io::BufReader::new(f)).map_err(at("dataset"))
}

pub enum Datasets {
    Static { train: StaticDataset, test: StaticDataset },
    Sequence { train: SequenceDataset, test: SequenceDataset },
    Aps(ApsDataset),
}

#[derive(Default)]
pub struct Models {
    pub mlp: Option<MlpModel>,
    pub gru: Option<GruSeq2Seq>,
}

/// Samples one scene and writes its sites, scatterers and users.
pub fn scene_sample(ctx: &RunContext) -> Result<PathBuf, CliError> {
    let scene = sample_scene(&ctx.cfg.scene_config(), ctx.prov.seed).map_err(at("scene"))?;
    let mut rows = Vec::new();
    for s in &scene.sites {
        rows.push(vec!["site".into(), s.id.clone(), num(s.position.x), num(s.position.y), s.num_elements().to_string()]);
    }
    for (i, s) in scene.scatterers.iter().enumerate() {
        rows.push(vec!["scatterer".into(), i.to_string(), num(s.position.x), num(s.position.y), num(s.reflectivity.norm())]);
    }
    for u in &scene.users {
        rows.push(vec!["user".into(), u.id.to_string(), num(u.position.x), num(u.position.y), num(u.velocity.x.hypot(u.velocity.y))]);
    }
    ctx.csv("scene.csv", &["entity", "id", "x", "y", "value"], &rows)?;
    Ok(ctx.path("scene.csv"))
}

/// Builds and saves the datasets of the configured kind.
pub fn build_datasets(ctx: &RunContext) -> Result<Datasets, CliError> {
    let c = &ctx.cfg;
    let e = &c.evaluation;
    let meta = ctx.prov.meta();
    match c.kind {
        ExperimentKind::Static => {
            let all = build_static_dataset(&c.link_config(), e.train_points + e.test_points, ctx.seed(streams::DATASET, 0))
                .map_err(at("dataset"))?;
            let (train, test) = all.split(e.train_points).map_err(at("dataset"))?;
            ctx.write_dataset(STATIC_TRAIN, &static_to_file(&train, &meta))?;
            ctx.write_dataset(STATIC_TEST, &static_to_file(&test, &meta))?;
            Ok(Datasets::Static { train, test })
        }
        ExperimentKind::Sequence => {
            let all = build_sequence_dataset(&c.sequence_config(), e.trajectories, ctx.seed(streams::DATASET, 1))
                .map_err(at("dataset"))?;
            ctx.write_dataset(SEQUENCE_DATA, &sequence_to_file(&all, &meta))?;
            let (train, test) = all.split_trajectories(e.train_trajectories).map_err(at("dataset"))?;
            Ok(Datasets::Sequence { train, test })
        }
        ExperimentKind::Grouping => {
            let d = build_aps_dataset(&c.grouping_config().aps, e.aps_train_points, ctx.seed(streams::DATASET, 2))
                .map_err(at("dataset"))?;
            ctx.write_dataset(APS_DATA, &aps_to_file(&d, &meta))?;
            Ok(Datasets::Aps(d))
        }
        _ => Err(ctx.wrong_kind("dataset building")),
    }
}

/// Loads previously built datasets from `dir` (default: the output directory).
pub fn load_datasets(ctx: &RunContext, dir: Option<&Path>) -> Result<Datasets, CliError> {
    let dir = dir.unwrap_or(&ctx.out);
    match ctx.cfg.kind {
        ExperimentKind::Static => Ok(Datasets::Static {
            train: static_from_file(&read_dataset(&dir.join(STATIC_TRAIN))?).map_err(at("dataset"))?,
            test: static_from_file(&read_dataset(&dir.join(STATIC_TEST))?).map_err(at("dataset"))?,
        }),
        ExperimentKind::Sequence => {
            let all = sequence_from_file(&read_dataset(&dir.join(SEQUENCE_DATA))?).map_err(at("dataset"))?;
            let (train, test) = all.split_trajectories(ctx.cfg.evaluation.train_trajectories).map_err(at("dataset"))?;
            Ok(Datasets::Sequence { train, test })
        }
        ExperimentKind::Grouping => Ok(Datasets::Aps(
            aps_from_file(&read_dataset(&dir.join(APS_DATA))?).map_err(at("dataset"))?,
        )),
        _ => Err(ctx.wrong_kind("dataset loading")),
    }
}

fn mlp_dims(d_in: usize, hidden: &[usize], d_out: usize) -> Vec<usize> {
    let mut dims = vec![d_in];
    dims.extend_from_slice(hidden);
    dims.push(d_out);
    dims
}

/// Network input and log-spectrum targets for APS inference.
pub fn aps_training_data(d: &ApsDataset) -> (Array2<f64>, Targets) {
    let mut x = Array2::zeros((d.len(), d.source_grid));
    let mut y = Array2::zeros((d.len(), d.target_grid));
    for (i, r) in d.records.iter().enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&aps_input_features(&r.source)));
        y.row_mut(i).assign(&ndarray::ArrayView1::from(&aps_log_target(&r.target)));
    }
    (x, Targets::LogValues(y))
}

/// Trains the kind's models and saves checkpoints. The oracle flag skips training.
pub fn train(ctx: &RunContext, data: &Datasets) -> Result<Models, CliError> {
    let c = &ctx.cfg;
    let mut models = Models::default();
    if c.model.oracle {
        ctx.log("oracle model requested; training skipped");
        return Ok(models);
    }
    let tc = |i| c.train_config(ctx.seed(streams::SHUFFLE, i));
    match data {
        Datasets::Static { train, .. } => {
            let mut m = MlpModel::new(&mlp_dims(train.feature_dim, &c.model.hidden, train.num_classes), Head::Softmax, ctx.seed(streams::INIT, 0))
                .map_err(at("training"))?;
            let r = m.train(&train.feature_matrix(), &train.labels(), None, &tc(0)).map_err(at("training"))?;
            ctx.log(&format!("static mlp trained, final loss {:?}", r.loss_trace.last()));
            save_model(&ctx.path(MLP_MODEL), &Checkpoint::Mlp(m.clone()), &ctx.prov).map_err(at("checkpoint"))?;
            models.mlp = Some(m);
        }
        Datasets::Sequence { train, .. } => {
            let mut g = GruSeq2Seq::new(train.feature_dim, c.model.gru_hidden, train.num_classes, Head::Softmax, ctx.seed(streams::INIT, 1))
                .map_err(at("training"))?;
            let r = g.train(&train.to_batch(), None, &tc(1)).map_err(at("training"))?;
            ctx.log(&format!("gru trained, final loss {:?}", r.loss_trace.last()));
            save_model(&ctx.path(GRU_MODEL), &Checkpoint::Gru(g.clone()), &ctx.prov).map_err(at("checkpoint"))?;
            let (x, y) = train.static_pairs();
            let mut m = MlpModel::new(&mlp_dims(train.feature_dim, &c.model.hidden, train.num_classes), Head::Softmax, ctx.seed(streams::INIT, 2))
                .map_err(at("training"))?;
            m.train(&x, &y, None, &tc(2)).map_err(at("training"))?;
            save_model(&ctx.path(MLP_MODEL), &Checkpoint::Mlp(m.clone()), &ctx.prov).map_err(at("checkpoint"))?;
            models.gru = Some(g);
            models.mlp = Some(m);
        }
        Datasets::Aps(d) => {
            let (x, y) = aps_training_data(d);
            let mut m = MlpModel::new(&mlp_dims(d.source_grid, &c.model.hidden, d.target_grid), Head::LogSpectrum, ctx.seed(streams::INIT, 3))
                .map_err(at("training"))?;
            let r = m.train(&x, &y, None, &tc(3)).map_err(at("training"))?;
            ctx.log(&format!("aps mlp trained, final loss {:?}", r.loss_trace.last()));
            save_model(&ctx.path(MLP_MODEL), &Checkpoint::Mlp(m.clone()), &ctx.prov).map_err(at("checkpoint"))?;
            models.mlp = Some(m);
        }
    }
    Ok(models)
}

/// Loads checkpoints written by [`train`]; `mlp`/`gru` override the default paths.
pub fn load_models(ctx: &RunContext, mlp: Option<&Path>, gru: Option<&Path>) -> Result<Models, CliError> {
    let mut models = Models::default();
    if ctx.cfg.model.oracle {
        return Ok(models);
    }
    let load = |p: PathBuf| load_model(&p).map_err(|e| CliError::Pipeline {
        stage: "checkpoint",
        message: format!("{}: {e}", p.display()),
    });
    let mlp_path = mlp.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(MLP_MODEL));
    match load(mlp_path)? {
        Checkpoint::Mlp(m) => models.mlp = Some(m),
        Checkpoint::Gru(_) => return Err(at("checkpoint")("expected an MLP checkpoint")),
    }
    if ctx.cfg.kind == ExperimentKind::Sequence {
        let gru_path = gru.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(GRU_MODEL));
        match load(gru_path)? {
            Checkpoint::Gru(g) => models.gru = Some(g),
            Checkpoint::Mlp(_) => return Err(at("checkpoint")("expected a GRU checkpoint")),
        }
    }
    Ok(models)
}

/// Fraction of errors at or below `x`.
fn cdf_at(c: &ErrorCdf, x: f64) -> f64 {
    c.values().partition_point(|&v| v <= x) as f64 / c.len() as f64
}

/// Writes the evaluation reports of the configured kind.
pub fn evaluate(ctx: &RunContext, data: &Datasets, models: &Models) -> Result<(), CliError> {
    let c = &ctx.cfg;
    match data {
        Datasets::Static { test, .. } => {
            let link = c.link_config();
            let cb = link.target_codebook().map_err(at("evaluation"))?;
            let predictor = match (&models.mlp, c.model.oracle) {
                (_, true) => StaticPredictor::Oracle,
                (Some(m), false) => StaticPredictor::Model(m),
                (None, false) => return Err(at("evaluation")("no trained model")),
            };
            let rep = evaluate_static_with(test, &cb, predictor).map_err(at("evaluation"))?;
            let rnd = evaluate_static_with(test, &cb, StaticPredictor::Random { seed: ctx.seed(streams::BASELINE, 0) })
                .map_err(at("evaluation"))?;
            let rows: Vec<Vec<String>> = (0..=100)
                .map(|i| {
                    let x = i as f64 / 100.0;
                    vec![num(x), num(cdf_at(&rep.top1, x)), num(cdf_at(&rep.top2, x)), num(cdf_at(&rnd.top1, x))]
                })
                .collect();
            ctx.csv("static_cdf.csv", &["error", "model_top1", "model_top2", "random"], &rows)?;
            let mut summary = vec![
                vec!["test_points".into(), test.len().to_string()],
                vec!["top1_accuracy".into(), num(rep.top1_accuracy)],
                vec!["top2_accuracy".into(), num(rep.top2_accuracy)],
                vec!["top1_fraction_below_0.1".into(), num(rep.top1.fraction_below(0.1))],
                vec!["top2_fraction_below_0.1".into(), num(rep.top2.fraction_below(0.1))],
                vec!["random_fraction_below_0.1".into(), num(rnd.top1.fraction_below(0.1))],
            ];
            for (i, (a, b)) in rep.top1.deciles().iter().zip(rnd.top1.deciles()).enumerate() {
                summary.push(vec![format!("top1_decile_{}", i + 1), num(*a)]);
                summary.push(vec![format!("random_decile_{}", i + 1), num(b)]);
            }
            ctx.csv("static_summary.csv", &["metric", "value"], &summary)
        }
        Datasets::Sequence { test, .. } => {
            let cfg = c.sequence_config();
            let predictors = SequencePredictors {
                sequence: if c.model.oracle {
                    Some(SequenceModel::Oracle)
                } else {
                    models.gru.as_ref().map(SequenceModel::Gru)
                },
                static_model: models.mlp.as_ref(),
                location_baseline: true,
                noise_seed: ctx.seed(streams::NOISE, 0),
            };
            let rep = evaluate_sequence(&cfg, test, &predictors).map_err(at("evaluation"))?;
            let mut rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| vec![r.delay.to_string(), r.count.to_string(), opt_num(r.sequence), opt_num(r.static_model), opt_num(r.location)])
                .collect();
            let o = rep.overall();
            rows.push(vec!["all".into(), o.count.to_string(), opt_num(o.sequence), opt_num(o.static_model), opt_num(o.location)]);
            ctx.csv("sequence.csv", &["delay", "count", "sequence_model", "static_model", "location"], &rows)?;
            let paired: Vec<Vec<String>> = rep
                .rows
                .iter()
                .filter_map(|r| rep.paired_sequence_vs_static(r.delay).map(|(m, h)| vec![r.delay.to_string(), num(m), num(h)]))
                .collect();
            ctx.csv("sequence_paired.csv", &["delay", "mean_difference", "ci95"], &paired)
        }
        Datasets::Aps(_) => {
            let mut modes = GroupingMode::ALL.to_vec();
            if models.mlp.is_none() {
                modes.retain(|m| *m != GroupingMode::InferredAps);
            }
            let mut all: Vec<GroupingRow> = Vec::new();
            for &tau in &c.evaluation.taus {
                let mut g = c.grouping_config();
                g.tau = tau;
                all.extend(
                    evaluate_grouping_experiment(&g, &modes, models.mlp.as_ref(), ctx.seed(streams::GROUPING, 0))
                        .map_err(at("evaluation"))?,
                );
            }
            let rows: Vec<Vec<String>> = all
                .iter()
                .map(|r| vec![r.user_count.to_string(), r.mode.name().into(), num(r.tau), num(r.mean_sum_rate), num(r.ci95)])
                .collect();
            ctx.csv("grouping.csv", &["user_count", "mode", "tau", "mean_sum_rate", "ci95"], &rows)
        }
    }
}

pub fn analyze_dependence(ctx: &RunContext) -> Result<(), CliError> {
    if ctx.cfg.kind != ExperimentKind::Dependence {
        return Err(ctx.wrong_kind("dependence analysis"));
    }
    let rows = run_dependence(&ctx.cfg.dependence_config(), &ctx.cfg.evaluation.sample_counts, ctx.seed(streams::DATASET, 3))
        .map_err(at("dependence"))?;
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.samples.to_string(), num(r.entropy_b_bits), num(r.mi_bits), num(r.avg_cca)])
        .collect();
    ctx.csv("dependence.csv", &["samples", "H_sbs_bits", "MI_bits", "avg_cca"], &rows)
}

pub fn analyze_scaling(ctx: &RunContext) -> Result<(), CliError> {
    if ctx.cfg.kind != ExperimentKind::Scaling {
        return Err(ctx.wrong_kind("scaling analysis"));
    }
    let e = &ctx.cfg.evaluation;
    let sc = ctx.cfg.scaling_config();
    let mut rows = Vec::new();
    for (i, &mode) in e.scaling_modes.iter().enumerate() {
        let r = remote_aoa_scaling(&sc, mode, &e.element_counts, e.snr_db, e.trials, ctx.seed(streams::SCALING, i as u64))
            .map_err(at("scaling"))?;
        let name = match mode {
            csilab_core::dependence::LocalizationMode::TwoSites => "two_sites",
            csilab_core::dependence::LocalizationMode::OneSite => "one_site",
        };
        for (k, &m) in r.m_values.iter().enumerate() {
            rows.push(vec![
                name.to_string(),
                m.to_string(),
                num(r.mse_values[k]),
                r.discarded[k].to_string(),
                r.trials.to_string(),
                num(r.fitted_slope),
            ]);
        }
    }
    ctx.csv("scaling.csv", &["mode", "elements", "mse", "discarded", "trials", "fitted_slope"], &rows)
}

/// Full pipeline of the configured kind.
pub fn run(ctx: &RunContext) -> Result<(), CliError> {
    ctx.log("run started");
    match ctx.cfg.kind {
        ExperimentKind::Dependence => analyze_dependence(ctx)?,
        ExperimentKind::Scaling => analyze_scaling(ctx)?,
        _ => {
            let data = build_datasets(ctx)?;
            let models = train(ctx, &data)?;
            evaluate(ctx, &data, &models)?;
        }
    }
    ctx.log("run finished");
    Ok(())
}
