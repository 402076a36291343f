use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csilab_cli::pipeline::{self, load_datasets, load_models, CliError, RunContext};
use csilab_cli::{load_config, resolve_output_dir, OUT_ENV};

#[derive(Parser)]
#[command(name = "csilab", version, about = "Cross-site CSI inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `output_dir`, then $CSILAB_OUT/<kind>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread budget; stages currently run on one thread
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Scene operations
    Scene {
        #[command(subcommand)]
        action: SceneCmd,
    },
    /// Dataset operations
    Dataset {
        #[command(subcommand)]
        action: DatasetCmd,
    },
    /// Train models on saved datasets (builds them if absent)
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the dataset files
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate saved models on saved datasets
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// MLP checkpoint
        #[arg(long)]
        model: Option<PathBuf>,
        /// Sequence model checkpoint
        #[arg(long)]
        sequence_model: Option<PathBuf>,
    },
    /// Dependence and scaling analyses
    Analyze {
        #[command(subcommand)]
        action: AnalyzeCmd,
    },
    /// Multi-user grouping
    Group {
        #[command(subcommand)]
        action: GroupCmd,
    },
    /// Run the full pipeline of a configuration
    Run {
        /// Experiment configuration (TOML)
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Sample one scene and write its entities as CSV
    Sample(Common),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Build and save the datasets of the configured kind
    Build(Common),
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Mutual information vs canonical correlation
    Dependence(Common),
    /// Remote-AoA error vs array size
    Scaling(Common),
}

#[derive(Subcommand)]
enum GroupCmd {
    /// Sum-rate comparison of grouping strategies
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// APS inference checkpoint; without it only true-spectrum modes run
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn context(c: &Common) -> Result<RunContext, CliError> {
    context_from(&c.config, c.seed, c.out.as_deref(), c.threads)
}

fn context_from(config: &Path, seed: Option<u64>, out: Option<&Path>, threads: usize) -> Result<RunContext, CliError> {
    let cfg = load_config(config, seed)?;
    let env = std::env::var(OUT_ENV).ok();
    let out = resolve_output_dir(out, &cfg, env.as_deref());
    RunContext::new(cfg, out, threads)
}

fn datasets_or_build(ctx: &RunContext, dir: Option<&Path>) -> Result<pipeline::Datasets, CliError> {
    let probe = dir.unwrap_or(&ctx.out);
    let present = [pipeline::STATIC_TRAIN, pipeline::SEQUENCE_DATA, pipeline::APS_DATA]
        .iter()
        .any(|f| probe.join(f).exists());
    if present {
        load_datasets(ctx, dir)
    } else {
        pipeline::build_datasets(ctx)
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Scene { action: SceneCmd::Sample(c) } => {
            let ctx = context(&c)?;
            let p = pipeline::scene_sample(&ctx)?;
            println!("{}", p.display());
        }
        Command::Dataset { action: DatasetCmd::Build(c) } => {
            let ctx = context(&c)?;
            pipeline::build_datasets(&ctx)?;
        }
        Command::Train { common, dataset } => {
            let ctx = context(&common)?;
            let data = datasets_or_build(&ctx, dataset.as_deref())?;
            pipeline::train(&ctx, &data)?;
        }
        Command::Eval {
            common,
            dataset,
            model,
            sequence_model,
        } => {
            let ctx = context(&common)?;
            let data = load_datasets(&ctx, dataset.as_deref())?;
            let models = load_models(&ctx, model.as_deref(), sequence_model.as_deref())?;
            pipeline::evaluate(&ctx, &data, &models)?;
        }
        Command::Analyze { action } => match action {
            AnalyzeCmd::Dependence(c) => pipeline::analyze_dependence(&context(&c)?)?,
            AnalyzeCmd::Scaling(c) => pipeline::analyze_scaling(&context(&c)?)?,
        },
        Command::Group {
            action: GroupCmd::Eval { common, dataset, model },
        } => {
            let ctx = context(&common)?;
            if ctx.cfg.kind != csilab_cli::ExperimentKind::Grouping {
                return Err(csilab_cli::ConfigError {
                    errors: vec!["group eval needs a grouping configuration".into()],
                }
                .into());
            }
            let data = datasets_or_build(&ctx, dataset.as_deref())?;
            let models = match model {
                Some(p) => load_models(&ctx, Some(&p), None)?,
                None => pipeline::Models::default(),
            };
            pipeline::evaluate(&ctx, &data, &models)?;
        }
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let ctx = context_from(&config, seed, out.as_deref(), threads)?;
            pipeline::run(&ctx)?;
            println!("{}", ctx.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
