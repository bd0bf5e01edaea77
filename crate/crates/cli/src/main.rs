use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use swm_cli::{
    cmd_crossval, cmd_eval, cmd_flops, cmd_importance, cmd_parcellate, cmd_synth, cmd_train_stage1, cmd_train_stage2,
    CliError, CrossvalArgs, CrossvalStages, EvalArgs, FlopsArgs, ImportanceArgs, ParcellateArgs, RunConfig, SynthArgs,
    TrainArgs,
};

/// Two-stage superficial white matter parcellation.
#[derive(Parser, Debug)]
#[command(name = "swm", version)]
struct Cli {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set seed=3`. Repeatable; later
    /// values win.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Inference worker threads (same as `--set workers=N`).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic atlas datasets.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the SWM/DWM model.
    TrainStage1(TrainCli),
    /// Train the cluster/outlier model.
    TrainStage2(TrainCli),
    /// Label every streamline of a tractogram.
    Parcellate {
        #[arg(long)]
        model1: PathBuf,
        #[arg(long)]
        model2: PathBuf,
        #[arg(long)]
        tractogram: PathBuf,
        /// Label CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-stage predictions to this CSV.
        #[arg(long)]
        extended: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compute parcellation metrics.
    Eval {
        /// Predicted label CSV; repeat once per subject.
        #[arg(long = "labels", required = true)]
        labels: Vec<PathBuf>,
        /// Ground-truth label CSV per subject.
        #[arg(long = "truth")]
        truth: Vec<PathBuf>,
        /// Tractogram per subject (enables CDA and heatmaps).
        #[arg(long = "tractogram")]
        tractograms: Vec<PathBuf>,
        #[arg(long)]
        atlas_tractogram: Option<PathBuf>,
        #[arg(long)]
        atlas_labels: Option<PathBuf>,
        #[arg(long)]
        heatmap_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Point-importance profile of a stage-two model.
    Importance {
        #[arg(long)]
        model2: PathBuf,
        #[arg(long)]
        tractogram: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// FLOPs of one forward pass for the configured architecture.
    Flops {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// K-fold cross-validation on a dataset directory.
    Crossval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = StageArg::Both)]
        stage: StageArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainCli {
    #[arg(long)]
    tractogram: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    validation_tractogram: Option<PathBuf>,
    #[arg(long)]
    validation_labels: Option<PathBuf>,
    #[arg(long)]
    history: Option<PathBuf>,
}

impl From<TrainCli> for TrainArgs {
    fn from(t: TrainCli) -> Self {
        TrainArgs {
            tractogram: t.tractogram,
            labels: t.labels,
            out: t.out,
            validation_tractogram: t.validation_tractogram,
            validation_labels: t.validation_labels,
            history: t.history,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let mut overrides = cli.overrides;
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth { out } => cmd_synth(&SynthArgs { out }, &cfg),
        Command::TrainStage1(t) => cmd_train_stage1(&t.into(), &cfg),
        Command::TrainStage2(t) => cmd_train_stage2(&t.into(), &cfg),
        Command::Parcellate {
            model1,
            model2,
            tractogram,
            out,
            extended,
            summary,
        } => cmd_parcellate(
            &ParcellateArgs {
                model1,
                model2,
                tractogram,
                out,
                extended,
                summary,
            },
            &cfg,
        ),
        Command::Eval {
            labels,
            truth,
            tractograms,
            atlas_tractogram,
            atlas_labels,
            heatmap_dir,
            out,
        } => cmd_eval(
            &EvalArgs {
                labels,
                truth,
                tractograms,
                atlas_tractogram,
                atlas_labels,
                heatmap_dir,
                out,
            },
            &cfg,
        ),
        Command::Importance { model2, tractogram, out } => {
            cmd_importance(&ImportanceArgs { model2, tractogram, out }, &cfg)
        }
        Command::Flops { out } => cmd_flops(&FlopsArgs { out }, &cfg),
        Command::Crossval { data, stage, out } => {
            let stages = match stage {
                StageArg::One => CrossvalStages::One,
                StageArg::Two => CrossvalStages::Two,
                StageArg::Both => CrossvalStages::Both,
            };
            cmd_crossval(&CrossvalArgs { data, stages, out }, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let flops = matches!(cli.command, Command::Flops { .. });
    match run(cli) {
        Ok(value) => {
            if flops {
                println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
