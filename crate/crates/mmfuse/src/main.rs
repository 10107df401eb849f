use clap::{Args, Parser, Subcommand};
use mmfuse::analysis::Grouping;
use mmfuse::data::{PoiCounts, Split, SynthConfig};
use mmfuse::matrix::Precision;
use mmfuse::metrics::Metrics;
use mmfuse::models::ModelKind;
use mmfuse::runner::{self, Analysis, Regime, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Multimodal fusion classifiers over precomputed text/image features.
#[derive(Parser)]
#[command(name = "mmfuse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset directory.
    Synth {
        /// SynthConfig JSON file; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Load and validate a dataset directory.
    IngestValidate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model (or run the majority baseline) over seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "all")]
        regime: Regime,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Per-category modality contribution from the gate activations.
    AnalyzeGate {
        #[command(flatten)]
        common: AnalyzeArgs,
        /// Group categories by the model's prediction or the gold label.
        #[arg(long, default_value = "predicted")]
        grouping: Grouping,
    },
    /// Dump both cross-attention weight matrices per example (JSON lines).
    DumpAttention {
        #[command(flatten)]
        common: AnalyzeArgs,
    },
    /// Rank misclassification cells with offending example ids.
    Errors {
        #[command(flatten)]
        common: AnalyzeArgs,
    },
    /// Majority baseline over the bundled POI statistics fixture.
    Baseline {
        /// Alternative counts fixture (JSON).
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// RunConfig JSON file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    regime: Option<Regime>,
    /// Single seed (overrides the config's seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), mmfuse::Error> {
    match cli.command {
        Command::Synth { config, out, seed, force } => {
            let mut cfg: SynthConfig = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let data = runner::cmd_synth(&cfg, &out, force)?;
            println!("synth: wrote {} records to {}", data.records.len(), out.display());
            Ok(())
        }
        Command::IngestValidate { data } => {
            let summary = runner::cmd_ingest_validate(&data)?;
            println!("{summary}");
            Ok(())
        }
        Command::Train(args) => {
            let mut config = match &args.config {
                Some(path) => RunConfig::from_path(path)?,
                None => {
                    let (model, data) = match (&args.model, &args.data) {
                        (Some(m), Some(d)) => (*m, d.clone()),
                        _ => {
                            return Err(mmfuse::Error::Config(
                                "without --config, both --model and --data are required".into(),
                            ))
                        }
                    };
                    RunConfig::new(model, data)
                }
            };
            if let Some(model) = args.model {
                config.model = model;
            }
            if let Some(data) = args.data {
                config.dataset = data;
            }
            if let Some(regime) = args.regime {
                config.regime = regime;
            }
            if let Some(seed) = args.seed {
                config.train.seed = Some(seed);
            }
            if let Some(seeds) = args.seeds {
                config.train.seed = None;
                config.train.seeds = seeds;
            }
            if let Some(out) = args.out {
                config.out = Some(out);
            }
            if let Some(precision) = args.precision {
                config.precision = precision.into();
            }
            let artifacts = runner::cmd_train(&config, args.force)?;
            println!(
                "train: {} regime {} -> mean macro F1 {:.4} (+/- {:.4}) over {} seed(s); artifacts in {}",
                config.model,
                config.regime.as_str(),
                artifacts.summary.mean_f1,
                artifacts.summary.std_f1,
                artifacts.per_seed_metrics.len(),
                artifacts.out_dir.display()
            );
            Ok(())
        }
        Command::Evaluate { checkpoint, data, regime, out, force } => {
            let metrics = runner::cmd_evaluate(&checkpoint, &data, regime, &out, force)?;
            println!("evaluate: {}", metrics.summary_line());
            Ok(())
        }
        Command::AnalyzeGate { common, grouping } => {
            let path = runner::cmd_analyze(
                &common.checkpoint,
                &common.data,
                common.split.into(),
                Analysis::Gate { grouping },
                &common.out,
                common.force,
            )?;
            println!("analyze-gate: wrote {}", path.display());
            Ok(())
        }
        Command::DumpAttention { common } => {
            let path = runner::cmd_analyze(
                &common.checkpoint,
                &common.data,
                common.split.into(),
                Analysis::Attention,
                &common.out,
                common.force,
            )?;
            println!("dump-attention: wrote {}", path.display());
            Ok(())
        }
        Command::Errors { common } => {
            let path = runner::cmd_analyze(
                &common.checkpoint,
                &common.data,
                common.split.into(),
                Analysis::Errors,
                &common.out,
                common.force,
            )?;
            println!("errors: wrote {}", path.display());
            Ok(())
        }
        Command::Baseline { counts, out, force } => {
            let counts = match counts {
                Some(path) => PoiCounts::from_path(&path)?,
                None => PoiCounts::bundled()?,
            };
            let metrics = runner::cmd_baseline(&counts, out.as_deref(), force)?;
            println!(
                "baseline: majority F1 {} P {} R {}",
                Metrics::pct(metrics.macro_f1),
                Metrics::pct(metrics.macro_precision),
                Metrics::pct(metrics.macro_recall)
            );
            Ok(())
        }
    }
}
