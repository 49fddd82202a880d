use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gap_core::GapError;

mod commands;
mod config;
mod report;

/// Usage or configuration error (exit code 2).
#[derive(Debug)]
pub struct Usage(String);

impl Usage {
    pub fn new(msg: impl Into<String>) -> Usage {
        Usage(msg.into())
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "gap", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("GAP_GIT_DESCRIBE"), ")"))]
#[command(about = "Differentially private node classification by aggregation perturbation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate, train and write checkpoint, cache, manifest and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `dataset.path`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Independent seeds `seed, seed+1, ...`, one run directory each.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Maximum number of concurrent runs.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Accuracy of a checkpoint on each split.
    Eval {
        /// Run directory or `model.gapm` path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the dataset recorded in the run manifest.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Evaluate on a new graph with fresh aggregation noise.
        #[arg(long)]
        inductive: Option<PathBuf>,
    },
    /// Predicted labels and posteriors as JSON lines.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated node ids; all nodes when omitted.
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<u64>,
        #[arg(long)]
        inductive: Option<PathBuf>,
    },
    /// Smallest noise scale meeting an (ε, δ) target.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, value_parser = commands::parse_level)]
        level: gap_core::PrivacyLevel,
        #[arg(long)]
        hops: usize,
        #[arg(long)]
        max_degree: Option<usize>,
        /// DP-Adam sampling rate (node level).
        #[arg(long)]
        sampling_rate: Option<f64>,
        /// Total DP-Adam steps over both trained stages (node level).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Membership inference against a trained checkpoint.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source of the `attack` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Generate a stochastic block model dataset.
    GenSbm {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        signal: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `.gapd` file, or a directory for CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert between the binary and CSV dataset formats.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// 2 usage or config, 3 infeasible budget, 4 I/O, 5 internal invariant.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<GapError>() {
            return match e {
                GapError::CalibrationFailed { .. } => 3,
                GapError::Io { .. }
                | GapError::MalformedRow { .. }
                | GapError::BadMagic { .. }
                | GapError::VersionMismatch { .. }
                | GapError::Truncated { .. } => 4,
                GapError::UnknownNode { .. }
                | GapError::InvalidParameter(_)
                | GapError::InvalidDataset(_)
                | GapError::NonFiniteFeature { .. }
                | GapError::LabelOutOfRange { .. }
                | GapError::DegenerateSplit(_)
                | GapError::BatchNormUnderNodePrivacy
                | GapError::DimensionMismatch(_) => 2,
                _ => 5,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    5
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            dataset,
            out,
            repeats,
            parallel,
        } => commands::train(&config, dataset.as_deref(), &out, repeats, parallel),
        Command::Eval {
            checkpoint,
            dataset,
            inductive,
        } => commands::eval(&checkpoint, dataset.as_deref(), inductive.as_deref()),
        Command::Infer {
            checkpoint,
            nodes,
            inductive,
        } => commands::infer(&checkpoint, &nodes, inductive.as_deref()),
        Command::Calibrate {
            epsilon,
            delta,
            level,
            hops,
            max_degree,
            sampling_rate,
            steps,
        } => commands::calibrate(&commands::CalibrateArgs {
            epsilon,
            delta,
            level,
            hops,
            max_degree,
            sampling_rate,
            steps,
        }),
        Command::Attack {
            checkpoint,
            config,
            dataset,
            repetitions,
        } => commands::attack(
            &checkpoint,
            config.as_deref(),
            dataset.as_deref(),
            repetitions,
        ),
        Command::GenSbm {
            nodes,
            classes,
            p_in,
            p_out,
            dim,
            signal,
            seed,
            out,
        } => commands::gen_sbm(
            &gap_core::graph::SbmParams {
                num_nodes: nodes,
                num_classes: classes,
                p_in,
                p_out,
                feature_dim: dim,
                feature_signal: signal,
                seed,
            },
            &out,
        ),
        Command::Convert { input, output } => commands::convert(&input, &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
