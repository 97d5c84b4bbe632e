//! Command-line front end: loads a TOML experiment description, applies
//! command-line overrides, and runs the selected pipeline verb.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use flowaug::config::{ExperimentConfig, Precision};
use flowaug::experiment::{execute, RunArtifacts, Verb};

#[derive(Parser)]
#[command(
    name = "flowaug",
    version,
    about = "Invertible-flow data augmentation: fit flows, train classifiers under \
             latent- or image-space perturbations, and measure robustness."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline: dataset, flow, classifier phases, evaluation.
    Run(CommonArgs),
    /// Fit the flow (or re-save a checkpointed one) and write `flow.ckpt`.
    TrainFlow(CommonArgs),
    /// Train the classifier; latent phases read the flow from a checkpoint.
    TrainClassifier(CommonArgs),
    /// Evaluate a checkpointed classifier under the configured attacks.
    AttackEval(CommonArgs),
    /// Accuracy, likelihood, and sample-grid numbers from checkpoints.
    Metrics(CommonArgs),
}

impl Command {
    fn split(&self) -> (Verb, &CommonArgs) {
        match self {
            Command::Run(a) => (Verb::Run, a),
            Command::TrainFlow(a) => (Verb::TrainFlow, a),
            Command::TrainClassifier(a) => (Verb::TrainClassifier, a),
            Command::AttackEval(a) => (Verb::AttackEval, a),
            Command::Metrics(a) => (Verb::Metrics, a),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment description (TOML). Relative paths inside it resolve
    /// against its own directory.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Override the config's global seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Override the output directory (the FLOWAUG_OUT environment variable
    /// does the same with lower precedence).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the numeric precision.
    #[arg(long, value_enum, value_name = "P")]
    precision: Option<PrecisionArg>,

    /// Use this flow checkpoint instead of the config's `flow.checkpoint`.
    #[arg(long, value_name = "PATH")]
    load_flow: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (verb, args) = cli.command.split();
    match run(verb, args) {
        Ok(artifacts) => {
            report(&artifacts);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(verb: Verb, args: &CommonArgs) -> flowaug::Result<RunArtifacts> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(precision) = args.precision {
        config.precision = precision.into();
    }
    if let Some(path) = &args.load_flow {
        let flow = config.flow.as_mut().ok_or_else(|| {
            flowaug::Error::Config(
                "--load-flow needs a [flow] table describing the checkpoint's structure".to_string(),
            )
        })?;
        flow.checkpoint = Some(path.clone());
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    } else if let Ok(out) = std::env::var("FLOWAUG_OUT") {
        if !out.is_empty() {
            config.out_dir = PathBuf::from(out);
        }
    }
    execute(&config, verb)
}

fn report(artifacts: &RunArtifacts) {
    if let Some(acc) = artifacts.test_accuracy {
        println!("test accuracy: {acc:.2}%");
    }
    if let Some(nll) = artifacts.flow_test_nll {
        println!("flow test NLL: {nll:.4}");
    }
    println!("report: {}", artifacts.report_path.display());
    println!("{} files in {}", artifacts.files.len(), artifacts.out_dir.display());
}
