//! `incda` — twin-experiment data assimilation pipeline.
//!
//! Subcommands run the pipeline stages in order: `generate`, `first-guess`,
//! `train`, `evaluate`, `report`. Every stage reads and writes the run
//! directory named by the config (overridable with `--out`). Exit codes:
//! 0 success, 2 invalid configuration, 3 numerical failure, 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use incda::harness::{self, evaluate::MethodSelection, ExperimentConfig, TrainSelection};
use incda::sampler::UpdateRule;

#[derive(Parser)]
#[command(name = "incda", version, about = "incremental data assimilation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> incda::Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMethodArg {
    All,
    Neural,
    Uncond,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    All,
    #[value(name = "4dvar")]
    FourDVar,
    Neural,
    Uncond,
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateRuleArg {
    #[value(name = "cold-diffusion")]
    ColdDiffusion,
    #[value(name = "paper-literal")]
    PaperLiteral,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories, fit the normalizer, draw observations.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Attach Gaussian-interpolation first guesses to every sample.
    FirstGuess {
        #[command(flatten)]
        common: Common,
    },
    /// Train the neural operator and/or the unconditional ablation.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        method: TrainMethodArg,
    },
    /// Run the reconstruction methods over the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        #[arg(long, value_enum)]
        update_rule: Option<UpdateRuleArg>,
    },
    /// Aggregate evaluation outputs into the report table.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> incda::Result<()> {
    match cli.command {
        Command::Generate { common } => harness::cmd_generate(&common.load()?),
        Command::FirstGuess { common } => harness::cmd_first_guess(&common.load()?),
        Command::Train { common, method } => {
            let selection = match method {
                TrainMethodArg::All => TrainSelection::All,
                TrainMethodArg::Neural => TrainSelection::Neural,
                TrainMethodArg::Uncond => TrainSelection::Unconditional,
            };
            harness::cmd_train(&common.load()?, selection)
        }
        Command::Evaluate {
            common,
            method,
            update_rule,
        } => {
            let selection = match method {
                MethodArg::All => MethodSelection::All,
                MethodArg::FourDVar => MethodSelection::FourDVar,
                MethodArg::Neural => MethodSelection::Neural,
                MethodArg::Uncond => MethodSelection::Uncond,
                MethodArg::Hybrid => MethodSelection::Hybrid,
            };
            let rule = update_rule.map(|r| match r {
                UpdateRuleArg::ColdDiffusion => UpdateRule::ColdDiffusion,
                UpdateRuleArg::PaperLiteral => UpdateRule::PaperLiteral,
            });
            harness::cmd_evaluate(&common.load()?, selection, rule)
        }
        Command::Report { common } => harness::cmd_report(&common.load()?),
    }
}

fn main() -> ExitCode {
    harness::init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
