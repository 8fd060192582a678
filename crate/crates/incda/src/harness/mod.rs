//! Experiment orchestration: configuration, dataset generation, first
//! guesses, training drivers, evaluation and reporting, plus the `incda`
//! CLI surface on top.

pub mod config;
pub mod data;
pub mod evaluate;
pub mod report;

pub use config::{ExperimentConfig, SystemKind};

use crate::error::Result;

/// Applies the `INCDA_THREADS` cap to the global worker pool. Call once at
/// process start; later calls are ignored.
pub fn init_threads() {
    if let Ok(v) = std::env::var("INCDA_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

/// Stage 1: simulate trajectories, fit the normalizer, draw observations,
/// write the dataset files.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<()> {
    let data = data::generate(config)?;
    data::write_dataset(config, &data)?;
    Ok(())
}

/// Stage 2: attach Gaussian-interpolation first guesses to every sample.
pub fn cmd_first_guess(config: &ExperimentConfig) -> Result<()> {
    let data = data::read_dataset(config)?;
    let fg = data::build_first_guesses(config, &data)?;
    data::write_first_guesses(config, &fg)?;
    Ok(())
}

/// Which networks `cmd_train` fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainSelection {
    All,
    Neural,
    Unconditional,
}

/// Stage 3: train the conditional operator and/or the unconditional
/// ablation, writing checkpoints and loss logs.
pub fn cmd_train(config: &ExperimentConfig, selection: TrainSelection) -> Result<()> {
    let data = data::read_dataset(config)?;
    let fg = data::read_first_guesses(config, &data)?;
    evaluate::train_checkpoints(config, &data, &fg, selection)
}

/// Stage 4: run the requested methods over the test split, writing per-sample
/// errors, reconstruction dumps, descent traces and timings.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    methods: evaluate::MethodSelection,
    update_rule: Option<crate::sampler::UpdateRule>,
) -> Result<()> {
    let data = data::read_dataset(config)?;
    let fg = data::read_first_guesses(config, &data)?;
    let artifacts = evaluate::evaluate(config, &data, &fg, methods, update_rule)?;
    evaluate::write_artifacts(config, &artifacts)
}

/// Stage 5: aggregate evaluation outputs into the report table and
/// figure-ready files.
pub fn cmd_report(config: &ExperimentConfig) -> Result<()> {
    report::write_report(config)
}
