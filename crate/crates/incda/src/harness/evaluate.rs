//! Test-split evaluation of every reconstruction method, plus the training
//! drivers that produce the checkpoints it consumes.
//!
//! Errors are reported as normalized RMSE `‖x̂ − x‖/√d` against the
//! normalized truth. Wall times follow a fixed protocol: the full test-set
//! pass is repeated `timing_repeats` times sequentially on one thread and
//! the median is kept; relative times are normalized so the fastest method
//! is 1.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::*;
use super::data::{
    background_from_train, denormalize_observations, pendulum_background, Dataset,
    FirstGuessBuilder, FirstGuesses, SystemModel,
};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::fourdvar::{run_weak_4dvar, GaussNewtonOptions, GaussNewtonTrace, WeakConstraintCost};
use crate::neural_prior::NeuralPrior;
use crate::observation::{sample_process, ObservationProcess};
use crate::sampler::{
    hybrid_refine, incremental_assimilate, unconditional_restore, MethodTag, ReconstructionResult,
    UpdateRule,
};
use crate::training::{train, train_unconditional, Sample, TrainConfig};

/// Normalized root-mean-square error over all `d` components.
pub fn normalized_rmse(estimate: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimate.len(), truth.len());
    let sum: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (sum / truth.len() as f64).sqrt()
}

/// Which methods an evaluation run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSelection {
    All,
    FourDVar,
    Neural,
    Uncond,
    Hybrid,
}

impl MethodSelection {
    pub fn includes(&self, tag: MethodTag) -> bool {
        match self {
            MethodSelection::All => true,
            MethodSelection::FourDVar => tag == MethodTag::FourDVar,
            MethodSelection::Neural => tag == MethodTag::Neural,
            MethodSelection::Uncond => tag == MethodTag::Unconditional,
            MethodSelection::Hybrid => tag == MethodTag::Hybrid,
        }
    }

    fn needs_neural(&self) -> bool {
        matches!(
            self,
            MethodSelection::All | MethodSelection::Neural | MethodSelection::Hybrid
        )
    }

    fn needs_uncond(&self) -> bool {
        matches!(self, MethodSelection::All | MethodSelection::Uncond)
    }
}

// ---------------------------------------------------------------------------
// Training drivers
// ---------------------------------------------------------------------------

/// Assembles normalized training samples from a dataset and its first
/// guesses.
pub fn build_samples(data: &Dataset, fg: &[Trajectory], train_split: bool) -> Vec<Sample> {
    let (trajs, obs) = if train_split {
        (&data.train, &data.train_obs)
    } else {
        (&data.test, &data.test_obs)
    };
    trajs
        .iter()
        .zip(obs)
        .zip(fg)
        .map(|((truth, (proc, y)), z0)| Sample {
            truth: data.normalizer.normalize(truth),
            proc: proc.clone(),
            y: y.clone(),
            first_guess: z0.clone(),
        })
        .collect()
}

fn train_config(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        prior: config.network_spec(),
        batch_size: config.training.batch_size,
        max_epochs: config.training.max_epochs,
        learning_rate: config.training.learning_rate,
        val_fraction: config.training.val_fraction,
        patience: config.training.patience,
        objective: config.training.objective,
        val_metric: config.training.val_metric,
    }
}

pub fn checkpoint_paths(config: &ExperimentConfig, unconditional: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let stem = if unconditional {
        "checkpoint_uncond"
    } else {
        "checkpoint_neural"
    };
    (
        config.out_dir.join(format!("{stem}.json")),
        config.out_dir.join(format!("{stem}.bin")),
    )
}

fn write_training_log(path: &Path, log: &[crate::training::LogRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for record in log {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Trains the selected checkpoints and writes them with their loss logs.
pub fn train_checkpoints(
    config: &ExperimentConfig,
    data: &Dataset,
    fg: &FirstGuesses,
    selection: super::TrainSelection,
) -> Result<()> {
    let samples = build_samples(data, &fg.train, true);
    let schedule = config.schedule.build();
    let tc = train_config(config);
    let seed = config.seed.wrapping_add(SEED_TRAINING);

    if matches!(
        selection,
        super::TrainSelection::All | super::TrainSelection::Neural
    ) {
        let (prior, log) = train(&samples, &schedule, &data.normalizer, &tc, seed)?;
        let (manifest, blob) = checkpoint_paths(config, false);
        prior.save(&manifest, &blob)?;
        write_training_log(&config.out_dir.join("train_log_neural.csv"), &log)?;
    }
    if matches!(
        selection,
        super::TrainSelection::All | super::TrainSelection::Unconditional
    ) {
        let (prior, log) =
            train_unconditional(&samples, &schedule, &data.normalizer, &tc, seed.wrapping_add(1))?;
        let (manifest, blob) = checkpoint_paths(config, true);
        prior.save(&manifest, &blob)?;
        write_training_log(&config.out_dir.join("train_log_uncond.csv"), &log)?;
    }
    Ok(())
}

fn load_checkpoint(config: &ExperimentConfig, unconditional: bool) -> Result<NeuralPrior> {
    let (manifest, blob) = checkpoint_paths(config, unconditional);
    if !manifest.exists() {
        return Err(Error::InvalidConfig(format!(
            "missing checkpoint {}; run `incda train` first",
            manifest.display()
        )));
    }
    NeuralPrior::load(&manifest, &blob)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRow {
    pub sample_id: usize,
    pub method: String,
    pub rmse: f64,
    /// Accepted Gauss–Newton steps, for the 4D-Var-backed methods.
    pub iterations: Option<usize>,
    /// First step with full objective below the hybrid threshold.
    pub iterations_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconRow {
    pub sample_id: usize,
    pub method: String,
    pub iter: usize,
    pub t: usize,
    pub component: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub sample_id: usize,
    pub method: String,
    pub iter: usize,
    pub objective: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub repeat: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct EvaluationArtifacts {
    pub errors: Vec<ErrorRow>,
    pub reconstructions: Vec<ReconRow>,
    pub traces: Vec<TraceRow>,
    pub timings: Vec<TimingRow>,
    /// Accepted steps that failed to decrease the objective, over every
    /// Gauss–Newton run in the evaluation. Zero by construction of the line
    /// search; audited anyway.
    pub monotonicity_violations: usize,
}

/// Everything shared by per-sample method runs.
struct EvalContext<'a> {
    config: &'a ExperimentConfig,
    data: &'a Dataset,
    fg: &'a FirstGuesses,
    schedule: crate::training::TemperatureSchedule,
    rule: UpdateRule,
    model: SystemModel,
    background_mean: Vec<f64>,
    background_cov: nalgebra::DMatrix<f64>,
    neural: Option<NeuralPrior>,
    uncond: Option<NeuralPrior>,
}

impl<'a> EvalContext<'a> {
    fn cost(&self) -> WeakConstraintCost<'_> {
        WeakConstraintCost::new(
            self.model.as_dyn(),
            self.config.data.dt,
            self.config.fourdvar_process_noise_var(),
            self.background_mean.clone(),
            self.background_cov.clone(),
        )
    }

    fn truth_norm(&self, j: usize) -> Trajectory {
        self.data.normalizer.normalize(&self.data.test[j])
    }

    fn physical_obs(&self, j: usize) -> Result<(ObservationProcess, Vec<f64>)> {
        let (proc, y) = &self.data.test_obs[j];
        denormalize_observations(proc, y, &self.data.normalizer, self.config.phase_dim())
    }

    fn run_neural(&self, j: usize) -> Result<ReconstructionResult> {
        let (proc, y) = &self.data.test_obs[j];
        incremental_assimilate(
            self.neural.as_ref().expect("neural checkpoint loaded"),
            y,
            proc,
            &self.fg.test[j],
            &self.schedule,
            self.rule,
        )
    }

    fn run_uncond(&self, j: usize) -> Result<ReconstructionResult> {
        unconditional_restore(
            self.uncond.as_ref().expect("uncond checkpoint loaded"),
            &self.fg.test[j],
            &self.schedule,
            self.rule,
        )
    }

    fn run_fourdvar(&self, j: usize, max_iters: usize) -> Result<GaussNewtonTrace> {
        let (proc, y) = self.physical_obs(j)?;
        let z0_phys = self.data.normalizer.denormalize(&self.fg.test[j]);
        let cost = self.cost();
        let options = GaussNewtonOptions {
            max_iters,
            tol_objective: None,
            lambda_init: self.config.fourdvar.lambda_init,
            alpha_max: self.config.fourdvar.alpha_max,
        };
        run_weak_4dvar(&y, &proc, &z0_phys, &cost, &options)
    }

    fn run_hybrid(&self, j: usize, neural_estimate: &Trajectory) -> Result<ReconstructionResult> {
        let (proc, y) = self.physical_obs(j)?;
        let init = self.data.normalizer.denormalize(neural_estimate);
        let cost = self.cost();
        let options = GaussNewtonOptions {
            max_iters: self.config.fourdvar.max_iters,
            tol_objective: None,
            lambda_init: self.config.fourdvar.lambda_init,
            alpha_max: self.config.fourdvar.alpha_max,
        };
        hybrid_refine(
            &init,
            &y,
            &proc,
            &cost,
            self.config.fourdvar.hybrid_threshold,
            &options,
        )
    }
}

fn dump_trajectory(rows: &mut Vec<ReconRow>, sample_id: usize, method: &str, iter: usize, traj: &Trajectory) {
    for t in 0..traj.steps() {
        for (component, value) in traj.state(t).iter().enumerate() {
            rows.push(ReconRow {
                sample_id,
                method: method.to_string(),
                iter,
                t,
                component,
                value: *value,
            });
        }
    }
}

fn trace_rows(sample_id: usize, method: &str, trace: &GaussNewtonTrace) -> Vec<TraceRow> {
    trace
        .objectives
        .iter()
        .enumerate()
        .map(|(iter, &objective)| TraceRow {
            sample_id,
            method: method.to_string(),
            iter,
            objective,
            alpha: iter.checked_sub(1).and_then(|k| trace.alphas.get(k).copied()),
            lambda: iter.checked_sub(1).and_then(|k| trace.lambdas.get(k).copied()),
        })
        .collect()
}

struct SampleOutcome {
    errors: Vec<ErrorRow>,
    recon: Vec<ReconRow>,
    traces: Vec<TraceRow>,
    monotone_violations: usize,
}

fn evaluate_sample(
    ctx: &EvalContext,
    j: usize,
    methods: MethodSelection,
    dump: bool,
) -> Result<SampleOutcome> {
    let truth = ctx.truth_norm(j);
    let threshold_raw = ctx.config.fourdvar.hybrid_threshold * truth.dim() as f64;
    let mut out = SampleOutcome {
        errors: Vec::new(),
        recon: Vec::new(),
        traces: Vec::new(),
        monotone_violations: 0,
    };

    if methods == MethodSelection::All {
        let z0 = &ctx.fg.test[j];
        out.errors.push(ErrorRow {
            sample_id: j,
            method: MethodTag::GaussianFirstGuess.as_str().to_string(),
            rmse: normalized_rmse(z0.as_slice(), truth.as_slice()),
            iterations: None,
            iterations_to_threshold: None,
        });
        if dump {
            dump_trajectory(&mut out.recon, j, MethodTag::GaussianFirstGuess.as_str(), 0, z0);
        }
    }

    let mut neural_estimate: Option<Trajectory> = None;
    if methods.needs_neural() {
        let result = ctx.run_neural(j)?;
        if methods.includes(MethodTag::Neural) {
            out.errors.push(ErrorRow {
                sample_id: j,
                method: MethodTag::Neural.as_str().to_string(),
                rmse: normalized_rmse(result.estimate.as_slice(), truth.as_slice()),
                iterations: None,
                iterations_to_threshold: None,
            });
            if dump {
                for (k, it) in result.iterates.iter().enumerate() {
                    dump_trajectory(&mut out.recon, j, MethodTag::Neural.as_str(), k + 1, it);
                }
            }
        }
        neural_estimate = Some(result.estimate);
    }

    if methods.includes(MethodTag::Unconditional) {
        let result = ctx.run_uncond(j)?;
        out.errors.push(ErrorRow {
            sample_id: j,
            method: MethodTag::Unconditional.as_str().to_string(),
            rmse: normalized_rmse(result.estimate.as_slice(), truth.as_slice()),
            iterations: None,
            iterations_to_threshold: None,
        });
        if dump {
            for (k, it) in result.iterates.iter().enumerate() {
                dump_trajectory(&mut out.recon, j, MethodTag::Unconditional.as_str(), k + 1, it);
            }
        }
    }

    if methods.includes(MethodTag::FourDVar) {
        // One long descent serves both the baseline (its prefix: the iterate
        // sequence does not depend on the stopping rule) and the
        // threshold-run statistics.
        let trace = ctx.run_fourdvar(j, ctx.config.fourdvar.max_iters)?;
        if !trace.is_monotone() {
            out.monotone_violations += 1;
        }
        let budget = ctx
            .config
            .fourdvar
            .baseline_iters
            .unwrap_or(usize::MAX)
            .min(trace.iterations);
        let estimate = ctx.data.normalizer.normalize(&trace.iterates[budget]);
        out.errors.push(ErrorRow {
            sample_id: j,
            method: MethodTag::FourDVar.as_str().to_string(),
            rmse: normalized_rmse(estimate.as_slice(), truth.as_slice()),
            iterations: Some(budget),
            iterations_to_threshold: trace.iterations_to_objective(threshold_raw),
        });
        out.traces
            .extend(trace_rows(j, MethodTag::FourDVar.as_str(), &trace));
        if dump {
            for (k, it) in trace.iterates.iter().take(budget + 1).enumerate() {
                let normalized = ctx.data.normalizer.normalize(it);
                dump_trajectory(&mut out.recon, j, MethodTag::FourDVar.as_str(), k, &normalized);
            }
        }
    }

    if methods.includes(MethodTag::Hybrid) {
        let base = neural_estimate.as_ref().expect("hybrid needs the neural path");
        let result = ctx.run_hybrid(j, base)?;
        let trace = result.trace.as_ref().expect("hybrid returns a trace");
        if !trace.is_monotone() {
            out.monotone_violations += 1;
        }
        let estimate = ctx.data.normalizer.normalize(&result.estimate);
        out.errors.push(ErrorRow {
            sample_id: j,
            method: MethodTag::Hybrid.as_str().to_string(),
            rmse: normalized_rmse(estimate.as_slice(), truth.as_slice()),
            iterations: result.iterations,
            iterations_to_threshold: trace.iterations_to_objective(threshold_raw),
        });
        out.traces
            .extend(trace_rows(j, MethodTag::Hybrid.as_str(), &trace));
        if dump {
            dump_trajectory(
                &mut out.recon,
                j,
                MethodTag::Hybrid.as_str(),
                trace.iterations,
                &estimate,
            );
        }
    }
    Ok(out)
}

/// Runs the selected methods over the whole test split: a parallel error
/// pass with a deterministic reduction order, then the sequential timing
/// protocol.
pub fn evaluate(
    config: &ExperimentConfig,
    data: &Dataset,
    fg: &FirstGuesses,
    methods: MethodSelection,
    update_rule: Option<UpdateRule>,
) -> Result<EvaluationArtifacts> {
    let ctx = EvalContext {
        config,
        data,
        fg,
        schedule: config.schedule.build(),
        rule: update_rule.unwrap_or(config.evaluation.update_rule),
        model: SystemModel::from_config(config),
        background_mean: match config.system {
            SystemKind::Lorenz63 => background_from_train(&data.train).0,
            SystemKind::Pendulum => pendulum_background().0.iter().copied().collect(),
        },
        background_cov: match config.system {
            SystemKind::Lorenz63 => background_from_train(&data.train).1,
            SystemKind::Pendulum => {
                let (_, cov) = pendulum_background();
                nalgebra::DMatrix::from_fn(2, 2, |r, c| cov[(r, c)])
            }
        },
        neural: if methods.needs_neural() {
            Some(load_checkpoint(config, false)?)
        } else {
            None
        },
        uncond: if methods.needs_uncond() {
            Some(load_checkpoint(config, true)?)
        } else {
            None
        },
    };

    let dump_until = config.evaluation.dump_samples;
    let outcomes: Vec<Result<SampleOutcome>> = (0..data.test.len())
        .into_par_iter()
        .map(|j| evaluate_sample(&ctx, j, methods, j < dump_until))
        .collect();

    let mut artifacts = EvaluationArtifacts {
        errors: Vec::new(),
        reconstructions: Vec::new(),
        traces: Vec::new(),
        timings: Vec::new(),
        monotonicity_violations: 0,
    };
    for outcome in outcomes {
        let outcome = outcome?;
        artifacts.errors.extend(outcome.errors);
        artifacts.reconstructions.extend(outcome.recon);
        artifacts.traces.extend(outcome.traces);
        artifacts.monotonicity_violations += outcome.monotone_violations;
    }

    // Timing protocol: sequential repeated passes, median reported later.
    for repeat in 0..config.evaluation.timing_repeats {
        if methods.includes(MethodTag::Neural) {
            let start = Instant::now();
            for j in 0..data.test.len() {
                std::hint::black_box(ctx.run_neural(j)?);
            }
            artifacts.timings.push(TimingRow {
                method: MethodTag::Neural.as_str().to_string(),
                repeat,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        if methods.includes(MethodTag::Unconditional) {
            let start = Instant::now();
            for j in 0..data.test.len() {
                std::hint::black_box(ctx.run_uncond(j)?);
            }
            artifacts.timings.push(TimingRow {
                method: MethodTag::Unconditional.as_str().to_string(),
                repeat,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        if methods.includes(MethodTag::FourDVar) {
            let budget = config
                .fourdvar
                .baseline_iters
                .unwrap_or(config.fourdvar.max_iters);
            let start = Instant::now();
            for j in 0..data.test.len() {
                std::hint::black_box(ctx.run_fourdvar(j, budget)?);
            }
            artifacts.timings.push(TimingRow {
                method: MethodTag::FourDVar.as_str().to_string(),
                repeat,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(artifacts)
}

/// Mean neural-reconstruction error over the test set under a fixed, unseen
/// observation geometry: one index set drawn at `fraction`, shared by every
/// sample, with fresh noise and first guesses rebuilt for that geometry.
pub fn neural_rmse_on_geometry(
    config: &ExperimentConfig,
    data: &Dataset,
    neural: &NeuralPrior,
    fraction: f64,
    geometry_index: u64,
) -> Result<f64> {
    let builder = FirstGuessBuilder::new(config, data)?;
    let proc = sample_process(
        config.phase_dim(),
        config.data.steps,
        &config.observation.components,
        fraction,
        data.noise_std_norm,
        config.observation.force_endpoints,
        config.seed.wrapping_add(SEED_GEOMETRY).wrapping_add(geometry_index),
    )?;
    let schedule = config.schedule.build();
    let rule = config.evaluation.update_rule;
    let total: Result<f64> = (0..data.test.len())
        .into_par_iter()
        .map(|j| {
            let truth = data.normalizer.normalize(&data.test[j]);
            let y = proc.observe(
                truth.as_slice(),
                config
                    .seed
                    .wrapping_add(SEED_GEOMETRY)
                    .wrapping_add(1000 + 7919 * geometry_index)
                    .wrapping_add(j as u64),
            )?;
            let z0 = builder.guess(&proc, &y)?;
            let result = incremental_assimilate(neural, &y, &proc, &z0, &schedule, rule)?;
            Ok(normalized_rmse(result.estimate.as_slice(), truth.as_slice()))
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.iter().sum());
    Ok(total? / data.test.len() as f64)
}

/// Loads the trained conditional operator for out-of-band evaluations.
pub fn load_neural(config: &ExperimentConfig) -> Result<NeuralPrior> {
    load_checkpoint(config, false)
}

pub fn write_artifacts(config: &ExperimentConfig, artifacts: &EvaluationArtifacts) -> Result<()> {
    let dir = &config.out_dir;
    let mut writer = csv::Writer::from_path(dir.join("errors.csv"))?;
    for row in &artifacts.errors {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(dir.join("reconstructions.csv"))?;
    for row in &artifacts.reconstructions {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(dir.join("fourdvar_trace.csv"))?;
    for row in &artifacts.traces {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(dir.join("timing.csv"))?;
    for row in &artifacts.timings {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let audit = serde_json::json!({
        "monotonicity_violations": artifacts.monotonicity_violations,
    });
    std::fs::write(dir.join("audit.json"), serde_json::to_string_pretty(&audit)?)?;
    Ok(())
}

/// Per-method aggregates used by the report stage.
#[derive(Debug, Clone, Serialize)]
pub struct MethodAggregate {
    pub method: String,
    pub samples: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub rel_time: Option<f64>,
    pub median_iterations: Option<f64>,
}

pub fn aggregate(errors: &[ErrorRow], timings: &[TimingRow]) -> Vec<MethodAggregate> {
    let mut by_method: BTreeMap<String, Vec<&ErrorRow>> = BTreeMap::new();
    for row in errors {
        by_method.entry(row.method.clone()).or_default().push(row);
    }
    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in timings {
        times.entry(row.method.clone()).or_default().push(row.seconds);
    }
    let medians: BTreeMap<String, f64> = times
        .into_iter()
        .map(|(method, mut secs)| {
            secs.sort_by(f64::total_cmp);
            (method, secs[secs.len() / 2])
        })
        .collect();
    let fastest = medians.values().copied().fold(f64::INFINITY, f64::min);

    by_method
        .into_iter()
        .map(|(method, rows)| {
            let n = rows.len();
            let mean = rows.iter().map(|r| r.rmse).sum::<f64>() / n as f64;
            let var = rows
                .iter()
                .map(|r| (r.rmse - mean) * (r.rmse - mean))
                .sum::<f64>()
                / (n.max(2) - 1) as f64;
            let mut iters: Vec<usize> = rows.iter().filter_map(|r| r.iterations).collect();
            iters.sort_unstable();
            MethodAggregate {
                method: method.clone(),
                samples: n,
                mean_rmse: mean,
                std_rmse: var.sqrt(),
                rel_time: medians.get(&method).map(|t| t / fastest),
                median_iterations: if iters.is_empty() {
                    None
                } else {
                    Some(iters[iters.len() / 2] as f64)
                },
            }
        })
        .collect()
}
