//! Experiment configuration: a single JSON document with per-system
//! defaults. Every field is overridable; the CLI's `--seed` and `--out`
//! flags take precedence over the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Lorenz63, Pendulum};
use crate::error::{Error, Result};
use crate::neural_prior::NeuralPriorSpec;
use crate::sampler::UpdateRule;
use crate::training::{Objective, TemperatureSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Lorenz63,
    Pendulum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub steps: usize,
    pub dt: f64,
    /// Per-component process-noise standard deviation added after each
    /// integrator step; `None` selects the system default (`√dt` for
    /// Lorenz 63, noise-free for the pendulum).
    #[serde(default)]
    pub process_noise_std: Option<f64>,
    /// Deterministic warm-up steps before each trajectory starts.
    pub burn_in_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseUnits {
    /// `noise_std` applies to normalized trajectories.
    Normalized,
    /// `noise_std` applies to raw (physical) trajectory values.
    Physical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// Phase components observed at each chosen time step.
    pub components: Vec<usize>,
    /// Fraction of time steps observed.
    pub fraction: f64,
    pub noise_std: f64,
    pub noise_units: NoiseUnits,
    /// Always observe the first and last step of the window.
    pub force_endpoints: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstGuessMethod {
    /// Empirical mean/covariance of the normalized training trajectories.
    Moment,
    /// Analytic joint Gaussian of the linearized pendulum.
    LinearPendulum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstGuessConfig {
    pub method: FirstGuessMethod,
    /// Per-step model-noise variance of the linear-pendulum prior.
    pub process_noise_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `s_k = 1 − k/(ℓ+1)`.
    Regular,
    /// The single level `s = 1`.
    OneShot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub levels: usize,
    pub kind: ScheduleKind,
}

impl ScheduleConfig {
    pub fn build(&self) -> TemperatureSchedule {
        match self.kind {
            ScheduleKind::Regular => TemperatureSchedule::regular(self.levels),
            ScheduleKind::OneShot => TemperatureSchedule::one_shot(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub width: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub eps_l: f64,
}

fn default_val_metric() -> crate::training::ValMetric {
    crate::training::ValMetric::SamplerRmse
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub patience: usize,
    pub objective: Objective,
    #[serde(default = "default_val_metric")]
    pub val_metric: crate::training::ValMetric,
}

fn default_alpha_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourDVarConfig {
    /// Per-step model-error variance `q` in `Q = q·I`; `None` selects the
    /// system default (`dt` for Lorenz 63, `1e-2` for the pendulum).
    #[serde(default)]
    pub process_noise_var: Option<f64>,
    /// Iteration budget for every Gauss-Newton run.
    pub max_iters: usize,
    /// Optional iteration cap for the standalone 4D-Var baseline; `None`
    /// runs it to convergence under `max_iters`.
    #[serde(default)]
    pub baseline_iters: Option<usize>,
    pub lambda_init: f64,
    /// Largest line-search step size; values below 1 under-relax the
    /// Gauss-Newton update.
    #[serde(default = "default_alpha_max")]
    pub alpha_max: f64,
    /// Hybrid refinement stops when the full objective per state component
    /// falls below this value.
    pub hybrid_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Repetitions of the timed full-test-set pass; the median is reported.
    pub timing_repeats: usize,
    /// How many test samples get full reconstruction dumps.
    pub dump_samples: usize,
    pub update_rule: UpdateRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    #[serde(default)]
    pub lorenz: Lorenz63,
    #[serde(default)]
    pub pendulum: Pendulum,
    pub data: DataConfig,
    pub observation: ObservationConfig,
    pub first_guess: FirstGuessConfig,
    pub schedule: ScheduleConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub fourdvar: FourDVarConfig,
    pub evaluation: EvaluationConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The Lorenz 63 twin experiment: 32 steps of `dt = 0.025` with process
    /// noise `N(0, dt·I)`, sparse first-component observations, a moment
    /// first guess, and multi-temperature training at five levels.
    pub fn lorenz63_default(out_dir: PathBuf) -> Self {
        Self {
            system: SystemKind::Lorenz63,
            lorenz: Lorenz63::default(),
            pendulum: Pendulum::default(),
            data: DataConfig {
                train_size: 2048,
                test_size: 512,
                steps: 32,
                dt: 0.025,
                process_noise_std: None,
                burn_in_steps: 1000,
            },
            observation: ObservationConfig {
                components: vec![0],
                fraction: 0.0625,
                noise_std: 0.05,
                noise_units: NoiseUnits::Normalized,
                force_endpoints: false,
            },
            first_guess: FirstGuessConfig {
                method: FirstGuessMethod::Moment,
                process_noise_var: 0.0,
            },
            schedule: ScheduleConfig {
                levels: 5,
                kind: ScheduleKind::Regular,
            },
            network: NetworkConfig {
                width: 32,
                depth: 4,
                embed_dim: 16,
                eps_l: 1e-4,
            },
            training: TrainingConfig {
                batch_size: 64,
                max_epochs: 40,
                learning_rate: 1e-3,
                val_fraction: 0.1,
                patience: 40,
                objective: Objective::MultiTemperature,
                val_metric: crate::training::ValMetric::BatchLoss,
            },
            fourdvar: FourDVarConfig {
                process_noise_var: None,
                max_iters: 60,
                baseline_iters: None,
                lambda_init: 1e-3,
                alpha_max: 1.0,
                hybrid_threshold: 0.05,
            },
            evaluation: EvaluationConfig {
                timing_repeats: 5,
                dump_samples: 8,
                update_rule: UpdateRule::ColdDiffusion,
            },
            seed: 0,
            out_dir,
        }
    }

    /// The pendulum experiment: 100 noise-free steps of `dt = 0.1`, sparse
    /// near-noiseless angle observations, the analytic linear-pendulum first
    /// guess, and one-shot training.
    pub fn pendulum_default(out_dir: PathBuf) -> Self {
        let mut config = Self::lorenz63_default(out_dir);
        config.system = SystemKind::Pendulum;
        config.data = DataConfig {
            train_size: 2048,
            test_size: 256,
            steps: 100,
            dt: 0.1,
            process_noise_std: None,
            burn_in_steps: 0,
        };
        config.observation = ObservationConfig {
            components: vec![0],
            fraction: 0.1,
            noise_std: 0.01,
            noise_units: NoiseUnits::Physical,
            force_endpoints: true,
        };
        config.training.val_metric = crate::training::ValMetric::SamplerRmse;
        config.training.patience = 40;
        config.first_guess = FirstGuessConfig {
            method: FirstGuessMethod::LinearPendulum,
            process_noise_var: 1e-2,
        };
        config.schedule = ScheduleConfig {
            levels: 1,
            kind: ScheduleKind::OneShot,
        };
        config.training.objective = Objective::OneShot;
        config.training.max_epochs = 200;
        config
    }

    pub fn phase_dim(&self) -> usize {
        match self.system {
            SystemKind::Lorenz63 => 3,
            SystemKind::Pendulum => 2,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.phase_dim() * self.data.steps
    }

    /// Process-noise standard deviation used during generation.
    pub fn generation_noise_std(&self) -> f64 {
        self.data.process_noise_std.unwrap_or(match self.system {
            SystemKind::Lorenz63 => self.data.dt.sqrt(),
            SystemKind::Pendulum => 0.0,
        })
    }

    /// Model-error variance of the weak-constraint cost.
    pub fn fourdvar_process_noise_var(&self) -> f64 {
        self.fourdvar.process_noise_var.unwrap_or(match self.system {
            SystemKind::Lorenz63 => self.data.dt,
            SystemKind::Pendulum => 1e-2,
        })
    }

    pub fn network_spec(&self) -> NeuralPriorSpec {
        NeuralPriorSpec {
            phase_dim: self.phase_dim(),
            steps: self.data.steps,
            width: self.network.width,
            depth: self.network.depth,
            embed_dim: self.network.embed_dim,
            eps_l: self.network.eps_l,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let phi = self.phase_dim();
        if self.data.train_size < 2 {
            problems.push("data.train_size must be at least 2".to_string());
        }
        if self.data.test_size == 0 {
            problems.push("data.test_size must be positive".to_string());
        }
        if self.data.steps < 2 {
            problems.push("data.steps must be at least 2".to_string());
        }
        if !(self.data.dt > 0.0) {
            problems.push("data.dt must be positive".to_string());
        }
        if self.observation.components.is_empty()
            || self.observation.components.iter().any(|&c| c >= phi)
        {
            problems.push(format!(
                "observation.components must be a nonempty subset of 0..{phi}"
            ));
        }
        if !(self.observation.fraction > 0.0 && self.observation.fraction <= 1.0) {
            problems.push("observation.fraction must lie in (0, 1]".to_string());
        }
        if !(self.observation.noise_std > 0.0) {
            problems.push("observation.noise_std must be positive".to_string());
        }
        if self.observation.noise_units == NoiseUnits::Physical
            && self.observation.components.len() != 1
        {
            problems.push(
                "physical noise units require a single observed component".to_string(),
            );
        }
        if self.schedule.levels == 0 {
            problems.push("schedule.levels must be positive".to_string());
        }
        if self.schedule.kind == ScheduleKind::OneShot && self.schedule.levels != 1 {
            problems.push("one_shot schedule requires levels = 1".to_string());
        }
        if self.network.depth < 1 || self.network.width < 1 {
            problems.push("network.depth and network.width must be positive".to_string());
        }
        if self.network.embed_dim == 0 || self.network.embed_dim % 2 != 0 {
            problems.push("network.embed_dim must be a positive even number".to_string());
        }
        if !(self.network.eps_l > 0.0) {
            problems.push("network.eps_l must be positive".to_string());
        }
        if self.training.batch_size == 0 {
            problems.push("training.batch_size must be positive".to_string());
        }
        if !(self.training.learning_rate > 0.0) {
            problems.push("training.learning_rate must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.training.val_fraction) {
            problems.push("training.val_fraction must lie in [0, 1)".to_string());
        }
        if self.fourdvar.max_iters == 0 || self.fourdvar.baseline_iters == Some(0) {
            problems.push("fourdvar iteration budgets must be positive".to_string());
        }
        if !(self.fourdvar.alpha_max > 0.0 && self.fourdvar.alpha_max <= 1.0) {
            problems.push("fourdvar.alpha_max must lie in (0, 1]".to_string());
        }
        if !(self.fourdvar.hybrid_threshold > 0.0) {
            problems.push("fourdvar.hybrid_threshold must be positive".to_string());
        }
        if self.first_guess.method == FirstGuessMethod::LinearPendulum {
            if self.system != SystemKind::Pendulum {
                problems.push("linear_pendulum first guess requires the pendulum system".into());
            }
            if !(self.first_guess.process_noise_var > 0.0) {
                problems.push("first_guess.process_noise_var must be positive".to_string());
            }
        }
        if self.evaluation.dump_samples > self.data.test_size {
            problems.push("evaluation.dump_samples exceeds test_size".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

// Derived seed streams, fixed so that every stage is reproducible and no two
// stages share draws.
pub(crate) const SEED_TRAIN_TRAJ: u64 = 0;
pub(crate) const SEED_TEST_TRAJ: u64 = 1_000_000;
pub(crate) const SEED_TRAIN_OBS: u64 = 2_000_000;
pub(crate) const SEED_TEST_OBS: u64 = 3_000_000;
pub(crate) const SEED_TRAIN_NOISE: u64 = 4_000_000;
pub(crate) const SEED_TEST_NOISE: u64 = 5_000_000;
pub(crate) const SEED_TRAINING: u64 = 6_000_000;
pub(crate) const SEED_GEOMETRY: u64 = 7_000_000;
pub(crate) const SEED_TRAIN_OBSNOISE: u64 = 8_000_000;
pub(crate) const SEED_TEST_OBSNOISE: u64 = 9_000_000;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::lorenz63_default(PathBuf::from("runs/x"))
            .validate()
            .unwrap();
        ExperimentConfig::pendulum_default(PathBuf::from("runs/y"))
            .validate()
            .unwrap();
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut config = ExperimentConfig::lorenz63_default(PathBuf::from("runs/x"));
        config.observation.fraction = 0.0;
        config.network.embed_dim = 7;
        let err = config.validate().unwrap_err();
        let message = err.to_string();
        assert!(message.contains("fraction"));
        assert!(message.contains("embed_dim"));
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn json_round_trip_and_unknown_field_rejection() {
        let config = ExperimentConfig::lorenz63_default(PathBuf::from("runs/x"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        config.save(&path).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, config.seed);
        assert_eq!(loaded.data.steps, config.data.steps);

        let with_extra = std::fs::read_to_string(&path)
            .unwrap()
            .replacen('{', "{\n  \"bogus\": 1,", 1);
        std::fs::write(&path, with_extra).unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(Error::InvalidConfig(_))
        ));
    }
}
