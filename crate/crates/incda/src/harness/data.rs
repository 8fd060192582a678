//! Dataset generation and serialization.
//!
//! Trajectories are simulated in physical units; the normalizer is fitted on
//! the training split only. Observations are drawn and stored in normalized
//! units (`y = H x_norm + ξ`), which is what the neural methods consume;
//! the 4D-Var paths denormalize on the fly. File layout under `out_dir`:
//!
//! * `trajectories_{train,test}.csv` — `traj_id,t,component,value` (physical)
//! * `trajectories.json` — dimensions, model parameters, seed, normalizer
//! * `observations_{train,test}.csv` — `sample_id,flat_index,value` (normalized)
//! * `observations.json` — state dimension, normalized noise std, seed
//! * `first_guess_{train,test}.csv` — trajectory schema, normalized units

use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::*;
use crate::dynamics::{burn_in, simulate, Dynamics, Lorenz63, Normalizer, Pendulum, Trajectory};
use crate::error::{Error, Result};
use crate::gaussian::{build_linear_pendulum_prior, build_moment_prior, map_dense};
use crate::observation::{sample_process, ObservationProcess};

/// Concrete dynamical model selected by the configuration.
#[derive(Debug, Clone, Copy)]
pub enum SystemModel {
    Lorenz(Lorenz63),
    Pendulum(Pendulum),
}

impl SystemModel {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        match config.system {
            SystemKind::Lorenz63 => SystemModel::Lorenz(config.lorenz),
            SystemKind::Pendulum => SystemModel::Pendulum(config.pendulum),
        }
    }

    pub fn as_dyn(&self) -> &dyn Dynamics {
        match self {
            SystemModel::Lorenz(m) => m,
            SystemModel::Pendulum(m) => m,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SystemModel::Lorenz(_) => "lorenz63",
            SystemModel::Pendulum(_) => "pendulum",
        }
    }
}

/// In-memory dataset: physical trajectories plus normalized observations.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub normalizer: Normalizer,
    pub train_obs: Vec<(ObservationProcess, Vec<f64>)>,
    pub test_obs: Vec<(ObservationProcess, Vec<f64>)>,
    /// Observation noise standard deviation in normalized units.
    pub noise_std_norm: f64,
}

/// Normalized first guesses for both splits.
#[derive(Debug, Clone)]
pub struct FirstGuesses {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

fn stream_seed(base: u64, stream: u64, i: usize) -> u64 {
    base.wrapping_add(stream).wrapping_add(i as u64)
}

fn draw_initial_state(config: &ExperimentConfig, model: &SystemModel, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        SystemModel::Lorenz(m) => {
            // A random cube point warmed into the attractor.
            let u0: Vec<f64> = (0..3).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
            burn_in(m, &u0, config.data.burn_in_steps, config.data.dt)
        }
        SystemModel::Pendulum(m) => {
            // Uniform over the oscillatory part of phase space: draws above
            // the separatrix energy 2ω² (rotating solutions, unbounded
            // angle) are rejected so trajectories stay representable by a
            // stationary prior in the angle coordinate.
            let separatrix = 2.0 * m.omega2;
            let u0 = loop {
                let angle = std::f64::consts::PI * (2.0 * rng.gen::<f64>() - 1.0);
                let momentum = 1.5 * (2.0 * rng.gen::<f64>() - 1.0);
                let energy = 0.5 * momentum * momentum + m.omega2 * (1.0 - angle.cos());
                if energy < 0.99 * separatrix {
                    break vec![angle, momentum];
                }
            };
            if config.data.burn_in_steps > 0 {
                burn_in(m, &u0, config.data.burn_in_steps, config.data.dt)
            } else {
                u0
            }
        }
    }
}

fn simulate_split(
    config: &ExperimentConfig,
    model: &SystemModel,
    count: usize,
    ic_stream: u64,
    noise_stream: u64,
) -> Vec<Trajectory> {
    (0..count)
        .map(|i| {
            let u0 = draw_initial_state(config, model, stream_seed(config.seed, ic_stream, i));
            simulate(
                model.as_dyn(),
                &u0,
                config.data.steps,
                config.data.dt,
                config.generation_noise_std(),
                stream_seed(config.seed, noise_stream, i),
            )
        })
        .collect()
}

/// Observation noise level in normalized units.
pub fn normalized_noise_std(config: &ExperimentConfig, normalizer: &Normalizer) -> f64 {
    match config.observation.noise_units {
        NoiseUnits::Normalized => config.observation.noise_std,
        NoiseUnits::Physical => {
            let c = config.observation.components[0];
            config.observation.noise_std / normalizer.std[c]
        }
    }
}

fn observe_split(
    config: &ExperimentConfig,
    normalizer: &Normalizer,
    trajectories: &[Trajectory],
    noise_std_norm: f64,
    mask_stream: u64,
    noise_stream: u64,
) -> Result<Vec<(ObservationProcess, Vec<f64>)>> {
    trajectories
        .iter()
        .enumerate()
        .map(|(i, traj)| {
            let proc = sample_process(
                config.phase_dim(),
                config.data.steps,
                &config.observation.components,
                config.observation.fraction,
                noise_std_norm,
                config.observation.force_endpoints,
                stream_seed(config.seed, mask_stream, i),
            )?;
            let x_norm = normalizer.normalize(traj);
            let y = proc.observe(
                x_norm.as_slice(),
                stream_seed(config.seed, noise_stream, i),
            )?;
            Ok((proc, y))
        })
        .collect()
}

/// Simulates both splits, fits the normalizer on the training split, and
/// draws per-sample observation geometries.
pub fn generate(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let model = SystemModel::from_config(config);
    let train = simulate_split(
        config,
        &model,
        config.data.train_size,
        SEED_TRAIN_TRAJ,
        SEED_TRAIN_NOISE,
    );
    let test = simulate_split(
        config,
        &model,
        config.data.test_size,
        SEED_TEST_TRAJ,
        SEED_TEST_NOISE,
    );
    let normalizer = Normalizer::fit(&train)?;
    let noise_std_norm = normalized_noise_std(config, &normalizer);
    let train_obs = observe_split(
        config,
        &normalizer,
        &train,
        noise_std_norm,
        SEED_TRAIN_OBS,
        SEED_TRAIN_OBSNOISE,
    )?;
    let test_obs = observe_split(
        config,
        &normalizer,
        &test,
        noise_std_norm,
        SEED_TEST_OBS,
        SEED_TEST_OBSNOISE,
    )?;
    Ok(Dataset {
        train,
        test,
        normalizer,
        train_obs,
        test_obs,
        noise_std_norm,
    })
}

/// Converts a normalized observation set into physical units. Requires all
/// observed indices to live on one phase component, which keeps the noise
/// covariance isotropic.
pub fn denormalize_observations(
    proc: &ObservationProcess,
    y: &[f64],
    normalizer: &Normalizer,
    phase_dim: usize,
) -> Result<(ObservationProcess, Vec<f64>)> {
    let components: Vec<usize> = proc.indices().iter().map(|i| i % phase_dim).collect();
    let Some(&first) = components.first() else {
        return Ok((proc.clone(), Vec::new()));
    };
    if components.iter().any(|&c| c != first) {
        return Err(Error::InvalidConfig(
            "physical-space observations need a single observed component".to_string(),
        ));
    }
    let std = normalizer.std[first];
    let y_phys: Vec<f64> = y
        .iter()
        .map(|v| normalizer.denormalize_value(first, *v))
        .collect();
    Ok((proc.with_noise_std(proc.noise_std() * std), y_phys))
}

/// Background statistics (mean and covariance of the initial state) from the
/// physical training split, for the weak-constraint cost.
pub fn background_from_train(train: &[Trajectory]) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let phi = train[0].phase_dim();
    let n = train.len();
    let mut mean = vec![0.0; phi];
    for traj in train {
        for (m, v) in mean.iter_mut().zip(traj.state(0)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = nalgebra::DMatrix::zeros(phi, phi);
    for traj in train {
        let d: Vec<f64> = traj.state(0).iter().zip(&mean).map(|(a, b)| a - b).collect();
        for r in 0..phi {
            for c in 0..phi {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    cov /= (n - 1).max(1) as f64;
    // Keep the cost well posed even for degenerate initial-state spreads.
    let reg = 1e-8 * cov.trace().max(1e-8) / phi as f64;
    for i in 0..phi {
        cov[(i, i)] += reg;
    }
    (mean, cov)
}

/// Pendulum initial-condition law, moment-matched: angle uniform on
/// `[−π, π]`, momentum uniform on `[−1.5, 1.5]`.
pub fn pendulum_background() -> (Vector2<f64>, Matrix2<f64>) {
    let angle_var = std::f64::consts::PI.powi(2) / 3.0;
    let momentum_var = 3.0_f64.powi(2) / 12.0;
    (
        Vector2::zeros(),
        Matrix2::new(angle_var, 0.0, 0.0, momentum_var),
    )
}

/// Gaussian MAP interpolator producing first guesses. Holds the (expensive)
/// prior so that one builder serves any observation geometry.
pub struct FirstGuessBuilder {
    method: FirstGuessMethod,
    /// Normalized-space prior for the moment method; physical-space prior
    /// for the linear pendulum.
    prior: crate::gaussian::DenseGaussianPrior,
    normalizer: Normalizer,
    phase_dim: usize,
    steps: usize,
}

impl FirstGuessBuilder {
    /// Fits the prior. The moment prior uses the *training* split only.
    pub fn new(config: &ExperimentConfig, data: &Dataset) -> Result<Self> {
        let prior = match config.first_guess.method {
            FirstGuessMethod::Moment => {
                let normalized: Vec<Trajectory> = data
                    .train
                    .iter()
                    .map(|t| data.normalizer.normalize(t))
                    .collect();
                build_moment_prior(&normalized)?
            }
            FirstGuessMethod::LinearPendulum => {
                let (mean0, cov0) = pendulum_background();
                let q = Matrix2::identity() * config.first_guess.process_noise_var;
                build_linear_pendulum_prior(
                    &config.pendulum,
                    config.data.steps,
                    config.data.dt,
                    mean0,
                    cov0,
                    q,
                )
            }
        };
        Ok(Self {
            method: config.first_guess.method,
            prior,
            normalizer: data.normalizer.clone(),
            phase_dim: config.phase_dim(),
            steps: config.data.steps,
        })
    }

    /// Normalized first guess for one normalized observation pair.
    pub fn guess(&self, proc: &ObservationProcess, y: &[f64]) -> Result<Trajectory> {
        match self.method {
            FirstGuessMethod::Moment => {
                let z = map_dense(y, proc, &self.prior)?;
                Ok(Trajectory::new(self.phase_dim, self.steps, z))
            }
            FirstGuessMethod::LinearPendulum => {
                let (proc_phys, y_phys) =
                    denormalize_observations(proc, y, &self.normalizer, self.phase_dim)?;
                let z_phys = map_dense(&y_phys, &proc_phys, &self.prior)?;
                let traj = Trajectory::new(self.phase_dim, self.steps, z_phys);
                Ok(self.normalizer.normalize(&traj))
            }
        }
    }
}

/// Builds normalized first guesses for both splits by Gaussian MAP
/// interpolation.
pub fn build_first_guesses(config: &ExperimentConfig, data: &Dataset) -> Result<FirstGuesses> {
    let builder = FirstGuessBuilder::new(config, data)?;
    let guess = |obs: &[(ObservationProcess, Vec<f64>)]| -> Result<Vec<Trajectory>> {
        obs.iter().map(|(proc, y)| builder.guess(proc, y)).collect()
    };
    Ok(FirstGuesses {
        train: guess(&data.train_obs)?,
        test: guess(&data.test_obs)?,
    })
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrajRow {
    traj_id: usize,
    t: usize,
    component: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObsRow {
    sample_id: usize,
    flat_index: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectorySidecar {
    phase_dim: usize,
    steps: usize,
    dt: f64,
    model: String,
    params: serde_json::Value,
    seed: u64,
    normalizer: Normalizer,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationSidecar {
    state_dim: usize,
    /// Normalized units.
    noise_std: f64,
    seed: u64,
}

fn write_trajectories(path: &Path, batch: &[Trajectory]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for (id, traj) in batch.iter().enumerate() {
        for t in 0..traj.steps() {
            for (component, value) in traj.state(t).iter().enumerate() {
                writer.serialize(TrajRow {
                    traj_id: id,
                    t,
                    component,
                    value: *value,
                })?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

fn read_trajectories(path: &Path, phase_dim: usize, steps: usize) -> Result<Vec<Trajectory>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut batches: Vec<Vec<f64>> = Vec::new();
    for row in reader.deserialize() {
        let row: TrajRow = row?;
        if row.traj_id >= batches.len() {
            batches.resize(row.traj_id + 1, vec![0.0; phase_dim * steps]);
        }
        batches[row.traj_id][row.t * phase_dim + row.component] = row.value;
    }
    Ok(batches
        .into_iter()
        .map(|values| Trajectory::new(phase_dim, steps, values))
        .collect())
}

fn write_observations(path: &Path, obs: &[(ObservationProcess, Vec<f64>)]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for (id, (proc, y)) in obs.iter().enumerate() {
        for (&flat_index, &value) in proc.indices().iter().zip(y) {
            writer.serialize(ObsRow {
                sample_id: id,
                flat_index,
                value,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn read_observations(
    path: &Path,
    count: usize,
    state_dim: usize,
    noise_std: f64,
) -> Result<Vec<(ObservationProcess, Vec<f64>)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut per_sample: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
    for row in reader.deserialize() {
        let row: ObsRow = row?;
        if row.sample_id >= count {
            return Err(Error::InvalidConfig(format!(
                "observation file references sample {} beyond split size {count}",
                row.sample_id
            )));
        }
        per_sample[row.sample_id].push((row.flat_index, row.value));
    }
    per_sample
        .into_iter()
        .map(|mut entries| {
            entries.sort_by_key(|(i, _)| *i);
            let indices: Vec<usize> = entries.iter().map(|(i, _)| *i).collect();
            let values: Vec<f64> = entries.iter().map(|(_, v)| *v).collect();
            Ok((
                ObservationProcess::new(state_dim, indices, noise_std)?,
                values,
            ))
        })
        .collect()
}

pub fn write_dataset(config: &ExperimentConfig, data: &Dataset) -> Result<()> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;
    config.save(&dir.join("config_used.json"))?;
    write_trajectories(&dir.join("trajectories_train.csv"), &data.train)?;
    write_trajectories(&dir.join("trajectories_test.csv"), &data.test)?;

    let model = SystemModel::from_config(config);
    let params = match model {
        SystemModel::Lorenz(m) => serde_json::to_value(m)?,
        SystemModel::Pendulum(m) => serde_json::to_value(m)?,
    };
    let sidecar = TrajectorySidecar {
        phase_dim: config.phase_dim(),
        steps: config.data.steps,
        dt: config.data.dt,
        model: model.name().to_string(),
        params,
        seed: config.seed,
        normalizer: data.normalizer.clone(),
    };
    std::fs::write(
        dir.join("trajectories.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;

    write_observations(&dir.join("observations_train.csv"), &data.train_obs)?;
    write_observations(&dir.join("observations_test.csv"), &data.test_obs)?;
    let obs_sidecar = ObservationSidecar {
        state_dim: config.state_dim(),
        noise_std: data.noise_std_norm,
        seed: config.seed,
    };
    std::fs::write(
        dir.join("observations.json"),
        serde_json::to_string_pretty(&obs_sidecar)?,
    )?;
    Ok(())
}

pub fn read_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let dir = &config.out_dir;
    let sidecar: TrajectorySidecar =
        serde_json::from_str(&std::fs::read_to_string(dir.join("trajectories.json"))?)?;
    if sidecar.phase_dim != config.phase_dim() || sidecar.steps != config.data.steps {
        return Err(Error::InvalidConfig(format!(
            "dataset at {} was generated for φ={}, T={}, config expects φ={}, T={}",
            dir.display(),
            sidecar.phase_dim,
            sidecar.steps,
            config.phase_dim(),
            config.data.steps
        )));
    }
    let train = read_trajectories(
        &dir.join("trajectories_train.csv"),
        sidecar.phase_dim,
        sidecar.steps,
    )?;
    let test = read_trajectories(
        &dir.join("trajectories_test.csv"),
        sidecar.phase_dim,
        sidecar.steps,
    )?;
    let obs_sidecar: ObservationSidecar =
        serde_json::from_str(&std::fs::read_to_string(dir.join("observations.json"))?)?;
    let train_obs = read_observations(
        &dir.join("observations_train.csv"),
        train.len(),
        obs_sidecar.state_dim,
        obs_sidecar.noise_std,
    )?;
    let test_obs = read_observations(
        &dir.join("observations_test.csv"),
        test.len(),
        obs_sidecar.state_dim,
        obs_sidecar.noise_std,
    )?;
    Ok(Dataset {
        train,
        test,
        normalizer: sidecar.normalizer,
        train_obs,
        test_obs,
        noise_std_norm: obs_sidecar.noise_std,
    })
}

pub fn write_first_guesses(config: &ExperimentConfig, fg: &FirstGuesses) -> Result<()> {
    let dir = &config.out_dir;
    write_trajectories(&dir.join("first_guess_train.csv"), &fg.train)?;
    write_trajectories(&dir.join("first_guess_test.csv"), &fg.test)?;
    Ok(())
}

pub fn read_first_guesses(config: &ExperimentConfig, data: &Dataset) -> Result<FirstGuesses> {
    let dir = &config.out_dir;
    let fg = FirstGuesses {
        train: read_trajectories(
            &dir.join("first_guess_train.csv"),
            config.phase_dim(),
            config.data.steps,
        )?,
        test: read_trajectories(
            &dir.join("first_guess_test.csv"),
            config.phase_dim(),
            config.data.steps,
        )?,
    };
    if fg.train.len() != data.train.len() || fg.test.len() != data.test.len() {
        return Err(Error::InvalidConfig(
            "first-guess files do not match the dataset splits".to_string(),
        ));
    }
    Ok(fg)
}
