//! Dynamical models, trajectory simulation and normalization.
//!
//! Two test systems are built in: the nonlinear pendulum and Lorenz 63.
//! Each model exposes its drift and the drift's analytic Jacobian (the
//! tangent-linear model used by Gauss–Newton). Trajectories are integrated
//! with a classical fourth-order one-step scheme, optionally with additive
//! Gaussian noise injected after each step.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A continuous-time dynamical model `u' = f(u)` with analytic Jacobian.
pub trait Dynamics {
    /// Phase-space dimension φ.
    fn phase_dim(&self) -> usize;

    /// Drift `f(u)` written into `out`.
    fn drift(&self, u: &[f64], out: &mut [f64]);

    /// Jacobian `∂f/∂u` at `u`, row-major φ×φ, written into `out`.
    fn jacobian(&self, u: &[f64], out: &mut [f64]);
}

/// Lorenz 63 convection model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Lorenz63 {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz63 {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl Dynamics for Lorenz63 {
    fn phase_dim(&self) -> usize {
        3
    }

    fn drift(&self, u: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (u[1] - u[0]);
        out[1] = self.rho * u[0] - u[1] - u[0] * u[2];
        out[2] = u[0] * u[1] - self.beta * u[2];
    }

    fn jacobian(&self, u: &[f64], out: &mut [f64]) {
        out[0] = -self.sigma;
        out[1] = self.sigma;
        out[2] = 0.0;
        out[3] = self.rho - u[2];
        out[4] = -1.0;
        out[5] = -u[0];
        out[6] = u[1];
        out[7] = u[0];
        out[8] = -self.beta;
    }
}

/// Nonlinear pendulum `(angle, angular velocity)` with `u'' = -ω² sin u`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Pendulum {
    pub omega2: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self { omega2: 1.0 }
    }
}

impl Dynamics for Pendulum {
    fn phase_dim(&self) -> usize {
        2
    }

    fn drift(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[1];
        out[1] = -self.omega2 * u[0].sin();
    }

    fn jacobian(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 1.0;
        out[2] = -self.omega2 * u[0].cos();
        out[3] = 0.0;
    }
}

/// Linear model `u' = A u`, e.g. the small-angle pendulum.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    dim: usize,
    /// Row-major `dim × dim`.
    a: Vec<f64>,
}

impl LinearDynamics {
    pub fn new(dim: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), dim * dim);
        Self { dim, a }
    }

    /// Linearization of the pendulum at the stable equilibrium.
    pub fn linearized_pendulum(omega2: f64) -> Self {
        Self::new(2, vec![0.0, 1.0, -omega2, 0.0])
    }
}

impl Dynamics for LinearDynamics {
    fn phase_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let row = &self.a[i * self.dim..(i + 1) * self.dim];
            out[i] = row.iter().zip(u).map(|(a, u)| a * u).sum();
        }
    }

    fn jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a);
    }
}

/// A discrete trajectory: `steps` states of dimension `phase_dim`, stored
/// flat and time-major (state at step `t` occupies `[t·φ, (t+1)·φ)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    phase_dim: usize,
    steps: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(phase_dim: usize, steps: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), phase_dim * steps, "d = φ·T violated");
        Self {
            phase_dim,
            steps,
            values,
        }
    }

    pub fn zeros(phase_dim: usize, steps: usize) -> Self {
        Self::new(phase_dim, steps, vec![0.0; phase_dim * steps])
    }

    pub fn from_states(phase_dim: usize, states: &[Vec<f64>]) -> Self {
        let mut values = Vec::with_capacity(phase_dim * states.len());
        for s in states {
            assert_eq!(s.len(), phase_dim);
            values.extend_from_slice(s);
        }
        Self::new(phase_dim, states.len(), values)
    }

    pub fn phase_dim(&self) -> usize {
        self.phase_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Flat dimension `d = φ·T`.
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.values[t * self.phase_dim..(t + 1) * self.phase_dim]
    }

    pub fn state_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.phase_dim..(t + 1) * self.phase_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Same shape, values taken from `flat`.
    pub fn with_values(&self, flat: Vec<f64>) -> Self {
        Self::new(self.phase_dim, self.steps, flat)
    }
}

/// One deterministic fourth-order integrator step over `dt`, then additive
/// noise. The noise slice has phase dimension length; pass zeros for a
/// deterministic step.
pub fn integrate_step(model: &dyn Dynamics, u: &[f64], dt: f64, noise: &[f64]) -> Vec<f64> {
    let phi = model.phase_dim();
    debug_assert_eq!(u.len(), phi);
    let mut k1 = vec![0.0; phi];
    let mut k2 = vec![0.0; phi];
    let mut k3 = vec![0.0; phi];
    let mut k4 = vec![0.0; phi];
    let mut tmp = vec![0.0; phi];

    model.drift(u, &mut k1);
    for i in 0..phi {
        tmp[i] = u[i] + 0.5 * dt * k1[i];
    }
    model.drift(&tmp, &mut k2);
    for i in 0..phi {
        tmp[i] = u[i] + 0.5 * dt * k2[i];
    }
    model.drift(&tmp, &mut k3);
    for i in 0..phi {
        tmp[i] = u[i] + dt * k3[i];
    }
    model.drift(&tmp, &mut k4);

    (0..phi)
        .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) + noise[i])
        .collect()
}

/// Jacobian of the deterministic integrator step, chained through all four
/// stages. Row-major φ×φ.
pub fn step_jacobian(model: &dyn Dynamics, u: &[f64], dt: f64) -> Vec<f64> {
    let phi = model.phase_dim();
    let mut k1 = vec![0.0; phi];
    let mut k2 = vec![0.0; phi];
    let mut k3 = vec![0.0; phi];
    let mut tmp = vec![0.0; phi];
    let mut j = vec![0.0; phi * phi];

    // Stage values are needed to evaluate the stage Jacobians.
    model.drift(u, &mut k1);
    for i in 0..phi {
        tmp[i] = u[i] + 0.5 * dt * k1[i];
    }
    let u2 = tmp.clone();
    model.drift(&u2, &mut k2);
    for i in 0..phi {
        tmp[i] = u[i] + 0.5 * dt * k2[i];
    }
    let u3 = tmp.clone();
    model.drift(&u3, &mut k3);
    for i in 0..phi {
        tmp[i] = u[i] + dt * k3[i];
    }
    let u4 = tmp;

    let mut a1 = vec![0.0; phi * phi];
    let mut aj = vec![0.0; phi * phi];
    model.jacobian(u, &mut a1);

    // A2 = J(u2)(I + dt/2 A1), and so on up the stages.
    let mat_mul_add = |j_stage: &[f64], a_prev: &[f64], scale: f64| -> Vec<f64> {
        let mut out = vec![0.0; phi * phi];
        for r in 0..phi {
            for c in 0..phi {
                let mut s = j_stage[r * phi + c];
                for k in 0..phi {
                    s += scale * j_stage[r * phi + k] * a_prev[k * phi + c];
                }
                out[r * phi + c] = s;
            }
        }
        out
    };

    model.jacobian(&u2, &mut aj);
    let a2 = mat_mul_add(&aj, &a1, 0.5 * dt);
    model.jacobian(&u3, &mut aj);
    let a3 = mat_mul_add(&aj, &a2, 0.5 * dt);
    model.jacobian(&u4, &mut aj);
    let a4 = mat_mul_add(&aj, &a3, dt);

    for r in 0..phi {
        for c in 0..phi {
            let idx = r * phi + c;
            let eye = if r == c { 1.0 } else { 0.0 };
            j[idx] = eye + dt / 6.0 * (a1[idx] + 2.0 * a2[idx] + 2.0 * a3[idx] + a4[idx]);
        }
    }
    j
}

/// Analytic drift Jacobian as a dense matrix.
pub fn model_jacobian(model: &dyn Dynamics, u: &[f64]) -> DMatrix<f64> {
    let phi = model.phase_dim();
    let mut j = vec![0.0; phi * phi];
    model.jacobian(u, &mut j);
    DMatrix::from_row_slice(phi, phi, &j)
}

/// Simulates `steps` states starting at `u0`, with per-step Gaussian noise of
/// standard deviation `noise_std` per component. Deterministic given `seed`.
pub fn simulate(
    model: &dyn Dynamics,
    u0: &[f64],
    steps: usize,
    dt: f64,
    noise_std: f64,
    seed: u64,
) -> Trajectory {
    assert!(steps >= 1);
    let phi = model.phase_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(steps);
    states.push(u0.to_vec());
    let mut noise = vec![0.0; phi];
    for _ in 1..steps {
        for n in noise.iter_mut() {
            *n = if noise_std > 0.0 {
                noise_std * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
        }
        let next = integrate_step(model, states.last().unwrap(), dt, &noise);
        states.push(next);
    }
    Trajectory::from_states(phi, &states)
}

/// Runs `steps` deterministic integrator steps and returns the endpoint;
/// used to warm trajectories into a system's attractor before sampling.
pub fn burn_in(model: &dyn Dynamics, u0: &[f64], steps: usize, dt: f64) -> Vec<f64> {
    let mut u = u0.to_vec();
    let zero = vec![0.0; model.phase_dim()];
    for _ in 0..steps {
        u = integrate_step(model, &u, dt, &zero);
    }
    u
}

/// Per-component affine normalization fitted on a trajectory batch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Identity normalizer (mean 0, std 1).
    pub fn identity(phase_dim: usize) -> Self {
        Self {
            mean: vec![0.0; phase_dim],
            std: vec![1.0; phase_dim],
        }
    }

    /// Fits pooled per-component mean and standard deviation over all time
    /// steps of all trajectories in the batch.
    pub fn fit(batch: &[Trajectory]) -> Result<Self> {
        let first = batch.first().ok_or(Error::InsufficientData {
            needed: 1,
            got: 0,
        })?;
        let phi = first.phase_dim();
        let mut mean = vec![0.0; phi];
        let mut count = 0usize;
        for traj in batch {
            for t in 0..traj.steps() {
                for (c, v) in traj.state(t).iter().enumerate() {
                    mean[c] += v;
                }
            }
            count += traj.steps();
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; phi];
        for traj in batch {
            for t in 0..traj.steps() {
                for (c, v) in traj.state(t).iter().enumerate() {
                    let d = v - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InsufficientData {
                needed: 2,
                got: batch.len(),
            });
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, traj: &Trajectory) -> Trajectory {
        let phi = traj.phase_dim();
        let values = traj
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % phi]) / self.std[i % phi])
            .collect();
        traj.with_values(values)
    }

    pub fn denormalize(&self, traj: &Trajectory) -> Trajectory {
        let phi = traj.phase_dim();
        let values = traj
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % phi] + self.mean[i % phi])
            .collect();
        traj.with_values(values)
    }

    /// Normalizes a single scalar belonging to phase component `c`.
    pub fn normalize_value(&self, c: usize, v: f64) -> f64 {
        (v - self.mean[c]) / self.std[c]
    }

    /// Inverse of [`Normalizer::normalize_value`].
    pub fn denormalize_value(&self, c: usize, v: f64) -> f64 {
        v * self.std[c] + self.mean[c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff_jacobian(model: &dyn Dynamics, u: &[f64]) -> DMatrix<f64> {
        let phi = model.phase_dim();
        let h = 1e-6;
        let mut j = DMatrix::zeros(phi, phi);
        let mut fp = vec![0.0; phi];
        let mut fm = vec![0.0; phi];
        for c in 0..phi {
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[c] += h;
            um[c] -= h;
            model.drift(&up, &mut fp);
            model.drift(&um, &mut fm);
            for r in 0..phi {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }

    #[test]
    fn lorenz_drift_fixed_points() {
        let m = Lorenz63::default();
        let mut out = [0.0; 3];
        m.drift(&[0.0, 0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0, 0.0]);

        m.drift(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 26.0);
        assert!((out[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-15);

        // Nontrivial fixed points at (±√(β(ρ−1)), ±√(β(ρ−1)), ρ−1).
        let r = (m.beta * (m.rho - 1.0)).sqrt();
        for s in [1.0, -1.0] {
            m.drift(&[s * r, s * r, m.rho - 1.0], &mut out);
            for v in out {
                assert!(v.abs() < 1e-12, "fixed point residual {v}");
            }
        }
    }

    #[test]
    fn pendulum_drift_equilibria_and_small_angle() {
        let m = Pendulum::default();
        let mut out = [0.0; 2];
        m.drift(&[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
        m.drift(&[std::f64::consts::PI, 0.0], &mut out);
        assert!(out[0] == 0.0 && out[1].abs() < 1e-15);

        // Cubic Taylor remainder at a small angle.
        let a = 1e-3;
        m.drift(&[a, 0.5], &mut out);
        let linear = [0.5, -m.omega2 * a];
        assert!((out[0] - linear[0]).abs() < 1e-15);
        assert!((out[1] - linear[1]).abs() < a * a * a);
    }

    #[test]
    fn jacobians_are_analytic() {
        let lorenz = Lorenz63::default();
        let j = model_jacobian(&lorenz, &[0.0, 0.0, 0.0]);
        let want = DMatrix::from_row_slice(
            3,
            3,
            &[
                -lorenz.sigma,
                lorenz.sigma,
                0.0,
                lorenz.rho,
                -1.0,
                0.0,
                0.0,
                0.0,
                -lorenz.beta,
            ],
        );
        assert_eq!(j, want);

        let pend = Pendulum::default();
        let j = model_jacobian(&pend, &[0.0, 0.0]);
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let lorenz = Lorenz63::default();
        let pend = Pendulum { omega2: 1.7 };
        for _ in 0..20 {
            let u3: Vec<f64> = (0..3).map(|_| 20.0 * (rng.gen::<f64>() - 0.5)).collect();
            let diff = model_jacobian(&lorenz, &u3) - finite_diff_jacobian(&lorenz, &u3);
            assert!(diff.amax() < 1e-5 * 20.0);

            let u2: Vec<f64> = (0..2).map(|_| 6.0 * (rng.gen::<f64>() - 0.5)).collect();
            let diff = model_jacobian(&pend, &u2) - finite_diff_jacobian(&pend, &u2);
            assert!(diff.amax() < 1e-5);
        }
    }

    #[test]
    fn integrate_step_zero_drift_and_linear_decay() {
        let zero = LinearDynamics::new(2, vec![0.0; 4]);
        let u = [1.0, -2.0];
        assert_eq!(integrate_step(&zero, &u, 0.3, &[0.0, 0.0]), vec![1.0, -2.0]);

        // u' = -u over one step matches exp(-dt) to O(dt⁵).
        let decay = LinearDynamics::new(1, vec![-1.0]);
        let dt = 0.1;
        let got = integrate_step(&decay, &[1.0], dt, &[0.0])[0];
        let want = (-dt).exp();
        assert!((got - want).abs() < dt.powi(5), "{got} vs {want}");
    }

    #[test]
    fn lorenz_step_matches_substepped_oracle() {
        // The sub-stepped oracle is converged to ~1e-12; a single step can
        // only match it to its own local truncation error, which for this
        // flow at dt = 0.025 is 2.1e-4 (the drift's higher derivatives are
        // large). The order check below pins down fourth-order convergence.
        let m = Lorenz63::default();
        let oracle = |u0: &[f64], dt: f64| {
            let mut u = u0.to_vec();
            for _ in 0..100 {
                u = integrate_step(&m, &u, dt / 100.0, &[0.0; 3]);
            }
            u
        };
        let max_err = |dt: f64| {
            let got = integrate_step(&m, &[1.0, 1.0, 1.0], dt, &[0.0; 3]);
            let want = oracle(&[1.0, 1.0, 1.0], dt);
            got.iter()
                .zip(&want)
                .map(|(g, w)| (g - w).abs())
                .fold(0.0_f64, f64::max)
        };
        let coarse = max_err(0.025);
        assert!(coarse < 2.5e-4, "one-step error {coarse}");
        // A fifth-order local error shrinks 32x when dt halves.
        let fine = max_err(0.0125);
        let ratio = coarse / fine;
        assert!(
            (20.0..45.0).contains(&ratio),
            "local error ratio {ratio} not fourth-order"
        );
    }

    #[test]
    fn step_jacobian_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let m = Lorenz63::default();
        let dt = 0.025;
        for _ in 0..10 {
            let u: Vec<f64> = (0..3).map(|_| 10.0 * (rng.gen::<f64>() - 0.5)).collect();
            let j = step_jacobian(&m, &u, dt);
            let h = 1e-6;
            for c in 0..3 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[c] += h;
                um[c] -= h;
                let fp = integrate_step(&m, &up, dt, &[0.0; 3]);
                let fm = integrate_step(&m, &um, dt, &[0.0; 3]);
                for r in 0..3 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!(
                        (j[r * 3 + c] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                        "step jacobian ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn simulate_contracts() {
        let m = Lorenz63::default();
        let one = simulate(&m, &[1.0, 2.0, 3.0], 1, 0.025, 0.5, 42);
        assert_eq!(one.steps(), 1);
        assert_eq!(one.as_slice(), &[1.0, 2.0, 3.0]);

        let a = simulate(&m, &[1.0, 1.0, 1.0], 16, 0.025, 0.2, 7);
        let b = simulate(&m, &[1.0, 1.0, 1.0], 16, 0.025, 0.2, 7);
        let c = simulate(&m, &[1.0, 1.0, 1.0], 16, 0.025, 0.2, 8);
        assert_eq!(a, b, "same seed must be bit-identical");
        assert_ne!(a, c, "different seeds must differ");
    }

    #[test]
    fn pendulum_energy_drift_is_small() {
        // Noise-free small-angle pendulum at fine dt: energy is nearly conserved.
        let m = Pendulum::default();
        let traj = simulate(&m, &[0.1, 0.0], 100, 0.01, 0.0, 0);
        let energy = |s: &[f64]| 0.5 * s[1] * s[1] + m.omega2 * (1.0 - s[0].cos());
        let e0 = energy(traj.state(0));
        for t in 0..traj.steps() {
            assert!((energy(traj.state(t)) - e0).abs() < 1e-4);
        }
    }

    #[test]
    fn trajectory_layout_round_trip() {
        let states = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let traj = Trajectory::from_states(2, &states);
        assert_eq!(traj.dim(), 6);
        for (t, s) in states.iter().enumerate() {
            assert_eq!(traj.state(t), s.as_slice());
        }
        assert_eq!(traj.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn normalizer_round_trip_and_unit_moments() {
        let m = Lorenz63::default();
        let batch: Vec<Trajectory> = (0..64)
            .map(|i| {
                let u0 = burn_in(&m, &[0.3 + 0.01 * i as f64, -0.2, 0.1], 500, 0.025);
                simulate(&m, &u0, 32, 0.025, 0.025_f64.sqrt(), 100 + i)
            })
            .collect();
        let norm = Normalizer::fit(&batch).unwrap();
        let normalized: Vec<Trajectory> = batch.iter().map(|t| norm.normalize(t)).collect();

        // Refit on the normalized set: mean ≈ 0, std ≈ 1.
        let refit = Normalizer::fit(&normalized).unwrap();
        for c in 0..3 {
            assert!(refit.mean[c].abs() < 1e-8, "mean[{c}] = {}", refit.mean[c]);
            assert!((refit.std[c] - 1.0).abs() < 1e-8);
        }

        let back = norm.denormalize(&normalized[0]);
        for (a, b) in back.as_slice().iter().zip(batch[0].as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
