//! Weak-constraint 4D-Var: Gauss–Newton descent on a model-based
//! trajectory prior.
//!
//! The prior penalizes the initial state against a background and every
//! transition against one deterministic integrator step:
//!
//! ```text
//! U(x) = ½‖x₀ − x_b‖²_{B⁻¹} + ½ Σ_t ‖x_{t+1} − F(x_t)‖²_{Q⁻¹}
//! ```
//!
//! The full assimilation objective adds the data term `½‖Hx − y‖²/ρ²`.
//! Each outer iteration expands `U` to second order around the current
//! estimate `z` (Gauss–Newton: the curvature is `JᵀWJ` of the stacked
//! residual Jacobians, block-bidiagonal in time and therefore banded with
//! half bandwidth `2φ − 1`), turns the expansion into a banded Gaussian
//! prior, solves the resulting MAP problem in closed form, and moves toward
//! the solution under a backtracking line search with Levenberg damping.

use nalgebra::DMatrix;

use crate::band::BandMatrix;
use crate::dynamics::{integrate_step, step_jacobian, Dynamics, Trajectory};
use crate::error::Result;
use crate::gaussian::{map_banded, BandGaussianPrior};
use crate::observation::ObservationProcess;

/// Weak-constraint trajectory prior: dynamical model, step size, isotropic
/// per-step model-error covariance `Q = q·I_φ`, and a Gaussian background
/// `N(x_b, B)` on the initial state.
pub struct WeakConstraintCost<'a> {
    pub model: &'a dyn Dynamics,
    pub dt: f64,
    q: f64,
    background_mean: Vec<f64>,
    b_inv: DMatrix<f64>,
}

impl<'a> WeakConstraintCost<'a> {
    pub fn new(
        model: &'a dyn Dynamics,
        dt: f64,
        process_noise_var: f64,
        background_mean: Vec<f64>,
        background_cov: DMatrix<f64>,
    ) -> Self {
        let phi = model.phase_dim();
        assert_eq!(background_mean.len(), phi);
        assert_eq!(background_cov.nrows(), phi);
        assert!(process_noise_var > 0.0, "Q must be SPD");
        let b_inv = background_cov
            .cholesky()
            .expect("background covariance must be SPD")
            .inverse();
        Self {
            model,
            dt,
            q: process_noise_var,
            background_mean,
            b_inv,
        }
    }

    pub fn phase_dim(&self) -> usize {
        self.model.phase_dim()
    }

    /// The model-based prior term `U(x)`.
    pub fn cost_u(&self, x: &Trajectory) -> f64 {
        let phi = self.phase_dim();
        assert_eq!(x.phase_dim(), phi);
        let zero = vec![0.0; phi];

        // Background term.
        let d0: Vec<f64> = x
            .state(0)
            .iter()
            .zip(&self.background_mean)
            .map(|(a, b)| a - b)
            .collect();
        let mut total = 0.0;
        for r in 0..phi {
            for c in 0..phi {
                total += 0.5 * d0[r] * self.b_inv[(r, c)] * d0[c];
            }
        }

        // Model-error terms.
        for t in 0..x.steps().saturating_sub(1) {
            let f = integrate_step(self.model, x.state(t), self.dt, &zero);
            let next = x.state(t + 1);
            for i in 0..phi {
                let r = next[i] - f[i];
                total += 0.5 * r * r / self.q;
            }
        }
        total
    }

    /// Exact gradient of [`Self::cost_u`], accumulated with the adjoint of
    /// the integrator step.
    pub fn grad_u(&self, x: &Trajectory) -> Vec<f64> {
        let phi = self.phase_dim();
        let steps = x.steps();
        let zero = vec![0.0; phi];
        let mut grad = vec![0.0; x.dim()];

        // Background contribution at t = 0.
        let d0: Vec<f64> = x
            .state(0)
            .iter()
            .zip(&self.background_mean)
            .map(|(a, b)| a - b)
            .collect();
        for r in 0..phi {
            for c in 0..phi {
                grad[r] += self.b_inv[(r, c)] * d0[c];
            }
        }

        // Each residual r_t = (x_{t+1} - F(x_t))/q adds +r_t at t+1 and
        // -J_F(x_t)ᵀ r_t at t.
        for t in 0..steps.saturating_sub(1) {
            let f = integrate_step(self.model, x.state(t), self.dt, &zero);
            let jac = step_jacobian(self.model, x.state(t), self.dt);
            let next = x.state(t + 1);
            let r: Vec<f64> = (0..phi).map(|i| (next[i] - f[i]) / self.q).collect();
            for i in 0..phi {
                grad[(t + 1) * phi + i] += r[i];
            }
            for c in 0..phi {
                let mut s = 0.0;
                for rr in 0..phi {
                    s += jac[rr * phi + c] * r[rr];
                }
                grad[t * phi + c] -= s;
            }
        }
        grad
    }

    /// The full assimilation objective: prior plus data term.
    pub fn full_objective(&self, proc: &ObservationProcess, y: &[f64], x: &Trajectory) -> f64 {
        let mut total = self.cost_u(x);
        if proc.num_observed() > 0 {
            let rho2 = proc.noise_std() * proc.noise_std();
            let hx = proc.apply_h(x.as_slice()).expect("dims checked by caller");
            for (hx_i, y_i) in hx.iter().zip(y) {
                let r = hx_i - y_i;
                total += 0.5 * r * r / rho2;
            }
        }
        total
    }

    /// Gauss–Newton expansion of `U` around `z`, as a banded Gaussian prior:
    /// precision `Λ(z) = JᵀWJ` (plus `λI` damping) and mean
    /// `μ(z) = z − Λ(z)⁻¹ ∇U(z)`, the Newton step computed by a band solve.
    pub fn local_quadratic(&self, z: &Trajectory) -> Result<BandGaussianPrior> {
        self.local_quadratic_damped(z, 0.0)
    }

    /// [`Self::local_quadratic`] with Levenberg damping `λ ≥ 0` added to the
    /// diagonal of the curvature.
    pub fn local_quadratic_damped(&self, z: &Trajectory, lambda: f64) -> Result<BandGaussianPrior> {
        let phi = self.phase_dim();
        let steps = z.steps();
        let d = z.dim();
        let hb = if steps > 1 { 2 * phi - 1 } else { phi - 1 };
        let mut curvature = BandMatrix::zeros(d, hb);

        // Background block B⁻¹ at (0, 0); lower triangle only.
        for r in 0..phi {
            for c in 0..=r {
                curvature.add(r, c, self.b_inv[(r, c)]);
            }
        }

        for t in 0..steps.saturating_sub(1) {
            let jac = step_jacobian(self.model, z.state(t), self.dt);
            // (t, t) block: JᵀJ / q, lower triangle.
            for r in 0..phi {
                for c in 0..=r {
                    let mut s = 0.0;
                    for k in 0..phi {
                        s += jac[k * phi + r] * jac[k * phi + c];
                    }
                    curvature.add(t * phi + r, t * phi + c, s / self.q);
                }
            }
            // (t+1, t+1) block: I / q.
            for r in 0..phi {
                curvature.add((t + 1) * phi + r, (t + 1) * phi + r, 1.0 / self.q);
            }
            // (t+1, t) block: -J / q, entirely below the diagonal.
            for r in 0..phi {
                for c in 0..phi {
                    curvature.add((t + 1) * phi + r, t * phi + c, -jac[r * phi + c] / self.q);
                }
            }
        }
        if lambda > 0.0 {
            curvature.add_scaled_identity(lambda);
        }

        let factor = curvature.cholesky()?;
        let newton = factor.solve(&self.grad_u(z))?;
        let mean: Vec<f64> = z
            .as_slice()
            .iter()
            .zip(&newton)
            .map(|(zi, ni)| zi - ni)
            .collect();
        Ok(BandGaussianPrior::new(mean, factor))
    }
}

/// Why a Gauss–Newton run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Full objective fell below the requested tolerance.
    ObjectiveBelowTol,
    /// Relative objective decrease fell below `1e-10`.
    SmallDecrease,
    /// The proposed move had negligible length; `z` is a fixed point.
    FixedPoint,
    /// Iteration budget exhausted.
    MaxIters,
    /// No damping/step-size combination decreased the objective.
    LineSearchFailure,
}

/// Record of a Gauss–Newton descent run.
#[derive(Debug, Clone)]
pub struct GaussNewtonTrace {
    /// Accepted iterates `z_0 ..= z_K`.
    pub iterates: Vec<Trajectory>,
    /// Full objective at each iterate; non-increasing by construction.
    pub objectives: Vec<f64>,
    /// Accepted step size per iteration.
    pub alphas: Vec<f64>,
    /// Damping parameter per iteration.
    pub lambdas: Vec<f64>,
    pub stop: StopReason,
    /// Number of accepted steps.
    pub iterations: usize,
}

impl GaussNewtonTrace {
    pub fn estimate(&self) -> &Trajectory {
        self.iterates.last().expect("trace holds at least z_0")
    }

    pub fn final_objective(&self) -> f64 {
        *self.objectives.last().unwrap()
    }

    /// First accepted step index whose objective is below `threshold`
    /// (0 when already below at the start), or `None` if never reached.
    pub fn iterations_to_objective(&self, threshold: f64) -> Option<usize> {
        self.objectives.iter().position(|&j| j < threshold)
    }

    /// Accepted steps strictly decrease the objective.
    pub fn is_monotone(&self) -> bool {
        self.objectives.windows(2).all(|w| w[1] < w[0])
    }
}

/// Options for [`run_weak_4dvar`].
#[derive(Debug, Clone, Copy)]
pub struct GaussNewtonOptions {
    pub max_iters: usize,
    /// Stop once the full objective falls below this value.
    pub tol_objective: Option<f64>,
    /// Initial Levenberg damping; ×10 on rejected proposals, ÷10 on accepts.
    pub lambda_init: f64,
    /// Largest step size the backtracking grid tries. 1 gives full
    /// Gauss–Newton steps; smaller values under-relax the update, trading
    /// per-iteration progress for robustness on multimodal objectives.
    pub alpha_max: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol_objective: None,
            lambda_init: 1e-3,
            alpha_max: 1.0,
        }
    }
}

const LAMBDA_MAX: f64 = 1e8;
const LAMBDA_MIN: f64 = 1e-12;
const REL_DECREASE_TOL: f64 = 1e-10;

/// Incremental weak-constraint 4D-Var.
///
/// Repeats: expand the prior around `z_k`, solve the banded MAP problem for
/// `x_k`, then move `z_{k+1} = z_k + α_k (x_k − z_k)` with `α_k` from a
/// backtracking grid `{1, ½, …, 2⁻⁸}`, escalating the Levenberg damping when
/// no step size decreases the objective. Accepted steps strictly decrease
/// the full objective.
pub fn run_weak_4dvar(
    y: &[f64],
    proc: &ObservationProcess,
    z0: &Trajectory,
    cost: &WeakConstraintCost,
    options: &GaussNewtonOptions,
) -> Result<GaussNewtonTrace> {
    let mut z = z0.clone();
    let mut objective = cost.full_objective(proc, y, &z);
    let mut lambda = options.lambda_init;

    let mut trace = GaussNewtonTrace {
        iterates: vec![z.clone()],
        objectives: vec![objective],
        alphas: Vec::new(),
        lambdas: Vec::new(),
        stop: StopReason::MaxIters,
        iterations: 0,
    };

    for _ in 0..options.max_iters {
        if let Some(tol) = options.tol_objective {
            if objective < tol {
                trace.stop = StopReason::ObjectiveBelowTol;
                return Ok(trace);
            }
        }

        // Propose steps, escalating damping until one is accepted.
        let accepted = loop {
            let prior = cost.local_quadratic_damped(&z, lambda)?;
            let x_gn = map_banded(y, proc, &prior)?;

            let move_norm: f64 = x_gn
                .iter()
                .zip(z.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let z_norm: f64 = z.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            if move_norm <= 1e-10 * (1.0 + z_norm) {
                trace.stop = StopReason::FixedPoint;
                return Ok(trace);
            }

            let mut hit = None;
            for p in 0..=8 {
                let alpha = options.alpha_max * 0.5_f64.powi(p);
                let cand_values: Vec<f64> = z
                    .as_slice()
                    .iter()
                    .zip(&x_gn)
                    .map(|(zi, xi)| zi + alpha * (xi - zi))
                    .collect();
                let cand = z.with_values(cand_values);
                let cand_obj = cost.full_objective(proc, y, &cand);
                if cand_obj.is_finite() && cand_obj < objective {
                    hit = Some((alpha, cand, cand_obj));
                    break;
                }
            }
            match hit {
                Some(step) => break step,
                None => {
                    lambda = (lambda * 10.0).max(1e-4);
                    if lambda > LAMBDA_MAX {
                        trace.stop = StopReason::LineSearchFailure;
                        return Ok(trace);
                    }
                }
            }
        };

        let (alpha, next, next_obj) = accepted;
        trace.alphas.push(alpha);
        trace.lambdas.push(lambda);
        lambda = (lambda / 10.0).max(LAMBDA_MIN);
        let decrease = objective - next_obj;
        z = next;
        objective = next_obj;
        trace.iterates.push(z.clone());
        trace.objectives.push(objective);
        trace.iterations += 1;

        if decrease <= REL_DECREASE_TOL * objective.abs().max(1.0) {
            trace.stop = StopReason::SmallDecrease;
            return Ok(trace);
        }
    }
    if let Some(tol) = options.tol_objective {
        if objective < tol {
            trace.stop = StopReason::ObjectiveBelowTol;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, LinearDynamics, Lorenz63, Pendulum};
    use crate::gaussian::{build_linear_pendulum_prior, map_dense};
    use crate::observation::sample_process;
    use nalgebra::{Matrix2, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lorenz_cost(model: &Lorenz63) -> WeakConstraintCost<'_> {
        WeakConstraintCost::new(
            model,
            0.025,
            0.025,
            vec![1.0, 1.0, 20.0],
            DMatrix::identity(3, 3) * 60.0,
        )
    }

    #[test]
    fn cost_u_zero_on_noise_free_rollout() {
        let model = Lorenz63::default();
        let cost = lorenz_cost(&model);
        let traj = simulate(&model, &[1.0, 1.0, 20.0], 12, 0.025, 0.0, 0);
        assert!(cost.cost_u(&traj).abs() < 1e-20);
    }

    #[test]
    fn cost_u_single_step_hand_case() {
        // Scalar drift 0 (so F(u) = u): U = ½(x₀−x_b)²/B + ½(x₁−x₀)²/Q.
        let model = LinearDynamics::new(1, vec![0.0]);
        let cost = WeakConstraintCost::new(
            &model,
            0.1,
            0.5,
            vec![0.2],
            DMatrix::from_element(1, 1, 2.0),
        );
        let x = Trajectory::new(1, 2, vec![1.0, 1.7]);
        let want = 0.5 * (1.0 - 0.2_f64).powi(2) / 2.0 + 0.5 * (1.7 - 1.0_f64).powi(2) / 0.5;
        assert!((cost.cost_u(&x) - want).abs() < 1e-14);
    }

    #[test]
    fn cost_u_matches_independent_evaluation() {
        // Straightforward re-implementation with dense small-matrix algebra.
        let model = Lorenz63::default();
        let cost = lorenz_cost(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let vals: Vec<f64> = (0..3 * 10).map(|_| 30.0 * (rng.gen::<f64>() - 0.5)).collect();
            let x = Trajectory::new(3, 10, vals);

            let b_inv = DMatrix::identity(3, 3) / 60.0;
            let xb = [1.0, 1.0, 20.0];
            let d0 = nalgebra::DVector::from_iterator(
                3,
                x.state(0).iter().zip(&xb).map(|(a, b)| a - b),
            );
            let mut want = 0.5 * (d0.transpose() * &b_inv * &d0)[(0, 0)];
            for t in 0..9 {
                let f = integrate_step(&model, x.state(t), 0.025, &[0.0; 3]);
                for i in 0..3 {
                    want += 0.5 * (x.state(t + 1)[i] - f[i]).powi(2) / 0.025;
                }
            }
            assert!((cost.cost_u(&x) - want).abs() < 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn grad_u_zero_at_zero_residual() {
        let model = Lorenz63::default();
        let cost = lorenz_cost(&model);
        let traj = simulate(&model, &[1.0, 1.0, 20.0], 10, 0.025, 0.0, 0);
        let g = cost.grad_u(&traj);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grad_u_matches_finite_differences() {
        let model = Lorenz63::default();
        let cost = lorenz_cost(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vals: Vec<f64> = (0..3 * 8).map(|_| 20.0 * (rng.gen::<f64>() - 0.5)).collect();
        let x = Trajectory::new(3, 8, vals);
        let g = cost.grad_u(&x);
        let h = 1e-6;
        for i in 0..x.dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_mut_slice()[i] += h;
            xm.as_mut_slice()[i] -= h;
            let fd = (cost.cost_u(&xp) - cost.cost_u(&xm)) / (2.0 * h);
            assert!(
                (g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "grad[{i}]: {} vs fd {fd}",
                g[i]
            );
        }

        let pend = Pendulum::default();
        let cost = WeakConstraintCost::new(
            &pend,
            0.1,
            0.01,
            vec![0.0, 0.0],
            DMatrix::identity(2, 2),
        );
        let vals: Vec<f64> = (0..2 * 8).map(|_| 3.0 * (rng.gen::<f64>() - 0.5)).collect();
        let x = Trajectory::new(2, 8, vals);
        let g = cost.grad_u(&x);
        for i in 0..x.dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_mut_slice()[i] += h;
            xm.as_mut_slice()[i] -= h;
            let fd = (cost.cost_u(&xp) - cost.cost_u(&xm)) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }

    /// Linear dynamics make U exactly quadratic; its precision is the
    /// Gauss–Newton curvature and its mean the deterministic rollout.
    #[test]
    fn linear_model_quadratic_structure() {
        let lin = LinearDynamics::linearized_pendulum(1.0);
        let steps = 7;
        let q = 0.05;
        let b = Matrix2::new(0.4, 0.1, 0.1, 0.3);
        let cost = WeakConstraintCost::new(
            &lin,
            0.1,
            q,
            vec![0.3, -0.2],
            DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]),
        );

        let rollout = simulate(&lin, &[0.3, -0.2], steps, 0.1, 0.0, 0);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let z_vals: Vec<f64> = (0..2 * steps).map(|_| rng.gen::<f64>() - 0.5).collect();
        let z = Trajectory::new(2, steps, z_vals);
        let prior = cost.local_quadratic(&z).unwrap();

        // μ(z) is z-independent and equals the exact prior mean.
        for (got, want) in prior.mean.iter().zip(rollout.as_slice()) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        let z2 = Trajectory::new(2, steps, vec![0.25; 2 * steps]);
        let prior2 = cost.local_quadratic(&z2).unwrap();
        for (a, b) in prior.mean.iter().zip(&prior2.mean) {
            assert!((a - b).abs() < 1e-9);
        }

        // Λ matches the dense JᵀWJ oracle and the analytic prior precision.
        let pend = Pendulum { omega2: 1.0 };
        let dense_prior = build_linear_pendulum_prior(
            &pend,
            steps,
            0.1,
            Vector2::new(0.3, -0.2),
            b,
            Matrix2::identity() * q,
        );
        let lambda = prior.precision_factor.reconstruct().to_dense();
        let want_precision = dense_prior.cov().clone().try_inverse().unwrap();
        let err = (&lambda - &want_precision).amax() / want_precision.amax();
        assert!(err < 1e-8, "precision mismatch {err}");

        // Gradient of U matches the quadratic form Λ(x - μ).
        let g = cost.grad_u(&z);
        let diff = nalgebra::DVector::from_iterator(
            2 * steps,
            z.as_slice().iter().zip(&prior.mean).map(|(a, b)| a - b),
        );
        let want_g = &lambda * diff;
        for (a, b) in g.iter().zip(want_g.iter()) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn local_quadratic_band_structure_and_stationary_point() {
        let model = Lorenz63::default();
        let cost = lorenz_cost(&model);
        let traj = simulate(&model, &[1.0, 1.0, 20.0], 9, 0.025, 0.0, 0);

        // At a zero-gradient point the expansion mean is the point itself.
        let prior = cost.local_quadratic(&traj).unwrap();
        for (a, b) in prior.mean.iter().zip(traj.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }

        // All curvature entries with |i-j| > 2φ-1 vanish; compare against a
        // dense stacked-Jacobian oracle.
        let phi = 3;
        let steps = 9;
        let d = phi * steps;
        let lambda = prior.precision_factor.reconstruct().to_dense();
        let mut dense = DMatrix::zeros(d, d);
        dense
            .view_mut((0, 0), (phi, phi))
            .copy_from(&(DMatrix::identity(3, 3) / 60.0));
        for t in 0..steps - 1 {
            let jac = step_jacobian(&model, traj.state(t), 0.025);
            let j = DMatrix::from_row_slice(phi, phi, &jac);
            let jtj = j.transpose() * &j / 0.025;
            for r in 0..phi {
                for c in 0..phi {
                    dense[(t * phi + r, t * phi + c)] += jtj[(r, c)];
                    dense[((t + 1) * phi + r, t * phi + c)] += -j[(r, c)] / 0.025;
                    dense[(t * phi + r, (t + 1) * phi + c)] += -j.transpose()[(r, c)] / 0.025;
                }
                dense[((t + 1) * phi + r, (t + 1) * phi + r)] += 1.0 / 0.025;
            }
        }
        let err = (&lambda - &dense).amax() / dense.amax();
        assert!(err < 1e-12, "curvature oracle mismatch {err}");
        for i in 0..d {
            for j in 0..d {
                if i.abs_diff(j) > 2 * phi {
                    assert_eq!(lambda[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn linear_gaussian_converges_in_one_undamped_iteration() {
        let lin = LinearDynamics::linearized_pendulum(1.0);
        let steps = 12;
        let q = 0.05;
        let cost = WeakConstraintCost::new(
            &lin,
            0.1,
            q,
            vec![0.2, 0.0],
            DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.2]),
        );
        let pend = Pendulum { omega2: 1.0 };
        let dense_prior = build_linear_pendulum_prior(
            &pend,
            steps,
            0.1,
            Vector2::new(0.2, 0.0),
            Matrix2::new(0.3, 0.0, 0.0, 0.2),
            Matrix2::identity() * q,
        );

        let proc = sample_process(2, steps, &[0], 0.4, 0.05, true, 3).unwrap();
        let truth = simulate(&lin, &[0.35, -0.1], steps, 0.1, 0.0, 0);
        let y = proc.observe(truth.as_slice(), 9).unwrap();

        let z0 = Trajectory::zeros(2, steps);
        let options = GaussNewtonOptions {
            max_iters: 1,
            lambda_init: 0.0,
            ..Default::default()
        };
        let trace = run_weak_4dvar(&y, &proc, &z0, &cost, &options).unwrap();
        assert_eq!(trace.alphas, vec![1.0], "full step must be accepted");

        let want = map_dense(&y, &proc, &dense_prior).unwrap();
        let scale = want.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for (a, b) in trace.estimate().as_slice().iter().zip(&want) {
            assert!((a - b).abs() / scale < 1e-8, "{a} vs {b}");
        }

        // Restarting from the optimum: no movement.
        let trace2 = run_weak_4dvar(&y, &proc, trace.estimate(), &cost, &options).unwrap();
        assert_eq!(trace2.stop, StopReason::FixedPoint);
        assert_eq!(trace2.iterations, 0);
    }

    #[test]
    fn lorenz_descent_is_monotone() {
        let model = Lorenz63::default();
        let cost = lorenz_cost(&model);
        let truth = simulate(&model, &[2.0, 3.0, 22.0], 32, 0.025, 0.025_f64.sqrt(), 4);
        let proc = sample_process(3, 32, &[0], 0.25, 0.4, true, 5).unwrap();
        let y = proc.observe(truth.as_slice(), 6).unwrap();

        // A deliberately poor first guess.
        let z0 = Trajectory::new(3, 32, vec![0.5; 96]);
        let options = GaussNewtonOptions {
            max_iters: 30,
            ..Default::default()
        };
        let trace = run_weak_4dvar(&y, &proc, &z0, &cost, &options).unwrap();
        assert!(trace.iterations > 0);
        assert!(trace.is_monotone(), "objectives: {:?}", trace.objectives);
        // From this deliberately poor first guess the descent settles into a
        // local minimum; it must still make clear progress on the way there.
        assert!(trace.final_objective() < trace.objectives[0] * 0.7);
        // Near the minimum the Newton steps take full length.
        assert_eq!(trace.alphas.last(), Some(&1.0));
    }

    #[test]
    fn full_objective_additivity_and_perfect_fit() {
        let model = Lorenz63::default();
        let cost = lorenz_cost(&model);
        let traj = simulate(&model, &[1.0, 1.0, 20.0], 8, 0.025, 0.0, 0);
        let proc = sample_process(3, 8, &[0, 1], 0.5, 0.3, true, 2).unwrap();

        // Perfect noiseless fit at a zero-residual trajectory.
        let y = proc.apply_h(traj.as_slice()).unwrap();
        assert!(cost.full_objective(&proc, &y, &traj) < 1e-18);

        // Additivity against independently computed terms.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = Trajectory::new(3, 8, (0..24).map(|_| 10.0 * (rng.gen::<f64>() - 0.5)).collect());
        let y: Vec<f64> = (0..proc.num_observed()).map(|_| rng.gen::<f64>()).collect();
        let data: f64 = proc
            .apply_h(x.as_slice())
            .unwrap()
            .iter()
            .zip(&y)
            .map(|(hx, yi)| 0.5 * (hx - yi) * (hx - yi) / 0.09)
            .sum();
        let want = cost.cost_u(&x) + data;
        assert!((cost.full_objective(&proc, &y, &x) - want).abs() < 1e-10 * want.max(1.0));
    }
}
