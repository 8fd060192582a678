//! Gaussian MAP estimation (optimal interpolation).
//!
//! Under a Gaussian prior `x ~ N(μ, P)` and observations `y = Hx + ξ`,
//! `ξ ~ N(0, ρ²I)`, the MAP state minimizes
//!
//! ```text
//! ½‖x − μ‖²_{P⁻¹} + ½‖Hx − y‖²_{R⁻¹}
//! ```
//!
//! Two equivalent solution routes are provided, each matching a prior
//! representation:
//!
//! * **gain form** ([`map_dense`]): `x = μ + PHᵀ(HPHᵀ + R)⁻¹(y − Hμ)`,
//!   an `m × m` solve, for dense covariance priors with few observations;
//! * **information form** ([`map_banded`]): `(Λ + HᵀR⁻¹H) x = Λμ + HᵀR⁻¹y`
//!   with banded precision `Λ = P⁻¹`, solved by banded Cholesky in
//!   `O(d·b²)`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::band::BandCholesky;
use crate::dynamics::{Pendulum, Trajectory};
use crate::error::{Error, Result};
use crate::observation::ObservationProcess;

/// Gaussian prior with explicit dense covariance.
#[derive(Debug, Clone)]
pub struct DenseGaussianPrior {
    pub mean: Vec<f64>,
    cov: DMatrix<f64>,
}

impl DenseGaussianPrior {
    /// Builds a prior, symmetrizing `cov` and shifting its spectrum if the
    /// smallest eigenvalue falls below `-1e-8 · trace/d`.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Self {
        let d = mean.len();
        assert_eq!(cov.nrows(), d);
        assert_eq!(cov.ncols(), d);
        let mut sym = 0.5 * (&cov + cov.transpose());
        let trace = sym.trace();
        let floor = -1e-8 * trace / d.max(1) as f64;
        let lambda_min = sym
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
        if lambda_min < floor {
            let shift = floor - lambda_min;
            for i in 0..d {
                sym[(i, i)] += shift;
            }
        }
        Self { mean, cov: sym }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Gaussian prior parametrized by a banded Cholesky factor of its precision
/// `Λ = P⁻¹ = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct BandGaussianPrior {
    pub mean: Vec<f64>,
    pub precision_factor: BandCholesky,
}

impl BandGaussianPrior {
    pub fn new(mean: Vec<f64>, precision_factor: BandCholesky) -> Self {
        assert_eq!(mean.len(), precision_factor.dim());
        Self {
            mean,
            precision_factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// MAP estimate in gain form. Solves the `m × m` innovation system rather
/// than inverting it.
pub fn map_dense(
    y: &[f64],
    proc: &ObservationProcess,
    prior: &DenseGaussianPrior,
) -> Result<Vec<f64>> {
    let d = prior.dim();
    if proc.state_dim() != d {
        return Err(Error::DimensionMismatch {
            context: "map_dense state dim",
            expected: d,
            got: proc.state_dim(),
        });
    }
    let m = proc.num_observed();
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            context: "map_dense observations",
            expected: m,
            got: y.len(),
        });
    }
    if m == 0 {
        return Ok(prior.mean.clone());
    }
    let idx = proc.indices();
    let rho2 = proc.noise_std() * proc.noise_std();

    // S = H P Hᵀ + R, by gathering rows and columns of P.
    let mut s = DMatrix::zeros(m, m);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            s[(r, c)] = prior.cov[(i, j)];
        }
        s[(r, r)] += rho2;
    }
    let innovation = DVector::from_iterator(
        m,
        idx.iter().zip(y).map(|(&i, &yi)| yi - prior.mean[i]),
    );
    let chol = s
        .cholesky()
        .ok_or(Error::SingularInnovation { m })?;
    let weights = chol.solve(&innovation);

    // x = μ + P Hᵀ weights: gather columns of P at observed indices.
    let mut x = prior.mean.clone();
    for (c, &j) in idx.iter().enumerate() {
        let w = weights[c];
        for i in 0..d {
            x[i] += prior.cov[(i, j)] * w;
        }
    }
    Ok(x)
}

/// MAP estimate in information form with banded precision. Builds
/// `M = Λ + HᵀR⁻¹H` (a diagonal update for a subsampling `H`), factors it
/// within the band, and solves `M x = Λμ + HᵀR⁻¹y`.
pub fn map_banded(
    y: &[f64],
    proc: &ObservationProcess,
    prior: &BandGaussianPrior,
) -> Result<Vec<f64>> {
    let d = prior.dim();
    if proc.state_dim() != d {
        return Err(Error::DimensionMismatch {
            context: "map_banded state dim",
            expected: d,
            got: proc.state_dim(),
        });
    }
    let m = proc.num_observed();
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            context: "map_banded observations",
            expected: m,
            got: y.len(),
        });
    }
    let lambda = prior.precision_factor.reconstruct();
    // Λμ through the factor: L(Lᵀμ).
    let lt_mu = prior.precision_factor.lower_transpose_matvec(&prior.mean)?;
    let mut rhs = prior.precision_factor.lower_matvec(&lt_mu)?;

    let posterior = if m > 0 {
        assert!(proc.noise_std() > 0.0, "information form needs ρ > 0");
        let r_inv = 1.0 / (proc.noise_std() * proc.noise_std());
        for (&i, &yi) in proc.indices().iter().zip(y) {
            rhs[i] += r_inv * yi;
        }
        lambda.add_to_diagonal(proc.indices(), &vec![r_inv; m])?
    } else {
        lambda
    };
    posterior.cholesky()?.solve(&rhs)
}

/// Empirical-moment Gaussian prior: sample mean and covariance of a
/// trajectory batch, regularized by `1e-6 · trace/d` on the diagonal.
pub fn build_moment_prior(batch: &[Trajectory]) -> Result<DenseGaussianPrior> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let d = batch[0].dim();
    let mut mean = vec![0.0; d];
    for traj in batch {
        assert_eq!(traj.dim(), d);
        for (m, v) in mean.iter_mut().zip(traj.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = DMatrix::zeros(n, d);
    for (r, traj) in batch.iter().enumerate() {
        for (c, v) in traj.as_slice().iter().enumerate() {
            centered[(r, c)] = v - mean[c];
        }
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    let eps = 1e-6 * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += eps;
    }
    Ok(DenseGaussianPrior::new(mean, cov))
}

/// Fourth-order Taylor truncation of `exp(dt · A)`, the transition matrix of
/// the one-step integrator applied to a linear model.
pub fn taylor4_transition(a: &Matrix2<f64>, dt: f64) -> Matrix2<f64> {
    let m = a * dt;
    let m2 = m * m;
    let m3 = m2 * m;
    let m4 = m3 * m;
    Matrix2::identity() + m + m2 / 2.0 + m3 / 6.0 + m4 / 24.0
}

/// Joint Gaussian prior of a pendulum trajectory under the linearized
/// (small-angle) dynamics `x_{t+1} = A x_t + w_t`, `w_t ~ N(0, Q)`, with
/// `A` the fourth-order transition of the linearization — the same map the
/// nonlinear integrator applies in the small-angle limit.
///
/// Block recursions: `μ_{t+1} = A μ_t`, `V_{t+1} = A V_t Aᵀ + Q`, and
/// `Cov(x_s, x_t) = V_s (A^{t−s})ᵀ` for `s ≤ t`.
pub fn build_linear_pendulum_prior(
    pendulum: &Pendulum,
    steps: usize,
    dt: f64,
    init_mean: Vector2<f64>,
    init_cov: Matrix2<f64>,
    process_noise: Matrix2<f64>,
) -> DenseGaussianPrior {
    assert!(steps >= 1);
    let a = taylor4_transition(
        &Matrix2::new(0.0, 1.0, -pendulum.omega2, 0.0),
        dt,
    );
    let mut means = Vec::with_capacity(steps);
    let mut vars = Vec::with_capacity(steps);
    means.push(init_mean);
    vars.push(init_cov);
    for _ in 1..steps {
        let mu = a * means.last().unwrap();
        let v = a * vars.last().unwrap() * a.transpose() + process_noise;
        means.push(mu);
        vars.push(v);
    }

    let d = 2 * steps;
    let mut mean = Vec::with_capacity(d);
    for mu in &means {
        mean.push(mu[0]);
        mean.push(mu[1]);
    }
    let mut cov = DMatrix::zeros(d, d);
    // Powers of A applied progressively: block (s, t) = V_s (A^{t-s})ᵀ.
    for s in 0..steps {
        let mut cross = vars[s];
        for t in s..steps {
            for r in 0..2 {
                for c in 0..2 {
                    cov[(2 * s + r, 2 * t + c)] = cross[(r, c)];
                    cov[(2 * t + c, 2 * s + r)] = cross[(r, c)];
                }
            }
            cross = cross * a.transpose();
        }
    }
    DenseGaussianPrior::new(mean, cov)
}
