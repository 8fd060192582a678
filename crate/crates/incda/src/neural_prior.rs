//! The neural Gaussian prior and its assimilation operator.
//!
//! Two networks share a parameter vector θ: `mu_net` produces a residual
//! mean `μ(z; θ, s) = z + net(z, s)` and `prec_net` produces the entries of
//! a banded Cholesky factor `L(z; θ, s)` of the precision
//! `Λ(z; θ, s) = L·Lᵀ`. The diagonal of `L` passes through a softplus with
//! an `ε` floor, so the precision is SPD by construction for any finite
//! parameters — the inner MAP problem stays convex with no projection step.
//!
//! The assimilation operator solves that MAP problem in closed form:
//!
//! ```text
//! A(z, y; θ, s) = argmin ½‖x − μ(z)‖²_Λ + ½‖Hx − y‖²/ρ²
//! ```
//!
//! Because the solve is a banded linear system, its adjoint is another
//! banded solve; [`NeuralPrior::assimilate_vjp`] chains that adjoint through
//! the factor parametrization into both networks, so the operator trains
//! end-to-end without unrolling an iterative solver.
//!
//! The networks depend on neither `y` nor `H`: one trained θ serves any
//! observation geometry.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::band::BandCholesky;
use crate::dynamics::Normalizer;
use crate::error::{Error, Result};
use crate::gaussian::{map_banded, BandGaussianPrior};
use crate::nn::{embed_temperature, Mlp, MlpCache, MlpGrads};
use crate::observation::ObservationProcess;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inverse_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Hyperparameters of a [`NeuralPrior`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralPriorSpec {
    pub phase_dim: usize,
    pub steps: usize,
    pub width: usize,
    /// Number of weight layers per network.
    pub depth: usize,
    pub embed_dim: usize,
    /// Diagonal floor added after the softplus.
    pub eps_l: f64,
}

impl NeuralPriorSpec {
    pub fn state_dim(&self) -> usize {
        self.phase_dim * self.steps
    }

    /// Factor half bandwidth: twice the phase dimension, clamped to the
    /// widest band the state dimension admits.
    pub fn half_bandwidth(&self) -> usize {
        (2 * self.phase_dim).min(self.state_dim() - 1)
    }
}

/// Trained parameters of the neural assimilation operator.
#[derive(Debug, Clone)]
pub struct NeuralPrior {
    spec: NeuralPriorSpec,
    mu_net: Mlp,
    prec_net: Mlp,
    normalizer: Normalizer,
}

/// Gradients for both networks, in the same order as
/// [`NeuralPrior::params_flat`].
#[derive(Debug, Clone)]
pub struct PriorGrads {
    pub mu: MlpGrads,
    pub prec: MlpGrads,
}

impl PriorGrads {
    pub fn zeros_like(prior: &NeuralPrior) -> Self {
        Self {
            mu: MlpGrads::zeros_like(&prior.mu_net),
            prec: MlpGrads::zeros_like(&prior.prec_net),
        }
    }

    pub fn add_scaled(&mut self, other: &PriorGrads, scale: f64) {
        self.mu.add_scaled(&other.mu, scale);
        self.prec.add_scaled(&other.prec, scale);
    }

    pub fn scale(&mut self, factor: f64) {
        self.mu.scale(factor);
        self.prec.scale(factor);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.mu.to_flat();
        out.extend(self.prec.to_flat());
        out
    }
}

/// Everything a backward pass needs from a forward assimilation.
pub struct AssimilationCache {
    mu_cache: MlpCache,
    prec_cache: MlpCache,
    mu: Vec<f64>,
    raw_diag: Vec<f64>,
    factor: BandCholesky,
    posterior_factor: BandCholesky,
    x: Vec<f64>,
}

impl NeuralPrior {
    /// Fresh operator. Both networks start with a zero final layer: the mean
    /// is the identity map `μ = z` and the precision is the identity matrix,
    /// so an untrained operator performs plain optimal interpolation around
    /// its input.
    pub fn new(spec: NeuralPriorSpec, normalizer: Normalizer, seed: u64) -> Self {
        assert!(spec.depth >= 1);
        assert!(spec.embed_dim % 2 == 0);
        let d = spec.state_dim();
        let b = spec.half_bandwidth();
        let input = d + spec.embed_dim;

        let mut mu_dims = vec![input];
        mu_dims.extend(std::iter::repeat(spec.width).take(spec.depth - 1));
        mu_dims.push(d);
        let mut prec_dims = vec![input];
        prec_dims.extend(std::iter::repeat(spec.width).take(spec.depth - 1));
        prec_dims.push(d * (b + 1));

        let mut mu_net = Mlp::new(&mu_dims, seed);
        mu_net.zero_final_layer();
        let mut prec_net = Mlp::new(&prec_dims, seed.wrapping_add(1));
        prec_net.zero_final_layer();
        // Unit diagonal factor at initialization: softplus(bias) + ε = 1.
        let diag_bias = inverse_softplus(1.0 - spec.eps_l);
        for i in 0..d {
            prec_net.set_final_bias(i, diag_bias);
        }
        Self {
            spec,
            mu_net,
            prec_net,
            normalizer,
        }
    }

    pub fn spec(&self) -> &NeuralPriorSpec {
        &self.spec
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    pub fn num_params(&self) -> usize {
        self.mu_net.num_params() + self.prec_net.num_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = self.mu_net.params_flat();
        out.extend(self.prec_net.params_flat());
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let n_mu = self.mu_net.num_params();
        self.mu_net.set_params_flat(&flat[..n_mu]);
        self.prec_net.set_params_flat(&flat[n_mu..]);
    }

    fn network_input(&self, z: &[f64], s: f64) -> Result<Vec<f64>> {
        if z.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "neural prior input",
                expected: self.state_dim(),
                got: z.len(),
            });
        }
        let mut input = z.to_vec();
        input.extend(embed_temperature(s, self.spec.embed_dim)?);
        Ok(input)
    }

    /// Prior mean `μ(z; θ, s) = z + mu_net(z, s)`.
    pub fn prior_mu(&self, z: &[f64], s: f64) -> Result<Vec<f64>> {
        Ok(self.prior_mu_with_cache(z, s)?.0)
    }

    /// Prior mean keeping the forward cache for [`NeuralPrior::mu_vjp`].
    pub fn prior_mu_with_cache(&self, z: &[f64], s: f64) -> Result<(Vec<f64>, MlpCache)> {
        let input = self.network_input(z, s)?;
        let (res, cache) = self.mu_net.forward(&input)?;
        let mu = z.iter().zip(&res).map(|(zi, ri)| zi + ri).collect();
        Ok((mu, cache))
    }

    /// Pulls a mean-space gradient back onto θ; the residual parametrization
    /// passes it straight to `mu_net`, and `prec_net` receives nothing.
    pub fn mu_vjp(&self, cache: &MlpCache, grad_mu: &[f64]) -> Result<PriorGrads> {
        let (mu_grads, _) = self.mu_net.backward(cache, grad_mu)?;
        Ok(PriorGrads {
            mu: mu_grads,
            prec: MlpGrads::zeros_like(&self.prec_net),
        })
    }

    /// Banded precision factor `L(z; θ, s)`; `Λ = L·Lᵀ` is SPD by
    /// construction.
    pub fn prior_precision(&self, z: &[f64], s: f64) -> Result<BandCholesky> {
        let input = self.network_input(z, s)?;
        let (raw, _) = self.prec_net.forward(&input)?;
        Ok(self.factor_from_raw(&raw).0)
    }

    /// Turns raw network outputs (diagonal-major layout, `d` slots per
    /// diagonal) into the factor; returns the raw main-diagonal slice too.
    fn factor_from_raw(&self, raw: &[f64]) -> (BandCholesky, Vec<f64>) {
        let d = self.state_dim();
        let b = self.spec.half_bandwidth();
        let mut diagonals = Vec::with_capacity(b + 1);
        for k in 0..=b {
            let mut diag = Vec::with_capacity(d - k);
            for i in 0..d - k {
                let v = raw[k * d + i];
                diag.push(if k == 0 {
                    softplus(v) + self.spec.eps_l
                } else {
                    v
                });
            }
            diagonals.push(diag);
        }
        let raw_diag = raw[..d].to_vec();
        (BandCholesky::from_diagonals(d, diagonals), raw_diag)
    }

    /// The assimilation operator `A(z, y; θ, s)`: MAP estimation under the
    /// neural prior. Defined for any observation process with ρ > 0 (or
    /// m = 0, where it returns the prior mean).
    pub fn assimilate(
        &self,
        z: &[f64],
        y: &[f64],
        proc: &ObservationProcess,
        s: f64,
    ) -> Result<Vec<f64>> {
        let prior = BandGaussianPrior::new(self.prior_mu(z, s)?, self.prior_precision(z, s)?);
        map_banded(y, proc, &prior)
    }

    /// [`NeuralPrior::assimilate`] keeping every intermediate needed by
    /// [`NeuralPrior::assimilate_vjp`].
    pub fn assimilate_with_cache(
        &self,
        z: &[f64],
        y: &[f64],
        proc: &ObservationProcess,
        s: f64,
    ) -> Result<(Vec<f64>, AssimilationCache)> {
        let d = self.state_dim();
        if proc.state_dim() != d {
            return Err(Error::DimensionMismatch {
                context: "assimilate state dim",
                expected: d,
                got: proc.state_dim(),
            });
        }
        let m = proc.num_observed();
        if y.len() != m {
            return Err(Error::DimensionMismatch {
                context: "assimilate observations",
                expected: m,
                got: y.len(),
            });
        }
        let input = self.network_input(z, s)?;
        let (res, mu_cache) = self.mu_net.forward(&input)?;
        let mu: Vec<f64> = z.iter().zip(&res).map(|(zi, ri)| zi + ri).collect();
        let (raw, prec_cache) = self.prec_net.forward(&input)?;
        let (factor, raw_diag) = self.factor_from_raw(&raw);

        // Posterior precision M = Λ + HᵀR⁻¹H and right-hand side Λμ + HᵀR⁻¹y.
        let lambda = factor.reconstruct();
        let lt_mu = factor.lower_transpose_matvec(&mu)?;
        let mut rhs = factor.lower_matvec(&lt_mu)?;
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
        let posterior_factor = posterior.cholesky()?;
        let x = posterior_factor.solve(&rhs)?;
        Ok((
            x.clone(),
            AssimilationCache {
                mu_cache,
                prec_cache,
                mu,
                raw_diag,
                factor,
                posterior_factor,
                x,
            },
        ))
    }

    /// Pulls a gradient with respect to the MAP output back onto θ.
    ///
    /// With `M = Λ + HᵀR⁻¹H` and `w = M⁻¹ grad_x` (the solve adjoint):
    /// the mean receives `Λ w`, and the precision receives the band-restricted
    /// rank-two gradient `G = w(μ − x)ᵀ`, chained onto the factor as
    /// `∇L = (G + Gᵀ)L` and through the softplus on the diagonal.
    pub fn assimilate_vjp(&self, cache: &AssimilationCache, grad_x: &[f64]) -> Result<PriorGrads> {
        let d = self.state_dim();
        if grad_x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "assimilate vjp",
                expected: d,
                got: grad_x.len(),
            });
        }
        let b = self.spec.half_bandwidth();
        let w = cache.posterior_factor.solve(grad_x)?;

        // Mean path: grad_μ = Λ w through the factor.
        let ltw = cache.factor.lower_transpose_matvec(&w)?;
        let grad_mu = cache.factor.lower_matvec(&ltw)?;

        // Precision path: u = μ − x; ∇L[i][j] = wᵢ(Lᵀu)ⱼ + uᵢ(Lᵀw)ⱼ.
        let u: Vec<f64> = cache.mu.iter().zip(&cache.x).map(|(m, x)| m - x).collect();
        let ltu = cache.factor.lower_transpose_matvec(&u)?;
        let mut grad_raw = vec![0.0; d * (b + 1)];
        for k in 0..=b {
            for j in 0..d - k {
                let i = j + k;
                let g = w[i] * ltu[j] + u[i] * ltw[j];
                grad_raw[k * d + j] = if k == 0 {
                    g * sigmoid(cache.raw_diag[j])
                } else {
                    g
                };
            }
        }

        let (prec_grads, _) = self.prec_net.backward(&cache.prec_cache, &grad_raw)?;
        let (mu_grads, _) = self.mu_net.backward(&cache.mu_cache, &grad_mu)?;
        Ok(PriorGrads {
            mu: mu_grads,
            prec: prec_grads,
        })
    }

    /// Adds scaled gradients into the parameter vector layout.
    pub fn apply_update(&mut self, update: impl FnOnce(&mut [f64])) {
        let mut params = self.params_flat();
        update(&mut params);
        self.set_params_flat(&params);
    }

    /// Writes the checkpoint: a JSON manifest beside a little-endian `f64`
    /// parameter blob (mu_net parameters first, then prec_net).
    pub fn save(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        let manifest = CheckpointManifest {
            spec: self.spec.clone(),
            normalizer: self.normalizer.clone(),
            mu_dims: self.mu_net.dims(),
            prec_dims: self.prec_net.dims(),
            param_count: self.num_params(),
            format: "f64-le".to_string(),
        };
        std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        let params = self.params_flat();
        let mut bytes = Vec::with_capacity(params.len() * 8);
        for p in &params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        std::fs::write(blob_path, bytes)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`NeuralPrior::save`].
    pub fn load(manifest_path: &Path, blob_path: &Path) -> Result<Self> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
        let bytes = std::fs::read(blob_path)?;
        if bytes.len() != manifest.param_count * 8 {
            return Err(Error::InvalidConfig(format!(
                "checkpoint blob holds {} bytes, manifest expects {}",
                bytes.len(),
                manifest.param_count * 8
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut prior = NeuralPrior::new(manifest.spec, manifest.normalizer, 0);
        if prior.mu_net.dims() != manifest.mu_dims || prior.prec_net.dims() != manifest.prec_dims {
            return Err(Error::InvalidConfig(
                "checkpoint layer dims disagree with spec".to_string(),
            ));
        }
        prior.set_params_flat(&params);
        Ok(prior)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    spec: NeuralPriorSpec,
    normalizer: Normalizer,
    mu_dims: Vec<usize>,
    prec_dims: Vec<usize>,
    param_count: usize,
    format: String,
}
