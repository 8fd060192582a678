//! Linear subsampling observation processes.
//!
//! An observation process is a selection operator `H` (a sorted set of flat
//! trajectory indices) together with isotropic Gaussian noise `R = ρ²·I`.
//! `H` has orthonormal rows, so its adjoint is a scatter and `HᵀR⁻¹H` is
//! diagonal — the property the banded MAP solve relies on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear subsampling observation operator with noise level `noise_std`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObservationProcess {
    state_dim: usize,
    /// Strictly increasing flat indices into the trajectory.
    indices: Vec<usize>,
    noise_std: f64,
}

impl ObservationProcess {
    pub fn new(state_dim: usize, mut indices: Vec<usize>, noise_std: f64) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= state_dim {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    dim: state_dim,
                });
            }
        }
        assert!(noise_std >= 0.0, "noise_std must be non-negative");
        Ok(Self {
            state_dim,
            indices,
            noise_std,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of observed entries `m`.
    pub fn num_observed(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Same geometry with a different noise level.
    pub fn with_noise_std(&self, noise_std: f64) -> Self {
        Self {
            noise_std,
            ..self.clone()
        }
    }

    /// Gathers the observed entries: `H x`.
    pub fn apply_h(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "apply_h",
                expected: self.state_dim,
                got: x.len(),
            });
        }
        Ok(self.indices.iter().map(|&i| x[i]).collect())
    }

    /// Scatters observation-space values back to state space: `Hᵀ v`.
    pub fn apply_ht(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.indices.len() {
            return Err(Error::DimensionMismatch {
                context: "apply_ht",
                expected: self.indices.len(),
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.state_dim];
        for (&i, &val) in self.indices.iter().zip(v) {
            out[i] = val;
        }
        Ok(out)
    }

    /// Draws `y = Hx + ξ`, `ξ ~ N(0, ρ²I)`. Deterministic given `seed`.
    pub fn observe(&self, x: &[f64], seed: u64) -> Result<Vec<f64>> {
        let mut y = self.apply_h(x)?;
        if self.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in y.iter_mut() {
                *v += self.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(y)
    }
}

/// Draws a random observation geometry on a `phase_dim × steps` trajectory:
/// `⌈obs_fraction · steps⌉` distinct time steps chosen uniformly (optionally
/// forcing both endpoints), observing `components` at each chosen step.
pub fn sample_process(
    phase_dim: usize,
    steps: usize,
    components: &[usize],
    obs_fraction: f64,
    noise_std: f64,
    force_endpoints: bool,
    seed: u64,
) -> Result<ObservationProcess> {
    assert!(obs_fraction > 0.0 && obs_fraction <= 1.0);
    assert!(components.iter().all(|&c| c < phase_dim));
    let target = ((obs_fraction * steps as f64).ceil() as usize).clamp(1, steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen: Vec<usize> = Vec::with_capacity(target);
    if force_endpoints {
        chosen.push(0);
        if steps > 1 && target > 1 {
            chosen.push(steps - 1);
        }
    }
    while chosen.len() < target {
        let t = rng.gen_range(0..steps);
        if !chosen.contains(&t) {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();

    let mut indices = Vec::with_capacity(chosen.len() * components.len());
    for &t in &chosen {
        for &c in components {
            indices.push(t * phase_dim + c);
        }
    }
    if indices.is_empty() {
        return Err(Error::EmptyObservation);
    }
    ObservationProcess::new(phase_dim * steps, indices, noise_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_h_full_empty_and_oracle() {
        let full = ObservationProcess::new(4, vec![0, 1, 2, 3], 0.1).unwrap();
        let x = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(full.apply_h(&x).unwrap(), x.to_vec());

        let empty = ObservationProcess::new(4, vec![], 0.1).unwrap();
        assert!(empty.apply_h(&x).unwrap().is_empty());

        // Dense 0/1-matrix oracle on a random mask.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = 12;
        let idx: Vec<usize> = (0..d).filter(|_| rng.gen::<bool>()).collect();
        let proc = ObservationProcess::new(d, idx.clone(), 0.0).unwrap();
        let x: Vec<f64> = (0..d).map(|i| i as f64).collect();
        let mut dense = nalgebra::DMatrix::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            dense[(r, i)] = 1.0;
        }
        let want = dense * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(proc.apply_h(&x).unwrap(), want.as_slice().to_vec());
    }

    #[test]
    fn adjoint_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d = 20;
        for _ in 0..100 {
            let idx: Vec<usize> = (0..d).filter(|_| rng.gen::<f64>() < 0.4).collect();
            let proc = ObservationProcess::new(d, idx, 0.0).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..proc.num_observed())
                .map(|_| rng.gen::<f64>() - 0.5)
                .collect();
            let lhs: f64 = proc.apply_h(&x).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(proc.apply_ht(&v).unwrap()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn ht_is_projection_on_observed_slots() {
        let proc = ObservationProcess::new(5, vec![1, 3], 0.0).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let back = proc.apply_ht(&proc.apply_h(&x).unwrap()).unwrap();
        assert_eq!(back, vec![0.0, 2.0, 0.0, 4.0, 0.0]);

        let full = ObservationProcess::new(3, vec![0, 1, 2], 0.0).unwrap();
        let y = [7.0, 8.0, 9.0];
        assert_eq!(full.apply_ht(&y).unwrap(), y.to_vec());

        // H ∘ Hᵀ is the identity on observation space.
        let v = [0.5, -0.5];
        assert_eq!(
            proc.apply_h(&proc.apply_ht(&v).unwrap()).unwrap(),
            v.to_vec()
        );
    }

    #[test]
    fn observe_noise_statistics_and_determinism() {
        let proc = ObservationProcess::new(2, vec![0, 1], 0.3).unwrap();
        let x = [1.0, -1.0];

        let noiseless = proc.with_noise_std(0.0);
        assert_eq!(noiseless.observe(&x, 5).unwrap(), vec![1.0, -1.0]);

        assert_eq!(
            proc.observe(&x, 5).unwrap(),
            proc.observe(&x, 5).unwrap(),
            "fixed seed must be deterministic"
        );

        // Monte-Carlo: empirical std of y - Hx within 2% of noise_std.
        let n = 100_000;
        let mut sum_sq = 0.0;
        for s in 0..n {
            let y = proc.observe(&x, s as u64).unwrap();
            sum_sq += (y[0] - 1.0).powi(2) + (y[1] + 1.0).powi(2);
        }
        let emp = (sum_sq / (2 * n) as f64).sqrt();
        assert!(
            (emp - 0.3).abs() / 0.3 < 0.02,
            "empirical noise std {emp} vs 0.3"
        );
    }

    #[test]
    fn sample_process_counts_and_randomness() {
        let full = sample_process(3, 32, &[0, 1, 2], 1.0, 0.05, true, 0).unwrap();
        assert_eq!(full.num_observed(), 96);

        let quarter = sample_process(3, 32, &[0], 0.25, 0.05, true, 0).unwrap();
        assert_eq!(quarter.num_observed(), 8);
        // m = 8 observed slots, all on component 0, endpoints included.
        assert!(quarter.indices().iter().all(|i| i % 3 == 0));
        assert!(quarter.indices().contains(&0));
        assert!(quarter.indices().contains(&(31 * 3)));

        let a = sample_process(3, 32, &[0], 0.25, 0.05, true, 1).unwrap();
        let b = sample_process(3, 32, &[0], 0.25, 0.05, true, 2).unwrap();
        assert_ne!(a.indices(), b.indices(), "seeds should differ");
    }

    #[test]
    fn ht_r_inv_h_is_diagonal_scatter() {
        // Verified against dense construction for d ≤ 64.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let d = 64;
        let rho = 0.2;
        let idx: Vec<usize> = (0..d).filter(|_| rng.gen::<f64>() < 0.3).collect();
        let proc = ObservationProcess::new(d, idx.clone(), rho).unwrap();
        let mut dense_h = nalgebra::DMatrix::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            dense_h[(r, i)] = 1.0;
        }
        let want = dense_h.transpose() * &dense_h / (rho * rho);
        for i in 0..d {
            for j in 0..d {
                let expected = if i == j && idx.contains(&i) {
                    1.0 / (rho * rho)
                } else {
                    0.0
                };
                assert!((want[(i, j)] - expected).abs() < 1e-12);
            }
        }
        let _ = proc;
    }
}
