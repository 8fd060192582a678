//! Data assimilation on simulated dynamical systems.
//!
//! This crate reconstructs trajectories of small dynamical systems (the
//! nonlinear pendulum and Lorenz 63) from sparse, noisy observations. It
//! provides three families of methods on a common set of types:
//!
//! * **Gaussian interpolation** ([`gaussian`]): closed-form MAP estimation
//!   under a Gaussian prior, in dense gain form and banded information form.
//! * **Weak-constraint 4D-Var** ([`fourdvar`]): Gauss–Newton descent on a
//!   model-based trajectory prior with Levenberg damping and line search.
//! * **Neural incremental assimilation** ([`neural_prior`], [`training`],
//!   [`sampler`]): a learned Gaussian prior whose MAP solve is differentiated
//!   in closed form, trained end-to-end and iterated coarse-to-fine.
//!
//! The banded linear algebra backing the fast MAP solves lives in [`band`];
//! the minimal neural-network engine (MLPs, Adam, temperature embeddings) in
//! [`nn`]. Experiment orchestration, file formats and the `incda` CLI live in
//! [`harness`].

pub mod band;
pub mod dynamics;
pub mod error;
pub mod fourdvar;
pub mod gaussian;
pub mod harness;
pub mod neural_prior;
pub mod nn;
pub mod observation;
pub mod sampler;
pub mod training;

pub use band::{BandCholesky, BandMatrix};
pub use dynamics::{Dynamics, LinearDynamics, Lorenz63, Normalizer, Pendulum, Trajectory};
pub use error::{Error, Result};
pub use fourdvar::{GaussNewtonTrace, WeakConstraintCost};
pub use gaussian::{map_banded, map_dense, BandGaussianPrior, DenseGaussianPrior};
pub use neural_prior::NeuralPrior;
pub use observation::ObservationProcess;
pub use sampler::{ReconstructionResult, UpdateRule};
pub use training::{Sample, TemperatureSchedule};
