//! Doc-test shim for the book under `book/`.
//!
//! mdbook does not run snippets against workspace dependencies, so each
//! chapter is included here as a module doc and `cargo test --doc` compiles
//! and runs every fenced Rust block. Editing a chapter therefore breaks the
//! build if its code drifts out of sync with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/trajectories-and-models.md")]
pub mod trajectories_and_models {}

#[doc = include_str!("../../../book/src/observations.md")]
pub mod observations {}

#[doc = include_str!("../../../book/src/banded-solvers.md")]
pub mod banded_solvers {}

#[doc = include_str!("../../../book/src/gaussian-interpolation.md")]
pub mod gaussian_interpolation {}

#[doc = include_str!("../../../book/src/weak-constraint-4dvar.md")]
pub mod weak_constraint_4dvar {}

#[doc = include_str!("../../../book/src/neural-assimilation.md")]
pub mod neural_assimilation {}

#[doc = include_str!("../../../book/src/coarse-to-fine.md")]
pub mod coarse_to_fine {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
