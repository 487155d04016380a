//! Score-based causal representation learning from two hard interventions per
//! latent node.
//!
//! The crate covers synthetic data generation ([`scm`], [`transform`]), an exact
//! score-difference oracle and the estimator interface ([`scores`]), the fitting
//! algorithm itself ([`gscalei`]), evaluation ([`metrics`]), file formats ([`io`])
//! and the seeded experiment driver ([`experiment`]).

pub mod error;
pub mod experiment;
pub mod gscalei;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scm;
pub mod scores;
pub mod transform;

pub use error::{Error, Result};
