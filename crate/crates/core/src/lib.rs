//! Black-box adversarial patch optimization and evaluation for
//! vision-language driving models.
//!
//! The pipeline: a continuous [`patch::Patch`] is composited into rendered
//! approach frames ([`scenario`]), pushed through random viewing transforms
//! ([`transforms`]), and scored by the semantic distance between a driving
//! oracle's reply and an attacker-chosen target ([`objective`]). The patch is
//! updated by antithetic NES ([`nes`]) using only oracle queries. Trials over
//! the approach schedule are scored by [`metrics`] and persisted by [`run`].

pub mod error;
pub mod image;
pub mod metrics;
pub mod nes;
pub mod objective;
pub mod oracle;
pub mod patch;
pub mod rng;
pub mod run;
pub mod scenario;
pub mod text;
pub mod transforms;

pub use error::{Error, OracleError, Result};

/// Embedded in every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
