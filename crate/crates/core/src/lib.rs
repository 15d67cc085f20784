//! Positive boundary-controlled linear systems on a discretised interval.
//!
//! The crate realises transport-type generators as Metzler matrices on a
//! weighted ℓ¹ grid space and audits them for positivity, admissibility of
//! boundary control, domination under boundary perturbations and
//! exponential input-to-state stability through the small-gain radius
//! `r(R(0,A)P)`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cone;
pub mod control;
pub mod error;
pub mod generator;
pub mod iss;
pub mod linalg;
pub mod parallel;
pub mod perturbation;
pub mod sampling;
pub mod scenarios;
pub mod semigroup;
pub mod signal;

pub use cone::{GridSpace, GridVector};
pub use control::{ControlOperator, InputMap};
pub use error::{Error, Result};
pub use generator::{build_upwind_generator, BoundaryCondition, GeneratorModel, SpectralReport};
pub use iss::{iss_verdict, IssReport, Verdict};
pub use parallel::Execution;
pub use perturbation::{assemble_perturbed, PerturbedSystem};
pub use scenarios::{Profile, ScenarioSpec};
pub use semigroup::{EvolutionPlan, Method, Trajectory};
pub use signal::{InputNorm, InputSignal};
