//! Core library for a state-specific model of streaming action
//! understanding: memory compression into critical states, action-dynamics
//! modeling on a state-transition graph, cross-temporal refinement, a joint
//! training objective, and the synthetic benchmark plus metrics used to
//! verify all of it at desk scale.
//!
//! The numeric core is generic over the scalar type ([`numerics::Scalar`],
//! implemented for `f32` and `f64`). The model, harness, and file formats
//! use the `f64` aliases re-exported at the crate root.

pub mod apl;
pub mod csmc;
pub mod cti;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod objective;
pub mod synthdata;

pub use error::{FormatError, Result, SsmError};

/// Default-precision tensor used by the model and harness.
pub type Tensor = numerics::Tensor<f64>;
/// Default-precision autodiff tape.
pub type Tape = numerics::Tape<f64>;
/// Default-precision tape variable.
pub type Var = numerics::Var<f64>;
/// Default-precision parameter store.
pub type ParamStore = numerics::ParamStore<f64>;
