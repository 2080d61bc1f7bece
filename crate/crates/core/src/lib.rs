//! Kernel ridge regression, random-feature and neural-tangent models, and
//! two-layer networks on anisotropic sphere data, with the harmonic-analysis
//! tools needed to predict their risk.

pub mod activation;
pub mod error;
pub mod experiment;
pub mod features;
pub mod geometry;
pub mod harmonics;
pub mod kernels;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod solvers;

pub use activation::{Activation, ActivationSpec};
pub use error::{Error, Result};
