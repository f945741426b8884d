//! Numerical laboratory for a nonlinear Schrodinger equation with a point-concentrated
//! power nonlinearity in three dimensions: soliton family, linearization spectrum, normal-form
//! coefficients, reduced modulation dynamics and dispersive decay checks.

pub mod cli;
pub mod dispersive;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod normalform;
pub mod ode;
pub mod quad;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{Charge2, DeltaConvention, ModelParams, RadialExpSum, Term};
