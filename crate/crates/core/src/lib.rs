//! Optimal control of periodic linear advection with full-order adjoint
//! gradients and POD / shifted-POD Galerkin surrogates in the line search.

pub mod error;
pub mod experiment;
pub mod fom;
pub mod frto_adjoint;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod pod;
pub mod spod;

pub use error::{Error, Result};
