//! Numerical laboratory for reaction-diffusion-advection equations with KPP
//! type reactions: spreading estimates, virtual linearity, nonlocal
//! diffusion and homogenization of front speeds.

pub mod batch;
pub mod error;
pub mod field;
pub mod front;
pub mod grid;
pub mod homog;
pub mod kpp;
pub mod local;
pub mod nonlocal;
pub mod subsolution;
pub mod vlin;

pub use error::{LabError, Result};
