//! Graphon mean field games with moderate local interactions: a grid solver
//! for the limiting game, an n-player particle simulator, Nash-gap
//! diagnostics and convergence metrics.

pub mod config;
pub mod error;
pub mod graphon;
pub mod meanfield;
pub mod metrics;
pub mod model;
pub mod nash;
pub mod particles;
pub mod runner;

pub use error::{Error, Result};
