//! Top-k multiclass losses, their projections and proximal maps, and
//! linear models trained with SDCA or gradient descent.

pub mod cli;
pub mod dataset;
pub mod entropy;
pub mod error;
pub mod gd;
pub mod lambert;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod projections;
pub mod sdca;
pub mod train;
pub mod util;

pub use error::{Error, Result};
