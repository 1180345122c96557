pub mod autodiff;
pub mod cli;
pub mod error;
pub mod io;
mod fastmath;
pub mod metrics;
pub mod model;
pub mod occlusion;
pub mod optim;
pub mod pretrain;
pub mod refine;
pub mod skeleton;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
