//! Wasserstein neural process engine: a reverse-mode autodiff tape,
//! exact 1D and sliced Wasserstein distances, a conditional neural
//! process model, distribution-matching losses, and a training loop
//! with episode generators for three benchmark tasks.

pub mod cnp;
pub mod diffmath;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod selfcheck;
pub mod tasks;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
