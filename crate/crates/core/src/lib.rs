//! Censored quantile regression with small neural networks.
//!
//! The crate fits conditional quantiles of a latent variable that is only
//! observed through a clipping threshold, using the censored tilted loss, and
//! compares against the uncensored tilted loss and a Tobit likelihood.

mod error;

pub mod datagen;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod normal;
pub mod replicate;
pub mod seeds;
pub mod tobit;
pub mod training;

pub use error::{Error, Result};
