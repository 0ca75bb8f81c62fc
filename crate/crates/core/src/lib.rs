//! Pedestrian trajectory prediction with learned social interaction weights,
//! temporal convolutions and a bivariate Gaussian output head.

pub mod baselines;
pub mod config;
pub mod dataio;
mod error;
pub mod evalm;
pub mod gauss;
pub mod ndnum;
pub mod seqnet;
pub mod social;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
