//! Recurrent and feed-forward pain classifiers for 24-channel fNIRS windows,
//! written from scratch with manual backpropagation.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod numerics;
pub mod report;
pub mod seeding;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
