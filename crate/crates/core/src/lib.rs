//! Multivariate time-series anomaly detection with a purified generative
//! forecasting/reconstruction backbone, a six-component calibrated ensemble
//! score, and factor-level attribution.

pub mod attribution;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod data_gen;
pub mod decision;
pub mod docs_corpus;
pub mod error;
pub mod eval;
pub mod output;
pub mod pipeline;
pub mod purify;
pub mod recipes;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod windowing;

pub use error::{Result, TadError};
