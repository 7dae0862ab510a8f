//! Stochastic simulator and statistical inference toolkit for single-photon
//! human-vision experiments: a heralded SPDC source model, polarization
//! quantum states, a human-observer detection chain, and the statistics to
//! analyze frequency-of-seeing, 2AFC, superposition-vs-mixture, and
//! human-detector Bell-test sessions.

pub mod config;
pub mod error;
pub mod inference;
pub mod observer;
pub mod polarization;
pub mod protocols;
pub mod rng;
pub mod runner;
pub mod source;

pub use error::{Error, Result};
