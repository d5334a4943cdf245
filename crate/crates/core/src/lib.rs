pub mod backend;
pub mod calibrator;
pub mod decoder;
pub mod distribution;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod scalar;
pub mod sentiment;
pub mod synthetic;
pub mod text;

pub use distribution::NextTokenDistribution;
pub use error::{CafieError, Result};
pub use scalar::Scalar;

/// Double-precision next-token distribution, the default throughout the engine.
pub type Distribution = NextTokenDistribution<f64>;
/// Single-precision next-token distribution.
pub type Distribution32 = NextTokenDistribution<f32>;
