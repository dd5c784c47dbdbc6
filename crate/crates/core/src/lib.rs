//! Forward-gradient descent for noisy linear regression: samplers, optimizers,
//! exact moment recursions, risk bounds and experiment drivers.

pub mod experiment;
pub mod linalg;
pub mod model;
pub mod optimizers;
pub mod rng;
pub mod theory;

pub use linalg::{LinalgError, SpectralSummary, SymMatrix};
pub use model::{DataPoint, ModelError, ModelSpec, SigmaKind};
pub use optimizers::{Method, OptimError, OptimizerState, Record, Trajectory};
pub use rng::RngStream;
pub use theory::{Schedule, StepSize, TheoryError};
