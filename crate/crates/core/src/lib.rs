//! Multi-agent orchestration for iterative kernel auto-tuning.

pub mod agents;
pub mod bus;
pub mod exec;
pub mod fixtures;
pub mod orchestrator;
pub mod project;
pub mod requirements;
pub mod roles;
pub mod scalar;
pub mod telemetry;
pub mod tuning;

pub use exec::Matrix;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
