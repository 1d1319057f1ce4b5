//! Controller for the coexistence engine: experiment runner, exports, HTTP
//! API and CLI plumbing.

pub mod api;
pub mod cli;
pub mod engine;
pub mod export;

pub use engine::{Engine, EngineError, ExperimentOutput, ExperimentRequest, Mode, WeatherArg};
