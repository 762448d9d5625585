//! Crystalline robot reconfiguration on a 2D module lattice.

pub mod cli_io;
mod engine;
pub mod hierarchy;
pub mod lattice;
pub mod macros;
pub mod planner;
pub mod primitives;

pub use engine::EngineError;
