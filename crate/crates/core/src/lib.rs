//! Simulation, estimation and fitting toolkit for a six-ion quantum memory
//! encoded in decoherence-free subspaces.

pub mod detection;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod gatedesign;
pub mod optim;
pub mod noise;
pub mod circuits;
pub mod qstate;

pub use error::{Error, Result};
