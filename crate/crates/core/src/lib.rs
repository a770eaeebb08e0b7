//! Simulation of a Josephson digital phase detector: a flux-biased rf-SQUID
//! whose potential is switched from a single well to a double well while a
//! microwave tone drives it, so that the well it falls into encodes the sign
//! of the tone's phase.

pub mod circuit;
pub mod classical;
pub mod detection;
pub mod error;
pub mod potential;
pub mod protocol;
pub mod quantum;
pub mod scalar;
pub mod units;

pub use error::{Error, Result};
pub use scalar::Real;

pub type DeviceParams = circuit::DeviceParams<f64>;
pub type EnergyScales = circuit::EnergyScales<f64>;
pub type FluxBias = circuit::FluxBias<f64>;
pub type PhaseGrid = quantum::PhaseGrid<f64>;
pub type OperatorSet = quantum::OperatorSet<f64>;
pub type QuantumState = quantum::QuantumState<f64>;
pub type QuantumEngine = quantum::QuantumEngine<f64>;
pub type ClassicalModel = classical::ClassicalModel<f64>;
pub type ClassicalState = classical::ClassicalState<f64>;
