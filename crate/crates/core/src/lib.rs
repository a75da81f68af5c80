//! Vineyard sensor data platform.

pub mod agromet;
pub mod cli;
pub mod fieldsim;
pub mod irrigation;
pub mod phenology;
pub mod reading;
pub mod risk;
pub mod service;
pub mod store;
pub mod wire;

pub use reading::{Quality, Reading, SensorKind};
