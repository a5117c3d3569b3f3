//! Simulation library for body-scale 13.56 MHz near-field sensor networks:
//! meander reader coils, coupled resonator circuits, NFC-A backscatter PHY,
//! power transfer and slotted-Aloha readout.

pub mod circuit;
pub mod error;
pub mod geometry;
pub mod magnetics;
pub mod num;
pub mod phy;
pub mod power;
pub mod protocol;
pub mod scenario;

pub use error::{Error, Result};
pub use num::{Real, Vec3};

/// Double-precision aliases for the generic core.
pub type CoilPath = geometry::CoilPath<f64>;
pub type FilamentSet = geometry::FilamentSet<f64>;
pub type MeanderSpec = geometry::MeanderSpec<f64>;
pub type Placement = geometry::Placement<f64>;
pub type MotionPerturbation = geometry::MotionPerturbation<f64>;
pub type GridSpec = magnetics::GridSpec<f64>;
pub type BFieldGrid = magnetics::BFieldGrid<f64>;
pub type LinkMatrix = magnetics::LinkMatrix<f64>;
pub type ReaderCircuit = circuit::ReaderCircuit<f64>;
pub type SensorCircuit = circuit::SensorCircuit<f64>;
pub type InductiveLink = circuit::InductiveLink<f64>;
pub type BridgeConfig = circuit::BridgeConfig<f64>;
pub type PowerLink = power::PowerLink<f64>;
pub type PreparedLink = power::PreparedLink<f64>;

/// Single-precision aliases for memory-bound field maps.
pub mod f32 {
    pub type CoilPath = crate::geometry::CoilPath<f32>;
    pub type FilamentSet = crate::geometry::FilamentSet<f32>;
    pub type GridSpec = crate::magnetics::GridSpec<f32>;
    pub type BFieldGrid = crate::magnetics::BFieldGrid<f32>;
}
