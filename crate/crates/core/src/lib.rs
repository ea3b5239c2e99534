//! Fluence-map optimization for IMRT planning.
//!
//! The crate builds synthetic voxel phantoms ([`phantom`]), a pencil-beam
//! dose-influence matrix ([`dose`]), a convex dose-volume objective with
//! analytic derivatives ([`objective`]), a registry of interchangeable
//! optimizers ([`optim`]) and dose-volume histograms ([`dvh`]).

pub mod dose;
pub mod dvh;
pub mod error;
pub mod objective;
pub mod optim;
pub mod phantom;

pub use error::{FmoError, Result};
