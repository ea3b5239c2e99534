//! Dose-influence matrix construction and application.

mod engine;
mod matrix;

pub use engine::{compute_influence_matrix, BeamConfig, BeamGeometry, PencilBeamParams};
pub use matrix::{adjoint_apply, dose_from_fluence, DoseInfluenceMatrix};
