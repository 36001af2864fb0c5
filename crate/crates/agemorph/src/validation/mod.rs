//! Validation apparatus: phantom generation, random smooth deformations,
//! simulated longitudinal cohorts, Dice overlap, intensity-trend and
//! topology sweeps.

mod metrics;
mod phantom;
mod sim;

pub use metrics::{dice, mse_trend, topology_sweep, warp_labels};
pub use phantom::shepp_logan;
pub use sim::{random_smooth_field, simulate_longitudinal, SimulationOutput, SimulationSpec};

use thiserror::Error;

use crate::grid::FieldError;
use crate::model::ModelError;
use crate::template::TemplateError;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("grid too small for the phantom: need 32 voxels per non-degenerate axis, got {dims:?}")]
    GridTooSmall { dims: [usize; 3] },
    #[error("invalid simulation spec: {reason}")]
    InvalidSpec { reason: String },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
