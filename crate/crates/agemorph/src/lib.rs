//! Diffeomorphic aging models from cross-sectional image templates.
//!
//! Given a series of age-specific templates, the library builds a model with
//! three parts: a global structural template, a pair of stationary velocity
//! fields describing the aging deformation forward and backward from a
//! reference age, and a temporal curve that rescales the deformation
//! magnitude at any age. The model can then synthesize an age-specific
//! template at an arbitrary (even extrapolated) age while preserving
//! topology.
//!
//! The pipeline, bottom to top:
//!
//! * [`grid`] / [`field`] — regular-grid volumes and the velocity-field
//!   algebra (exponentiation by scaling and squaring, composition, warping,
//!   Lie brackets and the truncated log-composition series).
//! * [`registration`] — affine pre-alignment and log-domain demons
//!   registration producing velocity fields.
//! * [`template`] — unbiased groupwise template construction.
//! * [`model`] — reference selection, chained composition of pairwise
//!   registrations, parallel transport onto the global template, temporal
//!   curve fitting, and synthesis.
//! * [`validation`] — phantom generation, simulated longitudinal cohorts,
//!   Dice scoring, intensity-trend and topology sweeps.
//! * [`io`] / [`cli`] — volume files, the model manifest, and the command
//!   line surface.

// stencil kernels index several buffers at shared offsets; explicit indices
// read better than zipped iterators there
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod field;
pub mod filter;
pub mod gamma;
pub mod grid;
pub mod io;
pub mod model;
pub mod registration;
pub mod template;
pub mod validation;

pub use field::{
    bch, bch_accumulate, compose, exp_field, field_norm, jacobian_det, lie_bracket, warp,
};
pub use gamma::GammaCurve;
pub use grid::{DeformationField, FieldError, GridSpec, LabelVolume, ScalarVolume, VelocityField};
pub use model::{build_model, synthesize, AgeSeries, AgingModel, ModelError};
pub use registration::{
    affine_register, log_demons_register, resample_affine, AffineTransform, RegistrationError,
    RegistrationParams,
};
pub use template::{affine_align_cohort, build_groupwise_template, GroupwiseResult};
pub use validation::{
    dice, mse_trend, random_smooth_field, shepp_logan, simulate_longitudinal, topology_sweep,
    warp_labels, SimulationSpec,
};
