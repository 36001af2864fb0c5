//! Intensity-based registration: affine pre-alignment and log-domain demons.

mod affine;
mod demons;

pub use affine::{affine_register, resample_affine, AffineTransform};
pub use demons::{log_demons_register, DemonsDiagnostics, DemonsResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::FieldError;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("no usable intensity gradient ({context})")]
    NoGradient { context: &'static str },
    #[error("singular affine transform (det = {det:e})")]
    SingularTransform { det: f64 },
    #[error("invalid registration parameters: {reason}")]
    InvalidParams { reason: String },
}

/// Tunables shared by the affine and demons registrations.
///
/// `iterations_per_level` is listed coarsest first. The Gaussian sigmas are
/// in millimeters: `update_sigma_mm` smooths each incremental update (fluid
/// regularization), `field_sigma_mm` smooths the accumulated velocity
/// (diffusion regularization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    pub levels: usize,
    pub iterations_per_level: Vec<usize>,
    pub update_sigma_mm: f64,
    pub field_sigma_mm: f64,
    pub step_scale: f64,
    pub convergence_tol: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations_per_level: vec![50, 40, 30],
            update_sigma_mm: 2.0,
            field_sigma_mm: 1.5,
            step_scale: 1.0,
            convergence_tol: 1e-4,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.levels == 0 {
            return Err(RegistrationError::InvalidParams {
                reason: "levels must be at least 1".into(),
            });
        }
        if self.iterations_per_level.len() != self.levels {
            return Err(RegistrationError::InvalidParams {
                reason: format!(
                    "need one iteration count per level: {} levels, {} counts",
                    self.levels,
                    self.iterations_per_level.len()
                ),
            });
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.update_sigma_mm) || !positive(self.field_sigma_mm) {
            return Err(RegistrationError::InvalidParams {
                reason: "smoothing sigmas must be positive".into(),
            });
        }
        if !positive(self.step_scale) || self.step_scale > 1.0 {
            return Err(RegistrationError::InvalidParams {
                reason: "step_scale must lie in (0, 1]".into(),
            });
        }
        if !positive(self.convergence_tol) {
            return Err(RegistrationError::InvalidParams {
                reason: "convergence_tol must be positive".into(),
            });
        }
        Ok(())
    }

    /// Iteration counts for the `usable` coarsest-first levels actually run.
    /// When the pyramid is capped below `levels`, the coarsest entries are
    /// dropped so the finest levels keep their configured budget.
    pub(crate) fn level_iterations(&self, usable: usize) -> &[usize] {
        let skip = self.levels - usable.min(self.levels);
        &self.iterations_per_level[skip..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(RegistrationParams::default().validate().is_ok());
        let p = RegistrationParams {
            iterations_per_level: vec![10, 10],
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = RegistrationParams {
            step_scale: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn capped_levels_drop_coarse_entries() {
        let p = RegistrationParams::default();
        assert_eq!(p.level_iterations(3), &[50, 40, 30]);
        assert_eq!(p.level_iterations(2), &[40, 30]);
        assert_eq!(p.level_iterations(1), &[30]);
    }
}
