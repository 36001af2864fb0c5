//! Random smooth deformations and simulated longitudinal cohorts.
//!
//! A cohort is a set of randomly deformed phantoms; aging is one fixed
//! smooth field applied with a per-timepoint amplitude schedule. Subject
//! identity is preserved across timepoints (the same subject field at every
//! age), so the output behaves like follow-up data with a known ground
//! truth. All randomness is drawn from per-purpose substreams of one seed,
//! so outputs are bitwise reproducible and independent of parallel
//! scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{compose, exp_field, max_voxel_magnitude, warp};
use crate::filter::gaussian_smooth_field;
use crate::grid::{GridSpec, ScalarVolume, VelocityField};
use crate::model::AgeSeries;
use crate::registration::RegistrationParams;
use crate::template::build_groupwise_template;

use super::{shepp_logan, ValidationError};

/// Cohort and schedule description for [`simulate_longitudinal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub cohort_size: usize,
    pub timepoints: usize,
    /// Peak magnitude of each subject's identity deformation, in voxels.
    pub subject_variation_amplitude: f64,
    /// Smoothness of the subject deformations, in millimeters.
    pub subject_variation_sigma_mm: f64,
    /// Peak aging deformation per timepoint, in voxels; nondecreasing.
    pub aging_amplitude_schedule: Vec<f64>,
    /// Smoothness of the aging deformation, in millimeters.
    pub aging_sigma_mm: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            cohort_size: 50,
            timepoints: 5,
            subject_variation_amplitude: 1.0,
            subject_variation_sigma_mm: 6.0,
            aging_amplitude_schedule: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            aging_sigma_mm: 10.0,
            seed: 42,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.cohort_size == 0 {
            return Err(ValidationError::InvalidSpec {
                reason: "cohort_size must be at least 1".into(),
            });
        }
        if self.timepoints < 3 {
            return Err(ValidationError::InvalidSpec {
                reason: "need at least 3 timepoints to form a series".into(),
            });
        }
        if self.aging_amplitude_schedule.len() != self.timepoints {
            return Err(ValidationError::InvalidSpec {
                reason: format!(
                    "schedule has {} entries for {} timepoints",
                    self.aging_amplitude_schedule.len(),
                    self.timepoints
                ),
            });
        }
        if self.aging_amplitude_schedule.iter().any(|a| *a < 0.0) {
            return Err(ValidationError::InvalidSpec {
                reason: "schedule amplitudes must be nonnegative".into(),
            });
        }
        if self
            .aging_amplitude_schedule
            .windows(2)
            .any(|w| w[1] < w[0])
        {
            return Err(ValidationError::InvalidSpec {
                reason: "schedule must be nondecreasing".into(),
            });
        }
        if self.subject_variation_amplitude < 0.0 {
            return Err(ValidationError::InvalidSpec {
                reason: "subject amplitude must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent substream seed for `(seed, index)`.
pub(crate) fn substream(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0, 1], u2 in [0, 1)
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Smoothed white-noise velocity field: Gaussian noise per component,
/// Gaussian-smoothed at `sigma_mm`, zeroed in a two-voxel boundary margin
/// (tapering smoothly to full strength over roughly one smoothing length so
/// the field stays differentiable) and rescaled so the largest voxel-space
/// magnitude equals `amplitude_voxels`. Deterministic in `seed`; planar
/// grids get zero z-components.
pub fn random_smooth_field(
    grid: &GridSpec,
    amplitude_voxels: f64,
    sigma_mm: f64,
    seed: u64,
) -> VelocityField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.voxel_count();
    let mut vectors = vec![[0f32; 3]; n];
    for vec in vectors.iter_mut() {
        for (axis, slot) in vec.iter_mut().enumerate() {
            if grid.dims[axis] > 1 {
                *slot = gauss(&mut rng) as f32;
            }
        }
    }
    let mut field = VelocityField {
        grid: *grid,
        vectors,
    };
    field = gaussian_smooth_field(&field, sigma_mm);
    let smoothstep = |t: f64| {
        let t = t.clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    };
    let margin = 2.0f64;
    for idx in 0..n {
        let pos = grid.coords(idx);
        let mut weight = 1.0f64;
        for axis in 0..3 {
            let d = grid.dims[axis];
            if d == 1 {
                continue;
            }
            let taper = (sigma_mm / grid.spacing[axis]).max(2.0);
            let edge_dist = pos[axis].min(d - 1 - pos[axis]) as f64;
            weight *= if edge_dist <= margin {
                0.0
            } else {
                smoothstep((edge_dist - margin) / taper)
            };
        }
        if weight < 1.0 {
            let v = &mut field.vectors[idx];
            for c in v.iter_mut() {
                *c = (*c as f64 * weight) as f32;
            }
        }
    }
    let mag = max_voxel_magnitude(&field);
    let scale = if mag > 0.0 {
        amplitude_voxels / mag
    } else {
        0.0
    };
    field.scaled(scale)
}

/// Everything [`simulate_longitudinal`] produces: the per-timepoint template
/// series, the deformed-phantom ground truth, and the raw cohort images
/// indexed `[timepoint][subject]`.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub series: AgeSeries,
    pub ground_truth: Vec<ScalarVolume>,
    pub subject_images: Vec<Vec<ScalarVolume>>,
}

/// Generate a longitudinal cohort and per-timepoint templates.
///
/// `subject image(k, t) = phantom o exp(subject_k) o exp(aging * schedule[t])`,
/// ground truth is the phantom under the aging deformation alone. Templates
/// are groupwise means per timepoint (the single image itself for a cohort
/// of one). Ages are the timepoint indices in years.
pub fn simulate_longitudinal(
    spec: &SimulationSpec,
    grid: &GridSpec,
    params: &RegistrationParams,
    groupwise_iters: usize,
) -> Result<SimulationOutput, ValidationError> {
    spec.validate()?;
    let base = shepp_logan(grid)?;
    let aging_unit = random_smooth_field(grid, 1.0, spec.aging_sigma_mm, substream(spec.seed, 0));
    let subject_maps: Vec<_> = (0..spec.cohort_size)
        .into_par_iter()
        .map(|k| -> Result<_, ValidationError> {
            let f = random_smooth_field(
                grid,
                spec.subject_variation_amplitude,
                spec.subject_variation_sigma_mm,
                substream(spec.seed, 1 + k as u64),
            );
            Ok(exp_field(&f)?)
        })
        .collect::<Result<_, _>>()?;

    let mut ground_truth = Vec::with_capacity(spec.timepoints);
    let mut subject_images = Vec::with_capacity(spec.timepoints);
    let mut templates = Vec::with_capacity(spec.timepoints);
    for t in 0..spec.timepoints {
        let aging = exp_field(&aging_unit.scaled(spec.aging_amplitude_schedule[t]))?;
        ground_truth.push(warp(&base, &aging)?);
        let cohort: Vec<ScalarVolume> = subject_maps
            .par_iter()
            .map(|subj| -> Result<ScalarVolume, ValidationError> {
                let map = compose(subj, &aging)?;
                Ok(warp(&base, &map)?)
            })
            .collect::<Result<_, _>>()?;
        let template = if cohort.len() == 1 {
            cohort[0].clone()
        } else {
            build_groupwise_template(&cohort, params, groupwise_iters)?.template
        };
        templates.push(template);
        subject_images.push(cohort);
    }
    let ages: Vec<f64> = (0..spec.timepoints).map(|t| t as f64).collect();
    let series = AgeSeries::new(templates, ages)?;
    Ok(SimulationOutput {
        series,
        ground_truth,
        subject_images,
    })
}
