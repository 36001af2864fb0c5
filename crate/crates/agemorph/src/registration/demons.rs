//! Log-domain demons registration.
//!
//! The transform is maintained as a stationary velocity field `v`. Each
//! iteration computes a normalized intensity force between the fixed image
//! and the warped moving image, smooths the force (fluid regularization),
//! folds it into `v` through the composition series, and re-smooths the
//! velocity (diffusion regularization). A Gaussian pyramid handles coarse
//! displacements first; the velocity is upsampled between levels.
//!
//! Convention: registering with `fixed = F, moving = M` returns `v` such
//! that `warp(M, exp(v)) ~= F`.

use rayon::prelude::*;

use crate::field::{bch_accumulate, exp_field, warp};
use crate::filter::{
    gaussian_smooth_field, gradient_volume, pyramid, ssd, upsample_field, usable_levels,
};
use crate::grid::{ScalarVolume, VelocityField};

use super::{RegistrationError, RegistrationParams};

/// Per-run diagnostics; non-convergence is reported here, never as an error.
#[derive(Debug, Clone)]
pub struct DemonsDiagnostics {
    /// Full-resolution SSD before any registration.
    pub initial_ssd: f64,
    /// Best full-resolution SSD reached.
    pub final_ssd: f64,
    pub iterations_run: usize,
    /// `(ssd at level start, ssd at level end)`, coarsest first.
    pub level_ssd: Vec<(f64, f64)>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct DemonsResult {
    pub velocity: VelocityField,
    pub diagnostics: DemonsDiagnostics,
}

/// Normalized demons force `(warped - fixed) * grad(warped) /
/// (|grad|^2 + (warped - fixed)^2 / K)`, the stabilized SSD gradient with
/// the residual term scaled by the mean squared spacing `K` so step sizes
/// stay at voxel scale on every pyramid level (on a unit-spacing grid this
/// is the plain stabilized gradient). The update applied to the field is
/// this force scaled by `-step_scale`.
fn demons_update(
    fixed: &ScalarVolume,
    warped: &ScalarVolume,
    step_scale: f64,
) -> VelocityField {
    let grad = gradient_volume(warped);
    let g = fixed.grid;
    let mut k = 0.0f64;
    let mut axes = 0.0f64;
    for a in 0..3 {
        if g.dims[a] > 1 {
            k += g.spacing[a] * g.spacing[a];
            axes += 1.0;
        }
    }
    let k = if axes > 0.0 { k / axes } else { 1.0 };
    let vectors: Vec<[f32; 3]> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(8192)
        .map(|idx| {
            let r = warped.data[idx] as f64 - fixed.data[idx] as f64;
            let gr = grad.vectors[idx];
            let g2 = gr[0] as f64 * gr[0] as f64
                + gr[1] as f64 * gr[1] as f64
                + gr[2] as f64 * gr[2] as f64;
            let denom = g2 + r * r / k;
            if denom < 1e-12 {
                [0.0, 0.0, 0.0]
            } else {
                let s = -step_scale * r / denom;
                [
                    (s * gr[0] as f64) as f32,
                    (s * gr[1] as f64) as f32,
                    (s * gr[2] as f64) as f32,
                ]
            }
        })
        .collect();
    VelocityField { grid: g, vectors }
}

struct LevelOutcome {
    velocity: VelocityField,
    ssd_start: f64,
    ssd_end: f64,
    iterations: usize,
    converged: bool,
}

fn run_level(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    v0: VelocityField,
    iterations: usize,
    params: &RegistrationParams,
) -> Result<LevelOutcome, RegistrationError> {
    let mut v = v0;
    let mut warped = warp(moving, &exp_field(&v)?)?;
    let ssd_start = ssd(&warped, fixed);
    let mut best_v = v.clone();
    let mut best = ssd_start;
    let mut prev = ssd_start;
    let mut converged = ssd_start == 0.0;
    let mut iterations_run = 0;
    let denom = ssd_start.max(f64::MIN_POSITIVE);
    // smoothing never drops below one voxel of the current level, or coarse
    // levels run unregularized and the scheme turns unstable
    let voxel = fixed
        .grid
        .spacing
        .iter()
        .zip(&fixed.grid.dims)
        .filter(|(_, d)| **d > 1)
        .map(|(s, _)| *s)
        .fold(0.0f64, f64::max);
    let update_sigma = params.update_sigma_mm.max(voxel);
    let field_sigma = params.field_sigma_mm.max(voxel);
    if !converged {
        for _ in 0..iterations {
            iterations_run += 1;
            let force = demons_update(fixed, &warped, params.step_scale);
            let update = gaussian_smooth_field(&force, update_sigma);
            v = bch_accumulate(&v, &update)?;
            v = gaussian_smooth_field(&v, field_sigma);
            warped = warp(moving, &exp_field(&v)?)?;
            let cur = ssd(&warped, fixed);
            if cur < best {
                best = cur;
                best_v = v.clone();
            }
            if ((prev - cur).abs()) / denom < params.convergence_tol {
                converged = true;
                break;
            }
            prev = cur;
        }
    }
    Ok(LevelOutcome {
        velocity: best_v,
        ssd_start,
        ssd_end: best,
        iterations: iterations_run,
        converged,
    })
}

/// Nonrigid registration returning the velocity field whose exponential
/// warps `moving` onto `fixed`, plus convergence diagnostics. The best
/// iterate is always returned, so the end-of-level SSD never exceeds the
/// start-of-level SSD.
pub fn log_demons_register(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    params: &RegistrationParams,
) -> Result<DemonsResult, RegistrationError> {
    params.validate()?;
    if !fixed.grid.compatible(&moving.grid) {
        return Err(RegistrationError::Field(
            crate::grid::FieldError::GridMismatch {
                op: "log_demons_register",
            },
        ));
    }
    fixed.ensure_finite("demons fixed")?;
    moving.ensure_finite("demons moving")?;
    let (flo, fhi) = fixed.min_max();
    let (mlo, mhi) = moving.min_max();
    if fhi - flo < 1e-12 {
        return Err(RegistrationError::NoGradient {
            context: "fixed image is constant",
        });
    }
    if mhi - mlo < 1e-12 {
        return Err(RegistrationError::NoGradient {
            context: "moving image is constant",
        });
    }

    let initial_ssd = ssd(moving, fixed);
    let levels = usable_levels(&fixed.grid, params.levels);
    let fixed_pyr = pyramid(fixed, levels);
    let moving_pyr = pyramid(moving, levels);
    let iters = params.level_iterations(levels);

    let mut v = VelocityField::zeros(fixed_pyr[levels - 1].grid);
    let mut level_ssd = Vec::with_capacity(levels);
    let mut total_iters = 0;
    let mut converged = false;
    for (level, iterations) in (0..levels).rev().zip(iters.iter()) {
        let grid = fixed_pyr[level].grid;
        if !v.grid.compatible(&grid) {
            v = upsample_field(&v, &grid);
        }
        let out = run_level(&fixed_pyr[level], &moving_pyr[level], v, *iterations, params)?;
        v = out.velocity;
        level_ssd.push((out.ssd_start, out.ssd_end));
        total_iters += out.iterations;
        converged = out.converged;
    }
    let final_ssd = level_ssd.last().map(|l| l.1).unwrap_or(initial_ssd);
    Ok(DemonsResult {
        velocity: v,
        diagnostics: DemonsDiagnostics {
            initial_ssd,
            final_ssd,
            iterations_run: total_iters,
            level_ssd,
            converged,
        },
    })
}
