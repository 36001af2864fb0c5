//! Overlap scores, label transfer, and model-level sweeps.

use crate::field::{exp_field, jacobian_det};
use crate::filter::mse;
use crate::grid::{sample_label_nearest, DeformationField, FieldError, LabelVolume};
use crate::model::{synthesize, AgingModel, ModelError};

/// Dice overlap `2|A \cap B| / (|A| + |B|)` for one label value; defined as
/// 1 when both selections are empty. Symmetric by construction.
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: i32) -> Result<f64, FieldError> {
    if !a.grid.compatible(&b.grid) {
        return Err(FieldError::GridMismatch { op: "dice" });
    }
    let mut na = 0u64;
    let mut nb = 0u64;
    let mut inter = 0u64;
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        let ia = x == label;
        let ib = y == label;
        na += ia as u64;
        nb += ib as u64;
        inter += (ia && ib) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Nearest-neighbor label transfer through a deformation; samples falling
/// outside the grid become background.
pub fn warp_labels(
    labels: &LabelVolume,
    phi: &DeformationField,
) -> Result<LabelVolume, FieldError> {
    if !labels.grid.compatible(&phi.grid) {
        return Err(FieldError::GridMismatch { op: "warp_labels" });
    }
    let g = labels.grid;
    let mut out = Vec::with_capacity(g.voxel_count());
    for idx in 0..g.voxel_count() {
        let [x, y, z] = g.coords(idx);
        let u = phi.displacements[idx];
        let ci = [
            x as f64 + u[0] as f64 / g.spacing[0],
            y as f64 + u[1] as f64 / g.spacing[1],
            z as f64 + u[2] as f64 / g.spacing[2],
        ];
        out.push(sample_label_nearest(&labels.labels, g.dims, ci));
    }
    Ok(LabelVolume {
        grid: g,
        labels: out,
    })
}

/// Mean squared difference of each synthesized template against the one at
/// `ts[0]`.
pub fn mse_trend(model: &AgingModel, ts: &[f64]) -> Result<Vec<f64>, ModelError> {
    if ts.len() < 2 {
        return Err(ModelError::InvalidSeries {
            reason: "trend needs at least two ages".into(),
        });
    }
    let base = synthesize(model, ts[0])?;
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        let img = synthesize(model, t)?;
        out.push(mse(&img, &base).map_err(|source| ModelError::Field {
            stage: "mse_trend",
            source,
        })?);
    }
    Ok(out)
}

/// Minimum interior Jacobian determinant of the age-scaled deformation,
/// sampled at `samples` ages spread evenly over `[t_min, t_max]`.
/// Non-positive determinants are reported, not treated as errors.
pub fn topology_sweep(
    model: &AgingModel,
    t_min: f64,
    t_max: f64,
    samples: usize,
) -> Result<Vec<(f64, f64)>, ModelError> {
    if samples < 2 {
        return Err(ModelError::InvalidSeries {
            reason: "sweep needs at least two samples".into(),
        });
    }
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = t_min + (t_max - t_min) * k as f64 / (samples - 1) as f64;
        let gamma = model.gamma.eval(t);
        let branch = if t >= model.reference_age {
            &model.forward
        } else {
            &model.backward
        };
        let phi = exp_field(&branch.scaled(gamma)).map_err(|source| ModelError::Field {
            stage: "topology_sweep exp",
            source,
        })?;
        let det = jacobian_det(&phi);
        let g = det.grid;
        let mut min_det = f64::INFINITY;
        for idx in 0..g.voxel_count() {
            let [x, y, z] = g.coords(idx);
            if g.is_interior(x, y, z, 1) {
                min_det = min_det.min(det.data[idx] as f64);
            }
        }
        out.push((t, min_det));
    }
    Ok(out)
}
