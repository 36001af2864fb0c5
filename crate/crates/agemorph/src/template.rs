//! Unbiased groupwise template construction.
//!
//! The template is the image minimizing the average diffeomorphic distance
//! to the cohort. Starting from the voxelwise mean, each outer iteration
//! registers the current template to every input, pulls every input back
//! through its inverse deformation corrected by the cohort-mean field, and
//! averages. The mean-field correction recenters the template so no single
//! input biases it; the average registration norm is tracked per iteration.

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{compose, exp_field, field_norm, warp};
use crate::grid::{FieldError, ScalarVolume, VelocityField};
use crate::registration::{
    affine_register, log_demons_register, resample_affine, AffineTransform, RegistrationError,
    RegistrationParams,
};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("groupwise construction needs at least two images, got {got}")]
    TooFewImages { got: usize },
    #[error("cohort images live on incompatible grids")]
    GridMismatch,
    #[error("outer iteration count must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Result of [`build_groupwise_template`]: the template, one velocity field
/// per input (template warped by the field matches that input), and the
/// per-iteration average field norm.
#[derive(Debug, Clone)]
pub struct GroupwiseResult {
    pub template: ScalarVolume,
    pub fields: Vec<VelocityField>,
    pub iterations_run: usize,
    pub mean_distance_trace: Vec<f64>,
}

/// Affinely aligned copies of a cohort plus the recovered transforms.
#[derive(Debug, Clone)]
pub struct AlignedCohort {
    pub images: Vec<ScalarVolume>,
    pub transforms: Vec<AffineTransform>,
}

fn check_cohort(images: &[ScalarVolume]) -> Result<(), TemplateError> {
    if images.len() < 2 {
        return Err(TemplateError::TooFewImages { got: images.len() });
    }
    let g = images[0].grid;
    if images.iter().any(|img| !img.grid.compatible(&g)) {
        return Err(TemplateError::GridMismatch);
    }
    Ok(())
}

/// Voxelwise mean, accumulated in input order.
fn voxel_mean(images: &[ScalarVolume]) -> ScalarVolume {
    let g = images[0].grid;
    let n = images.len() as f64;
    let data: Vec<f32> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(8192)
        .map(|idx| {
            let mut acc = 0.0f64;
            for img in images {
                acc += img.data[idx] as f64;
            }
            (acc / n) as f32
        })
        .collect();
    ScalarVolume { grid: g, data }
}

fn mean_field(fields: &[VelocityField]) -> VelocityField {
    let g = fields[0].grid;
    let n = fields.len() as f64;
    let vectors: Vec<[f32; 3]> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(8192)
        .map(|idx| {
            let mut acc = [0.0f64; 3];
            for f in fields {
                for c in 0..3 {
                    acc[c] += f.vectors[idx][c] as f64;
                }
            }
            [
                (acc[0] / n) as f32,
                (acc[1] / n) as f32,
                (acc[2] / n) as f32,
            ]
        })
        .collect();
    VelocityField { grid: g, vectors }
}

/// Align every image affinely to the cohort voxelwise mean (one round) and
/// return the resampled images with their transforms.
pub fn affine_align_cohort(
    images: &[ScalarVolume],
    params: &RegistrationParams,
) -> Result<AlignedCohort, TemplateError> {
    check_cohort(images)?;
    let mean = voxel_mean(images);
    let pairs: Vec<(ScalarVolume, AffineTransform)> = images
        .par_iter()
        .map(|img| -> Result<_, TemplateError> {
            let a = affine_register(&mean, img, params)?;
            let resampled = resample_affine(img, &a)?;
            Ok((resampled, a))
        })
        .collect::<Result<_, _>>()?;
    let (images, transforms) = pairs.into_iter().unzip();
    Ok(AlignedCohort { images, transforms })
}

/// Iterative register-average-recenter template construction.
///
/// The final returned fields are registered against the final template (the
/// recentering step is skipped on the last outer iteration), so
/// `warp(template, exp(fields[i])) ~= images[i]` holds on output.
pub fn build_groupwise_template(
    images: &[ScalarVolume],
    params: &RegistrationParams,
    outer_iters: usize,
) -> Result<GroupwiseResult, TemplateError> {
    check_cohort(images)?;
    if outer_iters == 0 {
        return Err(TemplateError::NoIterations);
    }
    let mut template = voxel_mean(images);
    let mut fields: Vec<VelocityField> = Vec::new();
    let mut trace = Vec::with_capacity(outer_iters);

    for iter in 0..outer_iters {
        fields = images
            .par_iter()
            .map(|img| -> Result<VelocityField, TemplateError> {
                Ok(log_demons_register(img, &template, params)?.velocity)
            })
            .collect::<Result<_, _>>()?;
        let mean_norm =
            fields.iter().map(field_norm).sum::<f64>() / fields.len() as f64;
        trace.push(mean_norm);

        if iter + 1 < outer_iters {
            let vbar = mean_field(&fields);
            let recenter = exp_field(&vbar)?;
            let pulled: Vec<ScalarVolume> = images
                .par_iter()
                .zip(&fields)
                .map(|(img, v)| -> Result<ScalarVolume, TemplateError> {
                    let inverse = exp_field(&v.negated())?;
                    let map = compose(&inverse, &recenter)?;
                    Ok(warp(img, &map)?)
                })
                .collect::<Result<_, _>>()?;
            template = voxel_mean(&pulled);
        }
    }

    Ok(GroupwiseResult {
        template,
        fields,
        iterations_run: outer_iters,
        mean_distance_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::field_norm_voxels;
    use crate::filter::mse;
    use crate::grid::GridSpec;
    use crate::validation::{random_smooth_field, shepp_logan};

    fn quick_params() -> RegistrationParams {
        RegistrationParams {
            levels: 3,
            iterations_per_level: vec![30, 20, 15],
            ..Default::default()
        }
    }

    #[test]
    fn identical_cohort_is_a_fixed_point() {
        let img = shepp_logan(&GridSpec::planar(48, 48).unwrap()).unwrap();
        let cohort = vec![img.clone(), img.clone(), img.clone()];
        let out = build_groupwise_template(&cohort, &quick_params(), 3).unwrap();
        let e = mse(&out.template, &img).unwrap();
        assert!(e < 1e-8 * img.variance().max(1e-12), "mse {e}");
        for f in &out.fields {
            assert!(field_norm_voxels(f) < 0.05);
        }
    }

    #[test]
    fn symmetric_pair_recovers_the_center() {
        let g = GridSpec::planar(64, 64).unwrap();
        let base = crate::filter::gaussian_smooth_scalar(&shepp_logan(&g).unwrap(), 1.5);
        let w = random_smooth_field(&g, 1.2, 8.0, 33);
        let plus = warp(&base, &exp_field(&w).unwrap()).unwrap();
        let minus = warp(&base, &exp_field(&w.negated()).unwrap()).unwrap();
        let out = build_groupwise_template(&[plus, minus], &quick_params(), 4).unwrap();
        let e = mse(&out.template, &base).unwrap();
        assert!(e < 0.1 * base.variance(), "mse {e} vs var {}", base.variance());
    }

    #[test]
    fn recentering_drives_mean_field_down() {
        let g = GridSpec::planar(48, 48).unwrap();
        let base = shepp_logan(&g).unwrap();
        let cohort: Vec<ScalarVolume> = (0..4)
            .map(|k| {
                let f = random_smooth_field(&g, 1.0, 7.0, 100 + k);
                warp(&base, &exp_field(&f).unwrap()).unwrap()
            })
            .collect();
        let out = build_groupwise_template(&cohort, &quick_params(), 4).unwrap();
        let vbar = super::mean_field(&out.fields);
        assert!(
            field_norm_voxels(&vbar) < 0.2,
            "mean field {}",
            field_norm_voxels(&vbar)
        );
        // trace may wobble slightly but must not grow beyond 5% per step
        for pair in out.mean_distance_trace.windows(2) {
            assert!(pair[1] <= pair[0] * 1.05, "trace {:?}", out.mean_distance_trace);
        }
        // template intensities stay within the input range
        let (lo, hi) = out.template.min_max();
        let mut in_lo = f64::INFINITY;
        let mut in_hi = f64::NEG_INFINITY;
        for img in &cohort {
            let (l, h) = img.min_max();
            in_lo = in_lo.min(l);
            in_hi = in_hi.max(h);
        }
        assert!(lo >= in_lo - 1e-6 && hi <= in_hi + 1e-6);
    }

    #[test]
    fn single_image_cohort_is_rejected() {
        let img = shepp_logan(&GridSpec::planar(48, 48).unwrap()).unwrap();
        assert!(matches!(
            build_groupwise_template(&[img], &quick_params(), 2),
            Err(TemplateError::TooFewImages { got: 1 })
        ));
    }

    #[test]
    fn constant_member_aborts_cohort_alignment() {
        let g = GridSpec::planar(48, 48).unwrap();
        let img = shepp_logan(&g).unwrap();
        let cohort = vec![img.clone(), ScalarVolume::filled(g, 0.25)];
        assert!(matches!(
            affine_align_cohort(&cohort, &quick_params()),
            Err(TemplateError::Registration(
                RegistrationError::NoGradient { .. }
            ))
        ));
    }

    #[test]
    fn aligned_cohort_passes_through() {
        let g = GridSpec::planar(48, 48).unwrap();
        let base = crate::filter::gaussian_smooth_scalar(&shepp_logan(&g).unwrap(), 1.5);
        let cohort: Vec<ScalarVolume> = (0..3)
            .map(|k| {
                let f = random_smooth_field(&g, 0.5, 7.0, 200 + k);
                warp(&base, &exp_field(&f).unwrap()).unwrap()
            })
            .collect();
        let out = affine_align_cohort(&cohort, &quick_params()).unwrap();
        for (orig, aligned) in cohort.iter().zip(&out.images) {
            let e = mse(orig, aligned).unwrap();
            assert!(e < 0.01 * orig.variance(), "mse {e}");
        }
    }

    #[test]
    fn shifted_member_is_pulled_back() {
        let g = GridSpec::planar(64, 64).unwrap();
        let base = shepp_logan(&g).unwrap();
        let shift = AffineTransform {
            matrix: AffineTransform::identity().matrix,
            translation: [4.0, 0.0, 0.0],
        };
        let shifted = resample_affine(&base, &shift).unwrap();
        let cohort = vec![base.clone(), base.clone(), shifted];
        let out = affine_align_cohort(&cohort, &quick_params()).unwrap();
        // the outlier sits at -4 voxels relative to the mean's dominant
        // mode, so its recovered map must shift by about -4 to rejoin the
        // rest of the cohort
        let recovered = &out.transforms[2];
        assert!(
            (recovered.translation[0] + 4.0).abs() < 0.5,
            "recovered {:?}",
            recovered.translation
        );
        let e = mse(&out.images[2], &base).unwrap();
        let e_shifted = mse(&cohort[2], &base).unwrap();
        assert!(e < 0.2 * e_shifted, "aligned mse {e} vs shifted {e_shifted}");
    }
}
