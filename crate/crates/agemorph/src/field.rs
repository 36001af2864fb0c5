//! Stationary-velocity-field algebra.
//!
//! A velocity field `v` parameterizes a diffeomorphism through its group
//! exponential `exp(v)`, computed by scaling and squaring: halve the field
//! until the largest step is below half a voxel, then repeatedly self-compose
//! the resulting small deformation. Compositions of exponentials collapse
//! back to a single field through the truncated series
//!
//! `log(exp(u) o exp(w)) ~= u + w + [u,w]/2 + ([u,[u,w]] + [w,[w,u]])/12`
//!
//! with the vector-field bracket `[u,w] = (Du)w - (Dw)u`. That sign makes the
//! series consistent with the composition order `exp(u) o exp(w)` used by
//! [`compose`], which is easy to confirm on linear fields where exponentials
//! and logs are plain matrix ones. Callers keep the series accurate by
//! splitting large arguments ([`bch_accumulate`]) with the same half-voxel
//! rule the exponential uses.
//!
//! All operations are pure; voxel loops are data-parallel with bitwise
//! deterministic results (reductions run in a fixed order).

use rayon::prelude::*;

use crate::grid::{
    sample_scalar_zero, sample_vector_clamped, DeformationField, FieldError, GridSpec,
    ScalarVolume, VelocityField,
};

/// Below this many voxels the parallel loops degenerate to one chunk.
const PAR_MIN_LEN: usize = 8192;

#[inline]
fn voxel_units_mag(v: &[f32; 3], spacing: [f64; 3]) -> f64 {
    let a = v[0] as f64 / spacing[0];
    let b = v[1] as f64 / spacing[1];
    let c = v[2] as f64 / spacing[2];
    (a * a + b * b + c * c).sqrt()
}

/// Largest per-voxel vector magnitude, measured in voxel units.
pub fn max_voxel_magnitude(v: &VelocityField) -> f64 {
    v.vectors
        .iter()
        .map(|u| voxel_units_mag(u, v.grid.spacing))
        .fold(0.0, f64::max)
}

/// Largest displacement of a deformation, in voxel units.
pub fn max_displacement_voxels(phi: &DeformationField) -> f64 {
    phi.displacements
        .iter()
        .map(|u| voxel_units_mag(u, phi.grid.spacing))
        .fold(0.0, f64::max)
}

/// Largest displacement over voxels at least `margin` voxels from the
/// boundary (degenerate axes are always counted).
pub fn max_displacement_voxels_interior(phi: &DeformationField, margin: usize) -> f64 {
    let g = phi.grid;
    let mut best = 0.0f64;
    for idx in 0..g.voxel_count() {
        let [x, y, z] = g.coords(idx);
        if g.is_interior(x, y, z, margin) {
            best = best.max(voxel_units_mag(&phi.displacements[idx], g.spacing));
        }
    }
    best
}

/// Sup-norm of the difference of two deformations, in voxel units.
pub fn max_displacement_difference_voxels(
    a: &DeformationField,
    b: &DeformationField,
) -> Result<f64, FieldError> {
    if !a.grid.compatible(&b.grid) {
        return Err(FieldError::GridMismatch {
            op: "displacement difference",
        });
    }
    let sp = a.grid.spacing;
    Ok(a
        .displacements
        .iter()
        .zip(&b.displacements)
        .map(|(u, w)| {
            let d = [u[0] - w[0], u[1] - w[1], u[2] - w[2]];
            voxel_units_mag(&d, sp)
        })
        .fold(0.0, f64::max))
}

/// Group exponential by scaling and squaring.
///
/// The number of squarings is the smallest `s` with
/// `max voxel-space magnitude of v / 2^s < 0.5`.
pub fn exp_field(v: &VelocityField) -> Result<DeformationField, FieldError> {
    v.ensure_finite("exp_field input")?;
    let mag = max_voxel_magnitude(v);
    let mut steps = 0u32;
    while mag / (1u64 << steps) as f64 >= 0.5 {
        steps += 1;
        if steps >= 60 {
            return Err(FieldError::NonFinite {
                what: "exp_field input (magnitude overflow)",
                index: 0,
            });
        }
    }
    // Division by a power of two is exact, so exp of a constant field stays
    // an exact translation after the squarings.
    let scale = 1.0 / (1u64 << steps) as f64;
    let mut phi = DeformationField {
        grid: v.grid,
        displacements: v
            .vectors
            .iter()
            .map(|u| {
                [
                    (u[0] as f64 * scale) as f32,
                    (u[1] as f64 * scale) as f32,
                    (u[2] as f64 * scale) as f32,
                ]
            })
            .collect(),
    };
    for _ in 0..steps {
        phi = compose(&phi, &phi)?;
    }
    Ok(phi)
}

/// Composition `(outer o inner)(x) = outer(inner(x))`.
///
/// The outer displacement is sampled at the inner-mapped point by trilinear
/// interpolation with clamp-to-edge boundary handling.
pub fn compose(
    outer: &DeformationField,
    inner: &DeformationField,
) -> Result<DeformationField, FieldError> {
    if !outer.grid.compatible(&inner.grid) {
        return Err(FieldError::GridMismatch { op: "compose" });
    }
    let g = inner.grid;
    let sp = g.spacing;
    let dims = g.dims;
    let outer_disp = &outer.displacements;
    let displacements: Vec<[f32; 3]> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            let [x, y, z] = g.coords(idx);
            let ui = inner.displacements[idx];
            let ci = [
                x as f64 + ui[0] as f64 / sp[0],
                y as f64 + ui[1] as f64 / sp[1],
                z as f64 + ui[2] as f64 / sp[2],
            ];
            let uo = sample_vector_clamped(outer_disp, dims, ci);
            [
                (ui[0] as f64 + uo[0]) as f32,
                (ui[1] as f64 + uo[1]) as f32,
                (ui[2] as f64 + uo[2]) as f32,
            ]
        })
        .collect();
    Ok(DeformationField {
        grid: g,
        displacements,
    })
}

/// Resample an image through a deformation: `out(x) = img(phi(x))`.
/// Samples outside the grid read as zero.
pub fn warp(img: &ScalarVolume, phi: &DeformationField) -> Result<ScalarVolume, FieldError> {
    if !img.grid.compatible(&phi.grid) {
        return Err(FieldError::GridMismatch { op: "warp" });
    }
    let g = img.grid;
    let sp = g.spacing;
    let dims = g.dims;
    let data: Vec<f32> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            let [x, y, z] = g.coords(idx);
            let u = phi.displacements[idx];
            let ci = [
                x as f64 + u[0] as f64 / sp[0],
                y as f64 + u[1] as f64 / sp[1],
                z as f64 + u[2] as f64 / sp[2],
            ];
            sample_scalar_zero(&img.data, dims, ci) as f32
        })
        .collect();
    Ok(ScalarVolume { grid: g, data })
}

#[inline]
fn axis_derivative<F: Fn(usize) -> f64>(get: F, p: usize, d: usize, h: f64) -> f64 {
    if d == 1 {
        0.0
    } else if p == 0 {
        (get(1) - get(0)) / h
    } else if p == d - 1 {
        (get(d - 1) - get(d - 2)) / h
    } else {
        (get(p + 1) - get(p - 1)) / (2.0 * h)
    }
}

/// Jacobian of a vector buffer at one voxel: `row i = grad of component i`,
/// central differences in physical units, one-sided at the boundary.
#[inline]
fn field_jacobian_at(
    vecs: &[[f32; 3]],
    g: &GridSpec,
    x: usize,
    y: usize,
    z: usize,
) -> [[f64; 3]; 3] {
    let [nx, ny, nz] = g.dims;
    let at = |x: usize, y: usize, z: usize| -> &[f32; 3] { &vecs[x + nx * (y + ny * z)] };
    let mut j = [[0.0f64; 3]; 3];
    for comp in 0..3 {
        j[comp][0] = axis_derivative(|p| at(p, y, z)[comp] as f64, x, nx, g.spacing[0]);
        j[comp][1] = axis_derivative(|p| at(x, p, z)[comp] as f64, y, ny, g.spacing[1]);
        j[comp][2] = axis_derivative(|p| at(x, y, p)[comp] as f64, z, nz, g.spacing[2]);
    }
    j
}

/// Vector-field Lie bracket `[u,w] = (Du)w - (Dw)u` with finite-difference
/// Jacobians. Antisymmetry holds bitwise because both terms reuse the same
/// products.
pub fn lie_bracket(u: &VelocityField, w: &VelocityField) -> Result<VelocityField, FieldError> {
    if !u.grid.compatible(&w.grid) {
        return Err(FieldError::GridMismatch { op: "lie_bracket" });
    }
    let g = u.grid;
    let uv = &u.vectors;
    let wv = &w.vectors;
    let vectors: Vec<[f32; 3]> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            let [x, y, z] = g.coords(idx);
            let ju = field_jacobian_at(uv, &g, x, y, z);
            let jw = field_jacobian_at(wv, &g, x, y, z);
            let a = uv[idx];
            let b = wv[idx];
            let mut out = [0f32; 3];
            for i in 0..3 {
                let t1 = ju[i][0] * b[0] as f64 + ju[i][1] * b[1] as f64 + ju[i][2] * b[2] as f64;
                let t2 = jw[i][0] * a[0] as f64 + jw[i][1] * a[1] as f64 + jw[i][2] * a[2] as f64;
                out[i] = (t1 - t2) as f32;
            }
            out
        })
        .collect();
    Ok(VelocityField { grid: g, vectors })
}

/// Truncated log-composition series
/// `u + w + [u,w]/2 + ([u,[u,w]] + [w,[w,u]])/12`.
///
/// Valid for small `w`; see [`bch_accumulate`] for the splitting wrapper.
pub fn bch(u: &VelocityField, w: &VelocityField) -> Result<VelocityField, FieldError> {
    if !u.grid.compatible(&w.grid) {
        return Err(FieldError::GridMismatch { op: "bch" });
    }
    let b1 = lie_bracket(u, w)?;
    let b2 = lie_bracket(u, &b1)?; // [u,[u,w]]
    let b1n = b1.negated(); // [w,u]
    let b3 = lie_bracket(w, &b1n)?; // [w,[w,u]]
    let g = u.grid;
    let vectors: Vec<[f32; 3]> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            let mut out = [0f32; 3];
            for i in 0..3 {
                let acc = u.vectors[idx][i] as f64
                    + w.vectors[idx][i] as f64
                    + 0.5 * b1.vectors[idx][i] as f64
                    + (b2.vectors[idx][i] as f64 + b3.vectors[idx][i] as f64) / 12.0;
                out[i] = acc as f32;
            }
            out
        })
        .collect();
    Ok(VelocityField { grid: g, vectors })
}

/// Smallest number of pieces `n` with `max_mag / n < 0.5` voxels.
pub(crate) fn split_count(max_voxel_mag: f64) -> usize {
    let mut n = 1usize;
    while max_voxel_mag / n as f64 >= 0.5 {
        n += 1;
        if n > 1_000_000 {
            break;
        }
    }
    n
}

/// Fold `w` into an accumulated field: split `w` into `n` pieces each under
/// half a voxel, then apply [`bch`] once per piece. One step of the chained
/// composition recurrence.
pub fn bch_accumulate(
    acc: &VelocityField,
    w: &VelocityField,
) -> Result<VelocityField, FieldError> {
    if !acc.grid.compatible(&w.grid) {
        return Err(FieldError::GridMismatch { op: "bch_accumulate" });
    }
    let n = split_count(max_voxel_magnitude(w));
    if n == 1 {
        return bch(acc, w);
    }
    let piece = w.scaled(1.0 / n as f64);
    let mut out = bch(acc, &piece)?;
    for _ in 1..n {
        out = bch(&out, &piece)?;
    }
    Ok(out)
}

/// Root-mean-square vector magnitude in millimeters, accumulated in index
/// order so results are bitwise reproducible.
pub fn field_norm(v: &VelocityField) -> f64 {
    if v.vectors.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0f64;
    for u in &v.vectors {
        let x = u[0] as f64;
        let y = u[1] as f64;
        let z = u[2] as f64;
        acc += x * x + y * y + z * z;
    }
    (acc / v.vectors.len() as f64).sqrt()
}

/// RMS displacement of a velocity field in voxel units (norm divided by the
/// smallest spacing); convenient for grid-relative tolerances.
pub fn field_norm_voxels(v: &VelocityField) -> f64 {
    let s = v
        .grid
        .spacing
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    field_norm(v) / s
}

/// Per-voxel determinant of the deformation gradient `I + Du`, central
/// differences in physical coordinates (one-sided at the boundary).
pub fn jacobian_det(phi: &DeformationField) -> ScalarVolume {
    let g = phi.grid;
    let disp = &phi.displacements;
    let data: Vec<f32> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            let [x, y, z] = g.coords(idx);
            let ju = field_jacobian_at(disp, &g, x, y, z);
            let m = [
                [1.0 + ju[0][0], ju[0][1], ju[0][2]],
                [ju[1][0], 1.0 + ju[1][1], ju[1][2]],
                [ju[2][0], ju[2][1], 1.0 + ju[2][2]],
            ];
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            det as f32
        })
        .collect();
    ScalarVolume { grid: g, data }
}

/// Minimum of [`jacobian_det`] over voxels one step away from every
/// non-degenerate boundary face.
pub fn min_interior_jacobian(phi: &DeformationField) -> f64 {
    let det = jacobian_det(phi);
    let g = det.grid;
    let mut best = f64::INFINITY;
    for idx in 0..g.voxel_count() {
        let [x, y, z] = g.coords(idx);
        if g.is_interior(x, y, z, 1) {
            best = best.min(det.data[idx] as f64);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid2d(n: usize) -> GridSpec {
        GridSpec::planar(n, n).unwrap()
    }

    /// Deterministic smooth test field: sum of a couple of sinusoids,
    /// rescaled to a target max magnitude in voxel units.
    fn wavy_field(g: GridSpec, amp_voxels: f64, phase: f64) -> VelocityField {
        let [nx, ny, nz] = g.dims;
        let mut vectors = vec![[0f32; 3]; g.voxel_count()];
        for idx in 0..g.voxel_count() {
            let [x, y, z] = g.coords(idx);
            let fx = x as f64 / nx as f64;
            let fy = y as f64 / ny as f64;
            let fz = if nz > 1 { z as f64 / nz as f64 } else { 0.0 };
            let vx = (2.0 * std::f64::consts::PI * (fy + fz) + phase).sin()
                * (std::f64::consts::PI * fx).sin();
            let vy = (2.0 * std::f64::consts::PI * (fx + 0.3) + 0.7 * phase).cos()
                * (std::f64::consts::PI * fy).sin();
            let vz = if nz > 1 {
                (2.0 * std::f64::consts::PI * fx + phase).sin() * (std::f64::consts::PI * fz).sin()
            } else {
                0.0
            };
            vectors[idx] = [vx as f32, vy as f32, vz as f32];
        }
        let mut v = VelocityField { grid: g, vectors };
        let m = max_voxel_magnitude(&v);
        if m > 0.0 {
            v = v.scaled(amp_voxels / m);
        }
        v
    }

    #[test]
    fn exp_zero_is_identity_exact() {
        let v = VelocityField::zeros(grid2d(16));
        let phi = exp_field(&v).unwrap();
        assert!(phi.displacements.iter().all(|d| d.iter().all(|c| *c == 0.0)));
    }

    #[test]
    fn exp_constant_is_translation_exact() {
        let g = grid2d(16);
        let c = [1.25f32, -0.75, 0.0];
        let v = VelocityField {
            grid: g,
            vectors: vec![c; g.voxel_count()],
        };
        let phi = exp_field(&v).unwrap();
        // magnitude ~1.46 voxels, so the field is halved and squared at
        // least twice; interior voxels more than 2 voxels from the boundary
        // never sample a clamped edge
        for idx in 0..g.voxel_count() {
            let [x, y, _] = g.coords(idx);
            if (3..13).contains(&x) && (3..13).contains(&y) {
                assert_eq!(phi.displacements[idx], c);
            }
        }
    }

    #[test]
    fn exp_rejects_non_finite() {
        let g = grid2d(4);
        let mut v = VelocityField::zeros(g);
        v.vectors[3][1] = f32::NAN;
        assert!(matches!(
            exp_field(&v),
            Err(FieldError::NonFinite { index: 3, .. })
        ));
    }

    #[test]
    fn compose_with_identity_is_exact() {
        let g = grid2d(24);
        let phi = exp_field(&wavy_field(g, 1.5, 0.4)).unwrap();
        let id = DeformationField::identity(g);
        let left = compose(&id, &phi).unwrap();
        let right = compose(&phi, &id).unwrap();
        assert_eq!(left.displacements, phi.displacements);
        assert_eq!(right.displacements, phi.displacements);
    }

    #[test]
    fn constant_translations_add() {
        let g = grid2d(16);
        let mk = |c: [f32; 3]| DeformationField {
            grid: g,
            displacements: vec![c; g.voxel_count()],
        };
        let a = [0.5f32, 0.25, 0.0];
        let b = [-0.75f32, 1.0, 0.0];
        let c = compose(&mk(a), &mk(b)).unwrap();
        for idx in 0..g.voxel_count() {
            let [x, y, _] = g.coords(idx);
            if (2..14).contains(&x) && (2..14).contains(&y) {
                for i in 0..3 {
                    assert_eq!(c.displacements[idx][i], (a[i] as f64 + b[i] as f64) as f32);
                }
            }
        }
    }

    #[test]
    fn warp_identity_is_exact() {
        let g = grid2d(12);
        let img = ScalarVolume {
            grid: g,
            data: (0..g.voxel_count()).map(|i| (i as f32).sin()).collect(),
        };
        let out = warp(&img, &DeformationField::identity(g)).unwrap();
        assert_eq!(out.data, img.data);
    }

    #[test]
    fn warp_constant_image_stays_constant_inside() {
        let g = grid2d(24);
        let img = ScalarVolume::filled(g, 0.625);
        let phi = exp_field(&wavy_field(g, 1.0, 1.1)).unwrap();
        let out = warp(&img, &phi).unwrap();
        for idx in 0..g.voxel_count() {
            let [x, y, _] = g.coords(idx);
            if (4..20).contains(&x) && (4..20).contains(&y) {
                assert_eq!(out.data[idx], 0.625);
            }
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = VelocityField::zeros(grid2d(8));
        let b = VelocityField::zeros(grid2d(9));
        assert!(matches!(
            lie_bracket(&a, &b),
            Err(FieldError::GridMismatch { .. })
        ));
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let g = grid2d(20);
        let u = wavy_field(g, 1.3, 0.2);
        let b = lie_bracket(&u, &u).unwrap();
        assert!(b.vectors.iter().all(|v| v.iter().all(|c| *c == 0.0)));
    }

    #[test]
    fn bracket_antisymmetry_is_bitwise() {
        let g = grid2d(20);
        let u = wavy_field(g, 1.3, 0.2);
        let w = wavy_field(g, 0.9, 2.3);
        let uw = lie_bracket(&u, &w).unwrap();
        let wu = lie_bracket(&w, &u).unwrap();
        for (a, b) in uw.vectors.iter().zip(&wu.vectors) {
            for i in 0..3 {
                assert_eq!(a[i] + b[i], 0.0);
            }
        }
    }

    #[test]
    fn bracket_of_constants_vanishes() {
        let g = grid2d(12);
        let mk = |c: [f32; 3]| VelocityField {
            grid: g,
            vectors: vec![c; g.voxel_count()],
        };
        let b = lie_bracket(&mk([0.3, -0.2, 0.0]), &mk([-1.0, 0.4, 0.0])).unwrap();
        assert!(b.vectors.iter().all(|v| v.iter().all(|c| *c == 0.0)));
    }

    #[test]
    fn bch_with_zero_is_exact() {
        let g = grid2d(20);
        let u = wavy_field(g, 1.1, 0.5);
        let out = bch(&u, &VelocityField::zeros(g)).unwrap();
        for (a, b) in out.vectors.iter().zip(&u.vectors) {
            for i in 0..3 {
                assert_eq!(a[i], b[i]);
            }
        }
    }

    #[test]
    fn bch_of_commuting_fields_is_sum() {
        let g = grid2d(20);
        let u = wavy_field(g, 0.4, 0.9);
        let two_u = u.scaled(2.0);
        let out = bch(&u, &two_u).unwrap();
        for idx in 0..g.voxel_count() {
            for i in 0..3 {
                let expected = (u.vectors[idx][i] as f64 + two_u.vectors[idx][i] as f64) as f32;
                assert_eq!(out.vectors[idx][i], expected);
            }
        }
    }

    #[test]
    fn bch_beats_naive_sum() {
        let g = grid2d(32);
        let u = wavy_field(g, 0.45, 0.3);
        let w = wavy_field(g, 0.4, 2.1);
        let composed = compose(&exp_field(&u).unwrap(), &exp_field(&w).unwrap()).unwrap();
        let via_bch = exp_field(&bch(&u, &w).unwrap()).unwrap();
        let sum = VelocityField {
            grid: g,
            vectors: u
                .vectors
                .iter()
                .zip(&w.vectors)
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
                .collect(),
        };
        let via_sum = exp_field(&sum).unwrap();
        let err_bch = max_displacement_difference_voxels(&via_bch, &composed).unwrap();
        let err_sum = max_displacement_difference_voxels(&via_sum, &composed).unwrap();
        assert!(
            err_bch < err_sum,
            "series error {err_bch} not below naive-sum error {err_sum}"
        );
    }

    #[test]
    fn accumulate_zero_into_acc_is_exact() {
        let g = grid2d(16);
        let u = wavy_field(g, 1.7, 0.8);
        let out = bch_accumulate(&u, &VelocityField::zeros(g)).unwrap();
        assert_eq!(out.vectors, u.vectors);
    }

    #[test]
    fn accumulate_into_zero_recovers_small_field() {
        let g = grid2d(24);
        let w = wavy_field(g, 0.25, 1.4);
        let out = bch_accumulate(&VelocityField::zeros(g), &w).unwrap();
        let mut err: f64 = 0.0;
        for (a, b) in out.vectors.iter().zip(&w.vectors) {
            for i in 0..3 {
                err = err.max((a[i] as f64 - b[i] as f64).abs());
            }
        }
        assert!(err < 1e-6 * field_norm(&w).max(1e-30));
    }

    #[test]
    fn split_rule_matches_strict_inequality() {
        assert_eq!(split_count(0.0), 1);
        assert_eq!(split_count(0.49), 1);
        assert_eq!(split_count(0.5), 2);
        assert_eq!(split_count(3.0), 7); // 3.0/6 = 0.5 is not strictly below
        assert_eq!(split_count(2.9), 6);
    }

    #[test]
    fn norm_of_zero_and_constant() {
        let g = grid2d(10);
        assert_eq!(field_norm(&VelocityField::zeros(g)), 0.0);
        let c = VelocityField {
            grid: g,
            vectors: vec![[3.0, 4.0, 0.0]; g.voxel_count()],
        };
        assert!((field_norm(&c) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn norm_half_magnitude_split() {
        // half the voxels magnitude 1, half magnitude 0 -> sqrt(0.5)
        let g = GridSpec::planar(4, 2).unwrap();
        let mut v = VelocityField::zeros(g);
        for i in 0..4 {
            v.vectors[i] = [1.0, 0.0, 0.0];
        }
        // independent direct-summation oracle
        let mut acc = 0.0;
        for u in &v.vectors {
            acc += (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) as f64;
        }
        let expected = (acc / v.vectors.len() as f64).sqrt();
        assert_eq!(field_norm(&v), expected);
        assert!((field_norm(&v) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn jacobian_of_identity_is_one() {
        let det = jacobian_det(&DeformationField::identity(grid2d(10)));
        assert!(det.data.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn jacobian_of_uniform_scaling() {
        // u(x) = (alpha-1) * (p - center): phi scales about the center,
        // so the planar determinant is alpha^2 away from the boundary.
        let g = grid2d(16);
        let alpha = 1.2f64;
        let c = g.center();
        let mut phi = DeformationField::identity(g);
        for idx in 0..g.voxel_count() {
            let [x, y, z] = g.coords(idx);
            let p = g.position(x, y, z);
            phi.displacements[idx] = [
                ((alpha - 1.0) * (p[0] - c[0])) as f32,
                ((alpha - 1.0) * (p[1] - c[1])) as f32,
                0.0,
            ];
        }
        let det = jacobian_det(&phi);
        for idx in 0..g.voxel_count() {
            let [x, y, _] = g.coords(idx);
            if (1..15).contains(&x) && (1..15).contains(&y) {
                assert!((det.data[idx] as f64 - alpha * alpha).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn exp_inverse_composes_to_identity() {
        let g = grid2d(48);
        let v = wavy_field(g, 2.0, 0.6);
        let fwd = exp_field(&v).unwrap();
        let bwd = exp_field(&v.negated()).unwrap();
        let round = compose(&fwd, &bwd).unwrap();
        let err = max_displacement_voxels_interior(&round, 3);
        assert!(err < 0.1, "inverse residual {err} voxels");
    }

    #[test]
    fn exp_of_smooth_field_preserves_topology() {
        let g = grid2d(32);
        let v = wavy_field(g, 2.0, 1.9);
        let phi = exp_field(&v).unwrap();
        assert!(min_interior_jacobian(&phi) > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn bracket_bilinearity(scale in 0.25f64..4.0, pa in 0.0f64..6.0, pb in 0.0f64..6.0) {
            let g = grid2d(12);
            let u = wavy_field(g, 0.8, pa);
            let w = wavy_field(g, 0.6, pb);
            let b = lie_bracket(&u, &w).unwrap();
            let bs = lie_bracket(&u.scaled(scale), &w).unwrap();
            for (a, c) in bs.vectors.iter().zip(&b.vectors) {
                for i in 0..3 {
                    prop_assert!((a[i] as f64 - scale * c[i] as f64).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn norm_is_homogeneous(scale in 0.0f64..8.0, phase in 0.0f64..6.0) {
            let g = grid2d(10);
            let u = wavy_field(g, 1.0, phase);
            let n1 = field_norm(&u.scaled(scale));
            let n0 = field_norm(&u);
            prop_assert!((n1 - scale * n0).abs() < 1e-5 * (1.0 + n0));
        }
    }
}
