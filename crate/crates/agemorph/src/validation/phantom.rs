//! Ellipse-sum head phantom.
//!
//! The classic ten-ellipse intensity phantom on the normalized square
//! `[-1, 1]^2`, extended to ellipsoids for true 3-D grids. The two lateral
//! cavities and the two small lower inclusions are kept as exact mirror
//! pairs so the phantom is symmetric under an x-flip, which the test suites
//! rely on. Intensities lie in `[0, 1]` with the outer shell at 1.

use crate::grid::{GridSpec, ScalarVolume};

use super::ValidationError;

/// `(intensity, a, b, c, x0, y0, z0, phi_degrees)`; rotation about z.
const ELLIPSOIDS: [(f64, f64, f64, f64, f64, f64, f64, f64); 10] = [
    (1.00, 0.6900, 0.9200, 0.810, 0.0, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.8740, 0.780, 0.0, -0.0184, 0.0, 0.0),
    (-0.02, 0.1100, 0.3100, 0.220, 0.22, 0.0, 0.0, -18.0),
    (-0.02, 0.1100, 0.3100, 0.220, -0.22, 0.0, 0.0, 18.0),
    (0.01, 0.2100, 0.2500, 0.410, 0.0, 0.35, -0.15, 0.0),
    (0.01, 0.0460, 0.0460, 0.050, 0.0, 0.10, 0.25, 0.0),
    (0.01, 0.0460, 0.0460, 0.050, 0.0, -0.10, 0.25, 0.0),
    (0.01, 0.0460, 0.0230, 0.050, -0.08, -0.605, 0.0, 0.0),
    (0.01, 0.0230, 0.0230, 0.020, 0.0, -0.606, 0.0, 0.0),
    (0.01, 0.0460, 0.0230, 0.050, 0.08, -0.605, 0.0, 0.0),
];

/// Phantom value at a normalized coordinate (each axis in `[-1, 1]`).
/// For planar grids `w` is ignored.
pub(crate) fn phantom_value(u: f64, v: f64, w: f64, planar: bool) -> f64 {
    let mut acc = 0.0;
    for (intensity, a, b, c, x0, y0, z0, phi_deg) in ELLIPSOIDS {
        let phi = phi_deg.to_radians();
        let (s, co) = phi.sin_cos();
        let dx = u - x0;
        let dy = v - y0;
        let q1 = co * dx + s * dy;
        let q2 = -s * dx + co * dy;
        let mut r = (q1 / a).powi(2) + (q2 / b).powi(2);
        if !planar {
            r += ((w - z0) / c).powi(2);
        }
        if r <= 1.0 {
            acc += intensity;
        }
    }
    acc
}

/// Generate the phantom on a grid. Every non-degenerate axis needs at least
/// 32 voxels; voxel centers are mapped onto `[-1, 1]` per axis.
pub fn shepp_logan(grid: &GridSpec) -> Result<ScalarVolume, ValidationError> {
    if grid
        .dims
        .iter()
        .any(|&d| d > 1 && d < 32)
        || grid.dims.iter().all(|&d| d == 1)
    {
        return Err(ValidationError::GridTooSmall { dims: grid.dims });
    }
    let norm = |i: usize, d: usize| -> f64 {
        if d == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (d - 1) as f64
        }
    };
    let planar = grid.is_planar();
    let mut data = Vec::with_capacity(grid.voxel_count());
    for z in 0..grid.dims[2] {
        let w = norm(z, grid.dims[2]);
        for y in 0..grid.dims[1] {
            let v = norm(y, grid.dims[1]);
            for x in 0..grid.dims[0] {
                let u = norm(x, grid.dims[0]);
                data.push(phantom_value(u, v, w, planar) as f32);
            }
        }
    }
    Ok(ScalarVolume { grid: *grid, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::mse;

    #[test]
    fn center_is_interior_tissue() {
        let g = GridSpec::planar(64, 64).unwrap();
        let img = shepp_logan(&g).unwrap();
        let c = img.at(32, 32, 0) as f64;
        // independent oracle: evaluate the ellipse sum at that coordinate
        let u = -1.0 + 2.0 * 32.0 / 63.0;
        let expected = phantom_value(u, u, 0.0, true);
        assert_eq!(c, expected as f32 as f64);
        assert!(c > 0.0 && c < 1.0, "center {c}");
    }

    #[test]
    fn corners_are_empty() {
        let g = GridSpec::planar(64, 64).unwrap();
        let img = shepp_logan(&g).unwrap();
        assert_eq!(img.at(0, 0, 0), 0.0);
        assert_eq!(img.at(63, 63, 0), 0.0);
    }

    #[test]
    fn shell_reaches_full_intensity() {
        let g = GridSpec::planar(64, 64).unwrap();
        let img = shepp_logan(&g).unwrap();
        let (_, hi) = img.min_max();
        assert_eq!(hi, 1.0);
        let (lo, _) = img.min_max();
        assert!(lo >= 0.0);
    }

    #[test]
    fn x_mirror_symmetry() {
        let g = GridSpec::planar(64, 64).unwrap();
        let img = shepp_logan(&g).unwrap();
        let mut mirrored = img.clone();
        for z in 0..g.dims[2] {
            for y in 0..g.dims[1] {
                for x in 0..g.dims[0] {
                    mirrored.data[g.index(x, y, z)] = img.at(g.dims[0] - 1 - x, y, z);
                }
            }
        }
        let e = mse(&img, &mirrored).unwrap();
        assert!(e < 1e-10, "mirror mse {e}");
    }

    #[test]
    fn volumetric_variant_has_interior_structure() {
        let g = GridSpec::new([32, 32, 32], [1.0; 3], [0.0; 3]).unwrap();
        let img = shepp_logan(&g).unwrap();
        assert!(img.at(16, 16, 16) > 0.0);
        assert_eq!(img.at(0, 0, 0), 0.0);
        assert_eq!(img.at(16, 16, 31), 0.0);
    }

    #[test]
    fn small_grids_are_rejected() {
        let g = GridSpec::planar(16, 64).unwrap();
        assert!(matches!(
            shepp_logan(&g),
            Err(ValidationError::GridTooSmall { .. })
        ));
    }
}
