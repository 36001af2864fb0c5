//! Separable Gaussian filtering, image gradients, resolution pyramids and
//! intensity similarity measures.

use rayon::prelude::*;

use crate::grid::{sample_vector_clamped, FieldError, GridSpec, ScalarVolume, VelocityField};

const PAR_MIN_LEN: usize = 8192;

/// Normalized Gaussian taps for a sigma given in voxel units. Returns `None`
/// when the kernel would be indistinguishable from identity.
fn gaussian_kernel(sigma_vox: f64) -> Option<Vec<f64>> {
    if sigma_vox < 0.25 {
        return None;
    }
    let radius = (3.0 * sigma_vox).ceil() as i64;
    let mut taps = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for k in -radius..=radius {
        let w = (-(k as f64 * k as f64) / (2.0 * sigma_vox * sigma_vox)).exp();
        taps.push(w);
        sum += w;
    }
    for w in &mut taps {
        *w /= sum;
    }
    Some(taps)
}

/// One separable pass along `axis` with clamp-to-edge boundaries.
/// `lanes` is the number of interleaved channels per voxel.
fn axis_pass(data: &[f32], dims: [usize; 3], lanes: usize, axis: usize, taps: &[f64]) -> Vec<f32> {
    let radius = (taps.len() / 2) as i64;
    let n = dims[0] * dims[1] * dims[2];
    let d = dims[axis] as i64;
    (0..n * lanes)
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|flat| {
            let idx = flat / lanes;
            let lane = flat % lanes;
            let x = (idx % dims[0]) as i64;
            let rest = idx / dims[0];
            let y = (rest % dims[1]) as i64;
            let z = (rest / dims[1]) as i64;
            let pos = [x, y, z];
            let mut acc = 0.0f64;
            for (t, w) in taps.iter().enumerate() {
                let mut q = pos;
                q[axis] = (pos[axis] + t as i64 - radius).clamp(0, d - 1);
                let src = (q[0] + dims[0] as i64 * (q[1] + dims[1] as i64 * q[2])) as usize;
                acc += w * data[src * lanes + lane] as f64;
            }
            acc as f32
        })
        .collect()
}

fn smooth_buffer(data: Vec<f32>, grid: &GridSpec, lanes: usize, sigma_mm: f64) -> Vec<f32> {
    let mut out = data;
    for axis in 0..3 {
        if grid.dims[axis] == 1 {
            continue;
        }
        if let Some(taps) = gaussian_kernel(sigma_mm / grid.spacing[axis]) {
            out = axis_pass(&out, grid.dims, lanes, axis, &taps);
        }
    }
    out
}

pub fn gaussian_smooth_scalar(img: &ScalarVolume, sigma_mm: f64) -> ScalarVolume {
    ScalarVolume {
        grid: img.grid,
        data: smooth_buffer(img.data.clone(), &img.grid, 1, sigma_mm),
    }
}

pub fn gaussian_smooth_field(v: &VelocityField, sigma_mm: f64) -> VelocityField {
    let flat: Vec<f32> = v.vectors.iter().flat_map(|u| u.iter().copied()).collect();
    let smoothed = smooth_buffer(flat, &v.grid, 3, sigma_mm);
    VelocityField {
        grid: v.grid,
        vectors: smoothed.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    }
}

/// Spatial intensity gradient in physical units (central differences,
/// one-sided at the boundary, zero along degenerate axes).
pub fn gradient_volume(img: &ScalarVolume) -> VelocityField {
    let g = img.grid;
    let data = &img.data;
    let vectors: Vec<[f32; 3]> = (0..g.voxel_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            let [x, y, z] = g.coords(idx);
            let mut out = [0f32; 3];
            let pos = [x, y, z];
            for axis in 0..3 {
                let d = g.dims[axis];
                if d == 1 {
                    continue;
                }
                let h = g.spacing[axis];
                let fetch = |p: usize| -> f64 {
                    let mut q = pos;
                    q[axis] = p;
                    data[g.index(q[0], q[1], q[2])] as f64
                };
                let p = pos[axis];
                out[axis] = if p == 0 {
                    ((fetch(1) - fetch(0)) / h) as f32
                } else if p == d - 1 {
                    ((fetch(d - 1) - fetch(d - 2)) / h) as f32
                } else {
                    ((fetch(p + 1) - fetch(p - 1)) / (2.0 * h)) as f32
                };
            }
            out
        })
        .collect();
    VelocityField { grid: g, vectors }
}

/// Sum of squared intensity differences (fixed accumulation order).
pub fn ssd(a: &ScalarVolume, b: &ScalarVolume) -> f64 {
    debug_assert!(a.grid.compatible(&b.grid));
    let mut acc = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Mean squared intensity difference.
pub fn mse(a: &ScalarVolume, b: &ScalarVolume) -> Result<f64, FieldError> {
    if !a.grid.compatible(&b.grid) {
        return Err(FieldError::GridMismatch { op: "mse" });
    }
    Ok(ssd(a, b) / a.data.len() as f64)
}

/// Grid of the next-coarser pyramid level: non-degenerate axes are halved
/// (rounding up) and their spacing doubled; the origin is kept so coarse
/// voxel `i` sits on fine voxel `2i`.
pub fn coarse_grid(g: &GridSpec) -> GridSpec {
    let mut dims = g.dims;
    let mut spacing = g.spacing;
    for a in 0..3 {
        if g.dims[a] > 1 {
            dims[a] = g.dims[a].div_ceil(2);
            spacing[a] = g.spacing[a] * 2.0;
        }
    }
    GridSpec {
        dims,
        spacing,
        origin: g.origin,
    }
}

/// Factor-two downsampling: Gaussian pre-smoothing at one fine voxel, then
/// decimation on the coarse grid.
pub fn downsample(img: &ScalarVolume) -> ScalarVolume {
    let sigma_mm = img
        .grid
        .spacing
        .iter()
        .zip(&img.grid.dims)
        .filter(|(_, d)| **d > 1)
        .map(|(s, _)| *s)
        .fold(0.0f64, f64::max);
    let smoothed = gaussian_smooth_scalar(img, sigma_mm);
    let cg = coarse_grid(&img.grid);
    let mut data = Vec::with_capacity(cg.voxel_count());
    for z in 0..cg.dims[2] {
        for y in 0..cg.dims[1] {
            for x in 0..cg.dims[0] {
                let fx = if img.grid.dims[0] > 1 { 2 * x } else { x };
                let fy = if img.grid.dims[1] > 1 { 2 * y } else { y };
                let fz = if img.grid.dims[2] > 1 { 2 * z } else { z };
                data.push(smoothed.at(fx, fy, fz));
            }
        }
    }
    ScalarVolume { grid: cg, data }
}

/// Resample a velocity field onto a finer grid by trilinear interpolation in
/// physical space; vectors are in millimeters so no magnitude rescaling is
/// needed.
pub fn upsample_field(v: &VelocityField, target: &GridSpec) -> VelocityField {
    let cg = v.grid;
    let vectors: Vec<[f32; 3]> = (0..target.voxel_count())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|idx| {
            let x = idx % target.dims[0];
            let rest = idx / target.dims[0];
            let y = rest % target.dims[1];
            let z = rest / target.dims[1];
            let p = target.position(x, y, z);
            let ci = [
                (p[0] - cg.origin[0]) / cg.spacing[0],
                (p[1] - cg.origin[1]) / cg.spacing[1],
                (p[2] - cg.origin[2]) / cg.spacing[2],
            ];
            let s = sample_vector_clamped(&v.vectors, cg.dims, ci);
            [s[0] as f32, s[1] as f32, s[2] as f32]
        })
        .collect();
    VelocityField {
        grid: *target,
        vectors,
    }
}

/// Number of usable pyramid levels: capped so the smallest non-degenerate
/// axis stays at least 8 voxels at the coarsest level.
pub fn usable_levels(grid: &GridSpec, requested: usize) -> usize {
    let mut levels = 1usize;
    let mut g = *grid;
    while levels < requested {
        let next = coarse_grid(&g);
        let min_dim = next
            .dims
            .iter()
            .filter(|d| **d > 1)
            .min()
            .copied()
            .unwrap_or(1);
        if min_dim < 8 {
            break;
        }
        g = next;
        levels += 1;
    }
    levels
}

/// Gaussian pyramid, index 0 = finest.
pub fn pyramid(img: &ScalarVolume, levels: usize) -> Vec<ScalarVolume> {
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let next = downsample(out.last().unwrap());
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized() {
        let taps = gaussian_kernel(1.5).unwrap();
        let sum: f64 = taps.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(gaussian_kernel(0.1).is_none());
    }

    #[test]
    fn smoothing_preserves_constants() {
        let g = GridSpec::planar(16, 16).unwrap();
        let img = ScalarVolume::filled(g, 2.5);
        let out = gaussian_smooth_scalar(&img, 2.0);
        for v in out.data {
            assert!((v - 2.5).abs() < 1e-5);
        }
    }

    #[test]
    fn downsample_halves_dims() {
        let g = GridSpec::new([17, 16, 1], [1.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let img = ScalarVolume::zeros(g);
        let out = downsample(&img);
        assert_eq!(out.grid.dims, [9, 8, 1]);
        assert_eq!(out.grid.spacing, [2.0, 2.0, 1.0]);
    }

    #[test]
    fn level_cap_keeps_min_dim() {
        let g = GridSpec::planar(64, 64).unwrap();
        assert_eq!(usable_levels(&g, 3), 3);
        assert_eq!(usable_levels(&g, 10), 4); // 64 -> 32 -> 16 -> 8
        let tiny = GridSpec::planar(8, 8).unwrap();
        assert_eq!(usable_levels(&tiny, 3), 1);
    }

    #[test]
    fn upsample_roundtrip_on_smooth_field() {
        let fine = GridSpec::planar(32, 32).unwrap();
        let coarse = coarse_grid(&fine);
        let mut v = VelocityField::zeros(coarse);
        for idx in 0..coarse.voxel_count() {
            let [x, y, _] = coarse.coords(idx);
            v.vectors[idx] = [x as f32 * 0.1, y as f32 * -0.05, 0.0];
        }
        let up = upsample_field(&v, &fine);
        // linear data is reproduced exactly by linear interpolation
        for idx in 0..fine.voxel_count() {
            let [x, y, _] = fine.coords(idx);
            if x < 30 && y < 30 {
                assert!((up.vectors[idx][0] as f64 - x as f64 * 0.05).abs() < 1e-5);
                assert!((up.vectors[idx][1] as f64 + y as f64 * 0.025).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn mse_reports_grid_mismatch() {
        let a = ScalarVolume::zeros(GridSpec::planar(4, 4).unwrap());
        let b = ScalarVolume::zeros(GridSpec::planar(5, 4).unwrap());
        assert!(mse(&a, &b).is_err());
    }
}
