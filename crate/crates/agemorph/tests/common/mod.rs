//! Shared helpers for the integration suites: an explicit Euler flow
//! integrator (independent oracle for the group exponential) and small
//! construction utilities.

#![allow(dead_code)]

use agemorph::grid::{DeformationField, GridSpec, ScalarVolume, VelocityField};

/// Standalone trilinear sampler with clamp-to-edge handling, written
/// independently of the library's interpolation code.
fn sample_clamped(vecs: &[[f32; 3]], dims: [usize; 3], p: [f64; 3]) -> [f64; 3] {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut fr = [0f64; 3];
    for a in 0..3 {
        let c = p[a].clamp(0.0, (dims[a] - 1) as f64);
        lo[a] = c.floor() as usize;
        hi[a] = (lo[a] + 1).min(dims[a] - 1);
        fr[a] = c - lo[a].min(dims[a] - 1) as f64;
    }
    let idx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let mut out = [0.0; 3];
    for comp in 0..3 {
        let mut acc = 0.0;
        for (zc, wz) in [(lo[2], 1.0 - fr[2]), (hi[2], fr[2])] {
            for (yc, wy) in [(lo[1], 1.0 - fr[1]), (hi[1], fr[1])] {
                for (xc, wx) in [(lo[0], 1.0 - fr[0]), (hi[0], fr[0])] {
                    acc += wx * wy * wz * vecs[idx(xc, yc, zc)][comp] as f64;
                }
            }
        }
        out[comp] = acc;
    }
    out
}

/// Flow each voxel center through `dx/dt = v(x)` with `steps` explicit Euler
/// steps over unit time and return the resulting displacement field. This is
/// deliberately a different integration scheme from the library's scaling
/// and squaring.
pub fn euler_flow(v: &VelocityField, steps: usize) -> DeformationField {
    let g = v.grid;
    let dt = 1.0 / steps as f64;
    let mut displacements = vec![[0f32; 3]; g.voxel_count()];
    for idx in 0..g.voxel_count() {
        let [x, y, z] = g.coords(idx);
        // positions tracked in continuous voxel coordinates
        let mut p = [x as f64, y as f64, z as f64];
        for _ in 0..steps {
            let vel = sample_clamped(&v.vectors, g.dims, p);
            for a in 0..3 {
                p[a] += dt * vel[a] / g.spacing[a];
            }
        }
        displacements[idx] = [
            ((p[0] - x as f64) * g.spacing[0]) as f32,
            ((p[1] - y as f64) * g.spacing[1]) as f32,
            ((p[2] - z as f64) * g.spacing[2]) as f32,
        ];
    }
    DeformationField {
        grid: g,
        displacements,
    }
}

/// Max displacement difference between two deformations in voxel units,
/// restricted to voxels at least `margin` voxels inside the boundary.
pub fn max_diff_voxels_interior(a: &DeformationField, b: &DeformationField, margin: usize) -> f64 {
    let g = a.grid;
    let mut worst = 0.0f64;
    for idx in 0..g.voxel_count() {
        let [x, y, z] = g.coords(idx);
        if !g.is_interior(x, y, z, margin) {
            continue;
        }
        let ua = a.displacements[idx];
        let ub = b.displacements[idx];
        let mut m2 = 0.0;
        for c in 0..3 {
            let d = (ua[c] - ub[c]) as f64 / g.spacing[c];
            m2 += d * d;
        }
        worst = worst.max(m2.sqrt());
    }
    worst
}

/// Axis-aligned box phantom with value 1 inside `[lo, hi)` per axis.
pub fn box_phantom(grid: GridSpec, lo: [usize; 3], hi: [usize; 3]) -> ScalarVolume {
    let mut data = vec![0f32; grid.voxel_count()];
    for idx in 0..grid.voxel_count() {
        let [x, y, z] = grid.coords(idx);
        if x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1] && z >= lo[2] && z < hi[2] {
            data[idx] = 1.0;
        }
    }
    ScalarVolume { grid, data }
}
