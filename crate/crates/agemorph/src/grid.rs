//! Grid geometry and voxel containers.
//!
//! Everything in this crate lives on a regular axis-aligned grid described by
//! [`GridSpec`]: voxel dimensions, physical spacing in millimeters and a
//! physical origin. Voxel data is stored in one flat buffer with x varying
//! fastest. Planar (2-D) data uses a single-slice grid (`dims[2] == 1`) with
//! zero z-components in vector quantities, so every operator degenerates to
//! its 2-D form without special cases.
//!
//! Interpolation helpers here use the `a + t*(b - a)` form of linear
//! interpolation: sampling a constant buffer, or sampling at an exact voxel
//! center, reproduces the stored value bit for bit. Several identities in
//! [`crate::field`] rely on this.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by grid and field primitives.
#[derive(Debug, Error)]
pub enum FieldError {
    #[error("{op}: operands live on incompatible grids")]
    GridMismatch { op: &'static str },
    #[error("{what}: expected {expected} elements, got {got}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what}: non-finite value at linear index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("invalid grid: {reason}")]
    InvalidGrid { reason: String },
}

/// Regular grid geometry: voxels per axis, spacing (mm) and origin (mm).
///
/// Two grids are compatible iff dimensions, spacing and origin are all
/// exactly equal; operators refuse to mix volumes from different grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, FieldError> {
        if dims.contains(&0) {
            return Err(FieldError::InvalidGrid {
                reason: format!("all dimensions must be at least 1, got {dims:?}"),
            });
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(FieldError::InvalidGrid {
                reason: format!("spacing must be finite and positive, got {spacing:?}"),
            });
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(FieldError::InvalidGrid {
                reason: format!("origin must be finite, got {origin:?}"),
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Convenience constructor for a planar grid with unit spacing.
    pub fn planar(nx: usize, ny: usize) -> Result<Self, FieldError> {
        Self::new([nx, ny, 1], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Exact equality on dimensions, spacing and origin.
    pub fn compatible(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub fn is_planar(&self) -> bool {
        self.dims[2] == 1
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical position of a voxel center.
    #[inline]
    pub fn position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Physical center of the grid extent.
    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + 0.5 * (self.dims[a] - 1) as f64 * self.spacing[a];
        }
        c
    }

    /// True when the voxel is at least `margin` voxels away from every
    /// non-degenerate face.
    #[inline]
    pub fn is_interior(&self, x: usize, y: usize, z: usize, margin: usize) -> bool {
        let ok = |p: usize, d: usize| d == 1 || (p >= margin && p + margin < d);
        ok(x, self.dims[0]) && ok(y, self.dims[1]) && ok(z, self.dims[2])
    }
}

/// Scalar intensity volume on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub grid: GridSpec,
    pub data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(grid: GridSpec, data: Vec<f32>) -> Result<Self, FieldError> {
        if data.len() != grid.voxel_count() {
            return Err(FieldError::CountMismatch {
                what: "scalar volume",
                expected: grid.voxel_count(),
                got: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            data: vec![0.0; grid.voxel_count()],
            grid,
        }
    }

    pub fn filled(grid: GridSpec, value: f32) -> Self {
        Self {
            data: vec![value; grid.voxel_count()],
            grid,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<(), FieldError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(FieldError::NonFinite { what, index }),
            None => Ok(()),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            let v = v as f64;
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    pub fn mean(&self) -> f64 {
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        sum / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let sq: f64 = self.data.iter().map(|&v| (v as f64 - m).powi(2)).sum();
        sq / self.data.len() as f64
    }
}

/// Stationary velocity field: one millimeter-valued 3-vector per voxel.
///
/// The field parameterizes a diffeomorphism through its group exponential
/// ([`crate::field::exp_field`]); the zero field maps to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: GridSpec,
    pub vectors: Vec<[f32; 3]>,
}

/// Dense deformation `phi(x) = x + u(x)` stored as displacements in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub grid: GridSpec,
    pub displacements: Vec<[f32; 3]>,
}

impl VelocityField {
    pub fn new(grid: GridSpec, vectors: Vec<[f32; 3]>) -> Result<Self, FieldError> {
        if vectors.len() != grid.voxel_count() {
            return Err(FieldError::CountMismatch {
                what: "velocity field",
                expected: grid.voxel_count(),
                got: vectors.len(),
            });
        }
        Ok(Self { grid, vectors })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            vectors: vec![[0.0; 3]; grid.voxel_count()],
            grid,
        }
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<(), FieldError> {
        match self
            .vectors
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            Some(index) => Err(FieldError::NonFinite { what, index }),
            None => Ok(()),
        }
    }

    /// Componentwise scaling by a scalar (computed in f64, stored f32).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            vectors: self
                .vectors
                .iter()
                .map(|v| {
                    [
                        (v[0] as f64 * factor) as f32,
                        (v[1] as f64 * factor) as f32,
                        (v[2] as f64 * factor) as f32,
                    ]
                })
                .collect(),
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            grid: self.grid,
            vectors: self.vectors.iter().map(|v| [-v[0], -v[1], -v[2]]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|v| v.iter().all(|c| *c == 0.0))
    }
}

impl DeformationField {
    pub fn new(grid: GridSpec, displacements: Vec<[f32; 3]>) -> Result<Self, FieldError> {
        if displacements.len() != grid.voxel_count() {
            return Err(FieldError::CountMismatch {
                what: "deformation field",
                expected: grid.voxel_count(),
                got: displacements.len(),
            });
        }
        Ok(Self {
            grid,
            displacements,
        })
    }

    /// The identity deformation (all displacements zero).
    pub fn identity(grid: GridSpec) -> Self {
        Self {
            displacements: vec![[0.0; 3]; grid.voxel_count()],
            grid,
        }
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<(), FieldError> {
        match self
            .displacements
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            Some(index) => Err(FieldError::NonFinite { what, index }),
            None => Ok(()),
        }
    }
}

/// Integer label volume; label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub grid: GridSpec,
    pub labels: Vec<i32>,
}

impl LabelVolume {
    pub fn new(grid: GridSpec, labels: Vec<i32>) -> Result<Self, FieldError> {
        if labels.len() != grid.voxel_count() {
            return Err(FieldError::CountMismatch {
                what: "label volume",
                expected: grid.voxel_count(),
                got: labels.len(),
            });
        }
        if let Some(index) = labels.iter().position(|&l| l < 0) {
            return Err(FieldError::NonFinite {
                what: "label volume (negative label)",
                index,
            });
        }
        Ok(Self { grid, labels })
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Trilinear sample of a vector buffer with clamp-to-edge boundary handling.
/// `ci` is a continuous voxel index.
#[inline]
pub(crate) fn sample_vector_clamped(vecs: &[[f32; 3]], dims: [usize; 3], ci: [f64; 3]) -> [f64; 3] {
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut fr = [0f64; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        let c = ci[a].clamp(0.0, max);
        let f = c.floor();
        let lo = f as usize;
        i0[a] = lo;
        i1[a] = (lo + 1).min(dims[a] - 1);
        fr[a] = c - f;
    }
    let nx = dims[0];
    let nxy = dims[0] * dims[1];
    let mut out = [0f64; 3];
    for comp in 0..3 {
        let g = |x: usize, y: usize, z: usize| vecs[x + nx * y + nxy * z][comp] as f64;
        let c00 = lerp(g(i0[0], i0[1], i0[2]), g(i1[0], i0[1], i0[2]), fr[0]);
        let c10 = lerp(g(i0[0], i1[1], i0[2]), g(i1[0], i1[1], i0[2]), fr[0]);
        let c01 = lerp(g(i0[0], i0[1], i1[2]), g(i1[0], i0[1], i1[2]), fr[0]);
        let c11 = lerp(g(i0[0], i1[1], i1[2]), g(i1[0], i1[1], i1[2]), fr[0]);
        let c0 = lerp(c00, c10, fr[1]);
        let c1 = lerp(c01, c11, fr[1]);
        out[comp] = lerp(c0, c1, fr[2]);
    }
    out
}

/// Trilinear sample of a scalar buffer; anything outside the grid reads as 0.
#[inline]
pub(crate) fn sample_scalar_zero(data: &[f32], dims: [usize; 3], ci: [f64; 3]) -> f64 {
    for a in 0..3 {
        // NaN-safe: any non-ordered comparison falls through to "outside".
        if !(ci[a] > -1.0 && ci[a] < dims[a] as f64) {
            return 0.0;
        }
    }
    let mut base = [0isize; 3];
    let mut fr = [0f64; 3];
    for a in 0..3 {
        let f = ci[a].floor();
        base[a] = f as isize;
        fr[a] = ci[a] - f;
    }
    let nx = dims[0] as isize;
    let ny = dims[1] as isize;
    let nz = dims[2] as isize;
    let fetch = |x: isize, y: isize, z: isize| -> f64 {
        if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
            0.0
        } else {
            data[(x + nx * (y + ny * z)) as usize] as f64
        }
    };
    let (x0, y0, z0) = (base[0], base[1], base[2]);
    let c00 = lerp(fetch(x0, y0, z0), fetch(x0 + 1, y0, z0), fr[0]);
    let c10 = lerp(fetch(x0, y0 + 1, z0), fetch(x0 + 1, y0 + 1, z0), fr[0]);
    let c01 = lerp(fetch(x0, y0, z0 + 1), fetch(x0 + 1, y0, z0 + 1), fr[0]);
    let c11 = lerp(fetch(x0, y0 + 1, z0 + 1), fetch(x0 + 1, y0 + 1, z0 + 1), fr[0]);
    let c0 = lerp(c00, c10, fr[1]);
    let c1 = lerp(c01, c11, fr[1]);
    lerp(c0, c1, fr[2])
}

/// Nearest-neighbor sample of a label buffer; outside the grid reads as 0.
#[inline]
pub(crate) fn sample_label_nearest(labels: &[i32], dims: [usize; 3], ci: [f64; 3]) -> i32 {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = ci[a].round();
        if !(r >= 0.0 && r <= (dims[a] - 1) as f64) {
            return 0;
        }
        idx[a] = r as usize;
    }
    labels[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])]
}
