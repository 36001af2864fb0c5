//! Twelve-parameter affine registration by multiresolution gradient descent
//! on the sum of squared differences, initialized from center-of-mass
//! alignment.

use crate::filter::{gradient_volume, pyramid, usable_levels};
use crate::grid::{sample_scalar_zero, sample_vector_clamped, GridSpec, ScalarVolume};

use super::{RegistrationError, RegistrationParams};

/// Affine map `A(p) = matrix * p + translation` on physical coordinates.
///
/// As produced by [`affine_register`], `A` carries fixed-space coordinates
/// into moving-space coordinates, i.e. the moving image resampled through
/// `A` matches the fixed image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + self.translation[0],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + self.translation[1],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + self.translation[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det.abs() <= 1e-12 {
            return None;
        }
        let m = &self.matrix;
        let inv_det = 1.0 / det;
        let mut inv = [[0.0; 3]; 3];
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        let t = self.translation;
        let nt = [
            -(inv[0][0] * t[0] + inv[0][1] * t[1] + inv[0][2] * t[2]),
            -(inv[1][0] * t[0] + inv[1][1] * t[1] + inv[1][2] * t[2]),
            -(inv[2][0] * t[0] + inv[2][1] * t[1] + inv[2][2] * t[2]),
        ];
        Some(Self {
            matrix: inv,
            translation: nt,
        })
    }
}

/// Resample `img` through the affine map: `out(x) = img(A(x))`, trilinear,
/// zero outside the grid. An exact identity short-circuits to a copy.
pub fn resample_affine(
    img: &ScalarVolume,
    a: &AffineTransform,
) -> Result<ScalarVolume, RegistrationError> {
    let det = a.determinant();
    if det.abs() <= 1e-8 {
        return Err(RegistrationError::SingularTransform { det });
    }
    if a.is_identity() {
        return Ok(img.clone());
    }
    let g = img.grid;
    let mut data = Vec::with_capacity(g.voxel_count());
    for z in 0..g.dims[2] {
        for y in 0..g.dims[1] {
            for x in 0..g.dims[0] {
                let q = a.apply(g.position(x, y, z));
                let ci = [
                    (q[0] - g.origin[0]) / g.spacing[0],
                    (q[1] - g.origin[1]) / g.spacing[1],
                    (q[2] - g.origin[2]) / g.spacing[2],
                ];
                data.push(sample_scalar_zero(&img.data, g.dims, ci) as f32);
            }
        }
    }
    Ok(ScalarVolume { grid: g, data })
}

fn center_of_mass(img: &ScalarVolume) -> Option<[f64; 3]> {
    let (lo, _) = img.min_max();
    let g = img.grid;
    let mut acc = [0.0f64; 3];
    let mut total = 0.0f64;
    for idx in 0..g.voxel_count() {
        let w = img.data[idx] as f64 - lo;
        if w > 0.0 {
            let [x, y, z] = g.coords(idx);
            let p = g.position(x, y, z);
            acc[0] += w * p[0];
            acc[1] += w * p[1];
            acc[2] += w * p[2];
            total += w;
        }
    }
    if total <= 0.0 {
        return None;
    }
    Some([acc[0] / total, acc[1] / total, acc[2] / total])
}

/// Centered parameterization used during optimization:
/// `A(p) = m * (p - c) + c + t`.
#[derive(Clone, Copy)]
struct CenteredAffine {
    m: [[f64; 3]; 3],
    t: [f64; 3],
    c: [f64; 3],
}

impl CenteredAffine {
    fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.c[0], p[1] - self.c[1], p[2] - self.c[2]];
        [
            self.m[0][0] * d[0] + self.m[0][1] * d[1] + self.m[0][2] * d[2] + self.c[0] + self.t[0],
            self.m[1][0] * d[0] + self.m[1][1] * d[1] + self.m[1][2] * d[2] + self.c[1] + self.t[1],
            self.m[2][0] * d[0] + self.m[2][1] * d[1] + self.m[2][2] * d[2] + self.c[2] + self.t[2],
        ]
    }

    fn into_plain(self) -> AffineTransform {
        // A(p) = m p + (c + t - m c)
        let mc = [
            self.m[0][0] * self.c[0] + self.m[0][1] * self.c[1] + self.m[0][2] * self.c[2],
            self.m[1][0] * self.c[0] + self.m[1][1] * self.c[1] + self.m[1][2] * self.c[2],
            self.m[2][0] * self.c[0] + self.m[2][1] * self.c[1] + self.m[2][2] * self.c[2],
        ];
        AffineTransform {
            matrix: self.m,
            translation: [
                self.c[0] + self.t[0] - mc[0],
                self.c[1] + self.t[1] - mc[1],
                self.c[2] + self.t[2] - mc[2],
            ],
        }
    }
}

struct SsdEval {
    ssd: f64,
    grad_m: [[f64; 3]; 3],
    grad_t: [f64; 3],
}

fn ssd_and_gradient(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    moving_grad: &[[f32; 3]],
    aff: &CenteredAffine,
) -> SsdEval {
    let g = fixed.grid;
    let mg = moving.grid;
    let mut ev = SsdEval {
        ssd: 0.0,
        grad_m: [[0.0; 3]; 3],
        grad_t: [0.0; 3],
    };
    for z in 0..g.dims[2] {
        for y in 0..g.dims[1] {
            for x in 0..g.dims[0] {
                let p = g.position(x, y, z);
                let q = aff.apply(p);
                let ci = [
                    (q[0] - mg.origin[0]) / mg.spacing[0],
                    (q[1] - mg.origin[1]) / mg.spacing[1],
                    (q[2] - mg.origin[2]) / mg.spacing[2],
                ];
                let mv = sample_scalar_zero(&moving.data, mg.dims, ci);
                let r = mv - fixed.at(x, y, z) as f64;
                ev.ssd += r * r;
                if r != 0.0 {
                    let gr = sample_vector_clamped(moving_grad, mg.dims, ci);
                    let d = [p[0] - aff.c[0], p[1] - aff.c[1], p[2] - aff.c[2]];
                    for i in 0..3 {
                        let gi = 2.0 * r * gr[i];
                        ev.grad_t[i] += gi;
                        for j in 0..3 {
                            ev.grad_m[i][j] += gi * d[j];
                        }
                    }
                }
            }
        }
    }
    ev
}

fn max_corner_displacement(g: &GridSpec, c: [f64; 3], dm: &[[f64; 3]; 3], dt: &[f64; 3]) -> f64 {
    let mut best = 0.0f64;
    for zc in [0usize, g.dims[2] - 1] {
        for yc in [0usize, g.dims[1] - 1] {
            for xc in [0usize, g.dims[0] - 1] {
                let p = g.position(xc, yc, zc);
                let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                let mut mag2 = 0.0;
                for i in 0..3 {
                    let v = dm[i][0] * d[0] + dm[i][1] * d[1] + dm[i][2] * d[2] + dt[i];
                    mag2 += v * v;
                }
                best = best.max(mag2.sqrt());
            }
        }
    }
    best
}

fn optimize_level(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    aff: &mut CenteredAffine,
    iterations: usize,
    tol: f64,
) {
    let moving_grad = gradient_volume(moving);
    let min_spacing = fixed
        .grid
        .spacing
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    // characteristic radius couples matrix and translation step sizes
    let rho = {
        let g = fixed.grid;
        let mut r = 0.0f64;
        for a in 0..3 {
            r += (0.5 * (g.dims[a] - 1) as f64 * g.spacing[a]).powi(2);
        }
        r.sqrt().max(min_spacing)
    };
    let mut radius = 2.0 * min_spacing;
    let mut ev = ssd_and_gradient(fixed, moving, &moving_grad.vectors, aff);
    if ev.ssd == 0.0 {
        return;
    }
    let ssd0 = ev.ssd;
    for _ in 0..iterations {
        let mut dm = [[0.0f64; 3]; 3];
        let mut dt = [0.0f64; 3];
        for i in 0..3 {
            dt[i] = -ev.grad_t[i];
            for j in 0..3 {
                dm[i][j] = -ev.grad_m[i][j] / (rho * rho);
            }
        }
        let span = max_corner_displacement(&fixed.grid, aff.c, &dm, &dt);
        if span <= 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..10 {
            let alpha = radius / span;
            let mut cand = *aff;
            for i in 0..3 {
                cand.t[i] += alpha * dt[i];
                for j in 0..3 {
                    cand.m[i][j] += alpha * dm[i][j];
                }
            }
            let cand_ev = ssd_and_gradient(fixed, moving, &moving_grad.vectors, &cand);
            if cand_ev.ssd < ev.ssd {
                let rel = (ev.ssd - cand_ev.ssd) / ssd0;
                *aff = cand;
                ev = cand_ev;
                radius = (radius * 1.3).min(4.0 * min_spacing);
                accepted = true;
                if rel < tol {
                    return;
                }
                break;
            }
            radius *= 0.5;
            if radius < 1e-3 * min_spacing {
                return;
            }
        }
        if !accepted {
            return;
        }
    }
}

/// Recover the affine map aligning `moving` onto `fixed` by minimizing SSD
/// with a multiresolution descent. Fails with a no-gradient error when
/// either image is intensity-constant.
pub fn affine_register(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    params: &RegistrationParams,
) -> Result<AffineTransform, RegistrationError> {
    params.validate()?;
    if !fixed.grid.compatible(&moving.grid) {
        return Err(RegistrationError::Field(
            crate::grid::FieldError::GridMismatch {
                op: "affine_register",
            },
        ));
    }
    fixed.ensure_finite("affine_register fixed")?;
    moving.ensure_finite("affine_register moving")?;
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

    let levels = usable_levels(&fixed.grid, params.levels);
    let fixed_pyr = pyramid(fixed, levels);
    let moving_pyr = pyramid(moving, levels);
    let iters = params.level_iterations(levels);

    let com_f = center_of_mass(fixed).ok_or(RegistrationError::NoGradient {
        context: "fixed image has no mass",
    })?;
    let com_m = center_of_mass(moving).ok_or(RegistrationError::NoGradient {
        context: "moving image has no mass",
    })?;
    let mut aff = CenteredAffine {
        m: AffineTransform::identity().matrix,
        t: [
            com_m[0] - com_f[0],
            com_m[1] - com_f[1],
            com_m[2] - com_f[2],
        ],
        c: fixed.grid.center(),
    };

    for (level, iterations) in (0..levels).rev().zip(iters.iter()) {
        optimize_level(
            &fixed_pyr[level],
            &moving_pyr[level],
            &mut aff,
            *iterations,
            params.convergence_tol,
        );
    }
    Ok(aff.into_plain())
}
