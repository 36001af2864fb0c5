//! Temporal reparameterization curve.
//!
//! The aging deformation magnitude at age `t` is a scalar `gamma(t)` fitted
//! to the per-age deformation ratios, separately for ages above and below
//! the reference age. Each branch is a natural cubic smoothing spline in the
//! distance-from-reference coordinate, anchored to zero at the reference.
//! Evaluation applies a running-maximum envelope away from the reference so
//! the deformation magnitude never decreases with distance, and extends
//! linearly (with the end slope) beyond the fitted range. Values are clamped
//! to be non-negative; `gamma(reference_age)` is exactly zero.

use serde::{Deserialize, Serialize};

/// One branch: spline knots in the nonnegative distance-from-reference
/// coordinate (`offsets[0] == 0`, strictly increasing), fitted values
/// (`values[0] == 0`) and natural-spline second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchCurve {
    pub offsets: Vec<f64>,
    pub values: Vec<f64>,
    pub second_derivs: Vec<f64>,
}

impl BranchCurve {
    /// Fit a natural cubic smoothing spline through `(offsets, values)`.
    ///
    /// `lambda >= 0` is the curvature penalty; zero gives the interpolating
    /// natural spline. After the fit the curve is shifted by a constant so
    /// it passes through zero at offset zero exactly.
    fn fit(offsets: Vec<f64>, raw_values: &[f64], lambda: f64) -> BranchCurve {
        let n = offsets.len();
        assert_eq!(n, raw_values.len());
        assert!(n >= 2, "a branch needs the anchor and at least one sample");
        let mut values;
        let mut second = vec![0.0; n];
        if n == 2 {
            values = raw_values.to_vec();
        } else {
            let m = n - 2;
            let h: Vec<f64> = offsets.windows(2).map(|w| w[1] - w[0]).collect();
            // dense second-difference matrix Q (n x m) and penalty R (m x m)
            let mut q = vec![vec![0.0f64; m]; n];
            for j in 1..=m {
                q[j - 1][j - 1] = 1.0 / h[j - 1];
                q[j][j - 1] = -1.0 / h[j - 1] - 1.0 / h[j];
                q[j + 1][j - 1] = 1.0 / h[j];
            }
            let mut a = vec![vec![0.0f64; m]; m];
            for j in 0..m {
                a[j][j] = (h[j] + h[j + 1]) / 3.0;
                if j + 1 < m {
                    a[j][j + 1] = h[j + 1] / 6.0;
                    a[j + 1][j] = h[j + 1] / 6.0;
                }
            }
            // A = R + lambda * Q^T Q, rhs = Q^T y
            for i in 0..m {
                for j in 0..m {
                    let mut dot = 0.0;
                    for k in 0..n {
                        dot += q[k][i] * q[k][j];
                    }
                    a[i][j] += lambda * dot;
                }
            }
            let mut rhs = vec![0.0f64; m];
            for (i, r) in rhs.iter_mut().enumerate() {
                for k in 0..n {
                    *r += q[k][i] * raw_values[k];
                }
            }
            let gamma = solve_dense(a, rhs);
            values = raw_values.to_vec();
            for (k, v) in values.iter_mut().enumerate() {
                let mut corr = 0.0;
                for (j, gj) in gamma.iter().enumerate() {
                    corr += q[k][j] * gj;
                }
                *v -= lambda * corr;
            }
            second[1..=m].copy_from_slice(&gamma);
        }
        // anchor exactly at zero
        let shift = values[0];
        for v in &mut values {
            *v -= shift;
        }
        values[0] = 0.0;
        BranchCurve {
            offsets,
            values,
            second_derivs: second,
        }
    }

    fn piece_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Raw spline value at offset `s >= 0`, linear beyond the last knot.
    fn eval_raw(&self, s: f64) -> f64 {
        let n = self.offsets.len();
        let last = self.offsets[n - 1];
        if s >= last {
            return self.values[n - 1] + self.end_slope() * (s - last);
        }
        let i = match self
            .offsets
            .binary_search_by(|o| o.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        self.eval_piece(i, s)
    }

    fn eval_piece(&self, i: usize, s: f64) -> f64 {
        let h = self.offsets[i + 1] - self.offsets[i];
        let a = (self.offsets[i + 1] - s) / h;
        let b = (s - self.offsets[i]) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second_derivs[i]
                + (b * b * b - b) * self.second_derivs[i + 1])
                * h
                * h
                / 6.0
    }

    fn end_slope(&self) -> f64 {
        let n = self.offsets.len();
        let h = self.offsets[n - 1] - self.offsets[n - 2];
        (self.values[n - 1] - self.values[n - 2]) / h
            + h * (self.second_derivs[n - 2] + 2.0 * self.second_derivs[n - 1]) / 6.0
    }

    /// Maximum of the cubic piece `i` over `[lo, hi]` (both inside the
    /// piece). Candidates: the interval ends plus interior roots of the
    /// derivative, which is quadratic.
    fn piece_max(&self, i: usize, lo: f64, hi: f64) -> f64 {
        let mut best = self.eval_piece(i, lo).max(self.eval_piece(i, hi));
        let h = self.offsets[i + 1] - self.offsets[i];
        let m0 = self.second_derivs[i];
        let m1 = self.second_derivs[i + 1];
        let dy = (self.values[i + 1] - self.values[i]) / h;
        // derivative in q = s - offsets[i]:  aq^2 + bq + c
        let a = (m1 - m0) / (2.0 * h);
        let b = m0;
        let c = dy - h * (2.0 * m0 + m1) / 6.0;
        let mut consider = |q: f64| {
            let s = self.offsets[i] + q;
            if s > lo && s < hi {
                best = best.max(self.eval_piece(i, s));
            }
        };
        if a.abs() < 1e-300 {
            if b.abs() > 0.0 {
                consider(-c / b);
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let r = disc.sqrt();
                consider((-b + r) / (2.0 * a));
                consider((-b - r) / (2.0 * a));
            }
        }
        best
    }

    /// Running maximum of the raw curve over `[0, s]`, clamped nonnegative.
    fn eval_monotone(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let mut running = 0.0f64;
        for i in 0..self.piece_count() {
            let lo = self.offsets[i];
            let hi = self.offsets[i + 1];
            if lo >= s {
                break;
            }
            let seg_hi = hi.min(s);
            running = running.max(self.piece_max(i, lo, seg_hi));
        }
        let last = *self.offsets.last().unwrap();
        if s > last {
            // linear tail: maximum is at the far end when the slope is
            // positive, otherwise the running maximum already covers it
            running = running.max(self.eval_raw(s)).max(self.eval_raw(last));
        }
        running.max(0.0)
    }
}

/// The fitted temporal curve: zero at the reference age, one branch per
/// direction, nondecreasing away from the reference after enveloping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCurve {
    pub reference_age: f64,
    pub smoothing_weight: f64,
    /// Ages at and above the reference; `None` when that side has no data.
    pub forward: Option<BranchCurve>,
    /// Ages at and below the reference.
    pub backward: Option<BranchCurve>,
}

impl GammaCurve {
    /// Fit both branches. Samples are `(age, ratio)` pairs; the anchor
    /// `(reference_age, 0)` is added automatically. `smoothing_weight` in
    /// `(0, 1]` interpolates between a straight-line fit (near 0) and the
    /// interpolating spline (1).
    pub fn fit(
        reference_age: f64,
        forward_samples: &[(f64, f64)],
        backward_samples: &[(f64, f64)],
        smoothing_weight: f64,
    ) -> GammaCurve {
        let w = smoothing_weight.clamp(1e-6, 1.0);
        let fit_branch = |samples: &[(f64, f64)], sign: f64| -> Option<BranchCurve> {
            if samples.is_empty() {
                return None;
            }
            let mut offsets = vec![0.0f64];
            let mut values = vec![0.0f64];
            for (age, r) in samples {
                offsets.push(sign * (age - reference_age));
                values.push(*r);
            }
            let span = offsets.last().unwrap() / (offsets.len() - 1) as f64;
            let lambda = (1.0 - w) / w * span.powi(3);
            Some(BranchCurve::fit(offsets, &values, lambda))
        };
        GammaCurve {
            reference_age,
            smoothing_weight,
            forward: fit_branch(forward_samples, 1.0),
            backward: fit_branch(backward_samples, -1.0),
        }
    }

    /// Build from already-fitted parts (deserialization, tests).
    pub fn from_parts(
        reference_age: f64,
        smoothing_weight: f64,
        forward: Option<BranchCurve>,
        backward: Option<BranchCurve>,
    ) -> GammaCurve {
        GammaCurve {
            reference_age,
            smoothing_weight,
            forward,
            backward,
        }
    }

    /// Curve value at age `t`: exactly zero at the reference age,
    /// nondecreasing and nonnegative away from it, linearly extended
    /// outside the fitted range.
    pub fn eval(&self, t: f64) -> f64 {
        if t == self.reference_age {
            return 0.0;
        }
        let (branch, s) = if t >= self.reference_age {
            (&self.forward, t - self.reference_age)
        } else {
            (&self.backward, self.reference_age - t)
        };
        match branch {
            Some(b) => b.eval_monotone(s),
            None => 0.0,
        }
    }

    /// Knots as `(age, fitted value)` pairs, backward branch first
    /// (ascending age), anchor included once.
    pub fn knots(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if let Some(b) = &self.backward {
            for (o, v) in b.offsets.iter().zip(&b.values).skip(1).rev() {
                out.push((self.reference_age - o, *v));
            }
        }
        out.push((self.reference_age, 0.0));
        if let Some(f) = &self.forward {
            for (o, v) in f.offsets.iter().zip(&f.values).skip(1) {
                out.push((self.reference_age + o, *v));
            }
        }
        out
    }
}

/// Gaussian elimination with partial pivoting; systems here are tiny
/// (one row per interior knot).
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x
}
