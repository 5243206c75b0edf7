//! Cubic B-spline basis on `[0, q_max]` and the uniform quadrature grid used
//! by the monotone smoother.
//!
//! The basis is clamped (endpoint knots repeated `degree + 1` times) with
//! equally spaced interior knots, so `j` functions need `j - degree - 1`
//! interior knots and the functions sum to one everywhere on the interval.
//! The last interval is closed at `q_max` so the endpoint is usable.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("basis needs at least degree + 1 functions, got j = {j} with degree {degree}")]
    TooFewFunctions { j: usize, degree: usize },
    #[error("basis interval must have positive length, got q_max = {0}")]
    BadInterval(f64),
    #[error("quadrature grid needs an odd point count of at least 3, got {0}")]
    BadQuadrature(usize),
    #[error("point {0} lies outside the basis interval")]
    OutOfRange(f64),
}

impl BasisError {
    pub fn kind(&self) -> &'static str {
        match self {
            BasisError::TooFewFunctions { .. } => "TooFewFunctions",
            BasisError::BadInterval(_) => "BadInterval",
            BasisError::BadQuadrature(_) => "BadQuadrature",
            BasisError::OutOfRange(_) => "OutOfRange",
        }
    }
}

/// Clamped B-spline basis with uniform interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSystem {
    j: usize,
    degree: usize,
    q_max: f64,
    knots: Vec<f64>,
}

impl BasisSystem {
    pub fn new(j: usize, q_max: f64, degree: usize) -> Result<Self, BasisError> {
        if !(q_max > 0.0) || !q_max.is_finite() {
            return Err(BasisError::BadInterval(q_max));
        }
        if j < degree + 1 {
            return Err(BasisError::TooFewFunctions { j, degree });
        }
        let n_interior = j - degree - 1;
        let mut knots = Vec::with_capacity(j + degree + 1);
        for _ in 0..=degree {
            knots.push(0.0);
        }
        for i in 1..=n_interior {
            knots.push(i as f64 * q_max / (n_interior + 1) as f64);
        }
        for _ in 0..=degree {
            knots.push(q_max);
        }
        Ok(BasisSystem { j, degree, q_max, knots })
    }

    pub fn n_basis(&self) -> usize {
        self.j
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.j]
    }

    /// Distinct knot values in order, spanning `[0, q_max]`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend_from_slice(self.interior_knots());
        out.push(self.q_max);
        out
    }

    fn basis_value(&self, idx: usize, k: usize, x: f64) -> f64 {
        let t = &self.knots;
        if k == 0 {
            // the final nonempty interval is closed at q_max
            let closes = x == self.q_max && t[idx] < self.q_max && t[idx + 1] >= self.q_max;
            return if (t[idx] <= x && x < t[idx + 1]) || closes { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let dl = t[idx + k] - t[idx];
        if dl > 0.0 {
            v += (x - t[idx]) / dl * self.basis_value(idx, k - 1, x);
        }
        let dr = t[idx + k + 1] - t[idx + 1];
        if dr > 0.0 {
            v += (t[idx + k + 1] - x) / dr * self.basis_value(idx + 1, k - 1, x);
        }
        v
    }

    fn basis_deriv(&self, idx: usize, k: usize, x: f64, order: usize) -> f64 {
        if order == 0 {
            return self.basis_value(idx, k, x);
        }
        if k == 0 {
            return 0.0;
        }
        let t = &self.knots;
        let mut v = 0.0;
        let dl = t[idx + k] - t[idx];
        if dl > 0.0 {
            v += self.basis_deriv(idx, k - 1, x, order - 1) / dl;
        }
        let dr = t[idx + k + 1] - t[idx + 1];
        if dr > 0.0 {
            v -= self.basis_deriv(idx + 1, k - 1, x, order - 1) / dr;
        }
        k as f64 * v
    }

    /// Value (or derivative) of one basis function.
    pub fn eval_single(&self, idx: usize, q: f64, order: usize) -> Result<f64, BasisError> {
        if !(0.0..=self.q_max).contains(&q) {
            return Err(BasisError::OutOfRange(q));
        }
        Ok(self.basis_deriv(idx, self.degree, q, order))
    }

    /// Values (or derivatives) of all basis functions at one point.
    pub fn eval_all(&self, q: f64, order: usize) -> Result<Vec<f64>, BasisError> {
        if !(0.0..=self.q_max).contains(&q) {
            return Err(BasisError::OutOfRange(q));
        }
        Ok((0..self.j).map(|idx| self.basis_deriv(idx, self.degree, q, order)).collect())
    }

    /// The expansion `sum_j alpha_j phi_j(q)` (order 0) or its derivative.
    pub fn expansion(&self, alpha: &[f64], q: f64, order: usize) -> Result<f64, BasisError> {
        let vals = self.eval_all(q, order)?;
        Ok(vals.iter().zip(alpha).map(|(v, a)| v * a).sum())
    }

    /// Abscissae at which the basis reproduces linear functions: coefficients
    /// `a + b * greville_j` expand to the line `a + b q`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.j)
            .map(|idx| {
                self.knots[idx + 1..idx + 1 + self.degree].iter().sum::<f64>() / self.degree as f64
            })
            .collect()
    }

    /// Roughness Gram matrix `P[j][k] = integral of phi_j'' phi_k''` over the
    /// interval, evaluated exactly with per-span Gauss rules (the integrand is
    /// piecewise quadratic for cubic splines).
    pub fn curvature_penalty(&self) -> DMatrix<f64> {
        // 3-point Gauss-Legendre nodes on [-1, 1]
        let s = (0.6f64).sqrt();
        let nodes = [-s, 0.0, s];
        let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let breaks = self.breakpoints();
        let mut p = DMatrix::zeros(self.j, self.j);
        for span in breaks.windows(2) {
            let (a, b) = (span[0], span[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (node, weight) in nodes.iter().zip(weights) {
                let x = mid + half * node;
                let d2: Vec<f64> =
                    (0..self.j).map(|idx| self.basis_deriv(idx, self.degree, x, 2)).collect();
                for r in 0..self.j {
                    if d2[r] == 0.0 {
                        continue;
                    }
                    for c in 0..self.j {
                        p[(r, c)] += weight * half * d2[r] * d2[c];
                    }
                }
            }
        }
        // enforce exact symmetry against accumulation order effects
        for r in 0..self.j {
            for c in 0..r {
                let avg = 0.5 * (p[(r, c)] + p[(c, r)]);
                p[(r, c)] = avg;
                p[(c, r)] = avg;
            }
        }
        p
    }
}

/// Uniform grid on `[0, q_max]` with a fourth-order cumulative integrator
/// (composite Simpson on even nodes, a parabolic half-step on odd nodes).
/// The point count is odd so every Simpson pair is complete.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    points: Vec<f64>,
    step: f64,
}

impl Quadrature {
    pub fn uniform(q_max: f64, n_points: usize) -> Result<Self, BasisError> {
        if !(q_max > 0.0) || !q_max.is_finite() {
            return Err(BasisError::BadInterval(q_max));
        }
        if n_points < 3 || n_points % 2 == 0 {
            return Err(BasisError::BadQuadrature(n_points));
        }
        let n = n_points - 1;
        let points: Vec<f64> = (0..=n).map(|i| i as f64 * q_max / n as f64).collect();
        let step = q_max / n as f64;
        Ok(Quadrature { points, step })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn q_max(&self) -> f64 {
        *self.points.last().expect("nonempty")
    }

    /// Index of the grid node equal to `q`, if `q` sits on the grid.
    pub fn node_of(&self, q: f64) -> Option<usize> {
        let idx = (q / self.step).round();
        if idx < 0.0 || idx >= self.points.len() as f64 {
            return None;
        }
        let idx = idx as usize;
        if (self.points[idx] - q).abs() <= 1e-9 * self.q_max().max(1.0) {
            Some(idx)
        } else {
            None
        }
    }

    /// Cumulative integral of sampled values at every node, `F[0] = 0`.
    /// Even nodes use composite Simpson; odd nodes add a one-step rule from a
    /// cubic through four neighbors, keeping fourth-order accuracy everywhere.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.points.len(), "sample count must match the grid");
        let h = self.step;
        let n = f.len();
        let mut out = vec![0.0; n];
        for i in 1..n {
            if i % 2 == 0 {
                out[i] = out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
            } else if i + 2 < n {
                out[i] = out[i - 1]
                    + h / 24.0 * (9.0 * f[i - 1] + 19.0 * f[i] - 5.0 * f[i + 1] + f[i + 2]);
            } else if i >= 2 {
                out[i] = out[i - 1]
                    + h / 24.0 * (-f[i - 2] + 13.0 * f[i - 1] + 13.0 * f[i] - f[i + 1]);
            } else {
                // three-point grid: parabolic half-step is the best available
                out[i] = out[i - 1] + h / 12.0 * (5.0 * f[i - 1] + 8.0 * f[i] - f[i + 1]);
            }
        }
        out
    }

    /// Definite integral over the whole interval.
    pub fn integral(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.points.len(), "sample count must match the grid");
        let h = self.step;
        let mut acc = 0.0;
        let mut i = 2;
        while i < f.len() {
            acc += h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
            i += 2;
        }
        acc
    }
}
