//! Monotone smoothing of diversity profiles.
//!
//! A profile is modelled as `H(q) = xi0 + xi1 * m(q)` where
//! `m(q) = integral_0^q exp(w(u)) du` and `w(u) = integral_0^u Htilde(s) ds`
//! for an unconstrained B-spline expansion `Htilde`. This is the solution of
//! `D^2 H = Htilde * DH`: `m` is strictly increasing for any coefficients, so
//! `xi1 <= 0` makes the fitted profile monotone non-increasing by
//! construction instead of by inequality constraints.
//!
//! Fitting minimizes the penalized least-squares objective
//! `sum_m (h_m - xi0 - xi1 m(q_m))^2 + lambda * integral (Htilde'')^2` by
//! Gauss-Newton on the spline coefficients with step halving; `(xi0, xi1)`
//! are profiled out exactly at each step because the model is linear in them.

use crate::basis::{BasisError, BasisSystem, Quadrature};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponent bound for `w`; beyond this the transform is declared overflowed.
/// Chosen so that downstream sums of squares of `m` stay finite in f64.
const MAX_EXPONENT: f64 = 300.0;

/// Raw profiles whose range is below this are fitted as exact constants.
pub const CONSTANT_RANGE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SmoothError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("need at least {needed} observation points for {j} basis functions, got {got}")]
    TooFewPoints { needed: usize, got: usize, j: usize },
    #[error("observation grids and values must be finite and equally long")]
    BadData,
    #[error("observation order {0} does not lie on the quadrature grid; refine the grid")]
    OffGridObservation(f64),
    #[error("inner exponential overflowed the representable range")]
    Overflow,
    #[error("optimizer failed to converge within {max_iter} iterations")]
    NonConvergence { max_iter: usize, best: Box<SmoothedProfile> },
}

impl SmoothError {
    pub fn kind(&self) -> &'static str {
        match self {
            SmoothError::Basis(_) => "Basis",
            SmoothError::TooFewPoints { .. } => "TooFewPoints",
            SmoothError::BadData => "BadData",
            SmoothError::OffGridObservation(_) => "OffGridObservation",
            SmoothError::Overflow => "Overflow",
            SmoothError::NonConvergence { .. } => "NonConvergence",
        }
    }
}

/// Fitted parameters of one profile: intercept, slope scale, and the
/// unconstrained spline coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCoefficients {
    pub xi0: f64,
    /// Non-positive; zero only for constant fits.
    pub xi1: f64,
    pub alpha: Vec<f64>,
    /// Set when the raw profile was flat and the fit short-circuited.
    pub constant: bool,
}

impl ProfileCoefficients {
    /// Flattens to the feature vector used by the clustering stage:
    /// `(xi0, xi1, alpha_1, .., alpha_J)`.
    pub fn feature_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.alpha.len());
        v.push(self.xi0);
        v.push(self.xi1);
        v.extend_from_slice(&self.alpha);
        v
    }

    pub fn from_feature_vector(v: &[f64], constant: bool) -> Self {
        ProfileCoefficients { xi0: v[0], xi1: v[1], alpha: v[2..].to_vec(), constant }
    }
}

/// Result of smoothing one cell's profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothedProfile {
    pub coefficients: ProfileCoefficients,
    /// Fitted values at the observation orders.
    pub fitted: Vec<f64>,
    /// Fitted values at every quadrature node, for functional distances.
    pub dense_fitted: Vec<f64>,
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized objective after each accepted step (non-increasing).
    pub objective_trace: Vec<f64>,
    /// Smallest fitted second derivative over the grid. Negative values mean
    /// locally concave stretches; convexity is reported, never enforced.
    pub min_curvature: f64,
}

/// Tuning of the smoother. Defaults fit 15 cubic basis functions on `[0, 5]`
/// with a light roughness penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    pub j: usize,
    pub degree: usize,
    pub q_max: f64,
    /// Weight on `integral (Htilde'')^2`.
    pub lambda: f64,
    pub quadrature_points: usize,
    pub max_iter: usize,
    /// Relative objective-change threshold declaring convergence.
    pub tol: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            j: 15,
            degree: 3,
            q_max: 5.0,
            lambda: 1e-6,
            quadrature_points: 501,
            max_iter: 200,
            tol: 1e-12,
        }
    }
}

/// Monotone-profile smoother with precomputed basis tables.
#[derive(Debug, Clone)]
pub struct ProfileSmoother {
    config: SmoothConfig,
    basis: BasisSystem,
    quad: Quadrature,
    /// Basis values at quadrature nodes, `n_grid x j`.
    phi: DMatrix<f64>,
    /// Running integrals of each basis function at quadrature nodes.
    phi_cum: DMatrix<f64>,
    /// Curvature penalty Gram matrix, `j x j`.
    penalty: DMatrix<f64>,
}

/// A fitted (or candidate) curve sampled on the quadrature grid.
#[derive(Debug, Clone)]
pub struct TransformCurve {
    /// `w(u) = integral of Htilde` at each node.
    pub w: Vec<f64>,
    /// `exp(w)` at each node.
    pub z: Vec<f64>,
    /// `m(q) = integral of exp(w)` at each node.
    pub m: Vec<f64>,
}

impl ProfileSmoother {
    pub fn new(config: SmoothConfig) -> Result<Self, SmoothError> {
        let basis = BasisSystem::new(config.j, config.q_max, config.degree)?;
        let quad = Quadrature::uniform(config.q_max, config.quadrature_points)?;
        let n = quad.len();
        let j = config.j;
        let mut phi = DMatrix::zeros(n, j);
        for (i, &q) in quad.points().iter().enumerate() {
            let vals = basis.eval_all(q, 0)?;
            for (c, v) in vals.into_iter().enumerate() {
                phi[(i, c)] = v;
            }
        }
        let mut phi_cum = DMatrix::zeros(n, j);
        for c in 0..j {
            let col: Vec<f64> = (0..n).map(|i| phi[(i, c)]).collect();
            let cum = quad.cumulative(&col);
            for (i, v) in cum.into_iter().enumerate() {
                phi_cum[(i, c)] = v;
            }
        }
        let penalty = basis.curvature_penalty();
        Ok(ProfileSmoother { config, basis, quad, phi, phi_cum, penalty })
    }

    pub fn config(&self) -> &SmoothConfig {
        &self.config
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// Number of coefficients in the flattened feature vector.
    pub fn feature_len(&self) -> usize {
        self.config.j + 2
    }

    /// Fitted values at every quadrature node, rebuilt from coefficients.
    pub fn dense_values(&self, coeffs: &ProfileCoefficients) -> Result<Vec<f64>, SmoothError> {
        let curve = self.transform(&coeffs.alpha)?;
        Ok(curve.m.iter().map(|&m| coeffs.xi0 + coeffs.xi1 * m).collect())
    }

    /// Fitted values at arbitrary orders, sharing one transform pass.
    pub fn values_at(
        &self,
        coeffs: &ProfileCoefficients,
        qs: &[f64],
    ) -> Result<Vec<f64>, SmoothError> {
        let curve = self.transform(&coeffs.alpha)?;
        qs.iter().map(|&q| self.evaluate(coeffs, &curve, q, 0)).collect()
    }

    /// Samples `w`, `exp(w)` and `m` for the given spline coefficients.
    pub fn transform(&self, alpha: &[f64]) -> Result<TransformCurve, SmoothError> {
        let n = self.quad.len();
        let a = DVector::from_column_slice(alpha);
        let ht = &self.phi * &a;
        let w = self.quad.cumulative(ht.as_slice());
        let mut z = Vec::with_capacity(n);
        for &wi in &w {
            if !(wi <= MAX_EXPONENT) {
                return Err(SmoothError::Overflow);
            }
            z.push(wi.exp());
        }
        let m = self.quad.cumulative(&z);
        Ok(TransformCurve { w, z, m })
    }

    /// Evaluates a fitted curve at an arbitrary order.
    /// Order 0 is the profile value, 1 its first derivative (never positive),
    /// 2 its second derivative.
    pub fn evaluate(
        &self,
        coeffs: &ProfileCoefficients,
        curve: &TransformCurve,
        q: f64,
        order: usize,
    ) -> Result<f64, SmoothError> {
        if !(0.0..=self.config.q_max).contains(&q) {
            return Err(SmoothError::Basis(BasisError::OutOfRange(q)));
        }
        let w_at = |x: f64| -> Result<f64, SmoothError> {
            if let Some(i) = self.quad.node_of(x) {
                return Ok(curve.w[i]);
            }
            let i = ((x / self.quad.step()).floor() as usize).min(self.quad.len() - 2);
            let x0 = self.quad.points()[i];
            let seg =
                self.gauss_segment(x0, x, |u| Ok(self.basis.expansion(&coeffs.alpha, u, 0)?))?;
            Ok(curve.w[i] + seg)
        };
        match order {
            0 => {
                let m = if let Some(i) = self.quad.node_of(q) {
                    curve.m[i]
                } else {
                    let i = ((q / self.quad.step()).floor() as usize).min(self.quad.len() - 2);
                    let x0 = self.quad.points()[i];
                    curve.m[i]
                        + self.gauss_segment(x0, q, |u| {
                            let w = w_at(u)?;
                            if !(w <= MAX_EXPONENT) {
                                return Err(SmoothError::Overflow);
                            }
                            Ok(w.exp())
                        })?
                };
                Ok(coeffs.xi0 + coeffs.xi1 * m)
            }
            1 => Ok(coeffs.xi1 * w_at(q)?.exp()),
            2 => {
                let ht = self.basis.expansion(&coeffs.alpha, q, 0)?;
                Ok(coeffs.xi1 * w_at(q)?.exp() * ht)
            }
            _ => Err(SmoothError::BadData),
        }
    }

    fn gauss_segment<F>(&self, a: f64, b: f64, f: F) -> Result<f64, SmoothError>
    where
        F: Fn(f64) -> Result<f64, SmoothError>,
    {
        if a == b {
            return Ok(0.0);
        }
        let s = (0.6f64).sqrt();
        let nodes = [-s, 0.0, s];
        let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (n, w) in nodes.iter().zip(weights) {
            acc += w * f(mid + half * n)?;
        }
        Ok(acc * half)
    }

    /// Fits one profile. Flat inputs short-circuit to an exact constant fit;
    /// everything else goes through penalized Gauss-Newton.
    pub fn fit(&self, q_obs: &[f64], h_obs: &[f64]) -> Result<SmoothedProfile, SmoothError> {
        if q_obs.len() != h_obs.len()
            || q_obs.iter().chain(h_obs).any(|v| !v.is_finite())
            || h_obs.is_empty()
        {
            return Err(SmoothError::BadData);
        }
        let range = h_obs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - h_obs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if range < CONSTANT_RANGE_TOL {
            return Ok(self.constant_fit(q_obs, h_obs));
        }
        let needed = self.config.j + 2;
        if q_obs.len() < needed {
            return Err(SmoothError::TooFewPoints {
                needed,
                got: q_obs.len(),
                j: self.config.j,
            });
        }
        let nodes: Vec<usize> = q_obs
            .iter()
            .map(|&q| self.quad.node_of(q).ok_or(SmoothError::OffGridObservation(q)))
            .collect::<Result<_, _>>()?;

        let j = self.config.j;
        let lambda = self.config.lambda;
        let h = DVector::from_column_slice(h_obs);
        let mut alpha = DVector::zeros(j);
        let (mut state, mut objective) = self.eval_state(&alpha, &nodes, &h)?;
        let mut trace = vec![objective];
        let mut converged = false;
        let mut iterations = 0;

        for iter in 0..self.config.max_iter {
            iterations = iter + 1;
            // Jacobian of fitted values in alpha: d fit / d alpha_j
            //   = xi1 * integral_0^q exp(w) * PhiCum_j
            let n_grid = self.quad.len();
            let mut g = DMatrix::zeros(nodes.len(), j);
            for c in 0..j {
                let prod: Vec<f64> =
                    (0..n_grid).map(|i| state.curve.z[i] * self.phi_cum[(i, c)]).collect();
                let cum = self.quad.cumulative(&prod);
                for (r, &node) in nodes.iter().enumerate() {
                    g[(r, c)] = state.xi1 * cum[node];
                }
            }
            let resid = &h - &state.fitted_obs;
            let grad = g.transpose() * &resid - lambda * (&self.penalty * &alpha);
            // (xi0, xi1) are re-solved after every alpha move, so the
            // effective Jacobian lives orthogonal to the linear columns
            // [1, m]; projecting (Kaufman's variable-projection step) is what
            // makes the normal matrix match the profiled objective.
            let mut x = DMatrix::from_element(nodes.len(), 2, 1.0);
            for (r, &node) in nodes.iter().enumerate() {
                x[(r, 1)] = state.curve.m[node];
            }
            let xtx = x.transpose() * &x;
            if let Some(ch) = xtx.cholesky() {
                let coef = ch.solve(&(x.transpose() * &g));
                g -= &x * coef;
            }
            let mut normal = g.transpose() * &g + lambda * &self.penalty;
            let ridge = 1e-12 * (1.0 + normal.diagonal().amax());
            for d in 0..j {
                normal[(d, d)] += ridge;
            }
            let delta = match normal.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => break,
            };
            // step halving on the profiled objective
            let mut accepted = false;
            let mut t = 1.0;
            for _ in 0..30 {
                let cand = &alpha + t * &delta;
                match self.eval_state(&cand, &nodes, &h) {
                    Ok((cand_state, cand_obj)) if cand_obj < objective => {
                        alpha = cand;
                        state = cand_state;
                        objective = cand_obj;
                        accepted = true;
                        break;
                    }
                    _ => t *= 0.5,
                }
            }
            if !accepted {
                // no descent direction at working precision: a local optimum
                converged = true;
                break;
            }
            trace.push(objective);
            let prev = trace[trace.len() - 2];
            if (prev - objective).abs() <= self.config.tol * (1.0 + objective.abs()) {
                converged = true;
                break;
            }
        }

        let profile = self.finish(q_obs, &h, alpha, state, trace, converged, iterations);
        if converged {
            Ok(profile)
        } else {
            Err(SmoothError::NonConvergence {
                max_iter: self.config.max_iter,
                best: Box::new(profile),
            })
        }
    }

    fn constant_fit(&self, q_obs: &[f64], h_obs: &[f64]) -> SmoothedProfile {
        let mean = h_obs.iter().sum::<f64>() / h_obs.len() as f64;
        let rmse = (h_obs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
            / h_obs.len() as f64)
            .sqrt();
        SmoothedProfile {
            coefficients: ProfileCoefficients {
                xi0: mean,
                xi1: 0.0,
                alpha: vec![0.0; self.config.j],
                constant: true,
            },
            fitted: vec![mean; q_obs.len()],
            dense_fitted: vec![mean; self.quad.len()],
            rmse,
            converged: true,
            iterations: 0,
            objective_trace: vec![rmse * rmse * h_obs.len() as f64],
            min_curvature: 0.0,
        }
    }

    fn finish(
        &self,
        q_obs: &[f64],
        h: &DVector<f64>,
        alpha: DVector<f64>,
        state: FitState,
        trace: Vec<f64>,
        converged: bool,
        iterations: usize,
    ) -> SmoothedProfile {
        let n = q_obs.len() as f64;
        let resid = h - &state.fitted_obs;
        let rmse = (resid.norm_squared() / n).sqrt();
        let coefficients = ProfileCoefficients {
            xi0: state.xi0,
            xi1: state.xi1,
            alpha: alpha.as_slice().to_vec(),
            constant: false,
        };
        let dense_fitted: Vec<f64> =
            state.curve.m.iter().map(|&m| state.xi0 + state.xi1 * m).collect();
        // curvature sign: H'' = xi1 * exp(w) * Htilde
        let a = DVector::from_column_slice(&coefficients.alpha);
        let ht = &self.phi * &a;
        let min_curvature = (0..self.quad.len())
            .map(|i| state.xi1 * state.curve.z[i] * ht[i])
            .fold(f64::INFINITY, f64::min);
        SmoothedProfile {
            coefficients,
            fitted: state.fitted_obs.as_slice().to_vec(),
            dense_fitted,
            rmse,
            converged,
            iterations,
            objective_trace: trace,
            min_curvature,
        }
    }

    /// Profiles out `(xi0, xi1 <= 0)` for fixed spline coefficients and
    /// returns the resulting state with the penalized objective.
    fn eval_state(
        &self,
        alpha: &DVector<f64>,
        nodes: &[usize],
        h: &DVector<f64>,
    ) -> Result<(FitState, f64), SmoothError> {
        let curve = self.transform(alpha.as_slice())?;
        let m_obs = DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| curve.m[i]));
        let n = nodes.len() as f64;
        let sm = m_obs.sum();
        let smm = m_obs.norm_squared();
        let sh = h.sum();
        let smh = m_obs.dot(h);
        let det = n * smm - sm * sm;
        let (mut xi0, mut xi1);
        if det > 1e-14 * n * smm.max(1.0) {
            xi1 = (n * smh - sm * sh) / det;
            xi0 = (sh - xi1 * sm) / n;
        } else {
            xi1 = 0.0;
            xi0 = sh / n;
        }
        if xi1 > 0.0 {
            // decreasing profiles only; the best non-positive slope is zero
            xi1 = 0.0;
            xi0 = sh / n;
        }
        let fitted_obs = m_obs.map(|m| xi0 + xi1 * m);
        let resid = h - &fitted_obs;
        let a = alpha.clone();
        let penalty = (a.transpose() * (&self.penalty * &a))[(0, 0)];
        let objective = resid.norm_squared() + self.config.lambda * penalty;
        if !objective.is_finite() {
            return Err(SmoothError::Overflow);
        }
        Ok((FitState { xi0, xi1, fitted_obs, curve }, objective))
    }
}

struct FitState {
    xi0: f64,
    xi1: f64,
    fitted_obs: DVector<f64>,
    curve: TransformCurve,
}
