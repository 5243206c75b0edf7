//! Penalized Gaussian-mixture clustering of profile coefficients with
//! spatially varying mixing proportions.
//!
//! Each cell's coefficient vector is modelled as a draw from one of K
//! Gaussians. Cluster priors vary over space through a multinomial logit on
//! the spatial basis, means carry an L1 penalty, and precisions are
//! estimated sparsely by the graphical lasso. Fitting is generalized EM:
//! every M-step ascends its own subproblem, so the penalized log-likelihood
//! never decreases.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("precision matrix for cluster {0} is not positive definite")]
    NonPd(usize),
    #[error("row {0} has vanishing density under every component")]
    DegenerateRow(usize),
    #[error("cluster {0} has effective mass below p + 1")]
    EmptyCluster(usize),
    #[error("graphical lasso stalled with duality gap {gap:.3e}")]
    GlassoNonConvergence { gap: f64 },
    #[error("multinomial logit update did not converge")]
    LogitNonConvergence,
    #[error("cannot fit {k} clusters to {n} points")]
    BadK { k: usize, n: usize },
    #[error("every restart failed; first error: {0}")]
    AllRestartsFailed(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl MixtureError {
    pub fn kind(&self) -> &'static str {
        match self {
            MixtureError::NonPd(_) => "NonPd",
            MixtureError::DegenerateRow(_) => "DegenerateRow",
            MixtureError::EmptyCluster(_) => "EmptyCluster",
            MixtureError::GlassoNonConvergence { .. } => "GlassoNonConvergence",
            MixtureError::LogitNonConvergence => "LogitNonConvergence",
            MixtureError::BadK { .. } => "BadK",
            MixtureError::AllRestartsFailed(_) => "AllRestartsFailed",
            MixtureError::DimensionMismatch(_) => "DimensionMismatch",
        }
    }
}

/// Precision matrix with its cached inverse and log-determinant.
#[derive(Debug, Clone)]
pub struct Precision {
    pub matrix: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub logdet: f64,
}

impl Precision {
    pub fn new(w: DMatrix<f64>) -> Result<Self, MixtureError> {
        let sym = (&w + w.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or(MixtureError::NonPd(usize::MAX))?;
        let logdet = 2.0 * (0..sym.nrows()).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
        let covariance = chol.inverse();
        Ok(Precision { matrix: sym, covariance, logdet })
    }

    /// Like `new` but rescues borderline matrices with an escalating ridge.
    fn with_jitter(w: DMatrix<f64>, cluster: usize) -> Result<Self, MixtureError> {
        if let Ok(p) = Precision::new(w.clone()) {
            return Ok(p);
        }
        let scale = (0..w.nrows()).map(|i| w[(i, i)].abs()).sum::<f64>() / w.nrows() as f64;
        let mut eps = 1e-10 * scale.max(1.0);
        for _ in 0..5 {
            let mut j = w.clone();
            for i in 0..j.nrows() {
                j[(i, i)] += eps;
            }
            if let Ok(p) = Precision::new(j) {
                return Ok(p);
            }
            eps *= 10.0;
        }
        Err(MixtureError::NonPd(cluster))
    }
}

/// Mixture parameters: K means, K precisions, and the logit coefficients
/// for the K-1 non-baseline clusters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub mu: Vec<DVector<f64>>,
    pub precisions: Vec<Precision>,
    /// `(K-1) x L`; the baseline class K has log-odds pinned at zero.
    pub omega: DMatrix<f64>,
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn p(&self) -> usize {
        if self.mu.is_empty() { 0 } else { self.mu[0].len() }
    }

    pub fn l(&self) -> usize {
        self.omega.ncols()
    }
}

/// Posterior membership probabilities, one row per cell.
#[derive(Debug, Clone)]
pub struct Posteriors {
    pub tau: DMatrix<f64>,
}

impl Posteriors {
    /// `sum tau log tau` with the 0 log 0 = 0 convention. Never positive.
    pub fn entropy_term(&self) -> f64 {
        self.tau.iter().map(|&t| if t > 0.0 { t * t.ln() } else { 0.0 }).sum()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub n_init: usize,
    pub seed: u64,
    /// When false the logit coefficients stay frozen at zero, giving
    /// constant mixing proportions. Used for like-for-like comparisons.
    pub spatial_mixing: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            max_iter: 200,
            rel_tol: 1e-6,
            n_init: 5,
            seed: 0,
            spatial_mixing: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub params: ModelParams,
    pub tau: Posteriors,
    pub labels: Vec<usize>,
    /// Penalized objective after each EM iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Unpenalized log-likelihood at the final parameters.
    pub loglik: f64,
    pub config: FitConfig,
}

/// Softmax of the basis-expanded log-odds, with the baseline class pinned
/// at zero. Shift by the row maximum keeps it overflow-safe.
pub fn mixing_proportions(omega: &DMatrix<f64>, psi_row: &[f64]) -> DVector<f64> {
    let k = omega.nrows() + 1;
    let mut zeta = vec![0.0; k];
    for c in 0..k - 1 {
        zeta[c] = (0..omega.ncols()).map(|l| omega[(c, l)] * psi_row[l]).sum();
    }
    let top = zeta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut pi = DVector::zeros(k);
    let mut total = 0.0;
    for c in 0..k {
        let e = (zeta[c] - top).exp();
        pi[c] = e;
        total += e;
    }
    pi / total
}

/// Multivariate normal log-density in precision form.
pub fn log_density(beta: &DVector<f64>, mu: &DVector<f64>, prec: &Precision) -> f64 {
    let d = beta - mu;
    let quad = d.dot(&(&prec.matrix * &d));
    0.5 * (prec.logdet - quad) - 0.5 * beta.len() as f64 * LN_2PI
}

/// `log(pi_k(v_i) f_k(beta_i))` for every cell and cluster.
fn log_membership(params: &ModelParams, betas: &DMatrix<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let n = betas.nrows();
    let k = params.k();
    let mut out = DMatrix::zeros(n, k);
    for i in 0..n {
        let beta = DVector::from(betas.row(i).transpose());
        let psi_row: Vec<f64> = psi.row(i).iter().cloned().collect();
        let pi = mixing_proportions(&params.omega, &psi_row);
        for c in 0..k {
            out[(i, c)] = pi[c].ln() + log_density(&beta, &params.mu[c], &params.precisions[c]);
        }
    }
    out
}

/// Posterior probabilities and the unpenalized log-likelihood, both from
/// one log-space pass.
pub fn e_step(
    params: &ModelParams,
    betas: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> Result<(Posteriors, f64), MixtureError> {
    let lm = log_membership(params, betas, psi);
    let n = lm.nrows();
    let k = lm.ncols();
    let mut tau = DMatrix::zeros(n, k);
    let mut loglik = 0.0;
    for i in 0..n {
        let row_max = (0..k).map(|c| lm[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
        if !row_max.is_finite() {
            return Err(MixtureError::DegenerateRow(i));
        }
        let mut sum = 0.0;
        for c in 0..k {
            sum += (lm[(i, c)] - row_max).exp();
        }
        let lse = row_max + sum.ln();
        loglik += lse;
        for c in 0..k {
            tau[(i, c)] = (lm[(i, c)] - row_max).exp() / sum;
        }
    }
    Ok((Posteriors { tau }, loglik))
}

fn column_masses(tau: &DMatrix<f64>) -> Vec<f64> {
    (0..tau.ncols()).map(|c| tau.column(c).sum()).collect()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// L1-penalized weighted mean update, one cluster at a time.
///
/// Minimizes `n_k/2 (mu - bbar)' W (mu - bbar) + lambda1 |mu|_1` by cyclic
/// coordinate descent; with no penalty the weighted mean is returned as is.
pub fn m_step_means(
    tau: &Posteriors,
    betas: &DMatrix<f64>,
    precisions: &[Precision],
    lambda1: f64,
) -> Result<Vec<DVector<f64>>, MixtureError> {
    let p = betas.ncols();
    let masses = column_masses(&tau.tau);
    let mut out = Vec::with_capacity(precisions.len());
    for (k, prec) in precisions.iter().enumerate() {
        let n_k = masses[k];
        if n_k < (p + 1) as f64 {
            return Err(MixtureError::EmptyCluster(k));
        }
        let mut bbar = DVector::zeros(p);
        for i in 0..betas.nrows() {
            let t = tau.tau[(i, k)];
            for j in 0..p {
                bbar[j] += t * betas[(i, j)];
            }
        }
        bbar /= n_k;
        if lambda1 == 0.0 {
            out.push(bbar);
            continue;
        }
        let w = &prec.matrix;
        let thresh = lambda1 / n_k;
        let mut mu = bbar.clone();
        for _ in 0..500 {
            let mut delta_max = 0.0f64;
            for j in 0..p {
                let mut coupling = 0.0;
                for q in 0..p {
                    if q != j {
                        coupling += w[(j, q)] * (mu[q] - bbar[q]);
                    }
                }
                let c = w[(j, j)] * bbar[j] - coupling;
                let new = soft_threshold(c, thresh) / w[(j, j)];
                delta_max = delta_max.max((new - mu[j]).abs());
                mu[j] = new;
            }
            if delta_max < 1e-12 * (1.0 + mu.amax()) {
                break;
            }
        }
        out.push(mu);
    }
    Ok(out)
}

/// Graphical lasso: maximizes `log det T - tr(S T) - rho |T|_1` over
/// positive-definite T, penalizing the diagonal too.
///
/// Friedman's block coordinate descent on the covariance estimate, with the
/// standard gap `|tr(S T) + rho |T|_1 - p|` as the stopping rule.
pub fn graphical_lasso(s: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>, MixtureError> {
    let p = s.nrows();
    if p == 1 {
        return Ok(DMatrix::from_element(1, 1, 1.0 / (s[(0, 0)] + rho)));
    }
    let mut w = s.clone();
    for i in 0..p {
        w[(i, i)] += rho;
    }
    // lasso coefficients per column, kept warm across sweeps
    let mut beta: DMatrix<f64> = DMatrix::zeros(p, p);
    let scale = (0..p).map(|i| s[(i, i)].abs()).sum::<f64>() / p as f64 + rho;
    let mut gap = f64::INFINITY;
    for _ in 0..200 {
        for j in 0..p {
            let rest: Vec<usize> = (0..p).filter(|&t| t != j).collect();
            // lasso: 1/2 b' W11 b - s12' b + rho |b|_1
            for _ in 0..200 {
                let mut delta_max = 0.0f64;
                for (ti, &t) in rest.iter().enumerate() {
                    let mut acc = s[(t, j)];
                    for (ui, &u) in rest.iter().enumerate() {
                        if ui != ti {
                            acc -= w[(t, u)] * beta[(u, j)];
                        }
                    }
                    let new = soft_threshold(acc, rho) / w[(t, t)];
                    delta_max = delta_max.max((new - beta[(t, j)]).abs());
                    beta[(t, j)] = new;
                }
                if delta_max < 1e-10 * scale {
                    break;
                }
            }
            for &t in &rest {
                let mut v = 0.0;
                for &u in &rest {
                    v += w[(t, u)] * beta[(u, j)];
                }
                w[(t, j)] = v;
                w[(j, t)] = v;
            }
        }
        let theta = recover_precision(&w, &beta);
        let mut trace = 0.0;
        let mut l1 = 0.0;
        for i in 0..p {
            for j in 0..p {
                trace += s[(i, j)] * theta[(j, i)];
                l1 += theta[(i, j)].abs();
            }
        }
        gap = (trace + rho * l1 - p as f64).abs();
        if gap < 1e-4 {
            return Ok(theta);
        }
    }
    Err(MixtureError::GlassoNonConvergence { gap })
}

fn recover_precision(w: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let p = w.nrows();
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut dot = 0.0;
        for t in 0..p {
            if t != j {
                dot += w[(t, j)] * beta[(t, j)];
            }
        }
        let tjj = 1.0 / (w[(j, j)] - dot);
        theta[(j, j)] = tjj;
        for t in 0..p {
            if t != j {
                theta[(t, j)] = -beta[(t, j)] * tjj;
            }
        }
    }
    (&theta + theta.transpose()) * 0.5
}

/// Weighted scatter of each cluster about its mean.
fn weighted_scatter(
    tau: &DMatrix<f64>,
    betas: &DMatrix<f64>,
    mu: &[DVector<f64>],
    k: usize,
) -> (DMatrix<f64>, f64) {
    let p = betas.ncols();
    let mut s = DMatrix::zeros(p, p);
    let mut n_k = 0.0;
    for i in 0..betas.nrows() {
        let t = tau[(i, k)];
        n_k += t;
        let d = DVector::from(betas.row(i).transpose()) - &mu[k];
        s.ger(t, &d, &d, 1.0);
    }
    s /= n_k;
    ((&s + s.transpose()) * 0.5, n_k)
}

/// Per-cluster subobjective the precision update must not decrease.
fn precision_subobjective(prec: &Precision, s: &DMatrix<f64>, n_k: f64, lambda2: f64) -> f64 {
    let p = s.nrows();
    let mut trace = 0.0;
    let mut l1 = 0.0;
    for i in 0..p {
        for j in 0..p {
            trace += s[(i, j)] * prec.matrix[(j, i)];
            l1 += prec.matrix[(i, j)].abs();
        }
    }
    0.5 * n_k * (prec.logdet - trace) - lambda2 * l1
}

/// Sparse precision update: graphical lasso per cluster with penalty
/// `2 lambda2 / n_k`, or a direct inverse when unpenalized. When a previous
/// estimate is supplied it is kept whenever the candidate would lower the
/// subobjective, preserving generalized-EM ascent.
pub fn m_step_precisions(
    tau: &Posteriors,
    betas: &DMatrix<f64>,
    mu: &[DVector<f64>],
    lambda2: f64,
    previous: Option<&[Precision]>,
) -> Result<Vec<Precision>, MixtureError> {
    let k_total = mu.len();
    let mut out = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let (s, n_k) = weighted_scatter(&tau.tau, betas, mu, k);
        let candidate = if lambda2 == 0.0 {
            let inv = invert_spd(&s).ok_or(MixtureError::NonPd(k))?;
            Precision::with_jitter(inv, k)?
        } else {
            let rho = 2.0 * lambda2 / n_k;
            let theta = graphical_lasso(&s, rho)?;
            Precision::with_jitter(theta, k)?
        };
        let accepted = match previous {
            Some(old) => {
                let q_new = precision_subobjective(&candidate, &s, n_k, lambda2);
                let q_old = precision_subobjective(&old[k], &s, n_k, lambda2);
                if q_new >= q_old { candidate } else { old[k].clone() }
            }
            None => candidate,
        };
        out.push(accepted);
    }
    Ok(out)
}

fn invert_spd(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(chol) = s.clone().cholesky() {
        return Some(chol.inverse());
    }
    let scale = (0..s.nrows()).map(|i| s[(i, i)].abs()).sum::<f64>() / s.nrows() as f64;
    let mut eps = 1e-10 * scale.max(1.0);
    for _ in 0..5 {
        let mut j = s.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += eps;
        }
        if let Some(chol) = j.cholesky() {
            return Some(chol.inverse());
        }
        eps *= 10.0;
    }
    None
}

/// Weighted multinomial logit update for the mixing coefficients, by
/// damped Newton steps on the stacked `(K-1) x L` system.
pub fn m_step_mixing(
    tau: &Posteriors,
    psi: &DMatrix<f64>,
    warm: &DMatrix<f64>,
) -> Result<DMatrix<f64>, MixtureError> {
    let n = psi.nrows();
    let l = psi.ncols();
    let k = tau.tau.ncols();
    if k < 2 {
        return Ok(DMatrix::zeros(0, l));
    }
    let dim = (k - 1) * l;
    let mut omega = warm.clone();
    let objective = |om: &DMatrix<f64>| -> f64 {
        let mut f = 0.0;
        for i in 0..n {
            let psi_row: Vec<f64> = psi.row(i).iter().cloned().collect();
            let pi = mixing_proportions(om, &psi_row);
            for c in 0..k {
                f += tau.tau[(i, c)] * pi[c].ln();
            }
        }
        f
    };
    let mut f = objective(&omega);
    for _ in 0..100 {
        let mut grad: DVector<f64> = DVector::zeros(dim);
        let mut hess: DMatrix<f64> = DMatrix::zeros(dim, dim);
        for i in 0..n {
            let psi_row: Vec<f64> = psi.row(i).iter().cloned().collect();
            let pi = mixing_proportions(&omega, &psi_row);
            for a in 0..k - 1 {
                let resid = tau.tau[(i, a)] - pi[a];
                for la in 0..l {
                    grad[a * l + la] += resid * psi_row[la];
                }
                for b in 0..k - 1 {
                    let curv = pi[a] * (if a == b { 1.0 } else { 0.0 } - pi[b]);
                    for la in 0..l {
                        for lb in 0..l {
                            hess[(a * l + la, b * l + lb)] -=
                                curv * psi_row[la] * psi_row[lb];
                        }
                    }
                }
            }
        }
        if grad.amax() < 1e-8 {
            return Ok(omega);
        }
        let mut lhs = -hess;
        for d in 0..dim {
            lhs[(d, d)] += 1e-6;
        }
        let step = lhs
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or(MixtureError::LogitNonConvergence)?;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut cand = omega.clone();
            for a in 0..k - 1 {
                for la in 0..l {
                    cand[(a, la)] += scale * step[a * l + la];
                }
            }
            let fc = objective(&cand);
            if fc.is_finite() && fc > f {
                omega = cand;
                f = fc;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            // the objective is flat to machine precision: done if the
            // score is already tiny, genuinely stuck otherwise
            if grad.amax() < 1e-6 {
                return Ok(omega);
            }
            return Err(MixtureError::LogitNonConvergence);
        }
    }
    // Budget exhausted while every step still improved. With sharply
    // separated posteriors the maximizer sits at infinity, so this is the
    // expected path; an early-stopped improving update is a valid
    // generalized M-step and keeps the outer objective monotone.
    Ok(omega)
}

/// Full penalized objective from Eq-style penalties: unpenalized mixture
/// log-likelihood minus L1 terms on means and full precision matrices.
pub fn penalized_loglik(
    params: &ModelParams,
    betas: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64, MixtureError> {
    let (_, loglik) = e_step(params, betas, psi)?;
    let mean_l1: f64 = params.mu.iter().map(|m| m.iter().map(|x| x.abs()).sum::<f64>()).sum();
    let prec_l1: f64 = params
        .precisions
        .iter()
        .map(|p| p.matrix.iter().map(|x| x.abs()).sum::<f64>())
        .sum();
    Ok(loglik - lambda1 * mean_l1 - lambda2 * prec_l1)
}

fn squared_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

/// k-means++ seeding followed by Lloyd iterations; returns labels and the
/// within-cluster inertia.
fn kmeans(
    betas: &DMatrix<f64>,
    k: usize,
    rng: &mut ChaCha20Rng,
) -> (Vec<usize>, Vec<DVector<f64>>, f64) {
    let n = betas.nrows();
    let rows: Vec<DVector<f64>> =
        (0..n).map(|i| DVector::from(betas.row(i).transpose())).collect();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.gen_range(0..n)].clone());
    while centers.len() < k {
        let d2: Vec<f64> = rows
            .iter()
            .map(|r| {
                centers
                    .iter()
                    .map(|c| squared_distance(r, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            centers.push(rows[rng.gen_range(0..n)].clone());
            continue;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            target -= d;
            if target <= 0.0 {
                pick = i;
                break;
            }
        }
        centers.push(rows[pick].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = squared_distance(r, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                // adopt the point farthest from its current center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        squared_distance(&rows[a], &centers[labels[a]])
                            .partial_cmp(&squared_distance(&rows[b], &centers[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = rows[far].clone();
                labels[far] = c;
                changed = true;
                continue;
            }
            let mut m = DVector::zeros(betas.ncols());
            for &i in &members {
                m += &rows[i];
            }
            centers[c] = m / members.len() as f64;
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 =
        rows.iter().zip(&labels).map(|(r, &c)| squared_distance(r, &centers[c])).sum();
    (labels, centers, inertia)
}

/// Diagonal pooled-covariance precision used at initialization and when a
/// cluster must be re-seeded.
fn pooled_diag_precision(
    betas: &DMatrix<f64>,
    labels: &[usize],
    centers: &[DVector<f64>],
) -> Result<Precision, MixtureError> {
    let n = betas.nrows();
    let p = betas.ncols();
    let mut diag = DVector::zeros(p);
    for i in 0..n {
        let c = &centers[labels[i]];
        for j in 0..p {
            let d = betas[(i, j)] - c[j];
            diag[j] += d * d;
        }
    }
    diag /= n as f64;
    let mut w = DMatrix::zeros(p, p);
    for j in 0..p {
        w[(j, j)] = 1.0 / (diag[j] + 1e-3);
    }
    Precision::new(w)
}

/// k-means initialization: cluster means, a shared diagonal pooled
/// precision, and zero logit coefficients.
pub fn init_model(
    betas: &DMatrix<f64>,
    k: usize,
    psi: &DMatrix<f64>,
    seed: u64,
    n_init: usize,
) -> Result<ModelParams, MixtureError> {
    let n = betas.nrows();
    if k == 0 || k > n {
        return Err(MixtureError::BadK { k, n });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, Vec<DVector<f64>>, f64)> = None;
    for _ in 0..n_init.max(1) {
        let run = kmeans(betas, k, &mut rng);
        if best.as_ref().map_or(true, |b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (labels, centers, _) = best.unwrap();
    let pooled = pooled_diag_precision(betas, &labels, &centers)?;
    Ok(ModelParams {
        mu: centers,
        precisions: vec![pooled; k],
        omega: DMatrix::zeros(k.saturating_sub(1), psi.ncols()),
    })
}

/// Row argmax; ties resolve to the lowest cluster index.
pub fn hard_assignment(tau: &Posteriors) -> Vec<usize> {
    (0..tau.tau.nrows())
        .map(|i| {
            let mut best = 0;
            for c in 1..tau.tau.ncols() {
                if tau.tau[(i, c)] > tau.tau[(i, best)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn check_dims(
    betas: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> Result<(), MixtureError> {
    if betas.nrows() != psi.nrows() {
        return Err(MixtureError::DimensionMismatch(format!(
            "{} coefficient rows vs {} basis rows",
            betas.nrows(),
            psi.nrows()
        )));
    }
    if betas.nrows() == 0 || betas.ncols() == 0 {
        return Err(MixtureError::DimensionMismatch("empty coefficient matrix".into()));
    }
    Ok(())
}

/// One EM run from explicit starting parameters.
pub fn fit_em_from(
    betas: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    start: ModelParams,
    config: &FitConfig,
) -> Result<FittedModel, MixtureError> {
    check_dims(betas, psi)?;
    let p = betas.ncols();
    let k = start.k();
    let mut params = start;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..config.max_iter {
        let (mut tau, _) = e_step(&params, betas, psi)?;
        // a cluster whose posterior mass collapsed is re-seeded on the
        // worst-explained point before any M-step sees it
        for attempt in 0..4 {
            let masses = column_masses(&tau.tau);
            let starved: Vec<usize> = (0..k)
                .filter(|&c| masses[c] < (p + 1) as f64)
                .collect();
            if starved.is_empty() {
                break;
            }
            if attempt == 3 {
                return Err(MixtureError::EmptyCluster(starved[0]));
            }
            let labels = hard_assignment(&tau);
            let centers: Vec<DVector<f64>> = params.mu.clone();
            let pooled = pooled_diag_precision(betas, &labels, &centers)?;
            for &c in &starved {
                let worst = (0..betas.nrows())
                    .min_by(|&a, &b| {
                        let ma = (0..k).map(|j| tau.tau[(a, j)]).fold(f64::MIN, f64::max);
                        let mb = (0..k).map(|j| tau.tau[(b, j)]).fold(f64::MIN, f64::max);
                        ma.partial_cmp(&mb).unwrap().then(a.cmp(&b))
                    })
                    .unwrap();
                params.mu[c] = DVector::from(betas.row(worst).transpose());
                params.precisions[c] = pooled.clone();
                if c + 1 < k {
                    // wipe its log-odds so the prior cannot keep it starved
                    for l in 0..params.omega.ncols() {
                        params.omega[(c, l)] = 0.0;
                    }
                }
            }
            let redo = e_step(&params, betas, psi)?;
            tau = redo.0;
        }
        params.mu = m_step_means(&tau, betas, &params.precisions, config.lambda1)?;
        params.precisions = m_step_precisions(
            &tau,
            betas,
            &params.mu,
            config.lambda2,
            Some(&params.precisions),
        )?;
        if config.spatial_mixing && k > 1 {
            params.omega = m_step_mixing(&tau, psi, &params.omega)?;
        }
        let obj = penalized_loglik(&params, betas, psi, config.lambda1, config.lambda2)?;
        trace.push(obj);
        if (obj - prev).abs() < config.rel_tol * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
        prev = obj;
    }
    let (tau, loglik) = e_step(&params, betas, psi)?;
    let labels = hard_assignment(&tau);
    Ok(FittedModel {
        params,
        tau,
        labels,
        objective_trace: trace,
        converged,
        loglik,
        config: config.clone(),
    })
}

/// Full fit: seeded restarts in parallel, best final penalized objective
/// wins, earlier restart on ties. Restart seeds are drawn up front from
/// one master stream, so the outcome is independent of thread scheduling.
pub fn fit_em(
    betas: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    k: usize,
    config: &FitConfig,
) -> Result<FittedModel, MixtureError> {
    check_dims(betas, psi)?;
    if k == 0 || k > betas.nrows() {
        return Err(MixtureError::BadK { k, n: betas.nrows() });
    }
    let mut master = ChaCha20Rng::seed_from_u64(config.seed);
    let child_seeds: Vec<u64> = (0..config.n_init.max(1)).map(|_| master.gen()).collect();
    let runs: Vec<Result<FittedModel, MixtureError>> = child_seeds
        .par_iter()
        .map(|&s| {
            let start = init_model(betas, k, psi, s, 4)?;
            fit_em_from(betas, psi, start, config)
        })
        .collect();
    let mut best: Option<FittedModel> = None;
    let mut first_err: Option<String> = None;
    for run in runs {
        match run {
            Ok(m) => {
                let score = m.objective_trace.last().copied().unwrap_or(f64::NEG_INFINITY);
                let better = match &best {
                    Some(b) => {
                        score > b.objective_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
                    }
                    None => true,
                };
                if better {
                    best = Some(m);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e.to_string());
                }
            }
        }
    }
    best.ok_or_else(|| {
        MixtureError::AllRestartsFailed(first_err.unwrap_or_else(|| "unknown".into()))
    })
}
