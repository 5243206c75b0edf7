//! Information-criterion scoring of fitted mixtures and the hyperparameter
//! grid search over (K, lambda1, lambda2).
//!
//! Complexity counts surviving parameters: nonzero mean entries, the
//! nonzero upper half of each covariance estimate, and the mixing
//! coefficients. BIC penalizes the unpenalized maximized log-likelihood by
//! C/2 log N; ICL additionally charges posterior entropy, so it always
//! sits at or below BIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nalgebra::DMatrix;

use crate::mixture::{fit_em, FitConfig, FittedModel};

/// Entries smaller than this count as structural zeros.
const NONZERO_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("every grid axis needs at least one value")]
    EmptyGrid,
}

impl SelectionError {
    pub fn kind(&self) -> &'static str {
        match self {
            SelectionError::EmptyGrid => "EmptyGrid",
        }
    }
}

/// One scored (K, lambda1, lambda2) triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Unpenalized log-likelihood at the fitted parameters.
    pub loglik: f64,
    pub complexity: usize,
    pub bic: f64,
    pub icl: f64,
    /// `sum tau log tau`, never positive.
    pub entropy_term: f64,
    pub converged: bool,
}

/// A triplet whose fit failed; kept in the table instead of aborting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTriplet {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub error: String,
}

#[derive(Debug)]
pub struct GridSearchResult {
    /// Successful triplets in grid order (K outer, lambda1, lambda2 inner).
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<FailedTriplet>,
    /// Indices into `records`; ties go to the earlier triplet.
    pub best_bic: Option<usize>,
    pub best_icl: Option<usize>,
    /// Only the winning models are retained.
    pub best_bic_model: Option<FittedModel>,
    pub best_icl_model: Option<FittedModel>,
}

/// Number of free parameters that survived shrinkage: nonzero mean
/// entries, nonzero upper-triangular (diagonal included) covariance
/// entries, plus L coefficients per non-baseline class.
pub fn complexity(model: &FittedModel, l: usize) -> usize {
    let mut c = 0;
    for mu in &model.params.mu {
        c += mu.iter().filter(|x| x.abs() > NONZERO_TOL).count();
    }
    for prec in &model.params.precisions {
        let cov = &prec.covariance;
        for i in 0..cov.nrows() {
            for j in i..cov.ncols() {
                if cov[(i, j)].abs() > NONZERO_TOL {
                    c += 1;
                }
            }
        }
    }
    c + l * (model.params.k().saturating_sub(1))
}

pub fn bic(model: &FittedModel, l: usize, n: usize) -> f64 {
    model.loglik - complexity(model, l) as f64 / 2.0 * (n as f64).ln()
}

pub fn icl(model: &FittedModel, l: usize, n: usize) -> f64 {
    bic(model, l, n) + model.tau.entropy_term()
}

/// Default cluster-count grid.
pub fn default_k_grid() -> Vec<usize> {
    vec![2, 3, 4, 5, 6]
}

/// Five log-spaced penalty values spanning 1e-3 to 10.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..5).map(|i| 10f64.powi(i - 3)).collect()
}

fn score(model: &FittedModel, l: usize, n: usize) -> ScoreRecord {
    let c = complexity(model, l);
    let b = bic(model, l, n);
    ScoreRecord {
        k: model.params.k(),
        lambda1: model.config.lambda1,
        lambda2: model.config.lambda2,
        loglik: model.loglik,
        complexity: c,
        bic: b,
        icl: b + model.tau.entropy_term(),
        entropy_term: model.tau.entropy_term(),
        converged: model.converged,
    }
}

/// Fits every triplet on the grid and scores the survivors.
///
/// Every fit shares the same seed so triplets differ only in their
/// hyperparameters. Triplets run in parallel but are assembled in grid
/// order, and ties on either criterion keep the earliest triplet, so the
/// result is reproducible regardless of thread schedule.
pub fn grid_search(
    betas: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    k_grid: &[usize],
    lambda1_grid: &[f64],
    lambda2_grid: &[f64],
    config: &FitConfig,
) -> Result<GridSearchResult, SelectionError> {
    if k_grid.is_empty() || lambda1_grid.is_empty() || lambda2_grid.is_empty() {
        return Err(SelectionError::EmptyGrid);
    }
    let mut triplets = Vec::new();
    for &k in k_grid {
        for &l1 in lambda1_grid {
            for &l2 in lambda2_grid {
                triplets.push((k, l1, l2));
            }
        }
    }
    let n = betas.nrows();
    let l = psi.ncols();
    let fits: Vec<Result<FittedModel, String>> = triplets
        .par_iter()
        .map(|&(k, l1, l2)| {
            let cfg = FitConfig { lambda1: l1, lambda2: l2, ..config.clone() };
            fit_em(betas, psi, k, &cfg).map_err(|e| e.to_string())
        })
        .collect();
    let mut result = GridSearchResult {
        records: Vec::new(),
        failures: Vec::new(),
        best_bic: None,
        best_icl: None,
        best_bic_model: None,
        best_icl_model: None,
    };
    for ((k, l1, l2), fit) in triplets.into_iter().zip(fits) {
        match fit {
            Ok(model) => {
                let rec = score(&model, l, n);
                let idx = result.records.len();
                if result.best_bic.map_or(true, |b| rec.bic > result.records[b].bic) {
                    result.best_bic = Some(idx);
                    result.best_bic_model = Some(model.clone());
                }
                if result.best_icl.map_or(true, |b| rec.icl > result.records[b].icl) {
                    result.best_icl = Some(idx);
                    result.best_icl_model = Some(model);
                }
                result.records.push(rec);
            }
            Err(error) => {
                result.failures.push(FailedTriplet { k, lambda1: l1, lambda2: l2, error });
            }
        }
    }
    Ok(result)
}
