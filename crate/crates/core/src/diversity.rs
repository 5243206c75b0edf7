//! Hill-number diversity profiles for a single community.
//!
//! For a relative-abundance vector `p` and order `q >= 0` the Hill number is
//! `(sum_s p_s^q)^(1/(1-q))`, with the `q = 1` limit `exp(-sum_s p_s ln p_s)`.
//! Orders near one are evaluated through the limit to keep the profile
//! continuous; everything else goes through logs so large orders cannot
//! underflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the window around `q = 1` evaluated via the Shannon limit.
pub const Q_ONE_WINDOW: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error("cell has no individuals, relative abundances are undefined")]
    EmptyCell,
    #[error("diversity order q must be finite and non-negative, got {0}")]
    BadOrder(f64),
    #[error("abundance vector is not a probability distribution: {0}")]
    BadDistribution(String),
    #[error("order grid is invalid: {0}")]
    BadGrid(String),
}

impl DiversityError {
    pub fn kind(&self) -> &'static str {
        match self {
            DiversityError::EmptyCell => "EmptyCell",
            DiversityError::BadOrder(_) => "BadOrder",
            DiversityError::BadDistribution(_) => "BadDistribution",
            DiversityError::BadGrid(_) => "BadGrid",
        }
    }
}

/// Converts per-species counts into relative abundances, dropping zeros.
/// Input order is preserved for the surviving species.
pub fn relative_abundance(counts: &[u64]) -> Result<Vec<f64>, DiversityError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(DiversityError::EmptyCell);
    }
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 / total as f64)
        .collect())
}

fn check_distribution(p: &[f64]) -> Result<(), DiversityError> {
    if p.is_empty() {
        return Err(DiversityError::BadDistribution("no species".into()));
    }
    let mut sum = 0.0;
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(DiversityError::BadDistribution(format!("entry {v} out of range")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DiversityError::BadDistribution(format!("sum {sum} differs from 1")));
    }
    Ok(())
}

/// Shannon entropy `-sum p ln p` (zero-probability species contribute zero).
pub fn shannon_entropy(p: &[f64]) -> Result<f64, DiversityError> {
    check_distribution(p)?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

/// Gini-Simpson index `1 - sum p^2`.
pub fn gini_simpson(p: &[f64]) -> Result<f64, DiversityError> {
    check_distribution(p)?;
    Ok(1.0 - p.iter().map(|&v| v * v).sum::<f64>())
}

/// Hill number of order `q`. `q = 0` returns species richness exactly; orders
/// within [`Q_ONE_WINDOW`] of one use the Shannon limit.
pub fn hill_number(p: &[f64], q: f64) -> Result<f64, DiversityError> {
    if !q.is_finite() || q < 0.0 {
        return Err(DiversityError::BadOrder(q));
    }
    check_distribution(p)?;
    let support: Vec<f64> = p.iter().copied().filter(|&v| v > 0.0).collect();
    if q == 0.0 {
        return Ok(support.len() as f64);
    }
    if (q - 1.0).abs() < Q_ONE_WINDOW {
        let entropy = -support.iter().map(|&v| v * v.ln()).sum::<f64>();
        return Ok(entropy.exp());
    }
    // log-sum-exp of q*ln(p) keeps large orders away from underflow
    let logs: Vec<f64> = support.iter().map(|&v| q * v.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logs.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    Ok((lse / (1.0 - q)).exp())
}

/// Uniform grid of diversity orders on `[0, q_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGrid {
    points: Vec<f64>,
}

impl QGrid {
    /// `n_points` equally spaced orders from 0 to `q_max` inclusive. The grid
    /// must contain `q = 1` (up to the limit window) so the Shannon point is
    /// always profiled.
    pub fn uniform(q_max: f64, n_points: usize) -> Result<Self, DiversityError> {
        if !(q_max > 0.0) || n_points < 2 {
            return Err(DiversityError::BadGrid(format!(
                "need q_max > 0 and at least 2 points, got ({q_max}, {n_points})"
            )));
        }
        let n = n_points - 1;
        let points: Vec<f64> = (0..=n).map(|i| i as f64 * q_max / n as f64).collect();
        Self::from_points(points)
    }

    /// Validates an explicit grid: strictly increasing, starting at 0, and
    /// covering `q = 1` when it extends past one.
    pub fn from_points(points: Vec<f64>) -> Result<Self, DiversityError> {
        if points.len() < 2 {
            return Err(DiversityError::BadGrid("need at least 2 points".into()));
        }
        if points[0] != 0.0 {
            return Err(DiversityError::BadGrid("grid must start at q = 0".into()));
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(DiversityError::BadGrid("grid must be strictly increasing".into()));
            }
        }
        let q_max = *points.last().expect("nonempty");
        if q_max >= 1.0 && !points.iter().any(|&q| (q - 1.0).abs() < Q_ONE_WINDOW) {
            return Err(DiversityError::BadGrid("grid spanning 1 must include q = 1".into()));
        }
        Ok(QGrid { points })
    }

    /// The default profiling grid: 101 orders on `[0, 5]`.
    pub fn default_grid() -> Self {
        Self::uniform(5.0, 101).expect("default grid is valid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn q_max(&self) -> f64 {
        *self.points.last().expect("nonempty")
    }
}

/// Hill numbers of one community over a whole order grid.
pub fn profile(p: &[f64], grid: &QGrid) -> Result<Vec<f64>, DiversityError> {
    grid.points.iter().map(|&q| hill_number(p, q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const SKEWED: [f64; 3] = [0.8, 0.1, 0.1];

    #[test]
    fn relative_abundance_basics() {
        assert_eq!(relative_abundance(&[3, 1]).unwrap(), vec![0.75, 0.25]);
        assert_eq!(relative_abundance(&[7]).unwrap(), vec![1.0]);
        assert_eq!(relative_abundance(&[8, 0, 1, 1]).unwrap(), vec![0.8, 0.1, 0.1]);
        assert!(matches!(relative_abundance(&[0, 0]), Err(DiversityError::EmptyCell)));
    }

    #[test]
    fn richness_is_exact_at_q_zero() {
        assert_eq!(hill_number(&SKEWED, 0.0).unwrap(), 3.0);
        assert_eq!(hill_number(&[0.5, 0.5, 0.0], 0.0).unwrap(), 2.0);
    }

    #[test]
    fn uniform_community_has_constant_profile() {
        let p = [1.0 / 3.0; 3];
        for q in [0.0, 0.5, 1.0, 2.0, 5.0] {
            assert_relative_eq!(hill_number(&p, q).unwrap(), 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn skewed_community_matches_frozen_oracles() {
        // values computed independently from the defining formulas
        assert_relative_eq!(
            shannon_entropy(&SKEWED).unwrap(),
            0.639031859650177,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            hill_number(&SKEWED, 1.0).unwrap(),
            1.8946457081379977,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            hill_number(&SKEWED, 2.0).unwrap(),
            1.5151515151515151,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            hill_number(&SKEWED, 3.0).unwrap(),
            1.3948208816291765,
            epsilon = 1e-12
        );
        assert_relative_eq!(gini_simpson(&SKEWED).unwrap(), 0.34, epsilon = 1e-12);
    }

    #[test]
    fn two_species_profile_matches_frozen_oracles() {
        let p = [0.75, 0.25];
        assert_eq!(hill_number(&p, 0.0).unwrap(), 2.0);
        assert_relative_eq!(hill_number(&p, 1.0).unwrap(), 1.7547653506033232, epsilon = 1e-9);
        assert_relative_eq!(hill_number(&p, 2.0).unwrap(), 1.6, epsilon = 1e-12);
        assert_relative_eq!(shannon_entropy(&p).unwrap(), 0.5623351446188083, epsilon = 1e-12);
        assert_relative_eq!(gini_simpson(&p).unwrap(), 0.375, epsilon = 1e-12);
    }

    #[test]
    fn entropy_and_gini_edge_values() {
        assert_eq!(shannon_entropy(&[1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            shannon_entropy(&[0.5, 0.5]).unwrap(),
            0.6931471805599453,
            epsilon = 1e-15
        );
        assert_eq!(gini_simpson(&[1.0]).unwrap(), 0.0);
        assert_relative_eq!(gini_simpson(&[0.5, 0.5]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn q_two_is_inverse_simpson() {
        let p = [0.4, 0.3, 0.2, 0.1];
        let simpson: f64 = p.iter().map(|v| v * v).sum();
        assert_relative_eq!(hill_number(&p, 2.0).unwrap(), 1.0 / simpson, epsilon = 1e-12);
    }

    #[test]
    fn limit_window_is_continuous() {
        let h1 = hill_number(&SKEWED, 1.0).unwrap();
        for dq in [1e-9, 1e-7, 1e-6] {
            assert!((hill_number(&SKEWED, 1.0 + dq).unwrap() - h1).abs() < 1e-4);
            assert!((hill_number(&SKEWED, 1.0 - dq).unwrap() - h1).abs() < 1e-4);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(matches!(hill_number(&SKEWED, -0.5), Err(DiversityError::BadOrder(_))));
        assert!(matches!(hill_number(&SKEWED, f64::NAN), Err(DiversityError::BadOrder(_))));
        assert!(hill_number(&[0.5, 0.4], 2.0).is_err());
        assert!(hill_number(&[1.2, -0.2], 2.0).is_err());
        assert!(hill_number(&[], 2.0).is_err());
    }

    #[test]
    fn default_grid_covers_zero_one_and_q_max() {
        let g = QGrid::default_grid();
        assert_eq!(g.len(), 101);
        assert_eq!(g.points()[0], 0.0);
        assert_eq!(g.points()[20], 1.0);
        assert_eq!(g.q_max(), 5.0);
    }

    #[test]
    fn grids_missing_one_are_rejected() {
        assert!(QGrid::from_points(vec![0.0, 0.5, 2.0]).is_err());
        assert!(QGrid::from_points(vec![0.0, 0.5, 1.0, 2.0]).is_ok());
        assert!(QGrid::from_points(vec![0.0, 0.5]).is_ok());
        assert!(QGrid::from_points(vec![0.1, 0.5, 1.0]).is_err());
        assert!(QGrid::from_points(vec![0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn profile_of_skewed_and_small_community_crosses_once_in_one_two() {
        // richness orders the two communities one way, dominance the other
        let a = [0.8, 0.1, 0.1];
        let c = [0.75, 0.25];
        let d = |q: f64| hill_number(&a, q).unwrap() - hill_number(&c, q).unwrap();
        assert!(d(1.0) > 0.0);
        assert!(d(2.0) < 0.0);
        let (mut lo, mut hi) = (1.0, 2.0);
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if d(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(lo > 1.0 && hi < 2.0);
    }

    fn random_simplex(seed: u64, s: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..s).map(|_| -(rng.gen::<f64>().ln())).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    #[test]
    fn doubling_two_equally_diverse_communities_doubles_diversity() {
        let grid = QGrid::default_grid();
        for seed in 0..20u64 {
            let p = random_simplex(seed, 6);
            let pooled: Vec<f64> = p.iter().chain(p.iter()).map(|v| v / 2.0).collect();
            for &q in grid.points() {
                let single = hill_number(&p, q).unwrap();
                let both = hill_number(&pooled, q).unwrap();
                assert_relative_eq!(both, 2.0 * single, max_relative = 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn profiles_are_monotone_non_increasing(seed in 0u64..500, s in 2usize..12) {
            let p = random_simplex(seed, s);
            let grid = QGrid::default_grid();
            let h = profile(&p, &grid).unwrap();
            for w in h.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "profile rose: {} -> {}", w[0], w[1]);
            }
            prop_assert!(h.iter().all(|v| *v > 0.0));
        }

        #[test]
        fn hill_bounded_by_richness_and_at_least_one(seed in 0u64..200, s in 1usize..15, q in 0.0f64..5.0) {
            let p = random_simplex(seed, s);
            let h = hill_number(&p, q).unwrap();
            prop_assert!(h <= s as f64 + 1e-9);
            prop_assert!(h >= 1.0 - 1e-12);
        }
    }
}
