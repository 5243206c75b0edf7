//! Empirical trace-variogram for fitted diversity profiles.
//!
//! The dissimilarity between two cells is the integrated squared difference
//! of their fitted curves over `[0, Q]`. Pair dissimilarities are grouped
//! into isotropic distance bins and averaged; half the bin average is the
//! semivariance estimate for that lag.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Quadrature;
use crate::smoothing::SmoothedProfile;

#[derive(Debug, Error)]
pub enum VariogramError {
    #[error("need at least two sites, got {0}")]
    TooFewSites(usize),
    #[error("profiles sampled on different grids ({0} vs {1} nodes)")]
    BasisMismatch(usize, usize),
    #[error("lag bins need positive width and extent")]
    BadBins,
    #[error("{0} profiles but {1} centroids")]
    LengthMismatch(usize, usize),
}

impl VariogramError {
    pub fn kind(&self) -> &'static str {
        match self {
            VariogramError::TooFewSites(_) => "TooFewSites",
            VariogramError::BasisMismatch(_, _) => "BasisMismatch",
            VariogramError::BadBins => "BadBins",
            VariogramError::LengthMismatch(_, _) => "LengthMismatch",
        }
    }
}

/// Contiguous half-open lag bins `[edges[i], edges[i+1])` starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LagBins {
    edges: Vec<f64>,
}

impl LagBins {
    /// Equal-width bins covering `[0, max_lag]`.
    pub fn uniform(width: f64, max_lag: f64) -> Result<Self, VariogramError> {
        if !(width > 0.0) || !(max_lag > 0.0) {
            return Err(VariogramError::BadBins);
        }
        let n = (max_lag / width).ceil() as usize;
        let edges = (0..=n.max(1)).map(|i| i as f64 * width).collect();
        Ok(LagBins { edges })
    }

    /// The conventional default: bin width of one cell size, reaching half
    /// the maximum pairwise distance.
    pub fn default_for(cell_size: f64, centroids: &[(f64, f64)]) -> Result<Self, VariogramError> {
        if centroids.len() < 2 {
            return Err(VariogramError::TooFewSites(centroids.len()));
        }
        let mut max_d = 0.0f64;
        for i in 0..centroids.len() {
            for r in (i + 1)..centroids.len() {
                max_d = max_d.max(euclidean(centroids[i], centroids[r]));
            }
        }
        LagBins::uniform(cell_size, max_d / 2.0)
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Bin index for a distance, or None when it lies past the last edge.
    pub fn bin_of(&self, h: f64) -> Option<usize> {
        if h < 0.0 || h >= *self.edges.last().unwrap() {
            return None;
        }
        // edges are uniform in practice but binary search keeps this general
        match self.edges.binary_search_by(|e| e.partial_cmp(&h).unwrap()) {
            Ok(i) => Some(i.min(self.n_bins() - 1)),
            Err(i) => Some(i - 1),
        }
    }
}

/// Binned semivariance estimates. Bins that caught no pairs hold `None`
/// rather than zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    pub lag_centers: Vec<f64>,
    pub semivariance: Vec<Option<f64>>,
    pub pair_counts: Vec<usize>,
}

fn euclidean(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// Dense symmetric distance matrix with zero diagonal, row-major.
pub fn pairwise_distances(centroids: &[(f64, f64)]) -> Result<Vec<Vec<f64>>, VariogramError> {
    if centroids.len() < 2 {
        return Err(VariogramError::TooFewSites(centroids.len()));
    }
    let n = centroids.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for r in (i + 1)..n {
            let h = euclidean(centroids[i], centroids[r]);
            d[i][r] = h;
            d[r][i] = h;
        }
    }
    Ok(d)
}

/// `integral (a - b)^2 dq` over the quadrature grid both profiles share.
pub fn profile_l2_distance(
    a: &SmoothedProfile,
    b: &SmoothedProfile,
    quad: &Quadrature,
) -> Result<f64, VariogramError> {
    if a.dense_fitted.len() != b.dense_fitted.len() {
        return Err(VariogramError::BasisMismatch(a.dense_fitted.len(), b.dense_fitted.len()));
    }
    if a.dense_fitted.len() != quad.len() {
        return Err(VariogramError::BasisMismatch(a.dense_fitted.len(), quad.len()));
    }
    let sq: Vec<f64> = a
        .dense_fitted
        .iter()
        .zip(&b.dense_fitted)
        .map(|(&x, &y)| (x - y) * (x - y))
        .collect();
    Ok(quad.integral(&sq))
}

/// Empirical trace-variogram: per lag bin, half the mean pair dissimilarity.
///
/// Pair sums are accumulated per row in parallel and reduced in row order,
/// so the result does not depend on the thread schedule.
pub fn trace_variogram(
    profiles: &[SmoothedProfile],
    centroids: &[(f64, f64)],
    quad: &Quadrature,
    bins: &LagBins,
) -> Result<EmpiricalVariogram, VariogramError> {
    if profiles.len() != centroids.len() {
        return Err(VariogramError::LengthMismatch(profiles.len(), centroids.len()));
    }
    if profiles.len() < 2 {
        return Err(VariogramError::TooFewSites(profiles.len()));
    }
    for p in profiles {
        if p.dense_fitted.len() != quad.len() {
            return Err(VariogramError::BasisMismatch(p.dense_fitted.len(), quad.len()));
        }
    }
    let nb = bins.n_bins();
    let n = profiles.len();
    let rows: Vec<(Vec<f64>, Vec<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0; nb];
            let mut counts = vec![0usize; nb];
            for r in (i + 1)..n {
                let h = euclidean(centroids[i], centroids[r]);
                if let Some(b) = bins.bin_of(h) {
                    let sq: Vec<f64> = profiles[i]
                        .dense_fitted
                        .iter()
                        .zip(&profiles[r].dense_fitted)
                        .map(|(&x, &y)| (x - y) * (x - y))
                        .collect();
                    sums[b] += quad.integral(&sq);
                    counts[b] += 1;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    for (s, c) in rows {
        for b in 0..nb {
            sums[b] += s[b];
            counts[b] += c[b];
        }
    }
    let semivariance = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { Some(0.5 * s / c as f64) } else { None })
        .collect();
    Ok(EmpiricalVariogram { lag_centers: bins.centers(), semivariance, pair_counts: counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::{ProfileSmoother, SmoothConfig};
    use rand_chacha::ChaCha20Rng;

    fn smoother() -> ProfileSmoother {
        ProfileSmoother::new(SmoothConfig::default()).unwrap()
    }

    fn constant_profile(sm: &ProfileSmoother, level: f64) -> SmoothedProfile {
        let qs: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let hs = vec![level; 11];
        sm.fit(&qs, &hs).unwrap()
    }

    #[test]
    fn distances_are_symmetric_with_zero_diagonal() {
        let pts = vec![(0.0, 0.0), (20.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        let d = pairwise_distances(&pts).unwrap();
        assert_eq!(d[0][1], 20.0);
        assert!((d[2][3] - 1.0).abs() < 1e-15);
        for i in 0..4 {
            assert_eq!(d[i][i], 0.0);
            for r in 0..4 {
                assert_eq!(d[i][r], d[r][i]);
            }
        }
    }

    #[test]
    fn unit_square_corner_distances() {
        let pts = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        let d = pairwise_distances(&pts).unwrap();
        assert!((d[0][3] - 2.0f64.sqrt()).abs() < 1e-15);
        assert!((d[1][2] - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distances_match_brute_force_on_random_sites() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let pts: Vec<(f64, f64)> =
            (0..40).map(|_| (rng.gen::<f64>() * 100.0, rng.gen::<f64>() * 100.0)).collect();
        let d = pairwise_distances(&pts).unwrap();
        for i in 0..pts.len() {
            for r in 0..pts.len() {
                let dx = pts[i].0 - pts[r].0;
                let dy = pts[i].1 - pts[r].1;
                assert!((d[i][r] - (dx * dx + dy * dy).sqrt()).abs() < 1e-12);
                assert!(d[i][r] <= d[i][(i + 1) % pts.len()] + d[(i + 1) % pts.len()][r] + 1e-9);
            }
        }
    }

    #[test]
    fn identical_profiles_give_zero_distance_and_zero_variogram() {
        let sm = smoother();
        let p = constant_profile(&sm, 2.0);
        assert_eq!(profile_l2_distance(&p, &p, sm.quadrature()).unwrap(), 0.0);
        let profiles = vec![p.clone(), p.clone(), p];
        let pts = vec![(0.0, 0.0), (20.0, 0.0), (40.0, 0.0)];
        let bins = LagBins::uniform(20.0, 60.0).unwrap();
        let v = trace_variogram(&profiles, &pts, sm.quadrature(), &bins).unwrap();
        for (g, &c) in v.semivariance.iter().zip(&v.pair_counts) {
            if c > 0 {
                assert_eq!(g.unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn constant_offset_has_analytic_l2_distance() {
        // curves differing by c over [0, 5] integrate to 5 c^2
        let sm = smoother();
        let a = constant_profile(&sm, 2.5);
        let b = constant_profile(&sm, 3.0);
        let d = profile_l2_distance(&a, &b, sm.quadrature()).unwrap();
        assert!((d - 5.0 * 0.25).abs() < 1e-10, "d = {d}");
    }

    #[test]
    fn l2_distance_matches_fine_grid_oracle() {
        let sm = smoother();
        let qs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let ha: Vec<f64> = qs.iter().map(|&q| 1.0 + 2.0 * (-0.8 * q).exp()).collect();
        let hb: Vec<f64> = qs.iter().map(|&q| 1.0 + 1.2 * (-0.3 * q).exp()).collect();
        let a = sm.fit(&qs, &ha).unwrap();
        let b = sm.fit(&qs, &hb).unwrap();
        let d = profile_l2_distance(&a, &b, sm.quadrature()).unwrap();
        // same integrand sampled 16x finer, plain Simpson
        let fine = 8001usize;
        let h = 5.0 / (fine - 1) as f64;
        let ca = sm.transform(&a.coefficients.alpha).unwrap();
        let cb = sm.transform(&b.coefficients.alpha).unwrap();
        let mut acc = 0.0;
        for i in 0..fine {
            let q = i as f64 * h;
            let va = sm.evaluate(&a.coefficients, &ca, q.min(5.0), 0).unwrap();
            let vb = sm.evaluate(&b.coefficients, &cb, q.min(5.0), 0).unwrap();
            let sq = (va - vb) * (va - vb);
            let w = if i == 0 || i == fine - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * sq;
        }
        let oracle = acc * h / 3.0;
        assert!((d - oracle).abs() < 1e-8, "d = {d}, oracle = {oracle}");
    }

    #[test]
    fn single_pair_bin_holds_half_its_distance() {
        let sm = smoother();
        let a = constant_profile(&sm, 2.0);
        let b = constant_profile(&sm, 4.0);
        let d = profile_l2_distance(&a, &b, sm.quadrature()).unwrap();
        let bins = LagBins::uniform(20.0, 40.0).unwrap();
        let v = trace_variogram(
            &[a, b],
            &[(0.0, 0.0), (20.0, 0.0)],
            sm.quadrature(),
            &bins,
        )
        .unwrap();
        let idx = bins.bin_of(20.0).unwrap();
        assert_eq!(v.pair_counts[idx], 1);
        assert!((v.semivariance[idx].unwrap() - d / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_bins_are_reported_empty() {
        let sm = smoother();
        let profiles: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&l| constant_profile(&sm, l)).collect();
        // two pairs at 100, one at 200; bins of width 20 leave gaps
        let pts = vec![(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)];
        let bins = LagBins::uniform(20.0, 240.0).unwrap();
        let v = trace_variogram(&profiles, &pts, sm.quadrature(), &bins).unwrap();
        assert_eq!(v.pair_counts[0], 0);
        assert!(v.semivariance[0].is_none());
        assert_eq!(v.pair_counts[bins.bin_of(100.0).unwrap()], 2);
        assert_eq!(v.pair_counts[bins.bin_of(200.0).unwrap()], 1);
    }

    #[test]
    fn variogram_is_invariant_to_cell_order() {
        let sm = smoother();
        let levels = [1.0, 1.5, 2.5, 4.0, 2.0, 3.5];
        let profiles: Vec<_> = levels.iter().map(|&l| constant_profile(&sm, l)).collect();
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (20.0 * i as f64, 10.0 * (i % 2) as f64)).collect();
        let bins = LagBins::default_for(20.0, &pts).unwrap();
        let v1 = trace_variogram(&profiles, &pts, sm.quadrature(), &bins).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let profiles2: Vec<_> = perm.iter().map(|&i| profiles[i].clone()).collect();
        let pts2: Vec<_> = perm.iter().map(|&i| pts[i]).collect();
        let v2 = trace_variogram(&profiles2, &pts2, sm.quadrature(), &bins).unwrap();
        assert_eq!(v1.pair_counts, v2.pair_counts);
        for (a, b) in v1.semivariance.iter().zip(&v2.semivariance) {
            match (a, b) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => panic!("bin emptiness changed under permutation"),
            }
        }
    }

    #[test]
    fn smooth_field_yields_increasing_trend() {
        // profile level rises linearly along x, so pair dissimilarity grows
        // with separation and the variogram must trend upward
        let sm = smoother();
        let mut profiles = Vec::new();
        let mut pts = Vec::new();
        for ix in 0..8 {
            for iy in 0..3 {
                let x = 20.0 * ix as f64;
                let y = 20.0 * iy as f64;
                profiles.push(constant_profile(&sm, 1.0 + 0.05 * x));
                pts.push((x, y));
            }
        }
        let bins = LagBins::default_for(20.0, &pts).unwrap();
        let v = trace_variogram(&profiles, &pts, sm.quadrature(), &bins).unwrap();
        let filled: Vec<f64> = v.semivariance.iter().filter_map(|g| *g).collect();
        assert!(filled.len() >= 3);
        let mut rises = 0;
        for w in filled.windows(2) {
            if w[1] > w[0] {
                rises += 1;
            }
        }
        assert!(rises as f64 >= 0.7 * (filled.len() - 1) as f64);
        assert!(*filled.last().unwrap() > filled[0]);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let sm = smoother();
        let mut other_cfg = SmoothConfig::default();
        other_cfg.quadrature_points = 251;
        let sm2 = ProfileSmoother::new(other_cfg).unwrap();
        let a = constant_profile(&sm, 2.0);
        let b = constant_profile(&sm2, 2.0);
        let err = profile_l2_distance(&a, &b, sm.quadrature()).unwrap_err();
        assert_eq!(err.kind(), "BasisMismatch");
    }

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn semivariances_nonnegative_and_pairs_complete(seed in 0u64..10_000, n in 3usize..10) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let sm = smoother();
            let coords: Vec<(f64, f64)> =
                (0..n).map(|_| (40.0 * rng.gen::<f64>(), 40.0 * rng.gen::<f64>())).collect();
            let profiles: Vec<SmoothedProfile> =
                (0..n).map(|_| constant_profile(&sm, 1.0 + 3.0 * rng.gen::<f64>())).collect();
            // bins wide enough to hold every pair
            let bins = LagBins::uniform(10.0, 80.0).unwrap();
            let vg = trace_variogram(&profiles, &coords, sm.quadrature(), &bins).unwrap();
            let mut pairs = 0usize;
            for (sv, &count) in vg.semivariance.iter().zip(&vg.pair_counts) {
                pairs += count;
                match sv {
                    Some(v) => prop_assert!(*v >= 0.0 && count > 0),
                    None => prop_assert!(count == 0),
                }
            }
            prop_assert_eq!(pairs, n * (n - 1) / 2);
        }
    }
}
