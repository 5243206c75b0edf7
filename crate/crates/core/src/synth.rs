//! Synthetic spatially clustered datasets with known truth, plus the
//! adjusted Rand index used to score recovery.
//!
//! Everything is driven by one u64 seed through a counter-based ChaCha20
//! generator: labels, coefficients, and abundances each consume their own
//! stream, so simulating one block never perturbs another.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::census::AbundanceGrid;
use crate::grid::GridSpec;
use crate::mixture::mixing_proportions;
use crate::spatial::{build_basis, SiteSet, SpatialError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("label vectors of length {0} and {1} cannot be compared")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

impl SynthError {
    pub fn kind(&self) -> &'static str {
        match self {
            SynthError::BadScenario(_) => "BadScenario",
            SynthError::LengthMismatch(_, _) => "LengthMismatch",
            SynthError::Spatial(_) => "Spatial",
        }
    }
}

/// How true cluster labels are laid out over the grid.
#[derive(Debug, Clone)]
pub enum LabelField {
    /// Deterministic vertical bands: band `c` covers x-indices in
    /// `[c*nx/k, (c+1)*nx/k)`.
    Blocks { k: usize },
    /// Labels drawn from softmax priors on the bending-energy basis;
    /// `omega` is `(K-1) x L` with the last class as baseline.
    Softmax { omega: DMatrix<f64> },
}

impl LabelField {
    pub fn k(&self) -> usize {
        match self {
            LabelField::Blocks { k } => *k,
            LabelField::Softmax { omega } => omega.nrows() + 1,
        }
    }
}

/// Relative species frequencies shared by every cell of one cluster.
#[derive(Debug, Clone)]
pub struct SpeciesPool {
    pub proportions: Vec<f64>,
}

impl SpeciesPool {
    pub fn uniform(s: usize) -> Self {
        SpeciesPool { proportions: vec![1.0 / s as f64; s] }
    }
}

/// Complete generator state for one synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub grid: GridSpec,
    pub labels: LabelField,
    /// Per-cluster coefficient means, all of the same length p.
    pub means: Vec<DVector<f64>>,
    /// Per-cluster coefficient covariances, positive definite.
    pub covariances: Vec<DMatrix<f64>>,
    pub stems_per_cell: u64,
    pub seed: u64,
}

// stream ids on the shared seed
const STREAM_LABELS: u64 = 0;
const STREAM_COEFFICIENTS: u64 = 1;
const STREAM_ABUNDANCES: u64 = 2;

impl SyntheticScenario {
    pub fn k(&self) -> usize {
        self.labels.k()
    }

    pub fn p(&self) -> usize {
        if self.means.is_empty() { 0 } else { self.means[0].len() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let k = self.k();
        if k == 0 {
            return Err(SynthError::BadScenario("zero clusters".into()));
        }
        if self.means.len() != k || self.covariances.len() != k {
            return Err(SynthError::BadScenario(format!(
                "{} clusters but {} means and {} covariances",
                k,
                self.means.len(),
                self.covariances.len()
            )));
        }
        let p = self.p();
        if p == 0 {
            return Err(SynthError::BadScenario("empty coefficient space".into()));
        }
        for (i, m) in self.means.iter().enumerate() {
            if m.len() != p {
                return Err(SynthError::BadScenario(format!("mean {i} has wrong length")));
            }
        }
        for (i, c) in self.covariances.iter().enumerate() {
            if c.nrows() != p || c.ncols() != p {
                return Err(SynthError::BadScenario(format!("covariance {i} has wrong shape")));
            }
            if c.clone().cholesky().is_none() {
                return Err(SynthError::BadScenario(format!(
                    "covariance {i} is not positive definite"
                )));
            }
        }
        if self.stems_per_cell == 0 {
            return Err(SynthError::BadScenario("stems_per_cell must be positive".into()));
        }
        if let LabelField::Blocks { k } = self.labels {
            if k > self.grid.nx {
                return Err(SynthError::BadScenario(format!(
                    "{} bands do not fit {} columns",
                    k, self.grid.nx
                )));
            }
        }
        Ok(())
    }

    fn stream(&self, id: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

/// A desk-scale default: 10 x 14 cells of size 25, three vertical bands,
/// well-separated means in a 3-dimensional coefficient space.
pub fn default_scenario(seed: u64) -> SyntheticScenario {
    let grid = GridSpec::new(0.0, 0.0, 25.0, 10, 14).unwrap();
    let p = 3;
    let sep = 6.0;
    let means = vec![
        DVector::from_vec(vec![0.0; p]),
        DVector::from_vec(vec![sep; p]),
        DVector::from_vec(vec![-sep, sep, -sep]),
    ];
    let covariances = vec![DMatrix::identity(p, p); 3];
    SyntheticScenario {
        grid,
        labels: LabelField::Blocks { k: 3 },
        means,
        covariances,
        stems_per_cell: 400,
        seed,
    }
}

/// True labels and the prior rows they were sampled from, in cell-id order.
pub fn simulate_labels(
    scenario: &SyntheticScenario,
) -> Result<(Vec<usize>, Vec<Vec<f64>>), SynthError> {
    scenario.validate()?;
    let n = scenario.grid.n_cells();
    let k = scenario.k();
    match &scenario.labels {
        LabelField::Blocks { k } => {
            let mut labels = Vec::with_capacity(n);
            let mut priors = Vec::with_capacity(n);
            for cell in 0..n {
                let (xi, _) = scenario.grid.cell_indices(cell);
                let band = (xi * k / scenario.grid.nx).min(k - 1);
                labels.push(band);
                let mut row = vec![0.0; *k];
                row[band] = 1.0;
                priors.push(row);
            }
            Ok((labels, priors))
        }
        LabelField::Softmax { omega } => {
            let sites = SiteSet::new(scenario.grid.centroids())?;
            let basis = build_basis(&sites, omega.ncols())?;
            let mut rng = scenario.stream(STREAM_LABELS);
            let mut labels = Vec::with_capacity(n);
            let mut priors = Vec::with_capacity(n);
            for cell in 0..n {
                let psi_row: Vec<f64> = basis.psi.row(cell).iter().cloned().collect();
                let pi = mixing_proportions(omega, &psi_row);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut z = k - 1;
                for c in 0..k {
                    acc += pi[c];
                    if u < acc {
                        z = c;
                        break;
                    }
                }
                labels.push(z);
                priors.push(pi.iter().cloned().collect());
            }
            Ok((labels, priors))
        }
    }
}

/// Gaussian coefficient draws, one row per cell.
///
/// Each cell consumes exactly p standard normals whatever its label, so
/// coefficient draws are invariant to relabeling elsewhere in the grid.
pub fn simulate_coefficients(
    labels: &[usize],
    scenario: &SyntheticScenario,
) -> Result<DMatrix<f64>, SynthError> {
    scenario.validate()?;
    let n = scenario.grid.n_cells();
    if labels.len() != n {
        return Err(SynthError::LengthMismatch(labels.len(), n));
    }
    let p = scenario.p();
    let chols: Vec<DMatrix<f64>> = scenario
        .covariances
        .iter()
        .map(|c| c.clone().cholesky().unwrap().l())
        .collect();
    let mut rng = scenario.stream(STREAM_COEFFICIENTS);
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let beta = &scenario.means[labels[i]] + &chols[labels[i]] * z;
        for j in 0..p {
            out[(i, j)] = beta[j];
        }
    }
    Ok(out)
}

/// Multinomial species counts per cell from each cluster's species pool.
pub fn simulate_abundances(
    labels: &[usize],
    species_pools: &[SpeciesPool],
    scenario: &SyntheticScenario,
) -> Result<AbundanceGrid, SynthError> {
    scenario.validate()?;
    let n = scenario.grid.n_cells();
    if labels.len() != n {
        return Err(SynthError::LengthMismatch(labels.len(), n));
    }
    if species_pools.len() != scenario.k() {
        return Err(SynthError::BadScenario(format!(
            "{} pools for {} clusters",
            species_pools.len(),
            scenario.k()
        )));
    }
    let mut n_species = 0;
    for (i, pool) in species_pools.iter().enumerate() {
        let total: f64 = pool.proportions.iter().sum();
        if pool.proportions.is_empty()
            || pool.proportions.iter().any(|&x| x < 0.0)
            || (total - 1.0).abs() > 1e-9
        {
            return Err(SynthError::BadScenario(format!("pool {i} is not a distribution")));
        }
        n_species = n_species.max(pool.proportions.len());
    }
    let names: Vec<String> = (0..n_species).map(|s| format!("sp{s:02}")).collect();
    let mut rng = scenario.stream(STREAM_ABUNDANCES);
    let mut grid = AbundanceGrid::new(scenario.grid.clone());
    for cell in 0..n {
        let pool = &species_pools[labels[cell]];
        let mut counts = vec![0u64; pool.proportions.len()];
        for _ in 0..scenario.stems_per_cell {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = pool.proportions.len() - 1;
            for (s, &w) in pool.proportions.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = s;
                    break;
                }
            }
            counts[pick] += 1;
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                grid.add(cell, &names[s], c);
            }
        }
    }
    Ok(grid)
}

/// Adjusted Rand index between two labelings, by pair counting.
///
/// 1 for identical partitions up to renaming, about 0 for independent
/// ones; the degenerate case where the correction denominator vanishes
/// (both partitions trivial) scores 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, SynthError> {
    if a.len() != b.len() {
        return Err(SynthError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let ka = a.iter().max().map_or(0, |&m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for i in 0..n {
        table[a[i]][b[i]] += 1;
    }
    let choose2 = |x: u64| -> f64 { (x as f64) * (x as f64 - 1.0) / 2.0 };
    let mut sum_cells = 0.0;
    let mut row_tot = vec![0u64; ka];
    let mut col_tot = vec![0u64; kb];
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            sum_cells += choose2(c);
            row_tot[i] += c;
            col_tot[j] += c;
        }
    }
    let sum_rows: f64 = row_tot.iter().map(|&x| choose2(x)).sum();
    let sum_cols: f64 = col_tot.iter().map(|&x| choose2(x)).sum();
    let total = choose2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::{hill_number, relative_abundance};
    use approx::assert_relative_eq;

    fn softmax_scenario(seed: u64) -> SyntheticScenario {
        let mut sc = default_scenario(seed);
        // zero log-odds: uniform priors everywhere
        sc.labels = LabelField::Softmax { omega: DMatrix::zeros(2, 6) };
        sc
    }

    #[test]
    fn zero_omega_gives_near_uniform_label_frequencies() {
        let sc = softmax_scenario(11);
        let (labels, priors) = simulate_labels(&sc).unwrap();
        let n = labels.len() as f64;
        for c in 0..3 {
            let freq = labels.iter().filter(|&&z| z == c).count() as f64 / n;
            let p = 1.0 / 3.0;
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!((freq - p).abs() < 3.0 * sigma, "class {c}: freq {freq}");
        }
        for row in priors {
            for v in row {
                assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn block_layout_reproduces_the_bands_exactly() {
        let sc = default_scenario(0);
        let (labels, priors) = simulate_labels(&sc).unwrap();
        for cell in 0..sc.grid.n_cells() {
            let (xi, _) = sc.grid.cell_indices(cell);
            let expect = (xi * 3 / sc.grid.nx).min(2);
            assert_eq!(labels[cell], expect);
            assert_eq!(priors[cell][expect], 1.0);
        }
        // integer banding splits 10 columns as 4/3/3
        let counts: Vec<usize> =
            (0..3).map(|c| labels.iter().filter(|&&z| z == c).count()).collect();
        assert_eq!(counts, vec![4 * 14, 3 * 14, 3 * 14]);
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let sc = softmax_scenario(40);
        let (la, _) = simulate_labels(&sc).unwrap();
        let (lb, _) = simulate_labels(&sc).unwrap();
        assert_eq!(la, lb);
        let ca = simulate_coefficients(&la, &sc).unwrap();
        let cb = simulate_coefficients(&lb, &sc).unwrap();
        assert_eq!(ca, cb);
        let pools = vec![SpeciesPool::uniform(4); 3];
        let ga = simulate_abundances(&la, &pools, &sc).unwrap();
        let gb = simulate_abundances(&lb, &pools, &sc).unwrap();
        for cell in ga.occupied_cells() {
            assert_eq!(ga.cell_counts(cell), gb.cell_counts(cell));
        }
        let other = softmax_scenario(41);
        let (lc, _) = simulate_labels(&other).unwrap();
        assert_ne!(la, lc);
    }

    #[test]
    fn tiny_variance_pins_coefficients_to_the_means() {
        let mut sc = default_scenario(7);
        sc.covariances = vec![DMatrix::identity(3, 3) * 1e-10; 3];
        let (labels, _) = simulate_labels(&sc).unwrap();
        let betas = simulate_coefficients(&labels, &sc).unwrap();
        for i in 0..labels.len() {
            for j in 0..3 {
                assert!((betas[(i, j)] - sc.means[labels[i]][j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn cluster_sample_means_obey_the_clt_bound() {
        let mut sc = default_scenario(19);
        // one band per cluster on a taller grid for more cells per cluster
        sc.grid = GridSpec::new(0.0, 0.0, 25.0, 12, 30).unwrap();
        let (labels, _) = simulate_labels(&sc).unwrap();
        let betas = simulate_coefficients(&labels, &sc).unwrap();
        for c in 0..3 {
            let members: Vec<usize> =
                (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let m = members.len() as f64;
            for j in 0..3 {
                let mean: f64 = members.iter().map(|&i| betas[(i, j)]).sum::<f64>() / m;
                // unit variance in every coordinate
                assert!(
                    (mean - sc.means[c][j]).abs() < 4.0 / m.sqrt(),
                    "cluster {c} coord {j}: {mean} vs {}",
                    sc.means[c][j]
                );
            }
        }
    }

    #[test]
    fn coefficient_draws_do_not_depend_on_other_cells_labels() {
        let sc = default_scenario(3);
        let (labels, _) = simulate_labels(&sc).unwrap();
        let mut flipped = labels.clone();
        let last = flipped.len() - 1;
        flipped[last] = (labels[last] + 1) % 3;
        let a = simulate_coefficients(&labels, &sc).unwrap();
        let b = simulate_coefficients(&flipped, &sc).unwrap();
        for i in 0..last {
            for j in 0..3 {
                assert_eq!(a[(i, j)], b[(i, j)]);
            }
        }
        assert_ne!(a.row(last), b.row(last));
    }

    #[test]
    fn single_species_pool_gives_constant_unit_profiles() {
        let mut sc = default_scenario(5);
        sc.labels = LabelField::Blocks { k: 1 };
        sc.means = vec![sc.means[0].clone()];
        sc.covariances = vec![sc.covariances[0].clone()];
        let (labels, _) = simulate_labels(&sc).unwrap();
        let pools = vec![SpeciesPool { proportions: vec![1.0] }];
        let grid = simulate_abundances(&labels, &pools, &sc).unwrap();
        assert_eq!(grid.occupied_cells().len(), sc.grid.n_cells());
        for (_, counts) in grid.iter() {
            assert_eq!(counts.len(), 1);
            let raw: Vec<u64> = counts.values().cloned().collect();
            let p = relative_abundance(&raw).unwrap();
            for q in [0.0, 1.0, 2.5, 5.0] {
                assert_relative_eq!(hill_number(&p, q).unwrap(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn uniform_pool_profiles_concentrate_near_flat_five() {
        let mut sc = default_scenario(23);
        sc.labels = LabelField::Blocks { k: 1 };
        sc.means = vec![sc.means[0].clone()];
        sc.covariances = vec![sc.covariances[0].clone()];
        sc.stems_per_cell = 20_000;
        let (labels, _) = simulate_labels(&sc).unwrap();
        let pools = vec![SpeciesPool::uniform(5)];
        let grid = simulate_abundances(&labels, &pools, &sc).unwrap();
        for (_, counts) in grid.iter() {
            let raw: Vec<u64> = counts.values().cloned().collect();
            let p = relative_abundance(&raw).unwrap();
            assert_eq!(hill_number(&p, 0.0).unwrap(), 5.0);
            for q in [1.0, 2.0, 5.0] {
                let h = hill_number(&p, q).unwrap();
                assert!((h - 5.0).abs() < 0.05, "q={q}: {h}");
            }
        }
    }

    #[test]
    fn dominant_pool_shows_a_steep_profile_drop() {
        let mut sc = default_scenario(29);
        sc.labels = LabelField::Blocks { k: 1 };
        sc.means = vec![sc.means[0].clone()];
        sc.covariances = vec![sc.covariances[0].clone()];
        let (labels, _) = simulate_labels(&sc).unwrap();
        let mut props = vec![0.9];
        props.extend(vec![0.1 / 9.0; 9]);
        let pools = vec![SpeciesPool { proportions: props }];
        let grid = simulate_abundances(&labels, &pools, &sc).unwrap();
        for (_, counts) in grid.iter() {
            let raw: Vec<u64> = counts.values().cloned().collect();
            let p = relative_abundance(&raw).unwrap();
            let drop = hill_number(&p, 0.0).unwrap() - hill_number(&p, 1.0).unwrap();
            assert!(drop > 3.0, "drop = {drop}");
        }
    }

    #[test]
    fn ari_identical_and_permuted_labelings_score_one() {
        let a = vec![0, 0, 1, 1, 2, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let renamed: Vec<usize> = a.iter().map(|&z| (z + 1) % 3).collect();
        assert_eq!(adjusted_rand_index(&a, &renamed).unwrap(), 1.0);
    }

    #[test]
    fn ari_of_random_labelings_is_near_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(100);
        let n = 4000;
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let ari = adjusted_rand_index(&a, &b).unwrap();
        assert!(ari.abs() < 0.02, "ARI = {ari}");
    }

    #[test]
    fn ari_matches_a_brute_force_pair_count() {
        let mut rng = ChaCha20Rng::seed_from_u64(55);
        for _ in 0..20 {
            let n = rng.gen_range(5..=50);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let fast = adjusted_rand_index(&a, &b).unwrap();
            // count agreeing pairs directly
            let mut n11 = 0.0f64;
            let mut n00 = 0.0f64;
            let mut n10 = 0.0f64;
            let mut n01 = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    let same_a = a[i] == a[j];
                    let same_b = b[i] == b[j];
                    match (same_a, same_b) {
                        (true, true) => n11 += 1.0,
                        (false, false) => n00 += 1.0,
                        (true, false) => n10 += 1.0,
                        (false, true) => n01 += 1.0,
                    }
                }
            }
            let total = n11 + n00 + n10 + n01;
            let sum_rows = n11 + n10;
            let sum_cols = n11 + n01;
            let expected = sum_rows * sum_cols / total;
            let denom = 0.5 * (sum_rows + sum_cols) - expected;
            let slow = if denom.abs() < 1e-12 { 1.0 } else { (n11 - expected) / denom };
            assert_relative_eq!(fast, slow, epsilon = 1e-10);
        }
    }

    #[test]
    fn degenerate_partitions_score_one_and_lengths_must_match() {
        let ones = vec![0usize; 8];
        assert_eq!(adjusted_rand_index(&ones, &ones).unwrap(), 1.0);
        let err = adjusted_rand_index(&[0, 1], &[0, 1, 2]).unwrap_err();
        assert_eq!(err.kind(), "LengthMismatch");
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut sc = default_scenario(1);
        sc.means.pop();
        assert_eq!(sc.validate().unwrap_err().kind(), "BadScenario");
        let mut sc = default_scenario(1);
        sc.covariances[1][(0, 1)] = 100.0;
        sc.covariances[1][(1, 0)] = 100.0;
        assert_eq!(sc.validate().unwrap_err().kind(), "BadScenario");
        let mut sc = default_scenario(1);
        sc.stems_per_cell = 0;
        assert_eq!(sc.validate().unwrap_err().kind(), "BadScenario");
        let sc = default_scenario(1);
        let short = vec![0usize; 5];
        assert_eq!(
            simulate_coefficients(&short, &sc).unwrap_err().kind(),
            "LengthMismatch"
        );
        let (labels, _) = simulate_labels(&sc).unwrap();
        let pools = vec![SpeciesPool { proportions: vec![0.5, 0.4] }];
        assert_eq!(
            simulate_abundances(&labels, &pools, &sc).unwrap_err().kind(),
            "BadScenario"
        );
    }

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rand_index_identity_permutation_symmetry(
            seed in 0u64..10_000,
            n in 4usize..40,
            k in 2usize..5,
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            labels.shuffle(&mut rng);
            prop_assert!((adjusted_rand_index(&labels, &labels).unwrap() - 1.0).abs() < 1e-12);
            // relabeling is invisible to the index
            let rotated: Vec<usize> = labels.iter().map(|&c| (c + 1) % k).collect();
            prop_assert!((adjusted_rand_index(&labels, &rotated).unwrap() - 1.0).abs() < 1e-12);
            let other: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let ab = adjusted_rand_index(&labels, &other).unwrap();
            let ba = adjusted_rand_index(&other, &labels).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= 1.0 + 1e-12);
        }

        #[test]
        fn simulated_labels_respect_the_cluster_count(seed in 0u64..10_000) {
            let scenario = default_scenario(seed);
            let (labels, priors) = simulate_labels(&scenario).unwrap();
            prop_assert_eq!(labels.len(), scenario.grid.n_cells());
            prop_assert!(labels.iter().all(|&c| c < scenario.k()));
            for (cell, row) in priors.iter().enumerate() {
                prop_assert_eq!(row.len(), scenario.k());
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9, "cell {cell} prior sums to {total}");
            }
        }
    }
}
