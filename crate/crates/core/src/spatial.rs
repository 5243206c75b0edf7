//! Smoothness-ordered spatial basis from the thin-plate bending energy.
//!
//! For sites v_1..v_N the kernel matrix V holds V(h) = h^2 log(h) / (8 pi)
//! and U is the N x 3 affine design (1, x, y). The bending-energy matrix
//!
//!   B = V^-1 - V^-1 U (U' V^-1 U)^-1 U' V^-1
//!
//! annihilates U, so its three smallest eigenvalues vanish and the remaining
//! eigenvectors, taken in ascending eigenvalue order, form a basis graded
//! from large-scale to fine-scale spatial variation. Mixing-proportion
//! log-odds are expanded in the leading L columns.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("sites {0} and {1} coincide")]
    DuplicateSites(usize, usize),
    #[error("need at least four sites, got {0}")]
    TooFewSites(usize),
    #[error("affine design is rank deficient (collinear sites)")]
    DegenerateDesign,
    #[error("kernel matrix stayed singular through jitter escalation")]
    SingularV,
    #[error("eigendecomposition did not converge")]
    EigenFailure,
    #[error("basis truncation {0} outside 3..={1}")]
    BadTruncation(usize, usize),
}

impl SpatialError {
    pub fn kind(&self) -> &'static str {
        match self {
            SpatialError::DuplicateSites(_, _) => "DuplicateSites",
            SpatialError::TooFewSites(_) => "TooFewSites",
            SpatialError::DegenerateDesign => "DegenerateDesign",
            SpatialError::SingularV => "SingularV",
            SpatialError::EigenFailure => "EigenFailure",
            SpatialError::BadTruncation(_, _) => "BadTruncation",
        }
    }
}

/// Validated site collection with its affine design matrix.
#[derive(Debug, Clone)]
pub struct SiteSet {
    coords: Vec<(f64, f64)>,
    design: DMatrix<f64>,
}

impl SiteSet {
    pub fn new(coords: Vec<(f64, f64)>) -> Result<Self, SpatialError> {
        let n = coords.len();
        if n < 4 {
            return Err(SpatialError::TooFewSites(n));
        }
        for i in 0..n {
            for r in (i + 1)..n {
                let dx = coords[i].0 - coords[r].0;
                let dy = coords[i].1 - coords[r].1;
                if (dx * dx + dy * dy).sqrt() < 1e-9 {
                    return Err(SpatialError::DuplicateSites(i, r));
                }
            }
        }
        let mut design = DMatrix::zeros(n, 3);
        for (i, &(x, y)) in coords.iter().enumerate() {
            design[(i, 0)] = 1.0;
            design[(i, 1)] = x;
            design[(i, 2)] = y;
        }
        // full column rank iff the sites are not collinear
        let qr = design.clone().qr();
        let r = qr.r();
        let scale = design.norm();
        for j in 0..3 {
            if r[(j, j)].abs() < 1e-12 * scale.max(1.0) {
                return Err(SpatialError::DegenerateDesign);
            }
        }
        Ok(SiteSet { coords, design })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }
}

/// Thin-plate kernel, continuous at the origin.
pub fn tps_kernel(h: f64) -> f64 {
    if h <= 0.0 {
        0.0
    } else {
        h * h * h.ln() / (8.0 * std::f64::consts::PI)
    }
}

/// Kernel matrix over all site pairs.
pub fn tps_variogram_matrix(sites: &SiteSet) -> DMatrix<f64> {
    let n = sites.len();
    let c = sites.coords();
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for r in (i + 1)..n {
            let dx = c[i].0 - c[r].0;
            let dy = c[i].1 - c[r].1;
            let val = tps_kernel((dx * dx + dy * dy).sqrt());
            v[(i, r)] = val;
            v[(r, i)] = val;
        }
    }
    v
}

/// `B = V^-1 - V^-1 U (U' V^-1 U)^-1 U' V^-1`, symmetrized.
///
/// The kernel matrix is near-singular on regular lattices, so the inverse is
/// taken with a ridge escalating from 1e-10 to 1e-6 until it succeeds.
pub fn bending_energy(v: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>, SpatialError> {
    let n = v.nrows();
    let mut v_inv = None;
    let mut eps = 1e-10;
    while eps <= 1.0000001e-6 {
        let mut jittered = v.clone();
        for i in 0..n {
            jittered[(i, i)] += eps;
        }
        if let Some(inv) = jittered.try_inverse() {
            if inv.iter().all(|x| x.is_finite()) {
                v_inv = Some(inv);
                break;
            }
        }
        eps *= 10.0;
    }
    let v_inv = v_inv.ok_or(SpatialError::SingularV)?;
    let vu = &v_inv * u;
    let core = u.transpose() * &vu;
    let core_inv = core.try_inverse().ok_or(SpatialError::SingularV)?;
    let b = &v_inv - &vu * core_inv * vu.transpose();
    Ok((&b + b.transpose()) * 0.5)
}

/// Leading columns of the bending-energy eigenbasis.
#[derive(Debug, Clone)]
pub struct SpatialBasis {
    /// `N x L`, orthonormal columns, smoothest first.
    pub psi: DMatrix<f64>,
    /// All N eigenvalues, ascending magnitude. The first three are null.
    pub eigenvalues: Vec<f64>,
    pub l: usize,
    pub explained_fraction: f64,
}

/// Flips a column so its largest-magnitude entry is positive.
fn canonical_sign(col: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        *col = -&*col;
    }
}

/// Eigendecomposes B, pins the three null directions to an orthonormalized
/// copy of the affine design, and returns the first `l` columns.
pub fn kl_basis(
    b: &DMatrix<f64>,
    u: &DMatrix<f64>,
    l: usize,
) -> Result<SpatialBasis, SpatialError> {
    let n = b.nrows();
    if l < 3 || l > n {
        return Err(SpatialError::BadTruncation(l, n));
    }
    let sym = (b + b.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[a]
            .abs()
            .partial_cmp(&eig.eigenvalues[c].abs())
            .unwrap()
            .then(a.cmp(&c))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut psi = DMatrix::zeros(n, l);
    // exact affine null space instead of the numerically fuzzy eigenvectors
    let qr = u.clone().qr();
    let q = qr.q();
    for j in 0..3 {
        let mut col = DVector::from(q.column(j).clone_owned());
        canonical_sign(&mut col);
        psi.set_column(j, &col);
    }
    for j in 3..l {
        let mut col = DVector::from(eig.eigenvectors.column(order[j]).clone_owned());
        // one Gram-Schmidt sweep against everything already placed
        for k in 0..j {
            let proj = psi.column(k).dot(&col);
            col -= psi.column(k) * proj;
        }
        let norm = col.norm();
        if !(norm > 1e-10) {
            return Err(SpatialError::EigenFailure);
        }
        col /= norm;
        canonical_sign(&mut col);
        psi.set_column(j, &col);
    }
    let explained_fraction = explained_variability(&eigenvalues, l);
    Ok(SpatialBasis { psi, eigenvalues, l, explained_fraction })
}

/// Share of prior spatial variance carried by the first `l` components.
///
/// The thin-plate prior puts variance proportional to 1/g on each non-null
/// direction; the three null directions are trend terms, always included
/// and never counted.
pub fn explained_variability(g: &[f64], l: usize) -> f64 {
    let n = g.len();
    if l <= 3 {
        return 0.0;
    }
    let l = l.min(n);
    let total: f64 = g[3..].iter().map(|x| 1.0 / x.abs()).sum();
    if total == 0.0 {
        return 1.0;
    }
    let lead: f64 = g[3..l].iter().map(|x| 1.0 / x.abs()).sum();
    lead / total
}

/// Convenience: kernel, bending energy and truncation in one call.
pub fn build_basis(sites: &SiteSet, l: usize) -> Result<SpatialBasis, SpatialError> {
    let v = tps_variogram_matrix(sites);
    let b = bending_energy(&v, sites.design())?;
    kl_basis(&b, sites.design(), l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_sites(nx: usize, ny: usize, s: f64) -> SiteSet {
        let mut coords = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                coords.push((s * (ix as f64 + 0.5), s * (iy as f64 + 0.5)));
            }
        }
        SiteSet::new(coords).unwrap()
    }

    #[test]
    fn kernel_matches_hand_values() {
        assert_eq!(tps_kernel(0.0), 0.0);
        assert_eq!(tps_kernel(1.0), 0.0);
        assert!((tps_kernel(2.0) - 0.1103178000763258).abs() < 1e-15);
        let sites =
            SiteSet::new(vec![(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (2.0, 2.0)]).unwrap();
        let v = tps_variogram_matrix(&sites);
        assert_eq!(v[(0, 0)], 0.0);
        assert!((v[(0, 1)] - 0.1103178000763258).abs() < 1e-15);
        assert_eq!(v[(0, 1)], v[(1, 0)]);
    }

    #[test]
    fn duplicate_and_collinear_sites_are_rejected() {
        let err = SiteSet::new(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.0)])
            .unwrap_err();
        assert_eq!(err.kind(), "DuplicateSites");
        let err = SiteSet::new(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])
            .unwrap_err();
        assert_eq!(err.kind(), "DegenerateDesign");
    }

    #[test]
    fn unit_square_bending_energy_has_rank_one() {
        let sites =
            SiteSet::new(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]).unwrap();
        let v = tps_variogram_matrix(&sites);
        let b = bending_energy(&v, sites.design()).unwrap();
        assert!((&b - b.transpose()).norm() < 1e-9 * b.norm().max(1.0));
        let eig = b.clone().symmetric_eigen();
        let mut mags: Vec<f64> = eig.eigenvalues.iter().map(|x| x.abs()).collect();
        mags.sort_by(|a, c| a.partial_cmp(c).unwrap());
        let scale = mags[3].max(1.0);
        assert!(mags[0] < 1e-8 * scale && mags[1] < 1e-8 * scale && mags[2] < 1e-8 * scale);
        assert!(mags[3] > 1e-6);
    }

    #[test]
    fn bending_energy_annihilates_the_affine_design() {
        let sites = grid_sites(6, 5, 20.0);
        let v = tps_variogram_matrix(&sites);
        let b = bending_energy(&v, sites.design()).unwrap();
        let bu = &b * sites.design();
        let b_max = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let bu_max = bu.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(bu_max < 1e-8 * b_max, "|BU| = {bu_max}, |B| = {b_max}");
    }

    #[test]
    fn basis_columns_are_orthonormal() {
        let sites = grid_sites(6, 5, 20.0);
        let basis = build_basis(&sites, 16).unwrap();
        let gram = basis.psi.transpose() * &basis.psi;
        for i in 0..16 {
            for j in 0..16 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - want).abs() < 1e-8, "gram[{i},{j}] = {}", gram[(i, j)]);
            }
        }
    }

    #[test]
    fn full_basis_reconstructs_the_matrix() {
        let sites = grid_sites(5, 4, 20.0);
        let v = tps_variogram_matrix(&sites);
        let b = bending_energy(&v, sites.design()).unwrap();
        let n = sites.len();
        let basis = kl_basis(&b, sites.design(), n).unwrap();
        let g = DMatrix::from_diagonal(&DVector::from_vec(basis.eigenvalues.clone()));
        let rebuilt = &basis.psi * g * basis.psi.transpose();
        let err = (&rebuilt - &b).norm() / b.norm();
        assert!(err < 1e-6, "relative reconstruction error {err}");
    }

    #[test]
    fn first_three_eigenvalues_are_null() {
        let sites = grid_sites(10, 14, 20.0);
        let basis = build_basis(&sites, 16).unwrap();
        let scale = basis.eigenvalues[3].abs().max(1.0);
        let nulls = basis.eigenvalues.iter().filter(|x| x.abs() < 1e-8 * scale).count();
        assert_eq!(nulls, 3);
    }

    #[test]
    fn leading_columns_are_constant_and_linear_trends() {
        let sites = grid_sites(10, 14, 20.0);
        let basis = build_basis(&sites, 16).unwrap();
        let n = sites.len() as f64;
        for i in 0..sites.len() {
            assert!((basis.psi[(i, 0)] - 1.0 / n.sqrt()).abs() < 1e-10);
        }
        // columns 2 and 3 regress perfectly on (1, x, y)
        let u = sites.design();
        let gram = u.transpose() * u;
        let gram_inv = gram.try_inverse().unwrap();
        for j in 1..3 {
            let col = DVector::from(basis.psi.column(j).clone_owned());
            let coef = &gram_inv * (u.transpose() * &col);
            let resid = &col - u * coef;
            let r2 = 1.0 - resid.norm_squared() / col.norm_squared();
            assert!(r2 > 1.0 - 1e-8, "column {j} R^2 = {r2}");
        }
    }

    #[test]
    fn roughness_grows_with_column_index() {
        let sites = grid_sites(10, 14, 20.0);
        let basis = build_basis(&sites, 16).unwrap();
        // lag-1 roughness: squared differences over horizontally and
        // vertically adjacent cells
        let idx = |ix: usize, iy: usize| iy * 10 + ix;
        let mut rough = vec![0.0; 16];
        for l in 0..16 {
            let mut acc = 0.0;
            for iy in 0..14 {
                for ix in 0..10 {
                    if ix + 1 < 10 {
                        let d = basis.psi[(idx(ix, iy), l)] - basis.psi[(idx(ix + 1, iy), l)];
                        acc += d * d;
                    }
                    if iy + 1 < 14 {
                        let d = basis.psi[(idx(ix, iy), l)] - basis.psi[(idx(ix, iy + 1), l)];
                        acc += d * d;
                    }
                }
            }
            rough[l] = acc;
        }
        let mut concordant = 0usize;
        let mut total = 0usize;
        for i in 0..16 {
            for j in (i + 1)..16 {
                total += 1;
                if rough[j] >= rough[i] {
                    concordant += 1;
                }
            }
        }
        let frac = concordant as f64 / total as f64;
        assert!(frac > 0.8, "concordant ordering fraction {frac}");
        let head: f64 = rough[..4].iter().sum();
        let tail: f64 = rough[12..].iter().sum();
        assert!(tail > head);
    }

    #[test]
    fn explained_fraction_endpoints_and_monotonicity() {
        let sites = grid_sites(6, 5, 20.0);
        let basis = build_basis(&sites, 4).unwrap();
        let g = &basis.eigenvalues;
        assert_eq!(explained_variability(g, 3), 0.0);
        assert!((explained_variability(g, g.len()) - 1.0).abs() < 1e-12);
        let mut prev = 0.0;
        for l in 3..=g.len() {
            let e = explained_variability(g, l);
            assert!(e >= prev - 1e-12);
            prev = e;
        }
    }

    #[test]
    fn truncation_bounds_are_enforced() {
        let sites = grid_sites(3, 2, 10.0);
        let v = tps_variogram_matrix(&sites);
        let b = bending_energy(&v, sites.design()).unwrap();
        assert_eq!(kl_basis(&b, sites.design(), 2).unwrap_err().kind(), "BadTruncation");
        assert_eq!(kl_basis(&b, sites.design(), 7).unwrap_err().kind(), "BadTruncation");
    }

    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn basis_columns_stay_orthonormal(seed in 0u64..10_000, n in 12usize..28, l in 4usize..7) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let coords: Vec<(f64, f64)> =
                (0..n).map(|_| (50.0 * rng.gen::<f64>(), 50.0 * rng.gen::<f64>())).collect();
            let sites = SiteSet::new(coords).unwrap();
            let basis = build_basis(&sites, l).unwrap();
            let gram = basis.psi.transpose() * &basis.psi;
            for i in 0..l {
                for j in 0..l {
                    let target = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((gram[(i, j)] - target).abs() < 1e-8);
                }
            }
            for w in basis.eigenvalues.windows(2) {
                prop_assert!(w[0].abs() <= w[1].abs() + 1e-12);
            }
            prop_assert!(basis.explained_fraction > 0.0 && basis.explained_fraction <= 1.0 + 1e-12);
        }
    }
}
