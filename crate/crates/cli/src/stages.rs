//! One function per subcommand. Each stage reads only documented artifacts,
//! writes only its own outputs, and returns a JSON summary body; `main`
//! stamps elapsed time on it and persists it as `<stage>_summary.json`.

use std::fs::File;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use biodiv_core::artifacts::{self, fmt_g};
use biodiv_core::census::{
    bin_to_grid, count_kept_stems, filter_alive_trees, merge_censuses, parse_stem_records,
    ColumnMap,
};
use biodiv_core::diversity::{profile, relative_abundance, QGrid};
use biodiv_core::grid::{GridSpec, RegionMask};
use biodiv_core::mixture::{
    e_step, fit_em, hard_assignment, mixing_proportions, FitConfig, FittedModel,
};
use biodiv_core::selection::grid_search;
use biodiv_core::smoothing::{ProfileCoefficients, ProfileSmoother, SmoothConfig, SmoothedProfile};
use biodiv_core::spatial::{build_basis, SiteSet};
use biodiv_core::synth::{
    adjusted_rand_index, default_scenario, simulate_abundances, simulate_labels, SpeciesPool,
};
use biodiv_core::variogram::{trace_variogram, LagBins};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::cliargs::{
    BasisArgs, FitArgs, IngestArgs, ProfilesArgs, SelectArgs, SimulateArgs, SmoothArgs,
    VariogramArgs, ZoneArgs,
};
use crate::config::{read_grid_json, write_grid_json, RunConfig};
use crate::error::CliError;
use crate::svg;

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| {
        CliError::Input(format!("cannot create {}: {e}", path.display()))
    })
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| {
        CliError::Input(format!("cannot open {}: {e}", path.display()))
    })
}

fn write_svg(path: &Path, body: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------

pub fn ingest(config: &RunConfig, args: &IngestArgs) -> Result<Value, CliError> {
    let mut gc = config.grid.clone();
    if args.nx.is_some() {
        gc.nx = args.nx;
    }
    if args.ny.is_some() {
        gc.ny = args.ny;
    }
    if let Some(v) = args.cell_size {
        gc.cell_size = v;
    }
    if let Some(v) = args.origin_x {
        gc.origin_x = v;
    }
    if let Some(v) = args.origin_y {
        gc.origin_y = v;
    }
    let spec = gc.to_spec()?;
    let min_dbh = args.min_dbh.unwrap_or(config.min_dbh);

    let primary = parse_stem_records(open(&args.census)?, &ColumnMap::default())?;
    let mut n_issues = primary.issues.len();
    let merged = match &args.fallback {
        Some(path) => {
            let fallback = parse_stem_records(open(path)?, &ColumnMap::default())?;
            n_issues += fallback.issues.len();
            let mask = match &args.mask {
                Some(mpath) => RegionMask::from_cells(artifacts::read_mask_csv(open(mpath)?)?),
                None => RegionMask::full(&spec),
            };
            merge_censuses(&primary.records, &fallback.records, &spec, &mask)?
        }
        None => primary.records,
    };
    let kept_stems = count_kept_stems(&merged, min_dbh);
    let trees = filter_alive_trees(&merged, min_dbh);
    let grid = bin_to_grid(&trees, &spec)?;

    artifacts::write_abundance_csv(&grid, create(&config.out_path("abundance.csv"))?)?;
    write_grid_json(&config.out_path("grid.json"), &spec)?;

    let mut totals: Vec<(String, u64)> = grid.species_totals().into_iter().collect();
    totals.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<Value> = totals
        .iter()
        .take(5)
        .map(|(sp, n)| json!({ "species": sp, "count": n }))
        .collect();
    Ok(json!({
        "merged_records": merged.len(),
        "kept_stems": kept_stems,
        "n_trees": trees.len(),
        "n_species": grid.n_species(),
        "n_occupied_cells": grid.occupied_cells().len(),
        "min_dbh": min_dbh,
        "row_issues": n_issues,
        "top_species": top,
    }))
}

pub fn profiles(config: &RunConfig, args: &ProfilesArgs) -> Result<Value, CliError> {
    let spec = read_grid_json(&config.out_path("grid.json"))?;
    let path = config.in_path(&args.abundance, "abundance.csv");
    let grid = artifacts::read_abundance_csv(open(&path)?, spec)?;
    let qgrid = QGrid::uniform(config.q_max, config.q_points)?;

    let cells = grid.occupied_cells();
    let mut values = Vec::with_capacity(cells.len());
    let mut richness_min = f64::INFINITY;
    let mut richness_max = 0.0f64;
    for &cell in &cells {
        let counts: Vec<u64> = grid.cell_counts(cell).unwrap().values().copied().collect();
        let p = relative_abundance(&counts)?;
        let h = profile(&p, &qgrid)?;
        richness_min = richness_min.min(h[0]);
        richness_max = richness_max.max(h[0]);
        values.push(h);
    }
    artifacts::write_profile_points_csv(
        &cells,
        qgrid.points(),
        &values,
        create(&config.out_path("profile_points.csv"))?,
    )?;
    Ok(json!({
        "n_cells": cells.len(),
        "q_max": config.q_max,
        "q_points": config.q_points,
        "richness_min": richness_min,
        "richness_max": richness_max,
    }))
}

pub fn smooth(config: &RunConfig, args: &SmoothArgs) -> Result<Value, CliError> {
    let path = config.in_path(&args.points, "profile_points.csv");
    let (cells, qs, values) = artifacts::read_profile_points_csv(open(&path)?)?;
    let q_obs_max = qs.iter().cloned().fold(0.0f64, f64::max);
    if q_obs_max > config.q_max * (1.0 + 1e-12) {
        return Err(CliError::Input(format!(
            "profile points reach q = {q_obs_max} beyond the configured q_max = {}",
            config.q_max
        )));
    }
    let smoother = ProfileSmoother::new(SmoothConfig {
        j: config.j,
        degree: config.degree,
        q_max: config.q_max,
        lambda: config.smooth_lambda,
        quadrature_points: config.quadrature_points,
        ..SmoothConfig::default()
    })?;

    let fits: Vec<Result<SmoothedProfile, _>> =
        values.par_iter().map(|h| smoother.fit(&qs, h)).collect();
    let mut rows = Vec::with_capacity(cells.len());
    let mut fitted = Vec::with_capacity(cells.len());
    let mut n_converged = 0usize;
    let mut n_constant = 0usize;
    let mut max_rmse = 0.0f64;
    for (i, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        n_converged += fit.converged as usize;
        n_constant += fit.coefficients.constant as usize;
        max_rmse = max_rmse.max(fit.rmse);
        rows.push((cells[i], fit.coefficients.clone(), fit.rmse));
        fitted.push(fit.fitted);
    }
    artifacts::write_coefficients_csv(&rows, create(&config.out_path("coefficients.csv"))?)?;
    artifacts::write_profile_points_csv(
        &cells,
        &qs,
        &fitted,
        create(&config.out_path("fitted_curves.csv"))?,
    )?;
    Ok(json!({
        "n_cells": cells.len(),
        "n_converged": n_converged,
        "n_constant": n_constant,
        "j": config.j,
        "smooth_lambda": config.smooth_lambda,
        "max_rmse": max_rmse,
    }))
}

/// Rebuilds dense curves from stored coefficients; only `dense_fitted` is
/// consumed downstream, the remaining fields are placeholders.
fn curves_from_coefficients(
    rows: &[(usize, ProfileCoefficients, f64)],
    config: &RunConfig,
) -> Result<(Vec<usize>, Vec<SmoothedProfile>, ProfileSmoother), CliError> {
    let j = rows
        .first()
        .map(|(_, c, _)| c.alpha.len())
        .ok_or_else(|| CliError::Input("coefficients file is empty".into()))?;
    let smoother = ProfileSmoother::new(SmoothConfig {
        j,
        degree: config.degree,
        q_max: config.q_max,
        lambda: config.smooth_lambda,
        quadrature_points: config.quadrature_points,
        ..SmoothConfig::default()
    })?;
    let mut cells = Vec::with_capacity(rows.len());
    let mut profiles = Vec::with_capacity(rows.len());
    for (cell, coeffs, rmse) in rows {
        let dense = smoother.dense_values(coeffs)?;
        cells.push(*cell);
        profiles.push(SmoothedProfile {
            coefficients: coeffs.clone(),
            fitted: Vec::new(),
            dense_fitted: dense,
            rmse: *rmse,
            converged: true,
            iterations: 0,
            objective_trace: Vec::new(),
            min_curvature: 0.0,
        });
    }
    Ok((cells, profiles, smoother))
}

fn centroids_of(spec: &GridSpec, cells: &[usize]) -> Result<Vec<(f64, f64)>, CliError> {
    let all = spec.centroids();
    cells
        .iter()
        .map(|&c| {
            all.get(c).copied().ok_or_else(|| {
                CliError::Input(format!("cell {c} lies outside the {}x{} grid", spec.nx, spec.ny))
            })
        })
        .collect()
}

pub fn variogram(config: &RunConfig, args: &VariogramArgs) -> Result<Value, CliError> {
    let spec = read_grid_json(&config.out_path("grid.json"))?;
    let path = config.in_path(&args.coefficients, "coefficients.csv");
    let rows = artifacts::read_coefficients_csv(open(&path)?)?;
    let (cells, profiles, smoother) = curves_from_coefficients(&rows, config)?;
    let cents = centroids_of(&spec, &cells)?;
    let bins = match (args.bin_width, args.max_lag) {
        (Some(w), Some(m)) => LagBins::uniform(w, m)?,
        (None, None) => LagBins::default_for(spec.cell_size, &cents)?,
        _ => {
            return Err(CliError::Input(
                "--bin-width and --max-lag must be given together".into(),
            ))
        }
    };
    let vario = trace_variogram(&profiles, &cents, smoother.quadrature(), &bins)?;
    artifacts::write_variogram_csv(&vario, create(&config.out_path("variogram.csv"))?)?;
    if config.emit_svg {
        let points: Vec<(f64, f64)> = vario
            .lag_centers
            .iter()
            .zip(&vario.semivariance)
            .filter_map(|(&h, g)| g.map(|g| (h, g)))
            .collect();
        write_svg(
            &config.out_path("variogram.svg"),
            &svg::scatter(&points, "trace-variogram", "lag", "semivariance"),
        )?;
    }
    let n_nonempty = vario.semivariance.iter().flatten().count();
    Ok(json!({
        "n_cells": cells.len(),
        "n_bins": vario.lag_centers.len(),
        "n_nonempty_bins": n_nonempty,
        "max_semivariance": vario.semivariance.iter().flatten().cloned().fold(0.0, f64::max),
    }))
}

pub fn basis(config: &RunConfig, args: &BasisArgs) -> Result<Value, CliError> {
    let spec = read_grid_json(&config.out_path("grid.json"))?;
    let path = config.in_path(&args.coefficients, "coefficients.csv");
    let rows = artifacts::read_coefficients_csv(open(&path)?)?;
    let cells: Vec<usize> = rows.iter().map(|(c, _, _)| *c).collect();
    let cents = centroids_of(&spec, &cells)?;
    let l = args.l.unwrap_or(config.l);
    let sites = SiteSet::new(cents)?;
    let basis = build_basis(&sites, l)?;
    artifacts::write_basis_csv(&cells, &basis.psi, create(&config.out_path("basis.csv"))?)?;
    artifacts::write_eigenvalues_csv(
        &basis.eigenvalues,
        create(&config.out_path("eigenvalues.csv"))?,
    )?;
    Ok(json!({
        "n_sites": cells.len(),
        "l": basis.l,
        "explained_fraction": basis.explained_fraction,
        "n_null_eigenvalues":
            basis.eigenvalues.iter().filter(|e| e.abs() < 1e-8).count(),
    }))
}

/// Reads coefficients + basis and aligns them row by row.
fn clustering_inputs(
    config: &RunConfig,
    coefficients: &Option<PathBuf>,
    basis_path: &Option<PathBuf>,
) -> Result<(Vec<usize>, DMatrix<f64>, DMatrix<f64>), CliError> {
    let cpath = config.in_path(coefficients, "coefficients.csv");
    let rows = artifacts::read_coefficients_csv(open(&cpath)?)?;
    if rows.is_empty() {
        return Err(CliError::Input("coefficients file is empty".into()));
    }
    let cells: Vec<usize> = rows.iter().map(|(c, _, _)| *c).collect();
    let feats: Vec<Vec<f64>> = rows.iter().map(|(_, c, _)| c.feature_vector()).collect();
    let p = feats[0].len();
    let betas = DMatrix::from_fn(feats.len(), p, |i, j| feats[i][j]);

    let bpath = config.in_path(basis_path, "basis.csv");
    let (bcells, psi) = artifacts::read_basis_csv(open(&bpath)?)?;
    if bcells != cells {
        return Err(CliError::Input(
            "basis and coefficients list different cells; rerun the basis stage".into(),
        ));
    }
    Ok((cells, betas, psi))
}

fn fit_config(config: &RunConfig, args: &FitArgs) -> FitConfig {
    let mut fc = config.fit.clone();
    if let Some(v) = args.lambda1 {
        fc.lambda1 = v;
    }
    if let Some(v) = args.lambda2 {
        fc.lambda2 = v;
    }
    if let Some(v) = args.seed {
        fc.seed = v;
    }
    if let Some(v) = args.n_init {
        fc.n_init = v;
    }
    if let Some(v) = args.max_iter {
        fc.max_iter = v;
    }
    if args.no_spatial {
        fc.spatial_mixing = false;
    }
    fc
}

fn write_assignments(
    config: &RunConfig,
    name: &str,
    cells: &[usize],
    model: &FittedModel,
    psi: &DMatrix<f64>,
) -> Result<(), CliError> {
    let n = cells.len();
    let k = model.params.k();
    let mut pi = DMatrix::zeros(n, k);
    for i in 0..n {
        let row: Vec<f64> = psi.row(i).iter().cloned().collect();
        let p = mixing_proportions(&model.params.omega, &row);
        for c in 0..k {
            pi[(i, c)] = p[c];
        }
    }
    artifacts::write_assignments_csv(
        cells,
        &model.labels,
        &model.tau.tau,
        &pi,
        create(&config.out_path(name))?,
    )?;
    Ok(())
}

pub fn fit(config: &RunConfig, args: &FitArgs) -> Result<Value, CliError> {
    let (cells, betas, psi) = clustering_inputs(config, &args.coefficients, &args.basis)?;
    let fc = fit_config(config, args);
    let model = fit_em(&betas, &psi, args.k, &fc)?;
    artifacts::write_model_json(&model, create(&config.out_path("model.json"))?)?;
    write_assignments(config, "assignments.csv", &cells, &model, &psi)?;
    let mut sizes = vec![0usize; args.k];
    for &lab in &model.labels {
        sizes[lab] += 1;
    }
    Ok(json!({
        "k": args.k,
        "lambda1": fc.lambda1,
        "lambda2": fc.lambda2,
        "seed": fc.seed,
        "n_init": fc.n_init,
        "spatial_mixing": fc.spatial_mixing,
        "n_cells": cells.len(),
        "converged": model.converged,
        "iterations": model.objective_trace.len(),
        "loglik": model.loglik,
        "objective": model.objective_trace.last(),
        "cluster_sizes": sizes,
    }))
}

pub fn select(config: &RunConfig, args: &SelectArgs) -> Result<Value, CliError> {
    let (cells, betas, psi) = clustering_inputs(config, &args.coefficients, &args.basis)?;
    let k_grid = args.k_grid.clone().unwrap_or_else(|| config.k_grid.clone());
    let l1_grid = args.lambda1_grid.clone().unwrap_or_else(|| config.lambda1_grid.clone());
    let l2_grid = args.lambda2_grid.clone().unwrap_or_else(|| config.lambda2_grid.clone());
    let mut fc = config.fit.clone();
    if let Some(v) = args.seed {
        fc.seed = v;
    }
    let result = grid_search(&betas, &psi, &k_grid, &l1_grid, &l2_grid, &fc)?;
    artifacts::write_scores_csv(
        &result.records,
        &result.failures,
        create(&config.out_path("scores.csv"))?,
    )?;
    let describe = |idx: Option<usize>| -> Value {
        match idx {
            Some(i) => {
                let r = &result.records[i];
                json!({
                    "k": r.k, "lambda1": r.lambda1, "lambda2": r.lambda2,
                    "bic": r.bic, "icl": r.icl,
                })
            }
            None => Value::Null,
        }
    };
    if let Some(model) = &result.best_bic_model {
        artifacts::write_model_json(model, create(&config.out_path("model_bic.json"))?)?;
        write_assignments(config, "assignments_bic.csv", &cells, model, &psi)?;
    }
    if let Some(model) = &result.best_icl_model {
        artifacts::write_model_json(model, create(&config.out_path("model_icl.json"))?)?;
    }
    if result.best_bic.is_none() {
        return Err(CliError::Input("every candidate in the search grid failed".into()));
    }
    Ok(json!({
        "n_candidates": result.records.len() + result.failures.len(),
        "n_failures": result.failures.len(),
        "seed": fc.seed,
        "best_bic": describe(result.best_bic),
        "best_icl": describe(result.best_icl),
    }))
}

pub fn zone(config: &RunConfig, args: &ZoneArgs) -> Result<Value, CliError> {
    let spec = read_grid_json(&config.out_path("grid.json"))?;
    let (cells, betas, psi) = clustering_inputs(config, &args.coefficients, &args.basis)?;
    let mpath = config.in_path(&args.model, "model.json");
    let stored = artifacts::read_model_json(open(&mpath)?)?;
    let params = artifacts::params_from_json(&stored)?;
    if params.p() != betas.ncols() {
        return Err(CliError::Input(format!(
            "model expects p = {} features but coefficients provide {}",
            params.p(),
            betas.ncols()
        )));
    }
    if params.l() != psi.ncols() {
        return Err(CliError::Input(format!(
            "model expects L = {} basis functions but basis provides {}",
            params.l(),
            psi.ncols()
        )));
    }

    let (tau, loglik) = e_step(&params, &betas, &psi)?;
    let labels = hard_assignment(&tau);
    let k = params.k();
    let n = cells.len();

    artifacts::write_labels_csv(&cells, &labels, create(&config.out_path("labels.csv"))?)?;

    // per-cluster prior maps
    let mut pi = DMatrix::zeros(n, k);
    for i in 0..n {
        let row: Vec<f64> = psi.row(i).iter().cloned().collect();
        let p = mixing_proportions(&params.omega, &row);
        for c in 0..k {
            pi[(i, c)] = p[c];
        }
    }
    for c in 0..k {
        let mut f = create(&config.out_path(&format!("prior_{}.csv", c + 1)))?;
        writeln!(f, "cell_id,pi")?;
        for i in 0..n {
            writeln!(f, "{},{}", cells[i], fmt_g(pi[(i, c)]))?;
        }
    }

    // per-cluster mean profiles on the diversity-order grid
    let qgrid = QGrid::uniform(config.q_max, config.q_points)?;
    let smoother = ProfileSmoother::new(SmoothConfig {
        j: params.p() - 2,
        degree: config.degree,
        q_max: config.q_max,
        lambda: config.smooth_lambda,
        quadrature_points: config.quadrature_points,
        ..SmoothConfig::default()
    })?;
    for c in 0..k {
        let feats: Vec<f64> = params.mu[c].iter().cloned().collect();
        let coeffs = ProfileCoefficients::from_feature_vector(&feats, false);
        let h = smoother.values_at(&coeffs, qgrid.points())?;
        let mut f = create(&config.out_path(&format!("mean_profile_{}.csv", c + 1)))?;
        writeln!(f, "q,H")?;
        for (i, &q) in qgrid.points().iter().enumerate() {
            writeln!(f, "{},{}", fmt_g(q), fmt_g(h[i]))?;
        }
    }

    if config.emit_svg {
        let lab_pairs: Vec<(usize, usize)> =
            cells.iter().copied().zip(labels.iter().copied()).collect();
        write_svg(
            &config.out_path("zone_map.svg"),
            &svg::heatmap_categorical(&lab_pairs, &spec, "functional zones"),
        )?;
        for c in 0..k {
            let vals: Vec<(usize, f64)> =
                cells.iter().enumerate().map(|(i, &cell)| (cell, pi[(i, c)])).collect();
            write_svg(
                &config.out_path(&format!("prior_{}.svg", c + 1)),
                &svg::heatmap_continuous(&vals, &spec, &format!("prior probability {}", c + 1)),
            )?;
        }
    }

    let mut sizes = vec![0usize; k];
    for &lab in &labels {
        sizes[lab] += 1;
    }
    let ari = match &args.truth {
        Some(tpath) => {
            let truth = artifacts::read_labels_csv(open(tpath)?)?;
            let lookup: std::collections::BTreeMap<usize, usize> = truth.into_iter().collect();
            let mut aligned = Vec::with_capacity(n);
            for &cell in &cells {
                match lookup.get(&cell) {
                    Some(&lab) => aligned.push(lab),
                    None => {
                        return Err(CliError::Input(format!(
                            "truth labels missing cell {cell}"
                        )))
                    }
                }
            }
            Some(adjusted_rand_index(&labels, &aligned)?)
        }
        None => None,
    };
    Ok(json!({
        "k": k,
        "n_cells": n,
        "loglik": loglik,
        "cluster_sizes": sizes,
        "ari_against_truth": ari,
    }))
}

/// Cluster-specific relative species frequencies. Support size grows with
/// the cluster index and evenness alternates, so every pair of zones
/// differs over the whole diversity profile, not at a single order. No
/// species is rarer than ~2% of its pool, keeping sampled richness stable.
pub fn default_pools(k: usize, n_species: usize) -> Vec<SpeciesPool> {
    (0..k)
        .map(|c| {
            let m = (((c + 1) * n_species + k - 1) / k).max(2);
            let rate: f64 = if c % 2 == 0 { 1.0 } else { 0.55 };
            let mut p = vec![0.0; n_species];
            for s in 0..m {
                p[s] = rate.powi(s as i32);
            }
            let total: f64 = p.iter().sum();
            for v in &mut p {
                *v /= total;
            }
            SpeciesPool { proportions: p }
        })
        .collect()
}

pub fn simulate(config: &RunConfig, args: &SimulateArgs) -> Result<Value, CliError> {
    let (mut scenario, pools) = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let json: artifacts::ScenarioJson = serde_json::from_str(&text)?;
            artifacts::scenario_from_json(&json)?
        }
        None => {
            let sc = default_scenario(args.seed.unwrap_or(0));
            let pools = default_pools(sc.k(), 8);
            (sc, pools)
        }
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(stems) = args.stems {
        scenario.stems_per_cell = stems;
    }

    let (labels, _priors) = simulate_labels(&scenario)?;
    let grid = simulate_abundances(&labels, &pools, &scenario)?;

    artifacts::write_abundance_csv(&grid, create(&config.out_path("abundance.csv"))?)?;
    let all_cells: Vec<usize> = (0..labels.len()).collect();
    artifacts::write_labels_csv(
        &all_cells,
        &labels,
        create(&config.out_path("truth_labels.csv"))?,
    )?;
    write_grid_json(&config.out_path("grid.json"), &scenario.grid)?;
    let scenario_json = artifacts::scenario_to_json(&scenario, &pools);
    serde_json::to_writer_pretty(create(&config.out_path("scenario.json"))?, &scenario_json)?;

    Ok(json!({
        "k": scenario.k(),
        "p": scenario.p(),
        "seed": scenario.seed,
        "n_cells": labels.len(),
        "stems_per_cell": scenario.stems_per_cell,
        "n_species": pools.first().map_or(0, |p| p.proportions.len()),
    }))
}
