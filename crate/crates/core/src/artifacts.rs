//! Readers and writers for the pipeline's on-disk artifacts.
//!
//! Every float written to CSV goes through `fmt_g`, a fixed 10-significant-
//! digit formatter, so repeated runs produce byte-identical files. Missing
//! values (empty variogram bins, failed score rows) are written as `NA`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::census::AbundanceGrid;
use crate::grid::GridSpec;
use crate::mixture::{FittedModel, MixtureError, ModelParams, Precision};
use crate::selection::{FailedTriplet, ScoreRecord};
use crate::smoothing::ProfileCoefficients;
use crate::synth::{LabelField, SpeciesPool, SynthError, SyntheticScenario};
use crate::variogram::EmpiricalVariogram;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unexpected header: {0}")]
    BadHeader(String),
    #[error("row {row}: {message}")]
    BadField { row: usize, message: String },
    #[error("stored model is invalid: {0}")]
    BadModel(String),
    #[error("stored scenario is invalid: {0}")]
    BadScenario(String),
}

impl ArtifactError {
    pub fn kind(&self) -> &'static str {
        match self {
            ArtifactError::Io(_) => "Io",
            ArtifactError::Csv(_) => "Csv",
            ArtifactError::Json(_) => "Json",
            ArtifactError::BadHeader(_) => "BadHeader",
            ArtifactError::BadField { .. } => "BadField",
            ArtifactError::BadModel(_) => "BadModel",
            ArtifactError::BadScenario(_) => "BadScenario",
        }
    }
}

/// Formats with 10 significant digits, trimming trailing zeros, switching
/// to scientific notation outside [1e-4, 1e10). Deterministic for every
/// finite input and round-trips through `str::parse::<f64>()`.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let p = 10i32;
    // scientific form fixes the decimal exponent, rounding carry included
    let sci = format!("{:.*e}", (p - 1) as usize, x);
    let epos = sci.find('e').unwrap();
    let exp: i32 = sci[epos + 1..].parse().unwrap();
    if exp < -4 || exp >= p {
        let mant = sci[..epos].trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{exp}")
    } else {
        let decimals = (p - 1 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        let trimmed = if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        };
        if trimmed == "-0" { "0".into() } else { trimmed }
    }
}

fn parse_f64(s: &str, row: usize, what: &str) -> Result<f64, ArtifactError> {
    s.trim().parse().map_err(|_| ArtifactError::BadField {
        row,
        message: format!("cannot parse {what} from {s:?}"),
    })
}

fn parse_usize(s: &str, row: usize, what: &str) -> Result<usize, ArtifactError> {
    s.trim().parse().map_err(|_| ArtifactError::BadField {
        row,
        message: format!("cannot parse {what} from {s:?}"),
    })
}

// ---------------------------------------------------------------------
// abundance

pub fn write_abundance_csv<W: Write>(
    grid: &AbundanceGrid,
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "x_index", "y_index", "species", "count"])?;
    for (cell, counts) in grid.iter() {
        let (xi, yi) = grid.spec.cell_indices(cell);
        for (species, &count) in counts {
            w.write_record([
                cell.to_string(),
                xi.to_string(),
                yi.to_string(),
                species.clone(),
                count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_abundance_csv<R: Read>(
    input: R,
    spec: GridSpec,
) -> Result<AbundanceGrid, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().take(2).collect::<Vec<_>>() != vec!["cell_id", "x_index"] {
        return Err(ArtifactError::BadHeader(header.as_slice().to_string()));
    }
    let mut grid = AbundanceGrid::new(spec);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = parse_usize(&rec[0], i, "cell_id")?;
        let count: u64 = rec[4].trim().parse().map_err(|_| ArtifactError::BadField {
            row: i,
            message: format!("cannot parse count from {:?}", &rec[4]),
        })?;
        grid.add(cell, &rec[3], count);
    }
    Ok(grid)
}

// ---------------------------------------------------------------------
// profile points (raw and fitted curves share the layout)

pub fn write_profile_points_csv<W: Write>(
    cells: &[usize],
    qs: &[f64],
    values: &[Vec<f64>],
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "q", "H"])?;
    for (row, &cell) in cells.iter().enumerate() {
        for (col, &q) in qs.iter().enumerate() {
            w.write_record([cell.to_string(), fmt_g(q), fmt_g(values[row][col])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cell order of first appearance, shared q grid, one value row per cell.
pub fn read_profile_points_csv<R: Read>(
    input: R,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.as_slice() != "cell_idqH" {
        return Err(ArtifactError::BadHeader(header.as_slice().to_string()));
    }
    let mut cells: Vec<usize> = Vec::new();
    let mut qs: Vec<f64> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = parse_usize(&rec[0], i, "cell_id")?;
        let q = parse_f64(&rec[1], i, "q")?;
        let h = parse_f64(&rec[2], i, "H")?;
        if cells.last() != Some(&cell) {
            cells.push(cell);
            values.push(Vec::new());
            if !values.is_empty() && values.len() == 2 {
                first = false;
            }
        }
        if first {
            qs.push(q);
        }
        values.last_mut().unwrap().push(h);
    }
    for (row, v) in values.iter().enumerate() {
        if v.len() != qs.len() {
            return Err(ArtifactError::BadField {
                row,
                message: format!(
                    "cell {} has {} points, expected {}",
                    cells[row],
                    v.len(),
                    qs.len()
                ),
            });
        }
    }
    Ok((cells, qs, values))
}

// ---------------------------------------------------------------------
// smoothing coefficients

pub fn write_coefficients_csv<W: Write>(
    rows: &[(usize, ProfileCoefficients, f64)],
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    let n_alpha = rows.first().map_or(0, |(_, c, _)| c.alpha.len());
    let mut header = vec!["cell_id".to_string(), "xi0".into(), "xi1".into()];
    for j in 1..=n_alpha {
        header.push(format!("alpha_{j}"));
    }
    header.push("constant_flag".into());
    header.push("rmse".into());
    w.write_record(&header)?;
    for (cell, coeffs, rmse) in rows {
        let mut rec = vec![cell.to_string(), fmt_g(coeffs.xi0), fmt_g(coeffs.xi1)];
        for &a in &coeffs.alpha {
            rec.push(fmt_g(a));
        }
        rec.push(if coeffs.constant { "1".into() } else { "0".into() });
        rec.push(fmt_g(*rmse));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coefficients_csv<R: Read>(
    input: R,
) -> Result<Vec<(usize, ProfileCoefficients, f64)>, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 5 || cols[0] != "cell_id" || cols[1] != "xi0" {
        return Err(ArtifactError::BadHeader(header.as_slice().to_string()));
    }
    let n_alpha = cols.len() - 5;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = parse_usize(&rec[0], i, "cell_id")?;
        let xi0 = parse_f64(&rec[1], i, "xi0")?;
        let xi1 = parse_f64(&rec[2], i, "xi1")?;
        let mut alpha = Vec::with_capacity(n_alpha);
        for j in 0..n_alpha {
            alpha.push(parse_f64(&rec[3 + j], i, "alpha")?);
        }
        let constant = rec[3 + n_alpha].trim() == "1";
        let rmse = parse_f64(&rec[4 + n_alpha], i, "rmse")?;
        out.push((cell, ProfileCoefficients { xi0, xi1, alpha, constant }, rmse));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// variogram

pub fn write_variogram_csv<W: Write>(
    v: &EmpiricalVariogram,
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lag_center", "gamma_hat", "pair_count"])?;
    for i in 0..v.lag_centers.len() {
        let gamma = match v.semivariance[i] {
            Some(g) => fmt_g(g),
            None => "NA".into(),
        };
        w.write_record([fmt_g(v.lag_centers[i]), gamma, v.pair_counts[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_variogram_csv<R: Read>(input: R) -> Result<EmpiricalVariogram, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.as_slice() != "lag_centergamma_hatpair_count" {
        return Err(ArtifactError::BadHeader(header.as_slice().to_string()));
    }
    let mut v = EmpiricalVariogram {
        lag_centers: Vec::new(),
        semivariance: Vec::new(),
        pair_counts: Vec::new(),
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        v.lag_centers.push(parse_f64(&rec[0], i, "lag_center")?);
        let g = rec[1].trim();
        v.semivariance.push(if g == "NA" {
            None
        } else {
            Some(parse_f64(g, i, "gamma_hat")?)
        });
        v.pair_counts.push(parse_usize(&rec[2], i, "pair_count")?);
    }
    Ok(v)
}

// ---------------------------------------------------------------------
// spatial basis

pub fn write_basis_csv<W: Write>(
    cells: &[usize],
    psi: &DMatrix<f64>,
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cell_id".to_string()];
    for l in 1..=psi.ncols() {
        header.push(format!("psi_{l}"));
    }
    w.write_record(&header)?;
    for (row, &cell) in cells.iter().enumerate() {
        let mut rec = vec![cell.to_string()];
        for l in 0..psi.ncols() {
            rec.push(fmt_g(psi[(row, l)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_basis_csv<R: Read>(input: R) -> Result<(Vec<usize>, DMatrix<f64>), ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.is_empty() || cols[0] != "cell_id" {
        return Err(ArtifactError::BadHeader(header.as_slice().to_string()));
    }
    let l = cols.len() - 1;
    let mut cells = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        cells.push(parse_usize(&rec[0], i, "cell_id")?);
        let mut row = Vec::with_capacity(l);
        for j in 0..l {
            row.push(parse_f64(&rec[1 + j], i, "psi")?);
        }
        rows.push(row);
    }
    let mat = DMatrix::from_fn(rows.len(), l, |i, j| rows[i][j]);
    Ok((cells, mat))
}

pub fn write_eigenvalues_csv<W: Write>(
    eigenvalues: &[f64],
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "eigenvalue"])?;
    for (i, &e) in eigenvalues.iter().enumerate() {
        w.write_record([i.to_string(), fmt_g(e)])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// assignments and score table

pub fn write_assignments_csv<W: Write>(
    cells: &[usize],
    labels: &[usize],
    tau: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    out: W,
) -> Result<(), ArtifactError> {
    let k = tau.ncols();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cell_id".to_string(), "label".into()];
    for c in 1..=k {
        header.push(format!("tau_{c}"));
    }
    for c in 1..=k {
        header.push(format!("pi_{c}"));
    }
    w.write_record(&header)?;
    for (row, &cell) in cells.iter().enumerate() {
        let mut rec = vec![cell.to_string(), labels[row].to_string()];
        for c in 0..k {
            rec.push(fmt_g(tau[(row, c)]));
        }
        for c in 0..k {
            rec.push(fmt_g(pi[(row, c)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores_csv<W: Write>(
    records: &[ScoreRecord],
    failures: &[FailedTriplet],
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "lambda1",
        "lambda2",
        "loglik",
        "complexity",
        "bic",
        "icl",
        "entropy_term",
        "converged",
        "error",
    ])?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            fmt_g(r.lambda1),
            fmt_g(r.lambda2),
            fmt_g(r.loglik),
            r.complexity.to_string(),
            fmt_g(r.bic),
            fmt_g(r.icl),
            fmt_g(r.entropy_term),
            if r.converged { "1".into() } else { "0".into() },
            String::new(),
        ])?;
    }
    for f in failures {
        w.write_record([
            f.k.to_string(),
            fmt_g(f.lambda1),
            fmt_g(f.lambda2),
            "NA".into(),
            "NA".into(),
            "NA".into(),
            "NA".into(),
            "NA".into(),
            "0".into(),
            f.error.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// labels (synthetic truth and zoning output share the layout)

pub fn write_labels_csv<W: Write>(
    cells: &[usize],
    labels: &[usize],
    out: W,
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "label"])?;
    for (row, &cell) in cells.iter().enumerate() {
        w.write_record([cell.to_string(), labels[row].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<(usize, usize)>, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.as_slice() != "cell_idlabel" {
        return Err(ArtifactError::BadHeader(header.as_slice().to_string()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        out.push((parse_usize(&rec[0], i, "cell_id")?, parse_usize(&rec[1], i, "label")?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// model JSON

/// Flat JSON mirror of a fitted mixture: enough to re-evaluate posteriors
/// and priors anywhere, without any posterior matrices baked in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub k: usize,
    pub p: usize,
    pub l: usize,
    /// Per-cluster mean vectors.
    pub mu: Vec<Vec<f64>>,
    /// Per-cluster precision matrices, dense row-major.
    pub w: Vec<Vec<f64>>,
    /// `(K-1) x L` logit coefficients, row-major.
    pub omega: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub objective_trace: Vec<f64>,
    pub seed: u64,
    pub converged: bool,
    pub loglik: f64,
}

pub fn model_to_json(model: &FittedModel) -> ModelJson {
    let k = model.params.k();
    let p = model.params.p();
    let l = model.params.l();
    ModelJson {
        k,
        p,
        l,
        mu: model.params.mu.iter().map(|m| m.iter().cloned().collect()).collect(),
        w: model
            .params
            .precisions
            .iter()
            .map(|prec| {
                let mut flat = Vec::with_capacity(p * p);
                for i in 0..p {
                    for j in 0..p {
                        flat.push(prec.matrix[(i, j)]);
                    }
                }
                flat
            })
            .collect(),
        omega: {
            let om = &model.params.omega;
            let mut flat = Vec::with_capacity(om.nrows() * om.ncols());
            for i in 0..om.nrows() {
                for j in 0..om.ncols() {
                    flat.push(om[(i, j)]);
                }
            }
            flat
        },
        lambda1: model.config.lambda1,
        lambda2: model.config.lambda2,
        objective_trace: model.objective_trace.clone(),
        seed: model.config.seed,
        converged: model.converged,
        loglik: model.loglik,
    }
}

/// Rebuilds mixture parameters from their JSON mirror, revalidating
/// positive definiteness along the way.
pub fn params_from_json(json: &ModelJson) -> Result<ModelParams, ArtifactError> {
    let (k, p, l) = (json.k, json.p, json.l);
    if json.mu.len() != k || json.w.len() != k {
        return Err(ArtifactError::BadModel(format!(
            "{} clusters but {} means and {} precisions",
            k,
            json.mu.len(),
            json.w.len()
        )));
    }
    if json.omega.len() != k.saturating_sub(1) * l {
        return Err(ArtifactError::BadModel("omega has the wrong size".into()));
    }
    let mut mu = Vec::with_capacity(k);
    let mut precisions = Vec::with_capacity(k);
    for c in 0..k {
        if json.mu[c].len() != p || json.w[c].len() != p * p {
            return Err(ArtifactError::BadModel(format!("cluster {c} has wrong dimensions")));
        }
        mu.push(DVector::from_vec(json.mu[c].clone()));
        let w = DMatrix::from_fn(p, p, |i, j| json.w[c][i * p + j]);
        precisions.push(Precision::new(w).map_err(|e: MixtureError| {
            ArtifactError::BadModel(format!("cluster {c}: {e}"))
        })?);
    }
    let omega = DMatrix::from_fn(k.saturating_sub(1), l, |i, j| json.omega[i * l + j]);
    Ok(ModelParams { mu, precisions, omega })
}

pub fn write_model_json<W: Write>(model: &FittedModel, out: W) -> Result<(), ArtifactError> {
    serde_json::to_writer_pretty(out, &model_to_json(model))?;
    Ok(())
}

pub fn read_model_json<R: Read>(input: R) -> Result<ModelJson, ArtifactError> {
    Ok(serde_json::from_reader(input)?)
}

// ---------------------------------------------------------------------
// scenario JSON

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridJson {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelFieldJson {
    Blocks { k: usize },
    /// `omega` in row-major order, `(k-1) x l`.
    Softmax { k: usize, l: usize, omega: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioJson {
    pub grid: GridJson,
    pub labels: LabelFieldJson,
    pub means: Vec<Vec<f64>>,
    /// Row-major p x p matrices.
    pub covariances: Vec<Vec<f64>>,
    /// Per-cluster relative species frequencies.
    pub species_pools: Vec<Vec<f64>>,
    pub stems_per_cell: u64,
    pub seed: u64,
}

pub fn scenario_to_json(
    scenario: &SyntheticScenario,
    pools: &[SpeciesPool],
) -> ScenarioJson {
    let p = scenario.p();
    ScenarioJson {
        grid: GridJson {
            origin_x: scenario.grid.origin_x,
            origin_y: scenario.grid.origin_y,
            cell_size: scenario.grid.cell_size,
            nx: scenario.grid.nx,
            ny: scenario.grid.ny,
        },
        labels: match &scenario.labels {
            LabelField::Blocks { k } => LabelFieldJson::Blocks { k: *k },
            LabelField::Softmax { omega } => LabelFieldJson::Softmax {
                k: omega.nrows() + 1,
                l: omega.ncols(),
                omega: {
                    let mut flat = Vec::with_capacity(omega.nrows() * omega.ncols());
                    for i in 0..omega.nrows() {
                        for j in 0..omega.ncols() {
                            flat.push(omega[(i, j)]);
                        }
                    }
                    flat
                },
            },
        },
        means: scenario.means.iter().map(|m| m.iter().cloned().collect()).collect(),
        covariances: scenario
            .covariances
            .iter()
            .map(|c| {
                let mut flat = Vec::with_capacity(p * p);
                for i in 0..p {
                    for j in 0..p {
                        flat.push(c[(i, j)]);
                    }
                }
                flat
            })
            .collect(),
        species_pools: pools.iter().map(|s| s.proportions.clone()).collect(),
        stems_per_cell: scenario.stems_per_cell,
        seed: scenario.seed,
    }
}

pub fn scenario_from_json(
    json: &ScenarioJson,
) -> Result<(SyntheticScenario, Vec<SpeciesPool>), ArtifactError> {
    let grid = GridSpec::new(
        json.grid.origin_x,
        json.grid.origin_y,
        json.grid.cell_size,
        json.grid.nx,
        json.grid.ny,
    )
    .map_err(|e| ArtifactError::BadScenario(e.to_string()))?;
    let labels = match &json.labels {
        LabelFieldJson::Blocks { k } => LabelField::Blocks { k: *k },
        LabelFieldJson::Softmax { k, l, omega } => {
            if *k == 0 || omega.len() != (k - 1) * l {
                return Err(ArtifactError::BadScenario("omega has the wrong size".into()));
            }
            LabelField::Softmax {
                omega: DMatrix::from_fn(k - 1, *l, |i, j| omega[i * l + j]),
            }
        }
    };
    let p = json.means.first().map_or(0, |m| m.len());
    let means: Vec<DVector<f64>> =
        json.means.iter().map(|m| DVector::from_vec(m.clone())).collect();
    let mut covariances = Vec::with_capacity(json.covariances.len());
    for (c, flat) in json.covariances.iter().enumerate() {
        if flat.len() != p * p {
            return Err(ArtifactError::BadScenario(format!(
                "covariance {c} has {} entries, expected {}",
                flat.len(),
                p * p
            )));
        }
        covariances.push(DMatrix::from_fn(p, p, |i, j| flat[i * p + j]));
    }
    let scenario = SyntheticScenario {
        grid,
        labels,
        means,
        covariances,
        stems_per_cell: json.stems_per_cell,
        seed: json.seed,
    };
    scenario
        .validate()
        .map_err(|e: SynthError| ArtifactError::BadScenario(e.to_string()))?;
    let pools: Vec<SpeciesPool> = json
        .species_pools
        .iter()
        .map(|p| SpeciesPool { proportions: p.clone() })
        .collect();
    if pools.len() != scenario.k() {
        return Err(ArtifactError::BadScenario(format!(
            "{} pools for {} clusters",
            pools.len(),
            scenario.k()
        )));
    }
    Ok((scenario, pools))
}

// ---------------------------------------------------------------------
// region mask

pub fn read_mask_csv<R: Read>(input: R) -> Result<Vec<(usize, usize)>, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.as_slice() != "x_indexy_index" {
        return Err(ArtifactError::BadHeader(header.as_slice().to_string()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        out.push((
            parse_usize(&rec[0], i, "x_index")?,
            parse_usize(&rec[1], i, "y_index")?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{FitConfig, Posteriors};
    use crate::synth::default_scenario;
    use approx::assert_relative_eq;


    #[test]
    fn float_formatting_holds_ten_significant_digits() {
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(-0.0), "0");
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(-1.0), "-1");
        assert_eq!(fmt_g(0.1), "0.1");
        assert_eq!(fmt_g(2.0 / 3.0), "0.6666666667");
        assert_eq!(fmt_g(123.456), "123.456");
        assert_eq!(fmt_g(1e-5), "1e-5");
        assert_eq!(fmt_g(-1.5e-7), "-1.5e-7");
        assert_eq!(fmt_g(0.00012345), "0.00012345");
        assert_eq!(fmt_g(1234567890123.0), "1.23456789e12");
        assert_eq!(fmt_g(9999999999.6), "1e10");
        assert_eq!(fmt_g(999999999.96), "1000000000");
        assert_eq!(fmt_g(f64::NAN), "NaN");
        assert_eq!(fmt_g(f64::INFINITY), "inf");
    }

    #[test]
    fn formatted_floats_round_trip_within_ten_digits() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let exp = rng.gen_range(-12..12);
            let x: f64 = (rng.gen::<f64>() * 2.0 - 1.0) * 10f64.powi(exp);
            let s = fmt_g(x);
            let back: f64 = s.parse().unwrap();
            assert!(
                (back - x).abs() <= 1e-9 * x.abs().max(1e-300),
                "{x} -> {s} -> {back}"
            );
        }
    }

    #[test]
    fn abundance_csv_round_trips() {
        let spec = GridSpec::new(0.0, 0.0, 25.0, 4, 3).unwrap();
        let mut grid = AbundanceGrid::new(spec.clone());
        grid.add(0, "acerru", 5);
        grid.add(0, "tsugca", 2);
        grid.add(7, "querru", 1);
        let mut buf = Vec::new();
        write_abundance_csv(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cell_id,x_index,y_index,species,count\n"));
        assert!(text.contains("0,0,0,acerru,5"));
        assert!(text.contains("7,3,1,querru,1"));
        let back = read_abundance_csv(&buf[..], spec).unwrap();
        assert_eq!(back.occupied_cells(), vec![0, 7]);
        assert_eq!(back.cell_counts(0).unwrap()["tsugca"], 2);
    }

    #[test]
    fn profile_points_csv_round_trips() {
        let cells = vec![3, 9];
        let qs = vec![0.0, 0.5, 1.0];
        let values = vec![vec![4.0, 3.5, 3.1], vec![2.0, 1.9, 1.85]];
        let mut buf = Vec::new();
        write_profile_points_csv(&cells, &qs, &values, &mut buf).unwrap();
        let (c2, q2, v2) = read_profile_points_csv(&buf[..]).unwrap();
        assert_eq!(c2, cells);
        assert_eq!(q2, qs);
        assert_eq!(v2, values);
    }

    #[test]
    fn coefficients_csv_round_trips() {
        let rows = vec![
            (
                0usize,
                ProfileCoefficients {
                    xi0: 4.2,
                    xi1: -0.37,
                    alpha: vec![0.1, -0.2, 0.3],
                    constant: false,
                },
                1.5e-4,
            ),
            (
                5,
                ProfileCoefficients {
                    xi0: 1.0,
                    xi1: 0.0,
                    alpha: vec![0.0, 0.0, 0.0],
                    constant: true,
                },
                0.0,
            ),
        ];
        let mut buf = Vec::new();
        write_coefficients_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cell_id,xi0,xi1,alpha_1,alpha_2,alpha_3,constant_flag,rmse\n"));
        let back = read_coefficients_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, 0);
        assert_relative_eq!(back[0].1.xi1, -0.37);
        assert_eq!(back[0].1.alpha, vec![0.1, -0.2, 0.3]);
        assert!(back[1].1.constant);
        assert_eq!(back[1].2, 0.0);
    }

    #[test]
    fn variogram_csv_keeps_empty_bins() {
        let v = EmpiricalVariogram {
            lag_centers: vec![12.5, 37.5, 62.5],
            semivariance: vec![Some(0.4), None, Some(1.3)],
            pair_counts: vec![10, 0, 4],
        };
        let mut buf = Vec::new();
        write_variogram_csv(&v, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("37.5,NA,0"));
        let back = read_variogram_csv(&buf[..]).unwrap();
        assert_eq!(back.semivariance, v.semivariance);
        assert_eq!(back.pair_counts, v.pair_counts);
    }

    #[test]
    fn basis_csv_round_trips() {
        let psi = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -0.1, 0.0, 0.25]);
        let mut buf = Vec::new();
        write_basis_csv(&[0, 1], &psi, &mut buf).unwrap();
        let (cells, back) = read_basis_csv(&buf[..]).unwrap();
        assert_eq!(cells, vec![0, 1]);
        assert_eq!(back, psi);
    }

    #[test]
    fn score_table_mixes_successes_and_failures() {
        let rec = ScoreRecord {
            k: 3,
            lambda1: 0.1,
            lambda2: 0.01,
            loglik: -120.5,
            complexity: 42,
            bic: -150.2,
            icl: -151.0,
            entropy_term: -0.8,
            converged: true,
        };
        let fail = FailedTriplet {
            k: 9,
            lambda1: 10.0,
            lambda2: 10.0,
            error: "cluster 2 has effective mass below p + 1".into(),
        };
        let mut buf = Vec::new();
        write_scores_csv(&[rec], &[fail], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("3,0.1,0.01,-120.5,42,-150.2,-151,-0.8,1,"));
        assert!(text.contains("9,10,10,NA,NA,NA,NA,NA,0,"));
    }

    #[test]
    fn model_json_round_trips_and_validates() {
        let prec = Precision::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let model = FittedModel {
            params: ModelParams {
                mu: vec![DVector::from_vec(vec![1.0, -2.0]); 2],
                precisions: vec![prec; 2],
                omega: DMatrix::from_row_slice(1, 3, &[0.5, 0.0, -0.5]),
            },
            tau: Posteriors { tau: DMatrix::from_element(4, 2, 0.5) },
            labels: vec![0, 0, 1, 1],
            objective_trace: vec![-10.0, -9.5],
            converged: true,
            loglik: -9.0,
            config: FitConfig { lambda1: 0.3, lambda2: 0.7, seed: 11, ..FitConfig::default() },
        };
        let mut buf = Vec::new();
        write_model_json(&model, &mut buf).unwrap();
        let json = read_model_json(&buf[..]).unwrap();
        assert_eq!(json.k, 2);
        assert_eq!(json.p, 2);
        assert_eq!(json.l, 3);
        assert_eq!(json.seed, 11);
        assert_eq!(json.lambda2, 0.7);
        let params = params_from_json(&json).unwrap();
        assert_eq!(params.mu[0], model.params.mu[0]);
        assert_eq!(params.omega, model.params.omega);
        assert_relative_eq!(
            params.precisions[1].matrix[(0, 1)],
            model.params.precisions[1].matrix[(0, 1)],
            epsilon = 1e-15
        );
        // a non-positive-definite stored precision is rejected
        let mut bad = json.clone();
        bad.w[0] = vec![1.0, 5.0, 5.0, 1.0];
        assert_eq!(params_from_json(&bad).unwrap_err().kind(), "BadModel");
    }

    #[test]
    fn scenario_json_round_trips() {
        let sc = default_scenario(77);
        let pools = vec![SpeciesPool::uniform(4); 3];
        let json = scenario_to_json(&sc, &pools);
        let text = serde_json::to_string_pretty(&json).unwrap();
        let parsed: ScenarioJson = serde_json::from_str(&text).unwrap();
        let (back, pools2) = scenario_from_json(&parsed).unwrap();
        assert_eq!(back.grid.nx, sc.grid.nx);
        assert_eq!(back.seed, 77);
        assert_eq!(back.k(), 3);
        assert_eq!(pools2.len(), 3);
        assert_eq!(back.means[1], sc.means[1]);
        // a softmax layout survives too
        let mut sc2 = sc;
        sc2.labels = crate::synth::LabelField::Softmax {
            omega: DMatrix::from_row_slice(2, 4, &[0.1; 8]),
        };
        let json2 = scenario_to_json(&sc2, &pools);
        let (back2, _) = scenario_from_json(&json2).unwrap();
        match back2.labels {
            LabelField::Softmax { ref omega } => {
                assert_eq!(omega.nrows(), 2);
                assert_eq!(omega.ncols(), 4);
            }
            _ => panic!("expected softmax labels"),
        }
    }

    #[test]
    fn headers_are_checked_on_read() {
        let bad = b"foo,bar\n1,2\n";
        assert_eq!(read_labels_csv(&bad[..]).unwrap_err().kind(), "BadHeader");
        assert_eq!(read_variogram_csv(&bad[..]).unwrap_err().kind(), "BadHeader");
        assert_eq!(read_profile_points_csv(&bad[..]).unwrap_err().kind(), "BadHeader");
        let bad_field = b"cell_id,label\n1,notanumber\n";
        assert_eq!(read_labels_csv(&bad_field[..]).unwrap_err().kind(), "BadField");
    }

    #[test]
    fn labels_and_mask_round_trip() {
        let mut buf = Vec::new();
        write_labels_csv(&[0, 3, 7], &[2, 0, 1], &mut buf).unwrap();
        let back = read_labels_csv(&buf[..]).unwrap();
        assert_eq!(back, vec![(0, 2), (3, 0), (7, 1)]);
        let mask = b"x_index,y_index\n0,0\n2,5\n";
        assert_eq!(read_mask_csv(&mask[..]).unwrap(), vec![(0, 0), (2, 5)]);
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        // Ten significant digits must survive a write/parse cycle, and the
        // rendering must be a fixed point so reruns stay byte-identical.
        #[test]
        fn float_rendering_round_trips(x in -1e12f64..1e12) {
            let s = fmt_g(x);
            let back: f64 = s.parse().unwrap();
            let rel = (back - x).abs() / x.abs().max(1e-300);
            prop_assert!(rel < 1e-9, "{x} -> {s} -> {back}");
            prop_assert_eq!(fmt_g(back), s);
        }

        #[test]
        fn float_rendering_survives_extreme_magnitudes(
            mantissa in 1.0f64..10.0,
            exp in -250i32..250,
            negative in proptest::bool::ANY,
        ) {
            let x = if negative { -mantissa } else { mantissa } * 10f64.powi(exp);
            let s = fmt_g(x);
            let back: f64 = s.parse().unwrap();
            let rel = (back - x).abs() / x.abs();
            prop_assert!(rel < 1e-9, "{x} -> {s} -> {back}");
            prop_assert_eq!(fmt_g(back), s);
        }
    }
}
