//! Stem-census ingestion: CSV parsing, census merging, the alive-tree filter,
//! and binning of trees into grid cells.
//!
//! The expected input is a mapped-census table with one row per stem. Column
//! names are configurable; the defaults match the common `stem.id`, `tree.id`,
//! `sp`, `gx`, `gy`, `dbh`, `status` layout of ForestGEO-style exports.

use crate::grid::{GridSpec, RegionMask};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CensusError {
    #[error("required column '{0}' is missing from the census header")]
    MissingColumn(String),
    #[error("row {row}: field '{field}' is malformed: {message}")]
    MalformedRow { row: usize, field: String, message: String },
    #[error("stem '{0}' appears in both censuses inside the merge region")]
    DuplicateStem(String),
    #[error("tree '{tree_id}' at ({x}, {y}) lies outside the grid")]
    OutOfBounds { tree_id: String, x: f64, y: f64 },
    #[error("census read failed: {0}")]
    Io(#[from] csv::Error),
}

impl CensusError {
    pub fn kind(&self) -> &'static str {
        match self {
            CensusError::MissingColumn(_) => "MissingColumn",
            CensusError::MalformedRow { .. } => "MalformedRow",
            CensusError::DuplicateStem(_) => "DuplicateStem",
            CensusError::OutOfBounds { .. } => "OutOfBounds",
            CensusError::Io(_) => "Io",
        }
    }
}

/// Stem life status as recorded in the census.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Alive,
    Dead,
    LostStem,
    Missing,
    Prior,
}

impl Status {
    /// Case-insensitive parse; spaces and hyphens are treated as underscores.
    pub fn parse(s: &str) -> Option<Status> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "alive" => Some(Status::Alive),
            "dead" => Some(Status::Dead),
            "lost_stem" => Some(Status::LostStem),
            "missing" => Some(Status::Missing),
            "prior" => Some(Status::Prior),
            _ => None,
        }
    }
}

/// One stem row from a census table. `dbh` is `None` when the source value
/// was absent or non-numeric (`NA` and empty cells are common).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemRecord {
    pub stem_id: String,
    pub tree_id: String,
    pub species: String,
    pub x: f64,
    pub y: f64,
    pub dbh: Option<f64>,
    pub status: Status,
}

/// One tree kept by the alive filter. Location and species come from the
/// first kept stem of the tree; `max_dbh` is the largest kept-stem diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub tree_id: String,
    pub species: String,
    pub x: f64,
    pub y: f64,
    pub max_dbh: f64,
}

/// Maps the logical stem fields onto the column names of a concrete table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub stem_id: String,
    pub tree_id: String,
    pub species: String,
    pub x: String,
    pub y: String,
    pub dbh: String,
    pub status: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            stem_id: "stem.id".into(),
            tree_id: "tree.id".into(),
            species: "sp".into(),
            x: "gx".into(),
            y: "gy".into(),
            dbh: "dbh".into(),
            status: "status".into(),
        }
    }
}

/// Row-level problem found while parsing. Rows with a usable subset of fields
/// are kept (missing dbh); rows that cannot be placed or classified are
/// dropped, but every drop is recorded here rather than silently ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based data-row index (the header is row 0).
    pub row: usize,
    pub field: String,
    pub message: String,
    /// Whether the row was kept despite the issue.
    pub kept: bool,
}

/// Result of parsing one census table.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub records: Vec<StemRecord>,
    pub issues: Vec<RowIssue>,
}

/// Parses a stem table from CSV. Structural problems (missing columns,
/// unreadable CSV) are errors; per-row problems become [`RowIssue`]s.
pub fn parse_stem_records<R: Read>(
    reader: R,
    columns: &ColumnMap,
) -> Result<ParseOutcome, CensusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, CensusError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CensusError::MissingColumn(name.to_string()))
    };
    let c_stem = col(&columns.stem_id)?;
    let c_tree = col(&columns.tree_id)?;
    let c_sp = col(&columns.species)?;
    let c_x = col(&columns.x)?;
    let c_y = col(&columns.y)?;
    let c_dbh = col(&columns.dbh)?;
    let c_status = col(&columns.status)?;

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut seen_stems: HashSet<String> = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize| row.get(idx).unwrap_or("").trim().to_string();

        let x = match field(c_x).parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                issues.push(RowIssue {
                    row: row_no,
                    field: columns.x.clone(),
                    message: format!("unparseable x coordinate '{}'", field(c_x)),
                    kept: false,
                });
                continue;
            }
        };
        let y = match field(c_y).parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                issues.push(RowIssue {
                    row: row_no,
                    field: columns.y.clone(),
                    message: format!("unparseable y coordinate '{}'", field(c_y)),
                    kept: false,
                });
                continue;
            }
        };
        let status = match Status::parse(&field(c_status)) {
            Some(s) => s,
            None => {
                issues.push(RowIssue {
                    row: row_no,
                    field: columns.status.clone(),
                    message: format!("unknown status '{}'", field(c_status)),
                    kept: false,
                });
                continue;
            }
        };
        let raw_dbh = field(c_dbh);
        let dbh = match raw_dbh.as_str() {
            "" | "NA" | "na" | "NULL" | "null" => {
                issues.push(RowIssue {
                    row: row_no,
                    field: columns.dbh.clone(),
                    message: "dbh missing, stored as none".into(),
                    kept: true,
                });
                None
            }
            s => match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Some(v),
                _ => {
                    issues.push(RowIssue {
                        row: row_no,
                        field: columns.dbh.clone(),
                        message: format!("non-positive or unparseable dbh '{s}', stored as none"),
                        kept: true,
                    });
                    None
                }
            },
        };
        let stem_id = field(c_stem);
        if !seen_stems.insert(stem_id.clone()) {
            issues.push(RowIssue {
                row: row_no,
                field: columns.stem_id.clone(),
                message: format!("duplicate stem id '{stem_id}' within one census"),
                kept: true,
            });
        }
        records.push(StemRecord {
            stem_id,
            tree_id: field(c_tree),
            species: field(c_sp),
            x,
            y,
            dbh,
            status,
        });
    }
    Ok(ParseOutcome { records, issues })
}

/// Merges a primary census with fallback records for a masked region.
///
/// All primary records are kept. A fallback record is adopted only when its
/// coordinates fall inside a masked cell; a stem present in both sources
/// inside the mask is an error rather than a silent preference.
pub fn merge_censuses(
    primary: &[StemRecord],
    fallback: &[StemRecord],
    spec: &GridSpec,
    mask: &RegionMask,
) -> Result<Vec<StemRecord>, CensusError> {
    let primary_ids: HashSet<&str> = primary.iter().map(|r| r.stem_id.as_str()).collect();
    let mut merged = primary.to_vec();
    for rec in fallback {
        if !mask.contains_point(spec, rec.x, rec.y) {
            continue;
        }
        if primary_ids.contains(rec.stem_id.as_str()) {
            return Err(CensusError::DuplicateStem(rec.stem_id.clone()));
        }
        merged.push(rec.clone());
    }
    Ok(merged)
}

/// Keeps stems that are alive with dbh strictly above `min_dbh`, then
/// collapses them to one record per tree. The tree takes the location and
/// species of its first kept stem and the maximum kept-stem diameter.
pub fn filter_alive_trees(records: &[StemRecord], min_dbh: f64) -> Vec<TreeRecord> {
    let mut order: Vec<String> = Vec::new();
    let mut by_tree: HashMap<String, TreeRecord> = HashMap::new();
    for rec in records {
        if rec.status != Status::Alive {
            continue;
        }
        let dbh = match rec.dbh {
            Some(d) if d > min_dbh => d,
            _ => continue,
        };
        match by_tree.get_mut(&rec.tree_id) {
            Some(tree) => {
                if dbh > tree.max_dbh {
                    tree.max_dbh = dbh;
                }
            }
            None => {
                order.push(rec.tree_id.clone());
                by_tree.insert(
                    rec.tree_id.clone(),
                    TreeRecord {
                        tree_id: rec.tree_id.clone(),
                        species: rec.species.clone(),
                        x: rec.x,
                        y: rec.y,
                        max_dbh: dbh,
                    },
                );
            }
        }
    }
    order.into_iter().map(|id| by_tree.remove(&id).expect("tree recorded")).collect()
}

/// Number of stems the alive filter would keep, before tree deduplication.
pub fn count_kept_stems(records: &[StemRecord], min_dbh: f64) -> usize {
    records
        .iter()
        .filter(|r| r.status == Status::Alive && r.dbh.map_or(false, |d| d > min_dbh))
        .count()
}

/// Species counts per occupied grid cell. Cell and species orders are fixed
/// (cell id, then species name) so downstream artifacts are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceGrid {
    pub spec: GridSpec,
    counts: BTreeMap<usize, BTreeMap<String, u64>>,
}

impl AbundanceGrid {
    pub fn new(spec: GridSpec) -> Self {
        AbundanceGrid { spec, counts: BTreeMap::new() }
    }

    pub fn add(&mut self, cell_id: usize, species: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self
            .counts
            .entry(cell_id)
            .or_default()
            .entry(species.to_string())
            .or_insert(0) += count;
    }

    /// Cells with at least one tree, ascending by cell id.
    pub fn occupied_cells(&self) -> Vec<usize> {
        self.counts.keys().copied().collect()
    }

    pub fn cell_counts(&self, cell_id: usize) -> Option<&BTreeMap<String, u64>> {
        self.counts.get(&cell_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &BTreeMap<String, u64>)> {
        self.counts.iter().map(|(k, v)| (*k, v))
    }

    pub fn total_trees(&self) -> u64 {
        self.counts.values().flat_map(|m| m.values()).sum()
    }

    /// Plot-wide count per species, ordered by species name.
    pub fn species_totals(&self) -> BTreeMap<String, u64> {
        let mut totals: BTreeMap<String, u64> = BTreeMap::new();
        for cell in self.counts.values() {
            for (sp, n) in cell {
                *totals.entry(sp.clone()).or_insert(0) += n;
            }
        }
        totals
    }

    pub fn n_species(&self) -> usize {
        self.species_totals().len()
    }
}

/// Assigns each tree to its grid cell and accumulates species counts.
/// A tree outside the grid is an error naming the offending tree.
pub fn bin_to_grid(trees: &[TreeRecord], spec: &GridSpec) -> Result<AbundanceGrid, CensusError> {
    let mut grid = AbundanceGrid::new(spec.clone());
    for tree in trees {
        let (ix, iy) = spec.locate(tree.x, tree.y).ok_or_else(|| CensusError::OutOfBounds {
            tree_id: tree.tree_id.clone(),
            x: tree.x,
            y: tree.y,
        })?;
        grid.add(spec.cell_id(ix, iy), &tree.species, 1);
    }
    Ok(grid)
}
