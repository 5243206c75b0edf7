//! Run configuration: a single JSON document, every key optional, merged
//! with command-line flags (flags win). `BIODIV_ZONER_CONFIG` supplies a
//! default config path when `--config` is absent.

use std::path::{Path, PathBuf};

use biodiv_core::artifacts::GridJson;
use biodiv_core::grid::GridSpec;
use biodiv_core::mixture::FitConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { origin_x: 0.0, origin_y: 0.0, cell_size: 20.0, nx: None, ny: None }
    }
}

impl GridConfig {
    /// Grid dimensions are only mandatory for stages that establish a grid.
    pub fn to_spec(&self) -> Result<GridSpec, CliError> {
        let nx = self.nx.ok_or_else(|| CliError::Config("grid.nx is required".into()))?;
        let ny = self.ny.ok_or_else(|| CliError::Config("grid.ny is required".into()))?;
        GridSpec::new(self.origin_x, self.origin_y, self.cell_size, nx, ny)
            .map_err(CliError::from)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: String,
    pub grid: GridConfig,
    /// Diversity-order grid: `q_points` evenly spaced orders on [0, q_max].
    pub q_max: f64,
    pub q_points: usize,
    pub j: usize,
    pub degree: usize,
    pub smooth_lambda: f64,
    pub quadrature_points: usize,
    /// Number of spatial basis functions kept.
    pub l: usize,
    /// Stems at or below this diameter are dropped during ingest.
    pub min_dbh: f64,
    pub k_grid: Vec<usize>,
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    pub fit: FitConfig,
    pub emit_svg: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: "out".into(),
            grid: GridConfig::default(),
            q_max: 5.0,
            q_points: 101,
            j: 15,
            degree: 3,
            smooth_lambda: biodiv_core::smoothing::SmoothConfig::default().lambda,
            quadrature_points: 501,
            l: 16,
            min_dbh: 5.0,
            k_grid: biodiv_core::selection::default_k_grid(),
            lambda1_grid: biodiv_core::selection::default_lambda_grid(),
            lambda2_grid: biodiv_core::selection::default_lambda_grid(),
            fit: FitConfig::default(),
            emit_svg: false,
            threads: None,
        }
    }
}

impl RunConfig {
    /// Defaults, then the env-var config, then the `--config` file.
    pub fn load(explicit: Option<&Path>) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::default();
        if let Ok(env_path) = std::env::var("BIODIV_ZONER_CONFIG") {
            if explicit.is_none() && !env_path.is_empty() {
                config = Self::read_file(Path::new(&env_path))?;
            }
        }
        if let Some(path) = explicit {
            config = Self::read_file(path)?;
        }
        Ok(config)
    }

    fn read_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        Path::new(&self.output_dir).join(name)
    }

    /// Stage input: explicit flag path wins, otherwise the conventional
    /// artifact name inside the output directory.
    pub fn in_path(&self, flag: &Option<PathBuf>, name: &str) -> PathBuf {
        match flag {
            Some(p) => p.clone(),
            None => self.out_path(name),
        }
    }
}

/// The grid established by `ingest` or `simulate`, persisted so later
/// stages can rebuild centroids without re-reading raw inputs.
pub fn write_grid_json(path: &Path, spec: &GridSpec) -> Result<(), CliError> {
    let json = GridJson {
        origin_x: spec.origin_x,
        origin_y: spec.origin_y,
        cell_size: spec.cell_size,
        nx: spec.nx,
        ny: spec.ny,
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, &json)?;
    Ok(())
}

pub fn read_grid_json(path: &Path) -> Result<GridSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let json: GridJson = serde_json::from_str(&text)?;
    GridSpec::new(json.origin_x, json.origin_y, json.cell_size, json.nx, json.ny)
        .map_err(CliError::from)
}
