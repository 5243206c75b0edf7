//! Command-line surface. Global flags override config-file keys; stage
//! flags override both.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "biodiv-zoner",
    version,
    about = "Functional biodiversity zoning from mapped stem censuses",
    propagate_version = true
)]
pub struct Cli {
    /// JSON config file; defaults to $BIODIV_ZONER_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for this run's artifacts.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Worker-thread cap for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write SVG maps/plots where the stage supports them.
    #[arg(long, global = true)]
    pub emit_svg: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse stem censuses, keep alive trees, bin them to the grid
    Ingest(IngestArgs),
    /// Turn per-cell abundances into diversity profiles over q
    Profiles(ProfilesArgs),
    /// Fit each profile as a constrained smooth curve
    Smooth(SmoothArgs),
    /// Empirical trace-variogram of the fitted curves
    Variogram(VariogramArgs),
    /// Spatial basis from the bending-energy eigenproblem
    Basis(BasisArgs),
    /// Penalized mixture fit at fixed K and penalties
    Fit(FitArgs),
    /// Grid search over K and penalties, scored by BIC and ICL
    Select(SelectArgs),
    /// Zoning outputs from a stored model: labels, priors, mean profiles
    Zone(ZoneArgs),
    /// Synthetic abundances with known zone labels
    Simulate(SimulateArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// Primary census CSV.
    #[arg(long)]
    pub census: PathBuf,
    /// Substitute census merged in over the masked region.
    #[arg(long)]
    pub fallback: Option<PathBuf>,
    /// Region mask CSV (x_index,y_index) gating fallback rows.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Keep stems with diameter strictly above this, in cm.
    #[arg(long)]
    pub min_dbh: Option<f64>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    #[arg(long)]
    pub origin_x: Option<f64>,
    #[arg(long)]
    pub origin_y: Option<f64>,
}

#[derive(Args)]
pub struct ProfilesArgs {
    /// Abundance CSV; defaults to <out>/abundance.csv.
    #[arg(long)]
    pub abundance: Option<PathBuf>,
}

#[derive(Args)]
pub struct SmoothArgs {
    /// Profile-points CSV; defaults to <out>/profile_points.csv.
    #[arg(long)]
    pub points: Option<PathBuf>,
}

#[derive(Args)]
pub struct VariogramArgs {
    /// Coefficients CSV; defaults to <out>/coefficients.csv.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long)]
    pub max_lag: Option<f64>,
}

#[derive(Args)]
pub struct BasisArgs {
    /// Coefficients CSV naming the cells to build the basis on.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    /// Number of basis functions kept.
    #[arg(long)]
    pub l: Option<usize>,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Number of mixture components.
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Freeze mixing proportions at uniform instead of the spatial prior.
    #[arg(long)]
    pub no_spatial: bool,
}

#[derive(Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Comma-separated K values, e.g. 2,3,4,5,6.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda1_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda2_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ZoneArgs {
    /// Stored model JSON; defaults to <out>/model.json.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Known labels CSV; when given, the summary reports the adjusted
    /// Rand index of the zoning against it.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario JSON; omitted means the built-in three-zone scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides stems per cell.
    #[arg(long)]
    pub stems: Option<u64>,
}
