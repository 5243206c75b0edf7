//! One error type for the whole binary. Every failure is reported on
//! stderr as a single JSON object `{"error": kind, "message": text}` so
//! wrapper scripts can branch without parsing prose.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Census(#[from] biodiv_core::census::CensusError),
    #[error(transparent)]
    Diversity(#[from] biodiv_core::diversity::DiversityError),
    #[error(transparent)]
    Smooth(#[from] biodiv_core::smoothing::SmoothError),
    #[error(transparent)]
    Variogram(#[from] biodiv_core::variogram::VariogramError),
    #[error(transparent)]
    Spatial(#[from] biodiv_core::spatial::SpatialError),
    #[error(transparent)]
    Mixture(#[from] biodiv_core::mixture::MixtureError),
    #[error(transparent)]
    Selection(#[from] biodiv_core::selection::SelectionError),
    #[error(transparent)]
    Synth(#[from] biodiv_core::synth::SynthError),
    #[error(transparent)]
    Artifact(#[from] biodiv_core::artifacts::ArtifactError),
    #[error(transparent)]
    Grid(#[from] biodiv_core::grid::GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Census(e) => e.kind(),
            CliError::Diversity(e) => e.kind(),
            CliError::Smooth(e) => e.kind(),
            CliError::Variogram(e) => e.kind(),
            CliError::Spatial(e) => e.kind(),
            CliError::Mixture(e) => e.kind(),
            CliError::Selection(e) => e.kind(),
            CliError::Synth(e) => e.kind(),
            CliError::Artifact(e) => e.kind(),
            CliError::Grid(e) => e.kind(),
            CliError::Io(_) => "Io",
            CliError::Json(_) => "Json",
            CliError::Config(_) => "Config",
            CliError::Input(_) => "Input",
        }
    }
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
}

pub fn report(err: &CliError) {
    let body = ErrorJson { error: err.kind(), message: err.to_string() };
    let text = serde_json::to_string(&body)
        .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", err.kind()));
    eprintln!("{text}");
}
