mod cliargs;
mod config;
mod error;
mod stages;
mod svg;

use std::time::Instant;

use clap::Parser;
use serde_json::{json, Value};

use crate::cliargs::{Cli, Command};
use crate::config::RunConfig;
use crate::error::CliError;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        error::report(&e);
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if cli.emit_svg {
        config.emit_svg = true;
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    if let Some(t) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&config.output_dir)?;

    let start = Instant::now();
    let (name, mut summary) = match &cli.command {
        Command::Ingest(a) => ("ingest", stages::ingest(&config, a)?),
        Command::Profiles(a) => ("profiles", stages::profiles(&config, a)?),
        Command::Smooth(a) => ("smooth", stages::smooth(&config, a)?),
        Command::Variogram(a) => ("variogram", stages::variogram(&config, a)?),
        Command::Basis(a) => ("basis", stages::basis(&config, a)?),
        Command::Fit(a) => ("fit", stages::fit(&config, a)?),
        Command::Select(a) => ("select", stages::select(&config, a)?),
        Command::Zone(a) => ("zone", stages::zone(&config, a)?),
        Command::Simulate(a) => ("simulate", stages::simulate(&config, a)?),
    };
    let elapsed_ms = start.elapsed().as_millis() as u64;
    if let Value::Object(map) = &mut summary {
        map.insert("stage".into(), json!(name));
        map.insert("elapsed_ms".into(), json!(elapsed_ms));
    }
    let spath = config.out_path(&format!("{name}_summary.json"));
    let file = std::fs::File::create(&spath)?;
    serde_json::to_writer_pretty(file, &summary)?;
    println!("{name}: done in {elapsed_ms} ms, artifacts in {}", config.output_dir);
    Ok(())
}
