use std::fs;
use std::path::{Path, PathBuf};

use burnscan::ingest::{read_composite, CompositeRaster};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, DataContext};

pub mod dataset;
pub mod ingest;
pub mod model;
pub mod plot;
pub mod transfer;

/// Settings shared by every subcommand.
pub struct Context {
    pub config: RunConfig,
    pub seed: Option<u64>,
}

/// `--out` if given, else `<output_root>/<default>` from the config.
pub fn output_path(flag: Option<PathBuf>, ctx: &Context, default: &str) -> CliResult<PathBuf> {
    flag.or_else(|| ctx.config.output_root.as_ref().map(|r| r.join(default)))
        .ok_or_else(|| CliError::usage("--out is required when the config sets no output_root"))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).at(dir)
}

pub fn create_parent(file: &Path) -> CliResult<()> {
    match file.parent() {
        Some(p) => create_dir(p),
        None => Ok(()),
    }
}

pub fn require_exists(flag: &str, path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{flag}: {} does not exist", path.display())))
    }
}

/// Composite GeoTIFFs (with JSON sidecars) in `dir`, sorted by file name.
pub fn composite_paths(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "tif") && p.with_extension("json").is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::data(format!("{}: no composites (<name>.tif with <name>.json)", dir.display())));
    }
    Ok(paths)
}

pub fn load_composites(paths: &[PathBuf]) -> CliResult<Vec<CompositeRaster>> {
    paths.iter().map(|p| read_composite(p).at(p)).collect()
}
