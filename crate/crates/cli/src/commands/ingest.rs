use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use burnscan::geo::{Crs, Polygon};
use burnscan::ingest::{build_catalog, composite, write_composite, Band, SceneRef, SkipReport};
use burnscan::raster_io::read_header;
use chrono::NaiveDate;
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{create_dir, output_path, Context};
use crate::error::{CliError, CliResult, DataContext};
use crate::record::{dir_record, file_record, Recorder};

#[derive(Debug, Args)]
pub struct CatalogArgs {
    /// Directory of granules (defaults to the config data_root or BURNSCAN_DATA_ROOT).
    #[arg(long, env = "BURNSCAN_DATA_ROOT")]
    pub root: Option<PathBuf>,
    /// Catalog JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    /// Catalog JSON written by `catalog`.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Directory receiving `<scene_id>.tif` composites and their JSON sidecars.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogEntry {
    scene_id: String,
    sensing_date: NaiveDate,
    crs: String,
    bands: BTreeMap<Band, PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogFile {
    scenes: Vec<CatalogEntry>,
    skipped: Vec<SkipReport>,
}

pub fn catalog(args: CatalogArgs, ctx: &Context) -> CliResult<()> {
    let root = args
        .root
        .or_else(|| ctx.config.data_root.clone())
        .ok_or_else(|| CliError::usage("no data root: pass --root, set data_root in the config or BURNSCAN_DATA_ROOT"))?;
    let out = output_path(args.out, ctx, "catalog.json")?;
    let catalog = build_catalog(&root).at(&root)?;
    for s in &catalog.skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    let mut rec = Recorder::new("catalog", &json!({"root": root}));
    for s in &catalog.scenes {
        for p in s.band_paths.values() {
            rec.input(p);
        }
    }
    let file = CatalogFile {
        scenes: catalog
            .scenes
            .iter()
            .map(|s| CatalogEntry {
                scene_id: s.scene_id.clone(),
                sensing_date: s.sensing_date,
                crs: s.crs.to_string(),
                bands: s.band_paths.clone(),
            })
            .collect(),
        skipped: catalog.skipped,
    };
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&out, text + "\n").at(&out)?;
    println!("{} scenes catalogued, {} skipped", file.scenes.len(), file.skipped.len());
    rec.output(&out);
    rec.summary(json!({"scenes": file.scenes.len(), "skipped": file.skipped.len()}));
    rec.write(&file_record(&out))
}

fn scene_ref(entry: CatalogEntry) -> CliResult<SceneRef> {
    let crs = Crs::parse(&entry.crs).ok_or_else(|| CliError::data(format!("scene {}: unrecognised crs {:?}", entry.scene_id, entry.crs)))?;
    let b8a = entry
        .bands
        .get(&Band::B8A)
        .ok_or_else(|| CliError::data(format!("scene {}: no B8A band in the catalog", entry.scene_id)))?;
    let (grid, _) = read_header(b8a).at(b8a)?;
    let (x0, y0, x1, y1) = grid.extent();
    let footprint = Polygon::rectangle(crs, x0, y0, x1, y1).at(b8a)?;
    Ok(SceneRef {
        scene_id: entry.scene_id,
        sensing_date: entry.sensing_date,
        band_paths: entry.bands,
        crs,
        footprint,
    })
}

pub fn composite_cmd(args: CompositeArgs, ctx: &Context) -> CliResult<()> {
    let text = fs::read_to_string(&args.catalog).at(&args.catalog)?;
    let file: CatalogFile = serde_json::from_str(&text).at(&args.catalog)?;
    let out = output_path(args.out, ctx, "composites")?;
    let scenes: Vec<SceneRef> = file.scenes.into_iter().map(scene_ref).collect::<CliResult<_>>()?;
    if scenes.is_empty() {
        return Err(CliError::data(format!("{}: catalog lists no scenes", args.catalog.display())));
    }
    create_dir(&out)?;
    let mut rec = Recorder::new("composite", &json!({"catalog": args.catalog}));
    rec.input(&args.catalog);
    let written: Vec<Vec<PathBuf>> = scenes
        .par_iter()
        .map(|s| {
            let c = composite(s).context(&format!("scene {}", s.scene_id))?;
            let path = out.join(format!("{}.tif", s.scene_id));
            write_composite(&path, &c).at(&path)?;
            log::info!("{}: {} of {} pixels valid", s.scene_id, c.valid_mask().count_ones(), c.grid().width() * c.grid().height());
            Ok(vec![path.clone(), path.with_extension("json")])
        })
        .collect::<CliResult<_>>()?;
    for s in &scenes {
        for p in s.band_paths.values() {
            rec.input(p);
        }
    }
    rec.outputs(written.into_iter().flatten());
    println!("{} composites written to {}", scenes.len(), out.display());
    rec.summary(json!({"composites": scenes.len()}));
    rec.write(&dir_record(&out, "composite"))
}
