use std::path::PathBuf;

use burnscan::dataset::store::MANIFEST_FILE;
use burnscan::dataset::{
    generate_synthetic_scene, label_composite, split_dataset, write_store, write_synthetic_granule, DatasetManifest, ExtractOptions, ExtractStats,
    PatchRecord, Protocol, SplitUnit, SyntheticSceneSpec, DEFAULT_TRAIN_RATIO, DEFAULT_WINDOW_DAYS, PATCH_SIZE,
};
use burnscan::geo::vector_io::{load_polygons, write_geojson};
use burnscan::geo::{BinaryMask, Crs, Polygon, RasterGrid};
use burnscan::raster_io::write_mask;
use chrono::NaiveDate;
use clap::Args;
use serde_json::json;

use super::{composite_paths, create_dir, load_composites, output_path, require_exists, Context};
use crate::config::{check_unit, check_window_days};
use crate::error::{CliError, CliResult, DataContext};
use crate::record::{dir_record, Recorder};

pub const DEFAULT_SPLIT_SEED: u64 = 42;

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of composites written by `composite`.
    #[arg(long)]
    pub composites: PathBuf,
    /// Burned-area polygons with a `fire_date` attribute (GeoJSON or shapefile).
    #[arg(long)]
    pub labels: PathBuf,
    /// EPSG code of the label file when it declares none.
    #[arg(long)]
    pub labels_crs: Option<u32>,
    /// Patch store directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Maximum days between a fire and the image date.
    #[arg(long)]
    pub window_days: Option<i64>,
    /// Keep patches whose burned fraction exceeds this value.
    #[arg(long, default_value_t = 0.0)]
    pub min_burned_fraction: f64,
    /// Keep unburned patches too (hand-label stores).
    #[arg(long)]
    pub keep_unburned: bool,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "patch")]
    pub split_unit: SplitUnitArg,
    /// Domain tag stored in the manifest ("source", "transfer").
    #[arg(long, default_value = "source")]
    pub domain: String,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitUnitArg {
    Patch,
    Scene,
}

pub fn extract(args: ExtractArgs, ctx: &Context) -> CliResult<()> {
    require_exists("--composites", &args.composites)?;
    require_exists("--labels", &args.labels)?;
    let cfg = &ctx.config;
    let stride = args.stride.or(cfg.stride).unwrap_or(PATCH_SIZE);
    if stride == 0 {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    let window_days = args.window_days.or(cfg.window_days).unwrap_or(DEFAULT_WINDOW_DAYS);
    check_window_days(window_days)?;
    let train_ratio = args.train_ratio.or(cfg.train_ratio).unwrap_or(DEFAULT_TRAIN_RATIO);
    check_unit("train_ratio", train_ratio)?;
    check_unit("min_burned_fraction", args.min_burned_fraction)?;
    let split_seed = args.split_seed.or(cfg.split_seed).unwrap_or(DEFAULT_SPLIT_SEED);
    let split_unit = match args.split_unit {
        SplitUnitArg::Patch => SplitUnit::Patch,
        SplitUnitArg::Scene => SplitUnit::Scene,
    };
    let out = output_path(args.out, ctx, "store")?;

    let polygons = load_polygons(&args.labels, args.labels_crs.map(Crs)).at(&args.labels)?;
    let paths = composite_paths(&args.composites)?;
    let composites = load_composites(&paths)?;
    let options = ExtractOptions {
        stride,
        window_days,
        min_burned_fraction: args.min_burned_fraction,
        keep_unburned: args.keep_unburned,
    };
    let mut patches = Vec::new();
    let mut total = ExtractStats::default();
    for c in &composites {
        let (p, stats) = label_composite(c, &polygons, &options).context(&format!("composite {}", c.scene_id()))?;
        patches.extend(p);
        total.windows += stats.windows;
        total.dropped_invalid += stats.dropped_invalid;
        total.dropped_unburned += stats.dropped_unburned;
        total.kept += stats.kept;
    }
    let protocol = Protocol {
        stride,
        window_days,
        min_burned_fraction: args.min_burned_fraction,
        split_unit,
        train_ratio,
        domain: args.domain.clone(),
    };
    let records: Vec<PatchRecord> = patches.iter().map(PatchRecord::from_patch).collect();
    let manifest = split_dataset(&DatasetManifest::new(records, protocol.clone()), train_ratio, split_seed, split_unit).context("split")?;
    create_dir(&out)?;
    let written = write_store(&out, &manifest, &patches).at(&out)?;
    println!(
        "{} windows: {} dropped for invalid pixels, {} unburned, {} kept (train {}, test {})",
        total.windows, total.dropped_invalid, total.dropped_unburned, total.kept, written.counts.train, written.counts.test
    );

    let mut rec = Recorder::new(
        "extract",
        &json!({
            "composites": args.composites,
            "labels": args.labels,
            "protocol": protocol,
            "split_seed": split_seed,
            "keep_unburned": args.keep_unburned,
        }),
    );
    rec.input(&args.labels);
    for p in &paths {
        rec.input(p);
        rec.input(&p.with_extension("json"));
    }
    rec.output(&out.join(MANIFEST_FILE));
    for r in &written.records {
        rec.output(&out.join("patches").join(format!("{}_img.tif", r.patch_id)));
        rec.output(&out.join("patches").join(format!("{}_label.tif", r.patch_id)));
    }
    rec.summary(json!({"stats": total, "counts": written.counts, "checksum": written.checksum}));
    rec.write(&dir_record(&out, "extract"))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene side in pixels.
    #[arg(long, default_value_t = 1280)]
    pub size: usize,
    /// Burn polygons per scene.
    #[arg(long, default_value_t = 12)]
    pub burns: usize,
    /// Number of scenes, laid side by side west to east.
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    /// Sensing date of every scene.
    #[arg(long, default_value = "2016-09-01")]
    pub date: NaiveDate,
    /// Number of districts the region is cut into (vertical strips).
    #[arg(long, default_value_t = 4)]
    pub districts: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reference product pixel size in metres.
const REFERENCE_PIXEL: f64 = 500.0;

pub fn synth(args: SynthArgs, ctx: &Context) -> CliResult<()> {
    if args.size < PATCH_SIZE {
        return Err(CliError::usage(format!("--size must be at least {PATCH_SIZE}")));
    }
    if args.scenes == 0 || args.districts == 0 {
        return Err(CliError::usage("--scenes and --districts must be at least 1"));
    }
    let seed = ctx.seed.unwrap_or(0);
    let out = output_path(args.out, ctx, "synth")?;
    create_dir(&out)?;
    let mut outputs = Vec::new();
    let mut burns = Vec::new();
    let mut grids: Vec<RasterGrid> = Vec::new();
    for k in 0..args.scenes {
        let mut spec = SyntheticSceneSpec::new(args.size, args.burns, seed + k as u64);
        spec.sensing_date = args.date;
        spec.origin.0 += (k * args.size) as f64 * spec.pixel_size;
        let (scene, polys) = generate_synthetic_scene(&spec).context("synthetic scene")?;
        let dir = out.join("granules").join(&spec.scene_id);
        outputs.extend(write_synthetic_granule(&dir, &scene).at(&dir)?);
        grids.push(scene.grid().clone());
        burns.extend(polys);
    }
    let crs = grids[0].crs();
    let (x0, y0, x1, y1) = grids.iter().map(RasterGrid::extent).fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), (x0, y0, x1, y1)| (a.min(x0), b.min(y0), c.max(x1), d.max(y1)),
    );

    let labels = out.join("labels.geojson");
    write_geojson(&labels, &burns).at(&labels)?;
    let region = out.join("region.geojson");
    let region_poly = Polygon::rectangle(crs, x0, y0, x1, y1).context("region")?.with_attribute("name", "synthetic region");
    write_geojson(&region, &[region_poly]).at(&region)?;

    let n = args.districts;
    let strip = (x1 - x0) / n as f64;
    let districts: Vec<Polygon> = (0..n)
        .map(|k| {
            let left = x0 + strip * k as f64;
            let right = if k + 1 == n { x1 } else { x0 + strip * (k + 1) as f64 };
            Polygon::rectangle(crs, left, y0, right, y1).map(|p| {
                p.with_attribute("district", format!("District {}", k + 1))
                    .with_attribute("settlement", format!("Settlement {}", k + 1))
                    .with_attribute("established", "2016")
                    .with_attribute("total_refugees", format!("{}", 1000 * (k + 1)))
            })
        })
        .collect::<Result<_, _>>()
        .context("districts")?;
    let districts_path = out.join("districts.geojson");
    write_geojson(&districts_path, &districts).at(&districts_path)?;

    // The coarse reference product that detected nothing.
    let rw = ((x1 - x0) / REFERENCE_PIXEL).ceil() as usize;
    let rh = ((y1 - y0) / REFERENCE_PIXEL).ceil() as usize;
    let rgrid = grids[0].with_resolution(REFERENCE_PIXEL, -REFERENCE_PIXEL, rw, rh).context("reference grid")?;
    let reference = out.join("reference_500m.tif");
    write_mask(&reference, &BinaryMask::zeros(rgrid), None).at(&reference)?;

    outputs.extend([labels, region, districts_path, reference]);
    println!("{} scenes, {} burn polygons written to {}", args.scenes, burns.len(), out.display());
    let mut rec = Recorder::new(
        "synth",
        &json!({"size": args.size, "burns": args.burns, "scenes": args.scenes, "seed": seed, "date": args.date, "districts": n}),
    );
    rec.outputs(outputs);
    rec.summary(json!({"burn_polygons": burns.len()}));
    rec.write(&dir_record(&out, "synth"))
}
