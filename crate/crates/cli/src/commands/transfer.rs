use std::fs;
use std::path::{Path, PathBuf};

use burnscan::geo::vector_io::load_polygons;
use burnscan::geo::Crs;
use burnscan::raster_io::read_mask;
use burnscan::segmodel::import_weights;
use burnscan::transfer::{
    build_series, compare_reference, infer_region, load_districts, read_mosaic, write_mosaic, CombineRule, InferOptions, MosaicPaths, Period,
    RegionMosaic, TransferError,
};
use clap::Args;
use serde_json::json;

use super::{composite_paths, create_dir, create_parent, load_composites, output_path, require_exists, Context};
use crate::config::check_threshold;
use crate::error::{CliError, CliResult, DataContext};
use crate::record::{dir_record, file_record, Recorder};

const MOSAIC_PREFIX: &str = "mosaic_";

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of composites covering the region.
    #[arg(long)]
    pub composites: PathBuf,
    /// Directory receiving one `mosaic_<period>` triple per period.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Period labels such as 2016 or 2016-03 (repeatable); defaults to the config periods or 2015..2020.
    #[arg(long = "period")]
    pub periods: Vec<String>,
    /// How overlapping predictions merge.
    #[arg(long, value_enum, default_value = "max")]
    pub combine: CombineArg,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum CombineArg {
    Max,
    Mean,
}

pub fn infer(args: InferArgs, ctx: &Context) -> CliResult<()> {
    require_exists("--model", &args.model)?;
    require_exists("--composites", &args.composites)?;
    let threshold = args.threshold.or(ctx.config.threshold).unwrap_or(0.5);
    check_threshold(threshold)?;
    let stride = args.stride.or(ctx.config.stride).unwrap_or(burnscan::dataset::PATCH_SIZE);
    if stride == 0 {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    let periods: Vec<Period> = if args.periods.is_empty() {
        ctx.config.periods.clone().unwrap_or_default().periods()
    } else {
        args.periods
            .iter()
            .map(|p| Period::parse(p).map_err(|e| CliError::usage(format!("--period {p}: {e}"))))
            .collect::<CliResult<_>>()?
    };
    let options = InferOptions {
        threshold,
        stride,
        combine: match args.combine {
            CombineArg::Max => CombineRule::Max,
            CombineArg::Mean => CombineRule::Mean,
        },
        ..Default::default()
    };
    let out = output_path(args.out, ctx, "mosaics")?;
    let model = import_weights(&args.model).at(&args.model)?;
    let paths = composite_paths(&args.composites)?;
    let composites = load_composites(&paths)?;

    let mut rec = Recorder::new(
        "infer",
        &json!({
            "model": args.model,
            "composites": args.composites,
            "periods": periods.iter().map(|p| &p.label).collect::<Vec<_>>(),
            "options": options,
        }),
    );
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for period in &periods {
        let mosaic = match infer_region(&model, &composites, period, &options) {
            Ok(m) => m,
            Err(TransferError::NoCoverage(label)) => {
                log::warn!("period {label}: no composite, skipped");
                skipped.push(label);
                continue;
            }
            Err(e) => return Err(CliError::data(format!("period {}: {e}", period.label))),
        };
        create_dir(&out)?;
        let files = MosaicPaths::new(&out, &format!("{MOSAIC_PREFIX}{}", period.label));
        write_mosaic(&mosaic, &files).at(&out)?;
        println!("{}: burned fraction {:.4} over {} valid pixels", period.label, mosaic.burned_fraction(), mosaic.valid().count_ones());
        rec.outputs(files.all().map(Path::to_path_buf));
        written.push(json!({"period": period.label, "burned_fraction": mosaic.burned_fraction(), "scenes": mosaic.provenance()}));
    }
    if written.is_empty() {
        return Err(CliError::data(format!("{}: no composite falls inside any requested period", args.composites.display())));
    }
    rec.input(&args.model);
    for p in &paths {
        rec.input(p);
        rec.input(&p.with_extension("json"));
    }
    rec.summary(json!({"mosaics": written, "skipped_periods": skipped}));
    rec.write(&dir_record(&out, "infer"))
}

/// Mosaic stems (`mosaic_<period>`) in `dir`, sorted.
fn mosaic_stems(dir: &Path) -> CliResult<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let stem = name.strip_suffix(".json")?;
            (stem.starts_with(MOSAIC_PREFIX) && dir.join(format!("{stem}_prob.tif")).is_file()).then(|| stem.to_string())
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::data(format!("{}: no mosaics written by `infer`", dir.display())));
    }
    Ok(stems)
}

fn load_mosaic(dir: &Path, stem: &str, rec: &mut Recorder) -> CliResult<RegionMosaic> {
    let files = MosaicPaths::new(dir, stem);
    let mosaic = read_mosaic(&files).context(&format!("mosaic {}", dir.join(stem).display()))?;
    for p in files.all() {
        rec.input(p);
    }
    Ok(mosaic)
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// Directory of mosaics written by `infer`.
    #[arg(long)]
    pub mosaics: PathBuf,
    /// District GeoJSON (properties district, settlement, established, total_refugees).
    #[arg(long)]
    pub districts: Option<PathBuf>,
    /// Region outline (exactly one polygon), reported as the control zone.
    #[arg(long)]
    pub region: Option<PathBuf>,
    /// EPSG code for vector files that declare none.
    #[arg(long)]
    pub crs: Option<u32>,
    /// Series CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn series(args: SeriesArgs, ctx: &Context) -> CliResult<()> {
    require_exists("--mosaics", &args.mosaics)?;
    let districts_path = args
        .districts
        .or_else(|| ctx.config.districts.clone())
        .ok_or_else(|| CliError::usage("--districts is required when the config sets none"))?;
    let region_path = args
        .region
        .or_else(|| ctx.config.region.clone())
        .ok_or_else(|| CliError::usage("--region is required when the config sets none"))?;
    require_exists("--districts", &districts_path)?;
    require_exists("--region", &region_path)?;
    let out = output_path(args.out, ctx, "series.csv")?;
    let crs = args.crs.map(Crs);
    let districts = load_districts(&districts_path, crs).at(&districts_path)?;
    let mut regions = load_polygons(&region_path, crs).at(&region_path)?;
    if regions.len() != 1 {
        return Err(CliError::data(format!("{}: expected exactly one region polygon, found {}", region_path.display(), regions.len())));
    }
    let region = regions.remove(0);
    let mut rec = Recorder::new("series", &json!({"mosaics": args.mosaics, "districts": districts_path, "region": region_path}));
    let mosaics: Vec<RegionMosaic> = mosaic_stems(&args.mosaics)?
        .iter()
        .map(|s| load_mosaic(&args.mosaics, s, &mut rec))
        .collect::<CliResult<_>>()?;
    let series = build_series(&mosaics, &districts, &region).context("series")?;
    create_parent(&out)?;
    series.write_csv(&out).at(&out)?;
    println!("{} rows for {} periods written to {}", series.rows.len(), mosaics.len(), out.display());
    rec.input(&districts_path);
    rec.input(&region_path);
    rec.output(&out);
    rec.summary(json!({"rows": series.rows.len()}));
    rec.write(&file_record(&out))
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory of mosaics written by `infer`.
    #[arg(long)]
    pub mosaics: PathBuf,
    /// Period label; optional when the directory holds a single mosaic.
    #[arg(long)]
    pub period: Option<String>,
    /// Reference burned-area mask GeoTIFF (uint8 {0, 1}, nodata 255).
    #[arg(long)]
    pub reference: PathBuf,
    /// Comparison report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn compare(args: CompareArgs, ctx: &Context) -> CliResult<()> {
    require_exists("--mosaics", &args.mosaics)?;
    require_exists("--reference", &args.reference)?;
    let out = output_path(args.out, ctx, "comparison.json")?;
    let stems = mosaic_stems(&args.mosaics)?;
    let stem = match &args.period {
        Some(p) => {
            let stem = format!("{MOSAIC_PREFIX}{p}");
            if !stems.contains(&stem) {
                return Err(CliError::data(format!("{}: no mosaic for period {p}", args.mosaics.display())));
            }
            stem
        }
        None if stems.len() == 1 => stems[0].clone(),
        None => return Err(CliError::usage(format!("--period is required: {} holds {} mosaics", args.mosaics.display(), stems.len()))),
    };
    let mut rec = Recorder::new("compare", &json!({"mosaics": args.mosaics, "mosaic": stem, "reference": args.reference}));
    let mosaic = load_mosaic(&args.mosaics, &stem, &mut rec)?;
    let (reference, valid) = read_mask(&args.reference).at(&args.reference)?;
    let report = compare_reference(&mosaic, &reference, Some(&valid)).context("comparison")?;
    create_parent(&out)?;
    report.write_json(&out).at(&out)?;
    println!(
        "{}: both {:.3} km2, ours only {:.3} km2, reference only {:.3} km2 over {} pixels",
        report.period, report.agree_burned_km2, report.ours_only_km2, report.reference_only_km2, report.total_pixels
    );
    rec.input(&args.reference);
    rec.output(&out);
    rec.summary(json!({"agree_burned": report.agree_burned, "ours_only": report.ours_only, "reference_only": report.reference_only}));
    rec.write(&file_record(&out))
}
