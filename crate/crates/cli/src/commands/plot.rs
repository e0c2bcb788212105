use std::path::PathBuf;

use burnscan::dataset::{polygons_in_time_window, DEFAULT_WINDOW_DAYS};
use burnscan::geo::vector_io::load_polygons;
use burnscan::geo::{rasterize_polygons, BinaryMask, Crs, RasterGrid};
use burnscan::ingest::{read_composite, CompositeRaster};
use burnscan::raster_io::read_mask;
use clap::Args;
use image::{Rgb, RgbImage};
use ndarray::{s, Array2, ArrayView2};
use serde_json::json;

use super::{create_parent, output_path, require_exists, Context};
use crate::config::check_window_days;
use crate::error::{CliError, CliResult, DataContext};
use crate::record::{file_record, Recorder};

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Composite GeoTIFF shown in false colour (R = B12, G = B8A, B = B03).
    #[arg(long)]
    pub composite: PathBuf,
    /// Ground truth or reference: a mask GeoTIFF, or burned-area polygons (GeoJSON/shapefile).
    #[arg(long)]
    pub truth: PathBuf,
    /// Model mask GeoTIFF (`predict` output or a mosaic `_burned.tif`).
    #[arg(long)]
    pub pred: PathBuf,
    /// PNG to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Date window applied when the truth is a polygon file.
    #[arg(long)]
    pub window_days: Option<i64>,
    /// EPSG code of a polygon truth file that declares none.
    #[arg(long)]
    pub labels_crs: Option<u32>,
    /// Pixel window `row,col,height,width` of the composite to draw.
    #[arg(long, value_parser = parse_crop)]
    pub crop: Option<Crop>,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Crop {
    row: usize,
    col: usize,
    height: usize,
    width: usize,
}

fn parse_crop(text: &str) -> Result<Crop, String> {
    let v: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [row, col, height, width] if height > 0 && width > 0 => Ok(Crop { row, col, height, width }),
        _ => Err("expected row,col,height,width with positive height and width".into()),
    }
}

const GAP: u32 = 4;
const BURNED: Rgb<u8> = Rgb([255, 255, 255]);
const UNBURNED: Rgb<u8> = Rgb([0, 0, 0]);
const NODATA: Rgb<u8> = Rgb([96, 96, 96]);

/// Mask value under each composite pixel centre: `Some(0|1)` or `None` outside/nodata.
fn resample_mask(mask: &BinaryMask, valid: &BinaryMask, target: &RasterGrid) -> CliResult<Array2<Option<u8>>> {
    let src = mask.grid();
    src.ensure_crs(target.crs()).context("mask")?;
    let mut out = Array2::from_elem(target.shape(), None);
    for ((r, c), v) in out.indexed_iter_mut() {
        let (x, y) = target.pixel_to_world(r as i64, c as i64);
        let (sr, sc) = src.world_to_pixel(x, y).context("mask")?;
        if src.contains_pixel(sr, sc) && valid.data()[[sr as usize, sc as usize]] != 0 {
            *v = Some(mask.data()[[sr as usize, sc as usize]]);
        }
    }
    Ok(out)
}

fn truth_mask(args: &PlotArgs, composite: &CompositeRaster, window_days: i64) -> CliResult<Array2<Option<u8>>> {
    let ext = args.truth.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if matches!(ext.as_deref(), Some("geojson" | "json" | "shp")) {
        let polygons = load_polygons(&args.truth, args.labels_crs.map(Crs)).at(&args.truth)?;
        let matched = polygons_in_time_window(&polygons, composite.sensing_date(), window_days).at(&args.truth)?;
        let mask = rasterize_polygons(&matched, composite.grid()).at(&args.truth)?;
        Ok(mask.data().mapv(Some))
    } else {
        let (mask, valid) = read_mask(&args.truth).at(&args.truth)?;
        resample_mask(&mask, &valid, composite.grid()).map_err(|e| CliError::data(format!("{}: {e}", args.truth.display())))
    }
}

/// Linear 2-98 percentile stretch of the valid pixels to 0..255.
fn stretch(band: ArrayView2<f32>, valid: ArrayView2<u8>) -> Array2<u8> {
    let mut values: Vec<f32> = band.iter().zip(valid).filter(|(_, &ok)| ok != 0).map(|(&v, _)| v).collect();
    if values.is_empty() {
        return Array2::zeros(band.dim());
    }
    values.sort_by(f32::total_cmp);
    let at = |q: f64| values[((values.len() - 1) as f64 * q).round() as usize];
    let (lo, hi) = (at(0.02), at(0.98));
    let span = if hi > lo { hi - lo } else { 1.0 };
    band.mapv(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn plot(args: PlotArgs, ctx: &Context) -> CliResult<()> {
    for (flag, p) in [("--composite", &args.composite), ("--truth", &args.truth), ("--pred", &args.pred)] {
        require_exists(flag, p)?;
    }
    let window_days = args.window_days.or(ctx.config.window_days).unwrap_or(DEFAULT_WINDOW_DAYS);
    check_window_days(window_days)?;
    let out = output_path(args.out.clone(), ctx, "triptych.png")?;
    let composite = read_composite(&args.composite).at(&args.composite)?;
    let (h, w) = composite.grid().shape();
    let crop = args.crop.unwrap_or(Crop { row: 0, col: 0, height: h, width: w });
    if crop.row + crop.height > h || crop.col + crop.width > w {
        return Err(CliError::usage(format!("--crop {crop:?} exceeds the {h}x{w} composite")));
    }
    let truth = truth_mask(&args, &composite, window_days)?;
    let (pred, pred_valid) = read_mask(&args.pred).at(&args.pred)?;
    let pred = resample_mask(&pred, &pred_valid, composite.grid()).map_err(|e| CliError::data(format!("{}: {e}", args.pred.display())))?;

    let rows = crop.row..crop.row + crop.height;
    let cols = crop.col..crop.col + crop.width;
    let valid = composite.valid_mask().data().slice(s![rows.clone(), cols.clone()]);
    let ch = composite.channels();
    let rgb: Vec<Array2<u8>> = [2, 0, 1].iter().map(|&k| stretch(ch.slice(s![k, rows.clone(), cols.clone()]), valid)).collect();
    let (pw, ph) = (crop.width as u32, crop.height as u32);
    let mut img = RgbImage::from_pixel(3 * pw + 2 * GAP, ph, Rgb([255, 255, 255]));
    let mask_colour = |v: Option<u8>| match v {
        Some(1) => BURNED,
        Some(_) => UNBURNED,
        None => NODATA,
    };
    for i in 0..crop.height {
        for j in 0..crop.width {
            let (x, y) = (j as u32, i as u32);
            let colour = if valid[[i, j]] != 0 { Rgb([rgb[0][[i, j]], rgb[1][[i, j]], rgb[2][[i, j]]]) } else { NODATA };
            img.put_pixel(x, y, colour);
            img.put_pixel(pw + GAP + x, y, mask_colour(truth[[crop.row + i, crop.col + j]]));
            img.put_pixel(2 * (pw + GAP) + x, y, mask_colour(pred[[crop.row + i, crop.col + j]]));
        }
    }
    create_parent(&out)?;
    img.save_with_format(&out, image::ImageFormat::Png).at(&out)?;
    println!("triptych written to {}", out.display());
    let mut rec = Recorder::new(
        "plot",
        &json!({"composite": args.composite, "truth": args.truth, "pred": args.pred, "window_days": window_days, "crop": crop}),
    );
    for p in [&args.composite, &args.truth, &args.pred] {
        rec.input(p);
    }
    rec.output(&out);
    rec.write(&file_record(&out))
}
