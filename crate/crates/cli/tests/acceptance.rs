//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to the
//! real stdout (bypassing the test harness capture) and asserts the outcome.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use burnscan::dataset::{
    extract_windows, generate_synthetic_scene, label_composite, polygons_in_time_window, split_dataset, synthetic_patch_set, DatasetManifest,
    ExtractOptions, LabeledPatch, PatchRecord, Protocol, SplitTag, SplitUnit, SyntheticSceneSpec,
};
use burnscan::geo::{rasterize_polygons, BinaryMask, Crs, GeoTransform, Polygon, RasterGrid};
use burnscan::ingest::{resample_b03_to_20m, Band, BandRaster};
use burnscan::metrics::{evaluate, PairCounts, PatchPredictor, PatchScore};
use burnscan::segmodel::ops::Tensor;
use burnscan::segmodel::{
    carve_holdout, export_weights, import_weights, loss_and_grad, train, LossKind, Mode, ModelConfig, ModelError, Network, SegmentationModel,
};
use burnscan::transfer::{build_series, compare_reference, infer_region, DistrictConfig, Established, InferOptions, Period, RegionMosaic, REGION_CONTROL};
use chrono::{Duration as Days, NaiveDate};
use ndarray::{Array2, Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n} ({name}): {} | {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "criterion {n} failed: {detail}");
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Array2<u8> {
    Array2::from_shape_fn((h, w), |_| u8::from(rng.gen_bool(p)))
}

/// Double-loop pixel counter: (pred positives, gt positives, intersection).
fn brute_counts(pred: &Array2<u8>, gt: &Array2<u8>) -> (u64, u64, u64) {
    let (mut p, mut g, mut i) = (0u64, 0u64, 0u64);
    for r in 0..pred.nrows() {
        for c in 0..pred.ncols() {
            let (a, b) = (pred[[r, c]] == 1, gt[[r, c]] == 1);
            p += a as u64;
            g += b as u64;
            i += (a && b) as u64;
        }
    }
    (p, g, i)
}

#[test]
fn criterion_01_metric_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    for k in 0..200 {
        let (h, w) = (rng.gen_range(16..=64), rng.gen_range(16..=64));
        let (dp, dg) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let pred = random_mask(&mut rng, h, w, dp);
        let gt = random_mask(&mut rng, h, w, dg);
        let (p, g, i) = brute_counts(&pred, &gt);
        let c = PairCounts::from_arrays(pred.view(), gt.view()).unwrap();
        let union = p + g - i;
        let (iou, dice) = if union == 0 { (1.0, 1.0) } else { (i as f64 / union as f64, 2.0 * i as f64 / (p + g) as f64) };
        let grid = RasterGrid::new(Crs(32629), GeoTransform::north_up(0.0, 0.0, 20.0, -20.0), w, h).unwrap();
        let pm = BinaryMask::new(grid.clone(), pred).unwrap();
        let gm = BinaryMask::new(grid, gt).unwrap();
        let api = (burnscan::metrics::iou(&pm, &gm).unwrap(), burnscan::metrics::dice(&pm, &gm).unwrap());
        let counts_ok = (c.pred_positive, c.gt_positive, c.intersection) == (p, g, i);
        let values_ok = (api.0 - iou).abs() <= 1e-12 && (api.1 - dice).abs() <= 1e-12 && c.iou() == api.0 && c.dice() == api.1;
        if !(counts_ok && values_ok) {
            failures.push(k);
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "metric oracle equivalence",
        failures.is_empty() && elapsed < Duration::from_secs(10),
        &format!("200 pairs, mismatches {failures:?}, {:.2}s (limit 10s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_dice_iou_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut tested, mut worst, mut order_ok) = (0, 0.0f64, true);
    while tested < 1000 {
        let (h, w) = (rng.gen_range(1..=48), rng.gen_range(1..=48));
        let (dp, dg) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let pred = random_mask(&mut rng, h, w, dp);
        let gt = random_mask(&mut rng, h, w, dg);
        let c = PairCounts::from_arrays(pred.view(), gt.view()).unwrap();
        if c.is_empty_pair() {
            continue;
        }
        tested += 1;
        let (iou, dice) = (c.iou(), c.dice());
        worst = worst.max((dice - 2.0 * iou / (1.0 + iou)).abs());
        order_ok &= iou <= dice;
    }
    let mut pred = Array2::<u8>::zeros((128, 128));
    pred.slice_mut(ndarray::s![10..30, 40..90]).fill(1);
    let empty = Array2::<u8>::zeros((128, 128));
    let s = PatchScore::score("fp-only", pred.view(), empty.view()).unwrap();
    let pathology = s.iou == 0.0 && s.dice == 0.0 && !s.empty_pair;
    report(
        2,
        "dice-iou identity",
        worst <= 1e-12 && order_ok && pathology,
        &format!("1000 pairs, max |dice - 2iou/(1+iou)| = {worst:e}, iou <= dice: {order_ok}; prediction vs empty truth: iou {} dice {}", s.iou, s.dice),
    );
}

/// Even-odd point-in-polygon over all rings, written independently of the rasterizer.
fn point_in_rings(rings: &[Vec<(f64, f64)>], x: f64, y: f64) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = ring[i];
            let (xj, yj) = ring[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
    }
    inside
}

fn random_polygon(rng: &mut ChaCha8Rng, grid: &RasterGrid) -> Polygon {
    let (x0, y0, x1, y1) = grid.extent();
    let (cx, cy) = (rng.gen_range(x0..x1), rng.gen_range(y0..y1));
    let r = rng.gen_range(20.0..(x1 - x0).max(40.0));
    let n = rng.gen_range(3..16);
    let snap = rng.gen_bool(0.3);
    let mut ring: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * (k as f64 + rng.gen_range(0.0..0.9)) / n as f64;
            let rr = r * rng.gen_range(0.2..1.0);
            let (x, y) = (cx + rr * a.cos(), cy + rr * a.sin());
            if snap {
                // Vertices on pixel centres stress the boundary rule.
                ((x / 20.0).floor() * 20.0 + 10.0, (y / 20.0).floor() * 20.0 + 10.0)
            } else {
                (x, y)
            }
        })
        .collect();
    ring.push(ring[0]);
    let hole = if rng.gen_bool(0.3) {
        let hr = r * 0.15;
        let mut h: Vec<(f64, f64)> = (0..6).map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 6.0;
            (cx + hr * a.cos(), cy + hr * a.sin())
        }).collect();
        h.push(h[0]);
        vec![h]
    } else {
        vec![]
    };
    Polygon::new(grid.crs(), ring.clone(), hole.clone()).or_else(|_| Polygon::new(grid.crs(), ring, vec![])).unwrap()
}

#[test]
fn criterion_03_rasterization_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatched = 0usize;
    let mut covered = 0usize;
    let mut count = 0;
    while count < 50 {
        let (h, w) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let grid = RasterGrid::new(Crs(32629), GeoTransform::north_up(1000.0, 9000.0, 20.0, -20.0), w, h).unwrap();
        let poly = random_polygon(&mut rng, &grid);
        count += 1;
        let mask = rasterize_polygons(std::slice::from_ref(&poly), &grid).unwrap();
        let rings: Vec<Vec<(f64, f64)>> = poly.rings().cloned().collect();
        for r in 0..h {
            for c in 0..w {
                let (x, y) = grid.pixel_to_world(r as i64, c as i64);
                let want = point_in_rings(&rings, x, y);
                covered += want as usize;
                if (mask.data()[[r, c]] == 1) != want {
                    mismatched += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        3,
        "rasterization oracle",
        mismatched == 0 && elapsed < Duration::from_secs(30),
        &format!("50 polygons, {covered} inside pixels, {mismatched} mismatches, {:.2}s (limit 30s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_04_patch_pipeline() {
    let spec = SyntheticSceneSpec::new(1280, 12, 7);
    let (scene, burns) = generate_synthetic_scene(&spec).unwrap();
    let windows = extract_windows(scene.grid(), scene.scene_id(), 128).unwrap().len();
    let keep_all = ExtractOptions {
        keep_unburned: true,
        ..Default::default()
    };
    let (_, stats) = label_composite(&scene, &burns, &keep_all).unwrap();

    let date = NaiveDate::from_ymd_opt(2016, 9, 1).unwrap();
    let square = |k: f64| Polygon::rectangle(Crs(32629), k, 0.0, k + 10.0, 10.0).unwrap();
    let dated = vec![
        square(0.0).with_fire_date(date),
        square(20.0).with_fire_date(date - Days::days(90)),
        square(40.0).with_fire_date(date - Days::days(91)),
    ];
    let matched = polygons_in_time_window(&dated, date, 90).unwrap();
    let kept: Vec<f64> = matched.iter().map(|p| p.bbox().0).collect();
    let window_ok = kept == [0.0, 20.0];

    let records: Vec<PatchRecord> = (0..2704)
        .map(|i| PatchRecord {
            patch_id: format!("p{i:05}"),
            scene_id: format!("s{}", i % 37),
            row_off: 0,
            col_off: 0,
            sensing_date: date,
            burned_fraction: 0.2,
            split: SplitTag::Unassigned,
        })
        .collect();
    let m = DatasetManifest::new(records, Protocol::default());
    let a = split_dataset(&m, 0.7, 42, SplitUnit::Patch).unwrap();
    let b = split_dataset(&m, 0.7, 42, SplitUnit::Patch).unwrap();
    let ok = windows == 100 && stats.windows == 100 && window_ok && (a.counts.train, a.counts.test) == (1892, 812) && a == b;
    report(
        4,
        "patch pipeline",
        ok,
        &format!(
            "{windows} windows ({} labeled); day-0/90/91 kept {:?}; split {}/{} reproducible: {}",
            stats.windows,
            kept,
            a.counts.train,
            a.counts.test,
            a == b
        ),
    );
}

#[test]
fn criterion_05_resampling_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (2 * rng.gen_range(1..=100), 2 * rng.gen_range(1..=100));
        let data = Array2::from_shape_fn((h, w), |_| rng.gen_range(1u16..=10000));
        let grid = RasterGrid::new(Crs(32629), GeoTransform::north_up(0.0, 0.0, 10.0, -10.0), w, h).unwrap();
        let out = resample_b03_to_20m(&BandRaster::new(grid, Band::B03, data.clone(), 0).unwrap()).unwrap();
        let mean = |it: &mut dyn Iterator<Item = f64>| {
            let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            s / n as f64
        };
        let before = mean(&mut data.iter().map(|&v| f64::from(v)));
        let after = mean(&mut out.data.iter().map(|&v| f64::from(v)));
        worst = worst.max((before - after).abs());
    }
    report(5, "resampling conservation", worst <= 0.5, &format!("20 rasters, worst mean drift {worst:.4} DN (limit 0.5)"));
}

/// Predicts one probability everywhere.
struct Constant(f32);

impl PatchPredictor for Constant {
    fn predict_batch(&self, inputs: &[ArrayView3<f32>]) -> Result<Vec<Array2<f32>>, ModelError> {
        Ok(inputs.iter().map(|x| Array2::from_elem((x.dim().1, x.dim().2), self.0)).collect())
    }
}

struct Learned {
    model: SegmentationModel,
    holdout: Vec<LabeledPatch>,
    epochs: usize,
    elapsed: Duration,
}

const LEARNING_EPOCHS: usize = 12;

fn learning_run(config: ModelConfig) -> Learned {
    let patches = synthetic_patch_set(250, 7).unwrap();
    let (train_share, holdout) = patches.split_at(200);
    let (train_set, checkpoint) = carve_holdout(train_share.to_vec(), config.holdout_fraction, config.seed);
    let start = Instant::now();
    let model = train(SegmentationModel::build(config.clone()).unwrap(), &train_set, &checkpoint, &config).unwrap();
    Learned {
        model,
        holdout: holdout.to_vec(),
        epochs: config.max_epochs,
        elapsed: start.elapsed(),
    }
}

fn learning_config(base: ModelConfig) -> ModelConfig {
    let mut cfg = base.with_seed(7);
    cfg.batch_size = 16;
    cfg.max_epochs = LEARNING_EPOCHS;
    cfg
}

/// Reduced-width model trained once and shared by the learning and transfer criteria.
fn learned() -> &'static Learned {
    static CELL: OnceLock<Learned> = OnceLock::new();
    CELL.get_or_init(|| learning_run(learning_config(ModelConfig::reduced())))
}

fn check_learning(n: u32, label: &str, run: &Learned, limit: Duration) {
    let report6 = evaluate(&run.model, &run.holdout, 0.5, "holdout").unwrap();
    let zeros = evaluate(&Constant(0.0), &run.holdout, 0.5, "holdout").unwrap();
    let ones = evaluate(&Constant(1.0), &run.holdout, 0.5, "holdout").unwrap();
    let losses: Vec<f64> = run.model.history().iter().map(|r| r.train_loss).collect();
    let head = losses[..3].iter().sum::<f64>() / 3.0;
    let tail = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
    let ok = report6.mean_iou >= 0.8
        && report6.mean_iou > zeros.mean_iou
        && report6.mean_iou > ones.mean_iou
        && tail < head
        && run.epochs <= 20
        && run.elapsed <= limit;
    report(
        n,
        label,
        ok,
        &format!(
            "holdout IoU {:.4} ± {:.4} (Dice {:.4}) over {} patches; baselines all-unburned {:.4}, all-burned {:.4}; loss {:.4} -> {:.4} (first/last 3-epoch means); {} epochs, best {:?}; trained in {:.0}s (limit {:.0}s)",
            report6.mean_iou,
            report6.std_iou,
            report6.mean_dice,
            report6.n_patches,
            zeros.mean_iou,
            ones.mean_iou,
            head,
            tail,
            run.epochs,
            run.model.best_epoch(),
            run.elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_learning_reduced_width() {
    check_learning(6, "learning at desk scale, reduced width", learned(), Duration::from_secs(15 * 60));
}

#[test]
#[ignore = "full-width encoder; takes hours on a single core"]
fn criterion_06_learning_full_width() {
    let run = learning_run(learning_config(ModelConfig::full()));
    check_learning(6, "learning at desk scale, full width", &run, Duration::from_secs(60 * 60));
}

#[test]
fn criterion_07_gradient_check() {
    let cfg = ModelConfig::tiny();
    let net = Network::new(&cfg);
    let (params, buffers) = net.init(71);
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut x = Tensor::zeros(3, 2, 128, 128);
    x.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    let mut labels = vec![0u8; 2 * 128 * 128];
    for n in 0..2 {
        for r in 20 + 15 * n..90 {
            for c in 30..110 - 25 * n {
                labels[n * 128 * 128 + r * 128 + c] = 1;
            }
        }
    }
    let loss = |p: &[f64]| loss_and_grad(&net.forward(p, &buffers, &x, Mode::Train).0, &labels, LossKind::Combined).0.total;
    let (logits, tape) = net.forward(&params, &buffers, &x, Mode::Train);
    let (_, dlogits) = loss_and_grad(&logits, &labels, LossKind::Combined);
    let mut grads = vec![0.0; params.len()];
    net.backward(&params, &tape, dlogits, &mut grads);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = rng.gen_range(0..params.len());
        let mut p = params.clone();
        p[i] += h;
        let up = loss(&p);
        p[i] = params[i] - h;
        let down = loss(&p);
        let numeric = (up - down) / (2.0 * h);
        let rel = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    report(7, "gradient check", worst <= 1e-3, &format!("20 parameters of {}, worst relative error {worst:.3e} (limit 1e-3)", params.len()));
}

fn strip_districts(grid: &RasterGrid, n: usize) -> Vec<DistrictConfig> {
    let (x0, y0, x1, y1) = grid.extent();
    let w = (x1 - x0) / n as f64;
    (0..n)
        .map(|k| DistrictConfig {
            district_name: format!("D{k}"),
            settlement_name: format!("S{k}"),
            established: Established::Year(2016),
            total_refugees: 1000,
            boundary: Polygon::rectangle(grid.crs(), x0 + w * k as f64, y0, x0 + w * (k + 1) as f64, y1).unwrap(),
        })
        .collect()
}

#[test]
fn criterion_08_transfer_mechanics() {
    let run = learned();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    export_weights(&run.model, &path).unwrap();
    let back = import_weights(&path).unwrap();
    let probes: Vec<Array3<f32>> = run.holdout.iter().take(8).map(|p| p.channels.clone()).collect();
    let views: Vec<_> = probes.iter().map(|p| p.view()).collect();
    let a = run.model.predict_batch(&views).unwrap();
    let b = back.predict_batch(&views).unwrap();
    let bit_identical = a.iter().zip(&b).all(|(x, y)| x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));

    // An unseen scene: regional inference against the rasterized ground truth.
    let (scene, burns) = generate_synthetic_scene(&SyntheticSceneSpec::new(640, 14, 1000)).unwrap();
    let truth = rasterize_polygons(&burns, scene.grid()).unwrap();
    let mosaic = infer_region(&back, std::slice::from_ref(&scene), &Period::year(2016), &InferOptions::default()).unwrap();
    let (pred_fraction, true_fraction) = (mosaic.burned_fraction(), truth.fraction());
    let fraction_ok = (pred_fraction - true_fraction).abs() <= 0.02;

    // One burn inside one district of four.
    let mut spec = SyntheticSceneSpec::new(640, 1, 1001);
    spec.radius_px = (30.0, 30.0);
    let (one, burn) = generate_synthetic_scene(&spec).unwrap();
    let mask = rasterize_polygons(&burn, one.grid()).unwrap();
    let districts = strip_districts(one.grid(), 4);
    let (bx0, _, bx1, _) = burn[0].bbox();
    let home = districts.iter().position(|d| {
        let (dx0, _, dx1, _) = d.boundary.bbox();
        dx0 <= bx0 && bx1 < dx1
    });
    let (x0, y0, x1, y1) = one.grid().extent();
    let region = Polygon::rectangle(one.grid().crs(), x0, y0, x1, y1).unwrap();
    let series = build_series(&[RegionMosaic::from_mask(&mask, None, Period::year(2016)).unwrap()], &districts, &region).unwrap();
    let area = mask.count_ones() as f64 * one.grid().pixel_area_km2();
    let control = series.row(REGION_CONTROL, "2016").unwrap();
    let mut series_ok = home.is_some() && (control.burned_area_km2 - area).abs() <= 1e-9 && control.burned_fraction == mask.fraction();
    let mut district_areas = BTreeMap::new();
    for (k, d) in districts.iter().enumerate() {
        let row = series.row(&d.district_name, "2016").unwrap();
        district_areas.insert(d.district_name.clone(), row.burned_area_km2);
        series_ok &= if Some(k) == home { (row.burned_area_km2 - area).abs() <= 1e-9 } else { row.burned_fraction == 0.0 && row.burned_area_km2 == 0.0 };
    }
    report(
        8,
        "transfer mechanics",
        bit_identical && fraction_ok && series_ok,
        &format!(
            "round trip bit-identical: {bit_identical}; burned fraction {pred_fraction:.4} vs truth {true_fraction:.4} (tolerance 0.02); burn area {area:.4} km2 in district {:?}, series {district_areas:?}, control {:.4} km2",
            home.map(|k| format!("D{k}")),
            control.burned_area_km2
        ),
    );
}

#[test]
fn criterion_09_reference_comparison() {
    let (scene, burns) = generate_synthetic_scene(&SyntheticSceneSpec::new(640, 14, 900)).unwrap();
    let mask = rasterize_polygons(&burns, scene.grid()).unwrap();
    let mosaic = RegionMosaic::from_mask(&mask, None, Period::year(2016)).unwrap();
    let (x0, _, x1, _) = scene.grid().extent();
    let cells = ((x1 - x0) / 500.0).ceil() as usize;
    let rgrid = scene.grid().with_resolution(500.0, -500.0, cells, cells).unwrap();
    let r = compare_reference(&mosaic, &BinaryMask::zeros(rgrid), None).unwrap();
    let partition = r.agree_burned + r.ours_only + r.reference_only + r.agree_unburned;
    let ok = r.ours_only == mask.count_ones() && partition == r.total_pixels && r.total_pixels == 640 * 640 && r.agree_burned == 0 && r.reference_only == 0;
    report(
        9,
        "reference comparison",
        ok,
        &format!(
            "ours_only {} (mosaic burned {}), partition {partition} of {} pixels, ours-only area {:.3} km2",
            r.ours_only,
            mask.count_ones(),
            r.total_pixels,
            r.ours_only_km2
        ),
    );
}

fn burnscan(cwd: &Path, args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_burnscan")).current_dir(cwd).args(args).output().unwrap();
    (out.status.success(), format!("{:?}: {}", args.first(), String::from_utf8_lossy(&out.stderr)))
}

const CHAIN: &[&[&str]] = &[
    &["synth", "--size", "1280", "--burns", "12", "--seed", "7", "--out", "syn"],
    &["catalog", "--root", "syn/granules", "--out", "run/catalog.json"],
    &["composite", "--catalog", "run/catalog.json", "--out", "run/composites"],
    &["extract", "--composites", "run/composites", "--labels", "syn/labels.geojson", "--out", "run/store"],
    &["train", "--store", "run/store", "--out", "run/model.bin", "--preset", "tiny", "--epochs", "2", "--seed", "3"],
    &["eval", "--store", "run/store", "--model", "run/model.bin", "--out", "run/eval.json"],
    &["predict", "--model", "run/model.bin", "--composite", "run/composites/SYN_7.tif", "--out", "run/mask.tif"],
    &["infer", "--model", "run/model.bin", "--composites", "run/composites", "--out", "run/mosaics", "--period", "2016"],
    &["series", "--mosaics", "run/mosaics", "--districts", "syn/districts.geojson", "--region", "syn/region.geojson", "--out", "run/series.csv"],
    &["compare", "--mosaics", "run/mosaics", "--reference", "syn/reference_500m.tif", "--out", "run/comparison.json"],
    &["plot", "--composite", "run/composites/SYN_7.tif", "--truth", "syn/labels.geojson", "--pred", "run/mask.tif", "--out", "run/triptych.png"],
];

const RECORDS: &[&str] = &[
    "syn/synth.run.json",
    "run/catalog.json.run.json",
    "run/composites/composite.run.json",
    "run/store/extract.run.json",
    "run/model.bin.run.json",
    "run/eval.json.run.json",
    "run/mask.tif.run.json",
    "run/mosaics/infer.run.json",
    "run/series.csv.run.json",
    "run/comparison.json.run.json",
    "run/triptych.png.run.json",
];

/// sha256 of every file below `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = hex::encode(Sha256::digest(std::fs::read(&p).unwrap()));
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), digest);
            }
        }
    }
    out
}

fn declared_outputs(root: &Path) -> Result<Vec<PathBuf>, String> {
    let mut all = Vec::new();
    for rec in RECORDS {
        let text = std::fs::read_to_string(root.join(rec)).map_err(|e| format!("{rec}: {e}"))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{rec}: {e}"))?;
        let outputs = v["outputs"].as_array().ok_or(format!("{rec}: no outputs"))?;
        if outputs.is_empty() {
            return Err(format!("{rec}: empty outputs"));
        }
        for o in outputs {
            all.push(PathBuf::from(o["path"].as_str().unwrap_or_default()));
        }
    }
    Ok(all)
}

#[test]
fn criterion_10_end_to_end_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut failures = Vec::new();
    for args in CHAIN {
        let (ok, msg) = burnscan(root, args);
        if !ok {
            failures.push(msg);
        }
    }
    let declared = declared_outputs(root);
    let missing: Vec<PathBuf> = match &declared {
        Ok(list) => list.iter().filter(|p| !root.join(p).is_file()).cloned().collect(),
        Err(e) => {
            failures.push(e.clone());
            Vec::new()
        }
    };
    let n_declared = declared.as_ref().map(Vec::len).unwrap_or(0);
    let first = snapshot(root);
    for args in CHAIN {
        let (ok, msg) = burnscan(root, args);
        if !ok {
            failures.push(format!("rerun {msg}"));
        }
    }
    let second = snapshot(root);
    let changed: Vec<&PathBuf> = first
        .iter()
        .filter(|(p, h)| p.extension().is_none_or(|e| e != "png") && second.get(*p) != Some(h))
        .map(|(p, _)| p)
        .collect();
    let same_files = first.keys().eq(second.keys());
    let elapsed = start.elapsed();
    report(
        10,
        "end-to-end smoke",
        failures.is_empty() && missing.is_empty() && changed.is_empty() && same_files && elapsed <= Duration::from_secs(20 * 60),
        &format!(
            "{} steps x2, failures {failures:?}; {n_declared} declared outputs, missing {missing:?}; {} files compared, changed on rerun {changed:?}; {:.0}s (limit 1200s)",
            CHAIN.len(),
            first.len(),
            elapsed.as_secs_f64()
        ),
    );
}
