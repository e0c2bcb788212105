use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use burnscan::dataset::{read_store, LabeledPatch, SplitTag};
use burnscan::metrics::{evaluate, MetricsError};
use burnscan::raster_io::{write_f32, write_mask};
use burnscan::segmodel::{carve_holdout, export_weights, import_weights, train, LossKind, ModelConfig, SegmentationModel};
use burnscan::transfer::{infer_region, InferOptions, Period, PeriodKind};
use clap::Args;
use serde_json::json;

use super::{create_parent, output_path, require_exists, Context};
use crate::config::{check_threshold, load_model_config};
use crate::error::{CliError, CliResult, DataContext};
use crate::record::{file_record, Recorder};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Patch store written by `extract`; its train split is used.
    #[arg(long)]
    pub store: PathBuf,
    /// Weight file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Architecture preset: full, reduced or tiny.
    #[arg(long, conflicts_with_all = ["model_config", "init"])]
    pub preset: Option<String>,
    /// ModelConfig document (TOML, or JSON by extension).
    #[arg(long, conflicts_with = "init")]
    pub model_config: Option<PathBuf>,
    /// Start from these weights (e.g. a model pretrained elsewhere) instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Share of training patches held out for checkpoint selection.
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LossArg {
    CrossEntropy,
    Dice,
    Combined,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::CrossEntropy => LossKind::CrossEntropy,
            LossArg::Dice => LossKind::Dice,
            LossArg::Combined => LossKind::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

/// Patches of the store whose manifest tag matches `split`.
fn select(store: &Path, split: SplitArg) -> CliResult<(Vec<LabeledPatch>, String)> {
    let (manifest, patches) = read_store(store).at(store)?;
    let wanted = match split {
        SplitArg::Train => Some(SplitTag::Train),
        SplitArg::Test => Some(SplitTag::Test),
        SplitArg::All => None,
    };
    let ids: BTreeSet<&str> = manifest
        .records
        .iter()
        .filter(|r| wanted.is_none_or(|w| r.split == w))
        .map(|r| r.patch_id.as_str())
        .collect();
    let selected = patches.into_iter().filter(|p| ids.contains(p.patch_id().as_str())).collect();
    Ok((selected, manifest.protocol.domain))
}

fn model_config(args: &TrainArgs, ctx: &Context, init: Option<&SegmentationModel>) -> CliResult<ModelConfig> {
    let over = &ctx.config.model;
    let mut cfg = if let Some(m) = init {
        m.config().clone()
    } else if let Some(path) = args.model_config.as_ref().or(ctx.config.model_config.as_ref()) {
        load_model_config(path)?
    } else {
        let name = args.preset.as_deref().or(over.preset.as_deref()).unwrap_or("reduced");
        ModelConfig::preset_named(name).ok_or_else(|| CliError::usage(format!("--preset: unknown preset {name:?} (full, reduced, tiny)")))?
    };
    if let Some(v) = args.epochs.or(over.max_epochs) {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.batch_size.or(over.batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate.or(over.learning_rate) {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.loss.map(LossKind::from).or(over.loss) {
        cfg.loss = v;
    }
    if let Some(v) = args.holdout_fraction.or(over.holdout_fraction) {
        cfg.holdout_fraction = v;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train_cmd(args: TrainArgs, ctx: &Context) -> CliResult<()> {
    require_exists("--store", &args.store)?;
    let init = match &args.init {
        Some(p) => Some(import_weights(p).at(p)?),
        None => None,
    };
    let cfg = model_config(&args, ctx, init.as_ref())?;
    let out = output_path(args.out.clone(), ctx, "model.bin")?;
    let (patches, _) = select(&args.store, SplitArg::Train)?;
    if patches.is_empty() {
        return Err(CliError::data(format!("{}: the store has no training patches", args.store.display())));
    }
    let (train_set, holdout) = carve_holdout(patches, cfg.holdout_fraction, cfg.seed);
    log::info!("{} training patches, {} held out for checkpoint selection", train_set.len(), holdout.len());
    let model = match init {
        Some(m) => m,
        None => SegmentationModel::build(cfg.clone()).map_err(|e| CliError::usage(e.to_string()))?,
    };
    let trained = train(model, &train_set, &holdout, &cfg).context("training")?;
    create_parent(&out)?;
    export_weights(&trained, &out).at(&out)?;
    let history = out.with_extension("history.csv");
    let mut csv = String::from("epoch,train_loss,val_metric\n");
    for r in trained.history() {
        let val = r.val_metric.map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{}", r.epoch, r.train_loss, val).expect("string write");
    }
    fs::write(&history, csv).at(&history)?;

    let last = trained.history().last();
    println!(
        "trained {} epochs; best epoch {:?}; final loss {:.5}; {} parameters",
        cfg.max_epochs,
        trained.best_epoch(),
        last.map(|r| r.train_loss).unwrap_or(f64::NAN),
        trained.n_params()
    );
    let mut rec = Recorder::new("train", &json!({"store": args.store, "init": args.init, "model": cfg}));
    rec.input_tree(&args.store)?;
    if let Some(p) = &args.init {
        rec.input(p);
    }
    rec.output(&out);
    rec.output(&history);
    rec.summary(json!({
        "train_patches": train_set.len(),
        "holdout_patches": holdout.len(),
        "best_epoch": trained.best_epoch(),
        "history": trained.history(),
        "weights_sha256": trained.checksum(),
    }));
    rec.write(&file_record(&out))
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Report JSON; a per-patch CSV is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which manifest split to score (`all` for hand-label stores).
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Domain tag of the report (defaults to the store's).
    #[arg(long)]
    pub domain: Option<String>,
}

pub fn eval(args: EvalArgs, ctx: &Context) -> CliResult<()> {
    require_exists("--store", &args.store)?;
    require_exists("--model", &args.model)?;
    let threshold = args.threshold.or(ctx.config.threshold).unwrap_or(0.5);
    check_threshold(threshold)?;
    let out = output_path(args.out, ctx, "eval.json")?;
    let model = import_weights(&args.model).at(&args.model)?;
    let (patches, store_domain) = select(&args.store, args.split)?;
    let domain = args.domain.unwrap_or(store_domain);
    let report = evaluate(&model, &patches, threshold, &domain).map_err(|e| match e {
        MetricsError::EmptyScores => CliError::data(format!("{}: EmptyScores: no {:?} patches to score", args.store.display(), args.split)),
        other => CliError::data(format!("{}: {other}", args.store.display())),
    })?;
    create_parent(&out)?;
    report.write_json(&out).at(&out)?;
    let csv = out.with_extension("csv");
    report.write_csv(&csv).at(&csv)?;
    println!("{}", report.summary());
    let mut rec = Recorder::new("eval", &json!({"store": args.store, "model": args.model, "split": format!("{:?}", args.split).to_lowercase(), "threshold": threshold, "domain": domain}));
    rec.input_tree(&args.store)?;
    rec.input(&args.model);
    rec.output(&out);
    rec.output(&csv);
    rec.summary(json!({"mean_iou": report.mean_iou, "mean_dice": report.mean_dice, "n_patches": report.n_patches}));
    rec.write(&file_record(&out))
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Composite GeoTIFF written by `composite`.
    #[arg(long)]
    pub composite: PathBuf,
    /// Burned mask GeoTIFF (uint8, 255 where the composite is invalid).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the probability raster here.
    #[arg(long)]
    pub prob: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
}

pub fn predict(args: PredictArgs, ctx: &Context) -> CliResult<()> {
    require_exists("--model", &args.model)?;
    require_exists("--composite", &args.composite)?;
    let threshold = args.threshold.or(ctx.config.threshold).unwrap_or(0.5);
    check_threshold(threshold)?;
    let stride = args.stride.or(ctx.config.stride).unwrap_or(burnscan::dataset::PATCH_SIZE);
    if stride == 0 {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    let out = output_path(args.out, ctx, "mask.tif")?;
    let model = import_weights(&args.model).at(&args.model)?;
    let composite = burnscan::ingest::read_composite(&args.composite).at(&args.composite)?;
    let period = Period::containing(PeriodKind::Yearly, composite.sensing_date());
    let options = InferOptions {
        threshold,
        stride,
        ..Default::default()
    };
    let mosaic = infer_region(&model, std::slice::from_ref(&composite), &period, &options).at(&args.composite)?;
    create_parent(&out)?;
    write_mask(&out, mosaic.burned(), Some(mosaic.valid())).at(&out)?;
    let mut rec = Recorder::new("predict", &json!({"model": args.model, "composite": args.composite, "threshold": threshold, "stride": stride}));
    if let Some(p) = &args.prob {
        create_parent(p)?;
        write_f32(p, mosaic.grid(), mosaic.prob()).at(p)?;
        rec.output(p);
    }
    println!("{}: {:.4} of valid pixels burned", composite.scene_id(), mosaic.burned_fraction());
    rec.input(&args.model);
    rec.input(&args.composite);
    rec.input(&args.composite.with_extension("json"));
    rec.output(&out);
    rec.summary(json!({"burned_fraction": mosaic.burned_fraction(), "burned_pixels": mosaic.burned().count_ones()}));
    rec.write(&file_record(&out))
}
