//! Trains on 200 synthetic burned patches and scores 50 unseen ones.
//!
//! `cargo run --release --example train_synthetic -- [full|reduced|tiny] [epochs]`

use std::time::Instant;

use burnscan::dataset::synthetic_patch_set;
use burnscan::metrics::evaluate;
use burnscan::segmodel::{carve_holdout, train, ModelConfig, SegmentationModel};

fn main() {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "reduced".into());
    let epochs: usize = std::env::args().nth(2).map_or(20, |s| s.parse().expect("epochs must be a number"));
    let mut cfg = ModelConfig::preset_named(&preset).expect("preset is full, reduced or tiny").with_seed(7);
    cfg.max_epochs = epochs;

    let patches = synthetic_patch_set(250, 100).expect("synthetic patches");
    let (train_share, test) = patches.split_at(200);
    let (train_set, checkpoint) = carve_holdout(train_share.to_vec(), cfg.holdout_fraction, cfg.seed);
    let t = Instant::now();
    let model = train(SegmentationModel::build(cfg.clone()).expect("valid preset"), &train_set, &checkpoint, &cfg).expect("training");
    for r in model.history() {
        println!("epoch {:2}  loss {:.4}  checkpoint IoU {:.4}", r.epoch, r.train_loss, r.val_metric.unwrap_or(f64::NAN));
    }
    let report = evaluate(&model, test, 0.5, "synthetic").expect("non-empty test set");
    println!("{} in {:.1}s (best epoch {:?})", report.summary(), t.elapsed().as_secs_f64(), model.best_epoch());
}
