use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::loss::loss_and_grad;
use super::model::{to_tensor, EpochRecord, SegmentationModel};
use super::network::Mode;
use super::optim::Adam;
use super::ModelError;
use crate::dataset::LabeledPatch;
use crate::metrics;

const BN_MOMENTUM: f64 = 0.1;
const CHECKPOINT_THRESHOLD: f64 = 0.5;

/// Splits off a seeded random `fraction` of `patches` for checkpoint selection.
/// At least one patch stays on each side when there are two or more.
pub fn carve_holdout(patches: Vec<LabeledPatch>, fraction: f64, seed: u64) -> (Vec<LabeledPatch>, Vec<LabeledPatch>) {
    let n = patches.len();
    let mut k = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        k = k.clamp(1, n - 1);
    } else if n < 2 {
        k = 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_holdout = vec![false; n];
    order[..k].iter().for_each(|&i| is_holdout[i] = true);
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (p, h) in patches.into_iter().zip(is_holdout) {
        if h {
            holdout.push(p)
        } else {
            train.push(p)
        }
    }
    (train, holdout)
}

/// Mini-batch training; keeps the weights of the epoch with the best holdout
/// mean IoU (the last epoch when `holdout` is empty).
pub fn train(mut model: SegmentationModel, train: &[LabeledPatch], holdout: &[LabeledPatch], config: &ModelConfig) -> Result<SegmentationModel, ModelError> {
    config.validate()?;
    if !config.same_architecture(&model.config) {
        return Err(ModelError::InvalidConfig("training config describes a different architecture than the model".into()));
    }
    if train.is_empty() {
        return Err(ModelError::NoTrainingData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(model.params.len(), config.learning_rate);
    let mut grads = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    let first_epoch = model.history.len() + 1;

    for epoch in first_epoch..first_epoch + config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<_> = batch.iter().map(|&i| train[i].channels.view()).collect();
            let labels: Vec<u8> = batch.iter().flat_map(|&i| train[i].label.iter().copied()).collect();
            let x = to_tensor(&inputs);
            let (logits, tape) = model.net.forward(&model.params, &model.buffers, &x, Mode::Train);
            let (loss, dlogits) = loss_and_grad(&logits, &labels, config.loss);
            if !loss.total.is_finite() {
                return Err(ModelError::DivergedTraining { epoch, loss: loss.total });
            }
            loss_sum += loss.total * batch.len() as f64;
            grads.fill(0.0);
            model.net.backward(&model.params, &tape, dlogits, &mut grads);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::DivergedTraining { epoch, loss: f64::NAN });
            }
            opt.step(&mut model.params, &grads);
            model.net.update_running_stats(&mut model.buffers, &tape, BN_MOMENTUM);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_metric = if holdout.is_empty() {
            None
        } else {
            let report = metrics::evaluate(&model, holdout, CHECKPOINT_THRESHOLD, "holdout").map_err(|e| match e {
                metrics::MetricsError::Model(m) => m,
                other => ModelError::InvalidConfig(other.to_string()),
            })?;
            Some(report.mean_iou)
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}{}",
            val_metric.map(|v| format!(", holdout IoU {v:.4}")).unwrap_or_default()
        );
        model.history.push(EpochRecord { epoch, train_loss, val_metric });
        if let Some(v) = val_metric {
            if best.as_ref().is_none_or(|(b, ..)| v > *b) {
                best = Some((v, epoch, model.params.clone(), model.buffers.clone()));
            }
        }
    }
    model.config = config.clone();
    match best {
        Some((_, epoch, params, buffers)) => {
            model.params = params;
            model.buffers = buffers;
            model.best_epoch = Some(epoch);
        }
        None => model.best_epoch = model.history.last().map(|r| r.epoch),
    }
    Ok(model)
}
