use ndarray::{Array2, ArrayView3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::loss::sigmoid;
use super::network::{Mode, Network};
use super::ops::Tensor;
use super::ModelError;
use crate::dataset::PATCH_SIZE;
use crate::metrics::PatchPredictor;

/// Samples per forward pass during inference.
const PREDICT_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Holdout mean IoU; absent when no holdout patches were given.
    pub val_metric: Option<f64>,
}

/// Network configuration plus its learned state. Immutable once trained, so a
/// shared reference can serve concurrent inference.
#[derive(Debug, Clone)]
pub struct SegmentationModel {
    pub(crate) config: ModelConfig,
    pub(crate) net: Network,
    pub(crate) params: Vec<f64>,
    pub(crate) buffers: Vec<f64>,
    pub(crate) history: Vec<EpochRecord>,
    pub(crate) best_epoch: Option<usize>,
}

impl SegmentationModel {
    /// Untrained model, deterministically initialised from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let net = Network::new(&config);
        let (params, buffers) = net.init(config.seed);
        Ok(Self {
            config,
            net,
            params,
            buffers,
            history: Vec::new(),
            best_epoch: None,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<f64>, buffers: Vec<f64>, history: Vec<EpochRecord>, best_epoch: Option<usize>) -> Result<Self, ModelError> {
        config.validate()?;
        let net = Network::new(&config);
        if params.len() != net.n_params() || buffers.len() != net.n_buffers() {
            return Err(ModelError::CorruptFile(format!(
                "expected {} parameters and {} buffers, found {} and {}",
                net.n_params(),
                net.n_buffers(),
                params.len(),
                buffers.len()
            )));
        }
        Ok(Self {
            config,
            net,
            params,
            buffers,
            history,
            best_epoch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Epoch whose weights were retained by checkpoint selection.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    /// SHA-256 over parameters and running statistics.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.params.iter().chain(&self.buffers) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn predict_patch(&self, channels: ArrayView3<f32>) -> Result<Array2<f32>, ModelError> {
        Ok(self.predict_batch(&[channels])?.pop().expect("one output per input"))
    }

    /// Burned-class probabilities; each sample is computed independently of the
    /// others in the batch, so chunks run in parallel on the rayon pool.
    pub fn predict_batch(&self, inputs: &[ArrayView3<f32>]) -> Result<Vec<Array2<f32>>, ModelError> {
        for x in inputs {
            validate_input(x)?;
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let chunk = inputs.len().div_ceil(rayon::current_num_threads()).clamp(1, PREDICT_CHUNK);
        let parts: Vec<Vec<Array2<f32>>> = inputs
            .par_chunks(chunk)
            .map(|part| {
                let (logits, _) = self.net.forward(&self.params, &self.buffers, &to_tensor(part), Mode::Eval);
                probabilities(&logits)
            })
            .collect();
        Ok(parts.into_iter().flatten().collect())
    }
}

impl PatchPredictor for SegmentationModel {
    fn predict_batch(&self, inputs: &[ArrayView3<f32>]) -> Result<Vec<Array2<f32>>, ModelError> {
        SegmentationModel::predict_batch(self, inputs)
    }
}

fn validate_input(x: &ArrayView3<f32>) -> Result<(), ModelError> {
    let expected = (3, PATCH_SIZE, PATCH_SIZE);
    if x.dim() != expected {
        return Err(ModelError::ShapeError { expected, found: x.dim() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(())
}

pub(crate) fn to_tensor(inputs: &[ArrayView3<f32>]) -> Tensor {
    let (c, h, w) = inputs[0].dim();
    let mut t = Tensor::zeros(c, inputs.len(), h, w);
    for (n, x) in inputs.iter().enumerate() {
        for ch in 0..c {
            let plane = t.plane_mut(ch, n);
            for (dst, &v) in plane.iter_mut().zip(x.index_axis(ndarray::Axis(0), ch).iter()) {
                *dst = f64::from(v);
            }
        }
    }
    t
}

pub(crate) fn probabilities(logits: &Tensor) -> Vec<Array2<f32>> {
    (0..logits.n)
        .map(|n| {
            let z0 = logits.plane(0, n);
            let z1 = logits.plane(1, n);
            let v: Vec<f32> = z0.iter().zip(z1).map(|(a, b)| sigmoid(b - a) as f32).collect();
            Array2::from_shape_vec((logits.h, logits.w), v).expect("plane size")
        })
        .collect()
}

/// 1 where `p >= threshold`.
pub fn binarize(prob: &Array2<f32>, threshold: f64) -> Array2<u8> {
    prob.mapv(|p| u8::from(f64::from(p) >= threshold))
}
