//! Overlap metrics for binary masks and their aggregation over patch sets.
//!
//! Both-empty pairs (no predicted and no true burn) score 1.0 for IoU and Dice
//! and are counted separately in [`EvalReport::empty_pair_count`] so they can be
//! excluded downstream. Aggregates are unweighted per-patch means with the
//! population standard deviation.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPatch;
use crate::geo::BinaryMask;
use crate::segmodel::{binarize, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("no scores to aggregate")]
    EmptyScores,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Pixel counts of a prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub pred_positive: u64,
    pub gt_positive: u64,
    pub intersection: u64,
}

impl PairCounts {
    pub fn from_arrays(pred: ArrayView2<u8>, gt: ArrayView2<u8>) -> Result<Self, MetricsError> {
        if pred.dim() != gt.dim() {
            return Err(MetricsError::ShapeMismatch(pred.dim(), gt.dim()));
        }
        let mut c = PairCounts::default();
        ndarray::Zip::from(pred).and(gt).for_each(|&p, &g| {
            let (p, g) = (u64::from(p != 0), u64::from(g != 0));
            c.pred_positive += p;
            c.gt_positive += g;
            c.intersection += p & g;
        });
        Ok(c)
    }

    pub fn union(&self) -> u64 {
        self.pred_positive + self.gt_positive - self.intersection
    }

    pub fn is_empty_pair(&self) -> bool {
        self.union() == 0
    }

    pub fn iou(&self) -> f64 {
        if self.is_empty_pair() {
            1.0
        } else {
            self.intersection as f64 / self.union() as f64
        }
    }

    pub fn dice(&self) -> f64 {
        if self.is_empty_pair() {
            1.0
        } else {
            2.0 * self.intersection as f64 / (self.pred_positive + self.gt_positive) as f64
        }
    }
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    Ok(PairCounts::from_arrays(pred.data().view(), gt.data().view())?.iou())
}

pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    Ok(PairCounts::from_arrays(pred.data().view(), gt.data().view())?.dice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchScore {
    pub patch_id: String,
    pub iou: f64,
    pub dice: f64,
    pub pred_positive: u64,
    pub gt_positive: u64,
    pub intersection: u64,
    pub empty_pair: bool,
}

impl PatchScore {
    pub fn from_counts(patch_id: impl Into<String>, c: PairCounts) -> Self {
        Self {
            patch_id: patch_id.into(),
            iou: c.iou(),
            dice: c.dice(),
            pred_positive: c.pred_positive,
            gt_positive: c.gt_positive,
            intersection: c.intersection,
            empty_pair: c.is_empty_pair(),
        }
    }

    pub fn score(patch_id: impl Into<String>, pred: ArrayView2<u8>, gt: ArrayView2<u8>) -> Result<Self, MetricsError> {
        Ok(Self::from_counts(patch_id, PairCounts::from_arrays(pred, gt)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: String,
    pub n_patches: usize,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub empty_pair_count: usize,
    /// Which dispersion `std_*` reports.
    pub dispersion: String,
    pub threshold: Option<f64>,
    pub scores: Vec<PatchScore>,
}

impl EvalReport {
    /// `IoU 0.559 ± 0.300, Dice 0.661 ± 0.300 (n = 812)`.
    pub fn summary(&self) -> String {
        format!(
            "IoU {:.3} ± {:.3}, Dice {:.3} ± {:.3} (n = {}, both-empty = {})",
            self.mean_iou, self.std_iou, self.mean_dice, self.std_dice, self.n_patches, self.empty_pair_count
        )
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MetricsError> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(path, text).map_err(|e| MetricsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("patch_id,iou,dice,pred_positive,gt_positive,intersection,empty_pair\n");
        for s in &self.scores {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.patch_id, s.iou, s.dice, s.pred_positive, s.gt_positive, s.intersection, s.empty_pair
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv()).map_err(|e| MetricsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(scores: Vec<PatchScore>, domain: &str) -> Result<EvalReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let (mean_iou, std_iou) = mean_std(scores.iter().map(|s| s.iou));
    let (mean_dice, std_dice) = mean_std(scores.iter().map(|s| s.dice));
    Ok(EvalReport {
        domain: domain.to_string(),
        n_patches: scores.len(),
        mean_iou,
        std_iou,
        mean_dice,
        std_dice,
        empty_pair_count: scores.iter().filter(|s| s.empty_pair).count(),
        dispersion: "population standard deviation".into(),
        threshold: None,
        scores,
    })
}

/// Anything that maps `(3, 128, 128)` patches to burned-class probability maps.
pub trait PatchPredictor {
    fn predict_batch(&self, inputs: &[ArrayView3<f32>]) -> Result<Vec<Array2<f32>>, ModelError>;
}

/// Predict, binarize at `threshold`, and score every patch.
pub fn evaluate<P: PatchPredictor + ?Sized>(model: &P, patches: &[LabeledPatch], threshold: f64, domain: &str) -> Result<EvalReport, MetricsError> {
    const CHUNK: usize = 16;
    let mut scores = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(CHUNK) {
        let inputs: Vec<_> = chunk.iter().map(|p| p.channels.view()).collect();
        let probs = model.predict_batch(&inputs)?;
        for (patch, prob) in chunk.iter().zip(&probs) {
            let pred = binarize(prob, threshold);
            scores.push(PatchScore::score(patch.patch_id(), pred.view(), patch.label.view())?);
        }
    }
    let mut report = aggregate(scores, domain)?;
    report.threshold = Some(threshold);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn block(n: usize, r0: usize, c0: usize, size: usize) -> Array2<u8> {
        Array2::from_shape_fn((n, n), |(r, c)| u8::from((r0..r0 + size).contains(&r) && (c0..c0 + size).contains(&c)))
    }

    #[test]
    fn identity_and_disjoint() {
        let a = block(8, 0, 0, 3);
        let c = PairCounts::from_arrays(a.view(), a.view()).unwrap();
        assert_eq!((c.iou(), c.dice()), (1.0, 1.0));
        let b = block(8, 5, 5, 3);
        let c = PairCounts::from_arrays(a.view(), b.view()).unwrap();
        assert_eq!((c.iou(), c.dice()), (0.0, 0.0));
    }

    #[test]
    fn prediction_against_empty_truth_scores_zero() {
        let pred = block(8, 2, 2, 3);
        let c = PairCounts::from_arrays(pred.view(), Array2::zeros((8, 8)).view()).unwrap();
        assert_eq!((c.iou(), c.dice()), (0.0, 0.0));
        assert!(!c.is_empty_pair());
    }

    #[test]
    fn shifted_block() {
        let pred = block(4, 0, 0, 2);
        let gt = block(4, 0, 1, 2);
        let c = PairCounts::from_arrays(pred.view(), gt.view()).unwrap();
        assert_eq!(c.iou(), 2.0 / 6.0);
        assert_eq!(c.dice(), 0.5);
    }

    #[test]
    fn empty_pair_convention() {
        let z = Array2::<u8>::zeros((4, 4));
        let s = PatchScore::score("p", z.view(), z.view()).unwrap();
        assert!(s.empty_pair);
        assert_eq!((s.iou, s.dice), (1.0, 1.0));
        let r = aggregate(vec![s], "source").unwrap();
        assert_eq!(r.empty_pair_count, 1);
    }

    #[test]
    fn shape_mismatch() {
        let a = Array2::<u8>::zeros((4, 4));
        let b = Array2::<u8>::zeros((4, 5));
        assert!(matches!(PairCounts::from_arrays(a.view(), b.view()), Err(MetricsError::ShapeMismatch(..))));
    }

    fn with_iou(v: f64) -> PatchScore {
        PatchScore {
            patch_id: "p".into(),
            iou: v,
            dice: 2.0 * v / (1.0 + v),
            pred_positive: 1,
            gt_positive: 1,
            intersection: 1,
            empty_pair: false,
        }
    }

    #[test]
    fn aggregation() {
        let r = aggregate(vec![with_iou(0.5)], "source").unwrap();
        assert_eq!((r.mean_iou, r.std_iou), (0.5, 0.0));
        let r = aggregate(vec![with_iou(0.0), with_iou(1.0)], "source").unwrap();
        assert_eq!((r.mean_iou, r.std_iou), (0.5, 0.5));
        assert!(r.summary().starts_with("IoU 0.500 ± 0.500"));
        assert!(matches!(aggregate(vec![], "source"), Err(MetricsError::EmptyScores)));
    }

    #[test]
    fn csv_layout() {
        let r = aggregate(vec![with_iou(1.0)], "transfer").unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("patch_id,iou,dice,pred_positive,gt_positive,intersection,empty_pair\np,1,1,1,1,1,false"));
    }
}
