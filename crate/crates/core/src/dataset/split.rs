use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{LabeledPatch, SplitTag};
use super::DatasetError;

/// Default share of patches assigned to training.
pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub scene_id: String,
    pub row_off: usize,
    pub col_off: usize,
    pub sensing_date: NaiveDate,
    pub burned_fraction: f64,
    pub split: SplitTag,
}

impl PatchRecord {
    pub fn from_patch(p: &LabeledPatch) -> Self {
        Self {
            patch_id: p.patch_id(),
            scene_id: p.window.scene_id.clone(),
            row_off: p.window.row_off,
            col_off: p.window.col_off,
            sensing_date: p.sensing_date,
            burned_fraction: p.burned_fraction,
            split: p.split,
        }
    }
}

/// Unit of random assignment. Patch-level splits of tiles from one scene are
/// optimistically biased; scene-level keeps whole scenes on one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    #[default]
    Patch,
    Scene,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub unassigned: usize,
}

/// How the patches were produced; stored so results declare their own protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub stride: usize,
    pub window_days: i64,
    pub min_burned_fraction: f64,
    pub split_unit: SplitUnit,
    pub train_ratio: f64,
    /// Free-form tag, e.g. "source" or "transfer".
    pub domain: String,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            stride: super::PATCH_SIZE,
            window_days: super::DEFAULT_WINDOW_DAYS,
            min_burned_fraction: 0.0,
            split_unit: SplitUnit::Patch,
            train_ratio: DEFAULT_TRAIN_RATIO,
            domain: "source".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<PatchRecord>,
    pub split_seed: Option<u64>,
    pub counts: SplitCounts,
    pub protocol: Protocol,
    /// Hex SHA-256 over records and patch files; filled in by the store writer.
    #[serde(default)]
    pub checksum: String,
}

impl DatasetManifest {
    pub fn new(records: Vec<PatchRecord>, protocol: Protocol) -> Self {
        let mut m = Self {
            records,
            split_seed: None,
            counts: SplitCounts::default(),
            protocol,
            checksum: String::new(),
        };
        m.counts = m.recount();
        m
    }

    pub fn recount(&self) -> SplitCounts {
        self.records.iter().fold(SplitCounts::default(), |mut c, r| {
            match r.split {
                SplitTag::Train => c.train += 1,
                SplitTag::Test => c.test += 1,
                SplitTag::Unassigned => c.unassigned += 1,
            }
            c
        })
    }

    /// Unique ids and counts that agree with the records.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.patch_id.as_str()) {
                return Err(DatasetError::CorruptStore(format!("duplicate patch id {}", r.patch_id)));
            }
        }
        if self.recount() != self.counts {
            return Err(DatasetError::CorruptStore(format!(
                "manifest counts {:?} disagree with records {:?}",
                self.counts,
                self.recount()
            )));
        }
        Ok(())
    }

    pub fn ids_with(&self, tag: SplitTag) -> Vec<&str> {
        self.records.iter().filter(|r| r.split == tag).map(|r| r.patch_id.as_str()).collect()
    }
}

/// `floor(ratio * n)` without being thrown off by representation error in `ratio`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio) + 1e-9).floor() as usize
}

/// Seeded uniform random split. Patch-level splits assign exactly
/// `floor(train_ratio * N)` patches to training.
pub fn split_dataset(manifest: &DatasetManifest, train_ratio: f64, seed: u64, unit: SplitUnit) -> Result<DatasetManifest, DatasetError> {
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(DatasetError::InvalidSplit(format!("train ratio {train_ratio} outside [0, 1]")));
    }
    if manifest.records.iter().any(|r| r.split != SplitTag::Unassigned) {
        return Err(DatasetError::InvalidSplit("records are already split".into()));
    }
    let n = manifest.records.len();
    let n_train = train_count(n, train_ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    match unit {
        SplitUnit::Patch => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (rank, &idx) in order.iter().enumerate() {
                out.records[idx].split = if rank < n_train { SplitTag::Train } else { SplitTag::Test };
            }
        }
        SplitUnit::Scene => {
            let scenes: BTreeSet<&str> = manifest.records.iter().map(|r| r.scene_id.as_str()).collect();
            let mut scenes: Vec<&str> = scenes.into_iter().collect();
            scenes.shuffle(&mut rng);
            let mut train_scenes = BTreeSet::new();
            let mut assigned = 0;
            for s in scenes {
                if assigned >= n_train {
                    break;
                }
                assigned += manifest.records.iter().filter(|r| r.scene_id == s).count();
                train_scenes.insert(s.to_string());
            }
            for r in &mut out.records {
                r.split = if train_scenes.contains(&r.scene_id) { SplitTag::Train } else { SplitTag::Test };
            }
        }
    }
    out.split_seed = Some(seed);
    out.protocol.train_ratio = train_ratio;
    out.protocol.split_unit = unit;
    out.counts = out.recount();
    Ok(out)
}
