//! On-disk patch store: `manifest.json` plus, per patch, `patches/<id>_img.tif`
//! (3-band float32) and `patches/<id>_label.tif` (8-bit).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::raster_io::{self, RasterData};

use super::labels::{burned_fraction, LabeledPatch};
use super::split::{DatasetManifest, PatchRecord};
use super::windows::PatchWindow;
use super::DatasetError;

pub const MANIFEST_FILE: &str = "manifest.json";
const PATCH_DIR: &str = "patches";

fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(PATCH_DIR).join(format!("{id}_img.tif"))
}

fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(PATCH_DIR).join(format!("{id}_label.tif"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io(format!("{}: {e}", path.display()))
}

fn checksum(dir: &Path, manifest: &DatasetManifest) -> Result<String, DatasetError> {
    let mut hasher = Sha256::new();
    let records = serde_json::to_vec(&manifest.records).expect("records serialise");
    hasher.update(&records);
    for r in &manifest.records {
        for path in [image_path(dir, &r.patch_id), label_path(dir, &r.patch_id)] {
            let bytes = fs::read(&path).map_err(|e| DatasetError::CorruptStore(format!("{}: {e}", path.display())))?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Writes patches and manifest; records are rebuilt from `patches` in the given order.
/// Returns the manifest as written (with counts and checksum).
pub fn write_store(dir: &Path, manifest: &DatasetManifest, patches: &[LabeledPatch]) -> Result<DatasetManifest, DatasetError> {
    let by_id: BTreeMap<String, &LabeledPatch> = patches.iter().map(|p| (p.patch_id(), p)).collect();
    if by_id.len() != patches.len() {
        return Err(DatasetError::InvalidPatch("duplicate patch ids".into()));
    }
    let mut out = manifest.clone();
    out.records = patches.iter().map(PatchRecord::from_patch).collect();
    // Split tags recorded in the manifest win over the in-memory patches.
    for r in &mut out.records {
        if let Some(m) = manifest.records.iter().find(|m| m.patch_id == r.patch_id) {
            r.split = m.split;
        }
    }
    out.counts = out.recount();
    out.validate()?;
    let patch_dir = dir.join(PATCH_DIR);
    fs::create_dir_all(&patch_dir).map_err(|e| io_err(&patch_dir, e))?;
    for p in patches {
        let id = p.patch_id();
        raster_io::write_f32_bands(&image_path(dir, &id), &p.window.grid, &p.channels)?;
        raster_io::write_u8(&label_path(dir, &id), &p.window.grid, &p.label, None)?;
    }
    out.checksum = checksum(dir, &out)?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&out).expect("manifest serialises");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| DatasetError::CorruptStore(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Reads and verifies a store. Any checksum or consistency failure is `CorruptStore`.
pub fn read_store(dir: &Path) -> Result<(DatasetManifest, Vec<LabeledPatch>), DatasetError> {
    let manifest = read_manifest(dir)?;
    let actual = checksum(dir, &manifest)?;
    if actual != manifest.checksum {
        return Err(DatasetError::CorruptStore(format!("checksum mismatch: manifest {}, content {actual}", manifest.checksum)));
    }
    let mut patches = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let corrupt = |msg: String| DatasetError::CorruptStore(format!("{}: {msg}", r.patch_id));
        let img = raster_io::read_geotiff(&image_path(dir, &r.patch_id))?;
        let lab = raster_io::read_geotiff(&label_path(dir, &r.patch_id))?;
        let (RasterData::F32Bands(channels), RasterData::U8(label)) = (img.data, lab.data) else {
            return Err(corrupt("unexpected pixel layout".into()));
        };
        if img.grid != lab.grid {
            return Err(corrupt("image and label grids differ".into()));
        }
        let window = PatchWindow {
            scene_id: r.scene_id.clone(),
            row_off: r.row_off,
            col_off: r.col_off,
            grid: img.grid,
        };
        if window.patch_id() != r.patch_id {
            return Err(corrupt("patch id does not match its offsets".into()));
        }
        let mut patch = LabeledPatch::new(window, channels, label, r.sensing_date)?;
        if burned_fraction(&patch.label) != r.burned_fraction {
            return Err(corrupt("burned fraction does not match label".into()));
        }
        patch.split = r.split;
        patches.push(patch);
    }
    Ok((manifest, patches))
}
