use std::fs;

use burnscan::dataset::{
    generate_synthetic_scene, label_composite, read_store, split_dataset, write_store, write_synthetic_granule, DatasetError, DatasetManifest,
    ExtractOptions, PatchRecord, Protocol, SplitUnit, SyntheticSceneSpec,
};
use burnscan::geo::rasterize_polygons;
use burnscan::ingest::{build_catalog, composite, read_composite, write_composite, Band, IngestError};

#[test]
fn catalog_composite_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSceneSpec::new(256, 3, 4);
    let (scene, _) = generate_synthetic_scene(&spec).unwrap();
    write_synthetic_granule(&dir.path().join("granules/T29_A"), &scene).unwrap();

    // An incomplete granule and a JPEG2000 granule are reported, not fatal.
    let partial = dir.path().join("granules/T29_B");
    fs::create_dir_all(&partial).unwrap();
    fs::copy(dir.path().join("granules/T29_A").join(format!("{}_B8A.tif", scene.scene_id())), partial.join("X_20160901_B8A.tif")).unwrap();
    let jp2 = dir.path().join("granules/T29_C_20160901");
    fs::create_dir_all(&jp2).unwrap();
    for b in ["B8A", "B03", "B12"] {
        fs::write(jp2.join(format!("T29_{b}.jp2")), b"not really").unwrap();
    }

    let catalog = build_catalog(dir.path()).unwrap();
    assert_eq!(catalog.scenes.len(), 1);
    assert_eq!(catalog.skipped.len(), 2);
    assert!(catalog.skipped.iter().any(|s| s.reason.contains("missing band")));
    assert!(catalog.skipped.iter().any(|s| s.reason.contains("JPEG2000")));
    let s = &catalog.scenes[0];
    assert_eq!(s.scene_id, scene.scene_id());
    assert_eq!(s.sensing_date, spec.sensing_date);
    assert_eq!(s.band_paths.len(), Band::ORDER.len());

    let c = composite(s).unwrap();
    assert_eq!(c, scene);
    let path = dir.path().join("c.tif");
    write_composite(&path, &c).unwrap();
    assert_eq!(read_composite(&path).unwrap(), c);
}

#[test]
fn empty_catalog_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(build_catalog(dir.path()), Err(IngestError::EmptyCatalog(_))));
}

#[test]
fn extract_split_store() {
    let spec = SyntheticSceneSpec::new(1280, 12, 7);
    let (scene, burns) = generate_synthetic_scene(&spec).unwrap();
    let keep_all = ExtractOptions {
        keep_unburned: true,
        ..Default::default()
    };
    let (all, stats) = label_composite(&scene, &burns, &keep_all).unwrap();
    assert_eq!((stats.windows, all.len()), (100, 100));
    let (burned, stats) = label_composite(&scene, &burns, &ExtractOptions::default()).unwrap();
    assert_eq!(stats.kept + stats.dropped_unburned, 100);
    assert!(burned.iter().all(|p| p.burned_fraction > 0.0));

    // Patch labels equal the scene-level rasterization cut at each window.
    let full = rasterize_polygons(&burns, scene.grid()).unwrap();
    for p in &burned {
        let (r, c) = (p.window.row_off, p.window.col_off);
        let cut = full.data().slice(ndarray::s![r..r + 128, c..c + 128]);
        assert_eq!(p.label.view(), cut);
    }

    let records: Vec<_> = burned.iter().map(PatchRecord::from_patch).collect();
    let manifest = split_dataset(&DatasetManifest::new(records, Protocol::default()), 0.7, 42, SplitUnit::Patch).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_store(dir.path(), &manifest, &burned).unwrap();
    let (back, patches) = read_store(dir.path()).unwrap();
    assert_eq!(back, written);
    assert_eq!(patches.len(), burned.len());
    for (a, b) in patches.iter().zip(&burned) {
        assert_eq!(a.channels, b.channels);
        assert_eq!(a.label, b.label);
    }

    // Rewriting gives byte-identical files.
    let dir2 = tempfile::tempdir().unwrap();
    write_store(dir2.path(), &manifest, &burned).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir.path().join("patches")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        assert_eq!(fs::read(dir.path().join("patches").join(n)).unwrap(), fs::read(dir2.path().join("patches").join(n)).unwrap());
    }
    assert_eq!(fs::read(dir.path().join("manifest.json")).unwrap(), fs::read(dir2.path().join("manifest.json")).unwrap());

    // Tampering with a patch file is detected.
    let victim = dir.path().join("patches").join(&names[0]);
    let mut bytes = fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&victim, bytes).unwrap();
    assert!(matches!(read_store(dir.path()), Err(DatasetError::CorruptStore(_))));
}
