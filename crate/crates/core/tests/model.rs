use burnscan::dataset::synthetic_patch_set;
use burnscan::metrics::evaluate;
use burnscan::segmodel::{export_weights, import_weights, train, ModelConfig, ModelError, SegmentationModel};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(rng: &mut ChaCha8Rng) -> Array3<f32> {
    Array3::from_shape_fn((3, 128, 128), |_| rng.gen_range(0.0..1.0))
}

fn tiny() -> SegmentationModel {
    SegmentationModel::build(ModelConfig::tiny().with_seed(3)).unwrap()
}

#[test]
fn output_range_on_random_inputs() {
    let m = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs: Vec<_> = (0..100).map(|_| random_input(&mut rng)).collect();
    let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
    for p in m.predict_batch(&views).unwrap() {
        assert_eq!(p.dim(), (128, 128));
        assert!(p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}

#[test]
fn predictions_are_pure_and_batch_independent() {
    let m = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs: Vec<_> = (0..5).map(|_| random_input(&mut rng)).collect();
    let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
    let batched = m.predict_batch(&views).unwrap();
    for (x, b) in inputs.iter().zip(&batched) {
        let single = m.predict_patch(x.view()).unwrap();
        assert_eq!(&single, b);
        assert_eq!(single, m.predict_patch(x.view()).unwrap());
    }
}

#[test]
fn concurrent_inference_matches_sequential() {
    let m = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_input(&mut rng);
    let expected = m.predict_patch(x.view()).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..3).map(|_| s.spawn(|| m.predict_patch(x.view()).unwrap())).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}

#[test]
fn weight_file_round_trip_is_bit_identical() {
    let m = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    export_weights(&m, &path).unwrap();
    let back = import_weights(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probes: Vec<_> = (0..4).map(|_| random_input(&mut rng)).collect();
    let views: Vec<_> = probes.iter().map(|x| x.view()).collect();
    let a = m.predict_batch(&views).unwrap();
    let b = back.predict_batch(&views).unwrap();
    for (pa, pb) in a.iter().zip(&b) {
        assert!(pa.iter().zip(pb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(import_weights(&path), Err(ModelError::CorruptFile(_))));
}

#[test]
fn training_needs_patches() {
    let cfg = ModelConfig::tiny();
    let err = train(tiny(), &[], &[], &cfg).unwrap_err();
    assert!(matches!(err, ModelError::NoTrainingData));
}

#[test]
fn short_training_is_deterministic_and_checkpoints() {
    let patches = synthetic_patch_set(10, 50).unwrap();
    let (tr, ho) = patches.split_at(8);
    let mut cfg = ModelConfig::tiny().with_seed(9);
    cfg.max_epochs = 3;
    cfg.batch_size = 4;
    let a = train(SegmentationModel::build(cfg.clone()).unwrap(), tr, ho, &cfg).unwrap();
    let b = train(SegmentationModel::build(cfg.clone()).unwrap(), tr, ho, &cfg).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(a.history(), b.history());
    assert_eq!(a.history().len(), 3);
    let best = a.best_epoch().unwrap();
    let best_val = a.history()[best - 1].val_metric.unwrap();
    assert!(a.history().iter().all(|r| r.val_metric.unwrap() <= best_val));
    // The retained weights are the ones that scored best.
    let report = evaluate(&a, ho, 0.5, "holdout").unwrap();
    assert_eq!(report.mean_iou, best_val);
}

#[test]
fn exploding_learning_rate_is_reported() {
    let patches = synthetic_patch_set(4, 60).unwrap();
    let mut cfg = ModelConfig::tiny();
    cfg.learning_rate = 1e200;
    cfg.max_epochs = 4;
    cfg.batch_size = 2;
    let err = train(SegmentationModel::build(cfg.clone()).unwrap(), &patches, &[], &cfg).unwrap_err();
    assert!(matches!(err, ModelError::DivergedTraining { .. }), "{err}");
}
