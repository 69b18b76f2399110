use std::collections::BTreeMap;
use std::fs;

use competence_kit::error::Error;
use competence_kit::{
    generate_synthetic_task, load_task_bundle, load_tensor, save_task_bundle, save_tensor,
    LoadOptions, SyntheticConfig, Tensor2,
};
use proptest::prelude::*;
use tempfile::TempDir;

fn write_tensor_files(dir: &std::path::Path, name: &str, header: &str, payload: &[u8]) {
    fs::write(dir.join(format!("{name}.json")), header).unwrap();
    fs::write(dir.join(format!("{name}.bin")), payload).unwrap();
}

fn le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[test]
fn identity_tensor_roundtrips() {
    let dir = TempDir::new().unwrap();
    write_tensor_files(
        dir.path(),
        "t",
        r#"{"rows":2,"cols":2,"dtype":"f32le"}"#,
        &le_bytes(&[1.0, 0.0, 0.0, 1.0]),
    );
    let t = load_tensor(&dir.path().join("t.json")).unwrap();
    assert_eq!((t.rows(), t.cols()), (2, 2));
    assert_eq!(t.values(), &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn declared_count_must_match_payload() {
    let dir = TempDir::new().unwrap();
    write_tensor_files(
        dir.path(),
        "t",
        r#"{"rows":2,"cols":3,"dtype":"f32le"}"#,
        &le_bytes(&[1.0, 2.0, 3.0, 4.0, 5.0]),
    );
    match load_tensor(&dir.path().join("t.json")) {
        Err(Error::ShapeMismatch {
            expected, actual, ..
        }) => {
            assert_eq!(expected, 6);
            assert_eq!(actual, 5);
        }
        other => panic!("expected ShapeMismatch, got {other:?}"),
    }
}

#[test]
fn nan_payload_reports_flat_index() {
    let dir = TempDir::new().unwrap();
    write_tensor_files(
        dir.path(),
        "t",
        r#"{"rows":1,"cols":3,"dtype":"f32le"}"#,
        &le_bytes(&[1.0, f32::NAN, 2.0]),
    );
    match load_tensor(&dir.path().join("t.json")) {
        Err(Error::NonFiniteValue { index, .. }) => assert_eq!(index, 1),
        other => panic!("expected NonFiniteValue, got {other:?}"),
    }
}

#[test]
fn missing_and_malformed_files_are_distinguished() {
    let dir = TempDir::new().unwrap();
    assert!(matches!(
        load_tensor(&dir.path().join("absent.json")),
        Err(Error::MissingFile { .. })
    ));

    write_tensor_files(dir.path(), "bad", "{not json", &[]);
    assert!(matches!(
        load_tensor(&dir.path().join("bad.json")),
        Err(Error::MalformedHeader { .. })
    ));

    write_tensor_files(
        dir.path(),
        "dtype",
        r#"{"rows":1,"cols":1,"dtype":"f64le"}"#,
        &le_bytes(&[1.0]),
    );
    assert!(matches!(
        load_tensor(&dir.path().join("dtype.json")),
        Err(Error::MalformedHeader { .. })
    ));
}

fn small_bundle_config() -> SyntheticConfig {
    SyntheticConfig {
        num_classes: 3,
        feature_dim: 8,
        n_train: 60,
        n_val: 30,
        n_test: 30,
        n_ood: 30,
        n_open: 20,
        open_world_classes: 2,
        seed: 5,
        ..SyntheticConfig::default()
    }
}

#[test]
fn bundle_roundtrip_is_bit_identical() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest = save_task_bundle(dir.path(), &bundle).unwrap();
    let reloaded = load_task_bundle(&manifest, &LoadOptions::default()).unwrap();

    assert_eq!(bundle.num_classes, reloaded.num_classes);
    assert_eq!(bundle.meta, reloaded.meta);
    for (a, b) in [
        (&bundle.id_train, &reloaded.id_train),
        (&bundle.id_val, &reloaded.id_val),
        (&bundle.id_test, &reloaded.id_test),
        (&bundle.ood_test, &reloaded.ood_test),
        (
            bundle.open_world.as_ref().unwrap(),
            reloaded.open_world.as_ref().unwrap(),
        ),
    ] {
        assert_eq!(a, b);
    }
    assert_eq!(bundle.head, reloaded.head);
}

#[test]
fn manifest_key_order_is_irrelevant() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    // Reserialize the manifest with keys in reverse-sorted order.
    let text = fs::read_to_string(&manifest_path).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    fn reverse_keys(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                keys.reverse();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), reverse_keys(&map[k]));
                }
                serde_json::Value::Object(out)
            }
            other => other.clone(),
        }
    }
    let shuffled = serde_json::to_string(&reverse_keys(&parsed)).unwrap();
    let alt = dir.path().join("manifest_shuffled.json");
    fs::write(&alt, shuffled).unwrap();

    let a = load_task_bundle(&manifest_path, &LoadOptions::default()).unwrap();
    let b = load_task_bundle(&alt, &LoadOptions::default()).unwrap();
    assert_eq!(a.id_train, b.id_train);
    assert_eq!(a.ood_test, b.ood_test);
    assert_eq!(a.head, b.head);
}

#[test]
fn predictions_recomputed_when_absent() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    let text = fs::read_to_string(&manifest_path).unwrap();
    let mut parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    for split in ["id_train", "id_val", "id_test", "ood_test", "open_world"] {
        parsed[split]
            .as_object_mut()
            .unwrap()
            .remove("predictions");
    }
    fs::write(&manifest_path, serde_json::to_string(&parsed).unwrap()).unwrap();

    let reloaded = load_task_bundle(&manifest_path, &LoadOptions::default()).unwrap();
    assert_eq!(reloaded.id_val.predictions, bundle.id_val.predictions);
    assert_eq!(reloaded.ood_test.predictions, bundle.ood_test.predictions);
}

#[test]
fn contradicting_predictions_are_rejected() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    let pred_path = dir.path().join("id_val_predictions.json");
    let mut predictions: Vec<i64> =
        serde_json::from_str(&fs::read_to_string(&pred_path).unwrap()).unwrap();
    predictions[3] = (predictions[3] + 1) % bundle.num_classes as i64;
    fs::write(&pred_path, serde_json::to_string(&predictions).unwrap()).unwrap();

    match load_task_bundle(&manifest_path, &LoadOptions::default()) {
        Err(Error::PredictionMismatch { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected PredictionMismatch, got {other:?}"),
    }
}

#[test]
fn dimension_mismatch_across_splits_is_rejected() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    // Rewrite ood_test features with one fewer column.
    let ood = &bundle.ood_test.features;
    let narrowed: Vec<f32> = (0..ood.rows())
        .flat_map(|i| ood.row(i)[..ood.cols() - 1].to_vec())
        .collect();
    let t = Tensor2::new(ood.rows(), ood.cols() - 1, narrowed).unwrap();
    save_tensor(&dir.path().join("ood_test_features.json"), &t).unwrap();

    assert!(matches!(
        load_task_bundle(&manifest_path, &LoadOptions::default()),
        Err(Error::InconsistentDimensions { .. })
    ));
}

#[test]
fn head_consistency_check_can_be_disabled() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    // Corrupt one id_val logit beyond the tolerance but keep the argmax.
    let logits = &bundle.id_val.logits;
    let mut values = logits.values().to_vec();
    let row = 0;
    let am = bundle.id_val.predictions[row] as usize;
    values[row * logits.cols() + am] += 0.5;
    let t = Tensor2::new(logits.rows(), logits.cols(), values).unwrap();
    save_tensor(&dir.path().join("id_val_logits.json"), &t).unwrap();
    // Predictions still match, so only the head check should trip.
    assert!(matches!(
        load_task_bundle(&manifest_path, &LoadOptions::default()),
        Err(Error::HeadInconsistent { .. })
    ));
    let relaxed = LoadOptions {
        check_head_consistency: false,
    };
    assert!(load_task_bundle(&manifest_path, &relaxed).is_ok());
}

#[test]
fn open_world_labels_must_be_unknown() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    let labels_path = dir.path().join("open_world_labels.json");
    let mut labels: Vec<i64> =
        serde_json::from_str(&fs::read_to_string(&labels_path).unwrap()).unwrap();
    labels[0] = 1;
    fs::write(&labels_path, serde_json::to_string(&labels).unwrap()).unwrap();

    assert!(matches!(
        load_task_bundle(&manifest_path, &LoadOptions::default()),
        Err(Error::InvalidLabel { row: 0, .. })
    ));
}

#[test]
fn unknown_labels_rejected_in_id_splits() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    let labels_path = dir.path().join("id_train_labels.json");
    let mut labels: Vec<i64> =
        serde_json::from_str(&fs::read_to_string(&labels_path).unwrap()).unwrap();
    labels[2] = -1;
    fs::write(&labels_path, serde_json::to_string(&labels).unwrap()).unwrap();

    assert!(matches!(
        load_task_bundle(&manifest_path, &LoadOptions::default()),
        Err(Error::InvalidLabel { row: 2, .. })
    ));
}

#[test]
fn meta_defaults_to_empty_when_absent() {
    let bundle = generate_synthetic_task(&small_bundle_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest_path = save_task_bundle(dir.path(), &bundle).unwrap();

    let text = fs::read_to_string(&manifest_path).unwrap();
    let mut parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    parsed.as_object_mut().unwrap().remove("meta");
    fs::write(&manifest_path, serde_json::to_string(&parsed).unwrap()).unwrap();

    let reloaded = load_task_bundle(&manifest_path, &LoadOptions::default()).unwrap();
    assert_eq!(reloaded.meta, BTreeMap::new());
}

proptest! {
    #[test]
    fn arbitrary_finite_tensors_roundtrip(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            // Map to a finite f32 in roughly [-1e6, 1e6].
            ((state >> 40) as f32 - 8388608.0) / 8.388608
        };
        let values: Vec<f32> = (0..rows * cols).map(|_| next()).collect();
        let tensor = Tensor2::new(rows, cols, values).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.json");
        save_tensor(&path, &tensor).unwrap();
        let reloaded = load_tensor(&path).unwrap();
        prop_assert_eq!(tensor, reloaded);
    }
}
