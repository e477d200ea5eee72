mod common;

use blendfit::io::{load_dataset, load_model, read_predictions, save_dataset, save_model, write_predictions};
use blendfit::{multistart_fit, train_gating, FeatureMap, HyperParams};
use common::*;

#[test]
fn model_file_round_trip_is_exact() {
    let mut r = rng(50);
    let d = random_dataset(&mut r, 40, 2);
    let h = HyperParams { n_restarts: 2, k_max: 5, ..Default::default() };
    let mut model = multistart_fit(&d, &[FeatureMap::Linear, FeatureMap::Polynomial { degree: 2 }], &h, None)
        .unwrap()
        .model;
    model.gating = Some(train_gating(d.regressors(), &model.train_weights, 3).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &model).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn dataset_and_prediction_files_round_trip() {
    let mut r = rng(51);
    let truth = random_experts(&mut r, 3, 2);
    let w = random_weights(&mut r, 25, 3);
    let d = mixture_data(&mut r, &truth, &w, 0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_dataset(&path, &d).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), d);

    let y: Vec<f64> = d.outputs().iter().map(|v| v / 3.0).collect();
    let mut buf = Vec::new();
    write_predictions(&mut buf, &y, &w).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("t,y_hat,omega1,omega2,omega3\n"));
    let (y2, w2) = read_predictions(buf.as_slice()).unwrap();
    assert_eq!(y2, y);
    assert_eq!(w2, w);
}
