use super::*;
use ndarray::array;
use rand::Rng;

fn linear_flat_data(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    // Targets from a fixed linear map of the inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-2.0..2.0));
    let w = array![[1.0, -0.5], [0.3, 2.0], [-1.2, 0.7]];
    let y = x.dot(&w);
    (x, y)
}

fn quick_fc_spec() -> RegressorSpec {
    let mut spec = RegressorSpec::fc();
    spec.fc.hidden_layers = 2;
    spec.fc.width = 32;
    spec.fc.dropout = 0.0;
    spec.train.max_epochs = 150;
    spec.train.patience = 30;
    spec.train.batch = 64;
    spec
}

#[test]
fn fc_learns_linear_map() {
    let (x, y) = linear_flat_data(600, 1);
    let model = fit(&quick_fc_spec(), &TrainData::Flat(x), &y).unwrap();
    let last = model.history().last().unwrap();
    assert!(
        last.val_loss < 1e-3,
        "validation MSE {} not below 1e-3 (normalized units)",
        last.val_loss
    );
}

#[test]
fn zero_epochs_returns_initialization() {
    let (x, y) = linear_flat_data(50, 2);
    let mut spec = quick_fc_spec();
    spec.train.max_epochs = 0;
    let model = fit(&spec, &TrainData::Flat(x.clone()), &y).unwrap();
    // History holds only the epoch-0 validation entry.
    assert_eq!(model.history().len(), 1);
    assert_eq!(model.history()[0].epoch, 0);
    assert!(model.history()[0].train_loss.is_none());
    // Same-seed initialization is identical.
    let model2 = fit(&spec, &TrainData::Flat(x), &y).unwrap();
    match (&model, &model2) {
        (TrainedRegressor::Fc(a), TrainedRegressor::Fc(b)) => {
            assert_eq!(a.net.flat_params(), b.net.flat_params());
        }
        _ => unreachable!(),
    }
}

#[test]
fn training_is_deterministic_under_seed() {
    let (x, y) = linear_flat_data(200, 3);
    let mut spec = quick_fc_spec();
    spec.train.max_epochs = 10;
    spec.fc.dropout = 0.2;
    let a = fit(&spec, &TrainData::Flat(x.clone()), &y).unwrap();
    let b = fit(&spec, &TrainData::Flat(x), &y).unwrap();
    match (&a, &b) {
        (TrainedRegressor::Fc(ma), TrainedRegressor::Fc(mb)) => {
            assert_eq!(ma.net.flat_params(), mb.net.flat_params());
            assert_eq!(ma.history, mb.history);
        }
        _ => unreachable!(),
    }
}

#[test]
fn lstm_fits_sequence_data() {
    // Target depends on the first window element, so memory is required.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 400;
    let w = 3;
    let x = Array3::from_shape_fn((n, w, 2), |_| rng.gen_range(-1.0..1.0));
    let mut y = Array2::zeros((n, 1));
    for i in 0..n {
        y[[i, 0]] = x[[i, 0, 0]] + 0.5 * x[[i, w - 1, 1]];
    }
    let mut spec = RegressorSpec::lstm();
    spec.lstm.layers = 1;
    spec.lstm.hidden = 24;
    spec.lstm.head_width = 24;
    spec.lstm.window = w;
    spec.train.max_epochs = 200;
    spec.train.patience = 40;
    spec.train.batch = 64;
    let model = fit(&spec, &TrainData::Seq(x), &y).unwrap();
    let best = model
        .history()
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "LSTM did not learn: best val {best}");
}

#[test]
fn predict_window_enforces_length() {
    let (x, y) = linear_flat_data(50, 5);
    let mut spec = quick_fc_spec();
    spec.train.max_epochs = 1;
    let model = fit(&spec, &TrainData::Flat(x), &y).unwrap();
    assert!(model.predict_window(&[vec![0.0; 3]]).is_ok());
    assert!(matches!(
        model.predict_window(&[vec![0.0; 3], vec![0.0; 3]]),
        Err(RegressError::DimensionMismatch { .. })
    ));
    assert!(matches!(
        model.predict_window(&[vec![0.0; 7]]),
        Err(RegressError::DimensionMismatch { .. })
    ));
}

#[test]
fn save_load_round_trip_is_exact() {
    let (x, y) = linear_flat_data(120, 6);
    let mut spec = quick_fc_spec();
    spec.train.max_epochs = 5;
    let model = fit(&spec, &TrainData::Flat(x), &y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save(&model, &path).unwrap();
    let back = load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a = model.predict_window(&[q.clone()]).unwrap();
        let b = back.predict_window(&[q]).unwrap();
        assert_eq!(a, b, "round trip changed predictions");
    }
}

#[test]
fn gp_save_load_preserves_neighbors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array2::from_shape_fn((60, 2), |_| rng.gen_range(-1.0..1.0));
    let y = Array2::from_shape_fn((60, 1), |_| rng.gen_range(-1.0..1.0));
    let mut spec = RegressorSpec::gp();
    spec.gp.k_nn = 7;
    let model = fit(&spec, &TrainData::Flat(x), &y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gp.json");
    save(&model, &path).unwrap();
    let back = load(&path).unwrap();
    let (ma, mb) = match (&model, &back) {
        (TrainedRegressor::Gp(a), TrainedRegressor::Gp(b)) => (a, b),
        _ => unreachable!(),
    };
    for _ in 0..50 {
        let q: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(ma.neighbor_indices(&q).unwrap(), mb.neighbor_indices(&q).unwrap());
        assert_eq!(ma.predict(&q).unwrap(), mb.predict(&q).unwrap());
    }
}

#[test]
fn truncated_model_file_is_corrupt() {
    let (x, y) = linear_flat_data(30, 8);
    let mut spec = quick_fc_spec();
    spec.train.max_epochs = 1;
    let model = fit(&spec, &TrainData::Flat(x), &y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load(&path), Err(RegressError::CorruptModel(_))));
}

#[test]
fn wrong_container_is_spec_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(
        &path,
        r#"{"format":"something-else","version":1,"model":{"kind":"fc","net":{}}}"#,
    )
    .unwrap();
    match load(&path) {
        Err(RegressError::SpecMismatch(_)) | Err(RegressError::CorruptModel(_)) => {}
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn empty_data_is_rejected() {
    let x = Array2::zeros((0, 3));
    let y = Array2::zeros((0, 2));
    assert!(matches!(
        fit(&RegressorSpec::fc(), &TrainData::Flat(x), &y),
        Err(RegressError::EmptyData)
    ));
}

#[test]
fn constant_rig_ignores_input() {
    let rig = TrainedRegressor::constant(4, vec![1.0, -2.0, 0.5]);
    let a = rig.predict_window(&[vec![0.0, 0.0, 0.0, 0.0]]).unwrap();
    let b = rig.predict_window(&[vec![9.0, -3.0, 2.0, 7.0]]).unwrap();
    assert_eq!(a, vec![1.0, -2.0, 0.5]);
    assert_eq!(a, b);
}

#[test]
fn gp_prediction_matches_small_closed_form() {
    // Three points, explicit 3x3 solve via an independent dense route.
    let x = array![[0.0], [1.0], [2.0]];
    let y = array![[1.0], [0.0], [-1.0]];
    let mut spec = RegressorSpec::gp();
    spec.gp.k_nn = 3;
    spec.gp.noise = 0.1;
    let model = fit(&spec, &TrainData::Flat(x.clone()), &y).unwrap();
    for q in [[0.5], [1.7], [-0.3]] {
        let local = model.predict_window(&[q.to_vec()]).unwrap();
        let dense = dense_gp_oracle(&spec.gp, &x, &y, &q);
        assert!((local[0] - dense[0]).abs() < 1e-10);
    }
}
