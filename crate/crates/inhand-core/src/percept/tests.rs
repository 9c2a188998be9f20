use super::*;
use crate::data::{collect, split, SplitPolicy, TestSize};
use crate::regress::{dense_gp_oracle, GpParams};
use crate::sim::{Action, HandConfig, NoiseModel, ObjectSpec, SensorReading};
use ndarray::array;

fn record_with(pose: Pose, feats: [f64; 2], episode_id: u64, t: u32) -> Record {
    Record {
        episode_id,
        t,
        sensor: SensorReading {
            enc_angles: feats,
            loads: [0.0, 0.0],
            tactile: [0.0, 0.0],
            truth_pose: pose,
        },
        action: Action::NEUTRAL,
        initial_pose: Pose::new(0.0, 0.0, 0.0),
        dropped: false,
    }
}

fn comb(id: u8) -> FeatureCombination {
    FeatureCombination::new(id).unwrap()
}

#[test]
fn pose_encoding_round_trips() {
    for yaw in [-3.0, -0.5, 0.0, 1.2, 3.1] {
        let p = Pose::new(4.0, -7.0, yaw);
        let back = decode_pose(&encode_pose(&p));
        assert!((back.x - p.x).abs() < 1e-12);
        assert!((back.y - p.y).abs() < 1e-12);
        assert!(wrap_angle(back.yaw - p.yaw).abs() < 1e-12);
    }
}

#[test]
fn rigged_identity_decodes_pose() {
    // Pass-through: the regressor returns its 4 inputs, so estimate_pose on
    // encoded poses must be the identity (yaw wrapped).
    let eye = ndarray::Array2::from_shape_fn((4, 4), |(i, j)| f64::from(i == j));
    let rig = TrainedRegressor::linear_map(eye, ndarray::Array1::zeros(4));
    let model = ObservationModel { regressor: rig, combination: comb(3), window: 1 };
    let p = Pose::new(3.0, -2.0, 2.8);
    let est = model.estimate_pose(&[encode_pose(&p).to_vec()]).unwrap();
    assert!((est.x - p.x).abs() < 1e-12);
    assert!((est.y - p.y).abs() < 1e-12);
    assert!(wrap_angle(est.yaw - p.yaw).abs() < 1e-12);
}

#[test]
fn rigged_outputs_decode_yaw() {
    let rig = TrainedRegressor::constant(2, vec![0.0, 0.0, 0.0, 1.0]);
    let model = ObservationModel { regressor: rig, combination: comb(1), window: 1 };
    let p = model.estimate_pose(&[vec![0.0, 0.0]]).unwrap();
    assert_eq!((p.x, p.y, p.yaw), (0.0, 0.0, 0.0));

    let rig = TrainedRegressor::constant(2, vec![10.0, -5.0, 0.0, -1.0]);
    let model = ObservationModel { regressor: rig, combination: comb(1), window: 1 };
    let p = model.estimate_pose(&[vec![0.0, 0.0]]).unwrap();
    assert_eq!(p.x, 10.0);
    assert_eq!(p.y, -5.0);
    assert!((p.yaw - std::f64::consts::PI).abs() < 1e-12);
}

#[test]
fn perfect_predictions_give_zero_rmse() {
    let eye = ndarray::Array2::from_shape_fn((4, 4), |(i, j)| f64::from(i == j));
    let rig = TrainedRegressor::linear_map(eye, ndarray::Array1::zeros(4));
    // Records whose angle/load features hold the encoded pose.
    let mut records = Vec::new();
    for t in 0..10u32 {
        let p = Pose::new(t as f64, -(t as f64), 0.3);
        let enc = encode_pose(&p);
        let mut r = record_with(p, [enc[0], enc[1]], 0, t);
        r.sensor.loads = [enc[2], enc[3]];
        records.push(r);
    }
    let model = ObservationModel { regressor: rig, combination: comb(5), window: 1 };
    let rep = evaluate_observation(&model, &records).unwrap();
    assert!(rep.position_rmse < 1e-9);
    assert!(rep.orientation_rmse_deg < 1e-9);
}

#[test]
fn rmse_formula_matches_hand_computation() {
    // Two samples with position errors 3 mm and 4 mm -> sqrt(12.5).
    let rig = TrainedRegressor::constant(2, vec![0.0, 0.0, 0.0, 1.0]);
    let model = ObservationModel { regressor: rig, combination: comb(1), window: 1 };
    let records = vec![
        record_with(Pose::new(3.0, 0.0, 0.0), [0.0, 0.0], 0, 0),
        record_with(Pose::new(0.0, 4.0, 0.0), [0.0, 0.0], 0, 1),
    ];
    let rep = evaluate_observation(&model, &records).unwrap();
    assert!((rep.position_rmse - 12.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn orientation_errors_wrap() {
    // Truth 180 deg; predictions at +179 and -179 are both 1 deg off.
    let rig = TrainedRegressor::constant(2, vec![0.0, 0.0, 0.0, 1.0]);
    let model = ObservationModel { regressor: rig, combination: comb(1), window: 1 };
    let base = 179f64.to_radians();
    let records = vec![
        record_with(Pose::new(0.0, 0.0, base), [0.0, 0.0], 0, 0),
        record_with(Pose::new(0.0, 0.0, -base), [0.0, 0.0], 0, 1),
    ];
    // Predicted yaw is 0, so errors are 179 each; use a rig at 180 instead.
    let rig = TrainedRegressor::constant(2, vec![0.0, 0.0, 0.0, -1.0]);
    let model2 = ObservationModel { regressor: rig, combination: comb(1), window: 1 };
    let rep = evaluate_observation(&model2, &records).unwrap();
    assert!((rep.orientation_rmse_deg - 1.0).abs() < 1e-9, "{}", rep.orientation_rmse_deg);
    drop(model);
}

#[test]
fn orientation_invariant_to_full_turns() {
    let rig = TrainedRegressor::constant(2, vec![0.0, 0.0, 0.2, 0.9]);
    let model = ObservationModel { regressor: rig, combination: comb(1), window: 1 };
    let a = evaluate_observation(
        &model,
        &[record_with(Pose::new(0.0, 0.0, 0.4), [0.0, 0.0], 0, 0)],
    )
    .unwrap();
    let b = evaluate_observation(
        &model,
        &[record_with(
            Pose::new(0.0, 0.0, 0.4 + 2.0 * std::f64::consts::PI),
            [0.0, 0.0],
            0,
            0,
        )],
    )
    .unwrap();
    assert!((a.orientation_rmse_deg - b.orientation_rmse_deg).abs() < 1e-9);
}

#[test]
fn gp_observation_matches_dense_oracle() {
    // Three training records vs the closed-form dense GP.
    let poses = [
        Pose::new(1.0, 2.0, 0.1),
        Pose::new(-1.0, 1.0, -0.2),
        Pose::new(0.5, 3.0, 0.4),
    ];
    let feats = [[0.1, 0.9], [0.7, 0.3], [-0.5, 0.2]];
    let records: Vec<Record> = poses
        .iter()
        .zip(&feats)
        .enumerate()
        .map(|(t, (p, f))| record_with(*p, *f, 0, t as u32))
        .collect();
    let mut spec = RegressorSpec::gp();
    spec.gp = GpParams { k_nn: 3, noise: 0.05, ..GpParams::default() };
    let model = train_observation(&records, comb(4), &spec).unwrap();
    let x = array![[0.1, 0.9], [0.7, 0.3], [-0.5, 0.2]];
    let y = Array2::from_shape_fn((3, 4), |(i, j)| encode_pose(&poses[i])[j]);
    let query = [0.2, 0.4];
    let est = model.estimate_pose(&[query.to_vec()]).unwrap();
    let oracle = decode_pose(&dense_gp_oracle(&spec.gp, &x, &y, &query));
    assert!((est.x - oracle.x).abs() < 1e-8);
    assert!((est.y - oracle.y).abs() < 1e-8);
    assert!(wrap_angle(est.yaw - oracle.yaw).abs() < 1e-8);
}

#[test]
fn constant_pose_is_learned() {
    let p = Pose::new(2.0, 5.0, 0.2);
    let records: Vec<Record> = (0..40)
        .map(|t| record_with(p, [(t % 7) as f64 * 0.1, (t % 3) as f64 * 0.2], 0, t))
        .collect();
    let mut spec = RegressorSpec::fc();
    spec.fc.hidden_layers = 1;
    spec.fc.width = 16;
    spec.fc.dropout = 0.0;
    spec.train.max_epochs = 200;
    spec.train.patience = 50;
    let model = train_observation(&records, comb(4), &spec).unwrap();
    let est = model.estimate_pose(&[vec![0.3, 0.2]]).unwrap();
    // Constant-target fit: prediction within a loose tolerance of the pose.
    assert!(est.position_distance(&p) < 0.5, "est ({}, {})", est.x, est.y);
}

#[test]
fn critic_labels_zero_for_perfect_observer_and_nonnegative() {
    let ds = collect(
        &HandConfig::default(),
        &ObjectSpec::disk15(),
        &NoiseModel::default(),
        4,
        50,
        3,
    )
    .unwrap();
    let splits = split(
        &ds,
        &SplitPolicy { test: TestSize::Episodes(1), critic_holdout_fraction: 0.25 },
    )
    .unwrap();
    // Observation model rigged to perfect predictions is impossible from
    // features alone; instead rig a constant and check the critic machinery:
    // labels are its true position errors, outputs non-negative.
    let rig = TrainedRegressor::constant(6, vec![0.0, 70.0, 0.0, 1.0]);
    let obs = ObservationModel { regressor: rig, combination: comb(7), window: 1 };
    let mut spec = critic_default_spec();
    spec.train.max_epochs = 30;
    let critic = train_critic(&obs, &splits.critic_holdout, &spec).unwrap();
    for r in splits.test.iter().take(50) {
        let f = extract_features(r, comb(7));
        assert!(critic.critic_error(&f).unwrap() >= 0.0);
    }
}

#[test]
fn empty_holdout_is_an_error() {
    let rig = TrainedRegressor::constant(2, vec![0.0; 4]);
    let obs = ObservationModel { regressor: rig, combination: comb(1), window: 1 };
    assert!(matches!(
        train_critic(&obs, &[], &critic_default_spec()),
        Err(PerceptError::EmptySplit(_))
    ));
}

#[test]
fn transfer_diagonal_equals_self_evaluation() {
    let hand = HandConfig::default();
    let noise = NoiseModel::default();
    let d15 = collect(&hand, &ObjectSpec::disk15(), &noise, 4, 60, 10).unwrap();
    let d10 = collect(&hand, &ObjectSpec::disk10(), &noise, 4, 60, 11).unwrap();
    let policy = SplitPolicy { test: TestSize::Episodes(1), critic_holdout_fraction: 0.0 };
    let s15 = split(&d15, &policy).unwrap();
    let s10 = split(&d10, &policy).unwrap();
    let mut spec = RegressorSpec::gp();
    spec.gp.k_nn = 30;
    let objects = [
        ObjectSplits { label: "circ15".into(), train: &s15.train, test: &s15.test },
        ObjectSplits { label: "circ10".into(), train: &s10.train, test: &s10.test },
    ];
    let matrix = cross_transfer(&objects, comb(7), &spec).unwrap();
    assert_eq!(matrix.reports.len(), 2);
    assert_eq!(matrix.reports[0].len(), 2);
    // Diagonal must equal a standalone train+evaluate bit-for-bit.
    let self_model = train_observation(&s15.train, comb(7), &spec).unwrap();
    let self_rep = evaluate_observation(&self_model, &s15.test).unwrap();
    assert_eq!(matrix.reports[0][0], self_rep);
    let csv = matrix.to_csv(true);
    assert!(csv.starts_with("train\\eval,circ15,circ10"));
}

#[test]
fn sweep_prefixes_are_nested_and_full_fraction_matches() {
    let ds = collect(
        &HandConfig::default(),
        &ObjectSpec::disk15(),
        &NoiseModel::default(),
        5,
        60,
        21,
    )
    .unwrap();
    let splits =
        split(&ds, &SplitPolicy { test: TestSize::Episodes(1), critic_holdout_fraction: 0.0 })
            .unwrap();
    let mut spec = RegressorSpec::gp();
    spec.gp.k_nn = 20;
    let curve =
        datasize_sweep(&splits.train, &splits.test, &[0.2, 1.0], comb(7), &spec).unwrap();
    assert_eq!(curve.len(), 2);
    // Fraction 1.0 equals a full-data train+evaluate.
    let full = train_observation(&splits.train, comb(7), &spec).unwrap();
    let full_rep = evaluate_observation(&full, &splits.test).unwrap();
    assert_eq!(curve[1].1, full_rep);
    // Prefix nesting is structural: 20% of records is a prefix of 100%.
    assert!(curve[0].1.n == splits.test.len());
}

#[test]
fn lstm_window_shape_matches_spec() {
    let ds = collect(
        &HandConfig::default(),
        &ObjectSpec::disk15(),
        &NoiseModel::default(),
        2,
        30,
        7,
    )
    .unwrap();
    let mut spec = RegressorSpec::lstm();
    spec.lstm.layers = 1;
    spec.lstm.hidden = 8;
    spec.lstm.head_width = 8;
    spec.lstm.window = 5;
    spec.train.max_epochs = 1;
    let model = train_observation(&ds.records, comb(7), &spec).unwrap();
    assert_eq!(model.window, 5);
    assert_eq!(model.regressor.in_dim(), 6);
    assert_eq!(model.regressor.out_dim(), 4);
    // Windowed estimation accepts exactly `window` states.
    let feats: Vec<Vec<f64>> =
        (0..5).map(|_| extract_features(&ds.records[0], comb(7))).collect();
    assert!(model.estimate_pose(&feats).is_ok());
    assert!(model.estimate_pose(&feats[..4]).is_err());
}
