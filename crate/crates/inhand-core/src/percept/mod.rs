//! Observation model (haptic features -> object pose), its error critic, and
//! the evaluation protocols: per-combination accuracy reports, the data-size
//! sweep and the cross-object transfer matrix.
//!
//! Pose targets are encoded as (x, y, sin yaw, cos yaw) to avoid wrap
//! discontinuities; orientation errors are wrapped to (-180, 180] degrees
//! before squaring.

use crate::data::{
    episode_spans, extract_features, window_indices, FeatureCombination, Record,
};
use crate::regress::{
    fit, RegressError, RegressorKind, RegressorSpec, TrainData, TrainedRegressor,
};
use crate::sim::{wrap_angle, Pose};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerceptError {
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("missing dataset for object {0:?}")]
    MissingDataset(String),
}

/// Pose target encoding used by every observation model.
pub fn encode_pose(p: &Pose) -> [f64; 4] {
    [p.x, p.y, p.yaw.sin(), p.yaw.cos()]
}

/// Inverse of [`encode_pose`]; yaw from atan2, no unit-norm requirement.
pub fn decode_pose(v: &[f64]) -> Pose {
    Pose::new(v[0], v[1], v[2].atan2(v[3]))
}

/// Builds windowed feature inputs for every record, padding at episode
/// starts by repeating the first state. Returns flat inputs when `window`
/// is 1, sequences otherwise.
pub fn build_feature_inputs(
    records: &[Record],
    comb: FeatureCombination,
    window: usize,
) -> TrainData {
    let dim = comb.dim();
    let n = records.len();
    if window == 1 {
        let mut x = Array2::zeros((n, dim));
        for (i, r) in records.iter().enumerate() {
            for (j, v) in extract_features(r, comb).into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        TrainData::Flat(x)
    } else {
        let mut x = Array3::zeros((n, window, dim));
        for (_, span) in episode_spans(records) {
            for i in span.clone() {
                for (t, src) in window_indices(span.start, i, window).into_iter().enumerate() {
                    for (j, v) in extract_features(&records[src], comb).into_iter().enumerate()
                    {
                        x[[i, t, j]] = v;
                    }
                }
            }
        }
        TrainData::Seq(x)
    }
}

fn pose_targets(records: &[Record]) -> Array2<f64> {
    let mut y = Array2::zeros((records.len(), 4));
    for (i, r) in records.iter().enumerate() {
        for (j, v) in encode_pose(&r.sensor.truth_pose).into_iter().enumerate() {
            y[[i, j]] = v;
        }
    }
    y
}

/// Learned map from a window of haptic feature states to the object pose.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationModel {
    pub regressor: TrainedRegressor,
    pub combination: FeatureCombination,
    pub window: usize,
}

impl ObservationModel {
    /// Pose estimate from a window of raw feature vectors (oldest first);
    /// length must equal `self.window`.
    pub fn estimate_pose(&self, window: &[Vec<f64>]) -> Result<Pose, PerceptError> {
        let out = self.regressor.predict_window(window)?;
        Ok(decode_pose(&out))
    }

    /// Position part of the estimate, the servo/MPC feedback quantity.
    pub fn estimate_position(&self, window: &[Vec<f64>]) -> Result<[f64; 2], PerceptError> {
        let p = self.estimate_pose(window)?;
        Ok([p.x, p.y])
    }

    /// Batch pose estimates for an ordered record slice.
    pub fn estimate_records(&self, records: &[Record]) -> Result<Vec<Pose>, PerceptError> {
        let inputs = build_feature_inputs(records, self.combination, self.window);
        let out = self.regressor.predict_batch(&inputs)?;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| decode_pose(r.to_slice().expect("contiguous")))
            .collect())
    }
}

/// Trains the observation model on a training split.
pub fn train_observation(
    train: &[Record],
    comb: FeatureCombination,
    spec: &RegressorSpec,
) -> Result<ObservationModel, PerceptError> {
    if train.is_empty() {
        return Err(PerceptError::EmptySplit("train"));
    }
    let window = spec.window();
    let inputs = build_feature_inputs(train, comb, window);
    let targets = pose_targets(train);
    let regressor = fit(spec, &inputs, &targets)?;
    Ok(ObservationModel { regressor, combination: comb, window })
}

/// Per-episode accuracy line inside an [`RmseReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRmse {
    pub episode_id: u64,
    pub position_rmse: f64,
    pub orientation_rmse_deg: f64,
    pub n: usize,
}

/// Pose estimation accuracy: RMSE over all samples plus a per-episode
/// breakdown; the quoted spreads are standard deviations over per-episode
/// RMSEs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub position_rmse: f64,
    pub position_std: f64,
    pub orientation_rmse_deg: f64,
    pub orientation_std_deg: f64,
    pub per_episode: Vec<EpisodeRmse>,
    pub n: usize,
}

pub const REPORT_CSV_HEADER: &str = "comb,regressor,pos_rmse_mm,pos_std,ori_rmse_deg,ori_std,n";

impl RmseReport {
    /// One Table-shaped CSV line.
    pub fn csv_row(&self, comb: FeatureCombination, kind: RegressorKind) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{}",
            comb.id(),
            kind,
            self.position_rmse,
            self.position_std,
            self.orientation_rmse_deg,
            self.orientation_std_deg,
            self.n
        )
    }
}

fn wrapped_deg_error(pred_yaw: f64, true_yaw: f64) -> f64 {
    wrap_angle(pred_yaw - true_yaw).to_degrees()
}

/// Evaluates the model on a test split: position RMSE over Euclidean errors,
/// orientation RMSE over wrapped angular differences.
pub fn evaluate_observation(
    model: &ObservationModel,
    test: &[Record],
) -> Result<RmseReport, PerceptError> {
    if test.is_empty() {
        return Err(PerceptError::EmptySplit("test"));
    }
    let poses = model.estimate_records(test)?;
    let mut per_episode = Vec::new();
    let mut sq_pos_total = 0.0;
    let mut sq_ori_total = 0.0;
    for (episode_id, span) in episode_spans(test) {
        let mut sq_pos = 0.0;
        let mut sq_ori = 0.0;
        for i in span.clone() {
            let truth = test[i].sensor.truth_pose;
            let err_pos = poses[i].position_distance(&truth);
            let err_ori = wrapped_deg_error(poses[i].yaw, truth.yaw);
            sq_pos += err_pos * err_pos;
            sq_ori += err_ori * err_ori;
        }
        let n = span.len();
        sq_pos_total += sq_pos;
        sq_ori_total += sq_ori;
        per_episode.push(EpisodeRmse {
            episode_id,
            position_rmse: (sq_pos / n as f64).sqrt(),
            orientation_rmse_deg: (sq_ori / n as f64).sqrt(),
            n,
        });
    }
    let n = test.len();
    let std = |vals: Vec<f64>| -> f64 {
        if vals.len() < 2 {
            return 0.0;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt()
    };
    Ok(RmseReport {
        position_rmse: (sq_pos_total / n as f64).sqrt(),
        position_std: std(per_episode.iter().map(|e| e.position_rmse).collect()),
        orientation_rmse_deg: (sq_ori_total / n as f64).sqrt(),
        orientation_std_deg: std(per_episode.iter().map(|e| e.orientation_rmse_deg).collect()),
        per_episode,
        n,
    })
}

/// Learned estimate of the observation model's own position error (mm).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticModel {
    pub regressor: TrainedRegressor,
    pub combination: FeatureCombination,
}

impl CriticModel {
    /// Non-negative error estimate for one feature state.
    pub fn critic_error(&self, features: &[f64]) -> Result<f64, PerceptError> {
        let out = self.regressor.predict_window(&[features.to_vec()])?;
        Ok(out[0].max(0.0))
    }
}

/// Default critic architecture: FC 2x128 ReLU with a softplus output.
pub fn critic_default_spec() -> RegressorSpec {
    let mut spec = RegressorSpec::fc();
    spec.fc.hidden_layers = 2;
    spec.fc.width = 128;
    spec.fc.dropout = 0.0;
    spec.fc.output = crate::regress::OutputActivation::Softplus;
    spec
}

/// Trains the critic on a holdout split that is episode-disjoint from the
/// observation model's training data. Labels are the observation model's
/// Euclidean position errors in mm.
pub fn train_critic(
    obs: &ObservationModel,
    holdout: &[Record],
    spec: &RegressorSpec,
) -> Result<CriticModel, PerceptError> {
    if holdout.is_empty() {
        return Err(PerceptError::EmptySplit("critic holdout"));
    }
    let poses = obs.estimate_records(holdout)?;
    let mut labels = Array2::zeros((holdout.len(), 1));
    for (i, (pose, record)) in poses.iter().zip(holdout).enumerate() {
        labels[[i, 0]] = pose.position_distance(&record.sensor.truth_pose);
    }
    let inputs = build_feature_inputs(holdout, obs.combination, 1);
    let regressor = fit(spec, &inputs, &labels)?;
    Ok(CriticModel { regressor, combination: obs.combination })
}

/// Cross-object transfer study: entry (i, j) evaluates the model trained on
/// object i against object j's test split.
pub struct TransferMatrix {
    pub labels: Vec<String>,
    pub reports: Vec<Vec<RmseReport>>,
}

impl TransferMatrix {
    /// CSV with object labels on both axes; `position` selects which metric.
    pub fn to_csv(&self, position: bool) -> String {
        let mut out = String::from("train\\eval");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, row) in self.reports.iter().enumerate() {
            out.push_str(&self.labels[i]);
            for rep in row {
                let v = if position { rep.position_rmse } else { rep.orientation_rmse_deg };
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-object train/test splits keyed by object label.
pub struct ObjectSplits<'a> {
    pub label: String,
    pub train: &'a [Record],
    pub test: &'a [Record],
}

pub fn cross_transfer(
    objects: &[ObjectSplits<'_>],
    comb: FeatureCombination,
    spec: &RegressorSpec,
) -> Result<TransferMatrix, PerceptError> {
    if objects.is_empty() {
        return Err(PerceptError::EmptySplit("objects"));
    }
    let mut models = Vec::new();
    for obj in objects {
        if obj.train.is_empty() {
            return Err(PerceptError::MissingDataset(obj.label.clone()));
        }
        models.push(train_observation(obj.train, comb, spec)?);
    }
    let mut reports = Vec::new();
    for model in &models {
        let mut row = Vec::new();
        for obj in objects {
            if obj.test.is_empty() {
                return Err(PerceptError::MissingDataset(obj.label.clone()));
            }
            row.push(evaluate_observation(model, obj.test)?);
        }
        reports.push(row);
    }
    Ok(TransferMatrix { labels: objects.iter().map(|o| o.label.clone()).collect(), reports })
}

/// Accuracy versus training-data size: sequential prefixes of the training
/// records (no shuffling), fixed test split.
pub fn datasize_sweep(
    train: &[Record],
    test: &[Record],
    fractions: &[f64],
    comb: FeatureCombination,
    spec: &RegressorSpec,
) -> Result<Vec<(f64, RmseReport)>, PerceptError> {
    let mut curve = Vec::new();
    for &f in fractions {
        assert!(f > 0.0 && f <= 1.0, "fractions must lie in (0, 1]");
        let k = ((f * train.len() as f64).ceil() as usize).clamp(1, train.len());
        let model = train_observation(&train[..k], comb, spec)?;
        curve.push((f, evaluate_observation(&model, test)?));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests;
