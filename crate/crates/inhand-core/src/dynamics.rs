//! Learned forward dynamics in feature space: a regressor predicts the
//! normalized per-step feature change, and the next state is the additive
//! update `x~_{t+1} = x_t + df(history, a_t)`. Training pairs never cross an
//! episode boundary; the initial-pose feature block (constant within an
//! episode) is carried through propagation unchanged.

use crate::data::{
    episode_spans, extract_features, window_indices, FeatureCombination, Normalizer, Record,
};
use crate::percept::{ObservationModel, PerceptError};
use crate::regress::{fit, RegressError, RegressorKind, RegressorSpec, TrainData, TrainedRegressor};
use crate::sim::{wrap_angle, Action};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynError {
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error("not enough consecutive pairs in the dataset")]
    EmptyData,
    #[error("history length {got} does not match the model window {expected}")]
    HistoryLength { expected: usize, got: usize },
}

/// One past step fed to the transition model: the feature state and the
/// action that was taken at it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub features: Vec<f64>,
    pub action: Action,
}

/// Delta-form transition model over a feature combination. Single-state for
/// GP/FC-NN; the LSTM variant consumes `past_states + 1` states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionModel {
    pub regressor: TrainedRegressor,
    pub combination: FeatureCombination,
    /// Number of past states k in addition to the current one.
    pub past_states: usize,
    /// Normalizer defining the feature space the deltas live in.
    pub feature_norm: Normalizer,
}

/// Default transition spec: feature combination 7 semantics, LSTM window of
/// k=2 past states.
pub fn transition_default_spec(kind: RegressorKind) -> RegressorSpec {
    let mut spec = match kind {
        RegressorKind::LocalGp => RegressorSpec::gp(),
        RegressorKind::FcNn => RegressorSpec::fc(),
        RegressorKind::Lstm => RegressorSpec::lstm(),
    };
    spec.lstm.window = 3;
    spec
}

impl TransitionModel {
    /// States consumed per prediction (k + 1, or 1 for single-state kinds).
    pub fn window(&self) -> usize {
        self.past_states + 1
    }

    fn feature_dim(&self) -> usize {
        self.combination.dim()
    }

    /// Pads a short history to the model window by repeating the oldest
    /// entry, mirroring the window padding used at episode starts.
    pub fn pad_history(&self, entries: &[HistoryEntry]) -> Vec<HistoryEntry> {
        assert!(!entries.is_empty(), "history needs at least the current state");
        let w = self.window();
        let mut out = Vec::with_capacity(w);
        for k in 0..w {
            let idx = (entries.len() as i64 - 1 - (w - 1 - k) as i64).max(0) as usize;
            out.push(entries[idx].clone());
        }
        out
    }

    fn input_row(&self, z: &[f64], action: Action) -> Vec<f64> {
        let mut row = Vec::with_capacity(z.len() + 2);
        row.extend_from_slice(z);
        row.extend_from_slice(&action.0);
        row
    }

    /// Predicted normalized delta for a z-space history whose last entry
    /// carries the applied action.
    fn predict_delta_z(&self, zhist: &[(Vec<f64>, Action)]) -> Result<Vec<f64>, DynError> {
        let rows: Vec<Vec<f64>> =
            zhist.iter().map(|(z, a)| self.input_row(z, *a)).collect();
        let mut delta = self.regressor.predict_window(&rows)?;
        if self.combination.has_initial_pose() {
            let d = self.feature_dim();
            for v in &mut delta[d - 3..] {
                *v = 0.0;
            }
        }
        Ok(delta)
    }

    /// One-step prediction `x~_{t+1} = x_t + df(...)`, raw feature units.
    /// `history` is oldest-first with length equal to the model window; the
    /// last entry is the current state and `action` is applied at it.
    pub fn predict_next(
        &self,
        history: &[HistoryEntry],
        action: Action,
    ) -> Result<Vec<f64>, DynError> {
        let w = self.window();
        if history.len() != w {
            return Err(DynError::HistoryLength { expected: w, got: history.len() });
        }
        let mut zhist: Vec<(Vec<f64>, Action)> = history
            .iter()
            .map(|h| (self.feature_norm.apply(&h.features), h.action))
            .collect();
        zhist[w - 1].1 = action;
        let delta = self.predict_delta_z(&zhist)?;
        let z_next: Vec<f64> =
            zhist[w - 1].0.iter().zip(&delta).map(|(z, d)| z + d).collect();
        Ok(self.feature_norm.invert(&z_next))
    }

    /// Open-loop propagation: predictions feed back as history. Returns the
    /// path {x_t, x~_{t+1}, ..., x~_{t+H}} in raw feature units (length
    /// `actions.len() + 1`).
    pub fn propagate(
        &self,
        history: &[HistoryEntry],
        actions: &[Action],
    ) -> Result<Vec<Vec<f64>>, DynError> {
        let w = self.window();
        if history.len() != w {
            return Err(DynError::HistoryLength { expected: w, got: history.len() });
        }
        let mut zhist: Vec<(Vec<f64>, Action)> = history
            .iter()
            .map(|h| (self.feature_norm.apply(&h.features), h.action))
            .collect();
        let mut path = Vec::with_capacity(actions.len() + 1);
        path.push(history[w - 1].features.clone());
        for &a in actions {
            zhist[w - 1].1 = a;
            let delta = self.predict_delta_z(&zhist)?;
            let z_next: Vec<f64> =
                zhist[w - 1].0.iter().zip(&delta).map(|(z, d)| z + d).collect();
            path.push(self.feature_norm.invert(&z_next));
            zhist.remove(0);
            zhist.push((z_next, Action::NEUTRAL));
        }
        Ok(path)
    }
}

/// Trains the transition model from an ordered record slice. Pairs are
/// consecutive records within one episode; targets are the normalized
/// feature-space deltas.
pub fn train_transition(
    records: &[Record],
    comb: FeatureCombination,
    spec: &RegressorSpec,
) -> Result<TransitionModel, DynError> {
    let d = comb.dim();
    let feats: Vec<Vec<f64>> = records.iter().map(|r| extract_features(r, comb)).collect();
    let feature_norm = Normalizer::fit(feats.iter().map(|f| f.as_slice()));
    let z: Vec<Vec<f64>> = feats.iter().map(|f| feature_norm.apply(f)).collect();

    let window = spec.window();
    let mut pair_starts = Vec::new();
    let mut span_start = Vec::new();
    for (_, span) in episode_spans(records) {
        for i in span.start..span.end.saturating_sub(1) {
            pair_starts.push(i);
            span_start.push(span.start);
        }
    }
    if pair_starts.is_empty() {
        return Err(DynError::EmptyData);
    }

    let n = pair_starts.len();
    let mut targets = Array2::zeros((n, d));
    for (row, &i) in pair_starts.iter().enumerate() {
        for j in 0..d {
            targets[[row, j]] = z[i + 1][j] - z[i][j];
        }
    }
    let inputs = if window == 1 {
        let mut x = Array2::zeros((n, d + 2));
        for (row, &i) in pair_starts.iter().enumerate() {
            for j in 0..d {
                x[[row, j]] = z[i][j];
            }
            x[[row, d]] = records[i].action.0[0];
            x[[row, d + 1]] = records[i].action.0[1];
        }
        TrainData::Flat(x)
    } else {
        let mut x = Array3::zeros((n, window, d + 2));
        for (row, &i) in pair_starts.iter().enumerate() {
            for (t, src) in window_indices(span_start[row], i, window).into_iter().enumerate() {
                for j in 0..d {
                    x[[row, t, j]] = z[src][j];
                }
                x[[row, t, d]] = records[src].action.0[0];
                x[[row, t, d + 1]] = records[src].action.0[1];
            }
        }
        TrainData::Seq(x)
    };
    let regressor = fit(spec, &inputs, &targets)?;
    Ok(TransitionModel {
        regressor,
        combination: comb,
        past_states: window - 1,
        feature_norm,
    })
}

/// One-step feature-space RMSE (normalized units) of the model and of the
/// zero-delta persistence baseline, over consecutive test pairs.
pub fn one_step_rmse(
    model: &TransitionModel,
    test: &[Record],
) -> Result<(f64, f64), DynError> {
    let comb = model.combination;
    let mut sq_model = 0.0;
    let mut sq_persist = 0.0;
    let mut count = 0usize;
    for (_, span) in episode_spans(test) {
        for i in span.start..span.end - 1 {
            let history: Vec<HistoryEntry> = window_indices(span.start, i, model.window())
                .into_iter()
                .map(|j| HistoryEntry {
                    features: extract_features(&test[j], comb),
                    action: test[j].action,
                })
                .collect();
            let pred = model.predict_next(&history, test[i].action)?;
            let z_pred = model.feature_norm.apply(&pred);
            let z_true = model.feature_norm.apply(&extract_features(&test[i + 1], comb));
            let z_cur = model.feature_norm.apply(&extract_features(&test[i], comb));
            for j in 0..comb.dim() {
                sq_model += (z_pred[j] - z_true[j]).powi(2);
                sq_persist += (z_cur[j] - z_true[j]).powi(2);
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(DynError::EmptyData);
    }
    let denom = (count * comb.dim()) as f64;
    Ok(((sq_model / denom).sqrt(), (sq_persist / denom).sqrt()))
}

/// Mean pose error per open-loop step, decoded through the observation
/// model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub step: usize,
    pub pos_err_mm: f64,
    pub ori_err_deg: f64,
}

pub const CURVE_CSV_HEADER: &str = "step,pos_err_mm,ori_err_deg";

pub fn curve_csv(curve: &[StepError]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for e in curve {
        out.push_str(&format!("{},{:.4},{:.4}\n", e.step, e.pos_err_mm, e.ori_err_deg));
    }
    out
}

/// Open-loop roll-out error versus ground truth: from every admissible test
/// window, propagate with the logged actions (never re-anchoring on ground
/// truth), decode each predicted feature state through the observation
/// model, and average per step.
pub fn eval_open_loop(
    model: &TransitionModel,
    obs: &ObservationModel,
    test: &[Record],
    horizon: usize,
) -> Result<Vec<StepError>, DynError> {
    assert!(horizon >= 1);
    let comb = model.combination;
    let w_obs = obs.window;
    let mut sum_pos = vec![0.0; horizon];
    let mut sum_ori = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for (_, span) in episode_spans(test) {
        if span.len() < horizon + 1 {
            continue;
        }
        for i0 in span.start..span.end - horizon {
            let history: Vec<HistoryEntry> = window_indices(span.start, i0, model.window())
                .into_iter()
                .map(|j| HistoryEntry {
                    features: extract_features(&test[j], comb),
                    action: test[j].action,
                })
                .collect();
            let actions: Vec<Action> =
                (i0..i0 + horizon).map(|j| test[j].action).collect();
            let path = model.propagate(&history, &actions)?;
            // Feature sequence for obs windows: measured prefix, then the
            // predicted path.
            let mut seq: Vec<Vec<f64>> = window_indices(span.start, i0, w_obs)
                .into_iter()
                .map(|j| extract_features(&test[j], comb))
                .collect();
            for (s, state) in path.iter().enumerate().skip(1) {
                seq.push(state.clone());
                let window: Vec<Vec<f64>> = seq[seq.len() - w_obs..].to_vec();
                let est = obs.estimate_pose(&window)?;
                let truth = test[i0 + s].sensor.truth_pose;
                sum_pos[s - 1] += est.position_distance(&truth);
                sum_ori[s - 1] += wrap_angle(est.yaw - truth.yaw).to_degrees().abs();
                counts[s - 1] += 1;
            }
        }
    }
    if counts[0] == 0 {
        return Err(DynError::EmptyData);
    }
    Ok((0..horizon)
        .map(|s| StepError {
            step: s + 1,
            pos_err_mm: sum_pos[s] / counts[s] as f64,
            ori_err_deg: sum_ori[s] / counts[s] as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect, split, SplitPolicy, TestSize};
    use crate::sim::{HandConfig, NoiseModel, ObjectSpec};
    use ndarray::{Array1, Array2};

    fn comb7() -> FeatureCombination {
        FeatureCombination::new(7).unwrap()
    }

    fn rigged_model(comb: FeatureCombination, delta: Vec<f64>) -> TransitionModel {
        let d = comb.dim();
        TransitionModel {
            regressor: TrainedRegressor::constant(d + 2, delta),
            combination: comb,
            past_states: 0,
            feature_norm: Normalizer::identity(d),
        }
    }

    fn entry(features: Vec<f64>) -> HistoryEntry {
        HistoryEntry { features, action: Action::NEUTRAL }
    }

    #[test]
    fn zero_delta_is_identity() {
        let model = rigged_model(comb7(), vec![0.0; 6]);
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let next = model.predict_next(&[entry(x.clone())], Action::NEUTRAL).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn constant_delta_adds() {
        let delta = vec![0.5, -1.0, 0.0, 0.0, 2.0, 0.25];
        let model = rigged_model(comb7(), delta.clone());
        let x = vec![1.0; 6];
        let next = model.predict_next(&[entry(x.clone())], Action([0.2, 0.9])).unwrap();
        for j in 0..6 {
            assert!((next[j] - (x[j] + delta[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_pose_block_is_frozen() {
        let comb9 = FeatureCombination::new(9).unwrap();
        let model = rigged_model(comb9, vec![1.0; 9]);
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let next = model.predict_next(&[entry(x.clone())], Action::NEUTRAL).unwrap();
        for j in 0..6 {
            assert_eq!(next[j], x[j] + 1.0);
        }
        for j in 6..9 {
            assert_eq!(next[j], x[j], "initial-pose block must not drift");
        }
    }

    #[test]
    fn propagation_length_and_composition() {
        let delta = vec![0.1; 6];
        let model = rigged_model(comb7(), delta);
        let x = vec![0.0; 6];
        let h = [entry(x.clone())];
        assert_eq!(model.propagate(&h, &[]).unwrap().len(), 1);
        let actions = [Action::NEUTRAL, Action([1.0, 0.0])];
        let path = model.propagate(&h, &actions).unwrap();
        assert_eq!(path.len(), 3);
        // Two manual predict_next compositions give the same terminal state.
        let one = model.predict_next(&h, actions[0]).unwrap();
        let two = model
            .predict_next(&[entry(one.clone())], actions[1])
            .unwrap();
        for j in 0..6 {
            assert!((path[2][j] - two[j]).abs() < 1e-12);
        }
        assert_eq!(path[1], one);
    }

    #[test]
    fn history_length_is_enforced() {
        let model = rigged_model(comb7(), vec![0.0; 6]);
        let err = model.predict_next(&[], Action::NEUTRAL);
        assert!(matches!(err, Err(DynError::HistoryLength { .. })));
        let padded = model.pad_history(&[entry(vec![0.0; 6])]);
        assert_eq!(padded.len(), 1);
    }

    #[test]
    fn pair_extraction_respects_episode_boundaries() {
        // Two 10-step episodes yield 18 single-state pairs.
        let hand = HandConfig::default();
        let ds = collect(&hand, &ObjectSpec::disk15(), &NoiseModel::default(), 2, 10, 5).unwrap();
        assert_eq!(ds.records.len(), 20, "episodes should reach the cap");
        let mut spec = RegressorSpec::fc();
        spec.fc.hidden_layers = 1;
        spec.fc.width = 4;
        spec.train.max_epochs = 0;
        let model = train_transition(&ds.records, comb7(), &spec).unwrap();
        // input dim d+2 = 8, output d = 6.
        assert_eq!(model.regressor.in_dim(), 8);
        assert_eq!(model.regressor.out_dim(), 6);
        // Count pairs through the one-step evaluator (it walks the same way).
        let mut pairs = 0;
        for (_, span) in episode_spans(&ds.records) {
            pairs += span.len() - 1;
        }
        assert_eq!(pairs, 18);
    }

    #[test]
    fn lstm_transition_uses_k_plus_one_states() {
        let hand = HandConfig::default();
        let ds = collect(&hand, &ObjectSpec::disk15(), &NoiseModel::default(), 2, 20, 6).unwrap();
        let mut spec = transition_default_spec(RegressorKind::Lstm);
        spec.lstm.layers = 1;
        spec.lstm.hidden = 6;
        spec.lstm.head_width = 6;
        spec.train.max_epochs = 0;
        let model = train_transition(&ds.records, comb7(), &spec).unwrap();
        assert_eq!(model.past_states, 2);
        assert_eq!(model.window(), 3);
        assert_eq!(model.regressor.in_dim(), 8);
    }

    #[test]
    fn learned_transition_beats_persistence() {
        let hand = HandConfig::default();
        let ds =
            collect(&hand, &ObjectSpec::disk15(), &NoiseModel::default(), 12, 120, 9).unwrap();
        let splits = split(
            &ds,
            &SplitPolicy { test: TestSize::Fraction(0.25), critic_holdout_fraction: 0.0 },
        )
        .unwrap();
        let mut spec = RegressorSpec::fc();
        spec.fc.hidden_layers = 2;
        spec.fc.width = 32;
        spec.fc.dropout = 0.0;
        spec.train.max_epochs = 60;
        spec.train.patience = 15;
        let model = train_transition(&splits.train, comb7(), &spec).unwrap();
        let (m, p) = one_step_rmse(&model, &splits.test).unwrap();
        assert!(m < p, "model RMSE {m} not below persistence {p}");
    }

    #[test]
    fn open_loop_curve_has_horizon_entries_and_grows() {
        let model = rigged_model(comb7(), vec![0.02; 6]);
        let rig_obs = TrainedRegressor::linear_map(
            {
                // Decode the first two features as position, fixed yaw.
                let mut w = Array2::zeros((6, 4));
                w[[0, 0]] = 1.0;
                w[[1, 1]] = 1.0;
                w
            },
            Array1::from_vec(vec![0.0, 0.0, 0.0, 1.0]),
        );
        let obs = ObservationModel {
            regressor: rig_obs,
            combination: comb7(),
            window: 1,
        };
        let hand = HandConfig::default();
        let ds = collect(&hand, &ObjectSpec::disk15(), &NoiseModel::default(), 2, 30, 3).unwrap();
        let curve = eval_open_loop(&model, &obs, &ds.records, 5).unwrap();
        assert_eq!(curve.len(), 5);
        for e in &curve {
            assert!(e.pos_err_mm.is_finite() && e.ori_err_deg.is_finite());
        }
    }
}
