//! Controller suite: haptic/visual servoing, random-shooting MPC with a
//! critic-weighted cost, open-loop planning and closed-loop roll-outs
//! against the simulator.

mod bench;

pub use bench::{benchmark, workspace_hull, BenchmarkRow, BenchmarkTable, BENCH_CSV_HEADER};

use crate::data::{extract_features, FeatureCombination, Record};
use crate::dynamics::{DynError, HistoryEntry, TransitionModel};
use crate::percept::{CriticModel, ObservationModel, PerceptError};
use crate::seeding::derive_seed;
use crate::sim::{
    grasp_reset, read_sensors, step, Action, HandConfig, NoiseModel, ObjectSpec, Pose, SimError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dyn(#[from] DynError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error("policy requires a {0} model")]
    MissingModel(&'static str),
}

/// Shooting-MPC parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcParams {
    /// Prediction horizon H; sequences have H+1 actions.
    pub horizon: usize,
    /// Number of sampled sequences per control tick.
    pub samples: usize,
    /// Goal-distance weight in the path cost.
    pub w1: f64,
    /// Critic weight in the path cost.
    pub w2: f64,
    /// Arrival tolerance epsilon (mm).
    pub goal_tolerance: f64,
    /// Step cap per roll-out.
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for MpcParams {
    fn default() -> Self {
        MpcParams {
            horizon: 10,
            samples: 100,
            w1: 0.8,
            w2: 0.2,
            goal_tolerance: 4.0,
            max_steps: 1000,
            seed: 0,
        }
    }
}

/// Draws candidate action sequences for the shooting optimizer.
pub trait ActionSampler {
    /// `m` sequences of `len` actions each. Exhaustive samplers may ignore
    /// `m` and return every sequence of their grid.
    fn sample_sequences(&mut self, m: usize, len: usize) -> Vec<Vec<Action>>;
}

/// Uniform i.i.d. actions, the default sampler.
pub struct UniformSampler {
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(seed: u64) -> Self {
        UniformSampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl ActionSampler for UniformSampler {
    fn sample_sequences(&mut self, m: usize, len: usize) -> Vec<Vec<Action>> {
        (0..m)
            .map(|_| {
                (0..len)
                    .map(|_| {
                        Action([self.rng.gen_range(0.0..=1.0), self.rng.gen_range(0.0..=1.0)])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Correlated exploration: each sampled action is held for a random number
/// of steps within the sequence, mirroring the data-collection policy.
pub struct HoldSampler {
    rng: ChaCha8Rng,
    pub min_hold: usize,
    pub max_hold: usize,
}

impl HoldSampler {
    pub fn new(seed: u64) -> Self {
        HoldSampler { rng: ChaCha8Rng::seed_from_u64(seed), min_hold: 3, max_hold: 8 }
    }
}

impl ActionSampler for HoldSampler {
    fn sample_sequences(&mut self, m: usize, len: usize) -> Vec<Vec<Action>> {
        (0..m)
            .map(|_| {
                let mut seq = Vec::with_capacity(len);
                let mut hold = 0usize;
                let mut action = Action::NEUTRAL;
                for _ in 0..len {
                    if hold == 0 {
                        action = Action([
                            self.rng.gen_range(0.0..=1.0),
                            self.rng.gen_range(0.0..=1.0),
                        ]);
                        hold = self.rng.gen_range(self.min_hold..=self.max_hold);
                    }
                    hold -= 1;
                    seq.push(action);
                }
                seq
            })
            .collect()
    }
}

/// Exhaustive enumeration over a per-axis level grid; the brute-force
/// reference sampler for equivalence tests.
pub struct GridSampler {
    pub levels: Vec<f64>,
}

impl GridSampler {
    pub fn three_level() -> Self {
        GridSampler { levels: vec![0.0, 0.5, 1.0] }
    }
}

impl ActionSampler for GridSampler {
    fn sample_sequences(&mut self, _m: usize, len: usize) -> Vec<Vec<Action>> {
        let actions: Vec<Action> = self
            .levels
            .iter()
            .flat_map(|&a| self.levels.iter().map(move |&b| Action([a, b])))
            .collect();
        let mut seqs: Vec<Vec<Action>> = vec![Vec::new()];
        for _ in 0..len {
            let mut next = Vec::with_capacity(seqs.len() * actions.len());
            for s in &seqs {
                for &a in &actions {
                    let mut s2 = s.clone();
                    s2.push(a);
                    next.push(s2);
                }
            }
            seqs = next;
        }
        seqs
    }
}

/// Where predicted feature states get their position estimate from: the
/// learned observation model, or direct state dimensions (vision-state MPC
/// whose features carry the pose explicitly).
pub enum PositionReadout<'a> {
    Learned(&'a ObservationModel),
    StateDims(usize, usize),
}

impl PositionReadout<'_> {
    /// Positions for every state of a path. Learned readouts consume windows
    /// built from the path itself, padded at the start by repeating its
    /// first state.
    fn path_positions(&self, path: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, ControlError> {
        match self {
            PositionReadout::StateDims(ix, iy) => {
                Ok(path.iter().map(|x| [x[*ix], x[*iy]]).collect())
            }
            PositionReadout::Learned(obs) => {
                let w = obs.window;
                let mut out = Vec::with_capacity(path.len());
                for i in 0..path.len() {
                    let window: Vec<Vec<f64>> = (0..w)
                        .map(|k| {
                            let j = (i as i64 - (w - 1 - k) as i64).max(0) as usize;
                            path[j].clone()
                        })
                        .collect();
                    out.push(obs.estimate_position(&window)?);
                }
                Ok(out)
            }
        }
    }
}

/// Path cost: summed squared goal distance plus critic error over every
/// state of the predicted path (mixed units by construction).
pub fn path_cost(
    path: &[Vec<f64>],
    readout: &PositionReadout<'_>,
    critic: Option<&CriticModel>,
    goal: [f64; 2],
    w1: f64,
    w2: f64,
) -> Result<f64, ControlError> {
    assert!(!path.is_empty(), "path cost needs at least one state");
    let positions = readout.path_positions(path)?;
    let mut cost = 0.0;
    for (x, p) in path.iter().zip(&positions) {
        let d2 = (p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2);
        cost += w1 * d2;
        if w2 != 0.0 {
            let c = critic.ok_or(ControlError::MissingModel("critic"))?;
            cost += w2 * c.critic_error(x)?;
        }
    }
    Ok(cost)
}

/// Costs of every candidate and the chosen index, for shooting-optimality
/// assertions.
#[derive(Clone, Debug)]
pub struct MpcDiagnostics {
    pub costs: Vec<f64>,
    pub chosen: usize,
}

/// One shooting-MPC tick: sample `m` sequences, propagate each through the
/// transition model from the measured history, score with [`path_cost`] and
/// return the first action of the cheapest sequence (ties to the lowest
/// index).
pub fn mpc_step(
    trans: &TransitionModel,
    readout: &PositionReadout<'_>,
    critic: Option<&CriticModel>,
    history: &[HistoryEntry],
    goal: [f64; 2],
    params: &MpcParams,
    sampler: &mut dyn ActionSampler,
) -> Result<(Action, MpcDiagnostics), ControlError> {
    let sequences = sampler.sample_sequences(params.samples, params.horizon + 1);
    assert!(!sequences.is_empty());
    // Candidate propagations are independent; evaluate in parallel and
    // aggregate in index order so results stay deterministic.
    use rayon::prelude::*;
    let costs: Vec<f64> = sequences
        .par_iter()
        .map(|seq| -> Result<f64, ControlError> {
            let path = trans.propagate(history, seq)?;
            path_cost(&path, readout, critic, goal, params.w1, params.w2)
        })
        .collect::<Result<_, _>>()?;
    let chosen = costs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.total_cmp(b).then(i.cmp(j)))
        .map(|(i, _)| i)
        .expect("non-empty candidate set");
    Ok((sequences[chosen][0], MpcDiagnostics { costs, chosen }))
}

/// Proportional servo mapping desired object velocity to actuator commands:
/// raw command `u = [vx/Kx + vy/Ky, -vx/Kx + vy/Ky]`, shifted into the
/// normalized action space around the neutral 0.5 and clamped.
pub fn servo_action(position: [f64; 2], goal: [f64; 2], kx: f64, ky: f64) -> Action {
    let v = [goal[0] - position[0], goal[1] - position[1]];
    let u = [v[0] / kx + v[1] / ky, -v[0] / kx + v[1] / ky];
    Action([(0.5 + u[0]).clamp(0.0, 1.0), (0.5 + u[1]).clamp(0.0, 1.0)])
}

/// Haptic servoing: the servo rule driven by the estimated position.
pub fn haptic_servo_step(
    obs: &ObservationModel,
    window: &[Vec<f64>],
    goal: [f64; 2],
    kx: f64,
    ky: f64,
) -> Result<Action, ControlError> {
    let position = obs.estimate_position(window)?;
    Ok(servo_action(position, goal, kx, ky))
}

/// Open-loop plan: repeated MPC ticks on the propagated (never measured)
/// state until the predicted position reaches the tolerance or the step cap.
/// Returns the accumulated sequence and whether the cap was hit.
pub fn plan_open_loop(
    trans: &TransitionModel,
    readout: &PositionReadout<'_>,
    critic: Option<&CriticModel>,
    initial_history: &[HistoryEntry],
    goal: [f64; 2],
    params: &MpcParams,
) -> Result<(Vec<Action>, bool), ControlError> {
    let mut history = trans.pad_history(initial_history);
    let mut sampler = UniformSampler::new(derive_seed(params.seed, "plan", 0));
    let mut plan = Vec::new();
    // Rolling feature path for windowed readouts.
    let mut feature_path: Vec<Vec<f64>> = vec![history.last().unwrap().features.clone()];
    loop {
        let current_pos = readout.path_positions(&feature_path)?.last().copied().unwrap();
        let dist =
            ((current_pos[0] - goal[0]).powi(2) + (current_pos[1] - goal[1]).powi(2)).sqrt();
        if dist <= params.goal_tolerance {
            return Ok((plan, false));
        }
        if plan.len() >= params.max_steps {
            return Ok((plan, true));
        }
        let (action, _) = mpc_step(trans, readout, critic, &history, goal, params, &mut sampler)?;
        let next = trans.predict_next(&history, action)?;
        plan.push(action);
        history.last_mut().unwrap().action = action;
        history.remove(0);
        history.push(HistoryEntry { features: next.clone(), action: Action::NEUTRAL });
        feature_path.push(next);
        let keep = feature_path.len().saturating_sub(16);
        if keep > 0 {
            feature_path.drain(..keep);
        }
    }
}

/// Controller identity for roll-outs and the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Plan once from the mean initial grasp, execute blind.
    OpenLoop,
    /// Proportional servo on the estimated position.
    HapticServo,
    /// Shooting MPC, goal term only (w1 = 1, w2 = 0).
    Mpc,
    /// Shooting MPC with the critic term.
    MpcCritic,
    /// Servo on the ground-truth position (oracle feedback).
    VisualServo,
    /// MPC over the vision state (ground-truth pose + loads), no critic.
    MpcVis,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::OpenLoop => "OL",
            PolicyKind::HapticServo => "HS",
            PolicyKind::Mpc => "MPC",
            PolicyKind::MpcCritic => "MPC-Critic",
            PolicyKind::VisualServo => "VS",
            PolicyKind::MpcVis => "MPC-Vis",
        }
    }

    pub fn parse(name: &str) -> Option<PolicyKind> {
        match name {
            "OL" => Some(PolicyKind::OpenLoop),
            "HS" => Some(PolicyKind::HapticServo),
            "MPC" => Some(PolicyKind::Mpc),
            "MPC-Critic" => Some(PolicyKind::MpcCritic),
            "VS" => Some(PolicyKind::VisualServo),
            "MPC-Vis" => Some(PolicyKind::MpcVis),
            _ => None,
        }
    }
}

/// Everything a roll-out may need; policies that lack their models fail
/// with [`ControlError::MissingModel`].
pub struct ControlStack<'a> {
    pub obs: &'a ObservationModel,
    pub critic: Option<&'a CriticModel>,
    pub trans: Option<&'a TransitionModel>,
    /// Transition model over the vision state [px, py, load1, load2].
    pub vis_trans: Option<&'a TransitionModel>,
    /// Servo gains (Kx, Ky).
    pub gains: (f64, f64),
    /// Mean initial feature state of the training data (open-loop start).
    pub mean_initial_features: Vec<f64>,
}

/// Per-step roll-out log entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub true_pose: Pose,
    pub estimated_pose: Pose,
    pub action: Action,
    pub cost: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The policy declared arrival (estimated position within tolerance, or
    /// its plan completed).
    Success,
    Dropped,
    Timeout,
}

/// One roll-out attempt. `success` is judged on the TRUE final error; the
/// simulator's ground truth stands in for the external camera that scores
/// the haptic methods.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolloutResult {
    pub policy: String,
    pub goal: [f64; 2],
    pub final_true_error: f64,
    pub path_length: f64,
    pub steps: usize,
    pub outcome: Outcome,
    pub success: bool,
    pub log: Vec<StepLog>,
}

/// The vision-state features of the MPC-Vis baseline.
pub fn vis_features(truth: &Pose, loads: [f64; 2]) -> Vec<f64> {
    vec![truth.x, truth.y, loads[0], loads[1]]
}

/// Runs one closed-loop attempt of `policy` toward `goal` from a fresh
/// grasp. Termination: predicted arrival (estimated position within the
/// tolerance), drop, plan exhaustion (OL) or the step cap.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    hand: &HandConfig,
    object: &ObjectSpec,
    noise: &NoiseModel,
    stack: &ControlStack<'_>,
    policy: PolicyKind,
    goal: [f64; 2],
    grasp_seed: u64,
    params: &MpcParams,
) -> Result<RolloutResult, ControlError> {
    let comb = stack.obs.combination;
    let mut state = grasp_reset(hand, object, grasp_seed)?;
    let initial_pose = state.object_pose;

    // Open-loop plans are produced before execution, from the dataset-mean
    // initial state.
    let mut plan: Option<Vec<Action>> = None;
    if policy == PolicyKind::OpenLoop {
        let trans = stack.trans.ok_or(ControlError::MissingModel("transition"))?;
        let readout = PositionReadout::Learned(stack.obs);
        let start = HistoryEntry {
            features: stack.mean_initial_features.clone(),
            action: Action::NEUTRAL,
        };
        let (actions, _) =
            plan_open_loop(trans, &readout, stack.critic, &[start], goal, params)?;
        plan = Some(actions);
    }

    let mut sampler = UniformSampler::new(derive_seed(params.seed, "mpc", grasp_seed));
    let mut feat_window: Vec<Vec<f64>> = Vec::new();
    let mut hist: Vec<HistoryEntry> = Vec::new();
    let mut vis_hist: Vec<HistoryEntry> = Vec::new();
    let mut log: Vec<StepLog> = Vec::new();
    let mut path_length = 0.0;
    let mut prev_truth = initial_pose;
    let mut outcome = Outcome::Timeout;

    for t in 0..params.max_steps {
        let reading = read_sensors(hand, &mut state, noise)?;
        let record = Record {
            episode_id: 0,
            t: t as u32,
            sensor: reading,
            action: Action::NEUTRAL,
            initial_pose,
            dropped: false,
        };
        let features = extract_features(&record, comb);
        feat_window.push(features.clone());
        let wmax = stack.obs.window.max(8);
        if feat_window.len() > wmax {
            feat_window.remove(0);
        }
        hist.push(HistoryEntry { features, action: Action::NEUTRAL });
        if hist.len() > 8 {
            hist.remove(0);
        }
        vis_hist.push(HistoryEntry {
            features: vis_features(&reading.truth_pose, reading.loads),
            action: Action::NEUTRAL,
        });
        if vis_hist.len() > 8 {
            vis_hist.remove(0);
        }

        let obs_window = pad_window(&feat_window, stack.obs.window);
        let est_pose = stack.obs.estimate_pose(&obs_window)?;
        let truth = reading.truth_pose;
        path_length += truth.position_distance(&prev_truth);
        prev_truth = truth;

        // Arrival is declared on the controller's own feedback signal.
        let feedback = match policy {
            PolicyKind::VisualServo | PolicyKind::MpcVis => [truth.x, truth.y],
            _ => [est_pose.x, est_pose.y],
        };
        let dist = ((feedback[0] - goal[0]).powi(2) + (feedback[1] - goal[1]).powi(2)).sqrt();
        if dist <= params.goal_tolerance {
            outcome = Outcome::Success;
            log.push(StepLog {
                true_pose: truth,
                estimated_pose: est_pose,
                action: Action::NEUTRAL,
                cost: None,
            });
            break;
        }

        let (action, cost) = match policy {
            PolicyKind::OpenLoop => {
                let p = plan.as_ref().expect("plan built above");
                match p.get(t) {
                    Some(&a) => (a, None),
                    None => {
                        // Plan exhausted: the planner predicted arrival.
                        outcome = Outcome::Success;
                        log.push(StepLog {
                            true_pose: truth,
                            estimated_pose: est_pose,
                            action: Action::NEUTRAL,
                            cost: None,
                        });
                        break;
                    }
                }
            }
            PolicyKind::HapticServo => (
                servo_action([est_pose.x, est_pose.y], goal, stack.gains.0, stack.gains.1),
                None,
            ),
            PolicyKind::VisualServo => {
                (servo_action([truth.x, truth.y], goal, stack.gains.0, stack.gains.1), None)
            }
            PolicyKind::Mpc | PolicyKind::MpcCritic => {
                let trans = stack.trans.ok_or(ControlError::MissingModel("transition"))?;
                let readout = PositionReadout::Learned(stack.obs);
                let mut p = *params;
                let critic = if policy == PolicyKind::Mpc {
                    p.w1 = 1.0;
                    p.w2 = 0.0;
                    None
                } else {
                    Some(stack.critic.ok_or(ControlError::MissingModel("critic"))?)
                };
                let history = trans.pad_history(&hist);
                let (a, diag) =
                    mpc_step(trans, &readout, critic, &history, goal, &p, &mut sampler)?;
                (a, Some(diag.costs[diag.chosen]))
            }
            PolicyKind::MpcVis => {
                let trans = stack.vis_trans.ok_or(ControlError::MissingModel("vis-transition"))?;
                let readout = PositionReadout::StateDims(0, 1);
                let mut p = *params;
                p.w1 = 1.0;
                p.w2 = 0.0;
                let history = trans.pad_history(&vis_hist);
                let (a, diag) =
                    mpc_step(trans, &readout, None, &history, goal, &p, &mut sampler)?;
                (a, Some(diag.costs[diag.chosen]))
            }
        };

        hist.last_mut().unwrap().action = action;
        vis_hist.last_mut().unwrap().action = action;
        log.push(StepLog { true_pose: truth, estimated_pose: est_pose, action, cost });

        let out = step(hand, object, &state, action)?;
        if out.dropped {
            outcome = Outcome::Dropped;
            state = out.next;
            break;
        }
        state = out.next;
    }

    let final_true_error =
        ((prev_truth.x - goal[0]).powi(2) + (prev_truth.y - goal[1]).powi(2)).sqrt();
    let success = outcome != Outcome::Dropped && final_true_error <= params.goal_tolerance;
    Ok(RolloutResult {
        policy: policy.name().to_string(),
        goal,
        final_true_error,
        path_length,
        steps: log.len(),
        outcome,
        success,
        log,
    })
}

/// Window of the last `w` entries, front-padded by repeating the oldest.
fn pad_window(entries: &[Vec<f64>], w: usize) -> Vec<Vec<f64>> {
    assert!(!entries.is_empty());
    (0..w)
        .map(|k| {
            let idx = (entries.len() as i64 - 1 - (w - 1 - k) as i64).max(0) as usize;
            entries[idx].clone()
        })
        .collect()
}

/// Mean feature state over episode-initial records, the open-loop start.
pub fn mean_initial_features(records: &[Record], comb: FeatureCombination) -> Vec<f64> {
    let mut sum = vec![0.0; comb.dim()];
    let mut count = 0usize;
    for (_, span) in crate::data::episode_spans(records) {
        let f = extract_features(&records[span.start], comb);
        for (s, v) in sum.iter_mut().zip(f) {
            *s += v;
        }
        count += 1;
    }
    assert!(count > 0, "no episodes in training data");
    for s in &mut sum {
        *s /= count as f64;
    }
    sum
}
