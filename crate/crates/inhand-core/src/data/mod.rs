//! Episodic data collection, dataset schema, splits and on-disk format.
//!
//! Data is collected grasp-to-drop: reset to a random preload, apply
//! exploratory random actions (each held for a few steps so episodes traverse
//! the workspace instead of jittering) until the object drops or the step cap
//! is reached. Every record carries the haptic reading, the action taken, and
//! the episode's initial pose.

mod features;
mod io;

pub use features::{extract_features, window_indices, FeatureCombination, Normalizer};
pub use io::{read as read_dataset, write as write_dataset};

use crate::seeding::derive_seed;
use crate::sim::{
    grasp_reset, read_sensors, step, Action, HandConfig, NoiseModel, ObjectSpec, Pose,
    SensorReading, SimError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One timestep of one episode: the sensor reading at `t` and the action
/// taken at `t`. `dropped` marks the terminal record of an episode that ended
/// in a drop (the recorded action caused it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub episode_id: u64,
    pub t: u32,
    pub sensor: SensorReading,
    pub action: Action,
    pub initial_pose: Pose,
    pub dropped: bool,
}

/// Dataset provenance: everything needed to regenerate the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub hand: HandConfig,
    pub object: ObjectSpec,
    pub noise: NoiseModel,
    pub seed: u64,
    pub n_episodes: usize,
    pub max_steps: usize,
    pub record_count: usize,
    /// Unix seconds at collection time; provenance only, not part of
    /// dataset identity.
    pub created_unix: u64,
}

pub const FORMAT_VERSION: &str = "1";

/// An ordered set of grasp-to-drop episodes with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeDataset {
    pub records: Vec<Record>,
    pub manifest: Manifest,
}

impl EpisodeDataset {
    /// Episode ids in first-appearance order.
    pub fn episode_ids(&self) -> Vec<u64> {
        let mut ids = Vec::new();
        for r in &self.records {
            if ids.last() != Some(&r.episode_id) {
                ids.push(r.episode_id);
            }
        }
        ids
    }
}

/// Contiguous index spans of each episode within an ordered record slice.
pub fn episode_spans(records: &[Record]) -> Vec<(u64, std::ops::Range<usize>)> {
    let mut spans: Vec<(u64, std::ops::Range<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match spans.last_mut() {
            Some((id, range)) if *id == r.episode_id => range.end = i + 1,
            _ => spans.push((r.episode_id, i..i + 1)),
        }
    }
    spans
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row {row} in {file}: {reason}")]
    MalformedRow { file: String, row: usize, reason: String },
    #[error("dataset format version {found:?} is not {expected:?}")]
    VersionMismatch { found: String, expected: String },
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("need at least {need} episodes for this split, have {have}")]
    InsufficientEpisodes { have: usize, need: usize },
}

/// Collects `n_episodes` grasp-to-drop episodes with exploratory random
/// actions (uniform, held 5-20 steps). Deterministic under `seed`; the noise
/// model's salt is mixed into every per-episode stream.
pub fn collect(
    hand: &HandConfig,
    object: &ObjectSpec,
    noise: &NoiseModel,
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EpisodeDataset, DataError> {
    assert!(n_episodes >= 1, "n_episodes must be >= 1");
    let root = seed ^ noise.seed;
    let mut records = Vec::new();
    for ep in 0..n_episodes as u64 {
        collect_episode(hand, object, noise, ep, max_steps, root, &mut records)?;
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.to_string(),
        hand: hand.clone(),
        object: object.clone(),
        noise: noise.clone(),
        seed,
        n_episodes,
        max_steps,
        record_count: records.len(),
        created_unix: now_unix(),
    };
    Ok(EpisodeDataset { records, manifest })
}

fn collect_episode(
    hand: &HandConfig,
    object: &ObjectSpec,
    noise: &NoiseModel,
    episode_id: u64,
    max_steps: usize,
    root: u64,
    out: &mut Vec<Record>,
) -> Result<(), DataError> {
    let mut state = grasp_reset(hand, object, derive_seed(root, "episode", episode_id))?;
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(root, "actions", episode_id));
    let mut reading = read_sensors(hand, &mut state, noise)?;
    let initial_pose = reading.truth_pose;
    let mut action = Action::NEUTRAL;
    let mut hold = 0u32;
    for t in 0..max_steps as u32 {
        if hold == 0 {
            action = Action([action_rng.gen_range(0.0..=1.0), action_rng.gen_range(0.0..=1.0)]);
            hold = action_rng.gen_range(5..=20);
        }
        hold -= 1;
        let outcome = step(hand, object, &state, action)?;
        out.push(Record {
            episode_id,
            t,
            sensor: reading,
            action,
            initial_pose,
            dropped: outcome.dropped,
        });
        if outcome.dropped {
            return Ok(());
        }
        state = outcome.next;
        reading = read_sensors(hand, &mut state, noise)?;
    }
    Ok(())
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// How many episodes go to the test split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSize {
    Episodes(usize),
    Fraction(f64),
}

/// Episode-disjoint split policy. The critic holdout is carved out of the
/// training episodes; its fraction refers to the full episode count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub test: TestSize,
    pub critic_holdout_fraction: f64,
}

/// Episode-disjoint train/test/critic-holdout splits. Test episodes are the
/// last collected (separated episodes), the holdout the last of the rest.
pub struct Splits {
    pub train: Vec<Record>,
    pub test: Vec<Record>,
    pub critic_holdout: Vec<Record>,
}

pub fn split(dataset: &EpisodeDataset, policy: &SplitPolicy) -> Result<Splits, DataError> {
    let ids = dataset.episode_ids();
    let n = ids.len();
    let n_test = match policy.test {
        TestSize::Episodes(k) => k,
        TestSize::Fraction(f) => (f * n as f64).floor() as usize,
    };
    let n_hold = (policy.critic_holdout_fraction * n as f64).floor() as usize;
    // At least one training episode must remain.
    if n_test + n_hold >= n {
        return Err(DataError::InsufficientEpisodes { have: n, need: n_test + n_hold + 1 });
    }
    let test_ids: std::collections::HashSet<u64> = ids[n - n_test..].iter().copied().collect();
    let hold_ids: std::collections::HashSet<u64> =
        ids[n - n_test - n_hold..n - n_test].iter().copied().collect();
    let mut splits = Splits { train: Vec::new(), test: Vec::new(), critic_holdout: Vec::new() };
    for r in &dataset.records {
        if test_ids.contains(&r.episode_id) {
            splits.test.push(r.clone());
        } else if hold_ids.contains(&r.episode_id) {
            splits.critic_holdout.push(r.clone());
        } else {
            splits.train.push(r.clone());
        }
    }
    Ok(splits)
}
