//! Feature combinations, feature extraction and z-score normalization.

use super::Record;
use serde::{Deserialize, Serialize};

/// One of the nine feature subsets used for state representation.
///
/// Membership: 1={loads}, 2={tactile}, 3={loads,tactile}, 4={angles},
/// 5={angles,loads}, 6={angles,tactile}, 7={angles,loads,tactile},
/// 8={angles,loads,initial_pose}, 9={angles,loads,tactile,initial_pose}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FeatureCombination {
    id: u8,
}

impl FeatureCombination {
    pub fn new(id: u8) -> Result<Self, String> {
        if (1..=9).contains(&id) {
            Ok(FeatureCombination { id })
        } else {
            Err(format!("feature combination id must be 1..=9, got {id}"))
        }
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn all() -> impl Iterator<Item = FeatureCombination> {
        (1..=9).map(|id| FeatureCombination { id })
    }

    pub fn has_angles(&self) -> bool {
        matches!(self.id, 4..=9)
    }

    pub fn has_loads(&self) -> bool {
        matches!(self.id, 1 | 3 | 5 | 7 | 8 | 9)
    }

    pub fn has_tactile(&self) -> bool {
        matches!(self.id, 2 | 3 | 6 | 7 | 9)
    }

    pub fn has_initial_pose(&self) -> bool {
        matches!(self.id, 8 | 9)
    }

    /// Feature vector dimension.
    pub fn dim(&self) -> usize {
        2 * self.has_angles() as usize
            + 2 * self.has_loads() as usize
            + 2 * self.has_tactile() as usize
            + 3 * self.has_initial_pose() as usize
    }
}

impl TryFrom<u8> for FeatureCombination {
    type Error = String;
    fn try_from(id: u8) -> Result<Self, Self::Error> {
        FeatureCombination::new(id)
    }
}

impl From<FeatureCombination> for u8 {
    fn from(c: FeatureCombination) -> u8 {
        c.id
    }
}

/// Assembles the feature vector for one record, in the fixed order
/// [angles | loads | tactile | initial_pose], keeping only the members of
/// the combination. The initial pose is encoded as (x, y, yaw).
pub fn extract_features(record: &Record, comb: FeatureCombination) -> Vec<f64> {
    let mut v = Vec::with_capacity(comb.dim());
    if comb.has_angles() {
        v.extend_from_slice(&record.sensor.enc_angles);
    }
    if comb.has_loads() {
        v.extend_from_slice(&record.sensor.loads);
    }
    if comb.has_tactile() {
        v.extend_from_slice(&record.sensor.tactile);
    }
    if comb.has_initial_pose() {
        v.push(record.initial_pose.x);
        v.push(record.initial_pose.y);
        v.push(record.initial_pose.yaw);
    }
    v
}

/// Per-dimension z-score statistics, fitted on training data only.
/// Zero-variance dimensions store std 1 so they normalize to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fits population mean/std over rows.
    pub fn fit<'a, I>(rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rows.into_iter();
        let first = iter.next().expect("normalizer needs at least one row");
        let dim = first.len();
        let mut mean = first.to_vec();
        let mut m2 = vec![0.0; dim];
        let mut n = 1.0;
        for row in iter {
            n += 1.0;
            for d in 0..dim {
                let delta = row[d] - mean[d];
                mean[d] += delta / n;
                m2[d] += delta * (row[d] - mean[d]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let v = (s / n).sqrt();
                if v > 0.0 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim());
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim());
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&z, (&m, &s))| z * s + m)
            .collect()
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        for (x, (m, s)) in v.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *x = (*x - m) / s;
        }
    }
}

/// Window of `w` record indices ending at `idx`, clamped at the episode start
/// (the first state repeats when the episode is younger than the window).
pub fn window_indices(episode_start: usize, idx: usize, w: usize) -> Vec<usize> {
    debug_assert!(idx >= episode_start);
    (0..w)
        .map(|k| {
            let back = (w - 1 - k) as i64;
            ((idx as i64 - back).max(episode_start as i64)) as usize
        })
        .collect()
}
