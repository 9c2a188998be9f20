//! Roll-out benchmark: goals sampled inside the reachable workspace, every
//! method run on the same goal/grasp pairs, Table-shaped CSV output.

use super::{rollout, ControlError, ControlStack, MpcParams, PolicyKind, RolloutResult};
use crate::data::Record;
use crate::seeding::derive_seed;
use crate::sim::{HandConfig, NoiseModel, ObjectSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Convex hull (counter-clockwise) of the ground-truth training positions,
/// shrunk toward its centroid; goals are sampled inside it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkspaceHull {
    pub vertices: Vec<[f64; 2]>,
}

/// Andrew monotone chain over the training poses, then a `shrink` fraction
/// toward the centroid (0.1 keeps goals off the workspace boundary).
pub fn workspace_hull(records: &[Record], shrink: f64) -> WorkspaceHull {
    let mut pts: Vec<[f64; 2]> = records
        .iter()
        .map(|r| [r.sensor.truth_pose.x, r.sensor.truth_pose.y])
        .collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    assert!(pts.len() >= 3, "need at least 3 distinct positions for a hull");
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let n = lower.len() as f64;
    let cx = lower.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = lower.iter().map(|p| p[1]).sum::<f64>() / n;
    let vertices = lower
        .into_iter()
        .map(|p| [cx + (p[0] - cx) * (1.0 - shrink), cy + (p[1] - cy) * (1.0 - shrink)])
        .collect();
    WorkspaceHull { vertices }
}

impl WorkspaceHull {
    /// Uniform sample via fan triangulation with area-weighted triangles.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let v = &self.vertices;
        let mut areas = Vec::with_capacity(v.len() - 2);
        let mut total = 0.0;
        for i in 1..v.len() - 1 {
            let a =
                0.5 * ((v[i][0] - v[0][0]) * (v[i + 1][1] - v[0][1])
                    - (v[i][1] - v[0][1]) * (v[i + 1][0] - v[0][0]))
                    .abs();
            areas.push(a);
            total += a;
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut tri = 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                tri = i + 1;
                break;
            }
            pick -= a;
        }
        let (mut r1, mut r2) = (rng.gen_range(0.0..1.0f64), rng.gen_range(0.0..1.0f64));
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        let (a, b, c) = (v[0], v[tri], v[tri + 1]);
        [
            a[0] + r1 * (b[0] - a[0]) + r2 * (c[0] - a[0]),
            a[1] + r1 * (b[1] - a[1]) + r2 * (c[1] - a[1]),
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = &self.vertices;
        let mut inside = true;
        for i in 0..v.len() {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cross < 0.0 {
                inside = false;
            }
        }
        inside
    }
}

/// Aggregate of one method over the common goal set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub goal_err_mean: f64,
    pub goal_err_std: f64,
    pub path_len_mean: f64,
    pub path_len_std: f64,
    pub success_rate: f64,
    pub n_goals: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    pub goals: Vec<[f64; 2]>,
    /// Per-method roll-out results, same order as `rows`.
    pub results: Vec<Vec<RolloutResult>>,
}

pub const BENCH_CSV_HEADER: &str =
    "method,goal_err_mm,goal_err_std,path_len_mm,path_len_std,success_rate,n_goals";

impl BenchmarkTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BENCH_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{}\n",
                r.method,
                r.goal_err_mean,
                r.goal_err_std,
                r.path_len_mean,
                r.path_len_std,
                r.success_rate,
                r.n_goals
            ));
        }
        out
    }

    pub fn row(&self, method: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    (m, var.sqrt())
}

/// Runs every method on the same goals and grasp seeds. Goals are sampled
/// uniformly inside the training-workspace hull; grasp seeds derive from the
/// benchmark seed so the whole table is reproducible.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    hand: &HandConfig,
    object: &ObjectSpec,
    noise: &NoiseModel,
    stack: &ControlStack<'_>,
    methods: &[PolicyKind],
    train_records: &[Record],
    n_goals: usize,
    seed: u64,
    params: &MpcParams,
) -> Result<BenchmarkTable, ControlError> {
    let hull = workspace_hull(train_records, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "goals", 0));
    let goals: Vec<[f64; 2]> = (0..n_goals).map(|_| hull.sample(&mut rng)).collect();
    let grasp_seeds: Vec<u64> =
        (0..n_goals).map(|i| derive_seed(seed, "grasp", i as u64)).collect();

    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &method in methods {
        use rayon::prelude::*;
        let outcomes: Vec<RolloutResult> = (0..n_goals)
            .into_par_iter()
            .map(|i| {
                let mut p = *params;
                p.seed = derive_seed(params.seed, "rollout", i as u64);
                rollout(hand, object, noise, stack, method, goals[i], grasp_seeds[i], &p)
            })
            .collect::<Result<_, _>>()?;
        let errs: Vec<f64> = outcomes.iter().map(|r| r.final_true_error).collect();
        let lens: Vec<f64> = outcomes.iter().map(|r| r.path_length).collect();
        let succ = outcomes.iter().filter(|r| r.success).count();
        let (ge, gs) = mean_std(&errs);
        let (pl, ps) = mean_std(&lens);
        rows.push(BenchmarkRow {
            method: method.name().to_string(),
            goal_err_mean: ge,
            goal_err_std: gs,
            path_len_mean: pl,
            path_len_std: ps,
            success_rate: if n_goals == 0 { 0.0 } else { succ as f64 / n_goals as f64 },
            n_goals,
        });
        results.push(outcomes);
    }
    Ok(BenchmarkTable { rows, goals, results })
}
