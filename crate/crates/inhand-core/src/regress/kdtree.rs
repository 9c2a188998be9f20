//! Exact k-d tree for k-nearest-neighbor queries over normalized feature
//! vectors. Deterministic: splits on the widest dimension with index
//! tie-breaks, so identical data always builds an identical tree and returns
//! identically ordered neighbors.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Node {
    /// Index of the point stored at this node.
    point: u32,
    dim: u16,
    left: i32,
    right: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: i32,
    points: Vec<f64>,
    dim: usize,
}

const LEAF: i32 = -1;
// Below this size a linear scan beats tree traversal.
const LINEAR_CUTOFF: usize = 16;

impl KdTree {
    /// Builds over `n` points of dimension `dim`, row-major.
    pub fn build(points: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && points.len() % dim == 0);
        let n = points.len() / dim;
        let mut tree = KdTree { nodes: Vec::with_capacity(n), root: LEAF, points, dim };
        let mut idx: Vec<u32> = (0..n as u32).collect();
        tree.root = tree.build_rec(&mut idx);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build_rec(&mut self, idx: &mut [u32]) -> i32 {
        if idx.is_empty() {
            return LEAF;
        }
        // Widest spread picks the split dimension.
        let mut split_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in idx.iter() {
                let v = self.points[i as usize * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                split_dim = d;
            }
        }
        let mid = idx.len() / 2;
        let dim = self.dim;
        let points = &self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            let va = points[a as usize * dim + split_dim];
            let vb = points[b as usize * dim + split_dim];
            va.total_cmp(&vb).then(a.cmp(&b))
        });
        let point = idx[mid];
        let node_id = self.nodes.len() as i32;
        self.nodes.push(Node { point, dim: split_dim as u16, left: LEAF, right: LEAF });
        let (lo, rest) = idx.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo);
        let right = self.build_rec(hi);
        self.nodes[node_id as usize].left = left;
        self.nodes[node_id as usize].right = right;
        node_id
    }

    /// The `k` nearest points to `query`, as (squared distance, index),
    /// sorted ascending with index tie-breaks.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(f64, usize)> {
        assert_eq!(query.len(), self.dim);
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        if self.len() <= LINEAR_CUTOFF {
            return self.linear_knn(query, k);
        }
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, &mut heap);
        heap.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        heap
    }

    fn linear_knn(&self, query: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> =
            (0..self.len()).map(|i| (self.dist_sq(i, query), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    fn dist_sq(&self, i: usize, query: &[f64]) -> f64 {
        self.point(i)
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn search(&self, node: i32, query: &[f64], k: usize, heap: &mut Vec<(f64, usize)>) {
        if node == LEAF {
            return;
        }
        let n = &self.nodes[node as usize];
        let i = n.point as usize;
        let d = self.dist_sq(i, query);
        push_bounded(heap, k, (d, i));
        let delta = query[n.dim as usize] - self.points[i * self.dim + n.dim as usize];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, query, k, heap);
        // Visit the far side only if the splitting plane can still hold a
        // closer point than the current worst.
        if heap.len() < k || delta * delta <= worst(heap).0 {
            self.search(far, query, k, heap);
        }
    }
}

fn worst(heap: &[(f64, usize)]) -> (f64, usize) {
    *heap
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty heap")
}

fn push_bounded(heap: &mut Vec<(f64, usize)>, k: usize, item: (f64, usize)) {
    if heap.len() < k {
        heap.push(item);
        return;
    }
    let w = worst(heap);
    if item.0.total_cmp(&w.0).then(item.1.cmp(&w.1)).is_lt() {
        let pos = heap.iter().position(|&e| e == w).expect("worst in heap");
        heap[pos] = item;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn brute_force(points: &[f64], dim: usize, query: &[f64], k: usize) -> Vec<(f64, usize)> {
        let n = points.len() / dim;
        let mut all: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let d = points[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k.min(n));
        all
    }

    #[test]
    fn matches_linear_scan_on_random_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..25 {
            let n = rng.gen_range(1..200);
            let dim = rng.gen_range(1..6);
            let points: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let tree = KdTree::build(points.clone(), dim);
            let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let k = rng.gen_range(1..=n.min(30));
            assert_eq!(tree.knn(&query, k), brute_force(&points, dim, &query, k));
        }
    }

    #[test]
    fn duplicate_points_tie_break_by_index() {
        let points = vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0];
        let tree = KdTree::build(points, 2);
        let res = tree.knn(&[1.0, 1.0], 2);
        assert_eq!(res, vec![(0.0, 0), (0.0, 2)]);
    }

    proptest! {
        #[test]
        fn knn_equals_brute_force(
            pts in proptest::collection::vec(-10.0f64..10.0, 3..120),
            qx in -10.0f64..10.0,
            qy in -10.0f64..10.0,
            k in 1usize..12,
        ) {
            let dim = 2;
            let n = pts.len() / dim;
            prop_assume!(n >= 1);
            let points = pts[..n * dim].to_vec();
            let tree = KdTree::build(points.clone(), dim);
            let query = [qx, qy];
            prop_assert_eq!(tree.knn(&query, k), brute_force(&points, dim, &query, k));
        }
    }
}
