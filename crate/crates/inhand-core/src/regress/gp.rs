//! Local Gaussian-process regression: exact GP posterior over the k nearest
//! training points of each query, RBF kernel, shared Cholesky factorization
//! across output dimensions.

use super::kdtree::KdTree;
use super::RegressError;
use crate::data::Normalizer;
use crate::linalg::{cholesky, cholesky_solve};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// RBF kernel and locality parameters, in normalized input space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub lengthscale: f64,
    pub signal: f64,
    pub noise: f64,
    pub k_nn: usize,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams { lengthscale: 1.0, signal: 1.0, noise: 0.05, k_nn: 100 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpModel {
    pub params: GpParams,
    pub x_norm: Normalizer,
    pub y_norm: Normalizer,
    /// Normalized training inputs, row-major (n, d).
    train_x: Vec<f64>,
    /// Normalized training targets, row-major (n, o).
    train_y: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
    #[serde(skip)]
    tree: Option<KdTree>,
}

impl GpModel {
    pub fn fit(
        params: GpParams,
        x: &Array2<f64>,
        y: &Array2<f64>,
    ) -> Result<GpModel, RegressError> {
        if x.nrows() == 0 {
            return Err(RegressError::EmptyData);
        }
        if x.nrows() != y.nrows() {
            return Err(RegressError::DimensionMismatch {
                expected: x.nrows(),
                got: y.nrows(),
                what: "target row count".into(),
            });
        }
        let rows_x: Vec<&[f64]> = x.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
        let x_norm = Normalizer::fit(rows_x.iter().copied());
        let rows_y: Vec<&[f64]> = y.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
        let y_norm = Normalizer::fit(rows_y.iter().copied());
        let mut train_x = Vec::with_capacity(x.len());
        for r in &rows_x {
            train_x.extend(x_norm.apply(r));
        }
        let mut train_y = Vec::with_capacity(y.len());
        for r in &rows_y {
            train_y.extend(y_norm.apply(r));
        }
        let mut model = GpModel {
            params,
            x_norm,
            y_norm,
            train_x,
            train_y,
            in_dim: x.ncols(),
            out_dim: y.ncols(),
            tree: None,
        };
        model.rebuild_index();
        Ok(model)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn n_train(&self) -> usize {
        self.train_x.len() / self.in_dim
    }

    /// Rebuilds the neighbor index (deterministic given the stored data);
    /// required after deserialization.
    pub fn rebuild_index(&mut self) {
        self.tree = Some(KdTree::build(self.train_x.clone(), self.in_dim));
    }

    fn tree(&self) -> &KdTree {
        self.tree.as_ref().expect("index built at fit/load")
    }

    /// Neighbor indices used for a query, ascending (distance, index).
    pub fn neighbor_indices(&self, x_raw: &[f64]) -> Result<Vec<usize>, RegressError> {
        if x_raw.len() != self.in_dim {
            return Err(RegressError::DimensionMismatch {
                expected: self.in_dim,
                got: x_raw.len(),
                what: "query dimension".into(),
            });
        }
        let z = self.x_norm.apply(x_raw);
        Ok(self
            .tree()
            .knn(&z, self.params.k_nn)
            .into_iter()
            .map(|(_, i)| i)
            .collect())
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.params.signal * self.params.signal
            * (-d2 / (2.0 * self.params.lengthscale * self.params.lengthscale)).exp()
    }

    /// Posterior mean (denormalized) and latent variance (normalized units)
    /// of the local GP at the query.
    pub fn predict_with_variance(&self, x_raw: &[f64]) -> Result<(Vec<f64>, f64), RegressError> {
        if x_raw.len() != self.in_dim {
            return Err(RegressError::DimensionMismatch {
                expected: self.in_dim,
                got: x_raw.len(),
                what: "query dimension".into(),
            });
        }
        let z = self.x_norm.apply(x_raw);
        let nbrs = self.tree().knn(&z, self.params.k_nn);
        let k = nbrs.len();
        let pts: Vec<&[f64]> = nbrs.iter().map(|&(_, i)| self.tree().point(i)).collect();

        let mut kmat = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                kmat[i * k + j] = self.kernel(pts[i], pts[j]);
            }
        }
        let sn2 = self.params.noise * self.params.noise;
        // Jitter ramp keeps the factorization alive when noise is zero and
        // neighbors nearly coincide.
        let mut chol = None;
        for jitter in [sn2, sn2 + 1e-12, sn2 + 1e-10, sn2 + 1e-8] {
            let mut m = kmat.clone();
            for i in 0..k {
                m[i * k + i] += jitter;
            }
            if cholesky(&mut m, k) {
                chol = Some(m);
                break;
            }
        }
        let chol = chol.ok_or_else(|| {
            RegressError::Numeric("GP kernel matrix is not positive definite".into())
        })?;

        let kstar: Vec<f64> = pts.iter().map(|p| self.kernel(&z, p)).collect();
        let mut mean_norm = vec![0.0; self.out_dim];
        for d in 0..self.out_dim {
            let yd: Vec<f64> = nbrs
                .iter()
                .map(|&(_, i)| self.train_y[i * self.out_dim + d])
                .collect();
            let alpha = cholesky_solve(&chol, &yd, k);
            mean_norm[d] = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        }
        let v = cholesky_solve(&chol, &kstar, k);
        let explained: f64 = kstar.iter().zip(&v).map(|(a, b)| a * b).sum();
        let variance = (self.params.signal * self.params.signal - explained).max(0.0);
        Ok((self.y_norm.invert(&mean_norm), variance))
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<Vec<f64>, RegressError> {
        Ok(self.predict_with_variance(x_raw)?.0)
    }
}

/// Dense (non-local) GP posterior mean over ALL training points by explicit
/// solve; the oracle that local prediction must match when n <= k_nn.
pub fn dense_gp_oracle(
    params: &GpParams,
    x: &Array2<f64>,
    y: &Array2<f64>,
    query: &[f64],
) -> Vec<f64> {
    let n = x.nrows();
    let rows_x: Vec<&[f64]> = x.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let x_norm = Normalizer::fit(rows_x.iter().copied());
    let rows_y: Vec<&[f64]> = y.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let y_norm = Normalizer::fit(rows_y.iter().copied());
    let zs: Vec<Vec<f64>> = rows_x.iter().map(|r| x_norm.apply(r)).collect();
    let zq = x_norm.apply(query);
    let kern = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        params.signal * params.signal
            * (-d2 / (2.0 * params.lengthscale * params.lengthscale)).exp()
    };
    let mut kmat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            kmat[i * n + j] = kern(&zs[i], &zs[j]);
        }
        kmat[i * n + i] += params.noise * params.noise;
    }
    assert!(cholesky(&mut kmat, n), "oracle kernel matrix not PD");
    let kstar: Vec<f64> = zs.iter().map(|p| kern(&zq, p)).collect();
    let mut out = vec![0.0; y.ncols()];
    for d in 0..y.ncols() {
        let yd: Vec<f64> = rows_y.iter().map(|r| y_norm.apply(r)[d]).collect();
        let alpha = cholesky_solve(&kmat, &yd, n);
        out[d] = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    }
    y_norm.invert(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_gp(noise: f64) -> GpModel {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [1.5, -0.5]];
        let y = array![[1.0], [2.0], [3.0], [-1.0], [0.5]];
        GpModel::fit(GpParams { noise, k_nn: 10, ..GpParams::default() }, &x, &y).unwrap()
    }

    #[test]
    fn noiseless_gp_interpolates_training_points() {
        let gp = small_gp(0.0);
        let pred = gp.predict(&[1.0, 0.0]).unwrap();
        assert!((pred[0] - 2.0).abs() < 1e-8, "got {}", pred[0]);
    }

    #[test]
    fn symmetric_points_cancel() {
        // Two training points symmetric about the query with opposite
        // targets: posterior mean at the midpoint is zero.
        let x = array![[-1.0], [1.0]];
        let y = array![[3.0], [-3.0]];
        let gp = GpModel::fit(GpParams { noise: 0.1, k_nn: 2, ..Default::default() }, &x, &y)
            .unwrap();
        let pred = gp.predict(&[0.0]).unwrap();
        assert!(pred[0].abs() < 1e-10, "got {}", pred[0]);
    }

    #[test]
    fn matches_dense_oracle_when_k_covers_all() {
        let x = array![[0.0, 0.3], [0.9, -0.4], [-0.7, 1.1]];
        let y = array![[1.0, -2.0], [0.5, 0.0], [2.0, 1.0]];
        let params = GpParams { noise: 0.05, k_nn: 3, ..Default::default() };
        let gp = GpModel::fit(params, &x, &y).unwrap();
        for query in [[0.2, 0.1], [1.0, 1.0], [-0.5, 0.6]] {
            let local = gp.predict(&query).unwrap();
            let dense = dense_gp_oracle(&params, &x, &y, &query);
            for (a, b) in local.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-10, "local {a} vs dense {b}");
            }
        }
    }

    #[test]
    fn variance_shrinks_near_training_data() {
        let gp = small_gp(0.01);
        let (_, var_near) = gp.predict_with_variance(&[1.0, 0.0]).unwrap();
        let (_, var_far) = gp.predict_with_variance(&[30.0, -40.0]).unwrap();
        assert!(var_near < var_far);
        assert!(var_far <= gp.params.signal * gp.params.signal + 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let gp = small_gp(0.05);
        assert!(matches!(
            gp.predict(&[1.0]),
            Err(RegressError::DimensionMismatch { .. })
        ));
    }
}
