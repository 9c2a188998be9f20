//! Fully-connected network: ReLU hidden layers, linear or softplus output,
//! inverted dropout, hand-rolled backprop. Batched over samples with ndarray.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Output nonlinearity. Softplus keeps scalar outputs positive (critic).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Softplus,
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    /// One (in, out) matrix per layer: `hidden_layers` ReLU layers then the
    /// output layer.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub output: OutputActivation,
}

impl Mlp {
    /// Uniform +-1/sqrt(fan_in) initialization.
    pub fn new(
        in_dim: usize,
        hidden_layers: usize,
        width: usize,
        out_dim: usize,
        output: OutputActivation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat(width).take(hidden_layers));
        dims.push(out_dim);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            weights.push(Array2::from_shape_fn((dims[l], dims[l + 1]), |_| {
                rng.gen_range(-bound..=bound)
            }));
            biases.push(Array1::zeros(dims[l + 1]));
        }
        Mlp { weights, biases, output }
    }

    /// A fixed affine map (no hidden layers); rigged models for tests and
    /// pass-through decoders.
    pub fn linear(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        Mlp { weights: vec![weight], biases: vec![bias], output: OutputActivation::Linear }
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().expect("at least one layer").ncols()
    }

    /// Inference forward pass (dropout off).
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for l in 0..self.weights.len() {
            let mut z = h.dot(&self.weights[l]) + &self.biases[l];
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else if self.output == OutputActivation::Softplus {
                z.mapv_inplace(softplus);
            }
            h = z;
        }
        h
    }

    /// MSE (+ L2 over weight matrices) and parameter gradients for a batch.
    /// Dropout masks are drawn per hidden layer when a generator is supplied.
    pub fn loss_grad(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        l2: f64,
        dropout: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let n_layers = self.weights.len();
        let last = n_layers - 1;
        let batch = x.nrows() as f64;
        let denom = batch * y.ncols() as f64;

        // Forward with caches: zs[l] pre-activation, hs[l] layer input.
        let mut hs: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut zs: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(n_layers);
        let mut h = x.clone();
        for l in 0..n_layers {
            hs.push(h.clone());
            let z = h.dot(&self.weights[l]) + &self.biases[l];
            zs.push(z.clone());
            if l < last {
                let mut a = z;
                a.mapv_inplace(|v| v.max(0.0));
                let mask = match (dropout > 0.0, rng.as_deref_mut()) {
                    (true, Some(r)) => {
                        let keep = 1.0 - dropout;
                        let m = Array2::from_shape_fn(a.raw_dim(), |_| {
                            if r.gen_range(0.0..1.0) < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        a *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                h = a;
            } else {
                masks.push(None);
                if self.output == OutputActivation::Softplus {
                    h = z.mapv(softplus);
                } else {
                    h = z;
                }
            }
        }
        let pred = h;

        let diff = &pred - y;
        let mut loss = diff.mapv(|d| d * d).sum() / denom;
        if l2 > 0.0 {
            loss += l2 * self.weights.iter().map(|w| w.mapv(|v| v * v).sum()).sum::<f64>();
        }

        let mut dz = diff.mapv(|d| 2.0 * d / denom);
        if self.output == OutputActivation::Softplus {
            dz *= &zs[last].mapv(sigmoid);
        }
        let mut dws = vec![Array2::zeros((0, 0)); n_layers];
        let mut dbs = vec![Array1::zeros(0); n_layers];
        for l in (0..n_layers).rev() {
            let mut dw = hs[l].t().dot(&dz);
            if l2 > 0.0 {
                dw += &self.weights[l].mapv(|v| 2.0 * l2 * v);
            }
            dbs[l] = dz.sum_axis(Axis(0));
            dws[l] = dw;
            if l > 0 {
                let mut dh = dz.dot(&self.weights[l].t());
                if let Some(m) = &masks[l - 1] {
                    dh *= m;
                }
                // ReLU gate of the previous layer.
                dh.zip_mut_with(&zs[l - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                dz = dh;
            }
        }
        (loss, dws, dbs)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = p[at];
                at += 1;
            }
            for v in b.iter_mut() {
                *v = p[at];
                at += 1;
            }
        }
        assert_eq!(at, p.len(), "parameter vector length mismatch");
    }

    pub fn flatten_grads(dws: &[Array2<f64>], dbs: &[Array1<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in dws.iter().zip(dbs) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Training session binding an [`Mlp`] to its prepared (normalized) data.
pub(super) struct MlpSession<'a> {
    pub net: Mlp,
    pub x: &'a Array2<f64>,
    pub y: &'a Array2<f64>,
    pub l2: f64,
    pub dropout: f64,
}

impl super::trainer::TrainableNet for MlpSession<'_> {
    fn flat_params(&self) -> Vec<f64> {
        self.net.flat_params()
    }

    fn set_flat_params(&mut self, p: &[f64]) {
        self.net.set_flat_params(p)
    }

    fn loss_grad(&mut self, ids: &[usize], dropout_rng: Option<&mut ChaCha8Rng>) -> (f64, Vec<f64>) {
        let xb = self.x.select(Axis(0), ids);
        let yb = self.y.select(Axis(0), ids);
        let rng = if self.dropout > 0.0 { dropout_rng } else { None };
        let (loss, dws, dbs) = self.net.loss_grad(&xb, &yb, self.l2, self.dropout, rng);
        (loss, Mlp::flatten_grads(&dws, &dbs))
    }

    fn data_loss(&self, ids: &[usize]) -> f64 {
        let xb = self.x.select(Axis(0), ids);
        let yb = self.y.select(Axis(0), ids);
        let pred = self.net.forward(&xb);
        let diff = &pred - &yb;
        diff.mapv(|d| d * d).sum() / (yb.nrows() as f64 * yb.ncols() as f64)
    }

    fn n_samples(&self) -> usize {
        self.x.nrows()
    }
}
