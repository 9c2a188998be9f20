//! Stacked LSTM with an FC ReLU head, implemented from scratch: standard
//! input/forget/output gates (forget bias init 1), batched forward and full
//! backpropagation through time across all layers and the head.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmLayer {
    /// Input weights (in, 4H); gate slabs ordered [i | f | g | o].
    pub w: Array2<f64>,
    /// Recurrent weights (H, 4H).
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmLayer {
    fn hidden(&self) -> usize {
        self.u.nrows()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub w_head: Array2<f64>,
    pub b_head: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

struct StepCache {
    input: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

impl Lstm {
    pub fn new(
        in_dim: usize,
        n_layers: usize,
        hidden: usize,
        head_width: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut d = in_dim;
        for _ in 0..n_layers {
            let wb = 1.0 / (d as f64).sqrt();
            let ub = 1.0 / (hidden as f64).sqrt();
            let w = Array2::from_shape_fn((d, 4 * hidden), |_| rng.gen_range(-wb..=wb));
            let u = Array2::from_shape_fn((hidden, 4 * hidden), |_| rng.gen_range(-ub..=ub));
            let mut b = Array1::zeros(4 * hidden);
            // Forget-gate bias starts open.
            b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
            layers.push(LstmLayer { w, u, b });
            d = hidden;
        }
        let hb = 1.0 / (hidden as f64).sqrt();
        let ob = 1.0 / (head_width as f64).sqrt();
        Lstm {
            layers,
            w_head: Array2::from_shape_fn((hidden, head_width), |_| rng.gen_range(-hb..=hb)),
            b_head: Array1::zeros(head_width),
            w_out: Array2::from_shape_fn((head_width, out_dim), |_| rng.gen_range(-ob..=ob)),
            b_out: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_out.ncols()
    }

    /// Runs all layers over the window, returning per-(layer, t) caches and
    /// the top-layer hidden state at the final step.
    fn run(&self, x: &Array3<f64>) -> (Vec<Vec<StepCache>>, Array2<f64>) {
        let (batch, window, _) = x.dim();
        let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(self.layers.len());
        let mut inputs: Vec<Array2<f64>> =
            (0..window).map(|t| x.slice(s![.., t, ..]).to_owned()).collect();
        for layer in &self.layers {
            let hdim = layer.hidden();
            let mut h = Array2::zeros((batch, hdim));
            let mut c: Array2<f64> = Array2::zeros((batch, hdim));
            let mut layer_caches = Vec::with_capacity(window);
            let mut next_inputs = Vec::with_capacity(window);
            for input in inputs.iter().take(window) {
                let gates = input.dot(&layer.w) + h.dot(&layer.u) + &layer.b;
                let i = gates.slice(s![.., 0..hdim]).mapv(sigmoid);
                let f = gates.slice(s![.., hdim..2 * hdim]).mapv(sigmoid);
                let g = gates.slice(s![.., 2 * hdim..3 * hdim]).mapv(f64::tanh);
                let o = gates.slice(s![.., 3 * hdim..4 * hdim]).mapv(sigmoid);
                let c_new = &f * &c + &i * &g;
                let tanh_c = c_new.mapv(f64::tanh);
                let h_new = &o * &tanh_c;
                layer_caches.push(StepCache {
                    input: input.clone(),
                    h_prev: h,
                    c_prev: c,
                    i,
                    f,
                    g,
                    o,
                    tanh_c,
                });
                next_inputs.push(h_new.clone());
                h = h_new;
                c = c_new;
            }
            caches.push(layer_caches);
            inputs = next_inputs;
        }
        let h_top = inputs.last().expect("window >= 1").clone();
        (caches, h_top)
    }

    /// Inference forward pass over a batch of windows (batch, w, in_dim).
    pub fn forward(&self, x: &Array3<f64>) -> Array2<f64> {
        let (_, h_top) = self.run(x);
        let mut hd = h_top.dot(&self.w_head) + &self.b_head;
        hd.mapv_inplace(|v| v.max(0.0));
        hd.dot(&self.w_out) + &self.b_out
    }

    /// MSE + L2 (weight matrices only) with gradients for all parameters.
    pub fn loss_grad(&self, x: &Array3<f64>, y: &Array2<f64>, l2: f64) -> (f64, Lstm) {
        let (batch, window, _) = x.dim();
        let denom = (batch * y.ncols()) as f64;
        let (caches, h_top) = self.run(x);
        let zh = h_top.dot(&self.w_head) + &self.b_head;
        let hd = zh.mapv(|v| v.max(0.0));
        let pred = hd.dot(&self.w_out) + &self.b_out;

        let diff = &pred - y;
        let mut loss = diff.mapv(|d| d * d).sum() / denom;
        if l2 > 0.0 {
            let mut wsum: f64 = self.w_head.mapv(|v| v * v).sum() + self.w_out.mapv(|v| v * v).sum();
            for layer in &self.layers {
                wsum += layer.w.mapv(|v| v * v).sum() + layer.u.mapv(|v| v * v).sum();
            }
            loss += l2 * wsum;
        }

        // Gradient accumulator with the same shapes as the parameters.
        let mut grad = self.zeros_like();
        let dy = diff.mapv(|d| 2.0 * d / denom);
        grad.w_out = hd.t().dot(&dy);
        grad.b_out = dy.sum_axis(Axis(0));
        let mut dzh = dy.dot(&self.w_out.t());
        dzh.zip_mut_with(&zh, |gv, &z| {
            if z <= 0.0 {
                *gv = 0.0;
            }
        });
        grad.w_head = h_top.t().dot(&dzh);
        grad.b_head = dzh.sum_axis(Axis(0));

        // dh into the top layer at the last step; lower layers receive their
        // dh from the input-gradients of the layer above.
        let top = self.layers.len() - 1;
        let mut dh_from_above: Vec<Array2<f64>> = (0..window)
            .map(|t| {
                if t == window - 1 {
                    dzh.dot(&self.w_head.t())
                } else {
                    Array2::zeros((batch, self.layers[top].hidden()))
                }
            })
            .collect();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let hdim = layer.hidden();
            let in_dim = layer.w.nrows();
            let mut dinput_all: Vec<Array2<f64>> =
                (0..window).map(|_| Array2::zeros((batch, in_dim))).collect();
            let mut dh_next: Array2<f64> = Array2::zeros((batch, hdim));
            let mut dc_next: Array2<f64> = Array2::zeros((batch, hdim));
            for t in (0..window).rev() {
                let cache = &caches[l][t];
                let dh = &dh_from_above[t] + &dh_next;
                let one_minus_tc2 = cache.tanh_c.mapv(|v| 1.0 - v * v);
                let dc = &dh * &cache.o * &one_minus_tc2 + &dc_next;
                let di = &dc * &cache.g;
                let df = &dc * &cache.c_prev;
                let dg = &dc * &cache.i;
                let do_ = &dh * &cache.tanh_c;
                let dzi = di * &cache.i.mapv(|v| v * (1.0 - v));
                let dzf = df * &cache.f.mapv(|v| v * (1.0 - v));
                let dzg = dg * &cache.g.mapv(|v| 1.0 - v * v);
                let dzo = do_ * &cache.o.mapv(|v| v * (1.0 - v));
                let mut dgates = Array2::zeros((batch, 4 * hdim));
                dgates.slice_mut(s![.., 0..hdim]).assign(&dzi);
                dgates.slice_mut(s![.., hdim..2 * hdim]).assign(&dzf);
                dgates.slice_mut(s![.., 2 * hdim..3 * hdim]).assign(&dzg);
                dgates.slice_mut(s![.., 3 * hdim..4 * hdim]).assign(&dzo);

                grad.layers[l].w += &cache.input.t().dot(&dgates);
                grad.layers[l].u += &cache.h_prev.t().dot(&dgates);
                grad.layers[l].b += &dgates.sum_axis(Axis(0));
                dinput_all[t] = dgates.dot(&layer.w.t());
                dh_next = dgates.dot(&layer.u.t());
                dc_next = &dc * &cache.f;
            }
            if l > 0 {
                dh_from_above = dinput_all;
            }
        }

        if l2 > 0.0 {
            for (gl, layer) in grad.layers.iter_mut().zip(&self.layers) {
                gl.w += &layer.w.mapv(|v| 2.0 * l2 * v);
                gl.u += &layer.u.mapv(|v| 2.0 * l2 * v);
            }
            grad.w_head += &self.w_head.mapv(|v| 2.0 * l2 * v);
            grad.w_out += &self.w_out.mapv(|v| 2.0 * l2 * v);
        }
        (loss, grad)
    }

    fn zeros_like(&self) -> Lstm {
        Lstm {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w: Array2::zeros(l.w.raw_dim()),
                    u: Array2::zeros(l.u.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
            w_head: Array2::zeros(self.w_head.raw_dim()),
            b_head: Array1::zeros(self.b_head.raw_dim()),
            w_out: Array2::zeros(self.w_out.raw_dim()),
            b_out: Array1::zeros(self.b_out.raw_dim()),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.u.iter());
            out.extend(l.b.iter());
        }
        out.extend(self.w_head.iter());
        out.extend(self.b_head.iter());
        out.extend(self.w_out.iter());
        out.extend(self.b_out.iter());
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut at = 0;
        let fill2 = |a: &mut Array2<f64>, at: &mut usize| {
            for v in a.iter_mut() {
                *v = p[*at];
                *at += 1;
            }
        };
        for l in &mut self.layers {
            fill2(&mut l.w, &mut at);
            fill2(&mut l.u, &mut at);
            for v in l.b.iter_mut() {
                *v = p[at];
                at += 1;
            }
        }
        fill2(&mut self.w_head, &mut at);
        for v in self.b_head.iter_mut() {
            *v = p[at];
            at += 1;
        }
        fill2(&mut self.w_out, &mut at);
        for v in self.b_out.iter_mut() {
            *v = p[at];
            at += 1;
        }
        assert_eq!(at, p.len(), "parameter vector length mismatch");
    }
}

/// Training session binding an [`Lstm`] to its prepared (normalized) data.
pub(super) struct LstmSession<'a> {
    pub net: Lstm,
    pub x: &'a Array3<f64>,
    pub y: &'a Array2<f64>,
    pub l2: f64,
}

impl super::trainer::TrainableNet for LstmSession<'_> {
    fn flat_params(&self) -> Vec<f64> {
        self.net.flat_params()
    }

    fn set_flat_params(&mut self, p: &[f64]) {
        self.net.set_flat_params(p)
    }

    fn loss_grad(&mut self, ids: &[usize], _dropout: Option<&mut ChaCha8Rng>) -> (f64, Vec<f64>) {
        let xb = self.x.select(Axis(0), ids);
        let yb = self.y.select(Axis(0), ids);
        let (loss, grad) = self.net.loss_grad(&xb, &yb, self.l2);
        (loss, grad.flat_params())
    }

    fn data_loss(&self, ids: &[usize]) -> f64 {
        let xb = self.x.select(Axis(0), ids);
        let yb = self.y.select(Axis(0), ids);
        let pred = self.net.forward(&xb);
        let diff = &pred - &yb;
        diff.mapv(|d| d * d).sum() / (yb.nrows() as f64 * yb.ncols() as f64)
    }

    fn n_samples(&self) -> usize {
        self.x.dim().0
    }
}
