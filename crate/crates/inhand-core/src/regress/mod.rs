//! Regression engines: local Gaussian process, fully-connected network and
//! LSTM, behind one spec/fit/predict surface with a shared Adam trainer,
//! finite-difference gradient checking and a versioned model container.

mod gp;
mod gradcheck;
mod kdtree;
mod lstm;
mod mlp;
mod trainer;

pub use gp::{dense_gp_oracle, GpModel, GpParams};
pub use gradcheck::grad_check;
pub use lstm::Lstm;
pub use mlp::{Mlp, OutputActivation};
pub use trainer::{EarlyStopper, EpochStats, StopDecision, TrainParams};

use crate::data::Normalizer;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    LocalGp,
    FcNn,
    Lstm,
}

impl std::fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegressorKind::LocalGp => write!(f, "gp"),
            RegressorKind::FcNn => write!(f, "fc_nn"),
            RegressorKind::Lstm => write!(f, "lstm"),
        }
    }
}

/// FC-NN architecture: `hidden_layers` ReLU layers of `width` neurons and a
/// linear (or softplus) output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcParams {
    pub hidden_layers: usize,
    pub width: usize,
    pub dropout: f64,
    pub l2: f64,
    pub output: OutputActivation,
}

impl Default for FcParams {
    fn default() -> Self {
        FcParams { hidden_layers: 3, width: 300, dropout: 0.30, l2: 1e-5, output: OutputActivation::Linear }
    }
}

/// LSTM architecture: stacked cells, FC ReLU head, window of past states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: usize,
    pub hidden: usize,
    pub window: usize,
    pub head_width: usize,
    pub l2: f64,
}

impl Default for LstmParams {
    fn default() -> Self {
        LstmParams { layers: 2, hidden: 256, window: 5, head_width: 256, l2: 1e-5 }
    }
}

/// Full regressor specification; only the section matching `kind` applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub kind: RegressorKind,
    pub gp: GpParams,
    pub fc: FcParams,
    pub lstm: LstmParams,
    pub train: TrainParams,
}

impl RegressorSpec {
    pub fn gp() -> Self {
        RegressorSpec { kind: RegressorKind::LocalGp, ..Self::default() }
    }

    pub fn fc() -> Self {
        RegressorSpec { kind: RegressorKind::FcNn, ..Self::default() }
    }

    pub fn lstm() -> Self {
        RegressorSpec { kind: RegressorKind::Lstm, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    /// Window length this spec consumes (1 for single-state models).
    pub fn window(&self) -> usize {
        match self.kind {
            RegressorKind::Lstm => self.lstm.window,
            _ => 1,
        }
    }
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec {
            kind: RegressorKind::FcNn,
            gp: GpParams::default(),
            fc: FcParams::default(),
            lstm: LstmParams::default(),
            train: TrainParams::default(),
        }
    }
}

/// Training inputs: flat vectors for GP/FC-NN, windows for LSTM.
#[derive(Clone, Debug)]
pub enum TrainData {
    Flat(Array2<f64>),
    /// (n, window, features)
    Seq(Array3<f64>),
}

impl TrainData {
    pub fn n_samples(&self) -> usize {
        match self {
            TrainData::Flat(x) => x.nrows(),
            TrainData::Seq(x) => x.dim().0,
        }
    }
}

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("empty training data")]
    EmptyData,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize, what: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model/spec mismatch: {0}")]
    SpecMismatch(String),
}

/// A trained FC-NN with its normalization and training history.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FcModel {
    pub net: Mlp,
    pub x_norm: Normalizer,
    pub y_norm: Normalizer,
    pub history: Vec<EpochStats>,
}

/// A trained LSTM with its normalization and training history. Inputs are
/// normalized per feature dimension (shared across window steps).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmModel {
    pub net: Lstm,
    pub window: usize,
    pub x_norm: Normalizer,
    pub y_norm: Normalizer,
    pub history: Vec<EpochStats>,
}

/// One trained regressor of any kind.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedRegressor {
    Gp(GpModel),
    Fc(FcModel),
    Lstm(LstmModel),
}

impl TrainedRegressor {
    pub fn kind(&self) -> RegressorKind {
        match self {
            TrainedRegressor::Gp(_) => RegressorKind::LocalGp,
            TrainedRegressor::Fc(_) => RegressorKind::FcNn,
            TrainedRegressor::Lstm(_) => RegressorKind::Lstm,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            TrainedRegressor::Lstm(m) => m.window,
            _ => 1,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            TrainedRegressor::Gp(m) => m.in_dim(),
            TrainedRegressor::Fc(m) => m.net.in_dim(),
            TrainedRegressor::Lstm(m) => m.net.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            TrainedRegressor::Gp(m) => m.out_dim(),
            TrainedRegressor::Fc(m) => m.net.out_dim(),
            TrainedRegressor::Lstm(m) => m.net.out_dim(),
        }
    }

    pub fn history(&self) -> &[EpochStats] {
        match self {
            TrainedRegressor::Gp(_) => &[],
            TrainedRegressor::Fc(m) => &m.history,
            TrainedRegressor::Lstm(m) => &m.history,
        }
    }

    /// A fixed affine model (no training); rigged predictors for tests and
    /// pass-through decoders.
    pub fn linear_map(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        let (d_in, d_out) = weight.dim();
        debug_assert_eq!(d_out, bias.len());
        TrainedRegressor::Fc(FcModel {
            net: Mlp::linear(weight, bias),
            x_norm: Normalizer::identity(d_in),
            y_norm: Normalizer::identity(d_out),
            history: Vec::new(),
        })
    }

    /// A model that outputs `out` regardless of its input.
    pub fn constant(in_dim: usize, out: Vec<f64>) -> Self {
        let weight = Array2::zeros((in_dim, out.len()));
        let bias = Array1::from_vec(out);
        Self::linear_map(weight, bias)
    }

    /// Predicts from a window of raw feature vectors; the window length must
    /// equal [`Self::window`] (1 for GP/FC-NN).
    pub fn predict_window(&self, window: &[Vec<f64>]) -> Result<Vec<f64>, RegressError> {
        if window.len() != self.window() {
            return Err(RegressError::DimensionMismatch {
                expected: self.window(),
                got: window.len(),
                what: "window length".into(),
            });
        }
        match self {
            TrainedRegressor::Gp(m) => m.predict(&window[0]),
            TrainedRegressor::Fc(m) => {
                check_dim(m.net.in_dim(), window[0].len(), "input dimension")?;
                let z = m.x_norm.apply(&window[0]);
                let x = Array2::from_shape_vec((1, z.len()), z).expect("row shape");
                let y = m.net.forward(&x);
                Ok(m.y_norm.invert(y.row(0).to_slice().expect("contiguous")))
            }
            TrainedRegressor::Lstm(m) => {
                let d = m.net.in_dim();
                let mut x = Array3::zeros((1, m.window, d));
                for (t, row) in window.iter().enumerate() {
                    check_dim(d, row.len(), "input dimension")?;
                    let z = m.x_norm.apply(row);
                    for (j, v) in z.into_iter().enumerate() {
                        x[[0, t, j]] = v;
                    }
                }
                let y = m.net.forward(&x);
                Ok(m.y_norm.invert(y.row(0).to_slice().expect("contiguous")))
            }
        }
    }

    /// Batch prediction over prepared inputs (raw units).
    pub fn predict_batch(&self, data: &TrainData) -> Result<Array2<f64>, RegressError> {
        match (self, data) {
            (TrainedRegressor::Gp(m), TrainData::Flat(x)) => {
                check_dim(m.in_dim(), x.ncols(), "input dimension")?;
                // Queries are independent; parallel map with order-preserving
                // collect keeps results bit-deterministic.
                use rayon::prelude::*;
                let rows: Vec<Vec<f64>> = (0..x.nrows())
                    .into_par_iter()
                    .map(|i| m.predict(x.row(i).to_slice().expect("contiguous")))
                    .collect::<Result<_, _>>()?;
                let mut out = Array2::zeros((x.nrows(), m.out_dim()));
                for (i, y) in rows.into_iter().enumerate() {
                    for (j, v) in y.into_iter().enumerate() {
                        out[[i, j]] = v;
                    }
                }
                Ok(out)
            }
            (TrainedRegressor::Fc(m), TrainData::Flat(x)) => {
                check_dim(m.net.in_dim(), x.ncols(), "input dimension")?;
                let z = normalize_rows(x, &m.x_norm);
                let y = m.net.forward(&z);
                Ok(denormalize_rows(&y, &m.y_norm))
            }
            (TrainedRegressor::Lstm(m), TrainData::Seq(x)) => {
                let (_, w, d) = x.dim();
                check_dim(m.window, w, "window length")?;
                check_dim(m.net.in_dim(), d, "input dimension")?;
                let z = normalize_windows(x, &m.x_norm);
                let y = m.net.forward(&z);
                Ok(denormalize_rows(&y, &m.y_norm))
            }
            _ => Err(RegressError::SpecMismatch(
                "input layout does not match model kind".into(),
            )),
        }
    }

    /// GP posterior variance at a query (normalized units); None for the
    /// parametric models.
    pub fn posterior_variance(&self, window: &[Vec<f64>]) -> Option<f64> {
        match self {
            TrainedRegressor::Gp(m) if window.len() == 1 => {
                m.predict_with_variance(&window[0]).ok().map(|(_, v)| v)
            }
            _ => None,
        }
    }
}

fn check_dim(expected: usize, got: usize, what: &str) -> Result<(), RegressError> {
    if expected != got {
        return Err(RegressError::DimensionMismatch { expected, got, what: what.into() });
    }
    Ok(())
}

fn normalize_rows(x: &Array2<f64>, norm: &Normalizer) -> Array2<f64> {
    let mut z = x.clone();
    for mut row in z.rows_mut() {
        norm.apply_in_place(row.as_slice_mut().expect("contiguous"));
    }
    z
}

fn denormalize_rows(y: &Array2<f64>, norm: &Normalizer) -> Array2<f64> {
    let mut out = y.clone();
    for mut row in out.rows_mut() {
        let raw = norm.invert(row.as_slice().expect("contiguous"));
        for (v, r) in row.iter_mut().zip(raw) {
            *v = r;
        }
    }
    out
}

fn normalize_windows(x: &Array3<f64>, norm: &Normalizer) -> Array3<f64> {
    let mut z = x.clone();
    for mut sample in z.axis_iter_mut(Axis(0)) {
        for mut row in sample.rows_mut() {
            norm.apply_in_place(row.as_slice_mut().expect("contiguous"));
        }
    }
    z
}

/// Fits a regressor of the spec's kind. FC-NN/LSTM run mini-batch Adam on
/// MSE + L2 with dropout (FC only) and early stopping that restores the best
/// validation parameters; the local GP stores its normalized training set and
/// builds the neighbor index.
pub fn fit(
    spec: &RegressorSpec,
    data: &TrainData,
    targets: &Array2<f64>,
) -> Result<TrainedRegressor, RegressError> {
    let n = data.n_samples();
    if n == 0 || targets.nrows() == 0 {
        return Err(RegressError::EmptyData);
    }
    check_dim(n, targets.nrows(), "target row count")?;
    match (spec.kind, data) {
        (RegressorKind::LocalGp, TrainData::Flat(x)) => {
            Ok(TrainedRegressor::Gp(GpModel::fit(spec.gp, x, targets)?))
        }
        (RegressorKind::FcNn, TrainData::Flat(x)) => {
            let rows: Vec<&[f64]> = x.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
            let x_norm = Normalizer::fit(rows.iter().copied());
            let trows: Vec<&[f64]> =
                targets.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
            let y_norm = Normalizer::fit(trows.iter().copied());
            let zx = normalize_rows(x, &x_norm);
            let zy = normalize_rows(targets, &y_norm);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
            let net = Mlp::new(
                x.ncols(),
                spec.fc.hidden_layers,
                spec.fc.width,
                targets.ncols(),
                spec.fc.output,
                &mut rng,
            );
            let mut session = mlp::MlpSession {
                net,
                x: &zx,
                y: &zy,
                l2: spec.fc.l2,
                dropout: spec.fc.dropout,
            };
            let history = trainer::train_loop(&mut session, &spec.train)?;
            Ok(TrainedRegressor::Fc(FcModel { net: session.net, x_norm, y_norm, history }))
        }
        (RegressorKind::Lstm, TrainData::Seq(x)) => {
            let (_, w, d) = x.dim();
            check_dim(spec.lstm.window, w, "window length")?;
            // Normalize per feature dimension across all window steps.
            let flat = x.to_shape((n * w, d)).expect("reshape");
            let rows: Vec<&[f64]> =
                flat.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
            let x_norm = Normalizer::fit(rows.iter().copied());
            let trows: Vec<&[f64]> =
                targets.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
            let y_norm = Normalizer::fit(trows.iter().copied());
            let zx = normalize_windows(x, &x_norm);
            let zy = normalize_rows(targets, &y_norm);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
            let net = Lstm::new(
                d,
                spec.lstm.layers,
                spec.lstm.hidden,
                spec.lstm.head_width,
                targets.ncols(),
                &mut rng,
            );
            let mut session = lstm::LstmSession { net, x: &zx, y: &zy, l2: spec.lstm.l2 };
            let history = trainer::train_loop(&mut session, &spec.train)?;
            Ok(TrainedRegressor::Lstm(LstmModel {
                net: session.net,
                window: w,
                x_norm,
                y_norm,
                history,
            }))
        }
        (kind, _) => Err(RegressError::SpecMismatch(format!(
            "{kind} does not accept this input layout"
        ))),
    }
}

const CONTAINER_FORMAT: &str = "inhand-regressor";
const CONTAINER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelContainer {
    format: String,
    version: u32,
    model: TrainedRegressor,
}

/// Writes a self-describing model container (JSON; f64 values round-trip
/// exactly).
pub fn save(model: &TrainedRegressor, path: &Path) -> Result<(), RegressError> {
    let container = ModelContainer {
        format: CONTAINER_FORMAT.to_string(),
        version: CONTAINER_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string(&container)
        .map_err(|e| RegressError::CorruptModel(e.to_string()))?;
    std::fs::write(path, text)
        .map_err(|e| RegressError::CorruptModel(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<TrainedRegressor, RegressError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RegressError::CorruptModel(format!("{}: {e}", path.display())))?;
    let container: ModelContainer =
        serde_json::from_str(&text).map_err(|e| RegressError::CorruptModel(e.to_string()))?;
    if container.format != CONTAINER_FORMAT {
        return Err(RegressError::SpecMismatch(format!(
            "unexpected container format {:?}",
            container.format
        )));
    }
    if container.version != CONTAINER_VERSION {
        return Err(RegressError::SpecMismatch(format!(
            "container version {} is not {CONTAINER_VERSION}",
            container.version
        )));
    }
    let mut model = container.model;
    if let TrainedRegressor::Gp(gp) = &mut model {
        gp.rebuild_index();
    }
    Ok(model)
}

#[cfg(test)]
mod tests;
