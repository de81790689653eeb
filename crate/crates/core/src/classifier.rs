//! Sparse-code features and a three-layer perceptron (tansig hidden layer,
//! linear output) trained full-batch by Polak-Ribiere conjugate gradient on
//! the mean squared error.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{AtomSubset, StructuredDictionary};
use crate::sparse::{batch_encode, OmpEncoder};

/// What the classifier sees of a segment.
#[derive(Clone, Copy, Debug)]
pub enum FeatureMap<'a> {
    /// Codes against a structured dictionary (MDCS, DAS-KSVD).
    Structured(&'a StructuredDictionary),
    /// Selected rows of codes against the full dictionary (MDAS).
    Subset(&'a AtomSubset),
}

impl FeatureMap<'_> {
    pub fn feature_len(&self) -> usize {
        match self {
            FeatureMap::Structured(s) => s.dictionary.len(),
            FeatureMap::Subset(s) => s.selected_rows.len(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            FeatureMap::Structured(s) => s.n_classes,
            FeatureMap::Subset(s) => s.n_classes,
        }
    }

    fn dim(&self) -> usize {
        match self {
            FeatureMap::Structured(s) => s.dictionary.dim(),
            FeatureMap::Subset(s) => s.dictionary.dim(),
        }
    }
}

/// Encodes the N x n signal matrix and returns an n x d feature matrix.
pub fn featurize(signals: ArrayView2<'_, f64>, map: FeatureMap<'_>, q: usize) -> Result<Array2<f64>> {
    if signals.nrows() != map.dim() {
        return Err(Error::Feature(format!(
            "segments have {} samples, dictionary atoms have {}",
            signals.nrows(),
            map.dim()
        )));
    }
    match map {
        FeatureMap::Structured(sd) => {
            let codes = batch_encode(signals, &sd.dictionary, q)?;
            Ok(codes.coefficients.reversed_axes().as_standard_layout().into_owned())
        }
        FeatureMap::Subset(sub) => {
            let encoder = OmpEncoder::new(&sub.dictionary);
            let mut out = Array2::zeros((signals.ncols(), sub.selected_rows.len()));
            let mut dense = vec![0.0; sub.dictionary.len()];
            for (i, x) in signals.columns().into_iter().enumerate() {
                let p = encoder.encode(x, q)?;
                for (&j, &v) in p.support.iter().zip(&p.values) {
                    dense[j] = v;
                }
                for (k, &row) in sub.selected_rows.iter().enumerate() {
                    out[[i, k]] = dense[row];
                }
                for &j in &p.support {
                    dense[j] = 0.0;
                }
            }
            Ok(out)
        }
    }
}

/// One-hot targets for class indices.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l]] = 1.0;
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 500,
            max_epochs: 500,
            patience: 25,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.max_epochs == 0 {
            return Err(Error::config("hidden size and max_epochs must be positive"));
        }
        Ok(())
    }
}

/// Layer sizes of the perceptron.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpDims {
    pub fn n_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }
}

/// Trained network with its input standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub dims: MlpDims,
    /// Flattened `[W_hidden (row-major), b_hidden, W_out (row-major), b_out]`.
    pub params: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

struct Layers<'a> {
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView2<'a, f64>,
    b2: ArrayView1<'a, f64>,
}

fn unpack(dims: MlpDims, theta: &[f64]) -> Layers<'_> {
    let MlpDims { input, hidden, output } = dims;
    let (w1, rest) = theta.split_at(hidden * input);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(output * hidden);
    Layers {
        w1: ArrayView2::from_shape((hidden, input), w1).expect("sized"),
        b1: ArrayView1::from(b1),
        w2: ArrayView2::from_shape((output, hidden), w2).expect("sized"),
        b2: ArrayView1::from(b2),
    }
}

fn hidden_layer(layers: &Layers<'_>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut h = x.dot(&layers.w1.t());
    h += &layers.b1;
    h.mapv_inplace(f64::tanh);
    h
}

fn forward(dims: MlpDims, theta: &[f64], x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let layers = unpack(dims, theta);
    let h = hidden_layer(&layers, x);
    let mut y = h.dot(&layers.w2.t());
    y += &layers.b2;
    (h, y)
}

/// Mean squared error over all outputs of all samples.
pub fn mse(dims: MlpDims, theta: &[f64], x: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> f64 {
    let (_, y) = forward(dims, theta, x);
    let count = (targets.len()).max(1) as f64;
    (&y - &targets).mapv(|v| v * v).sum() / count
}

/// MSE and its analytic gradient with respect to the flattened parameters.
pub fn mse_gradient(
    dims: MlpDims,
    theta: &[f64],
    x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> (f64, Vec<f64>) {
    let (h, y) = forward(dims, theta, x);
    let layers = unpack(dims, theta);
    let count = (targets.len()).max(1) as f64;
    let diff = &y - &targets;
    let loss = diff.mapv(|v| v * v).sum() / count;
    let dy = diff * (2.0 / count);
    let g_w2 = dy.t().dot(&h);
    let g_b2 = dy.sum_axis(Axis(0));
    let mut dh = dy.dot(&layers.w2);
    dh.zip_mut_with(&h, |d, &hv| *d *= 1.0 - hv * hv);
    let g_w1 = dh.t().dot(&x);
    let g_b1 = dh.sum_axis(Axis(0));

    let mut grad = Vec::with_capacity(dims.n_params());
    grad.extend(g_w1.iter());
    grad.extend(g_b1.iter());
    grad.extend(g_w2.iter());
    grad.extend(g_b2.iter());
    (loss, grad)
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(dims: MlpDims, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; dims.n_params()];
    let l1 = (6.0 / (dims.input + dims.hidden) as f64).sqrt();
    let l2 = (6.0 / (dims.hidden + dims.output) as f64).sqrt();
    let n1 = dims.hidden * dims.input;
    let off2 = n1 + dims.hidden;
    let n2 = dims.output * dims.hidden;
    for v in &mut theta[..n1] {
        *v = rng.random_range(-l1..l1);
    }
    for v in &mut theta[off2..off2 + n2] {
        *v = rng.random_range(-l2..l2);
    }
    theta
}

impl Mlp {
    fn standardize(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dims.input {
            return Err(Error::Feature(format!(
                "model expects {} features, got {}",
                self.dims.input,
                features.ncols()
            )));
        }
        let mean = ArrayView1::from(self.input_mean.as_slice());
        let scale = ArrayView1::from(self.input_scale.as_slice());
        Ok((&features - &mean) / &scale)
    }

    /// Raw output scores, one row per sample.
    pub fn scores(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let x = self.standardize(features)?;
        Ok(forward(self.dims, &self.params, x.view()).1)
    }

    /// Hidden-layer activations, one row per sample.
    pub fn hidden_activations(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let x = self.standardize(features)?;
        Ok(hidden_layer(&unpack(self.dims, &self.params), x.view()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Entry 0 is the initial network.
    pub train_mse: Vec<f64>,
    pub validation_mse: Vec<f64>,
    pub best_epoch: usize,
    pub seed: u64,
}

fn column_standardization(x: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows().max(1) as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let var = x
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(c, &m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n);
    let scale = var
        .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
        .collect();
    (mean.to_vec(), scale)
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MAX_EXPANSIONS: usize = 20;

fn axpy(theta: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    theta.iter().zip(d).map(|(t, v)| t + alpha * v).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backtracking line search that also expands while the loss keeps
/// decreasing. Returns the accepted step and loss.
fn line_search<F: Fn(&[f64]) -> f64>(
    loss: &F,
    theta: &[f64],
    f0: f64,
    d: &[f64],
    slope: f64,
    guess: f64,
) -> Option<(f64, f64)> {
    let mut alpha = guess;
    let mut f = loss(&axpy(theta, alpha, d));
    let mut shrinks = 0;
    while !(f.is_finite() && f <= f0 + ARMIJO_C1 * alpha * slope) {
        alpha *= 0.5;
        shrinks += 1;
        if shrinks > MAX_BACKTRACKS {
            return None;
        }
        f = loss(&axpy(theta, alpha, d));
    }
    if shrinks == 0 {
        for _ in 0..MAX_EXPANSIONS {
            let bigger = alpha * 2.0;
            let fb = loss(&axpy(theta, bigger, d));
            if fb.is_finite() && fb < f {
                alpha = bigger;
                f = fb;
            } else {
                break;
            }
        }
    }
    Some((alpha, f))
}

/// Trains the perceptron; returns the parameters of the epoch with the
/// lowest validation MSE.
pub fn train(
    features: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    val_features: ArrayView2<'_, f64>,
    val_targets: ArrayView2<'_, f64>,
    cfg: &MlpConfig,
) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    let n = features.nrows();
    if n == 0 || targets.nrows() != n {
        return Err(Error::Shape {
            what: "training targets",
            expected: n,
            found: targets.nrows(),
        });
    }
    if val_features.ncols() != features.ncols() || val_targets.ncols() != targets.ncols() {
        return Err(Error::Feature("validation set dimensions differ from training set".into()));
    }
    if features.iter().chain(val_features.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Feature("non-finite feature".into()));
    }
    let dims = MlpDims {
        input: features.ncols(),
        hidden: cfg.hidden,
        output: targets.ncols(),
    };
    let (input_mean, input_scale) = column_standardization(features);
    let mut model = Mlp {
        dims,
        params: init_params(dims, cfg.seed),
        input_mean,
        input_scale,
    };
    let x = model.standardize(features)?;
    let xv = model.standardize(val_features)?;
    let train_loss = |th: &[f64]| mse(dims, th, x.view(), targets);
    let val_loss = |th: &[f64]| mse(dims, th, xv.view(), val_targets);

    let mut theta = model.params.clone();
    let (mut f, mut g) = mse_gradient(dims, &theta, x.view(), targets);
    if !f.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut report = TrainReport {
        epochs_run: 0,
        train_mse: vec![f],
        validation_mse: vec![val_loss(&theta)],
        best_epoch: 0,
        seed: cfg.seed,
    };
    let mut best_val = report.validation_mse[0];
    let mut best_theta = theta.clone();
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let gnorm = dot(&g, &g).sqrt();
    let mut step = if gnorm > 0.0 { 1.0 / gnorm } else { 1.0 };
    let mut since_restart = 0;
    let restart_every = dims.n_params();

    for epoch in 1..=cfg.max_epochs {
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            since_restart = 0;
        }
        if slope == 0.0 {
            break;
        }
        let mut accepted = line_search(&train_loss, &theta, f, &d, slope, step);
        if accepted.is_none() && since_restart > 0 {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            since_restart = 0;
            accepted = line_search(&train_loss, &theta, f, &d, slope, step);
        }
        let Some((alpha, _)) = accepted else {
            log::debug!("line search failed at epoch {epoch}; stopping");
            break;
        };
        theta = axpy(&theta, alpha, &d);
        let (f_new, g_new) = mse_gradient(dims, &theta, x.view(), targets);
        if !f_new.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        let gg = dot(&g, &g);
        let mut beta = if gg > 0.0 {
            (dot(&g_new, &g_new) - dot(&g_new, &g)) / gg
        } else {
            0.0
        };
        since_restart += 1;
        if beta < 0.0 || since_restart >= restart_every {
            beta = 0.0;
            since_restart = 0;
        }
        for (dv, gv) in d.iter_mut().zip(&g_new) {
            *dv = -gv + beta * *dv;
        }
        let new_slope = dot(&g_new, &d);
        step = if new_slope < 0.0 {
            (alpha * slope / new_slope).clamp(1e-12, 1e6)
        } else {
            alpha
        };
        f = f_new;
        g = g_new;

        let v = val_loss(&theta);
        if !v.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        report.train_mse.push(f);
        report.validation_mse.push(v);
        report.epochs_run = epoch;
        if v < best_val {
            best_val = v;
            best_theta.clone_from(&theta);
            report.best_epoch = epoch;
        } else if epoch - report.best_epoch >= cfg.patience {
            break;
        }
    }
    model.params = best_theta;
    Ok((model, report))
}

/// Argmax labels (smallest index on ties) and raw scores.
pub fn predict(model: &Mlp, features: ArrayView2<'_, f64>) -> Result<(Vec<usize>, Array2<f64>)> {
    let scores = model.scores(features)?;
    Ok((argmax_rows(scores.view()), scores))
}

pub fn argmax_rows(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Split of the flattened parameter vector, for serialization.
pub fn param_blocks(model: &Mlp) -> [(&'static str, &[f64]); 4] {
    let MlpDims { input, hidden, output } = model.dims;
    let p = &model.params;
    let a = hidden * input;
    let b = a + hidden;
    let c = b + output * hidden;
    [
        ("w_hidden", &p[..a]),
        ("b_hidden", &p[a..b]),
        ("w_out", &p[b..c]),
        ("b_out", &p[c..]),
    ]
}

/// Rebuilds the flat vector from blocks written by [`param_blocks`].
pub fn params_from_blocks(dims: MlpDims, blocks: [&[f64]; 4]) -> Result<Vec<f64>> {
    let expected = [
        dims.hidden * dims.input,
        dims.hidden,
        dims.output * dims.hidden,
        dims.output,
    ];
    let mut out = Vec::with_capacity(dims.n_params());
    for (b, e) in blocks.iter().zip(expected) {
        if b.len() != e {
            return Err(Error::Shape {
                what: "model parameter block",
                expected: e,
                found: b.len(),
            });
        }
        out.extend_from_slice(b);
    }
    Ok(out)
}
