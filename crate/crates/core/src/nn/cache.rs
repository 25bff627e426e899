//! Exact incremental predictions for a two-layer network over a fixed input
//! set.
//!
//! An SGD step at `x` moves every first-layer row by a multiple of `xbar`:
//! `w_r <- w_r - u_r * xbar` with `u_r = eta * dz * a_r * act'(w_r . xbar)`.
//! The pre-activation of any tracked input `x_j` therefore changes by
//! `-(xbar . xbar_j) * u_r`, so keeping the matrix of pre-activations and the
//! Gram matrix of the inputs is enough to follow the network through an
//! epoch without touching the first-layer weights at all.

use super::network::{augment, dot, times_transpose, StepInfo};
use super::{sigmoid, Activation, LossKind, NetworkConfig, OutputHead, SecondLayerMode, Weights};
use crate::error::{Error, Result};

const LANES: usize = 8;

fn fold(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))
}

/// `sum a_r f(h_r)`.
#[inline]
fn weighted_sum(h: &[f64], a: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (hc, ac) = (h.chunks_exact(LANES), a.chunks_exact(LANES));
    let tail: f64 = hc
        .remainder()
        .iter()
        .zip(ac.remainder())
        .map(|(&v, &w)| w * f(v))
        .sum();
    for (hs, as_) in hc.zip(ac) {
        for k in 0..LANES {
            acc[k] += as_[k] * f(hs[k]);
        }
    }
    fold(acc) + tail
}

/// `sum (a_r - da_r) f(h_r - g u_r)`.
#[inline]
fn shifted_sum(h: &[f64], a: &[f64], da: &[f64], u: &[f64], g: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut tail = 0.0;
    let n = h.len() - h.len() % LANES;
    for r in n..h.len() {
        tail += (a[r] - da[r]) * f(h[r] - g * u[r]);
    }
    let chunks = h[..n]
        .chunks_exact(LANES)
        .zip(a[..n].chunks_exact(LANES))
        .zip(da[..n].chunks_exact(LANES).zip(u[..n].chunks_exact(LANES)));
    for ((hs, as_), (ds, us)) in chunks {
        for k in 0..LANES {
            acc[k] += (as_[k] - ds[k]) * f(hs[k] - g * us[k]);
        }
    }
    fold(acc) + tail
}

/// `h_r -= g u_r` in place; returns `sum a_r f(h_r)` over the new values.
#[inline]
fn update_row(h: &mut [f64], a: &[f64], u: &[f64], g: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut tail = 0.0;
    let n = h.len() - h.len() % LANES;
    let (body, rest) = h.split_at_mut(n);
    for (r, v) in rest.iter_mut().enumerate() {
        *v -= g * u[n + r];
        tail += a[n + r] * f(*v);
    }
    let chunks = body
        .chunks_exact_mut(LANES)
        .zip(a[..n].chunks_exact(LANES).zip(u[..n].chunks_exact(LANES)));
    for (hs, (as_, us)) in chunks {
        for k in 0..LANES {
            let v = hs[k] - g * us[k];
            hs[k] = v;
            acc[k] += as_[k] * f(v);
        }
    }
    fold(acc) + tail
}

pub struct PreactivationCache {
    n: usize,
    width: usize,
    activation: Activation,
    head: OutputHead,
    mode: SecondLayerMode,
    /// Row-major `n x width` pre-activations.
    pre: Vec<f64>,
    /// Row-major `n x n` inner products of augmented inputs.
    gram: Vec<f64>,
    output: Vec<f64>,
    logits: Vec<f64>,
    predictions: Vec<f64>,
}

/// A step computed against the current state but not yet applied.
#[derive(Debug, Clone)]
pub struct PlannedStep {
    pub index: usize,
    pub eta: f64,
    pub info: StepInfo,
    /// Per-unit first-layer coefficients `u_r`.
    unit: Vec<f64>,
    /// Per-unit output-layer change (zero when the output layer is fixed).
    output_delta: Vec<f64>,
}

impl PreactivationCache {
    pub fn new(config: &NetworkConfig, w: &Weights, xs: &[Vec<f64>]) -> Result<Self> {
        config.validate()?;
        w.check_layout(config)?;
        if config.hidden_dims.len() != 1 {
            return Err(Error::Unsupported(
                "pre-activation cache only tracks two-layer networks".into(),
            ));
        }
        for x in xs {
            config.check_input(x)?;
        }
        let n = xs.len();
        let width = config.last_width();
        let cols = config.augmented_dim();
        let xbar: Vec<Vec<f64>> = xs.iter().map(|x| augment(config, x)).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(&xbar[i], &xbar[j]);
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let flat: Vec<f64> = xbar.concat();
        let pre = times_transpose(&flat, n, cols, w.layer(0), width);
        let mut cache = PreactivationCache {
            n,
            width,
            activation: config.activation,
            head: config.output_head,
            mode: config.second_layer_mode,
            pre,
            gram,
            output: w.output_layer().to_vec(),
            logits: vec![0.0; n],
            predictions: vec![0.0; n],
        };
        for j in 0..n {
            let z = cache.logit_of_row(j);
            cache.logits[j] = z;
            cache.predictions[j] = cache.head.apply(z);
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Current predictions for every tracked input.
    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.pre[j * self.width..(j + 1) * self.width]
    }

    fn logit_of_row(&self, j: usize) -> f64 {
        let (row, a) = (self.row(j), &self.output[..]);
        match self.activation {
            Activation::Relu => weighted_sum(row, a, |z| z.max(0.0)),
            Activation::Sigmoid => weighted_sum(row, a, sigmoid),
            Activation::Identity => weighted_sum(row, a, |z| z),
        }
    }

    /// Logit of row `j` after `step`, without applying it.
    fn logit_after(&self, step: &PlannedStep, j: usize) -> f64 {
        let g = self.gram[step.index * self.n + j];
        let row = self.row(j);
        let (a, da, u) = (&self.output[..], &step.output_delta[..], &step.unit[..]);
        match self.activation {
            Activation::Relu => shifted_sum(row, a, da, u, g, |z| z.max(0.0)),
            Activation::Sigmoid => shifted_sum(row, a, da, u, g, sigmoid),
            Activation::Identity => shifted_sum(row, a, da, u, g, |z| z),
        }
    }

    /// Computes the SGD step on tracked input `index` with label `y`.
    pub fn plan(&self, index: usize, y: f64, loss: LossKind, eta: f64) -> Result<PlannedStep> {
        if index >= self.n {
            return Err(Error::InvalidArgument(format!(
                "row {index} out of range for {} tracked inputs",
                self.n
            )));
        }
        if self.head != loss.output_head() {
            return Err(Error::InvalidConfig(format!(
                "{} loss does not match the network output head",
                loss.name()
            )));
        }
        loss.check_label(y)?;
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {eta}"
            )));
        }
        let prediction = self.predictions[index];
        let dl_df = loss.dloss_df(prediction, y);
        let dz = match self.head {
            OutputHead::Raw => dl_df,
            OutputHead::Sigmoid => dl_df * prediction * (1.0 - prediction),
        };
        if !dz.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss derivative at prediction {prediction}"
            )));
        }
        let act = self.activation;
        let row = self.row(index);
        let unit = row
            .iter()
            .zip(&self.output)
            .map(|(&h, &a)| eta * dz * a * act.derivative(h))
            .collect();
        let output_delta = match self.mode {
            SecondLayerMode::Trainable => row.iter().map(|&h| eta * dz * act.apply(h)).collect(),
            SecondLayerMode::FixedSigns => vec![0.0; self.width],
        };
        Ok(PlannedStep {
            index,
            eta,
            info: StepInfo {
                prediction,
                dl_df,
                loss: loss.loss(prediction, y),
            },
            unit,
            output_delta,
        })
    }

    /// Prediction at tracked input `j` if `step` were applied.
    pub fn prediction_after(&self, step: &PlannedStep, j: usize) -> f64 {
        self.head.apply(self.logit_after(step, j))
    }

    /// Applies a planned step to every tracked row.
    pub fn apply(&mut self, step: &PlannedStep) {
        for (a, da) in self.output.iter_mut().zip(&step.output_delta) {
            *a -= da;
        }
        match self.activation {
            Activation::Relu => self.apply_with(step, |z| z.max(0.0)),
            Activation::Sigmoid => self.apply_with(step, sigmoid),
            Activation::Identity => self.apply_with(step, |z| z),
        }
    }

    fn apply_with(&mut self, step: &PlannedStep, f: impl Fn(f64) -> f64 + Copy) {
        let width = self.width;
        let gram = &self.gram[step.index * self.n..(step.index + 1) * self.n];
        for ((row, &g), (logit, pred)) in self
            .pre
            .chunks_exact_mut(width)
            .zip(gram)
            .zip(self.logits.iter_mut().zip(self.predictions.iter_mut()))
        {
            let z = update_row(row, &self.output, &step.unit, g, f);
            *logit = z;
            *pred = self.head.apply(z);
        }
    }

    /// Plans and applies one step.
    pub fn step(&mut self, index: usize, y: f64, loss: LossKind, eta: f64) -> Result<StepInfo> {
        let step = self.plan(index, y, loss, eta)?;
        self.apply(&step);
        Ok(step.info)
    }
}

/// `(sum a_r f(h_r), sum a'_r f(h_r - g u_r))`.
#[inline]
fn paired_sums(
    h: &[f64],
    a: &[f64],
    a_next: &[f64],
    unit: &[f64],
    g: f64,
    f: impl Fn(f64) -> f64,
) -> (f64, f64) {
    let mut before = [0.0f64; 4];
    let mut after = [0.0f64; 4];
    let chunks = h
        .chunks_exact(4)
        .zip(a.chunks_exact(4))
        .zip(a_next.chunks_exact(4).zip(unit.chunks_exact(4)));
    for ((hc, ac), (nc, uc)) in chunks {
        for k in 0..4 {
            before[k] += ac[k] * f(hc[k]);
            after[k] += nc[k] * f(hc[k] - g * uc[k]);
        }
    }
    let tail = h.len() - h.len() % 4;
    let (mut b, mut c) = (
        (before[0] + before[2]) + (before[1] + before[3]),
        (after[0] + after[2]) + (after[1] + after[3]),
    );
    for r in tail..h.len() {
        b += a[r] * f(h[r]);
        c += a_next[r] * f(h[r] - g * unit[r]);
    }
    (b, c)
}

/// Predictions over `xs` before and after one SGD step on `xs[index]` with
/// label `y`, for a two-layer network. Same arithmetic as the cache but
/// streams over the first-layer rows instead of storing pre-activations, and
/// leaves `w` untouched.
pub fn step_predictions(
    config: &NetworkConfig,
    w: &Weights,
    xs: &[Vec<f64>],
    index: usize,
    y: f64,
    loss: LossKind,
    eta: f64,
) -> Result<(Vec<f64>, Vec<f64>, StepInfo)> {
    config.validate()?;
    w.check_layout(config)?;
    if config.hidden_dims.len() != 1 {
        return Err(Error::Unsupported(
            "step predictions only handle two-layer networks".into(),
        ));
    }
    config.check_loss(loss)?;
    loss.check_label(y)?;
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {eta}"
        )));
    }
    if index >= xs.len() {
        return Err(Error::InvalidArgument(format!(
            "row {index} out of range for {} inputs",
            xs.len()
        )));
    }
    for x in xs {
        config.check_input(x)?;
    }
    let act = config.activation;
    let cols = config.augmented_dim();
    let w1 = w.layer(0);
    let a = w.output_layer();
    let xbar: Vec<Vec<f64>> = xs.iter().map(|x| augment(config, x)).collect();
    let h0: Vec<f64> = w1.chunks_exact(cols).map(|row| dot(row, &xbar[index])).collect();
    let z0: f64 = h0.iter().zip(a).map(|(&h, &ar)| ar * act.apply(h)).sum();
    let prediction = config.output_head.apply(z0);
    let dl_df = loss.dloss_df(prediction, y);
    let dz = match config.output_head {
        OutputHead::Raw => dl_df,
        OutputHead::Sigmoid => dl_df * prediction * (1.0 - prediction),
    };
    if !dz.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss derivative at prediction {prediction}"
        )));
    }
    let unit: Vec<f64> = h0
        .iter()
        .zip(a)
        .map(|(&h, &ar)| eta * dz * ar * act.derivative(h))
        .collect();
    let a_next: Vec<f64> = match config.second_layer_mode {
        SecondLayerMode::Trainable => h0
            .iter()
            .zip(a)
            .map(|(&h, &ar)| ar - eta * dz * act.apply(h))
            .collect(),
        SecondLayerMode::FixedSigns => a.to_vec(),
    };
    // Column-major copy so each probe's pre-activations are a few axpys.
    let width = h0.len();
    let mut columns = vec![0.0; cols * width];
    for (r, row) in w1.chunks_exact(cols).enumerate() {
        for (k, &v) in row.iter().enumerate() {
            columns[k * width + r] = v;
        }
    }
    let mut h = vec![0.0; width];
    let mut pre = Vec::with_capacity(xs.len());
    let mut post = Vec::with_capacity(xs.len());
    for xb in &xbar {
        h.fill(0.0);
        for (col, &v) in columns.chunks_exact(width).zip(xb) {
            for (hr, &c) in h.iter_mut().zip(col) {
                *hr += v * c;
            }
        }
        let g = dot(&xbar[index], xb);
        let (before, after) = match act {
            Activation::Relu => paired_sums(&h, a, &a_next, &unit, g, |z| z.max(0.0)),
            Activation::Sigmoid => paired_sums(&h, a, &a_next, &unit, g, super::sigmoid),
            Activation::Identity => paired_sums(&h, a, &a_next, &unit, g, |z| z),
        };
        pre.push(config.output_head.apply(before));
        post.push(config.output_head.apply(after));
    }
    let info = StepInfo {
        prediction,
        dl_df,
        loss: loss.loss(prediction, y),
    };
    Ok((pre, post, info))
}
