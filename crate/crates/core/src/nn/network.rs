use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Activation, LossKind, NetworkConfig, OutputHead, SecondLayerMode, Weights};
use crate::error::{Error, Result};

/// Result of one backpropagation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    /// `dL/dw`; zero on non-trainable entries.
    pub gradient: Vec<f64>,
    /// `dL/df` at the current prediction.
    pub dl_df: f64,
    pub prediction: f64,
}

/// What an in-place SGD step saw before moving the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub prediction: f64,
    pub dl_df: f64,
    pub loss: f64,
}

/// Samples a fresh parameter vector.
///
/// Hidden entries are `N(0, 2 / fan_in)`. A trainable output row is
/// `N(0, 1 / fan_in)`; a fixed-sign output row is uniform on {-1, +1}.
pub fn init_weights(config: &NetworkConfig, seed: u64) -> Result<Weights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = config.layer_shapes();
    let mut params = Vec::with_capacity(config.param_count());
    let last = shapes.len() - 1;
    for (i, shape) in shapes.iter().enumerate() {
        let fan_in = shape.cols as f64;
        if i < last {
            let std = (2.0 / fan_in).sqrt();
            params.extend((0..shape.len()).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            }));
        } else {
            match config.second_layer_mode {
                SecondLayerMode::Trainable => {
                    let std = (1.0 / fan_in).sqrt();
                    params.extend((0..shape.len()).map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    }));
                }
                SecondLayerMode::FixedSigns => {
                    params.extend((0..shape.len()).map(|_| {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    }));
                }
            }
        }
    }
    Weights::from_params(config, params)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn augment(config: &NetworkConfig, x: &[f64]) -> Vec<f64> {
    let mut xbar = Vec::with_capacity(config.augmented_dim());
    xbar.extend_from_slice(x);
    if config.augment_bias {
        xbar.push(1.0);
    }
    xbar
}

/// Forward pass with every intermediate kept for backpropagation.
struct Trace {
    xbar: Vec<f64>,
    /// Nonzero entries of `xbar` when it is mostly zeros (image inputs).
    sparse: Option<Sparse>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    prediction: f64,
}

impl Trace {
    fn layer_input(&self, layer: usize) -> &[f64] {
        if layer == 0 {
            &self.xbar
        } else {
            &self.post[layer - 1]
        }
    }
}

fn check(config: &NetworkConfig, w: &Weights, x: &[f64]) -> Result<()> {
    config.validate()?;
    w.check_layout(config)?;
    config.check_input(x)
}

struct Sparse {
    index: Vec<usize>,
    value: Vec<f64>,
}

impl Sparse {
    fn of(x: &[f64]) -> Option<Sparse> {
        let nonzero = x.iter().filter(|&&v| v != 0.0).count();
        if nonzero * 2 > x.len() {
            return None;
        }
        let (index, value) = x
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .unzip();
        Some(Sparse { index, value })
    }

    fn dot(&self, row: &[f64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let (ic, vc) = (self.index.chunks_exact(4), self.value.chunks_exact(4));
        let tail: f64 = ic
            .remainder()
            .iter()
            .zip(vc.remainder())
            .map(|(&i, &v)| row[i] * v)
            .sum();
        for (is, vs) in ic.zip(vc) {
            for k in 0..4 {
                acc[k] += row[is[k]] * vs[k];
            }
        }
        (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
    }

    fn axpy(&self, row: &mut [f64], alpha: f64) {
        for (&i, &v) in self.index.iter().zip(&self.value) {
            row[i] += alpha * v;
        }
    }
}

fn trace(config: &NetworkConfig, w: &Weights, x: &[f64]) -> Trace {
    let xbar = augment(config, x);
    let sparse = Sparse::of(&xbar);
    let hidden = config.hidden_dims.len();
    let mut pre = Vec::with_capacity(hidden);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(hidden);
    for (layer, shape) in w.layout()[..hidden].iter().enumerate() {
        let rows = w.layer(layer).chunks_exact(shape.cols);
        let h: Vec<f64> = match (&sparse, layer) {
            (Some(sp), 0) => rows.map(|row| sp.dot(row)).collect(),
            (_, 0) => rows.map(|row| dot(row, &xbar)).collect(),
            _ => rows.map(|row| dot(row, &post[layer - 1])).collect(),
        };
        let a: Vec<f64> = h.iter().map(|&z| config.activation.apply(z)).collect();
        pre.push(h);
        post.push(a);
    }
    let logit = dot(w.output_layer(), &post[hidden - 1]);
    Trace {
        xbar,
        sparse,
        pre,
        post,
        prediction: config.output_head.apply(logit),
    }
}

/// `f(x, w)`.
pub fn forward(config: &NetworkConfig, w: &Weights, x: &[f64]) -> Result<f64> {
    check(config, w, x)?;
    Ok(trace(config, w, x).prediction)
}

/// `a * b^T` for row-major `a` (`rows x cols`) and `b` (`out x cols`).
pub(crate) fn times_transpose(a: &[f64], rows: usize, cols: usize, b: &[f64], out: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), out * cols);
    let mut c = vec![0.0; rows * out];
    // SAFETY: the asserts above bound every access made by dgemm with these
    // dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            cols,
            out,
            1.0,
            a.as_ptr(),
            cols as isize,
            1,
            b.as_ptr(),
            1,
            cols as isize,
            0.0,
            c.as_mut_ptr(),
            out as isize,
            1,
        );
    }
    c
}

/// Predictions for many inputs at once, evaluated with blocked matrix
/// products.
pub fn forward_batch(config: &NetworkConfig, w: &Weights, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    config.validate()?;
    w.check_layout(config)?;
    for x in xs {
        config.check_input(x)?;
    }
    const BLOCK: usize = 64;
    let hidden = config.hidden_dims.len();
    let mut out = Vec::with_capacity(xs.len());
    for block in xs.chunks(BLOCK) {
        let rows = block.len();
        let mut input: Vec<f64> = Vec::with_capacity(rows * config.augmented_dim());
        for x in block {
            input.extend_from_slice(x);
            if config.augment_bias {
                input.push(1.0);
            }
        }
        let mut cols = config.augmented_dim();
        for (layer, shape) in w.layout()[..hidden].iter().enumerate() {
            let mut h = times_transpose(&input, rows, cols, w.layer(layer), shape.rows);
            for v in h.iter_mut() {
                *v = config.activation.apply(*v);
            }
            input = h;
            cols = shape.rows;
        }
        let a = w.output_layer();
        out.extend(
            input
                .chunks_exact(cols)
                .map(|row| config.output_head.apply(dot(row, a))),
        );
    }
    Ok(out)
}

/// Error signals at every hidden pre-activation for output sensitivity `dz`
/// (derivative of the quantity being differentiated with respect to the
/// logit).
fn hidden_deltas(config: &NetworkConfig, w: &Weights, tr: &Trace, dz: f64) -> Vec<Vec<f64>> {
    let hidden = config.hidden_dims.len();
    let act = config.activation;
    let mut deltas = vec![Vec::new(); hidden];
    deltas[hidden - 1] = w
        .output_layer()
        .iter()
        .zip(&tr.pre[hidden - 1])
        .map(|(&a, &h)| dz * a * act.derivative(h))
        .collect();
    for layer in (1..hidden).rev() {
        let shape = w.layout()[layer];
        let mut back = vec![0.0; shape.cols];
        for (row, &d) in w.layer(layer).chunks_exact(shape.cols).zip(&deltas[layer]) {
            if d != 0.0 {
                axpy(&mut back, d, row);
            }
        }
        for (b, &h) in back.iter_mut().zip(&tr.pre[layer - 1]) {
            *b *= act.derivative(h);
        }
        deltas[layer - 1] = back;
    }
    deltas
}

fn logit_sensitivity(head: OutputHead, prediction: f64) -> f64 {
    match head {
        OutputHead::Raw => 1.0,
        OutputHead::Sigmoid => prediction * (1.0 - prediction),
    }
}

/// Writes `d(quantity)/dw` into `grad`, given `dz = d(quantity)/d(logit)`.
fn write_gradient(config: &NetworkConfig, w: &Weights, tr: &Trace, dz: f64, grad: &mut [f64]) {
    let hidden = config.hidden_dims.len();
    let deltas = hidden_deltas(config, w, tr, dz);
    for layer in 0..hidden {
        let shape = w.layout()[layer];
        let input = tr.layer_input(layer);
        let block = &mut grad[shape.range()];
        for (row, &d) in block.chunks_exact_mut(shape.cols).zip(&deltas[layer]) {
            if d == 0.0 {
                row.fill(0.0);
            } else {
                for (g, &v) in row.iter_mut().zip(input) {
                    *g = d * v;
                }
            }
        }
    }
    let out = w.layout()[hidden];
    let block = &mut grad[out.range()];
    match config.second_layer_mode {
        SecondLayerMode::Trainable => {
            for (g, &v) in block.iter_mut().zip(&tr.post[hidden - 1]) {
                *g = dz * v;
            }
        }
        SecondLayerMode::FixedSigns => block.fill(0.0),
    }
}

/// `dL/dw`, `dL/df` and `f(x, w)` for one labeled example.
pub fn backward(
    config: &NetworkConfig,
    w: &Weights,
    x: &[f64],
    y: f64,
    loss: LossKind,
) -> Result<Backward> {
    check(config, w, x)?;
    config.check_loss(loss)?;
    loss.check_label(y)?;
    let tr = trace(config, w, x);
    let dl_df = loss.dloss_df(tr.prediction, y);
    let dz = dl_df * logit_sensitivity(config.output_head, tr.prediction);
    let mut gradient = vec![0.0; w.len()];
    write_gradient(config, w, &tr, dz, &mut gradient);
    Ok(Backward {
        gradient,
        dl_df,
        prediction: tr.prediction,
    })
}

/// `df(x, w)/dw` over the trainable parameters (fixed output signs
/// contribute zeros).
pub fn param_gradient(config: &NetworkConfig, w: &Weights, x: &[f64]) -> Result<Vec<f64>> {
    check(config, w, x)?;
    let tr = trace(config, w, x);
    let dz = logit_sensitivity(config.output_head, tr.prediction);
    let mut gradient = vec![0.0; w.len()];
    write_gradient(config, w, &tr, dz, &mut gradient);
    Ok(gradient)
}

/// `w - eta * gradient`, leaving `w` untouched.
pub fn sgd_step(w: &Weights, gradient: &[f64], eta: f64) -> Result<Weights> {
    if gradient.len() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient",
            expected: w.len(),
            got: gradient.len(),
        });
    }
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {eta}"
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {}",
            gradient[i]
        )));
    }
    let mut next = w.clone();
    for (p, g) in next.params_mut().iter_mut().zip(gradient) {
        *p -= eta * g;
    }
    Ok(next)
}

/// One SGD step applied in place; equivalent to
/// `sgd_step(w, backward(..).gradient, eta)` without materializing the
/// gradient.
pub fn train_step(
    config: &NetworkConfig,
    w: &mut Weights,
    x: &[f64],
    y: f64,
    loss: LossKind,
    eta: f64,
) -> Result<StepInfo> {
    check(config, w, x)?;
    config.check_loss(loss)?;
    loss.check_label(y)?;
    let tr = trace(config, w, x);
    let dl_df = loss.dloss_df(tr.prediction, y);
    let dz = dl_df * logit_sensitivity(config.output_head, tr.prediction);
    if !dz.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss derivative at prediction {}",
            tr.prediction
        )));
    }
    let hidden = config.hidden_dims.len();
    let deltas = hidden_deltas(config, w, &tr, dz);
    for layer in 0..hidden {
        let shape = w.layout()[layer];
        let input = tr.layer_input(layer);
        let sparse = if layer == 0 { tr.sparse.as_ref() } else { None };
        for (row, &d) in w
            .layer_mut(layer)
            .chunks_exact_mut(shape.cols)
            .zip(&deltas[layer])
        {
            if d != 0.0 {
                match sparse {
                    Some(sp) => sp.axpy(row, -eta * d),
                    None => axpy(row, -eta * d, input),
                }
            }
        }
    }
    if config.second_layer_mode == SecondLayerMode::Trainable {
        axpy(w.output_layer_mut(), -eta * dz, &tr.post[hidden - 1]);
    }
    Ok(StepInfo {
        prediction: tr.prediction,
        dl_df,
        loss: loss.loss(tr.prediction, y),
    })
}

/// First hidden layer pre-activations `w_r . xbar`.
pub fn first_layer_preactivations(
    config: &NetworkConfig,
    w: &Weights,
    x: &[f64],
) -> Result<Vec<f64>> {
    check(config, w, x)?;
    let xbar = augment(config, x);
    let shape = w.layout()[0];
    Ok(w.layer(0)
        .chunks_exact(shape.cols)
        .map(|row| dot(row, &xbar))
        .collect())
}

/// `1{w_r . xbar >= 0}` over the first hidden layer.
pub fn activation_pattern(config: &NetworkConfig, w: &Weights, x: &[f64]) -> Result<Vec<bool>> {
    if config.activation != Activation::Relu {
        return Err(Error::Unsupported(format!(
            "activation patterns need ReLU, network uses {}",
            config.activation.name()
        )));
    }
    Ok(first_layer_preactivations(config, w, x)?
        .into_iter()
        .map(|h| h >= 0.0)
        .collect())
}

/// Learning rate `fraction / mean ||d logit / dw||^2` over `xs`.
///
/// With standard parameterization the squared gradient norm grows linearly
/// in the width, so a fixed learning rate that trains a narrow net diverges
/// on a wide one. Scaling by the empirical tangent-kernel diagonal makes one
/// step shrink the residual at the update point by roughly `fraction`.
pub fn suggest_learning_rate(
    config: &NetworkConfig,
    w: &Weights,
    xs: &[Vec<f64>],
    fraction: f64,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InsufficientData(
            "no inputs to calibrate the learning rate".into(),
        ));
    }
    if !(fraction.is_finite() && fraction > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning-rate fraction must be positive, got {fraction}"
        )));
    }
    let mut grad = vec![0.0; w.len()];
    let mut total = 0.0;
    for x in xs {
        check(config, w, x)?;
        let tr = trace(config, w, x);
        write_gradient(config, w, &tr, 1.0, &mut grad);
        total += dot(&grad, &grad);
    }
    let mean = total / xs.len() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::DegenerateInput(
            "tangent-kernel diagonal vanishes on the calibration inputs".into(),
        ));
    }
    Ok(fraction / mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OutputHead;

    fn tiny(
        activation: Activation,
        w1: Vec<f64>,
        a: Vec<f64>,
        bias: bool,
    ) -> (NetworkConfig, Weights) {
        let input_dim = if bias {
            w1.len() / a.len() - 1
        } else {
            w1.len() / a.len()
        };
        let config = NetworkConfig {
            input_dim,
            hidden_dims: vec![a.len()],
            activation,
            output_head: OutputHead::Raw,
            second_layer_mode: SecondLayerMode::Trainable,
            augment_bias: bias,
        };
        let mut params = w1;
        params.extend(a);
        let w = Weights::from_params(&config, params).unwrap();
        (config, w)
    }

    #[test]
    fn identity_single_unit_composes_linearly() {
        let (c, w) = tiny(Activation::Identity, vec![1.0, 0.0], vec![1.0], false);
        assert_eq!(forward(&c, &w, &[2.0, 3.0]).unwrap(), 2.0);
    }

    #[test]
    fn relu_kills_negative_preactivation() {
        let (c, w) = tiny(Activation::Relu, vec![-1.0, 0.0], vec![1.0], false);
        assert_eq!(forward(&c, &w, &[2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let (c, w) = tiny(Activation::Relu, vec![1.0, 0.0], vec![1.0], false);
        assert!(matches!(
            forward(&c, &w, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn l2_gradient_vanishes_at_target() {
        let (c, w) = tiny(Activation::Relu, vec![0.5, 0.25], vec![2.0], false);
        let f = forward(&c, &w, &[2.0, 4.0]).unwrap();
        let b = backward(&c, &w, &[2.0, 4.0], f, LossKind::L2).unwrap();
        assert_eq!(b.dl_df, 0.0);
        assert!(b.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l2_loss_derivative_is_residual() {
        let (c, w) = tiny(Activation::Identity, vec![3.0, 0.0], vec![1.0], false);
        let b = backward(&c, &w, &[1.0, 0.0], 1.0, LossKind::L2).unwrap();
        assert_eq!(b.prediction, 3.0);
        assert_eq!(b.dl_df, 2.0);
    }

    #[test]
    fn bce_saturated_prediction_stays_finite() {
        let config = NetworkConfig::two_layer(1, 1, Activation::Identity).with_loss(LossKind::Bce);
        let w = Weights::from_params(&config, vec![1000.0, 0.0, 1.0]).unwrap();
        let b = backward(&config, &w, &[1.0], 0.0, LossKind::Bce).unwrap();
        assert!(b.dl_df.is_finite());
        assert!(b.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bce_rejects_non_binary_label() {
        let config = NetworkConfig::two_layer(1, 2, Activation::Relu).with_loss(LossKind::Bce);
        let w = init_weights(&config, 0).unwrap();
        assert!(backward(&config, &w, &[1.0], -1.0, LossKind::Bce).is_err());
    }

    #[test]
    fn loss_and_head_must_agree() {
        let config = NetworkConfig::two_layer(1, 2, Activation::Relu);
        let w = init_weights(&config, 0).unwrap();
        assert!(matches!(
            backward(&config, &w, &[1.0], 1.0, LossKind::Bce),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sgd_step_arithmetic() {
        let config = NetworkConfig {
            input_dim: 1,
            hidden_dims: vec![1],
            activation: Activation::Identity,
            output_head: OutputHead::Raw,
            second_layer_mode: SecondLayerMode::Trainable,
            augment_bias: false,
        };
        let w = Weights::from_params(&config, vec![1.0, 0.0]).unwrap();
        let next = sgd_step(&w, &[0.5, 0.0], 0.1).unwrap();
        assert!((next.params()[0] - 0.95).abs() < 1e-15);
        assert_eq!(w.params()[0], 1.0);
        assert_eq!(sgd_step(&w, &[0.0, 0.0], 0.1).unwrap(), w);
        assert_eq!(sgd_step(&w, &[0.5, 0.3], 0.0).unwrap(), w);
    }

    #[test]
    fn sgd_step_rejects_non_finite_gradient() {
        let config = NetworkConfig::two_layer(1, 1, Activation::Identity).with_bias(false);
        let w = Weights::from_params(&config, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            sgd_step(&w, &[f64::NAN, 0.0], 0.1),
            Err(Error::NonFinite(_))
        ));
        assert!(sgd_step(&w, &[0.0], 0.1).is_err());
    }

    #[test]
    fn pattern_of_positive_preactivation() {
        let (c, w) = tiny(Activation::Relu, vec![1.0, 0.0], vec![1.0], false);
        assert_eq!(activation_pattern(&c, &w, &[2.0, 7.0]).unwrap(), vec![true]);
    }

    #[test]
    fn pattern_needs_relu() {
        let (c, w) = tiny(Activation::Sigmoid, vec![1.0, 0.0], vec![1.0], false);
        assert!(matches!(
            activation_pattern(&c, &w, &[2.0, 7.0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn fixed_signs_are_plus_minus_one() {
        let config = NetworkConfig::two_layer(3, 40960, Activation::Relu)
            .with_mode(SecondLayerMode::FixedSigns);
        let w = init_weights(&config, 5).unwrap();
        assert!(w.output_layer().iter().all(|&a| a == 1.0 || a == -1.0));
        let plus = w.output_layer().iter().filter(|&&a| a > 0.0).count();
        assert!(plus > 19_000 && plus < 22_000);
    }

    #[test]
    fn init_is_deterministic() {
        let config = NetworkConfig::three_layer(3, [8, 5], Activation::Relu);
        assert_eq!(
            init_weights(&config, 9).unwrap(),
            init_weights(&config, 9).unwrap()
        );
        assert_ne!(
            init_weights(&config, 9).unwrap(),
            init_weights(&config, 10).unwrap()
        );
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
