//! Minimal fully connected network engine.
//!
//! Networks have one or two hidden layers and a scalar output:
//!
//! - two-layer: `f(x) = head( sum_r a_r * act(w_r . xbar) )`
//! - three-layer: `f(x) = head( sum_s a_s * act(v_s . act(W xbar)) )`
//!
//! where `xbar` is `x` with a trailing constant 1 when `augment_bias` is set.
//! All parameters live in one flat [`Weights`] vector so SGD steps and
//! gradient inner products are plain vector operations.
//!
//! Hidden layers carry no separate bias; the only affine offset is the one
//! supplied by the augmented input.

mod cache;
mod network;

pub use cache::{step_predictions, PlannedStep, PreactivationCache};
pub use network::{
    activation_pattern, backward, first_layer_preactivations, forward, forward_batch, init_weights,
    param_gradient, sgd_step, suggest_learning_rate, train_step, Backward, StepInfo,
};

use crate::error::{Error, Result};

/// Elementwise hidden nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Linear network baseline.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z >= 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative; ReLU uses the convention `act'(0) = 1`, matching the
    /// `w . xbar >= 0` activation indicator.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputHead {
    Raw,
    Sigmoid,
}

impl OutputHead {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            OutputHead::Raw => z,
            OutputHead::Sigmoid => sigmoid(z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SecondLayerMode {
    Trainable,
    /// Output weights drawn from {-1, +1} and never updated.
    FixedSigns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `0.5 * (f - y)^2`
    L2,
    /// Binary cross-entropy on a sigmoid output, labels in {0, 1}.
    Bce,
}

/// Clamp applied to sigmoid outputs before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

impl LossKind {
    pub fn output_head(self) -> OutputHead {
        match self {
            LossKind::L2 => OutputHead::Raw,
            LossKind::Bce => OutputHead::Sigmoid,
        }
    }

    /// Target used for a positive (primary / blue) example.
    pub fn positive_label(self) -> f64 {
        1.0
    }

    /// Target used for a negative (auxiliary / red) example.
    pub fn negative_label(self) -> f64 {
        match self {
            LossKind::L2 => -1.0,
            LossKind::Bce => 0.0,
        }
    }

    /// Decision threshold on the network output.
    pub fn threshold(self) -> f64 {
        match self {
            LossKind::L2 => 0.0,
            LossKind::Bce => 0.5,
        }
    }

    pub fn loss(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::L2 => 0.5 * (f - y) * (f - y),
            LossKind::Bce => {
                let p = f.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
        }
    }

    /// `dL/df` evaluated at the prediction `f`.
    pub fn dloss_df(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::L2 => f - y,
            LossKind::Bce => {
                let p = f.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -y / p + (1.0 - y) / (1.0 - p)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::Bce => "bce",
        }
    }

    pub(crate) fn check_label(self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("label {y}")));
        }
        if self == LossKind::Bce && y != 0.0 && y != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "binary cross-entropy needs labels in {{0, 1}}, got {y}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// One entry for a two-layer net, two for a three-layer net.
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub output_head: OutputHead,
    pub second_layer_mode: SecondLayerMode,
    pub augment_bias: bool,
}

/// Shape and position of one weight matrix inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl NetworkConfig {
    /// Two-layer network with a trainable output layer, raw head and bias
    /// augmentation.
    pub fn two_layer(input_dim: usize, width: usize, activation: Activation) -> Self {
        NetworkConfig {
            input_dim,
            hidden_dims: vec![width],
            activation,
            output_head: OutputHead::Raw,
            second_layer_mode: SecondLayerMode::Trainable,
            augment_bias: true,
        }
    }

    pub fn three_layer(input_dim: usize, widths: [usize; 2], activation: Activation) -> Self {
        NetworkConfig {
            hidden_dims: widths.to_vec(),
            ..NetworkConfig::two_layer(input_dim, widths[0], activation)
        }
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.output_head = loss.output_head();
        self
    }

    pub fn with_mode(mut self, mode: SecondLayerMode) -> Self {
        self.second_layer_mode = mode;
        self
    }

    pub fn with_bias(mut self, augment_bias: bool) -> Self {
        self.augment_bias = augment_bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        if !(1..=2).contains(&self.hidden_dims.len()) {
            return Err(Error::InvalidConfig(format!(
                "expected one or two hidden layers, got {}",
                self.hidden_dims.len()
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_loss(&self, loss: LossKind) -> Result<()> {
        if self.output_head != loss.output_head() {
            return Err(Error::InvalidConfig(format!(
                "{} loss requires the {:?} output head, network has {:?}",
                loss.name(),
                loss.output_head(),
                self.output_head
            )));
        }
        Ok(())
    }

    /// Length of `xbar`.
    pub fn augmented_dim(&self) -> usize {
        self.input_dim + usize::from(self.augment_bias)
    }

    pub fn depth(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn last_width(&self) -> usize {
        *self.hidden_dims.last().expect("validated config")
    }

    /// Hidden matrices first, output row last.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.depth());
        let mut cols = self.augmented_dim();
        let mut offset = 0;
        for &rows in &self.hidden_dims {
            shapes.push(LayerShape { rows, cols, offset });
            offset += rows * cols;
            cols = rows;
        }
        shapes.push(LayerShape {
            rows: 1,
            cols,
            offset,
        });
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Flat trainable parameter vector with its per-layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    params: Vec<f64>,
    layout: Vec<LayerShape>,
}

impl Weights {
    pub fn from_params(config: &NetworkConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = config.layer_shapes();
        let expected: usize = layout.iter().map(LayerShape::len).sum();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "weights",
                expected,
                got: params.len(),
            });
        }
        Ok(Weights { params, layout })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.params[self.layout[index].range()]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut [f64] {
        let range = self.layout[index].range();
        &mut self.params[range]
    }

    /// Output-layer weights `a_r`.
    pub fn output_layer(&self) -> &[f64] {
        self.layer(self.layout.len() - 1)
    }

    pub fn output_layer_mut(&mut self) -> &mut [f64] {
        let last = self.layout.len() - 1;
        self.layer_mut(last)
    }

    pub(crate) fn check_layout(&self, config: &NetworkConfig) -> Result<()> {
        if self.layout != config.layer_shapes() {
            return Err(Error::DimensionMismatch {
                context: "weights layout",
                expected: config.param_count(),
                got: self.params.len(),
            });
        }
        Ok(())
    }
}
