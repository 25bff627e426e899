//! Prediction-change similarities and the synthetic correlation experiments.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clustering::SimilarityMatrix;
use crate::data_io::{Field, Table};
use crate::error::{Error, Result};
use crate::manifolds::{build_geodesic, ManifoldSample, DEFAULT_NEIGHBORS};
use crate::nn::{
    activation_pattern, backward, forward, forward_batch, init_weights, sgd_step,
    step_predictions, suggest_learning_rate, train_step, Activation, LossKind, NetworkConfig,
    SecondLayerMode, Weights,
};

/// Updates whose prediction change or loss derivative at the update point
/// falls below this carry no similarity information.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Predictions over a probe set before and after one SGD step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    /// Position of the update example within `pre` / `post`.
    pub update_index: usize,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub dl_df: f64,
    pub eta: f64,
}

impl UpdateRecord {
    pub fn new(
        update_index: usize,
        pre: Vec<f64>,
        post: Vec<f64>,
        dl_df: f64,
        eta: f64,
    ) -> Result<Self> {
        if pre.len() != post.len() {
            return Err(Error::DimensionMismatch {
                context: "update record",
                expected: pre.len(),
                got: post.len(),
            });
        }
        if update_index >= pre.len() {
            return Err(Error::InvalidArgument(format!(
                "update index {update_index} outside {} probes",
                pre.len()
            )));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        if !dl_df.is_finite() || pre.iter().chain(&post).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("update record entries".into()));
        }
        Ok(UpdateRecord {
            update_index,
            pre,
            post,
            dl_df,
            eta,
        })
    }

    fn probe(&self, j: usize) -> Result<()> {
        if j >= self.pre.len() {
            return Err(Error::InvalidArgument(format!(
                "probe {j} outside {} probes",
                self.pre.len()
            )));
        }
        Ok(())
    }
}

/// `|f(x', w+) - f(x', w)| / |f(x, w+) - f(x, w)|`.
pub fn relative_similarity(rec: &UpdateRecord, j: usize) -> Result<f64> {
    rec.probe(j)?;
    let i = rec.update_index;
    let den = (rec.post[i] - rec.pre[i]).abs();
    if den < DEGENERATE_EPS {
        return Err(Error::DegenerateUpdate(format!(
            "prediction change {den:e} at the update point"
        )));
    }
    Ok((rec.post[j] - rec.pre[j]).abs() / den)
}

/// `(f(x', w) - f(x', w+)) / (eta * dL/df)`, signed.
pub fn kernelized_similarity(rec: &UpdateRecord, j: usize) -> Result<f64> {
    rec.probe(j)?;
    if rec.dl_df.abs() < DEGENERATE_EPS {
        return Err(Error::DegenerateUpdate(format!(
            "loss derivative {:e} at the update point",
            rec.dl_df
        )));
    }
    Ok((rec.pre[j] - rec.post[j]) / (rec.eta * rec.dl_df))
}

/// `S(x, x') / sqrt(S(x, x) S(x', x'))`.
pub fn normalize_kernel(s: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    let n = s.n();
    let diag: Vec<f64> = (0..n).map(|i| s.get(i, i)).collect();
    if let Some(index) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::NonPositiveDiagonal {
            index,
            value: diag[index],
        });
    }
    let mut out = s.clone();
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                1.0
            } else {
                s.get(i, j) / (diag[i] * diag[j]).sqrt()
            };
            out.set(i, j, v);
        }
    }
    Ok(out)
}

fn require_eq4_setting(config: &NetworkConfig) -> Result<()> {
    if config.activation != Activation::Relu
        || config.hidden_dims.len() != 1
        || config.second_layer_mode != SecondLayerMode::FixedSigns
        || !config.augment_bias
    {
        return Err(Error::Unsupported(
            "the two-layer ratio needs a ReLU net with one hidden layer, fixed output signs and bias augmentation".into(),
        ));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Predicted ratio of prediction changes at `x2` and `x1` for an SGD step at
/// `x1`: `(x1.x2 + 1) * #both / ((|x1|^2 + 1) * #x1)`, counting neurons
/// active at both inputs and at `x1`.
pub fn theoretical_ratio(
    config: &NetworkConfig,
    w: &Weights,
    x1: &[f64],
    x2: &[f64],
) -> Result<f64> {
    require_eq4_setting(config)?;
    let p1 = activation_pattern(config, w, x1)?;
    let p2 = activation_pattern(config, w, x2)?;
    let own = p1.iter().filter(|&&b| b).count();
    if own == 0 {
        return Err(Error::DegenerateInput(
            "no neuron is active at the update point".into(),
        ));
    }
    let both = p1.iter().zip(&p2).filter(|(a, b)| **a && **b).count();
    Ok((dot(x1, x2) + 1.0) * both as f64 / ((dot(x1, x1) + 1.0) * own as f64))
}

/// Cosine similarity of the two binary activation patterns.
pub fn pattern_cosine(config: &NetworkConfig, w: &Weights, x1: &[f64], x2: &[f64]) -> Result<f64> {
    let p1 = activation_pattern(config, w, x1)?;
    let p2 = activation_pattern(config, w, x2)?;
    binary_cosine(&p1, &p2)
}

fn binary_cosine(p1: &[bool], p2: &[bool]) -> Result<f64> {
    let c1 = p1.iter().filter(|&&b| b).count();
    let c2 = p2.iter().filter(|&&b| b).count();
    if c1 == 0 || c2 == 0 {
        return Err(Error::DegenerateInput("all-zero activation pattern".into()));
    }
    let both = p1.iter().zip(p2).filter(|(a, b)| **a && **b).count();
    Ok(both as f64 / ((c1 as f64) * (c2 as f64)).sqrt())
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "need at least two observations".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// How the learning rate of an experiment is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    /// `fraction / mean ||d logit / dw||^2` at initialization; see
    /// [`suggest_learning_rate`].
    Auto(f64),
}

impl LearningRate {
    pub fn resolve(self, config: &NetworkConfig, w: &Weights, xs: &[Vec<f64>]) -> Result<f64> {
        match self {
            LearningRate::Fixed(eta) => {
                if eta > 0.0 && eta.is_finite() {
                    Ok(eta)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "learning rate must be positive, got {eta}"
                    )))
                }
            }
            LearningRate::Auto(fraction) => {
                // A spread of inputs is enough to estimate the mean diagonal.
                let step = (xs.len() / 64).max(1);
                let probe: Vec<Vec<f64>> = xs.iter().step_by(step).cloned().collect();
                suggest_learning_rate(config, w, &probe, fraction)
            }
        }
    }
}

impl std::fmt::Display for LearningRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LearningRate::Fixed(eta) => write!(f, "{eta}"),
            LearningRate::Auto(fraction) => write!(f, "auto:{fraction}"),
        }
    }
}

impl std::str::FromStr for LearningRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad learning rate '{s}'"));
        match s.strip_prefix("auto:") {
            Some(frac) => Ok(LearningRate::Auto(frac.parse().map_err(|_| bad())?)),
            None if s == "auto" => Ok(LearningRate::Auto(DEFAULT_AUTO_FRACTION)),
            None => Ok(LearningRate::Fixed(s.parse().map_err(|_| bad())?)),
        }
    }
}

pub const DEFAULT_AUTO_FRACTION: f64 = 0.5;

/// Inputs fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputScaling {
    Raw,
    Standardized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityConfig {
    pub network: NetworkConfig,
    pub loss: LossKind,
    pub eta: LearningRate,
    pub epochs: usize,
    /// Same-class probes drawn per recorded update.
    pub n_probe_pairs: usize,
    /// Epochs trained before recording starts.
    pub record_after: usize,
    pub neighbors: usize,
    pub scaling: InputScaling,
    pub seed: u64,
}

impl ElasticityConfig {
    pub fn new(network: NetworkConfig, loss: LossKind, seed: u64) -> Self {
        ElasticityConfig {
            network: network.with_loss(loss),
            loss,
            eta: LearningRate::Auto(DEFAULT_AUTO_FRACTION),
            epochs: 50,
            n_probe_pairs: 50,
            record_after: 1,
            neighbors: DEFAULT_NEIGHBORS,
            scaling: InputScaling::Raw,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePair {
    pub distance: f64,
    pub s_rel: f64,
    pub s_ker: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityTrace {
    pub pairs: Vec<TracePair>,
    pub pearson_rel: f64,
    pub pearson_ker: f64,
    /// Mean of all recorded relative similarities.
    pub expected_relative_change: f64,
    /// Learning rate actually used.
    pub eta: f64,
    pub skipped_updates: usize,
    pub final_train_accuracy: f64,
}

impl ElasticityTrace {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["distance", "s_rel", "s_ker"]);
        for p in &self.pairs {
            t.push(vec![p.distance.into(), p.s_rel.into(), p.s_ker.into()]);
        }
        t
    }

    pub fn summary_fields(&self) -> Vec<(&'static str, Field)> {
        vec![
            ("pearson_rel", self.pearson_rel.into()),
            ("pearson_ker", self.pearson_ker.into()),
            (
                "expected_relative_change",
                self.expected_relative_change.into(),
            ),
            ("eta_used", self.eta.into()),
            ("recorded_pairs", self.pairs.len().into()),
            ("skipped_updates", self.skipped_updates.into()),
            ("final_train_accuracy", self.final_train_accuracy.into()),
        ]
    }
}

/// Predictions at `probes` before and after one SGD step at `x`; the update
/// point is probe 0 of the returned record.
fn probe_update(
    config: &NetworkConfig,
    w: &mut Weights,
    x: &[f64],
    probes: Vec<Vec<f64>>,
    y: f64,
    loss: LossKind,
    eta: f64,
) -> Result<(UpdateRecord, f64)> {
    let mut set = Vec::with_capacity(probes.len() + 1);
    set.push(x.to_vec());
    set.extend(probes);
    if config.hidden_dims.len() == 1 {
        let (pre, post, _) = step_predictions(config, w, &set, 0, y, loss, eta)?;
        let info = train_step(config, w, x, y, loss, eta)?;
        Ok((
            UpdateRecord {
                update_index: 0,
                pre,
                post,
                dl_df: info.dl_df,
                eta,
            },
            info.loss,
        ))
    } else {
        let pre = forward_batch(config, w, &set)?;
        let info = train_step(config, w, x, y, loss, eta)?;
        let post = forward_batch(config, w, &set)?;
        Ok((
            UpdateRecord {
                update_index: 0,
                pre,
                post,
                dl_df: info.dl_df,
                eta,
            },
            info.loss,
        ))
    }
}

/// Trains on the whole sample with shuffled single-example SGD and, after
/// `record_after` epochs, records for every update on a blue point its
/// similarities toward random blue probes together with their geodesic
/// distances.
pub fn run_elasticity_experiment(
    sample: &ManifoldSample,
    cfg: &ElasticityConfig,
) -> Result<ElasticityTrace> {
    if cfg.epochs <= cfg.record_after {
        return Err(Error::InsufficientData(format!(
            "{} epochs with recording from epoch {} records nothing",
            cfg.epochs, cfg.record_after
        )));
    }
    let config = &cfg.network;
    config.check_loss(cfg.loss)?;
    if sample.dim() != config.input_dim {
        return Err(Error::DimensionMismatch {
            context: "manifold sample",
            expected: config.input_dim,
            got: sample.dim(),
        });
    }
    let inputs = match cfg.scaling {
        InputScaling::Raw => sample.points.clone(),
        InputScaling::Standardized => sample.standardized_points(),
    };
    let graph = build_geodesic(sample, cfg.neighbors)?;
    let targets: Vec<f64> = sample
        .labels
        .iter()
        .map(|&l| {
            if l > 0 {
                cfg.loss.positive_label()
            } else {
                cfg.loss.negative_label()
            }
        })
        .collect();
    let blue = sample.indices_of(1);

    let mut w = init_weights(config, cfg.seed)?;
    let eta = cfg.eta.resolve(config, &w, &inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut pairs = Vec::new();
    let mut skipped = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let recording = epoch >= cfg.record_after;
        for &i in &order {
            let y = targets[i];
            let loss = if recording && sample.labels[i] > 0 {
                let others: Vec<usize> = blue.iter().copied().filter(|&j| j != i).collect();
                let count = cfg.n_probe_pairs.min(others.len());
                let picked: Vec<usize> = sample_indices(&mut rng, others.len(), count)
                    .into_iter()
                    .map(|k| others[k])
                    .collect();
                let probes = picked.iter().map(|&j| inputs[j].clone()).collect();
                let (rec, loss) =
                    probe_update(config, &mut w, &inputs[i], probes, y, cfg.loss, eta)?;
                let den = (rec.post[0] - rec.pre[0]).abs();
                if den < DEGENERATE_EPS || rec.dl_df.abs() < DEGENERATE_EPS {
                    skipped += 1;
                } else {
                    for (k, &j) in picked.iter().enumerate() {
                        pairs.push(TracePair {
                            distance: graph.distance(i, j),
                            s_rel: relative_similarity(&rec, k + 1)?,
                            s_ker: kernelized_similarity(&rec, k + 1)?,
                        });
                    }
                }
                loss
            } else {
                train_step(config, &mut w, &inputs[i], y, cfg.loss, eta)?.loss
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, eta });
            }
        }
    }
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(
            "fewer than two recorded pairs".into(),
        ));
    }
    let dist: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    let rel: Vec<f64> = pairs.iter().map(|p| p.s_rel).collect();
    let ker: Vec<f64> = pairs.iter().map(|p| p.s_ker).collect();
    let preds = forward_batch(config, &w, &inputs)?;
    let threshold = cfg.loss.threshold();
    let correct = preds
        .iter()
        .zip(&sample.labels)
        .filter(|(&p, &l)| (p > threshold) == (l > 0))
        .count();
    Ok(ElasticityTrace {
        pearson_rel: pearson(&dist, &rel)?,
        pearson_ker: pearson(&dist, &ker)?,
        expected_relative_change: rel.iter().sum::<f64>() / rel.len() as f64,
        pairs,
        eta,
        skipped_updates: skipped,
        final_train_accuracy: correct as f64 / inputs.len() as f64,
    })
}

/// Correlation between activation-pattern cosine similarity and Euclidean
/// distance over all same-class pairs, at the network's initial weights.
pub fn pattern_distance_correlation(
    sample: &ManifoldSample,
    config: &NetworkConfig,
    scaling: InputScaling,
    seed: u64,
) -> Result<f64> {
    let w = init_weights(config, seed)?;
    let inputs = match scaling {
        InputScaling::Raw => sample.points.clone(),
        InputScaling::Standardized => sample.standardized_points(),
    };
    let bits: Vec<(Vec<u64>, u32)> = inputs
        .iter()
        .map(|x| {
            let p = activation_pattern(config, &w, x)?;
            let mut words = vec![0u64; p.len().div_ceil(64)];
            for (r, &on) in p.iter().enumerate() {
                if on {
                    words[r / 64] |= 1 << (r % 64);
                }
            }
            let count = words.iter().map(|w| w.count_ones()).sum();
            Ok((words, count))
        })
        .collect::<Result<_>>()?;
    let mut cos = Vec::new();
    let mut dist = Vec::new();
    for i in 0..inputs.len() {
        for j in i + 1..inputs.len() {
            if sample.labels[i] != sample.labels[j] {
                continue;
            }
            let (a, ca) = &bits[i];
            let (b, cb) = &bits[j];
            if *ca == 0 || *cb == 0 {
                return Err(Error::DegenerateInput("all-zero activation pattern".into()));
            }
            let both: u32 = a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum();
            cos.push(f64::from(both) / (f64::from(*ca) * f64::from(*cb)).sqrt());
            let d: f64 = sample.points[i]
                .iter()
                .zip(&sample.points[j])
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            dist.push(d.sqrt());
        }
    }
    pearson(&cos, &dist)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eq4Config {
    pub width: usize,
    pub input_dim: usize,
    pub eta: f64,
    pub pairs: usize,
    /// Relative tolerance for agreement.
    pub tolerance: f64,
    /// Both activation counts must reach `width * min_active_fraction`.
    pub min_active_fraction: f64,
    pub seed: u64,
}

impl Default for Eq4Config {
    fn default() -> Self {
        Eq4Config {
            width: 4096,
            input_dim: 10,
            eta: 1e-6,
            pairs: 200,
            tolerance: 0.05,
            min_active_fraction: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eq4Pair {
    pub theory: f64,
    pub measured: f64,
    pub relative_error: f64,
    pub eligible: bool,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eq4Report {
    pub pairs: Vec<Eq4Pair>,
    /// Pairs dropped because an update or count was degenerate.
    pub excluded: usize,
}

impl Eq4Report {
    pub fn eligible(&self) -> usize {
        self.pairs.iter().filter(|p| p.eligible).count()
    }

    pub fn agreeing(&self) -> usize {
        self.pairs.iter().filter(|p| p.eligible && p.agrees).count()
    }

    pub fn agreement_rate(&self) -> f64 {
        match self.eligible() {
            0 => 0.0,
            e => self.agreeing() as f64 / e as f64,
        }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["theory", "measured", "relative_error", "eligible", "agrees"]);
        for p in &self.pairs {
            t.push(vec![
                p.theory.into(),
                p.measured.into(),
                p.relative_error.into(),
                p.eligible.into(),
                p.agrees.into(),
            ]);
        }
        t
    }
}

/// Measured ratio of prediction changes at `x2` and `x1` after one ℓ2 SGD
/// step at `x1` with target 0.
pub fn measured_ratio(
    config: &NetworkConfig,
    w: &Weights,
    x1: &[f64],
    x2: &[f64],
    eta: f64,
) -> Result<f64> {
    let b = backward(config, w, x1, 0.0, LossKind::L2)?;
    let next = sgd_step(w, &b.gradient, eta)?;
    let d1 = forward(config, &next, x1)? - b.prediction;
    let d2 = forward(config, &next, x2)? - forward(config, w, x2)?;
    if d1.abs() < DEGENERATE_EPS {
        return Err(Error::DegenerateUpdate(format!(
            "prediction change {d1:e} at the update point"
        )));
    }
    Ok(d2 / d1)
}

/// Compares the two-layer ratio prediction with measured SGD updates on
/// random Gaussian input pairs.
pub fn check_eq4(cfg: &Eq4Config) -> Result<Eq4Report> {
    let config = NetworkConfig::two_layer(cfg.input_dim, cfg.width, Activation::Relu)
        .with_mode(SecondLayerMode::FixedSigns);
    let w = init_weights(&config, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut gauss = || -> Vec<f64> {
        (0..cfg.input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    };
    let min_active = (cfg.width as f64 * cfg.min_active_fraction).ceil() as usize;
    let mut pairs = Vec::with_capacity(cfg.pairs);
    let mut excluded = 0;
    for _ in 0..cfg.pairs {
        let x1 = gauss();
        let x2 = gauss();
        let theory = match theoretical_ratio(&config, &w, &x1, &x2) {
            Ok(t) => t,
            Err(Error::DegenerateInput(_)) => {
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let measured = match measured_ratio(&config, &w, &x1, &x2, cfg.eta) {
            Ok(m) => m,
            Err(Error::DegenerateUpdate(_)) => {
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let count = |x: &[f64]| -> Result<usize> {
            Ok(activation_pattern(&config, &w, x)?
                .iter()
                .filter(|&&b| b)
                .count())
        };
        let eligible = count(&x1)? >= min_active && count(&x2)? >= min_active;
        let relative_error = (measured - theory).abs() / theory.abs().max(f64::MIN_POSITIVE);
        pairs.push(Eq4Pair {
            theory,
            measured,
            relative_error,
            eligible,
            agrees: relative_error <= cfg.tolerance,
        });
    }
    Ok(Eq4Report { pairs, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(pre: Vec<f64>, post: Vec<f64>) -> UpdateRecord {
        UpdateRecord::new(0, pre, post, 2.0, 0.1).unwrap()
    }

    #[test]
    fn relative_similarity_basics() {
        let rec = record(vec![1.0, 3.0, 5.0], vec![0.5, 3.0, 4.0]);
        assert_eq!(relative_similarity(&rec, 0).unwrap(), 1.0);
        assert_eq!(relative_similarity(&rec, 1).unwrap(), 0.0);
        assert_eq!(relative_similarity(&rec, 2).unwrap(), 2.0);
        let flat = record(vec![1.0, 2.0], vec![1.0, 3.0]);
        assert!(matches!(
            relative_similarity(&flat, 1),
            Err(Error::DegenerateUpdate(_))
        ));
    }

    #[test]
    fn kernelized_similarity_is_signed() {
        let rec = record(vec![1.0, 3.0, 5.0], vec![0.8, 3.0, 5.2]);
        assert!((kernelized_similarity(&rec, 0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(kernelized_similarity(&rec, 1).unwrap(), 0.0);
        assert!((kernelized_similarity(&rec, 2).unwrap() + 1.0).abs() < 1e-12);
        let zero = UpdateRecord::new(0, vec![1.0], vec![1.0], 0.0, 0.1).unwrap();
        assert!(kernelized_similarity(&zero, 0).is_err());
    }

    #[test]
    fn record_validation() {
        assert!(UpdateRecord::new(0, vec![1.0], vec![1.0, 2.0], 1.0, 0.1).is_err());
        assert!(UpdateRecord::new(2, vec![1.0], vec![1.0], 1.0, 0.1).is_err());
        assert!(UpdateRecord::new(0, vec![1.0], vec![1.0], 1.0, 0.0).is_err());
        assert!(UpdateRecord::new(0, vec![f64::NAN], vec![1.0], 1.0, 0.1).is_err());
    }

    #[test]
    fn normalize_kernel_examples() {
        let s = SimilarityMatrix::from_rows(vec![vec![4.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let n = normalize_kernel(&s).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(n.get(i, j), 1.0);
            }
        }
        let id = SimilarityMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(normalize_kernel(&id).unwrap().values(), id.values());
        let bad = SimilarityMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(
            normalize_kernel(&bad),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!(
            (binary_cosine(&[true, true, false], &[true, false, false]).unwrap()
                - 1.0 / 2f64.sqrt())
            .abs()
                < 1e-15
        );
        assert_eq!(binary_cosine(&[true, false], &[false, true]).unwrap(), 0.0);
        assert!(binary_cosine(&[false, false], &[true, false]).is_err());
    }

    fn fixed_sign_net(w1: Vec<f64>, signs: Vec<f64>) -> (NetworkConfig, Weights) {
        let width = signs.len();
        let d = w1.len() / width - 1;
        let config = NetworkConfig::two_layer(d, width, Activation::Relu)
            .with_mode(SecondLayerMode::FixedSigns);
        let mut p = w1;
        p.extend(signs);
        let w = Weights::from_params(&config, p).unwrap();
        (config, w)
    }

    #[test]
    fn theoretical_ratio_examples() {
        let (c, w) = fixed_sign_net(vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0], vec![1.0, -1.0]);
        let x = [2.0, 0.5];
        assert!((theoretical_ratio(&c, &w, &x, &x).unwrap() - 1.0).abs() < 1e-15);
        // Neuron 0 is active at x but not at x2; neuron 1 is never active at x.
        let x2 = [-2.0, 0.5];
        assert_eq!(theoretical_ratio(&c, &w, &x, &x2).unwrap(), 0.0);
        // Zero preactivation counts as active; push both units negative.
        let (c, w) = fixed_sign_net(vec![1.0, 0.0, -1.0, 1.0, 0.0, -1.0], vec![1.0, 1.0]);
        assert!(matches!(
            theoretical_ratio(&c, &w, &[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        let trainable = NetworkConfig::two_layer(2, 2, Activation::Relu);
        let w = init_weights(&trainable, 0).unwrap();
        assert!(theoretical_ratio(&trainable, &w, &x, &x).is_err());
    }

    #[test]
    fn eq4_small_and_large_steps() {
        let cfg = Eq4Config {
            width: 1024,
            pairs: 40,
            seed: 3,
            ..Eq4Config::default()
        };
        let good = check_eq4(&cfg).unwrap();
        assert!(good.agreement_rate() >= 0.95, "{}", good.agreement_rate());
        let bad = check_eq4(&Eq4Config { eta: 0.1, ..cfg }).unwrap();
        assert!(bad.agreement_rate() < good.agreement_rate());
    }

    #[test]
    fn too_few_epochs_is_an_error() {
        let sample = crate::manifolds::gen_torus(10, 0).unwrap();
        let mut cfg = ElasticityConfig::new(
            NetworkConfig::two_layer(3, 8, Activation::Relu),
            LossKind::L2,
            0,
        );
        cfg.epochs = 0;
        assert!(matches!(
            run_elasticity_experiment(&sample, &cfg),
            Err(Error::InsufficientData(_))
        ));
    }
}
