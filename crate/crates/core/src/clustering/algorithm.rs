//! Warm-up, similarity recording and the full clustering pipeline.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::{kernel_kmeans, kmeans, ClusteringResult, KmeansOptions};
use super::{clustering_accuracy, symmetrize, LabeledSet, SimilarityMatrix, SimilarityOption};
use crate::data_io::{standardize_rows, Normalization};
use crate::elasticity::{
    kernelized_similarity, normalize_kernel, relative_similarity, LearningRate, UpdateRecord,
    DEGENERATE_EPS,
};
use crate::error::{Error, Result};
use crate::nn::{
    forward_batch, init_weights, train_step, LossKind, NetworkConfig, PreactivationCache, Weights,
};

/// Combined training set: primary examples first, then auxiliary ones.
struct Combined {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    n_primary: usize,
}

fn combine(primary: &LabeledSet, auxiliary: &LabeledSet, loss: LossKind) -> Result<Combined> {
    if primary.is_empty() || auxiliary.is_empty() {
        return Err(Error::InsufficientData(
            "primary and auxiliary sets must both be nonempty".into(),
        ));
    }
    if primary.dim() != auxiliary.dim() {
        return Err(Error::DimensionMismatch {
            context: "auxiliary features",
            expected: primary.dim(),
            got: auxiliary.dim(),
        });
    }
    let mut inputs = primary.features.clone();
    inputs.extend(auxiliary.features.iter().cloned());
    let mut targets = vec![loss.positive_label(); primary.len()];
    targets.extend(std::iter::repeat_n(loss.negative_label(), auxiliary.len()));
    Ok(Combined {
        inputs,
        targets,
        n_primary: primary.len(),
    })
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed)
}

fn train_accuracy(
    config: &NetworkConfig,
    w: &Weights,
    data: &Combined,
    loss: LossKind,
) -> Result<f64> {
    let preds = forward_batch(config, w, &data.inputs)?;
    let threshold = loss.threshold();
    let positive = loss.positive_label();
    let correct = preds
        .iter()
        .zip(&data.targets)
        .filter(|(&p, &y)| (p > threshold) == (y == positive))
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

#[derive(Debug, Clone)]
pub struct WarmUp {
    pub weights: Weights,
    pub eta: f64,
    pub epochs_run: usize,
    /// Accuracy on the combined set after the last epoch run.
    pub train_accuracy: f64,
}

/// Initializes from `seed` and runs up to `epochs` shuffled single-example
/// SGD epochs on the combined set, stopping early once the training accuracy
/// reaches `stop_at`.
#[allow(clippy::too_many_arguments)]
pub fn warm_up(
    config: &NetworkConfig,
    loss: LossKind,
    primary: &LabeledSet,
    auxiliary: &LabeledSet,
    eta: LearningRate,
    epochs: usize,
    stop_at: Option<f64>,
    seed: u64,
) -> Result<WarmUp> {
    config.check_loss(loss)?;
    let data = combine(primary, auxiliary, loss)?;
    config.check_input(&data.inputs[0])?;
    let mut w = init_weights(config, seed)?;
    let eta = eta.resolve(config, &w, &data.inputs)?;
    let mut rng = shuffle_rng(seed);
    let mut order: Vec<usize> = (0..data.inputs.len()).collect();
    let mut accuracy = None;
    let mut epochs_run = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let info = train_step(config, &mut w, &data.inputs[i], data.targets[i], loss, eta)?;
            if !info.loss.is_finite() {
                return Err(Error::Diverged { epoch, eta });
            }
        }
        epochs_run += 1;
        let acc = train_accuracy(config, &w, &data, loss)?;
        accuracy = Some(acc);
        if stop_at.is_some_and(|target| acc >= target) {
            break;
        }
    }
    let train_accuracy = match accuracy {
        Some(a) => a,
        None => train_accuracy(config, &w, &data, loss)?,
    };
    Ok(WarmUp {
        weights: w,
        eta,
        epochs_run,
        train_accuracy,
    })
}

/// How predictions over the primary set are tracked while recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Incremental pre-activations for two-layer nets, direct otherwise.
    Auto,
    /// Incremental pre-activations (two-layer nets only).
    Cached,
    /// Forward passes over the primary set on the updated weights.
    Direct,
}

#[derive(Debug, Clone)]
pub struct SimilarityBuild {
    /// Unsymmetrized, averaged over the recording epochs.
    pub matrix: SimilarityMatrix,
    /// Rows recovered with a step at a tenth of the learning rate.
    pub fallback_rows: Vec<usize>,
    /// Rows left at zero because both attempts were degenerate.
    pub zero_rows: Vec<usize>,
}

fn check_duplicates(primary: &LabeledSet) -> Result<()> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(primary.len());
    for (i, x) in primary.features.iter().enumerate() {
        let key: Vec<u64> = x.iter().map(|v| (v + 0.0).to_bits()).collect();
        if let Some(&first) = seen.get(&key) {
            return Err(Error::DuplicateFeature(first, i));
        }
        seen.insert(key, i);
    }
    Ok(())
}

fn is_degenerate(option: SimilarityOption, pre_i: f64, post_i: f64, dl_df: f64) -> bool {
    match option {
        SimilarityOption::Relative => (post_i - pre_i).abs() < DEGENERATE_EPS,
        SimilarityOption::Kernelized => dl_df.abs() < DEGENERATE_EPS,
    }
}

fn similarity_row(
    option: SimilarityOption,
    i: usize,
    pre: Vec<f64>,
    post: Vec<f64>,
    dl_df: f64,
    eta: f64,
) -> Result<Vec<f64>> {
    let rec = UpdateRecord::new(i, pre, post, dl_df, eta)?;
    (0..rec.pre.len())
        .map(|j| match option {
            SimilarityOption::Relative => relative_similarity(&rec, j),
            SimilarityOption::Kernelized => kernelized_similarity(&rec, j),
        })
        .collect()
}

/// Outcome of one recorded row.
enum Row {
    Direct(Vec<f64>),
    Fallback(Vec<f64>),
    Zero,
}

/// One recording run: every example of the combined set is visited once per
/// epoch in shuffled order; each visit is an SGD step, and a visit to
/// primary example `i` writes row `i` from the prediction changes over the
/// primary set.
pub fn build_similarity(
    primary: &LabeledSet,
    auxiliary: &LabeledSet,
    config: &NetworkConfig,
    loss: LossKind,
    option: SimilarityOption,
    w0: &Weights,
    eta: f64,
    seed: u64,
) -> Result<SimilarityBuild> {
    build_similarity_with(
        primary,
        auxiliary,
        config,
        loss,
        option,
        w0,
        eta,
        1,
        seed,
        Engine::Auto,
    )
}

/// [`build_similarity`] with an explicit number of recording epochs (rows
/// are averaged over epochs) and prediction-tracking engine.
#[allow(clippy::too_many_arguments)]
pub fn build_similarity_with(
    primary: &LabeledSet,
    auxiliary: &LabeledSet,
    config: &NetworkConfig,
    loss: LossKind,
    option: SimilarityOption,
    w0: &Weights,
    eta: f64,
    epochs: usize,
    seed: u64,
    engine: Engine,
) -> Result<SimilarityBuild> {
    config.check_loss(loss)?;
    if epochs == 0 {
        return Err(Error::InvalidArgument(
            "recording needs at least one epoch".into(),
        ));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    check_duplicates(primary)?;
    let data = combine(primary, auxiliary, loss)?;
    config.check_input(&data.inputs[0])?;
    let n = data.n_primary;
    let use_cache = match engine {
        Engine::Auto => config.hidden_dims.len() == 1,
        Engine::Cached => true,
        Engine::Direct => false,
    };
    let mut tracker: Box<dyn Tracker> = if use_cache {
        Box::new(CachedTracker {
            cache: PreactivationCache::new(config, w0, &data.inputs)?,
            n,
        })
    } else {
        Box::new(DirectTracker {
            config: config.clone(),
            w: w0.clone(),
            primary: data.inputs[..n].to_vec(),
            current: None,
        })
    };

    let mut sum = SimilarityMatrix::zeros(n, option);
    let mut zero_rows = Vec::new();
    let mut fallback_rows = Vec::new();
    let mut rng = shuffle_rng(seed);
    let mut order: Vec<usize> = (0..data.inputs.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &t in &order {
            let (x, y) = (&data.inputs[t], data.targets[t]);
            if t >= n {
                let l = tracker.step(t, x, y, loss, eta)?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, eta });
                }
                continue;
            }
            match tracker.record(t, x, y, loss, eta, option)? {
                Row::Direct(row) => add_row(&mut sum, t, &row),
                Row::Fallback(row) => {
                    add_row(&mut sum, t, &row);
                    fallback_rows.push(t);
                }
                Row::Zero => zero_rows.push(t),
            }
        }
    }
    if epochs > 1 {
        let scale = 1.0 / epochs as f64;
        for i in 0..n {
            sum.row_mut(i).iter_mut().for_each(|v| *v *= scale);
        }
    }
    if sum.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity matrix entries".into()));
    }
    fallback_rows.sort_unstable();
    fallback_rows.dedup();
    zero_rows.sort_unstable();
    zero_rows.dedup();
    Ok(SimilarityBuild {
        matrix: sum,
        fallback_rows,
        zero_rows,
    })
}

fn add_row(m: &mut SimilarityMatrix, i: usize, row: &[f64]) {
    for (s, v) in m.row_mut(i).iter_mut().zip(row) {
        *s += v;
    }
}

trait Tracker {
    /// Plain SGD step; returns the loss before the step.
    fn step(&mut self, t: usize, x: &[f64], y: f64, loss: LossKind, eta: f64) -> Result<f64>;

    /// SGD step on primary example `t`, returning its similarity row.
    fn record(
        &mut self,
        t: usize,
        x: &[f64],
        y: f64,
        loss: LossKind,
        eta: f64,
        option: SimilarityOption,
    ) -> Result<Row>;
}

struct CachedTracker {
    cache: PreactivationCache,
    n: usize,
}

impl Tracker for CachedTracker {
    fn step(&mut self, t: usize, _x: &[f64], y: f64, loss: LossKind, eta: f64) -> Result<f64> {
        Ok(self.cache.step(t, y, loss, eta)?.loss)
    }

    fn record(
        &mut self,
        t: usize,
        _x: &[f64],
        y: f64,
        loss: LossKind,
        eta: f64,
        option: SimilarityOption,
    ) -> Result<Row> {
        let n = self.n;
        let plan = self.cache.plan(t, y, loss, eta)?;
        let pre = self.cache.predictions()[..n].to_vec();
        let post_t = self.cache.prediction_after(&plan, t);
        let row = if is_degenerate(option, pre[t], post_t, plan.info.dl_df) {
            let trial = self.cache.plan(t, y, loss, eta / 10.0)?;
            let post: Vec<f64> = (0..n)
                .map(|j| self.cache.prediction_after(&trial, j))
                .collect();
            if is_degenerate(option, pre[t], post[t], trial.info.dl_df) {
                Row::Zero
            } else {
                Row::Fallback(similarity_row(
                    option,
                    t,
                    pre.clone(),
                    post,
                    trial.info.dl_df,
                    eta / 10.0,
                )?)
            }
        } else {
            Row::Direct(Vec::new())
        };
        self.cache.apply(&plan);
        if !plan.info.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at primary example {t}")));
        }
        match row {
            Row::Direct(_) => {
                let post = self.cache.predictions()[..n].to_vec();
                Ok(Row::Direct(similarity_row(
                    option,
                    t,
                    pre,
                    post,
                    plan.info.dl_df,
                    eta,
                )?))
            }
            other => Ok(other),
        }
    }
}

struct DirectTracker {
    config: NetworkConfig,
    w: Weights,
    primary: Vec<Vec<f64>>,
    /// Predictions over the primary set at the current weights, if known.
    current: Option<Vec<f64>>,
}

impl DirectTracker {
    fn predictions(&mut self) -> Result<Vec<f64>> {
        match self.current.take() {
            Some(p) => Ok(p),
            None => forward_batch(&self.config, &self.w, &self.primary),
        }
    }
}

impl Tracker for DirectTracker {
    fn step(&mut self, _t: usize, x: &[f64], y: f64, loss: LossKind, eta: f64) -> Result<f64> {
        self.current = None;
        Ok(train_step(&self.config, &mut self.w, x, y, loss, eta)?.loss)
    }

    fn record(
        &mut self,
        t: usize,
        x: &[f64],
        y: f64,
        loss: LossKind,
        eta: f64,
        option: SimilarityOption,
    ) -> Result<Row> {
        let pre = self.predictions()?;
        let before = self.w.clone();
        let info = train_step(&self.config, &mut self.w, x, y, loss, eta)?;
        let post = forward_batch(&self.config, &self.w, &self.primary)?;
        self.current = Some(post.clone());
        if !is_degenerate(option, pre[t], post[t], info.dl_df) {
            return Ok(Row::Direct(similarity_row(
                option, t, pre, post, info.dl_df, eta,
            )?));
        }
        let mut trial_w = before;
        let trial = train_step(&self.config, &mut trial_w, x, y, loss, eta / 10.0)?;
        let trial_post = forward_batch(&self.config, &trial_w, &self.primary)?;
        if is_degenerate(option, pre[t], trial_post[t], trial.dl_df) {
            Ok(Row::Zero)
        } else {
            Ok(Row::Fallback(similarity_row(
                option,
                t,
                pre,
                trial_post,
                trial.dl_df,
                eta / 10.0,
            )?))
        }
    }
}

/// Where the recording run starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialWeights {
    WarmUp,
    /// Freshly initialized weights, no warm-up.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clusterer {
    /// K-means on the rows of the symmetrized matrix.
    KmeansRows,
    /// Kernel K-means on the symmetrized matrix.
    Kernel,
    /// Kernel K-means on the unit-diagonal normalized matrix.
    NormalizedKernel,
}

impl Clusterer {
    pub fn default_for(option: SimilarityOption) -> Self {
        match option {
            SimilarityOption::Relative => Clusterer::KmeansRows,
            SimilarityOption::Kernelized => Clusterer::Kernel,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Clusterer::KmeansRows => "kmeans_rows",
            Clusterer::Kernel => "kernel",
            Clusterer::NormalizedKernel => "normalized_kernel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub loss: LossKind,
    pub option: SimilarityOption,
    pub clusterer: Clusterer,
    /// Learning rate for warm-up and recording.
    pub eta: LearningRate,
    pub warmup_epochs: usize,
    /// Early-stop threshold on training accuracy during warm-up.
    pub warmup_target: Option<f64>,
    pub weights: InitialWeights,
    pub record_epochs: usize,
    pub normalization: Normalization,
    pub restarts: usize,
    pub engine: Engine,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(
        network: NetworkConfig,
        loss: LossKind,
        option: SimilarityOption,
        seed: u64,
    ) -> Self {
        PipelineConfig {
            network: network.with_loss(loss),
            loss,
            option,
            clusterer: Clusterer::default_for(option),
            eta: LearningRate::Auto(0.1),
            warmup_epochs: 5,
            warmup_target: Some(0.97),
            weights: InitialWeights::WarmUp,
            record_epochs: 1,
            normalization: Normalization::None,
            restarts: 10,
            engine: Engine::Auto,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub result: ClusteringResult,
    /// Symmetrized similarity matrix that was clustered.
    pub similarity: SimilarityMatrix,
    pub eta: f64,
    pub warmup_epochs_run: usize,
    pub warmup_accuracy: f64,
    pub fallback_rows: Vec<usize>,
    pub zero_rows: Vec<usize>,
}

/// Applies the configured normalization jointly to both sets.
pub(crate) fn normalized_pair(
    primary: &LabeledSet,
    auxiliary: &LabeledSet,
    normalization: Normalization,
) -> (LabeledSet, LabeledSet) {
    match normalization {
        Normalization::None => (primary.clone(), auxiliary.clone()),
        Normalization::Standardized => {
            let mut all = primary.features.clone();
            all.extend(auxiliary.features.iter().cloned());
            standardize_rows(&mut all);
            let aux_features = all.split_off(primary.len());
            (
                LabeledSet {
                    features: all,
                    ..primary.clone()
                },
                LabeledSet {
                    features: aux_features,
                    ..auxiliary.clone()
                },
            )
        }
    }
}

/// Warm-up (or random weights), similarity recording, symmetrization and
/// clustering into two groups, scored against the primary subclass labels.
pub fn run_pipeline(
    primary: &LabeledSet,
    auxiliary: &LabeledSet,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let (primary, auxiliary) = normalized_pair(primary, auxiliary, cfg.normalization);
    let warm_epochs = match cfg.weights {
        InitialWeights::WarmUp => cfg.warmup_epochs,
        InitialWeights::Random => 0,
    };
    let warm = warm_up(
        &cfg.network,
        cfg.loss,
        &primary,
        &auxiliary,
        cfg.eta,
        warm_epochs,
        cfg.warmup_target,
        cfg.seed,
    )?;
    let build = build_similarity_with(
        &primary,
        &auxiliary,
        &cfg.network,
        cfg.loss,
        cfg.option,
        &warm.weights,
        warm.eta,
        cfg.record_epochs,
        cfg.seed.wrapping_add(1),
        cfg.engine,
    )?;
    let sym = symmetrize(&build.matrix);
    let opts = KmeansOptions {
        restarts: cfg.restarts,
        ..KmeansOptions::new(2, cfg.seed)
    };
    let mut result = match cfg.clusterer {
        Clusterer::KmeansRows => kmeans(&sym.rows(), &opts)?,
        Clusterer::Kernel => kernel_kmeans(&sym, &opts)?,
        Clusterer::NormalizedKernel => kernel_kmeans(&normalize_kernel(&sym)?, &opts)?,
    };
    result.accuracy = Some(clustering_accuracy(&result.assignments, &primary.labels)?);
    Ok(PipelineOutcome {
        result,
        similarity: sym,
        eta: warm.eta,
        warmup_epochs_run: warm.epochs_run,
        warmup_accuracy: warm.train_accuracy,
        fallback_rows: build.fallback_rows,
        zero_rows: build.zero_rows,
    })
}

/// K-means directly on the primary features.
pub fn baseline_kmeans(
    primary: &LabeledSet,
    seed: u64,
    restarts: usize,
) -> Result<ClusteringResult> {
    let opts = KmeansOptions {
        restarts,
        ..KmeansOptions::new(2, seed)
    };
    let mut r = kmeans(&primary.features, &opts)?;
    r.accuracy = Some(clustering_accuracy(&r.assignments, &primary.labels)?);
    Ok(r)
}

/// PCA to `d` dimensions followed by K-means.
pub fn baseline_pca_kmeans(
    primary: &LabeledSet,
    d: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusteringResult> {
    let projected = super::pca(&primary.features, d)?;
    let opts = KmeansOptions {
        restarts,
        ..KmeansOptions::new(2, seed)
    };
    let mut r = kmeans(&projected, &opts)?;
    r.accuracy = Some(clustering_accuracy(&r.assignments, &primary.labels)?);
    Ok(r)
}
