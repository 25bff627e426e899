//! Command-line front end. Every run writes into one directory with fixed
//! file names; `summary.csv` echoes the fully resolved configuration.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::clustering::{
    baseline_kmeans, baseline_pca_kmeans, run_pipeline, Clusterer, ClusteringResult, Engine,
    InitialWeights, LabeledSet, PipelineConfig, Role, SimilarityOption,
};
use crate::data_io::{
    load_mnist, resolve_data_dir, sample_pair_subset, write_csv, Field, Normalization, Split,
    Table,
};
use crate::elasticity::{
    check_eq4, run_elasticity_experiment, ElasticityConfig, Eq4Config, InputScaling,
    LearningRate,
};
use crate::error::{Error, Result};
use crate::manifolds::{generate, ManifoldId};
use crate::nn::{Activation, LossKind, NetworkConfig, SecondLayerMode};

#[derive(Debug, Parser)]
#[command(name = "elastica", version, about = "Local elasticity experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prediction-change vs geodesic-distance correlation on a synthetic manifold.
    Simulate(SimulateArgs),
    /// Similarity-based clustering of an MNIST digit pair.
    Cluster(ClusterArgs),
    /// Compare the two-layer ratio formula with measured SGD updates.
    CheckEq4(CheckEq4Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Sigmoid,
    Identity,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Identity => Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    L2,
    Bce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::L2 => LossKind::L2,
            LossArg::Bce => LossKind::Bce,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputLayerArg {
    Trainable,
    FixedSigns,
}

impl From<OutputLayerArg> for SecondLayerMode {
    fn from(m: OutputLayerArg) -> Self {
        match m {
            OutputLayerArg::Trainable => SecondLayerMode::Trainable,
            OutputLayerArg::FixedSigns => SecondLayerMode::FixedSigns,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetworkArgs {
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationArg,
    /// Hidden width (each hidden layer when --depth 3).
    #[arg(long, default_value_t = 40960)]
    pub width: usize,
    /// Number of weight layers: 2 or 3.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub depth: u8,
    #[arg(long, value_enum, default_value = "trainable")]
    pub output_layer: OutputLayerArg,
    #[arg(long, value_enum, default_value = "l2")]
    pub loss: LossArg,
    /// Learning rate: a number, or `auto:<fraction>` to scale by the mean
    /// tangent-kernel diagonal at initialization.
    #[arg(long)]
    pub eta: Option<String>,
}

impl NetworkArgs {
    fn config(&self, input_dim: usize) -> NetworkConfig {
        let act = self.activation.into();
        let base = if self.depth == 3 {
            NetworkConfig::three_layer(input_dim, [self.width, self.width], act)
        } else {
            NetworkConfig::two_layer(input_dim, self.width, act)
        };
        base.with_loss(self.loss.into())
            .with_mode(self.output_layer.into())
    }

    fn eta(&self, default: LearningRate) -> Result<LearningRate> {
        self.eta.as_deref().map_or(Ok(default), str::parse)
    }

    fn echo(&self, eta: LearningRate, out: &mut Vec<(&'static str, Field)>) {
        out.push(("activation", activation_name(self.activation).into()));
        out.push(("width", self.width.into()));
        out.push(("depth", usize::from(self.depth).into()));
        out.push((
            "output_layer",
            match self.output_layer {
                OutputLayerArg::Trainable => "trainable",
                OutputLayerArg::FixedSigns => "fixed-signs",
            }
            .into(),
        ));
        out.push(("loss", LossKind::from(self.loss).name().into()));
        out.push(("eta", eta.to_string().into()));
    }
}

fn activation_name(a: ActivationArg) -> &'static str {
    Activation::from(a).name()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    Raw,
    Standardized,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "torus")]
    pub manifold: String,
    #[command(flatten)]
    pub net: NetworkArgs,
    #[arg(long, default_value_t = 200)]
    pub points_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Epochs trained before recording starts.
    #[arg(long, default_value_t = 1)]
    pub record_after: usize,
    /// Same-class probes per recorded update.
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    /// Neighbors in the geodesic graph.
    #[arg(long, default_value_t = 10)]
    pub neighbors: usize,
    #[arg(long, value_enum, default_value = "raw")]
    pub scaling: ScalingArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Run directory (default: runs/simulate-<manifold>-<activation>-<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptionArg {
    Relative,
    Kernelized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClustererArg {
    Auto,
    KmeansRows,
    Kernel,
    NormalizedKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Warmup,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    None,
    Kmeans,
    PcaKmeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    None,
    Standardized,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    /// The two digits to separate, e.g. 5,8.
    #[arg(long, value_delimiter = ',', required = true)]
    pub primary: Vec<u8>,
    /// Auxiliary digits, e.g. 3,9.
    #[arg(long, value_delimiter = ',', required = true)]
    pub aux: Vec<u8>,
    #[arg(long, default_value_t = 1000)]
    pub n_primary: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_aux: usize,
    #[arg(long, value_enum, default_value = "relative")]
    pub option: OptionArg,
    #[arg(long, value_enum, default_value = "auto")]
    pub clusterer: ClustererArg,
    #[command(flatten)]
    pub net: NetworkArgs,
    #[arg(long, default_value_t = 5)]
    pub warmup_epochs: usize,
    /// Stop warm-up once training accuracy reaches this (<= 0 disables).
    #[arg(long, default_value_t = 0.97)]
    pub warmup_target: f64,
    #[arg(long, value_enum, default_value = "warmup")]
    pub weights: WeightsArg,
    /// Recording epochs; rows are averaged over them.
    #[arg(long, default_value_t = 1)]
    pub record_epochs: usize,
    #[arg(long, value_enum, default_value = "none")]
    pub normalization: NormalizationArg,
    /// Run a baseline on the raw primary features instead of the pipeline.
    #[arg(long, value_enum, default_value = "none")]
    pub baseline: BaselineArg,
    #[arg(long, default_value_t = 50)]
    pub pca_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory with the MNIST IDX files (default: $ELASTICA_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Run directory (default: runs/cluster-<primary>-<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckEq4Args {
    #[arg(long, default_value_t = 4096)]
    pub width: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub eta: f64,
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    #[arg(long, default_value_t = 10)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    /// Required fraction of agreeing eligible pairs.
    #[arg(long, default_value_t = 0.95)]
    pub pass_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory (default: runs/check-eq4-<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn prepare_dir(out: Option<PathBuf>, default: String) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(default));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_summary(dir: &Path, fields: Vec<(&'static str, Field)>) -> Result<()> {
    let mut t = Table::new(["key", "value"]);
    for (k, v) in fields {
        t.push(vec![k.into(), v]);
    }
    write_csv(&dir.join("summary.csv"), &t)
}

/// Runs the correlation experiment and returns its summary.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<(&'static str, Field)>> {
    let manifold: ManifoldId = args.manifold.parse()?;
    let sample = generate(manifold, args.points_per_class, args.seed)?;
    let net = args.net.config(sample.dim());
    let eta = args.net.eta(LearningRate::Auto(0.5))?;
    let cfg = ElasticityConfig {
        eta,
        epochs: args.epochs,
        n_probe_pairs: args.probes,
        record_after: args.record_after,
        neighbors: args.neighbors,
        scaling: match args.scaling {
            ScalingArg::Raw => InputScaling::Raw,
            ScalingArg::Standardized => InputScaling::Standardized,
        },
        ..ElasticityConfig::new(net, args.net.loss.into(), args.seed)
    };
    let dir = prepare_dir(
        args.out.clone(),
        format!(
            "simulate-{}-{}-{}",
            manifold,
            activation_name(args.net.activation),
            args.seed
        ),
    )?;
    let trace = run_elasticity_experiment(&sample, &cfg)?;
    write_csv(&dir.join("trace.csv"), &trace.to_table())?;
    sample.write_csv(&dir.join("sample.csv"))?;

    let mut s: Vec<(&'static str, Field)> = vec![
        ("command", "simulate".into()),
        ("manifold", manifold.name().into()),
    ];
    args.net.echo(eta, &mut s);
    s.extend([
        ("points_per_class", args.points_per_class.into()),
        ("epochs", args.epochs.into()),
        ("record_after", args.record_after.into()),
        ("probes", args.probes.into()),
        ("neighbors", args.neighbors.into()),
        (
            "scaling",
            match args.scaling {
                ScalingArg::Raw => "raw",
                ScalingArg::Standardized => "standardized",
            }
            .into(),
        ),
        ("seed", (args.seed as usize).into()),
    ]);
    s.extend(trace.summary_fields());
    write_summary(&dir, s.clone())?;
    Ok(s)
}

fn assignments_table(primary: &LabeledSet, r: &ClusteringResult) -> Table {
    let mut t = Table::new(["index", "true_label", "cluster"]);
    for (i, (&l, &c)) in primary.labels.iter().zip(&r.assignments).enumerate() {
        t.push(vec![i.into(), l.into(), c.into()]);
    }
    t
}

fn digits(d: &[u8]) -> String {
    d.iter().map(u8::to_string).collect::<Vec<_>>().join(",")
}

/// Runs the clustering pipeline (or a baseline) on an MNIST digit pair.
pub fn cmd_cluster(args: &ClusterArgs) -> Result<Vec<(&'static str, Field)>> {
    if args.primary.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "--primary needs exactly two digits, got {}",
            args.primary.len()
        )));
    }
    if let Some(d) = args.primary.iter().chain(&args.aux).find(|&&d| d > 9) {
        return Err(Error::InvalidArgument(format!("{d} is not a digit")));
    }
    let data_dir = resolve_data_dir(args.data_dir.as_deref())?;
    let mnist = load_mnist(&data_dir, Split::Train)?;
    let primary = sample_pair_subset(&mnist, &args.primary, args.n_primary, args.seed)?;
    let auxiliary = sample_pair_subset(&mnist, &args.aux, args.n_aux, args.seed.wrapping_add(7919))?
        .with_role(Role::Auxiliary);
    let dir = prepare_dir(
        args.out.clone(),
        format!("cluster-{}-{}", digits(&args.primary).replace(',', "v"), args.seed),
    )?;
    let eta = args.net.eta(LearningRate::Auto(0.1))?;

    let mut s: Vec<(&'static str, Field)> = vec![
        ("command", "cluster".into()),
        ("primary", digits(&args.primary).into()),
        ("aux", digits(&args.aux).into()),
        ("n_primary", args.n_primary.into()),
        ("n_aux", args.n_aux.into()),
    ];

    let result = match args.baseline {
        BaselineArg::Kmeans | BaselineArg::PcaKmeans => {
            let r = if args.baseline == BaselineArg::Kmeans {
                baseline_kmeans(&primary, args.seed, args.restarts)?
            } else {
                baseline_pca_kmeans(&primary, args.pca_dim, args.seed, args.restarts)?
            };
            s.push((
                "baseline",
                if args.baseline == BaselineArg::Kmeans {
                    "kmeans"
                } else {
                    "pca-kmeans"
                }
                .into(),
            ));
            s.push(("pca_dim", args.pca_dim.into()));
            s.push(("restarts", args.restarts.into()));
            s.push(("seed", (args.seed as usize).into()));
            r
        }
        BaselineArg::None => {
            let option = match args.option {
                OptionArg::Relative => SimilarityOption::Relative,
                OptionArg::Kernelized => SimilarityOption::Kernelized,
            };
            let net = args.net.config(primary.dim());
            let mut cfg = PipelineConfig::new(net, args.net.loss.into(), option, args.seed);
            cfg.clusterer = match args.clusterer {
                ClustererArg::Auto => Clusterer::default_for(option),
                ClustererArg::KmeansRows => Clusterer::KmeansRows,
                ClustererArg::Kernel => Clusterer::Kernel,
                ClustererArg::NormalizedKernel => Clusterer::NormalizedKernel,
            };
            cfg.eta = eta;
            cfg.warmup_epochs = args.warmup_epochs;
            cfg.warmup_target = (args.warmup_target > 0.0).then_some(args.warmup_target);
            cfg.weights = match args.weights {
                WeightsArg::Warmup => InitialWeights::WarmUp,
                WeightsArg::Random => InitialWeights::Random,
            };
            cfg.record_epochs = args.record_epochs;
            cfg.normalization = match args.normalization {
                NormalizationArg::None => Normalization::None,
                NormalizationArg::Standardized => Normalization::Standardized,
            };
            cfg.restarts = args.restarts;
            cfg.engine = Engine::Auto;
            let outcome = run_pipeline(&primary, &auxiliary, &cfg)?;
            outcome.similarity.write_csv(&dir.join("similarity.csv"))?;
            s.push(("baseline", "none".into()));
            s.push(("option", option.name().into()));
            s.push(("clusterer", cfg.clusterer.name().into()));
            args.net.echo(eta, &mut s);
            s.extend([
                ("warmup_epochs", args.warmup_epochs.into()),
                ("warmup_target", args.warmup_target.into()),
                (
                    "weights",
                    match args.weights {
                        WeightsArg::Warmup => "warmup",
                        WeightsArg::Random => "random",
                    }
                    .into(),
                ),
                ("record_epochs", args.record_epochs.into()),
                (
                    "normalization",
                    match args.normalization {
                        NormalizationArg::None => "none",
                        NormalizationArg::Standardized => "standardized",
                    }
                    .into(),
                ),
                ("restarts", args.restarts.into()),
                ("seed", (args.seed as usize).into()),
                ("eta_used", outcome.eta.into()),
                ("warmup_epochs_run", outcome.warmup_epochs_run.into()),
                ("warmup_train_accuracy", outcome.warmup_accuracy.into()),
                ("fallback_rows", outcome.fallback_rows.len().into()),
                ("zero_rows", outcome.zero_rows.len().into()),
            ]);
            outcome.result
        }
    };
    write_csv(&dir.join("assignments.csv"), &assignments_table(&primary, &result))?;
    s.push(("objective", result.objective.into()));
    s.push((
        "accuracy",
        result.accuracy.map_or(Field::Empty, Field::from),
    ));
    write_summary(&dir, s.clone())?;
    Ok(s)
}

/// Compares predicted and measured ratios; the summary's `passed` field
/// reports whether the agreement rate reaches `pass_rate`.
pub fn cmd_check_eq4(args: &CheckEq4Args) -> Result<Vec<(&'static str, Field)>> {
    let cfg = Eq4Config {
        width: args.width,
        input_dim: args.input_dim,
        eta: args.eta,
        pairs: args.pairs,
        tolerance: args.tolerance,
        seed: args.seed,
        ..Eq4Config::default()
    };
    let dir = prepare_dir(args.out.clone(), format!("check-eq4-{}", args.seed))?;
    let report = check_eq4(&cfg)?;
    write_csv(&dir.join("pairs.csv"), &report.to_table())?;
    let rate = report.agreement_rate();
    let s: Vec<(&'static str, Field)> = vec![
        ("command", "check-eq4".into()),
        ("width", args.width.into()),
        ("eta", args.eta.into()),
        ("pairs", args.pairs.into()),
        ("input_dim", args.input_dim.into()),
        ("tolerance", args.tolerance.into()),
        ("pass_rate", args.pass_rate.into()),
        ("seed", (args.seed as usize).into()),
        ("eligible", report.eligible().into()),
        ("agreeing", report.agreeing().into()),
        ("excluded", report.excluded.into()),
        ("agreement_rate", rate.into()),
        ("passed", (rate >= args.pass_rate).into()),
    ];
    write_summary(&dir, s.clone())?;
    Ok(s)
}

fn print_summary(fields: &[(&'static str, Field)]) {
    for (k, v) in fields {
        println!("{k}: {v}");
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on runtime or data errors, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::CheckEq4(a) => cmd_check_eq4(a),
    };
    match outcome {
        Ok(summary) => {
            print_summary(&summary);
            0
        }
        Err(e @ (Error::InvalidArgument(_) | Error::InvalidConfig(_))) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
