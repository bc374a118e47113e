use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use transgnn_core::experiment::{
    cmd_ablation, cmd_gradcheck, cmd_prepare, cmd_robustness, cmd_train, fault_name, ClusterTarget,
    ExperimentManifest,
};
use transgnn_core::model::{BackboneConfig, BackboneKind, Fault};
use transgnn_core::objective::{LossCombo, NegativeSamplingConfig, Reduction};
use transgnn_core::simrank::SimRankConfig;
use transgnn_core::train::{ObjectiveMode, TrainConfig};
use transgnn_core::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "transgnn",
    version,
    about = "Transitivity-aware GNN experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the pruned transitivity graph and write it as a dataset directory.
    PrepareTrans(Common),
    /// Train the baseline and the transitivity model over several seeds.
    Train {
        #[command(flatten)]
        common: Common,
        /// Skip the transitivity stage and train only the baseline.
        #[arg(long)]
        baseline_only: bool,
    },
    /// Add/remove 0-50% of the edges, retrain, and test on the clean graph.
    Robustness(Common),
    /// Compare the five loss combinations against the baseline.
    Ablation(Common),
    /// Finite-difference gradient check on a 12-node fixture.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Backward rule broken on purpose for the negative control.
        #[arg(long, value_enum, default_value_t = FaultArg::LogSoftmax)]
        fault: FaultArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    LogSoftmax,
    Relu,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Gcn,
    Sgc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Supervised,
    Unsupervised,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterOnArg {
    Trans,
    Origin,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    dataset_dir: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = BackboneArg::Gcn)]
    backbone: BackboneArg,
    /// Defaults to the per-dataset value when the directory name is known.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    simrank_decay: f64,
    #[arg(long, default_value_t = 10)]
    simrank_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    simrank_tol: f64,
    /// Defaults to max(2, ceil(n / 200)).
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, value_enum, default_value_t = ClusterOnArg::Trans)]
    cluster_on: ClusterOnArg,
    #[arg(long, default_value = "base+trans")]
    combo: String,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    sgc_k: usize,
    /// Stacked SGC layers; only 1 is supported.
    #[arg(long, default_value_t = 1)]
    sgc_layers: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Average the graph losses over training nodes instead of summing.
    #[arg(long)]
    avg_loss: bool,
    /// Scale each feature row to unit L1 norm.
    #[arg(long)]
    normalize_features: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::Supervised)]
    mode: ModeArg,
    /// Negative samples per positive pair (unsupervised mode).
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    /// Positive pairs from random walks (length 3, 2 per node) instead of neighbors.
    #[arg(long)]
    walks: bool,
    /// Number of runs; run i uses seed `seed + i`.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    partition_seed: u64,
    #[arg(long, default_value_t = 0)]
    perturb_seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write per-figure x/y series under `<out>/plot/`.
    #[arg(long)]
    plot_data: bool,
    /// SimRank cache directory.
    #[arg(long, env = "TRANSGNN_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
}

impl Common {
    fn manifest(&self) -> Result<ExperimentManifest, Error> {
        if self.sgc_layers != 1 {
            return Err(Error::InvalidArgument(
                "--sgc-layers is reserved; only 1 is supported".into(),
            ));
        }
        let kind = match self.backbone {
            BackboneArg::Gcn => BackboneKind::Gcn,
            BackboneArg::Sgc => BackboneKind::Sgc,
        };
        let combo: LossCombo = self.combo.parse()?;
        let mut m = ExperimentManifest::new(&self.dataset_dir, &self.out);
        if let Some(t) = self.threshold {
            m.threshold = t;
        }
        m.train = TrainConfig {
            backbone: BackboneConfig {
                kind,
                hidden_dim: self.hidden_dim,
                num_layers: self.layers,
                sgc_k: self.sgc_k,
                dropout: self.dropout,
            },
            combo,
            lr: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            weight_decay: self.weight_decay,
            reduction: if self.avg_loss {
                Reduction::Mean
            } else {
                Reduction::Sum
            },
            mode: match self.mode {
                ModeArg::Supervised => ObjectiveMode::Supervised,
                ModeArg::Unsupervised => ObjectiveMode::Unsupervised,
            },
            negatives: NegativeSamplingConfig {
                q: self.negatives,
                use_walks: self.walks,
                reduction: if self.avg_loss {
                    Reduction::Mean
                } else {
                    Reduction::Sum
                },
                ..NegativeSamplingConfig::default()
            },
            zero_init_head: false,
        };
        m.simrank = SimRankConfig {
            decay: self.simrank_decay,
            max_iters: self.simrank_iters,
            tolerance: self.simrank_tol,
        };
        m.clusters = self.clusters;
        m.cluster_on = match self.cluster_on {
            ClusterOnArg::Trans => ClusterTarget::Transitivity,
            ClusterOnArg::Origin => ClusterTarget::Origin,
        };
        m.normalize_features = self.normalize_features;
        m.partition_seed = self.partition_seed;
        m.perturb_seed = self.perturb_seed;
        m.seeds = (0..self.seeds as u64).map(|i| self.seed + i).collect();
        m.cache_dir = self.cache_dir.clone();
        m.jobs = self.jobs;
        m.plot_data = self.plot_data;
        m.validate()?;
        Ok(m)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) | Error::Io { .. } | Error::Parse { .. } | Error::Format(_) => {
            EXIT_IO
        }
        Error::NonFinite(_) | Error::Numeric(_) => EXIT_NUMERIC,
        Error::InvalidArgument(_) | Error::ShapeMismatch { .. } | Error::NodeOutOfRange { .. } => {
            EXIT_USAGE
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::PrepareTrans(c) => {
            let r = cmd_prepare(&c.manifest()?)?;
            if r.edges_before_pruning == 0 {
                log::warn!("transitivity graph is empty at threshold {}", r.threshold);
            }
            println!(
                "{}: {} origin edges; {} transitivity edges at threshold {} ({} after pruning into {} clusters, cut {})",
                r.dataset,
                r.origin_edges,
                r.edges_before_pruning,
                r.threshold,
                r.edges_after_pruning,
                r.clusters,
                r.edge_cut
            );
        }
        Command::Train {
            common,
            baseline_only,
        } => {
            let out = cmd_train(&common.manifest()?, baseline_only)?;
            if let Some(t) = &out.transitivity {
                println!(
                    "transitivity edges: {} before pruning, {} after",
                    t.edges_before_pruning, t.edges_after_pruning
                );
            }
            for (model, s) in &out.summaries {
                println!(
                    "{model}: accuracy {:.2} ± {:.2}, weighted F1 {:.2} ± {:.2} over {} runs (val {:.2})",
                    100.0 * s.mean_accuracy,
                    100.0 * s.std_accuracy,
                    100.0 * s.mean_f1,
                    100.0 * s.std_f1,
                    s.runs,
                    100.0 * s.mean_val_accuracy
                );
            }
        }
        Command::Robustness(c) => {
            for cell in cmd_robustness(&c.manifest()?)? {
                let accs: Vec<String> = cell
                    .summaries
                    .iter()
                    .map(|(m, s)| format!("{m} {:.2}", 100.0 * s.mean_accuracy))
                    .collect();
                println!(
                    "{} {:>3.0}%: {}",
                    cell.mode.as_str(),
                    cell.rate * 100.0,
                    accs.join(", ")
                );
            }
        }
        Command::Ablation(c) => {
            let out = cmd_ablation(&c.manifest()?)?;
            for (combo, s, b) in &out.summaries {
                println!(
                    "{combo:<15} {:.2} ± {:.2} (baseline {:.2})",
                    100.0 * s.mean_accuracy,
                    100.0 * s.std_accuracy,
                    100.0 * b.mean_accuracy
                );
            }
        }
        Command::Gradcheck { out, fault, seed } => {
            let fault = match fault {
                FaultArg::LogSoftmax => Fault::LogSoftmaxNoCorrection,
                FaultArg::Relu => Fault::ReluPassThrough,
            };
            let suite = cmd_gradcheck(out.as_deref(), fault, seed)?;
            for c in &suite.cases {
                println!(
                    "{} {:<12} {:<15} {:<26} max_rel_err {:.3e} {}",
                    c.backbone,
                    c.mode.as_str(),
                    c.combo,
                    c.fault.map_or("clean", fault_name),
                    c.max_relative_error,
                    if c.passed { "PASS" } else { "FAIL" }
                );
            }
            if !suite.passed() {
                return Err(Error::Numeric("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
