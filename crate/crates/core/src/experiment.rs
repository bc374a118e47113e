//! Experiment drivers behind the CLI subcommands: transitivity preparation,
//! repeated training, the robustness sweep, the loss ablation and the
//! gradient check. All outputs are CSV or JSON and byte-stable for a fixed
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{
    load_dataset, perturb_edges, save_dataset, Graph, NodeData, PerturbMode, PerturbationSpec,
    Split,
};
use crate::model::{BackboneConfig, BackboneKind, Branch, DualModel, Fault};
use crate::nn::{grad_check, SparseMatrix};
use crate::objective::{draw_ns_batch, LossCombo, NsBatch, ABLATION_COMBOS};
use crate::partition::{default_cluster_count, edge_cut, partition_graph, Partition};
use crate::simrank::{simrank_cached, SimRankConfig};
use crate::train::{
    evaluate, objective_step, run_baseline, train, ObjectiveInputs, ObjectiveMode, TrainConfig,
};
use crate::transitivity::{build_transitivity_graph, default_threshold, prune_intercluster};

/// Which graph the partitioner clusters before pruning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterTarget {
    /// The transitivity graph G′.
    #[default]
    Transitivity,
    /// The origin graph G.
    Origin,
}

impl FromStr for ClusterTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trans" | "transitivity" => Ok(Self::Transitivity),
            "origin" => Ok(Self::Origin),
            _ => Err(Error::InvalidArgument(format!(
                "unknown cluster target {s:?} (expected trans or origin)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentManifest {
    pub dataset_dir: PathBuf,
    pub dataset_name: String,
    /// Template for every run; its `seed` is replaced per run.
    pub train: TrainConfig,
    pub threshold: f64,
    pub simrank: SimRankConfig,
    /// `None` picks [`default_cluster_count`] for the clustered graph.
    pub clusters: Option<usize>,
    pub cluster_on: ClusterTarget,
    pub partition_seed: u64,
    pub perturb_seed: u64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub jobs: usize,
    pub plot_data: bool,
    /// Scale feature rows to unit L1 norm after loading.
    pub normalize_features: bool,
}

impl ExperimentManifest {
    /// Defaults for a dataset directory; the threshold comes from the
    /// per-dataset table when the directory name is recognized.
    pub fn new(dataset_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let dataset_dir = dataset_dir.into();
        let dataset_name = dataset_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self {
            threshold: default_threshold(&dataset_name).unwrap_or(0.4),
            dataset_name,
            dataset_dir,
            train: TrainConfig::default(),
            simrank: SimRankConfig::default(),
            clusters: None,
            cluster_on: ClusterTarget::default(),
            partition_seed: 0,
            perturb_seed: 0,
            seeds: (0..10).collect(),
            out_dir: out_dir.into(),
            cache_dir: None,
            jobs: 1,
            plot_data: false,
            normalize_features: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.simrank.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one seed is required".into(),
            ));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "threshold {} must be finite and >= 0",
                self.threshold
            )));
        }
        if self.clusters == Some(0) {
            return Err(Error::InvalidArgument("cluster count must be >= 1".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }

    /// Loads the dataset, applying feature normalization if requested.
    pub fn load_graph(&self) -> Result<Graph> {
        let g = load_dataset(&self.dataset_dir)?;
        if !self.normalize_features {
            return Ok(g);
        }
        let data = NodeData::new(
            g.features().row_normalized(),
            g.labels().to_vec(),
            g.split().to_vec(),
            g.num_classes(),
        )?;
        Graph::new(Arc::new(data), g.edges().to_vec())
    }

    fn model_names(&self) -> (String, String) {
        let base = self.train.backbone.kind.as_str().to_ascii_uppercase();
        (base.clone(), format!("Trans{base}"))
    }
}

/// Sidecar written next to a prepared transitivity graph.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitivityReport {
    pub dataset: String,
    pub num_nodes: usize,
    pub origin_edges: usize,
    pub threshold: f64,
    pub simrank_decay: f64,
    pub simrank_max_iters: usize,
    pub simrank_tolerance: f64,
    pub simrank_iterations_run: usize,
    pub simrank_converged: bool,
    pub cluster_on: ClusterTarget,
    pub clusters: usize,
    pub edge_cut: usize,
    pub edges_before_pruning: usize,
    pub edges_after_pruning: usize,
}

pub struct PreparedTransitivity {
    /// G″, the pruned transitivity graph.
    pub graph: Graph,
    /// G′ before pruning.
    pub unpruned: Graph,
    pub partition: Partition,
    pub report: TransitivityReport,
}

/// SimRank, threshold and cluster pruning for `g` under the manifest.
pub fn prepare_transitivity(g: &Graph, m: &ExperimentManifest) -> Result<PreparedTransitivity> {
    let sim = simrank_cached(g, &m.simrank, m.cache_dir.as_deref())?;
    let trans = build_transitivity_graph(g, &sim, m.threshold)?;
    let clustered = match m.cluster_on {
        ClusterTarget::Transitivity => trans.graph(),
        ClusterTarget::Origin => g,
    };
    let n = g.num_nodes();
    let k = m
        .clusters
        .unwrap_or_else(|| default_cluster_count(n))
        .min(n.max(1));
    let partition = if n == 0 {
        Partition::new(Vec::new(), 1)?
    } else {
        partition_graph(clustered, k, m.partition_seed)?
    };
    let pruned = prune_intercluster(&trans, &partition)?;
    let report = TransitivityReport {
        dataset: m.dataset_name.clone(),
        num_nodes: n,
        origin_edges: g.num_edges(),
        threshold: m.threshold,
        simrank_decay: m.simrank.decay,
        simrank_max_iters: m.simrank.max_iters,
        simrank_tolerance: m.simrank.tolerance,
        simrank_iterations_run: sim.iterations_run(),
        simrank_converged: sim.converged(),
        cluster_on: m.cluster_on,
        clusters: partition.k(),
        edge_cut: edge_cut(clustered, &partition)?,
        edges_before_pruning: trans.num_edges(),
        edges_after_pruning: pruned.num_edges(),
    };
    info!(
        "{}: {} transitivity edges at threshold {}, {} after pruning with k = {}",
        report.dataset,
        report.edges_before_pruning,
        report.threshold,
        report.edges_after_pruning,
        report.clusters
    );
    Ok(PreparedTransitivity {
        unpruned: trans.graph().clone(),
        graph: pruned.into_graph(),
        partition,
        report,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<out>/transitivity/` (a dataset directory holding G″),
/// `<out>/transitivity.json` and `<out>/partition.tsv`.
pub fn cmd_prepare(m: &ExperimentManifest) -> Result<TransitivityReport> {
    m.validate()?;
    let g = m.load_graph()?;
    let prepared = prepare_transitivity(&g, m)?;
    let dir = m.out_dir.join("transitivity");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_dataset(&prepared.graph, &dir)?;
    let json =
        serde_json::to_string_pretty(&prepared.report).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&m.out_dir.join("transitivity.json"), json + "\n")?;
    prepared
        .partition
        .write_tsv(&m.out_dir.join("partition.tsv"))?;
    Ok(prepared.report)
}

/// NaN when the graph has no validation nodes.
fn val_accuracy(model: &DualModel, g: &Graph) -> Result<f64> {
    if g.nodes_in(Split::Val).is_empty() {
        return Ok(f64::NAN);
    }
    Ok(evaluate(model, g, Split::Val)?.accuracy)
}

/// Test metrics of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub model: String,
    pub seed: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub val_accuracy: f64,
    pub selected_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_val_accuracy: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(results: &[&RunResult]) -> Summary {
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = results.iter().map(|r| r.weighted_f1).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let (mean_f1, std_f1) = mean_std(&f1);
    let val: Vec<f64> = results.iter().map(|r| r.val_accuracy).collect();
    Summary {
        runs: results.len(),
        mean_accuracy,
        std_accuracy,
        mean_f1,
        std_f1,
        mean_val_accuracy: mean_std(&val).0,
    }
}

fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.clone()
    }
}

/// Trains the baseline and, given G″, the transitivity model for one seed;
/// both are scored on `eval_graph`'s test split.
fn run_pair(
    cfg: &TrainConfig,
    train_graph: &Graph,
    trans_graph: Option<&Graph>,
    eval_graph: &Graph,
    names: &(String, String),
    seed: u64,
) -> Result<Vec<RunResult>> {
    let cfg = seeded(cfg, seed);
    let score = |model: &DualModel, name: &str, selected_epoch| -> Result<RunResult> {
        let test = evaluate(model, eval_graph, Split::Test)?;
        let val = val_accuracy(model, eval_graph)?;
        Ok(RunResult {
            model: name.to_string(),
            seed,
            accuracy: test.accuracy,
            weighted_f1: test.weighted_f1,
            val_accuracy: val,
            selected_epoch,
        })
    };
    let (base_model, base_hist) = run_baseline(&cfg, train_graph)?;
    let mut out = vec![score(&base_model, &names.0, base_hist.selected_epoch)?];
    if let Some(gt) = trans_graph {
        let (model, hist) = train(&cfg, train_graph, gt)?;
        out.push(score(&model, &names.1, hist.selected_epoch)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub results: Vec<RunResult>,
    /// `(model, summary)` in output order.
    pub summaries: Vec<(String, Summary)>,
    pub transitivity: Option<TransitivityReport>,
}

impl TrainOutcome {
    pub fn summary(&self, model: &str) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|(m, _)| m == model)
            .map(|(_, s)| s)
    }
}

fn summaries_by_model(results: &[RunResult]) -> Vec<(String, Summary)> {
    let mut models: Vec<&str> = Vec::new();
    for r in results {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    models
        .into_iter()
        .map(|name| {
            let rows: Vec<&RunResult> = results.iter().filter(|r| r.model == name).collect();
            (name.to_string(), summarize(&rows))
        })
        .collect()
}

/// Repeated training over the manifest's seeds. Writes `results.csv` and
/// `summary.csv`.
pub fn cmd_train(m: &ExperimentManifest, baseline_only: bool) -> Result<TrainOutcome> {
    m.validate()?;
    let g = m.load_graph()?;
    let prepared = if baseline_only {
        None
    } else {
        Some(prepare_transitivity(&g, m)?)
    };
    let outcome = train_on(m, &g, prepared.as_ref().map(|p| &p.graph), &g)?;
    let outcome = TrainOutcome {
        transitivity: prepared.map(|p| p.report),
        ..outcome
    };
    write_file(
        &m.out_dir.join("results.csv"),
        results_csv(&outcome.results),
    )?;
    write_file(
        &m.out_dir.join("summary.csv"),
        summary_csv(&outcome.summaries),
    )?;
    Ok(outcome)
}

fn train_on(
    m: &ExperimentManifest,
    train_graph: &Graph,
    trans_graph: Option<&Graph>,
    eval_graph: &Graph,
) -> Result<TrainOutcome> {
    let names = m.model_names();
    let per_seed: Vec<Vec<RunResult>> = m.pool()?.install(|| {
        m.seeds
            .par_iter()
            .map(|&s| run_pair(&m.train, train_graph, trans_graph, eval_graph, &names, s))
            .collect::<Result<_>>()
    })?;
    // Baseline rows first, then the transitivity model, each in seed order.
    let mut results: Vec<RunResult> = per_seed.iter().map(|r| r[0].clone()).collect();
    results.extend(per_seed.iter().filter_map(|r| r.get(1).cloned()));
    let summaries = summaries_by_model(&results);
    Ok(TrainOutcome {
        results,
        summaries,
        transitivity: None,
    })
}

pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = String::from("model,seed,accuracy,weighted_f1,val_accuracy,selected_epoch\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.model, r.seed, r.accuracy, r.weighted_f1, r.val_accuracy, r.selected_epoch
        );
    }
    out
}

pub fn summary_csv(summaries: &[(String, Summary)]) -> String {
    let mut out =
        String::from("model,runs,mean_accuracy,std_accuracy,mean_f1,std_f1,mean_val_accuracy\n");
    for (name, s) in summaries {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            name, s.runs, s.mean_accuracy, s.std_accuracy, s.mean_f1, s.std_f1, s.mean_val_accuracy
        );
    }
    out
}

pub const ROBUSTNESS_RATES: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Clone, Debug)]
pub struct RobustnessCell {
    pub mode: PerturbMode,
    pub rate: f64,
    pub results: Vec<RunResult>,
    pub summaries: Vec<(String, Summary)>,
}

/// For each mode and rate: perturb G, rebuild G″ on the noisy graph, train
/// both models on it and test on the clean graph. Writes `robustness.csv`
/// and `robustness_summary.csv` (and plot series with `plot_data`).
pub fn cmd_robustness(m: &ExperimentManifest) -> Result<Vec<RobustnessCell>> {
    m.validate()?;
    let g = m.load_graph()?;
    let mut cells = Vec::new();
    for mode in [PerturbMode::Add, PerturbMode::Remove] {
        for rate in ROBUSTNESS_RATES {
            let noisy = perturb_edges(
                &g,
                &PerturbationSpec {
                    mode,
                    rate,
                    seed: m.perturb_seed,
                },
            )?;
            let prepared = prepare_transitivity(&noisy, m)?;
            info!(
                "robustness {} {:.0}%: {} training edges, {} transitivity edges",
                mode.as_str(),
                rate * 100.0,
                noisy.num_edges(),
                prepared.graph.num_edges()
            );
            let outcome = train_on(m, &noisy, Some(&prepared.graph), &g)?;
            cells.push(RobustnessCell {
                mode,
                rate,
                results: outcome.results,
                summaries: outcome.summaries,
            });
        }
    }

    let mut rows = String::from("mode,rate,model,seed,accuracy,weighted_f1\n");
    let mut summary =
        String::from("mode,rate,model,runs,mean_accuracy,std_accuracy,mean_f1,std_f1\n");
    for c in &cells {
        for r in &c.results {
            let _ = writeln!(
                rows,
                "{},{:.1},{},{},{:.6},{:.6}",
                c.mode.as_str(),
                c.rate,
                r.model,
                r.seed,
                r.accuracy,
                r.weighted_f1
            );
        }
        for (name, s) in &c.summaries {
            let _ = writeln!(
                summary,
                "{},{:.1},{},{},{:.6},{:.6},{:.6},{:.6}",
                c.mode.as_str(),
                c.rate,
                name,
                s.runs,
                s.mean_accuracy,
                s.std_accuracy,
                s.mean_f1,
                s.std_f1
            );
        }
    }
    write_file(&m.out_dir.join("robustness.csv"), rows)?;
    write_file(&m.out_dir.join("robustness_summary.csv"), summary)?;

    if m.plot_data {
        let (base, trans) = m.model_names();
        for mode in [PerturbMode::Add, PerturbMode::Remove] {
            let mut series = format!("percent_edges_{},{base},{trans}\n", mode.as_str());
            for c in cells.iter().filter(|c| c.mode == mode) {
                let acc = |name: &str| {
                    c.summaries
                        .iter()
                        .find(|(n, _)| n == name)
                        .map_or(f64::NAN, |(_, s)| s.mean_accuracy)
                };
                let _ = writeln!(
                    series,
                    "{:.0},{:.6},{:.6}",
                    c.rate * 100.0,
                    acc(&base),
                    acc(&trans)
                );
            }
            write_file(
                &m.out_dir
                    .join("plot")
                    .join(format!("robustness_{}.csv", mode.as_str())),
                series,
            )?;
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub combo: String,
    pub seed: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub baseline_accuracy: f64,
    pub baseline_f1: f64,
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    /// `(combo, transitivity-model summary, baseline summary)`.
    pub summaries: Vec<(String, Summary, Summary)>,
}

impl AblationOutcome {
    pub fn mean_accuracy(&self, combo: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|(c, _, _)| c == combo)
            .map(|(_, s, _)| s.mean_accuracy)
    }
}

/// Trains the transitivity model under every ablation combo, each row
/// paired with the baseline for the same seed. Writes `ablation.csv` and
/// `ablation_summary.csv`.
pub fn cmd_ablation(m: &ExperimentManifest) -> Result<AblationOutcome> {
    m.validate()?;
    let g = m.load_graph()?;
    let prepared = prepare_transitivity(&g, m)?;
    let gt = &prepared.graph;
    let pool = m.pool()?;

    let baselines: Vec<(f64, f64, f64)> = pool.install(|| {
        m.seeds
            .par_iter()
            .map(|&s| {
                let (model, _) = run_baseline(&seeded(&m.train, s), &g)?;
                let r = evaluate(&model, &g, Split::Test)?;
                Ok((r.accuracy, r.weighted_f1, val_accuracy(&model, &g)?))
            })
            .collect::<Result<_>>()
    })?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for combo_str in ABLATION_COMBOS {
        let combo: LossCombo = combo_str.parse()?;
        let cfg = TrainConfig {
            combo,
            ..m.train.clone()
        };
        let runs: Vec<(f64, f64, f64)> = pool.install(|| {
            m.seeds
                .par_iter()
                .map(|&s| {
                    let (model, _) = train(&seeded(&cfg, s), &g, gt)?;
                    let r = evaluate(&model, &g, Split::Test)?;
                    Ok((r.accuracy, r.weighted_f1, val_accuracy(&model, &g)?))
                })
                .collect::<Result<_>>()
        })?;
        let mut trans = Vec::new();
        let mut base = Vec::new();
        for ((&seed, &(acc, f1, val)), &(bacc, bf1, bval)) in
            m.seeds.iter().zip(&runs).zip(&baselines)
        {
            rows.push(AblationRow {
                combo: combo_str.to_string(),
                seed,
                accuracy: acc,
                weighted_f1: f1,
                baseline_accuracy: bacc,
                baseline_f1: bf1,
            });
            let mk = |accuracy, weighted_f1, val_accuracy| RunResult {
                model: String::new(),
                seed,
                accuracy,
                weighted_f1,
                val_accuracy,
                selected_epoch: 0,
            };
            trans.push(mk(acc, f1, val));
            base.push(mk(bacc, bf1, bval));
        }
        summaries.push((
            combo_str.to_string(),
            summarize(&trans.iter().collect::<Vec<_>>()),
            summarize(&base.iter().collect::<Vec<_>>()),
        ));
    }

    let mut csv = String::from("combo,seed,accuracy,weighted_f1,baseline_accuracy,baseline_f1\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.combo, r.seed, r.accuracy, r.weighted_f1, r.baseline_accuracy, r.baseline_f1
        );
    }
    let mut sum = String::from(
        "combo,runs,mean_accuracy,std_accuracy,mean_f1,baseline_mean_accuracy,baseline_std_accuracy\n",
    );
    for (c, s, b) in &summaries {
        let _ = writeln!(
            sum,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            c, s.runs, s.mean_accuracy, s.std_accuracy, s.mean_f1, b.mean_accuracy, b.std_accuracy
        );
    }
    write_file(&m.out_dir.join("ablation.csv"), csv)?;
    write_file(&m.out_dir.join("ablation_summary.csv"), sum)?;
    if m.plot_data {
        let mut bars = String::from("combo,mean_accuracy\n");
        for (c, s, _) in &summaries {
            let _ = writeln!(bars, "{},{:.6}", c, s.mean_accuracy);
        }
        write_file(&m.out_dir.join("plot").join("ablation.csv"), bars)?;
    }
    Ok(AblationOutcome { rows, summaries })
}

/// Twelve nodes in two planted groups of six; features are a noisy group
/// indicator plus random columns. Four training nodes per group.
pub fn gradcheck_fixture(seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let d = 5;
    let mut trip = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for v in 0..n {
        let c = v / 6;
        labels.push(c);
        split.push(if v % 6 < 4 { Split::Train } else { Split::Test });
        trip.push((v, c, 1.0 + rng.random_range(-0.2..0.2)));
        for j in 2..d {
            trip.push((v, j, rng.random_range(-1.0..1.0)));
        }
    }
    let x = SparseMatrix::from_triplets(n, d, trip)?;
    let data = Arc::new(NodeData::new(x, labels, split, 2)?);
    let mut edges = Vec::new();
    for base in [0, 6] {
        for i in 0..6 {
            edges.push((base + i, base + (i + 1) % 6));
        }
        edges.push((base, base + 3));
    }
    edges.push((2, 8));
    Graph::new(data, edges)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckCase {
    pub backbone: BackboneKind,
    pub mode: ObjectiveMode,
    pub combo: String,
    pub fault: Option<Fault>,
    pub probes: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckSuite {
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckSuite {
    /// Every clean case within tolerance and every faulted case caught.
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("backbone,mode,combo,fault,probes,max_relative_error,expected,passed\n");
        for c in &self.cases {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:e},{},{}",
                c.backbone,
                c.mode.as_str(),
                c.combo,
                c.fault.map_or("none", fault_name),
                c.probes,
                c.max_relative_error,
                if c.fault.is_some() { "fail" } else { "pass" },
                c.passed
            );
        }
        out
    }
}

pub fn fault_name(f: Fault) -> &'static str {
    match f {
        Fault::ReluPassThrough => "relu-pass-through",
        Fault::LogSoftmaxNoCorrection => "log-softmax-no-correction",
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_FAULT_THRESHOLD: f64 = 1e-2;

/// One central-difference check of the full objective on the 12-node
/// fixture, probing every parameter coordinate.
pub fn gradcheck_case(
    backbone: BackboneKind,
    mode: ObjectiveMode,
    combo: &str,
    fault: Option<Fault>,
    seed: u64,
) -> Result<GradCheckCase> {
    let g = gradcheck_fixture(seed)?;
    let mut m = ExperimentManifest::new("fixture", "unused");
    m.threshold = 0.1;
    m.clusters = Some(2);
    let prepared = prepare_transitivity(&g, &m)?;
    let gt = &prepared.graph;
    let backbone_cfg = BackboneConfig {
        hidden_dim: 6,
        ..BackboneConfig::of_kind(backbone)
    };
    let cfg = TrainConfig {
        backbone: backbone_cfg.clone(),
        combo: combo.parse()?,
        mode,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = backbone_cfg.init_params(g.feature_dim(), g.num_classes(), &mut rng)?;
    let branch_g = Branch::new(&backbone_cfg, &g)?;
    let branch_t = Branch::with_operator(
        &backbone_cfg,
        crate::graph::normalized_adjacency(gt),
        g.features().clone(),
    )?;
    let train_nodes = g.nodes_in(Split::Train);
    let batches: Option<(NsBatch, NsBatch)> = match mode {
        ObjectiveMode::Supervised => None,
        ObjectiveMode::Unsupervised => Some((
            draw_ns_batch(&g, &train_nodes, &cfg.negatives, &mut rng)?,
            draw_ns_batch(gt, &train_nodes, &cfg.negatives, &mut rng)?,
        )),
    };
    let inputs = ObjectiveInputs {
        branch_g: &branch_g,
        branch_t: Some(&branch_t),
        labels: g.labels(),
        train_nodes: &train_nodes,
        ns_batches: batches.as_ref().map(|(a, b)| (a, b)),
    };
    let loss_fn = |p: &crate::nn::ParameterStore| {
        let out = objective_step(&cfg, p, &inputs, None, fault, false)?;
        Ok((out.total, out.grads))
    };
    let report = grad_check(loss_fn, &params, params.num_scalars(), 1e-6, seed)?;
    let err = report.max_relative_error;
    Ok(GradCheckCase {
        backbone,
        mode,
        combo: combo.to_string(),
        fault,
        probes: report.probes.len(),
        max_relative_error: err,
        passed: match fault {
            None => err <= GRADCHECK_TOLERANCE,
            Some(_) => err > GRADCHECK_FAULT_THRESHOLD,
        },
    })
}

/// Both backbones × both objective modes × every ablation combo, plus the
/// negative control `fault` on the supervised objective of each backbone.
pub fn cmd_gradcheck(out_dir: Option<&Path>, fault: Fault, seed: u64) -> Result<GradCheckSuite> {
    let mut cases = Vec::new();
    for backbone in [BackboneKind::Gcn, BackboneKind::Sgc] {
        for mode in [ObjectiveMode::Supervised, ObjectiveMode::Unsupervised] {
            for combo in ABLATION_COMBOS {
                cases.push(gradcheck_case(backbone, mode, combo, None, seed)?);
            }
        }
        if fault == Fault::ReluPassThrough && backbone == BackboneKind::Sgc {
            // SGC has no ReLU to break.
            continue;
        }
        cases.push(gradcheck_case(
            backbone,
            ObjectiveMode::Supervised,
            "base+trans-sim",
            Some(fault),
            seed,
        )?);
    }
    let suite = GradCheckSuite { cases };
    if let Some(dir) = out_dir {
        write_file(&dir.join("gradcheck.csv"), suite.to_csv())?;
    }
    Ok(suite)
}
