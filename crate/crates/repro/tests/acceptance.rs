//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criteria 3 and 6-10 need the converted Cora and
//! Citeseer directories (see `TRANSGNN_DATA_DIR`).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transgnn_core::experiment::{
    cmd_ablation, cmd_gradcheck, cmd_robustness, cmd_train, gradcheck_fixture, RunResult,
    TrainOutcome, GRADCHECK_FAULT_THRESHOLD, GRADCHECK_TOLERANCE, ROBUSTNESS_RATES,
};
use transgnn_core::graph::{Graph, PerturbMode};
use transgnn_core::metrics::Metrics;
use transgnn_core::model::{BackboneKind, Fault};
use transgnn_core::objective::{LossCombo, ABLATION_COMBOS};
use transgnn_core::partition::{
    default_cluster_count, edge_cut, partition_graph, refine_assignment, Partition,
    PartitionConfig, WeightedGraph,
};
use transgnn_core::simrank::{simrank_cached, SimRankConfig, SimRankIteration};
use transgnn_core::transitivity::{build_transitivity_graph, prune_intercluster};
use transgnn_repro::{dataset_dir, manifest, CACHE_DIR_ENV};

const SEEDS: u64 = 10;
/// Per robustness cell; 12 cells x 2 models make 10 seeds too slow for a
/// single core.
const ROBUSTNESS_SEEDS: u64 = 3;
const METHOD_MARGIN: f64 = 1.5;

type Check = Result<(bool, String), String>;

struct Runner {
    failures: usize,
}

impl Runner {
    fn run(&mut self, id: u32, name: &str, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            self.failures += 1;
        }
        println!(
            "criterion {id:>2} {name:<28} {} | {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn scratch() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("scratch directory");
    dir
}

fn require(name: &str) -> Result<PathBuf, String> {
    dataset_dir(name).ok_or_else(|| {
        format!(
            "dataset {name} not found under {}",
            transgnn_repro::data_root().display()
        )
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|_| rng.random_bool(p))
        .collect();
    Graph::from_edges(n, &edges).unwrap()
}

fn gradient_integrity() -> Check {
    let start = Instant::now();
    let suite = cmd_gradcheck(None, Fault::LogSoftmaxNoCorrection, 0).map_err(err)?;
    let relu = cmd_gradcheck(None, Fault::ReluPassThrough, 0).map_err(err)?;
    let elapsed = start.elapsed();
    let clean: Vec<_> = suite.cases.iter().filter(|c| c.fault.is_none()).collect();
    let faults: Vec<_> = suite
        .cases
        .iter()
        .chain(&relu.cases)
        .filter(|c| c.fault.is_some())
        .collect();
    let worst = clean
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    let weakest_fault = faults
        .iter()
        .map(|c| c.max_relative_error)
        .fold(f64::INFINITY, f64::min);
    let combos_covered = [BackboneKind::Gcn, BackboneKind::Sgc].iter().all(|&b| {
        ABLATION_COMBOS
            .iter()
            .all(|&combo| clean.iter().any(|c| c.backbone == b && c.combo == combo))
    });
    let pass = combos_covered
        && worst <= GRADCHECK_TOLERANCE
        && !faults.is_empty()
        && weakest_fault > GRADCHECK_FAULT_THRESHOLD
        && within(elapsed, 30.0);
    Ok((
        pass,
        format!(
            "{} clean cases, worst rel err {worst:.2e} (<= {GRADCHECK_TOLERANCE:e}); {} fault cases, smallest err {weakest_fault:.2e} (> {GRADCHECK_FAULT_THRESHOLD:e})",
            clean.len(),
            faults.len()
        ),
    ))
}

fn brute_simrank_step(g: &Graph, s: &[Vec<f64>], decay: f64) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut next = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in 0..n {
            let (nu, nv) = (g.adjacency(u), g.adjacency(v));
            next[u][v] = if u == v {
                1.0
            } else if nu.is_empty() || nv.is_empty() {
                0.0
            } else {
                let total: f64 = nu
                    .iter()
                    .flat_map(|&i| nv.iter().map(move |&j| s[i][j]))
                    .sum();
                decay * total / (nu.len() * nv.len()) as f64
            };
        }
    }
    next
}

fn simrank_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for _ in 0..50 {
        let n = rng.random_range(1..=10);
        let p = rng.random_range(0.1..0.7);
        let g = random_graph(&mut rng, n, p);
        let iters = rng.random_range(1..=12);
        let cfg = SimRankConfig {
            decay: 0.8,
            max_iters: iters,
            tolerance: 1e-300,
        };
        let mut it = SimRankIteration::new(&g, cfg).map_err(err)?;
        let mut oracle: Vec<Vec<f64>> = (0..n)
            .map(|u| (0..n).map(|v| f64::from(u8::from(u == v))).collect())
            .collect();
        for _ in 0..iters {
            let before = it.current().clone();
            it.step();
            oracle = brute_simrank_step(&g, &oracle, 0.8);
            let now = it.current();
            monotone &= now
                .scores()
                .iter()
                .zip(before.scores())
                .all(|(a, b)| a >= b);
            for u in 0..n {
                for v in 0..n {
                    worst = worst.max((now.get(u, v) - oracle[u][v]).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Ok((
        worst <= 1e-8 && monotone && within(elapsed, 10.0),
        format!("50 graphs, max |engine - oracle| {worst:.1e}, monotone {monotone}"),
    ))
}

/// Builds G′ and G″ for `g` and checks disjointness from `g`, the absence
/// of self-loops and idempotent pruning. Returns the G″ edge count.
fn check_structure(
    g: &Graph,
    sim_cfg: &SimRankConfig,
    threshold: f64,
    k: usize,
) -> Result<Option<usize>, String> {
    let cache = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from);
    let sim = simrank_cached(g, sim_cfg, cache.as_deref()).map_err(err)?;
    let trans = build_transitivity_graph(g, &sim, threshold).map_err(err)?;
    let partition = partition_graph(trans.graph(), k.min(g.num_nodes()), 0).map_err(err)?;
    let once = prune_intercluster(&trans, &partition).map_err(err)?;
    let twice = prune_intercluster(&once, &partition).map_err(err)?;
    let clean = |h: &Graph| {
        h.edges()
            .iter()
            .all(|&(u, v)| u != v && !g.is_edge(u, v).unwrap_or(true))
    };
    let ok = clean(trans.graph())
        && clean(once.graph())
        && once.graph().edges() == twice.graph().edges();
    Ok(ok.then(|| once.num_edges()))
}

fn structural_invariants() -> Check {
    let start = Instant::now();
    let mut fixtures: Vec<Graph> = (0..5).map(|s| gradcheck_fixture(s).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let n = rng.random_range(4..40);
        let p = rng.random_range(0.05..0.4);
        fixtures.push(random_graph(&mut rng, n, p));
    }
    for (i, g) in fixtures.iter().enumerate() {
        if check_structure(g, &SimRankConfig::default(), 0.3, 2)?.is_none() {
            return Ok((false, format!("fixture {i} violates an invariant")));
        }
    }
    let mut sizes = Vec::new();
    for name in ["cora", "citeseer"] {
        let dir = require(name)?;
        let m = manifest(&dir, BackboneKind::Gcn, LossCombo::base(), 1, &scratch());
        let g = m.load_graph().map_err(err)?;
        let k = default_cluster_count(g.num_nodes());
        match check_structure(&g, &m.simrank, m.threshold, k)? {
            Some(e) => sizes.push(format!("{name} G'' {e} edges")),
            None => return Ok((false, format!("{name} violates an invariant"))),
        }
    }
    Ok((
        within(start.elapsed(), 60.0),
        format!(
            "{} fixtures and both datasets: disjoint, loop-free, prune idempotent; {}",
            fixtures.len(),
            sizes.join(", ")
        ),
    ))
}

fn partitioner_optimality() -> Check {
    let mut edges = Vec::new();
    for base in [0, 4] {
        for u in 0..4 {
            for v in u + 1..4 {
                edges.push((base + u, base + v));
            }
        }
    }
    edges.push((3, 4));
    let g = Graph::from_edges(8, &edges).map_err(err)?;
    let brute = (0u32..256)
        .filter(|m| m.count_ones() == 4)
        .map(|m| {
            let a: Vec<usize> = (0..8).map(|v| ((m >> v) & 1) as usize).collect();
            edge_cut(&g, &Partition::new(a, 2).unwrap()).unwrap()
        })
        .min()
        .unwrap();
    let p = partition_graph(&g, 2, 0).map_err(err)?;
    let a = p.assignment();
    let cliques =
        a[..4].iter().all(|&c| c == a[0]) && a[4..].iter().all(|&c| c == a[4]) && a[0] != a[4];
    let cut = edge_cut(&g, &p).map_err(err)?;

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut increases = 0;
    for _ in 0..100 {
        let prob = rng.random_range(0.03..0.3);
        let h = random_graph(&mut rng, 50, prob);
        let k = rng.random_range(2..=6);
        let mut part: Vec<usize> = (0..50).map(|_| rng.random_range(0..k)).collect();
        let (before, after) = refine_assignment(
            &WeightedGraph::from_graph(&h),
            &mut part,
            k,
            &PartitionConfig::new(k, 0),
        )
        .map_err(err)?;
        if after > before {
            increases += 1;
        }
    }
    Ok((
        cut == 1 && brute == 1 && cliques && increases == 0,
        format!("cut {cut} (exhaustive optimum {brute}), cliques recovered {cliques}; refinement increased the cut on {increases}/100 graphs"),
    ))
}

fn metric_oracles() -> Check {
    let a = Metrics::from_predictions(&[0, 1, 1], &[0, 0, 1], 2).map_err(err)?;
    let b = Metrics::from_predictions(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).map_err(err)?;
    let hand = a.accuracy == 2.0 / 3.0
        && (a.weighted_f1 - 2.0 / 3.0).abs() < 1e-15
        && b.accuracy == 0.5
        && (b.weighted_f1 - 1.0 / 3.0).abs() < 1e-15;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(1..8);
        let mut conf: Vec<Vec<usize>> = (0..c)
            .map(|_| (0..c).map(|_| rng.random_range(0..15)).collect())
            .collect();
        conf[0][0] += 1;
        let m = Metrics::from_confusion(&conf);
        worst = worst.max((m.weighted_recall() - m.accuracy).abs());
    }
    Ok((
        hand && worst < 1e-12,
        format!("hand examples exact {hand}; max |weighted recall - accuracy| {worst:.1e} over 1000 matrices"),
    ))
}

fn summary_of<'a>(
    o: &'a TrainOutcome,
    model: &str,
) -> Result<&'a transgnn_core::experiment::Summary, String> {
    o.summary(model).ok_or_else(|| format!("no {model} rows"))
}

struct Runs {
    cora_gcn: TrainOutcome,
    cora_sgc: TrainOutcome,
    citeseer_sgc: TrainOutcome,
}

fn train_runs() -> Result<Runs, String> {
    let cora = require("cora")?;
    let citeseer = require("citeseer")?;
    let trans: LossCombo = "base+trans".parse().map_err(err)?;
    let out = scratch();
    let cora_gcn = cmd_train(
        &manifest(
            &cora,
            BackboneKind::Gcn,
            trans.clone(),
            SEEDS,
            &out.join("cora_gcn"),
        ),
        false,
    )
    .map_err(err)?;
    let cora_sgc = cmd_train(
        &manifest(
            &cora,
            BackboneKind::Sgc,
            trans.clone(),
            SEEDS,
            &out.join("cora_sgc"),
        ),
        true,
    )
    .map_err(err)?;
    let citeseer_sgc = cmd_train(
        &manifest(
            &citeseer,
            BackboneKind::Sgc,
            trans,
            SEEDS,
            &out.join("citeseer_sgc"),
        ),
        false,
    )
    .map_err(err)?;
    Ok(Runs {
        cora_gcn,
        cora_sgc,
        citeseer_sgc,
    })
}

fn baseline_reproduction(runs: &Result<Runs, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let gcn = summary_of(&runs.cora_gcn, "GCN")?;
    let sgc = summary_of(&runs.cora_sgc, "SGC")?;
    let (g, s) = (100.0 * gcn.mean_accuracy, 100.0 * sgc.mean_accuracy);
    Ok((
        (79.1..=83.1).contains(&g) && (79.2..=83.2).contains(&s) && gcn.runs >= 10 && sgc.runs >= 10,
        format!(
            "GCN/Cora {g:.2} ± {:.2} in [79.1, 83.1]; SGC/Cora {s:.2} ± {:.2} in [79.2, 83.2]; {} seeds",
            100.0 * gcn.std_accuracy,
            100.0 * sgc.std_accuracy,
            gcn.runs
        ),
    ))
}

fn method_effect(runs: &Result<Runs, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let gcn = summary_of(&runs.cora_gcn, "GCN")?.mean_accuracy;
    let tgcn = summary_of(&runs.cora_gcn, "TransGCN")?.mean_accuracy;
    let sgc = summary_of(&runs.citeseer_sgc, "SGC")?.mean_accuracy;
    let tsgc = summary_of(&runs.citeseer_sgc, "TransSGC")?.mean_accuracy;
    let (d1, d2) = (100.0 * (tgcn - gcn), 100.0 * (tsgc - sgc));
    Ok((
        d1 >= METHOD_MARGIN && d2 >= METHOD_MARGIN,
        format!(
            "Cora TransGCN {} vs GCN {} ({d1:+.2}); Citeseer TransSGC {} vs SGC {} ({d2:+.2}); need >= +{METHOD_MARGIN}",
            pct(tgcn),
            pct(gcn),
            pct(tsgc),
            pct(sgc)
        ),
    ))
}

fn calibration(runs: &Result<Runs, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let r = runs
        .cora_gcn
        .transitivity
        .as_ref()
        .ok_or("no transitivity report for Cora")?;
    let n = r.num_nodes;
    let room = n * (n - 1) / 2 - r.origin_edges;
    Ok((
        r.edges_before_pruning > 0 && r.edges_before_pruning < room,
        format!(
            "Cora at threshold {}: {} pairs before pruning, {} after (reference table: 2610 directed lines = 1305 pairs); bound {room}",
            r.threshold, r.edges_before_pruning, r.edges_after_pruning
        ),
    ))
}

fn robustness(runs: &Result<Runs, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let cora = require("cora")?;
    let m = manifest(
        &cora,
        BackboneKind::Gcn,
        "base+trans".parse().map_err(err)?,
        ROBUSTNESS_SEEDS,
        &scratch().join("robustness"),
    );
    let cells = cmd_robustness(&m).map_err(err)?;
    let grid = cells.len() == 2 * ROBUSTNESS_RATES.len()
        && [PerturbMode::Add, PerturbMode::Remove].iter().all(|&mode| {
            ROBUSTNESS_RATES
                .iter()
                .all(|&r| cells.iter().any(|c| c.mode == mode && c.rate == r))
        });
    let csv = std::fs::read_to_string(m.out_dir.join("robustness.csv")).map_err(err)?;
    let rows = csv.lines().count() - 1;
    let expected_rows = 2 * ROBUSTNESS_RATES.len() * 2 * ROBUSTNESS_SEEDS as usize;

    // Rate 0 must reproduce the clean runs for the same seeds exactly.
    let clean: Vec<&RunResult> = runs
        .cora_gcn
        .results
        .iter()
        .filter(|r| r.seed < ROBUSTNESS_SEEDS)
        .collect();
    let rate_zero = cells.iter().filter(|c| c.rate == 0.0).all(|c| {
        c.results.len() == clean.len() && c.results.iter().all(|r| clean.contains(&r))
    });

    let mut wins = 0;
    let mut diffs = Vec::new();
    for c in &cells {
        let acc = |name: &str| {
            c.summaries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, s)| s.mean_accuracy)
        };
        let (Some(b), Some(t)) = (acc("GCN"), acc("TransGCN")) else {
            return Err(format!("cell {} {} lacks a model", c.mode.as_str(), c.rate));
        };
        if t >= b {
            wins += 1;
        }
        diffs.push(format!(
            "{}{:.0}:{:+.1}",
            &c.mode.as_str()[..1],
            c.rate * 100.0,
            100.0 * (t - b)
        ));
    }
    Ok((
        grid && rows == expected_rows && rate_zero && wins >= 8,
        format!(
            "grid complete {grid} ({rows} rows); rate 0 equals clean runs {rate_zero}; Trans >= base in {wins}/12 cells (need 8) [{}]",
            diffs.join(" ")
        ),
    ))
}

fn ablation() -> Check {
    let cora = require("cora")?;
    let m = manifest(
        &cora,
        BackboneKind::Gcn,
        "base+trans".parse().map_err(err)?,
        SEEDS,
        &scratch().join("ablation"),
    );
    let out = cmd_ablation(&m).map_err(err)?;
    let csv = std::fs::read_to_string(m.out_dir.join("ablation.csv")).map_err(err)?;
    let all_combos = ABLATION_COMBOS.iter().all(|c| {
        csv.lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{c},")))
            .count()
            == SEEDS as usize
    });
    let acc = |c: &str| {
        out.mean_accuracy(c)
            .ok_or_else(|| format!("no {c} summary"))
    };
    let base = acc("base")?;
    let minus = acc("base+trans-sim")?;
    let plus = acc("base+trans+sim")?;
    let listing: Vec<String> = ABLATION_COMBOS
        .iter()
        .map(|c| format!("{c} {}", out.mean_accuracy(c).map_or("?".into(), pct)))
        .collect();
    Ok((
        all_combos && minus > base && plus > base,
        format!(
            "five combos x {SEEDS} seeds in CSV {all_combos}; {}",
            listing.join(", ")
        ),
    ))
}

fn main() {
    // Lets repeated runs reuse the Cora/Citeseer SimRank matrices.
    if std::env::var_os(CACHE_DIR_ENV).is_none() {
        std::env::set_var(CACHE_DIR_ENV, scratch().join("simrank-cache"));
    }
    let mut r = Runner { failures: 0 };
    r.run(1, "gradient integrity", gradient_integrity);
    r.run(2, "simrank oracle", simrank_oracle);
    r.run(3, "structural invariants", structural_invariants);
    r.run(4, "partitioner optimality", partitioner_optimality);
    r.run(5, "metric oracles", metric_oracles);
    let start = Instant::now();
    let runs = train_runs();
    println!(
        "(training runs for criteria 6-8: {:.1}s)",
        start.elapsed().as_secs_f64()
    );
    r.run(6, "baseline reproduction", || baseline_reproduction(&runs));
    r.run(7, "method effect", || method_effect(&runs));
    r.run(8, "transitivity calibration", || calibration(&runs));
    r.run(9, "robustness protocol", || robustness(&runs));
    r.run(10, "ablation protocol", ablation);
    println!("{} of 10 criteria failed", r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
