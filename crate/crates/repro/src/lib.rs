//! Settings pinned for the Cora/Citeseer reproduction runs, and lookup of
//! the converted datasets.
//!
//! GCN runs on the library defaults. SGC uses its own published recipe,
//! chosen among candidates by validation accuracy. SimRank uses decay 0.92
//! iterated to convergence, which reproduces the Cora transitivity edge
//! count at threshold 0.4.

use std::path::{Path, PathBuf};

use transgnn_core::experiment::ExperimentManifest;
use transgnn_core::model::{BackboneConfig, BackboneKind};
use transgnn_core::objective::{LossCombo, Reduction};
use transgnn_core::simrank::SimRankConfig;
use transgnn_core::train::TrainConfig;

pub const DATA_DIR_ENV: &str = "TRANSGNN_DATA_DIR";
pub const CACHE_DIR_ENV: &str = "TRANSGNN_CACHE_DIR";

/// `$TRANSGNN_DATA_DIR`, else `data/` at the workspace root.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// Directory of a converted dataset, if it holds an edge list.
pub fn dataset_dir(name: &str) -> Option<PathBuf> {
    let dir = data_root().join(name);
    dir.join("edges.tsv").is_file().then_some(dir)
}

pub fn tuned_simrank() -> SimRankConfig {
    SimRankConfig {
        decay: 0.92,
        max_iters: 100,
        tolerance: 1e-4,
    }
}

pub fn gcn_config() -> TrainConfig {
    TrainConfig::default()
}

/// K = 2 propagation, lr 0.2 for 100 epochs, light weight decay, mean
/// loss, dropout on the propagated features. Used with row-normalized
/// features.
pub fn sgc_config() -> TrainConfig {
    TrainConfig {
        backbone: BackboneConfig {
            sgc_k: 2,
            dropout: 0.5,
            ..BackboneConfig::sgc()
        },
        lr: 0.2,
        epochs: 100,
        weight_decay: 5e-5,
        reduction: Reduction::Mean,
        ..TrainConfig::default()
    }
}

/// Manifest for one backbone on one dataset with the pinned settings and
/// seeds `0..seeds`.
pub fn manifest(
    dataset: &Path,
    kind: BackboneKind,
    combo: LossCombo,
    seeds: u64,
    out_dir: &Path,
) -> ExperimentManifest {
    let mut m = ExperimentManifest::new(dataset, out_dir);
    m.train = match kind {
        BackboneKind::Gcn => gcn_config(),
        BackboneKind::Sgc => sgc_config(),
    };
    m.train.combo = combo;
    m.normalize_features = kind == BackboneKind::Sgc;
    m.simrank = tuned_simrank();
    m.seeds = (0..seeds).collect();
    m.cache_dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from);
    m.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    m
}
