use proptest::prelude::*;
use transgnn_core::graph::Graph;
use transgnn_core::partition::{partition_graph, Partition};
use transgnn_core::simrank::{simrank, SimRankConfig};
use transgnn_core::transitivity::{build_transitivity_graph, prune_intercluster};

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..14).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        let m = pairs.len();
        proptest::collection::vec(any::<bool>(), m).prop_map(move |keep| {
            let edges: Vec<_> = pairs
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&e, _)| e)
                .collect();
            Graph::from_edges(n, &edges).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn disjoint_from_origin_and_loop_free(g in graph_strategy(), t in 0.0f64..1.0) {
        let sim = simrank(&g, &SimRankConfig::default()).unwrap();
        let trans = build_transitivity_graph(&g, &sim, t).unwrap();
        for &(u, v) in trans.graph().edges() {
            prop_assert!(u != v);
            prop_assert!(!g.is_edge(u, v).unwrap());
            prop_assert!(sim.get(u, v) >= t);
        }
        prop_assert!(trans.graph().shares_node_data(&g));
    }

    #[test]
    fn higher_threshold_gives_subset(g in graph_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let sim = simrank(&g, &SimRankConfig::default()).unwrap();
        let low = build_transitivity_graph(&g, &sim, lo).unwrap();
        let high = build_transitivity_graph(&g, &sim, hi).unwrap();
        for &(u, v) in high.graph().edges() {
            prop_assert!(low.graph().is_edge(u, v).unwrap());
        }
    }

    #[test]
    fn pruning_is_idempotent(g in graph_strategy(), k in 1usize..4, seed in 0u64..100) {
        let sim = simrank(&g, &SimRankConfig::default()).unwrap();
        let trans = build_transitivity_graph(&g, &sim, 0.2).unwrap();
        let k = k.min(g.num_nodes());
        let p = partition_graph(&g, k, seed).unwrap();
        let once = prune_intercluster(&trans, &p).unwrap();
        let twice = prune_intercluster(&once, &p).unwrap();
        prop_assert_eq!(once.graph().edges(), twice.graph().edges());
        let a = p.assignment();
        for &(u, v) in once.graph().edges() {
            prop_assert_eq!(a[u], a[v]);
            prop_assert!(trans.graph().is_edge(u, v).unwrap());
        }
    }

    #[test]
    fn construction_is_deterministic(g in graph_strategy(), seed in 0u64..100) {
        let run = || {
            let sim = simrank(&g, &SimRankConfig::default()).unwrap();
            let trans = build_transitivity_graph(&g, &sim, 0.3).unwrap();
            let p = partition_graph(&g, 2.min(g.num_nodes()), seed).unwrap();
            prune_intercluster(&trans, &p).unwrap().graph().edges().to_vec()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn hand_examples() {
    // Explicit scores: (1,2) is already an edge, (0,3) falls below 0.5.
    let g = Graph::from_edges(4, &[(1, 2)]).unwrap();
    let mut scores = vec![0.0; 16];
    for v in 0..4 {
        scores[v * 4 + v] = 1.0;
    }
    for &(u, v, s) in &[(0, 2, 0.6), (1, 2, 0.7), (0, 3, 0.4)] {
        scores[u * 4 + v] = s;
        scores[v * 4 + u] = s;
    }
    let sim = transgnn_core::simrank::SimilarityMatrix::from_scores(4, scores).unwrap();
    let trans = build_transitivity_graph(&g, &sim, 0.5).unwrap();
    assert_eq!(trans.graph().edges(), &[(0, 2)]);

    let path = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let all = transgnn_core::simrank::SimilarityMatrix::from_scores(4, vec![1.0; 16]).unwrap();
    let full = build_transitivity_graph(&Graph::from_edges(4, &[]).unwrap(), &all, 0.0).unwrap();
    assert_eq!(full.num_edges(), 6);
    let p = Partition::new(vec![0, 0, 1, 1], 2).unwrap();
    let on_path = build_transitivity_graph(&path, &all, 0.0).unwrap();
    assert_eq!(on_path.graph().edges(), &[(0, 2), (0, 3), (1, 3)]);
    assert_eq!(prune_intercluster(&on_path, &p).unwrap().num_edges(), 0);

    let complete: Vec<_> = (0..4)
        .flat_map(|u| (u + 1..4).map(move |v| (u, v)))
        .collect();
    let k4 = Graph::from_edges(4, &complete).unwrap();
    assert_eq!(
        build_transitivity_graph(&k4, &all, 0.0)
            .unwrap()
            .num_edges(),
        0
    );

    let empty = build_transitivity_graph(&path, &all, 1.1).unwrap();
    assert_eq!(empty.num_edges(), 0);
}
