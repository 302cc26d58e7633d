//! Property tests over the maintenance invariants: toggle replay
//! equivalence, batch-split path independence, and gated-state stability.

use nalgebra::DMatrix;
use proptest::prelude::*;

use coden::graph::{batch_delta, DynamicGraph, EdgeEvent};
use coden::ppr::{compute_base_embedding, embedding_update, FeatureMatrix};
use coden::ssm::{gated_update, NodeStateMatrix};

fn event_stream(n: usize, len: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..n, 0..n), 1..=len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Replaying events one by one matches reconciling the net batch deltas
    /// onto the starting adjacency.
    #[test]
    fn replay_equals_delta_reconcile(pairs in event_stream(12, 40)) {
        let n = 12;
        let start = DynamicGraph::new(n);
        let events: Vec<EdgeEvent> = pairs
            .iter()
            .enumerate()
            .map(|(t, &(u, v))| EdgeEvent::new(u, v, t as u64 + 1))
            .collect();
        let mut live = start.clone();
        for &e in &events {
            live.apply_event(e).unwrap();
        }
        let deltas = batch_delta(&start, &events).unwrap();
        let mut reconciled = start.clone();
        for d in &deltas {
            for &v in &d.deleted {
                reconciled.apply_event(EdgeEvent::new(d.node, v, 1)).unwrap();
            }
            for &v in &d.added {
                reconciled.apply_event(EdgeEvent::new(d.node, v, 1)).unwrap();
            }
        }
        prop_assert_eq!(live.edges(), reconciled.edges());
        let deg_sum: usize = (0..n).map(|u| live.out_degree(u)).sum();
        prop_assert_eq!(deg_sum, live.edge_count());
    }

    /// Splitting one update batch into two consecutive batches leaves the
    /// final embeddings within the doubled contract budget.
    #[test]
    fn batch_split_path_independence(
        pairs in event_stream(10, 24),
        split in 1usize..23,
        seed in 0u64..1000,
    ) {
        use rand::prelude::*;
        let n = 10;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut base_edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.gen_bool(0.25) {
                    base_edges.push((u, v));
                }
            }
        }
        let start = DynamicGraph::from_edges(n, &base_edges).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let features = FeatureMatrix::new(vec![x]).unwrap();
        let eps = 1e-8;
        let events: Vec<EdgeEvent> = pairs
            .iter()
            .enumerate()
            .map(|(t, &(u, v))| EdgeEvent::new(u, v, t as u64 + 1))
            .collect();
        let split = split.min(events.len());

        let apply = |chunks: &[&[EdgeEvent]]| {
            let mut graph = start.clone();
            let mut state = compute_base_embedding(&graph, &features, 0.2, eps).unwrap();
            for chunk in chunks {
                let before = graph.clone();
                let deltas = batch_delta(&before, chunk).unwrap();
                for &e in *chunk {
                    graph.apply_event(e).unwrap();
                }
                embedding_update(&before, &deltas, &graph, &mut state).unwrap();
            }
            state.reserve(0).to_vec()
        };

        let single = apply(&[&events]);
        let (a, b) = events.split_at(split);
        let doubled = apply(&[a, b]);
        let drift: f64 = single
            .iter()
            .zip(&doubled)
            .map(|(x, y)| (x - y).abs())
            .sum();
        prop_assert!(drift <= 2.0 * n as f64 * eps, "drift {drift}");
    }

    /// The constrained gated update never leaves the convex hull of the
    /// carried state and the inputs.
    #[test]
    fn gated_state_stays_bounded(
        m0 in prop::collection::vec(-3.0f64..3.0, 12),
        inputs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 12), 1..12),
        deltas in prop::collection::vec(0.01f64..3.0, 12),
    ) {
        let mut state = NodeStateMatrix {
            m: DMatrix::from_fn(4, 3, |u, i| m0[u * 3 + i]),
            time: 0,
        };
        let mut cap = state.m.abs().max();
        for (step, h) in inputs.iter().enumerate() {
            let hm = DMatrix::from_fn(4, 3, |u, i| h[u * 3 + i]);
            cap = cap.max(hm.abs().max());
            state = gated_update(&state, &hm, deltas[step % deltas.len()]).unwrap();
            prop_assert!(state.m.abs().max() <= cap + 1e-12);
        }
    }
}
