//! Evolving directed graph under timestamped edge-toggle events.
//!
//! The graph keeps per-node sorted out/in adjacency lists. An event toggles
//! one edge: it is inserted if absent and removed if present. All propagation
//! code consumes the graph through neighbor iteration and degrees, plus the
//! per-batch [`DegreeDelta`] summaries that describe how out-neighborhoods
//! changed between two snapshots.

use crate::error::{CodenError, Result};

/// One timestamped edge-toggle event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeEvent {
    pub src: usize,
    pub dst: usize,
    pub time: u64,
}

impl EdgeEvent {
    pub fn new(src: usize, dst: usize, time: u64) -> Self {
        EdgeEvent { src, dst, time }
    }
}

/// Net out-neighborhood change of one node over a batch of events.
///
/// `added` and `deleted` are disjoint; edges toggled an even number of times
/// within the batch cancel and appear in neither set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeDelta {
    pub node: usize,
    pub added: Vec<usize>,
    pub deleted: Vec<usize>,
    pub old_out_degree: usize,
    pub new_out_degree: usize,
}

/// Directed graph with sorted adjacency lists, mutated by edge toggles.
///
/// The node set is fixed at construction; node churn is modelled by toggling
/// incident edges. Dangling nodes (out-degree zero) act as sinks during
/// propagation: mass that would leave them is dropped.
#[derive(Debug, Clone)]
pub struct DynamicGraph {
    node_count: usize,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    edge_count: usize,
    timestamp: u64,
}

impl DynamicGraph {
    pub fn new(node_count: usize) -> Self {
        DynamicGraph {
            node_count,
            out_adj: vec![Vec::new(); node_count],
            in_adj: vec![Vec::new(); node_count],
            edge_count: 0,
            timestamp: 0,
        }
    }

    /// Builds a graph from an initial edge list, ignoring duplicates.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = DynamicGraph::new(node_count);
        for &(u, v) in edges {
            g.check_node(u)?;
            g.check_node(v)?;
            if !g.has_edge(u, v) {
                g.insert_edge(u, v);
            }
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.out_adj[u].len()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_adj[v].len()
    }

    pub fn out_neighbors(&self, u: usize) -> &[usize] {
        &self.out_adj[u]
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.in_adj[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.out_adj[u].binary_search(&v).is_ok()
    }

    /// All directed edges, ordered by source then destination.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, nbrs) in self.out_adj.iter().enumerate() {
            for &v in nbrs {
                out.push((u, v));
            }
        }
        out
    }

    fn check_node(&self, id: usize) -> Result<()> {
        if id >= self.node_count {
            return Err(CodenError::NodeOutOfRange {
                id,
                n: self.node_count,
            });
        }
        Ok(())
    }

    fn insert_edge(&mut self, u: usize, v: usize) {
        let pos = self.out_adj[u].binary_search(&v).unwrap_err();
        self.out_adj[u].insert(pos, v);
        let pos = self.in_adj[v].binary_search(&u).unwrap_err();
        self.in_adj[v].insert(pos, u);
        self.edge_count += 1;
    }

    fn remove_edge(&mut self, u: usize, v: usize) {
        let pos = self.out_adj[u].binary_search(&v).unwrap();
        self.out_adj[u].remove(pos);
        let pos = self.in_adj[v].binary_search(&u).unwrap();
        self.in_adj[v].remove(pos);
        self.edge_count -= 1;
    }

    /// Toggles the event's edge and advances the timestamp.
    ///
    /// Returns `true` when the edge was inserted, `false` when removed.
    pub fn apply_event(&mut self, event: EdgeEvent) -> Result<bool> {
        self.check_node(event.src)?;
        self.check_node(event.dst)?;
        self.timestamp = event.time;
        if self.has_edge(event.src, event.dst) {
            self.remove_edge(event.src, event.dst);
            Ok(false)
        } else {
            self.insert_edge(event.src, event.dst);
            Ok(true)
        }
    }

    /// Verifies internal adjacency/degree consistency. Test support.
    pub fn check_invariants(&self) -> Result<()> {
        let mut m = 0;
        for u in 0..self.node_count {
            m += self.out_adj[u].len();
            if self.out_adj[u].windows(2).any(|w| w[0] >= w[1]) {
                return Err(CodenError::InconsistentInput(format!(
                    "out_adj of {u} not strictly sorted"
                )));
            }
            for &v in &self.out_adj[u] {
                if self.in_adj[v].binary_search(&u).is_err() {
                    return Err(CodenError::InconsistentInput(format!(
                        "edge ({u},{v}) missing from in_adj"
                    )));
                }
            }
        }
        if m != self.edge_count {
            return Err(CodenError::InconsistentInput(format!(
                "edge count {m} != cached {}",
                self.edge_count
            )));
        }
        Ok(())
    }
}

/// Tracks net out-neighborhood changes while a batch of events is applied.
///
/// The tracker is fed each event together with the graph state *before* the
/// event; calling [`BatchTracker::take_deltas`] after the batch yields the
/// same result as [`batch_delta`] computed from the pre-batch snapshot.
#[derive(Debug, Default)]
pub struct BatchTracker {
    // node -> (old out-degree at first touch, toggled destination set)
    pending: std::collections::BTreeMap<usize, (usize, Vec<usize>)>,
}

impl BatchTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Records one event. Must be called before the event is applied to the
    /// graph so the first-touch out-degree is the pre-batch one.
    pub fn record(&mut self, graph_before_event: &DynamicGraph, event: EdgeEvent) {
        let entry = self
            .pending
            .entry(event.src)
            .or_insert_with(|| (graph_before_event.out_degree(event.src), Vec::new()));
        match entry.1.binary_search(&event.dst) {
            Ok(pos) => {
                // toggled back: net no change for this destination
                entry.1.remove(pos);
            }
            Err(pos) => entry.1.insert(pos, event.dst),
        }
    }

    /// Drains the tracker into per-node deltas against `graph_after`.
    pub fn take_deltas(&mut self, graph_after: &DynamicGraph) -> Vec<DegreeDelta> {
        let mut deltas = Vec::new();
        for (node, (old_deg, toggled)) in std::mem::take(&mut self.pending) {
            if toggled.is_empty() {
                continue;
            }
            let mut added = Vec::new();
            let mut deleted = Vec::new();
            for v in toggled {
                if graph_after.has_edge(node, v) {
                    added.push(v);
                } else {
                    deleted.push(v);
                }
            }
            deltas.push(DegreeDelta {
                node,
                added,
                deleted,
                old_out_degree: old_deg,
                new_out_degree: graph_after.out_degree(node),
            });
        }
        deltas
    }
}

/// Net per-node out-neighborhood deltas for a batch of events.
///
/// Replays `events` on a scratch copy of `graph_before` and diffs the
/// resulting out-adjacency against the original, so an edge toggled an even
/// number of times contributes nothing.
pub fn batch_delta(graph_before: &DynamicGraph, events: &[EdgeEvent]) -> Result<Vec<DegreeDelta>> {
    let mut scratch = graph_before.clone();
    let mut tracker = BatchTracker::new();
    for &e in events {
        tracker.record(&scratch, e);
        scratch.apply_event(e)?;
    }
    Ok(tracker.take_deltas(&scratch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggle_on_from_absence() {
        let mut g = DynamicGraph::new(2);
        let inserted = g.apply_event(EdgeEvent::new(0, 1, 1)).unwrap();
        assert!(inserted);
        assert!(g.has_edge(0, 1));
        assert_eq!(g.out_degree(0), 1);
        assert_eq!(g.in_degree(1), 1);
        assert_eq!(g.timestamp(), 1);
    }

    #[test]
    fn toggle_off_removes_edge() {
        let mut g = DynamicGraph::from_edges(2, &[(0, 1)]).unwrap();
        let inserted = g.apply_event(EdgeEvent::new(0, 1, 2)).unwrap();
        assert!(!inserted);
        assert!(!g.has_edge(0, 1));
        assert_eq!(g.out_degree(0), 0);
    }

    #[test]
    fn toggle_is_involution() {
        let mut g = DynamicGraph::new(3);
        let before = g.edges();
        g.apply_event(EdgeEvent::new(0, 1, 1)).unwrap();
        g.apply_event(EdgeEvent::new(0, 1, 2)).unwrap();
        assert_eq!(g.edges(), before);
        g.check_invariants().unwrap();
    }

    #[test]
    fn rejects_out_of_range_nodes() {
        let mut g = DynamicGraph::new(2);
        assert!(g.apply_event(EdgeEvent::new(0, 5, 1)).is_err());
        assert!(g.apply_event(EdgeEvent::new(7, 0, 1)).is_err());
    }

    #[test]
    fn batch_delta_two_additions() {
        let g = DynamicGraph::new(3);
        let events = vec![EdgeEvent::new(0, 1, 1), EdgeEvent::new(0, 2, 2)];
        let deltas = batch_delta(&g, &events).unwrap();
        assert_eq!(deltas.len(), 1);
        let d = &deltas[0];
        assert_eq!(d.node, 0);
        assert_eq!(d.added, vec![1, 2]);
        assert!(d.deleted.is_empty());
        assert_eq!(d.old_out_degree, 0);
        assert_eq!(d.new_out_degree, 2);
    }

    #[test]
    fn batch_delta_net_zero_toggle() {
        let g = DynamicGraph::new(2);
        let events = vec![EdgeEvent::new(0, 1, 1), EdgeEvent::new(0, 1, 2)];
        let deltas = batch_delta(&g, &events).unwrap();
        assert!(deltas.is_empty());
    }

    #[test]
    fn batch_delta_mixed_add_delete() {
        // edge (2,1) pre-exists; events add (0,1), delete (2,1), add (0,3)
        let g = DynamicGraph::from_edges(4, &[(2, 1)]).unwrap();
        let events = vec![
            EdgeEvent::new(0, 1, 1),
            EdgeEvent::new(2, 1, 2),
            EdgeEvent::new(0, 3, 3),
        ];
        let mut deltas = batch_delta(&g, &events).unwrap();
        deltas.sort_by_key(|d| d.node);
        assert_eq!(deltas.len(), 2);
        assert_eq!(deltas[0].node, 0);
        assert_eq!(deltas[0].added, vec![1, 3]);
        assert!(deltas[0].deleted.is_empty());
        assert_eq!(deltas[1].node, 2);
        assert!(deltas[1].added.is_empty());
        assert_eq!(deltas[1].deleted, vec![1]);
        assert_eq!(deltas[1].old_out_degree, 1);
        assert_eq!(deltas[1].new_out_degree, 0);
    }

    #[test]
    fn degree_sum_matches_edge_count() {
        let mut g = DynamicGraph::new(5);
        let events = [
            (0, 1),
            (1, 2),
            (2, 3),
            (0, 1), // toggles off
            (3, 4),
            (4, 0),
        ];
        for (t, &(u, v)) in events.iter().enumerate() {
            g.apply_event(EdgeEvent::new(u, v, t as u64 + 1)).unwrap();
            let deg_sum: usize = (0..g.node_count()).map(|u| g.out_degree(u)).sum();
            assert_eq!(deg_sum, g.edge_count());
            g.check_invariants().unwrap();
        }
    }

    #[test]
    fn self_loop_passes_through() {
        let mut g = DynamicGraph::new(2);
        g.apply_event(EdgeEvent::new(1, 1, 1)).unwrap();
        assert!(g.has_edge(1, 1));
        assert_eq!(g.out_degree(1), 1);
        assert_eq!(g.in_degree(1), 1);
        g.apply_event(EdgeEvent::new(1, 1, 2)).unwrap();
        assert!(!g.has_edge(1, 1));
    }

    #[test]
    fn tracker_matches_standalone_batch_delta() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 12;
        let mut g = DynamicGraph::new(n);
        // warm up with random edges
        for t in 0..30u64 {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            g.apply_event(EdgeEvent::new(u, v, t)).unwrap();
        }
        let snapshot = g.clone();
        let events: Vec<EdgeEvent> = (0..40)
            .map(|t| EdgeEvent::new(rng.gen_range(0..n), rng.gen_range(0..n), 100 + t))
            .collect();

        let mut tracker = BatchTracker::new();
        for &e in &events {
            tracker.record(&g, e);
            g.apply_event(e).unwrap();
        }
        let mut live = tracker.take_deltas(&g);
        let mut replayed = batch_delta(&snapshot, &events).unwrap();
        live.sort_by_key(|d| d.node);
        replayed.sort_by_key(|d| d.node);
        assert_eq!(live, replayed);

        // reconciling deltas onto the snapshot reproduces the live adjacency
        for d in &replayed {
            assert_eq!(
                d.new_out_degree,
                d.old_out_degree + d.added.len() - d.deleted.len()
            );
            for v in &d.added {
                assert!(g.has_edge(d.node, *v));
                assert!(!snapshot.has_edge(d.node, *v));
            }
            for v in &d.deleted {
                assert!(!g.has_edge(d.node, *v));
                assert!(snapshot.has_edge(d.node, *v));
            }
        }
    }
}
