//! Propagation-based node embeddings maintained incrementally.
//!
//! Each feature dimension carries a reserve vector `h` (the current
//! approximation) and a residue vector `r` (unpropagated mass). Settling
//! pushes residues above the threshold `epsilon` into reserves and
//! downstream neighbors until every |r(s)| <= epsilon, which keeps the
//! per-dimension l1 gap between `h` and the exact propagation below
//! `n * epsilon` at all times.
//!
//! Topology changes are absorbed without recomputation: a batch of degree
//! deltas is converted into compensation residues (one term per changed
//! transition-probability entry) and settled on the new graph. Residues are
//! carried across updates rather than reset, which preserves the exact
//! identity `h + propagate(r) = z` and hence the `n * epsilon` contract
//! after every batch, not just in the from-scratch case.
//!
//! Dimensions are independent and settle in parallel; each owns its `(h, r)`
//! pair while the graph is only read.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{CodenError, Result};
use crate::graph::{DegreeDelta, DynamicGraph};

/// Dense node-feature matrix stored column-wise, with the cached per-node
/// maximum absolute value across dimensions.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    columns: Vec<Vec<f64>>,
    x_max: Vec<f64>,
    node_count: usize,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(CodenError::InvalidParameter(
                "feature matrix needs at least one dimension".into(),
            ));
        }
        let node_count = columns[0].len();
        for (i, c) in columns.iter().enumerate() {
            if c.len() != node_count {
                return Err(CodenError::ShapeMismatch(format!(
                    "feature column {i} has {} rows, expected {node_count}",
                    c.len()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(CodenError::Numeric(format!(
                    "non-finite value in feature column {i}"
                )));
            }
        }
        let mut fm = FeatureMatrix {
            columns,
            x_max: Vec::new(),
            node_count,
        };
        fm.refresh_x_max();
        Ok(fm)
    }

    /// Builds the matrix from per-node rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(CodenError::InvalidParameter("no feature rows".into()));
        }
        let f = rows[0].len();
        let mut columns = vec![vec![0.0; rows.len()]; f];
        for (u, row) in rows.iter().enumerate() {
            if row.len() != f {
                return Err(CodenError::ShapeMismatch(format!(
                    "feature row {u} has {} columns, expected {f}",
                    row.len()
                )));
            }
            for (i, &x) in row.iter().enumerate() {
                columns[i][u] = x;
            }
        }
        FeatureMatrix::new(columns)
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn column(&self, dim: usize) -> &[f64] {
        &self.columns[dim]
    }

    /// Per-node maximum absolute attribute value across dimensions.
    pub fn x_max(&self) -> &[f64] {
        &self.x_max
    }

    fn refresh_x_max(&mut self) {
        self.x_max = (0..self.node_count)
            .map(|u| {
                self.columns
                    .iter()
                    .map(|c| c[u].abs())
                    .fold(0.0_f64, f64::max)
            })
            .collect();
    }

    /// Adds `delta` to one feature column and refreshes the cached maxima.
    pub fn apply_delta(&mut self, dim: usize, delta: &[f64]) -> Result<()> {
        if dim >= self.columns.len() {
            return Err(CodenError::DimOutOfRange {
                dim,
                f: self.columns.len(),
            });
        }
        if delta.len() != self.node_count {
            return Err(CodenError::ShapeMismatch(format!(
                "delta has {} rows, expected {}",
                delta.len(),
                self.node_count
            )));
        }
        if delta.iter().any(|x| !x.is_finite()) {
            return Err(CodenError::Numeric("non-finite feature delta".into()));
        }
        for (x, d) in self.columns[dim].iter_mut().zip(delta) {
            *x += d;
        }
        self.refresh_x_max();
        Ok(())
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.node_count, self.columns.len(), |u, i| {
            self.columns[i][u]
        })
    }
}

/// Reserve/residue pair for one feature dimension, plus reusable settle
/// scratch.
#[derive(Debug, Clone)]
struct DimChannel {
    reserve: Vec<f64>,
    residue: Vec<f64>,
    in_queue: Vec<bool>,
    push_ops: u64,
}

impl DimChannel {
    fn new(n: usize) -> Self {
        DimChannel {
            reserve: vec![0.0; n],
            residue: vec![0.0; n],
            in_queue: vec![false; n],
            push_ops: 0,
        }
    }
}

/// Per-dimension embedding state under the `n * epsilon` accuracy contract.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    alpha: f64,
    epsilon: f64,
    channels: Vec<DimChannel>,
    node_count: usize,
}

impl EmbeddingState {
    /// Empty state (h = r = 0) for `dims` feature dimensions.
    pub fn zeros(node_count: usize, dims: usize, alpha: f64, epsilon: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(CodenError::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(EmbeddingState {
            alpha,
            epsilon,
            channels: (0..dims).map(|_| DimChannel::new(node_count)).collect(),
            node_count,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dims(&self) -> usize {
        self.channels.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn reserve(&self, dim: usize) -> &[f64] {
        &self.channels[dim].reserve
    }

    pub fn residue(&self, dim: usize) -> &[f64] {
        &self.channels[dim].residue
    }

    /// Total push work performed so far (settles plus neighbor updates),
    /// summed over dimensions.
    pub fn push_ops(&self) -> u64 {
        self.channels.iter().map(|c| c.push_ops).sum()
    }

    /// Reserve vectors as an n x F matrix, row per node.
    pub fn embedding_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.node_count, self.channels.len(), |u, i| {
            self.channels[i].reserve[u]
        })
    }

    /// Max over dimensions of the residue l1 norm. Test support.
    pub fn max_residual_l1(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| c.residue.iter().map(|r| r.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CodenError::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(())
}

/// Settles one channel: drains residues above epsilon into the reserve and
/// out-neighbors in FIFO order. `seeds` are the candidate start nodes; any
/// other node can only become active by receiving pushed mass.
fn settle_channel(
    graph: &DynamicGraph,
    alpha: f64,
    epsilon: f64,
    chan: &mut DimChannel,
    seeds: impl IntoIterator<Item = usize>,
) {
    let mut queue = VecDeque::new();
    for s in seeds {
        if chan.residue[s].abs() > epsilon && !chan.in_queue[s] {
            chan.in_queue[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        chan.in_queue[s] = false;
        let mass = chan.residue[s];
        if mass.abs() <= epsilon {
            continue; // drained below threshold by cancellation
        }
        chan.residue[s] = 0.0;
        chan.reserve[s] += alpha * mass;
        chan.push_ops += 1;
        let deg = graph.out_degree(s);
        if deg == 0 {
            continue; // sink: the (1 - alpha) share is dropped
        }
        let share = (1.0 - alpha) * mass / deg as f64;
        for &v in graph.out_neighbors(s) {
            chan.residue[v] += share;
            chan.push_ops += 1;
            if chan.residue[v].abs() > epsilon && !chan.in_queue[v] {
                chan.in_queue[v] = true;
                queue.push_back(v);
            }
        }
    }
}

/// Settles a single dimension of `state` against `graph`.
///
/// Scans the whole residue vector for start nodes; internal callers that
/// know which nodes were touched use the seeded path instead.
pub fn forward_push(graph: &DynamicGraph, state: &mut EmbeddingState, dim: usize) -> Result<()> {
    if dim >= state.channels.len() {
        return Err(CodenError::DimOutOfRange {
            dim,
            f: state.channels.len(),
        });
    }
    if state.channels[dim].residue.iter().any(|r| !r.is_finite()) {
        return Err(CodenError::Numeric(format!(
            "non-finite residue in dimension {dim}"
        )));
    }
    let (alpha, epsilon) = (state.alpha, state.epsilon);
    let n = state.node_count;
    settle_channel(graph, alpha, epsilon, &mut state.channels[dim], 0..n);
    Ok(())
}

/// Computes embeddings from scratch: per dimension, residue starts at the
/// attribute column with an empty reserve, then settles.
pub fn compute_base_embedding(
    graph: &DynamicGraph,
    features: &FeatureMatrix,
    alpha: f64,
    epsilon: f64,
) -> Result<EmbeddingState> {
    if features.node_count() != graph.node_count() {
        return Err(CodenError::ShapeMismatch(format!(
            "features have {} nodes, graph has {}",
            features.node_count(),
            graph.node_count()
        )));
    }
    let mut state = EmbeddingState::zeros(graph.node_count(), features.dims(), alpha, epsilon)?;
    let n = graph.node_count();
    state
        .channels
        .par_iter_mut()
        .enumerate()
        .for_each(|(dim, chan)| {
            chan.residue.copy_from_slice(features.column(dim));
            settle_channel(graph, alpha, epsilon, chan, 0..n);
        });
    Ok(state)
}

fn validate_deltas(
    graph_old: &DynamicGraph,
    deltas: &[DegreeDelta],
    graph_new: &DynamicGraph,
) -> Result<()> {
    if graph_old.node_count() != graph_new.node_count() {
        return Err(CodenError::InconsistentInput(
            "old and new graphs have different node counts".into(),
        ));
    }
    for d in deltas {
        if d.node >= graph_new.node_count() {
            return Err(CodenError::NodeOutOfRange {
                id: d.node,
                n: graph_new.node_count(),
            });
        }
        if d.old_out_degree != graph_old.out_degree(d.node)
            || d.new_out_degree != graph_new.out_degree(d.node)
            || d.old_out_degree + d.added.len() != d.new_out_degree + d.deleted.len()
        {
            return Err(CodenError::InconsistentInput(format!(
                "delta for node {} does not match the graphs",
                d.node
            )));
        }
        for &v in &d.added {
            if !graph_new.has_edge(d.node, v) || graph_old.has_edge(d.node, v) {
                return Err(CodenError::InconsistentInput(format!(
                    "added edge ({}, {v}) inconsistent with graphs",
                    d.node
                )));
            }
        }
        for &v in &d.deleted {
            if graph_new.has_edge(d.node, v) || !graph_old.has_edge(d.node, v) {
                return Err(CodenError::InconsistentInput(format!(
                    "deleted edge ({}, {v}) inconsistent with graphs",
                    d.node
                )));
            }
        }
    }
    Ok(())
}

/// Transfers a settled state from `graph_old` to `graph_new`.
///
/// For every changed node u the compensation residue receives one term per
/// affected transition entry: added neighbors gain `(1-a) h(u) / deg_new`,
/// deleted neighbors lose `(1-a) h(u) / deg_old`, and surviving neighbors
/// absorb the renormalization difference. Settling on the new graph then
/// restores |r| <= epsilon everywhere, re-establishing the accuracy
/// contract against the new topology.
pub fn embedding_update(
    graph_old: &DynamicGraph,
    deltas: &[DegreeDelta],
    graph_new: &DynamicGraph,
    state: &mut EmbeddingState,
) -> Result<()> {
    validate_deltas(graph_old, deltas, graph_new)?;
    embedding_update_unchecked(deltas, graph_new, state)
}

/// [`embedding_update`] without the delta/graph consistency validation, for
/// callers that produced the deltas from the live event stream.
pub fn embedding_update_unchecked(
    deltas: &[DegreeDelta],
    graph_new: &DynamicGraph,
    state: &mut EmbeddingState,
) -> Result<()> {
    if state.node_count != graph_new.node_count() {
        return Err(CodenError::ShapeMismatch(format!(
            "state has {} nodes, graph has {}",
            state.node_count,
            graph_new.node_count()
        )));
    }
    if deltas.is_empty() {
        return Ok(());
    }
    let (alpha, epsilon) = (state.alpha, state.epsilon);
    // settling a residue seed contributes alpha * R * r to the reserve, so
    // transferring the full reserve difference across the topology change
    // needs the (1 - alpha) / alpha scale
    let beta = (1.0 - alpha) / alpha;
    state.channels.par_iter_mut().for_each(|chan| {
        let mut touched = Vec::new();
        for d in deltas {
            let h_u = chan.reserve[d.node];
            if h_u == 0.0 {
                continue;
            }
            if !d.added.is_empty() {
                let gain = beta * h_u / d.new_out_degree as f64;
                for &v in &d.added {
                    chan.residue[v] += gain;
                    touched.push(v);
                }
            }
            if !d.deleted.is_empty() {
                let loss = beta * h_u / d.old_out_degree as f64;
                for &v in &d.deleted {
                    chan.residue[v] -= loss;
                    touched.push(v);
                }
            }
            if d.old_out_degree > 0 && d.new_out_degree > 0 && d.old_out_degree != d.new_out_degree
            {
                let shift =
                    beta * h_u * (1.0 / d.new_out_degree as f64 - 1.0 / d.old_out_degree as f64);
                for &w in graph_new.out_neighbors(d.node) {
                    if d.added.binary_search(&w).is_err() {
                        chan.residue[w] += shift;
                        touched.push(w);
                    }
                }
            }
        }
        settle_channel(graph_new, alpha, epsilon, chan, touched);
    });
    Ok(())
}

/// Absorbs an additive change to one feature column: the delta itself is the
/// compensation residue, settled in place.
pub fn attribute_update(
    graph: &DynamicGraph,
    state: &mut EmbeddingState,
    features: &mut FeatureMatrix,
    delta_x: &[f64],
    dim: usize,
) -> Result<()> {
    if dim >= state.channels.len() {
        return Err(CodenError::DimOutOfRange {
            dim,
            f: state.channels.len(),
        });
    }
    features.apply_delta(dim, delta_x)?;
    let (alpha, epsilon) = (state.alpha, state.epsilon);
    let chan = &mut state.channels[dim];
    let mut touched = Vec::new();
    for (v, &d) in delta_x.iter().enumerate() {
        if d != 0.0 {
            chan.residue[v] += d;
            touched.push(v);
        }
    }
    settle_channel(graph, alpha, epsilon, chan, touched);
    Ok(())
}

/// Dense reference solution `Z = a (I - (1-a) P)^{-1} X` with `P` built
/// column-wise from out-degrees and zero columns for sinks.
///
/// Direct solve, intended for verification at small scale.
pub fn exact_ppr_oracle(
    graph: &DynamicGraph,
    features: &FeatureMatrix,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    let n = graph.node_count();
    if n > 2000 {
        return Err(CodenError::InvalidParameter(format!(
            "dense solve limited to 2000 nodes, got {n}"
        )));
    }
    if features.node_count() != n {
        return Err(CodenError::ShapeMismatch(
            "feature/graph node counts differ".into(),
        ));
    }
    // system = I - (1-alpha) P, with P[v,u] = 1/outdeg(u) for u -> v
    let mut system = DMatrix::<f64>::identity(n, n);
    for u in 0..n {
        let deg = graph.out_degree(u);
        if deg == 0 {
            continue;
        }
        let w = (1.0 - alpha) / deg as f64;
        for &v in graph.out_neighbors(u) {
            system[(v, u)] -= w;
        }
    }
    let x = features.as_matrix();
    let lu = system.lu();
    let solved = lu
        .solve(&x)
        .ok_or_else(|| CodenError::Numeric("singular propagation system".into()))?;
    Ok(solved * alpha)
}

/// Max over dimensions of the per-dimension l1 gap between the state's
/// reserves and a dense reference `z`.
pub fn l1_gap(state: &EmbeddingState, z: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for (dim, chan) in state.channels.iter().enumerate() {
        let gap: f64 = chan
            .reserve
            .iter()
            .enumerate()
            .map(|(u, h)| (h - z[(u, dim)]).abs())
            .sum();
        worst = worst.max(gap);
    }
    worst
}
