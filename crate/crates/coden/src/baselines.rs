//! Ablation variants and representation diagnostics.
//!
//! The attention variant replaces the state-space block with per-node
//! softmax attention over the node's own embedding history; its per-step
//! cost therefore grows with the number of retained snapshots. The
//! Dirichlet energy measures how distinguishable neighboring node
//! representations remain (larger is less smoothed).

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{CodenError, Result};
use crate::graph::DynamicGraph;
use crate::learner::ClassifierHead;

/// Query/key/value projections for the attention variant.
#[derive(Debug, Clone)]
pub struct AttentionParameters {
    pub w_q: DMatrix<f64>, // state_dim x input_dim
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

impl AttentionParameters {
    pub fn init(input_dim: usize, state_dim: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (input_dim as f64).sqrt();
        let mut gen =
            || DMatrix::from_fn(state_dim, input_dim, |_, _| rng.gen_range(-scale..scale));
        AttentionParameters {
            w_q: gen(),
            w_k: gen(),
            w_v: gen(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.w_q.nrows()
    }

    fn check(&self, h_seq: &[DMatrix<f64>]) -> Result<()> {
        if h_seq.is_empty() {
            return Err(CodenError::InvalidParameter(
                "attention needs at least one snapshot".into(),
            ));
        }
        let f = self.w_q.ncols();
        for (s, h) in h_seq.iter().enumerate() {
            if h.ncols() != f {
                return Err(CodenError::ShapeMismatch(format!(
                    "snapshot {s} has {} feature columns, projections expect {f}",
                    h.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// Per-node temporal attention state over the snapshot history `0..t`.
///
/// For node u: scores the current projected embedding against every
/// historical key of the same node, softmax-normalizes over time, and
/// averages the projected values.
pub fn attention_state(
    h_seq: &[DMatrix<f64>],
    params: &AttentionParameters,
) -> Result<DMatrix<f64>> {
    let weights = attention_weights(h_seq, params)?;
    let n = h_seq[0].nrows();
    let fp = params.state_dim();
    let values: Vec<DMatrix<f64>> = h_seq.iter().map(|h| h * params.w_v.transpose()).collect();
    let mut m = DMatrix::zeros(n, fp);
    for u in 0..n {
        for (s, v) in values.iter().enumerate() {
            let w = weights[(u, s)];
            for i in 0..fp {
                m[(u, i)] += w * v[(u, i)];
            }
        }
    }
    Ok(m)
}

/// Softmax weights per node over snapshots (n x steps). Rows sum to one.
pub fn attention_weights(
    h_seq: &[DMatrix<f64>],
    params: &AttentionParameters,
) -> Result<DMatrix<f64>> {
    params.check(h_seq)?;
    let steps = h_seq.len();
    let n = h_seq[0].nrows();
    let fp = params.state_dim();
    let scale = 1.0 / (fp as f64).sqrt();
    let query = &h_seq[steps - 1] * params.w_q.transpose();
    let keys: Vec<DMatrix<f64>> = h_seq.iter().map(|h| h * params.w_k.transpose()).collect();
    let mut weights = DMatrix::zeros(n, steps);
    for u in 0..n {
        let mut max = f64::NEG_INFINITY;
        for (s, k) in keys.iter().enumerate() {
            let mut dot = 0.0;
            for i in 0..fp {
                dot += query[(u, i)] * k[(u, i)];
            }
            let score = dot * scale;
            weights[(u, s)] = score;
            max = max.max(score);
        }
        let mut z = 0.0;
        for s in 0..steps {
            let e = (weights[(u, s)] - max).exp();
            weights[(u, s)] = e;
            z += e;
        }
        for s in 0..steps {
            weights[(u, s)] /= z;
        }
    }
    Ok(weights)
}

/// Attention ablation model: projections plus classifier head, trained
/// end to end on the node's snapshot history.
#[derive(Debug, Clone)]
pub struct AttentionModel {
    pub params: AttentionParameters,
    pub head: ClassifierHead,
}

impl AttentionModel {
    pub fn new(
        input_dim: usize,
        state_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        AttentionModel {
            params: AttentionParameters::init(input_dim, state_dim, rng),
            head: ClassifierHead::init(state_dim, hidden, classes, rng),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        out.extend(self.params.w_q.iter());
        out.extend(self.params.w_k.iter());
        out.extend(self.params.w_v.iter());
        // head packs in its own order behind the projections
        let head_model = crate::learner::SnapshotModel {
            head: self.head.clone(),
        };
        out.extend(head_model.flat_params());
        out
    }

    pub fn assign_flat(&mut self, src: &[f64]) {
        let mut k = 0;
        for v in self.params.w_q.iter_mut() {
            *v = src[k];
            k += 1;
        }
        for v in self.params.w_k.iter_mut() {
            *v = src[k];
            k += 1;
        }
        for v in self.params.w_v.iter_mut() {
            *v = src[k];
            k += 1;
        }
        let mut head_model = crate::learner::SnapshotModel {
            head: self.head.clone(),
        };
        head_model.assign_flat(&src[k..]);
        self.head = head_model.head;
    }

    /// Loss over the attention state of the full history, with analytic
    /// gradients for the projections and the head.
    pub fn loss_and_grad(
        &self,
        h_seq: &[DMatrix<f64>],
        labels: &[usize],
        mask: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        self.params.check(h_seq)?;
        let steps = h_seq.len();
        let n = h_seq[0].nrows();
        let fp = self.params.state_dim();
        let f = self.params.w_q.ncols();
        let scale = 1.0 / (fp as f64).sqrt();

        let query = &h_seq[steps - 1] * self.params.w_q.transpose();
        let keys: Vec<DMatrix<f64>> = h_seq
            .iter()
            .map(|h| h * self.params.w_k.transpose())
            .collect();
        let values: Vec<DMatrix<f64>> = h_seq
            .iter()
            .map(|h| h * self.params.w_v.transpose())
            .collect();
        let weights = attention_weights(h_seq, &self.params)?;

        let mut state = DMatrix::zeros(n, fp);
        for u in 0..n {
            for s in 0..steps {
                let w = weights[(u, s)];
                for i in 0..fp {
                    state[(u, i)] += w * values[s][(u, i)];
                }
            }
        }

        let (hidden, logits) = self.head.forward(&state);
        let (loss, dlogits) = crate::learner::cross_entropy(&logits, labels, mask)?;

        let proj_len = 3 * fp * f;
        let mut grads = vec![0.0; self.flat_params().len()];
        let d_state = self
            .head
            .backward(&state, &hidden, &dlogits, &mut grads, proj_len);

        // backward through the per-node softmax attention
        let mut g_wq = DMatrix::zeros(fp, f);
        let mut g_wk = DMatrix::zeros(fp, f);
        let mut g_wv = DMatrix::zeros(fp, f);
        let mut g_query_row = vec![0.0; fp];
        for u in 0..n {
            // d loss / d weights, then softmax jacobian back to scores
            let mut g_w = vec![0.0; steps];
            let mut dot_gw_w = 0.0;
            for s in 0..steps {
                let mut acc = 0.0;
                for i in 0..fp {
                    acc += d_state[(u, i)] * values[s][(u, i)];
                }
                g_w[s] = acc;
                dot_gw_w += acc * weights[(u, s)];
            }
            for x in g_query_row.iter_mut() {
                *x = 0.0;
            }
            for s in 0..steps {
                let w = weights[(u, s)];
                let g_score = w * (g_w[s] - dot_gw_w) * scale;
                // value projection: g_Wv += w * d_state(u) x h_s(u)
                for i in 0..fp {
                    let gv = weights[(u, s)] * d_state[(u, i)];
                    let gk = g_score * query[(u, i)];
                    g_query_row[i] += g_score * keys[s][(u, i)];
                    for j in 0..f {
                        let h_uj = h_seq[s][(u, j)];
                        g_wv[(i, j)] += gv * h_uj;
                        g_wk[(i, j)] += gk * h_uj;
                    }
                }
            }
            for i in 0..fp {
                for j in 0..f {
                    g_wq[(i, j)] += g_query_row[i] * h_seq[steps - 1][(u, j)];
                }
            }
        }

        let mut k = 0;
        for v in g_wq.iter() {
            grads[k] += v;
            k += 1;
        }
        for v in g_wk.iter() {
            grads[k] += v;
            k += 1;
        }
        for v in g_wv.iter() {
            grads[k] += v;
            k += 1;
        }
        Ok((loss, grads))
    }
}

/// Degree-normalized Dirichlet energy over directed edges:
/// `1/2 sum_(i,j) || M(i)/sqrt(1+deg_out(i)) - M(j)/sqrt(1+deg_out(j)) ||^2`.
pub fn dirichlet_energy(m: &DMatrix<f64>, graph: &DynamicGraph) -> Result<f64> {
    if m.nrows() != graph.node_count() {
        return Err(CodenError::ShapeMismatch(format!(
            "state has {} rows, graph has {} nodes",
            m.nrows(),
            graph.node_count()
        )));
    }
    let inv_sqrt: Vec<f64> = (0..graph.node_count())
        .map(|u| 1.0 / (1.0 + graph.out_degree(u) as f64).sqrt())
        .collect();
    let mut energy = 0.0;
    for i in 0..graph.node_count() {
        for &j in graph.out_neighbors(i) {
            let mut d2 = 0.0;
            for c in 0..m.ncols() {
                let diff = m[(i, c)] * inv_sqrt[i] - m[(j, c)] * inv_sqrt[j];
                d2 += diff * diff;
            }
            energy += d2;
        }
    }
    Ok(0.5 * energy)
}

/// Trace form `tr(M^T (I - A^T D^{-1}) M)`. On a d-regular graph with a
/// symmetric edge set this equals the edge-sum form times `(1 + d) / d`;
/// kept as a cross-check oracle only.
pub fn dirichlet_energy_trace_form(m: &DMatrix<f64>, graph: &DynamicGraph) -> Result<f64> {
    let n = graph.node_count();
    if m.nrows() != n {
        return Err(CodenError::ShapeMismatch(
            "state/graph size mismatch".into(),
        ));
    }
    // tr(M^T M) - tr(M^T P M) with P[v,u] = 1/deg_out(u) for u -> v
    let mut total = m.iter().map(|x| x * x).sum::<f64>();
    for u in 0..n {
        let deg = graph.out_degree(u);
        if deg == 0 {
            continue;
        }
        let w = 1.0 / deg as f64;
        for &v in graph.out_neighbors(u) {
            for c in 0..m.ncols() {
                total -= m[(v, c)] * w * m[(u, c)];
            }
        }
    }
    Ok(total)
}

/// Class scores from the current embedding only (no temporal state).
pub fn snapshot_only_predict(h: &DMatrix<f64>, head: &ClassifierHead) -> Result<DMatrix<f64>> {
    if h.ncols() != head.in_dim() {
        return Err(CodenError::ShapeMismatch(format!(
            "embedding has {} columns, head expects {}",
            h.ncols(),
            head.in_dim()
        )));
    }
    Ok(head.logits(h))
}
