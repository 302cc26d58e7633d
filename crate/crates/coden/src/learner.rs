//! Training machinery: classifier head, temporal-model gradients, optimizer,
//! and evaluation metrics.
//!
//! Gradients are computed analytically. For the temporal models the loss is
//! backpropagated through the state recurrence across the sampled window
//! (the carried-in state is treated as a constant), through the zero-order
//! hold into the continuous parameters, and through the softplus step-size
//! reparameterization. All parameters live in one flat vector so the
//! optimizer and the finite-difference checks stay uniform.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{CodenError, Result};
use crate::ssm::{orthogonality_penalty, orthogonality_penalty_grad, SsmParameters};

pub fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Two-layer classifier `logits = W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub w1: DMatrix<f64>, // hidden x in
    pub b1: Vec<f64>,
    pub w2: DMatrix<f64>, // classes x hidden
    pub b2: Vec<f64>,
}

impl ClassifierHead {
    pub fn init(in_dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let s1 = 1.0 / (in_dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        ClassifierHead {
            w1: DMatrix::from_fn(hidden, in_dim, |_, _| rng.gen_range(-s1..s1)),
            b1: vec![0.0; hidden],
            w2: DMatrix::from_fn(classes, hidden, |_, _| rng.gen_range(-s2..s2)),
            b2: vec![0.0; classes],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    /// Hidden activations and logits for a batch of rows.
    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut hidden = x * self.w1.transpose();
        for u in 0..hidden.nrows() {
            for j in 0..hidden.ncols() {
                hidden[(u, j)] = (hidden[(u, j)] + self.b1[j]).tanh();
            }
        }
        let mut logits = &hidden * self.w2.transpose();
        for u in 0..logits.nrows() {
            for c in 0..logits.ncols() {
                logits[(u, c)] += self.b2[c];
            }
        }
        (hidden, logits)
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).1
    }

    fn pack(&self, out: &mut Vec<f64>) {
        out.extend(self.w1.iter());
        out.extend(&self.b1);
        out.extend(self.w2.iter());
        out.extend(&self.b2);
    }

    fn unpack(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for v in self.w1.iter_mut() {
            *v = src[k];
            k += 1;
        }
        for v in self.b1.iter_mut() {
            *v = src[k];
            k += 1;
        }
        for v in self.w2.iter_mut() {
            *v = src[k];
            k += 1;
        }
        for v in self.b2.iter_mut() {
            *v = src[k];
            k += 1;
        }
        k
    }

    /// Backward pass. Returns the input gradient and appends parameter
    /// gradients in pack order to `grads` starting at `offset`.
    pub(crate) fn backward(
        &self,
        x: &DMatrix<f64>,
        hidden: &DMatrix<f64>,
        dlogits: &DMatrix<f64>,
        grads: &mut [f64],
        offset: usize,
    ) -> DMatrix<f64> {
        let dw2 = dlogits.transpose() * hidden;
        let mut db2 = vec![0.0; self.b2.len()];
        for c in 0..dlogits.ncols() {
            db2[c] = dlogits.column(c).sum();
        }
        let dhidden = dlogits * &self.w2;
        let mut dpre = dhidden;
        for u in 0..dpre.nrows() {
            for j in 0..dpre.ncols() {
                let t = hidden[(u, j)];
                dpre[(u, j)] *= 1.0 - t * t;
            }
        }
        let dw1 = dpre.transpose() * x;
        let mut db1 = vec![0.0; self.b1.len()];
        for j in 0..dpre.ncols() {
            db1[j] = dpre.column(j).sum();
        }
        let dx = &dpre * &self.w1;

        let mut k = offset;
        for v in dw1.iter() {
            grads[k] += v;
            k += 1;
        }
        for v in &db1 {
            grads[k] += v;
            k += 1;
        }
        for v in dw2.iter() {
            grads[k] += v;
            k += 1;
        }
        for v in &db2 {
            grads[k] += v;
            k += 1;
        }
        dx
    }
}

/// Mean cross-entropy over masked rows; returns the loss and dlogits.
pub(crate) fn cross_entropy(
    logits: &DMatrix<f64>,
    labels: &[usize],
    mask: &[usize],
) -> Result<(f64, DMatrix<f64>)> {
    if mask.is_empty() {
        return Err(CodenError::InvalidParameter("empty node mask".into()));
    }
    let classes = logits.ncols();
    let mut dlogits = DMatrix::zeros(logits.nrows(), classes);
    let inv = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    for &u in mask {
        let row = logits.row(u);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let y = labels[u];
        if y >= classes {
            return Err(CodenError::InvalidParameter(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        loss += (log_z - logits[(u, y)]) * inv;
        for c in 0..classes {
            let p = (logits[(u, c)] - log_z).exp();
            dlogits[(u, c)] = (p - if c == y { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok((loss, dlogits))
}

/// Temporal parameter block: diagonal transition, dense input matrix, and a
/// shared softplus-parameterized step size; or the fully constrained gate.
#[derive(Debug, Clone)]
pub enum SsmKind {
    General {
        a: Vec<f64>,     // diagonal of the continuous transition
        b: DMatrix<f64>, // state_dim x input_dim
        s: f64,          // delta = softplus(s)
    },
    Gated {
        s: f64,
        dim: usize,
    },
}

impl SsmKind {
    pub fn state_dim(&self) -> usize {
        match self {
            SsmKind::General { a, .. } => a.len(),
            SsmKind::Gated { dim, .. } => *dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SsmKind::General { b, .. } => b.ncols(),
            SsmKind::Gated { dim, .. } => *dim,
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            SsmKind::General { s, .. } | SsmKind::Gated { s, .. } => softplus(*s),
        }
    }
}

/// Trainable temporal model: state-space block plus classifier head.
#[derive(Debug, Clone)]
pub struct CodenModel {
    pub ssm: SsmKind,
    pub head: ClassifierHead,
    pub gamma: f64,
}

impl CodenModel {
    /// General mode. Transition diagonal starts at -1, the input matrix is
    /// uniform in [-1/sqrt(F), 1/sqrt(F)], and s = 0 gives a half-life-one
    /// gate.
    pub fn general(
        input_dim: usize,
        state_dim: usize,
        hidden: usize,
        classes: usize,
        gamma: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = 1.0 / (input_dim as f64).sqrt();
        CodenModel {
            ssm: SsmKind::General {
                a: vec![-1.0; state_dim],
                b: DMatrix::from_fn(state_dim, input_dim, |_, _| rng.gen_range(-scale..scale)),
                s: 0.0,
            },
            head: ClassifierHead::init(state_dim, hidden, classes, rng),
            gamma,
        }
    }

    /// Gated mode; the state dimension is pinned to the input dimension.
    pub fn gated(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        gamma: f64,
        rng: &mut impl Rng,
    ) -> Self {
        CodenModel {
            ssm: SsmKind::Gated {
                s: 0.0,
                dim: input_dim,
            },
            head: ClassifierHead::init(input_dim, hidden, classes, rng),
            gamma,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.ssm.state_dim()
    }

    /// Snapshot of the current parameters as a discretized operator pair.
    pub fn to_ssm_parameters(&self) -> Result<SsmParameters> {
        match &self.ssm {
            SsmKind::General { a, b, s } => {
                SsmParameters::diagonal(a.clone(), b.clone(), softplus(*s), self.gamma)
            }
            SsmKind::Gated { s, dim } => SsmParameters::gated(*dim, softplus(*s), self.gamma),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match &self.ssm {
            SsmKind::General { a, b, s } => {
                out.extend(a);
                out.extend(b.iter());
                out.push(*s);
            }
            SsmKind::Gated { s, .. } => out.push(*s),
        }
        self.head.pack(&mut out);
        out
    }

    pub fn assign_flat(&mut self, src: &[f64]) {
        let mut k = 0;
        match &mut self.ssm {
            SsmKind::General { a, b, s } => {
                for v in a.iter_mut() {
                    *v = src[k];
                    k += 1;
                }
                for v in b.iter_mut() {
                    *v = src[k];
                    k += 1;
                }
                *s = src[k];
                k += 1;
            }
            SsmKind::Gated { s, .. } => {
                *s = src[k];
                k += 1;
            }
        }
        k += self.head.unpack(&src[k..]);
        debug_assert_eq!(k, src.len());
    }

    fn ssm_param_len(&self) -> usize {
        match &self.ssm {
            SsmKind::General { a, b, .. } => a.len() + b.len() + 1,
            SsmKind::Gated { .. } => 1,
        }
    }

    /// Discretized operators for the current parameters:
    /// per-channel `a_bar = exp(delta a)` and row-scaled `b_bar`.
    fn discretize(&self) -> (Vec<f64>, DMatrix<f64>) {
        match &self.ssm {
            SsmKind::General { a, b, s } => {
                let delta = softplus(*s);
                let a_bar: Vec<f64> = a.iter().map(|ai| (delta * ai).exp()).collect();
                let mut b_bar = b.clone();
                for (i, &ai) in a.iter().enumerate() {
                    let scale = crate::ssm::zoh_input_scale(delta, ai);
                    for j in 0..b_bar.ncols() {
                        b_bar[(i, j)] *= scale;
                    }
                }
                (a_bar, b_bar)
            }
            SsmKind::Gated { s, dim } => {
                let z = (-softplus(*s)).exp();
                let mut b_bar = DMatrix::zeros(*dim, *dim);
                for i in 0..*dim {
                    b_bar[(i, i)] = 1.0 - z;
                }
                (vec![z; *dim], b_bar)
            }
        }
    }

    /// Runs the recurrence over a window. Returns all states including the
    /// carried-in one at index 0.
    pub fn forward_states(
        &self,
        m_start: &DMatrix<f64>,
        h_seq: &[DMatrix<f64>],
    ) -> Vec<DMatrix<f64>> {
        let (a_bar, b_bar) = self.discretize();
        let mut states = Vec::with_capacity(h_seq.len() + 1);
        states.push(m_start.clone());
        for h in h_seq {
            let prev = states.last().unwrap();
            let mut next = h * b_bar.transpose();
            for u in 0..next.nrows() {
                for (i, &ai) in a_bar.iter().enumerate() {
                    next[(u, i)] = crate::ssm::flush_subnormal(next[(u, i)] + ai * prev[(u, i)]);
                }
            }
            states.push(next);
        }
        states
    }

    /// Loss over the final window state plus the soft-orthogonality terms,
    /// with the full flat gradient.
    pub fn loss_and_grad(
        &self,
        m_start: &DMatrix<f64>,
        h_seq: &[DMatrix<f64>],
        labels: &[usize],
        mask: &[usize],
        reg_weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        if h_seq.is_empty() {
            return Err(CodenError::InvalidParameter(
                "training window has no sampled embeddings".into(),
            ));
        }
        let (a_bar, b_bar) = self.discretize();
        let states = self.forward_states(m_start, h_seq);
        let final_state = states.last().unwrap();
        let (hidden, logits) = self.head.forward(final_state);
        let (ce, dlogits) = cross_entropy(&logits, labels, mask)?;

        let mut grads = vec![0.0; self.flat_params().len()];
        let ssm_len = self.ssm_param_len();

        // head backward; gradient w.r.t. the final state comes back
        let mut gm = self
            .head
            .backward(final_state, &hidden, &dlogits, &mut grads, ssm_len);

        // backprop through the recurrence
        let state_dim = self.state_dim();
        let mut g_a_bar = vec![0.0; state_dim];
        let mut g_b_bar = DMatrix::zeros(state_dim, b_bar.ncols());
        for k in (1..states.len()).rev() {
            let prev = &states[k - 1];
            let h = &h_seq[k - 1];
            for u in 0..gm.nrows() {
                for i in 0..state_dim {
                    g_a_bar[i] += gm[(u, i)] * prev[(u, i)];
                }
            }
            g_b_bar += gm.transpose() * h;
            if k > 1 {
                for u in 0..gm.nrows() {
                    for i in 0..state_dim {
                        gm[(u, i)] = crate::ssm::flush_subnormal(gm[(u, i)] * a_bar[i]);
                    }
                }
            }
        }

        // soft-orthogonality terms on the discretized operators
        let mut loss = ce;
        if reg_weight > 0.0 {
            let g2 = self.gamma * self.gamma;
            for (i, &ai) in a_bar.iter().enumerate() {
                let gap = ai * ai - g2;
                loss += reg_weight * gap * gap;
                g_a_bar[i] += reg_weight * 4.0 * ai * gap;
            }
            loss += reg_weight * orthogonality_penalty(&b_bar, self.gamma);
            g_b_bar += orthogonality_penalty_grad(&b_bar, self.gamma) * reg_weight;
        }

        // chain through the hold into the continuous parameters
        match &self.ssm {
            SsmKind::General { a, b, s } => {
                let delta = softplus(*s);
                let mut g_delta = 0.0;
                for i in 0..state_dim {
                    let ai = a[i];
                    let e = (delta * ai).exp();
                    let q: f64 = (0..b.ncols()).map(|j| g_b_bar[(i, j)] * b[(i, j)]).sum();
                    let dscale_da = if ai.abs() < 1e-8 {
                        // series limit of d/da[(exp(delta a) - 1)/a]
                        delta * delta / 2.0 + delta * delta * delta * ai / 3.0
                    } else {
                        (delta * e * ai - (delta * ai).exp_m1()) / (ai * ai)
                    };
                    grads[i] += g_a_bar[i] * delta * e + q * dscale_da;
                    g_delta += g_a_bar[i] * ai * e + q * e;
                }
                let scale_row: Vec<f64> = a
                    .iter()
                    .map(|&ai| crate::ssm::zoh_input_scale(delta, ai))
                    .collect();
                // flat layout is column-major, matching DMatrix::iter
                let mut k = state_dim;
                for j in 0..b.ncols() {
                    for i in 0..state_dim {
                        grads[k] += g_b_bar[(i, j)] * scale_row[i];
                        k += 1;
                    }
                }
                grads[k] += g_delta * sigmoid(*s);
            }
            SsmKind::Gated { s, dim } => {
                let delta = softplus(*s);
                let z = (-delta).exp();
                // a_bar_i = z, b_bar = (1-z) I
                let mut g_z = 0.0;
                for i in 0..*dim {
                    g_z += g_a_bar[i];
                    g_z -= g_b_bar[(i, i)];
                }
                let g_delta = -z * g_z;
                grads[0] += g_delta * sigmoid(*s);
            }
        }

        if !loss.is_finite() {
            return Err(CodenError::Numeric(format!("non-finite loss {loss}")));
        }
        Ok((loss, grads))
    }
}

/// Head-only model predicting from the current embedding (no temporal
/// state).
#[derive(Debug, Clone)]
pub struct SnapshotModel {
    pub head: ClassifierHead,
}

impl SnapshotModel {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        SnapshotModel {
            head: ClassifierHead::init(input_dim, hidden, classes, rng),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.head.pack(&mut out);
        out
    }

    pub fn assign_flat(&mut self, src: &[f64]) {
        self.head.unpack(src);
    }

    pub fn loss_and_grad(
        &self,
        h: &DMatrix<f64>,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let (hidden, logits) = self.head.forward(h);
        let (loss, dlogits) = cross_entropy(&logits, labels, mask)?;
        let mut grads = vec![0.0; self.flat_params().len()];
        self.head.backward(h, &hidden, &dlogits, &mut grads, 0);
        Ok((loss, grads))
    }
}

/// Adaptive moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub reg_weight: f64,
    pub seed: u64,
    pub split: (f64, f64, f64),
    pub reinit: bool,
    /// Keep the parameters that scored best on the validation mask during
    /// each tick's epoch loop.
    pub val_select: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 100,
            reg_weight: 0.1,
            seed: 0,
            split: (0.7, 0.1, 0.2),
            reinit: false,
            val_select: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let total = self.split.0 + self.split.1 + self.split.2;
        if (total - 1.0).abs() > 1e-9 {
            return Err(CodenError::InvalidParameter(format!(
                "split fractions must sum to 1, got {total}"
            )));
        }
        if self.lr < 0.0 || self.epochs == 0 {
            return Err(CodenError::InvalidParameter(
                "lr must be nonnegative and epochs positive".into(),
            ));
        }
        Ok(())
    }
}

/// Node masks for train/validation/test.
#[derive(Debug, Clone)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random node split with the configured fractions.
pub fn split_nodes(n: usize, split: (f64, f64, f64), rng: &mut impl Rng) -> SplitMasks {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let n_train = ((n as f64) * split.0).round() as usize;
    let n_val = ((n as f64) * split.1).round() as usize;
    let train = perm[..n_train.min(n)].to_vec();
    let val = perm[n_train.min(n)..(n_train + n_val).min(n)].to_vec();
    let test = perm[(n_train + n_val).min(n)..].to_vec();
    SplitMasks { train, val, test }
}

/// One full-batch optimization step through the window recurrence.
pub fn train_step(
    model: &mut CodenModel,
    adam: &mut Adam,
    m_start: &DMatrix<f64>,
    h_seq: &[DMatrix<f64>],
    labels: &[usize],
    mask: &[usize],
    reg_weight: f64,
) -> Result<f64> {
    let (loss, grads) = model.loss_and_grad(m_start, h_seq, labels, mask, reg_weight)?;
    let mut params = model.flat_params();
    adam.step(&mut params, &grads);
    model.assign_flat(&params);
    Ok(loss)
}

/// Runs `epochs` full-batch steps over one window.
#[allow(clippy::too_many_arguments)]
pub fn trained_epochs_loop(
    model: &mut CodenModel,
    adam: &mut Adam,
    m_start: &DMatrix<f64>,
    h_seq: &[DMatrix<f64>],
    labels: &[usize],
    mask: &[usize],
    reg_weight: f64,
    epochs: usize,
) -> Result<f64> {
    let mut last = 0.0;
    for _ in 0..epochs {
        last = train_step(model, adam, m_start, h_seq, labels, mask, reg_weight)?;
    }
    Ok(last)
}

/// Micro-F1 and accuracy over the masked nodes.
///
/// Both metrics are derived from the pooled confusion counts; for
/// single-label multiclass data they coincide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub micro_f1: f64,
    pub accuracy: f64,
}

pub fn evaluate(logits: &DMatrix<f64>, labels: &[usize], mask: &[usize]) -> Result<EvalMetrics> {
    if mask.is_empty() {
        return Err(CodenError::InvalidParameter("empty evaluation mask".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for &u in mask {
        let pred = argmax_row(logits, u);
        if pred == labels[u] {
            tp += 1;
        } else {
            fp += 1;
            fn_ += 1;
        }
    }
    let accuracy = tp as f64 / mask.len() as f64;
    let micro_f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64)
    };
    Ok(EvalMetrics { micro_f1, accuracy })
}

pub fn argmax_row(logits: &DMatrix<f64>, row: usize) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for c in 0..logits.ncols() {
        if logits[(row, c)] > best_v {
            best_v = logits[(row, c)];
            best = c;
        }
    }
    best
}
