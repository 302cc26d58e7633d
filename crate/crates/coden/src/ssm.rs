//! Linear state-space temporal processing over sampled embeddings.
//!
//! Continuous parameters `(A, B, delta)` are discretized with a zero-order
//! hold into `(A_bar, B_bar)`; node states evolve per row as
//! `M(u) <- A_bar M(u) + B_bar H(u)`. Three parameter structures are
//! supported: a full transition matrix (small-scale only), a diagonal
//! transition (the default compute path), and the fully constrained gated
//! form `A = -I, B = I` whose update collapses to the convex interpolation
//! `M' = z M + (1 - z) H` with `z = exp(-delta)`.
//!
//! The same recurrence admits a masked unrolled evaluation over a whole
//! sequence (lower-triangular products of transition matrices applied to
//! per-step inputs), used to cross-check the step-by-step path.

use nalgebra::DMatrix;

use crate::error::{CodenError, Result};

/// Parameter structure of the state-space transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmMode {
    General,
    Gated,
}

/// Continuous transition matrix, stored by structure.
#[derive(Debug, Clone)]
pub enum TransitionMatrix {
    /// Per-channel diagonal entries.
    Diagonal(Vec<f64>),
    /// Dense square matrix.
    Full(DMatrix<f64>),
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        match self {
            TransitionMatrix::Diagonal(d) => d.len(),
            TransitionMatrix::Full(m) => m.nrows(),
        }
    }
}

/// Discretized operator pair, kept in the same structure as the continuous
/// parameters so the hot paths stay element-wise.
#[derive(Debug, Clone)]
pub enum Discretized {
    /// `A_bar = z I`, `B_bar = (1-z) I`.
    Gated { z: f64 },
    /// `A_bar = diag(a_bar)`, dense `B_bar`.
    Diagonal {
        a_bar: Vec<f64>,
        b_bar: DMatrix<f64>,
    },
    /// Dense pair.
    Full {
        a_bar: DMatrix<f64>,
        b_bar: DMatrix<f64>,
    },
}

/// State-space parameters with their current discretization.
///
/// The discretized pair is refreshed on construction and whenever `delta`
/// changes, so it always matches the stored continuous parameters.
#[derive(Debug, Clone)]
pub struct SsmParameters {
    mode: SsmMode,
    a_cont: TransitionMatrix,
    b_cont: DMatrix<f64>,
    delta: f64,
    gamma: f64,
    disc: Discretized,
}

/// Per-node temporal states (row per node) with the materialization time.
#[derive(Debug, Clone)]
pub struct NodeStateMatrix {
    pub m: DMatrix<f64>,
    pub time: u64,
}

impl NodeStateMatrix {
    pub fn zeros(node_count: usize, state_dim: usize) -> Self {
        NodeStateMatrix {
            m: DMatrix::zeros(node_count, state_dim),
            time: 0,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(CodenError::InvalidParameter(format!(
            "delta must be positive and finite, got {delta}"
        )));
    }
    Ok(())
}

impl SsmParameters {
    /// Fully constrained gated parameters (`A = -I`, `B = I`); the input and
    /// state dimensions coincide.
    pub fn gated(state_dim: usize, delta: f64, gamma: f64) -> Result<Self> {
        check_delta(delta)?;
        let mut p = SsmParameters {
            mode: SsmMode::Gated,
            a_cont: TransitionMatrix::Diagonal(vec![-1.0; state_dim]),
            b_cont: DMatrix::identity(state_dim, state_dim),
            delta,
            gamma,
            disc: Discretized::Gated { z: 0.0 },
        };
        p.refresh();
        Ok(p)
    }

    /// Diagonal transition with a dense input matrix.
    pub fn diagonal(a_diag: Vec<f64>, b: DMatrix<f64>, delta: f64, gamma: f64) -> Result<Self> {
        check_delta(delta)?;
        if b.nrows() != a_diag.len() {
            return Err(CodenError::ShapeMismatch(format!(
                "B has {} rows, transition dimension is {}",
                b.nrows(),
                a_diag.len()
            )));
        }
        let mut p = SsmParameters {
            mode: SsmMode::General,
            a_cont: TransitionMatrix::Diagonal(a_diag),
            b_cont: b,
            delta,
            gamma,
            disc: Discretized::Gated { z: 0.0 },
        };
        p.refresh();
        Ok(p)
    }

    /// Dense transition, retained for small-scale cross-checks.
    pub fn full(a: DMatrix<f64>, b: DMatrix<f64>, delta: f64, gamma: f64) -> Result<Self> {
        check_delta(delta)?;
        if a.nrows() != a.ncols() {
            return Err(CodenError::ShapeMismatch("A must be square".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(CodenError::ShapeMismatch(format!(
                "B has {} rows, A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        let mut p = SsmParameters {
            mode: SsmMode::General,
            a_cont: TransitionMatrix::Full(a),
            b_cont: b,
            delta,
            gamma,
            disc: Discretized::Gated { z: 0.0 },
        };
        p.refresh();
        Ok(p)
    }

    pub fn mode(&self) -> SsmMode {
        self.mode
    }

    pub fn state_dim(&self) -> usize {
        self.a_cont.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.b_cont.ncols()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn discretized(&self) -> &Discretized {
        &self.disc
    }

    pub fn set_delta(&mut self, delta: f64) -> Result<()> {
        check_delta(delta)?;
        self.delta = delta;
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        self.disc = match (&self.mode, &self.a_cont) {
            (SsmMode::Gated, _) => Discretized::Gated {
                z: (-self.delta).exp(),
            },
            (SsmMode::General, TransitionMatrix::Diagonal(a)) => {
                let a_bar: Vec<f64> = a.iter().map(|ai| (self.delta * ai).exp()).collect();
                let mut b_bar = self.b_cont.clone();
                for (i, &ai) in a.iter().enumerate() {
                    let scale = zoh_input_scale(self.delta, ai);
                    for j in 0..b_bar.ncols() {
                        b_bar[(i, j)] *= scale;
                    }
                }
                Discretized::Diagonal { a_bar, b_bar }
            }
            (SsmMode::General, TransitionMatrix::Full(a)) => {
                let (a_bar, b_bar) =
                    zoh_full(a, &self.b_cont, self.delta).expect("validated at construction");
                Discretized::Full { a_bar, b_bar }
            }
        };
    }

    /// Dense view of the discretized transition matrix.
    pub fn a_bar_matrix(&self) -> DMatrix<f64> {
        match &self.disc {
            Discretized::Gated { z } => DMatrix::identity(self.state_dim(), self.state_dim()) * *z,
            Discretized::Diagonal { a_bar, .. } => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(a_bar))
            }
            Discretized::Full { a_bar, .. } => a_bar.clone(),
        }
    }

    /// Dense view of the discretized input matrix.
    pub fn b_bar_matrix(&self) -> DMatrix<f64> {
        match &self.disc {
            Discretized::Gated { z } => {
                DMatrix::identity(self.state_dim(), self.state_dim()) * (1.0 - *z)
            }
            Discretized::Diagonal { b_bar, .. } | Discretized::Full { b_bar, .. } => b_bar.clone(),
        }
    }
}

/// Row scale `(exp(delta a) - 1) / a` of the hold integral for a diagonal
/// channel, with the `a -> 0` limit `delta`.
pub fn zoh_input_scale(delta: f64, a: f64) -> f64 {
    if a.abs() < 1e-300 {
        delta
    } else {
        (delta * a).exp_m1() / a
    }
}

/// Zero-order-hold discretization of dense parameters:
/// `A_bar = exp(delta A)`, `B_bar = (delta A)^{-1} (exp(delta A) - I) delta B`.
pub fn zoh_full(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    delta: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_delta(delta)?;
    let da = a * delta;
    let a_bar = matrix_exp(&da);
    let rhs = (&a_bar - DMatrix::identity(a.nrows(), a.ncols())) * (b * delta);
    let lu = da.lu();
    let b_bar = lu.solve(&rhs).ok_or_else(|| {
        CodenError::Numeric("delta * A is singular; cannot form the hold integral".into())
    })?;
    Ok((a_bar, b_bar))
}

/// Public view of the discretization used by tests and checkpointing.
pub fn zoh_discretize(params: &SsmParameters) -> (DMatrix<f64>, DMatrix<f64>) {
    (params.a_bar_matrix(), params.b_bar_matrix())
}

/// Matrix exponential by scaling-and-squaring over a truncated series.
/// Adequate for the small transition matrices used here.
pub fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = (&term * &scaled) / k as f64;
        result += &term;
        let tn = term.iter().map(|x| x.abs()).fold(0.0_f64, f64::max);
        if tn < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Flushes subnormal magnitudes to zero. Long products of small gates
/// otherwise push state entries into denormal range, where arithmetic is an
/// order of magnitude slower.
#[inline]
pub fn flush_subnormal(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(CodenError::Numeric(format!("non-finite values in {what}")));
    }
    Ok(())
}

/// One recurrence step: `M' = M A_bar^T + H B_bar^T` in the row-per-node
/// convention, specialized per parameter structure.
pub fn state_update(
    state: &NodeStateMatrix,
    h: &DMatrix<f64>,
    params: &SsmParameters,
) -> Result<NodeStateMatrix> {
    let n = state.m.nrows();
    if h.nrows() != n {
        return Err(CodenError::ShapeMismatch(format!(
            "state has {n} rows, input has {}",
            h.nrows()
        )));
    }
    if state.m.ncols() != params.state_dim() || h.ncols() != params.input_dim() {
        return Err(CodenError::ShapeMismatch(format!(
            "state {}x{}, input {}x{}, parameters {}x{}",
            n,
            state.m.ncols(),
            h.nrows(),
            h.ncols(),
            params.state_dim(),
            params.input_dim()
        )));
    }
    let m = match params.discretized() {
        Discretized::Gated { z } => {
            let mut out = DMatrix::zeros(n, state.m.ncols());
            for u in 0..n {
                for i in 0..state.m.ncols() {
                    out[(u, i)] = flush_subnormal(*z * state.m[(u, i)] + (1.0 - *z) * h[(u, i)]);
                }
            }
            out
        }
        Discretized::Diagonal { a_bar, b_bar } => {
            let mut out = h * b_bar.transpose();
            for u in 0..n {
                for (i, &ai) in a_bar.iter().enumerate() {
                    out[(u, i)] = flush_subnormal(out[(u, i)] + ai * state.m[(u, i)]);
                }
            }
            out
        }
        Discretized::Full { a_bar, b_bar } => {
            let mut out = &state.m * a_bar.transpose() + h * b_bar.transpose();
            for x in out.iter_mut() {
                *x = flush_subnormal(*x);
            }
            out
        }
    };
    check_finite(&m, "updated node states")?;
    Ok(NodeStateMatrix {
        m,
        time: state.time,
    })
}

/// Constrained update `M' = z M + (1-z) H`, `z = exp(-delta)`.
///
/// Matches `state_update` under gated parameters operation for operation,
/// so the two paths agree bitwise.
pub fn gated_update(
    state: &NodeStateMatrix,
    h: &DMatrix<f64>,
    delta: f64,
) -> Result<NodeStateMatrix> {
    check_delta(delta)?;
    if state.m.shape() != h.shape() {
        return Err(CodenError::ShapeMismatch(format!(
            "state {:?} vs input {:?}",
            state.m.shape(),
            h.shape()
        )));
    }
    let z = (-delta).exp();
    let mut m = DMatrix::zeros(state.m.nrows(), state.m.ncols());
    for u in 0..m.nrows() {
        for i in 0..m.ncols() {
            m[(u, i)] = flush_subnormal(z * state.m[(u, i)] + (1.0 - z) * h[(u, i)]);
        }
    }
    Ok(NodeStateMatrix {
        m,
        time: state.time,
    })
}

/// Evaluates the whole state trajectory through the masked unrolled form:
/// `M(s) = sum_{r<=s} (prod_{i=r+1}^{s} A_bar(i)) B_bar(r) H(r)`, i.e. a
/// lower-triangular operator over per-step inputs with diagonal input
/// weights and identity readout.
pub fn unroll_kernel_attention(
    h_seq: &[DMatrix<f64>],
    params_seq: &[SsmParameters],
) -> Result<Vec<DMatrix<f64>>> {
    if h_seq.is_empty() {
        return Err(CodenError::InvalidParameter(
            "unroll needs at least one step".into(),
        ));
    }
    if h_seq.len() != params_seq.len() {
        return Err(CodenError::ShapeMismatch(format!(
            "{} inputs vs {} parameter sets",
            h_seq.len(),
            params_seq.len()
        )));
    }
    let steps = h_seq.len();
    let f_prime = params_seq[0].state_dim();
    // weighted inputs: the diagonal of the key operator applied to each step
    let weighted: Vec<DMatrix<f64>> = (0..steps)
        .map(|r| &h_seq[r] * params_seq[r].b_bar_matrix().transpose())
        .collect();
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut m = weighted[s].clone();
        // suffix products of transition matrices form the triangular mask
        let mut mask = DMatrix::<f64>::identity(f_prime, f_prime);
        for r in (0..s).rev() {
            mask = &mask * params_seq[r + 1].a_bar_matrix();
            m += &weighted[r] * mask.transpose();
        }
        out.push(m);
    }
    Ok(out)
}

/// Soft-orthogonality penalty `|| W^T W - gamma^2 I ||_F^2`.
pub fn orthogonality_penalty(w: &DMatrix<f64>, gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    let mut gram = w.transpose() * w;
    for i in 0..gram.nrows() {
        gram[(i, i)] -= g2;
    }
    gram.iter().map(|x| x * x).sum()
}

/// Gradient of [`orthogonality_penalty`] with respect to `W`:
/// `4 W (W^T W - gamma^2 I)`.
pub fn orthogonality_penalty_grad(w: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let g2 = gamma * gamma;
    let mut gram = w.transpose() * w;
    for i in 0..gram.nrows() {
        gram[(i, i)] -= g2;
    }
    w * gram * 4.0
}

/// Target singular-value floor `c * F^(-1/(2T))` with `c = 1.1`.
pub fn spectral_gamma(feature_dim: usize, horizon: usize) -> f64 {
    1.1 * (feature_dim as f64).powf(-1.0 / (2.0 * horizon.max(1) as f64))
}

/// Minimum over `0 <= s <= t` of `F * sigma_min^2(A_bar^(t-s) B_bar)` for
/// shared step parameters; at least 1.0 means the energy-comparison
/// hypothesis holds along the whole horizon.
pub fn spectral_floor_margin(params: &SsmParameters, t: usize, feature_dim: usize) -> f64 {
    let a_bar = params.a_bar_matrix();
    let b_bar = params.b_bar_matrix();
    let mut prefix = b_bar.clone();
    let mut worst = f64::INFINITY;
    for _s in 0..=t {
        let svd = prefix.clone().svd(false, false);
        let sigma_min = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        worst = worst.min(feature_dim as f64 * sigma_min * sigma_min);
        prefix = &a_bar * prefix;
    }
    worst
}
