//! End-to-end continuous-prediction driver and benchmark harness.
//!
//! The run loop walks the event stream tick by tick. Every event feeds the
//! lazy sampler; whenever the accumulated drift bound crosses the threshold
//! or a prediction tick arrives, the embeddings are brought up to date
//! incrementally and the snapshot joins the current training window. At
//! each tick the model trains on that window (carried-in state detached),
//! the temporal state is committed with the trained parameters, and test
//! metrics are appended.

use std::io::Write as IoWrite;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{attention_state, dirichlet_energy, AttentionModel};
use crate::dataset::TemporalDataset;
use crate::error::{CodenError, Result};
use crate::graph::BatchTracker;
use crate::learner::{
    evaluate, split_nodes, trained_epochs_loop, Adam, CodenModel, SnapshotModel, SplitMasks,
    TrainConfig,
};
use crate::ppr::{
    compute_base_embedding, embedding_update_unchecked, exact_ppr_oracle, l1_gap, EmbeddingState,
};
use crate::sampler::{accumulate, shift_bound, should_sample, SamplerState};
use crate::ssm::{spectral_floor_margin, state_update, NodeStateMatrix, SsmMode};

/// Pipeline variant under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Full pipeline with the state-space temporal block.
    Coden,
    /// Head on the current embedding only.
    CodenS,
    /// Constrained gated temporal block.
    CodenR,
    /// Attention temporal block over the snapshot history.
    CodenA,
    /// Like `Coden` but recomputing embeddings from scratch at every
    /// snapshot; isolates the cost of incremental maintenance.
    FromScratchEmbeddings,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Coden => "coden",
            Variant::CodenS => "coden_s",
            Variant::CodenR => "coden_r",
            Variant::CodenA => "coden_a",
            Variant::FromScratchEmbeddings => "from_scratch_embeddings",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = CodenError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coden" => Ok(Variant::Coden),
            "coden_s" => Ok(Variant::CodenS),
            "coden_r" => Ok(Variant::CodenR),
            "coden_a" => Ok(Variant::CodenA),
            "from_scratch_embeddings" => Ok(Variant::FromScratchEmbeddings),
            other => Err(CodenError::InvalidParameter(format!(
                "unknown variant '{other}'"
            ))),
        }
    }
}

/// Whether wall-clock timings are written to the metrics file. `None`
/// zeroes them so repeated runs produce byte-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    Wall,
    None,
}

/// Full run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub lambda: f64,
    /// Temporal state width.
    pub state_dim: usize,
    /// Classifier hidden width.
    pub mlp_hidden: usize,
    pub mode: SsmMode,
    pub variant: Variant,
    pub train: TrainConfig,
    pub verify: bool,
    pub diagnostics: bool,
    /// Override for the soft-orthogonality target; derived from the feature
    /// dimension and tick count when absent.
    pub gamma: Option<f64>,
    pub timing: TimingMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.2,
            epsilon: 1e-7,
            lambda: 0.1,
            state_dim: 16,
            mlp_hidden: 32,
            mode: SsmMode::General,
            variant: Variant::Coden,
            train: TrainConfig::default(),
            verify: false,
            diagnostics: false,
            gamma: None,
            timing: TimingMode::Wall,
        }
    }
}

/// One metrics line per prediction tick.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub timestep: usize,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub train_seconds: f64,
    pub inference_seconds: f64,
    pub samples_emitted: u64,
    pub push_ops: u64,
    pub dirichlet_coden: Option<f64>,
    pub dirichlet_attn: Option<f64>,
}

/// Phase timings per tick, used by the benchmark report.
#[derive(Debug, Clone)]
pub struct TickTiming {
    pub timestep: usize,
    pub embed_seconds: f64,
    pub state_seconds: f64,
    pub train_seconds: f64,
    pub infer_seconds: f64,
    pub push_ops: u64,
    pub samples: u64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub timings: Vec<TickTiming>,
    pub final_embedding: DMatrix<f64>,
    /// Post-training floor margin of the temporal operators (general mode
    /// runs only); values >= 1 satisfy the energy-comparison hypothesis.
    pub spectral_margin: Option<f64>,
    pub model: Option<CodenModel>,
}

enum VariantState {
    Temporal {
        model: CodenModel,
        adam: Adam,
        committed: NodeStateMatrix,
    },
    Snapshot {
        model: SnapshotModel,
        adam: Adam,
    },
    Attention {
        model: AttentionModel,
        adam: Adam,
        history: Vec<DMatrix<f64>>,
        committed: DMatrix<f64>,
    },
}

fn derived_gamma(config: &RunConfig, feature_dim: usize, ticks: usize) -> f64 {
    config
        .gamma
        .unwrap_or_else(|| crate::ssm::spectral_gamma(feature_dim, ticks.max(1)))
}

fn build_variant_state(
    config: &RunConfig,
    feature_dim: usize,
    classes: usize,
    node_count: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> VariantState {
    match config.variant {
        Variant::Coden | Variant::FromScratchEmbeddings => {
            let model = if config.mode == SsmMode::Gated {
                CodenModel::gated(feature_dim, config.mlp_hidden, classes, gamma, rng)
            } else {
                CodenModel::general(
                    feature_dim,
                    config.state_dim,
                    config.mlp_hidden,
                    classes,
                    gamma,
                    rng,
                )
            };
            let adam = Adam::new(config.train.lr, model.flat_params().len());
            let dim = model.state_dim();
            VariantState::Temporal {
                model,
                adam,
                committed: NodeStateMatrix::zeros(node_count, dim),
            }
        }
        Variant::CodenR => {
            let model = CodenModel::gated(feature_dim, config.mlp_hidden, classes, gamma, rng);
            let adam = Adam::new(config.train.lr, model.flat_params().len());
            let dim = model.state_dim();
            VariantState::Temporal {
                model,
                adam,
                committed: NodeStateMatrix::zeros(node_count, dim),
            }
        }
        Variant::CodenS => {
            let model = SnapshotModel::new(feature_dim, config.mlp_hidden, classes, rng);
            let adam = Adam::new(config.train.lr, model.flat_params().len());
            VariantState::Snapshot { model, adam }
        }
        Variant::CodenA => {
            let model = AttentionModel::new(
                feature_dim,
                config.state_dim,
                config.mlp_hidden,
                classes,
                rng,
            );
            let adam = Adam::new(config.train.lr, model.flat_params().len());
            VariantState::Attention {
                model,
                adam,
                history: Vec::new(),
                committed: DMatrix::zeros(node_count, config.state_dim),
            }
        }
    }
}

struct PhaseClock {
    enabled: bool,
}

impl PhaseClock {
    fn time<T>(&self, f: impl FnOnce() -> T) -> (T, f64) {
        if self.enabled {
            let start = Instant::now();
            let out = f();
            (out, start.elapsed().as_secs_f64())
        } else {
            (f(), 0.0)
        }
    }
}

/// Runs the continuous-prediction loop over the dataset.
pub fn run_continuous_prediction(
    dataset: &TemporalDataset,
    config: &RunConfig,
) -> Result<RunOutput> {
    dataset.validate()?;
    config.train.validate()?;
    let n = dataset.node_count();
    if config.verify && n > 2000 {
        return Err(CodenError::InvalidParameter(format!(
            "verification mode is limited to 2000 nodes, dataset has {n}"
        )));
    }
    let feature_dim = dataset.features.dims();
    let ticks = dataset.ticks();
    let gamma = derived_gamma(config, feature_dim, ticks);

    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let masks = split_nodes(n, config.train.split, &mut rng);
    let mut variant = build_variant_state(config, feature_dim, dataset.classes, n, gamma, &mut rng);
    let mut side_attention = if config.diagnostics {
        Some((
            AttentionModel::new(
                feature_dim,
                config.state_dim,
                config.mlp_hidden,
                dataset.classes,
                &mut rng,
            ),
            Vec::<DMatrix<f64>>::new(),
        ))
    } else {
        None
    };

    let mut graph = dataset.initial_graph.clone();
    let features = dataset.features.clone();
    let mut state = compute_base_embedding(&graph, &features, config.alpha, config.epsilon)?;
    let mut sampler = SamplerState::new(config.lambda)?;
    let mut tracker = BatchTracker::new();
    let clock = PhaseClock {
        enabled: config.timing == TimingMode::Wall,
    };

    let mut rows = Vec::with_capacity(ticks);
    let mut timings = Vec::with_capacity(ticks);
    let mut scratch_push_ops: u64 = 0;
    let mut prev_push_ops: u64 = state.push_ops();
    let mut prev_samples: u64 = 0;
    let mut max_window = 0usize;

    for tick in 0..ticks {
        let range = dataset.batch_range(tick);
        let mut window: Vec<DMatrix<f64>> = Vec::new();
        let mut embed_seconds = 0.0;

        let take_sample = |graph: &crate::graph::DynamicGraph,
                           tracker: &mut BatchTracker,
                           state: &mut EmbeddingState,
                           sampler: &mut SamplerState,
                           window: &mut Vec<DMatrix<f64>>,
                           embed_seconds: &mut f64,
                           scratch_push_ops: &mut u64|
         -> Result<()> {
            let deltas = tracker.take_deltas(graph);
            if config.variant == Variant::FromScratchEmbeddings {
                let (fresh, secs) = clock.time(|| {
                    compute_base_embedding(graph, &features, config.alpha, config.epsilon)
                });
                *state = fresh?;
                *scratch_push_ops += state.push_ops();
                *embed_seconds += secs;
            } else {
                let (res, secs) = clock.time(|| embedding_update_unchecked(&deltas, graph, state));
                res?;
                *embed_seconds += secs;
            }
            sampler.reset_on_sample();
            window.push(state.embedding_matrix());
            Ok(())
        };

        if range.is_empty() {
            // tick with no events still materializes a snapshot
            take_sample(
                &graph,
                &mut tracker,
                &mut state,
                &mut sampler,
                &mut window,
                &mut embed_seconds,
                &mut scratch_push_ops,
            )?;
        } else {
            for idx in range.clone() {
                let event = dataset.events[idx];
                let bound = shift_bound(
                    &graph,
                    event,
                    features.x_max(),
                    config.alpha,
                    config.epsilon,
                )?;
                tracker.record(&graph, event);
                graph.apply_event(event)?;
                accumulate(&mut sampler, event, bound)?;
                let at_tick = idx + 1 == range.end;
                if should_sample(&sampler, at_tick) {
                    take_sample(
                        &graph,
                        &mut tracker,
                        &mut state,
                        &mut sampler,
                        &mut window,
                        &mut embed_seconds,
                        &mut scratch_push_ops,
                    )?;
                }
            }
        }
        max_window = max_window.max(window.len());

        if config.verify {
            let z = exact_ppr_oracle(&graph, &features, config.alpha)?;
            let gap = l1_gap(&state, &z);
            let budget = n as f64 * config.epsilon;
            if gap > budget {
                return Err(CodenError::Numeric(format!(
                    "accuracy contract violated at tick {tick}: l1 gap {gap} > {budget}"
                )));
            }
        }

        if config.train.reinit && tick > 0 {
            let mut tick_rng = ChaCha8Rng::seed_from_u64(
                config.train.seed ^ (tick as u64).wrapping_mul(0x9E3779B9),
            );
            variant = build_variant_state(
                config,
                feature_dim,
                dataset.classes,
                n,
                gamma,
                &mut tick_rng,
            );
        }

        // train on the window, commit the state with trained parameters,
        // then evaluate on the test mask
        let (train_seconds, state_seconds, infer_seconds, metrics, de_main) = advance_variant(
            &mut variant,
            &window,
            dataset,
            &masks,
            config,
            &clock,
            &graph,
        )?;

        let de_attn = if let Some((side_model, side_history)) = side_attention.as_mut() {
            side_history.extend(window.iter().cloned());
            let mut params = side_model.flat_params();
            let mut adam = Adam::new(config.train.lr, params.len());
            for _ in 0..config.train.epochs {
                let (_, grads) =
                    side_model.loss_and_grad(side_history, &dataset.labels, &masks.train)?;
                adam.step(&mut params, &grads);
                side_model.assign_flat(&params);
            }
            let m_attn = attention_state(side_history, &side_model.params)?;
            Some(dirichlet_energy(&m_attn, &graph)?)
        } else {
            None
        };

        let tick_push_ops = if config.variant == Variant::FromScratchEmbeddings {
            let out = scratch_push_ops;
            scratch_push_ops = 0;
            out
        } else {
            let total = state.push_ops();
            let out = total - prev_push_ops;
            prev_push_ops = total;
            out
        };
        let samples = sampler.samples_emitted() - prev_samples;
        prev_samples = sampler.samples_emitted();

        rows.push(MetricsRow {
            timestep: tick + 1,
            micro_f1: metrics.micro_f1,
            accuracy: metrics.accuracy,
            train_seconds,
            inference_seconds: infer_seconds,
            samples_emitted: samples,
            push_ops: tick_push_ops,
            dirichlet_coden: de_main,
            dirichlet_attn: de_attn,
        });
        timings.push(TickTiming {
            timestep: tick + 1,
            embed_seconds,
            state_seconds,
            train_seconds,
            infer_seconds,
            push_ops: tick_push_ops,
            samples,
        });
    }

    let (spectral_margin, model) = match variant {
        VariantState::Temporal { model, .. } => {
            let params = model.to_ssm_parameters()?;
            let margin = spectral_floor_margin(&params, max_window.max(1), feature_dim);
            (Some(margin), Some(model))
        }
        _ => (None, None),
    };

    Ok(RunOutput {
        rows,
        timings,
        final_embedding: state.embedding_matrix(),
        spectral_margin,
        model,
    })
}

#[allow(clippy::too_many_arguments)]
fn advance_variant(
    variant: &mut VariantState,
    window: &[DMatrix<f64>],
    dataset: &TemporalDataset,
    masks: &SplitMasks,
    config: &RunConfig,
    clock: &PhaseClock,
    graph: &crate::graph::DynamicGraph,
) -> Result<(f64, f64, f64, crate::learner::EvalMetrics, Option<f64>)> {
    match variant {
        VariantState::Temporal {
            model,
            adam,
            committed,
        } => {
            let m_start = committed.m.clone();
            let (res, train_seconds) = clock.time(|| -> Result<()> {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for epoch in 0..config.train.epochs {
                    trained_epochs_loop(
                        model,
                        adam,
                        &m_start,
                        window,
                        &dataset.labels,
                        &masks.train,
                        config.train.reg_weight,
                        1,
                    )?;
                    if config.train.val_select
                        && (epoch % 10 == 9 || epoch + 1 == config.train.epochs)
                    {
                        let states = model.forward_states(&m_start, window);
                        let logits = model.head.logits(states.last().unwrap());
                        let v = evaluate(&logits, &dataset.labels, &masks.val)?.micro_f1;
                        if best.as_ref().map_or(true, |(b, _)| v > *b) {
                            best = Some((v, model.flat_params()));
                        }
                    }
                }
                if let Some((_, params)) = best {
                    model.assign_flat(&params);
                }
                Ok(())
            });
            res?;
            // commit the trajectory with the trained parameters
            let params = model.to_ssm_parameters()?;
            let (commit_res, state_seconds) = clock.time(|| -> Result<NodeStateMatrix> {
                let mut m = NodeStateMatrix {
                    m: m_start.clone(),
                    time: committed.time,
                };
                for h in window {
                    m = state_update(&m, h, &params)?;
                }
                Ok(m)
            });
            *committed = commit_res?;
            let (metrics_res, infer_seconds) = clock.time(|| {
                let logits = model.head.logits(&committed.m);
                evaluate(&logits, &dataset.labels, &masks.test)
            });
            let metrics = metrics_res?;
            let de = if config.diagnostics {
                Some(dirichlet_energy(&committed.m, graph)?)
            } else {
                None
            };
            Ok((train_seconds, state_seconds, infer_seconds, metrics, de))
        }
        VariantState::Snapshot { model, adam } => {
            let current = window
                .last()
                .ok_or_else(|| CodenError::InvalidParameter("empty window".into()))?;
            let (res, train_seconds) = clock.time(|| -> Result<()> {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for epoch in 0..config.train.epochs {
                    let (_, grads) = model.loss_and_grad(current, &dataset.labels, &masks.train)?;
                    let mut p = model.flat_params();
                    adam.step(&mut p, &grads);
                    model.assign_flat(&p);
                    if config.train.val_select
                        && (epoch % 10 == 9 || epoch + 1 == config.train.epochs)
                    {
                        let logits = model.head.logits(current);
                        let v = evaluate(&logits, &dataset.labels, &masks.val)?.micro_f1;
                        if best.as_ref().map_or(true, |(b, _)| v > *b) {
                            best = Some((v, model.flat_params()));
                        }
                    }
                }
                if let Some((_, params)) = best {
                    model.assign_flat(&params);
                }
                Ok(())
            });
            res?;
            let (metrics_res, infer_seconds) = clock.time(|| {
                let logits = model.head.logits(current);
                evaluate(&logits, &dataset.labels, &masks.test)
            });
            let metrics = metrics_res?;
            // no temporal state to measure for the snapshot variant
            Ok((train_seconds, 0.0, infer_seconds, metrics, None))
        }
        VariantState::Attention {
            model,
            adam,
            history,
            committed,
        } => {
            history.extend(window.iter().cloned());
            let (res, train_seconds) = clock.time(|| -> Result<()> {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for epoch in 0..config.train.epochs {
                    let (_, grads) = model.loss_and_grad(history, &dataset.labels, &masks.train)?;
                    let mut p = model.flat_params();
                    adam.step(&mut p, &grads);
                    model.assign_flat(&p);
                    if config.train.val_select
                        && (epoch % 10 == 9 || epoch + 1 == config.train.epochs)
                    {
                        let state = attention_state(history, &model.params)?;
                        let logits = model.head.logits(&state);
                        let v = evaluate(&logits, &dataset.labels, &masks.val)?.micro_f1;
                        if best.as_ref().map_or(true, |(b, _)| v > *b) {
                            best = Some((v, model.flat_params()));
                        }
                    }
                }
                if let Some((_, params)) = best {
                    model.assign_flat(&params);
                }
                Ok(())
            });
            res?;
            let (state_res, state_seconds) = clock.time(|| attention_state(history, &model.params));
            *committed = state_res?;
            let (metrics_res, infer_seconds) = clock.time(|| {
                let logits = model.head.logits(committed);
                evaluate(&logits, &dataset.labels, &masks.test)
            });
            let metrics = metrics_res?;
            let de = if config.diagnostics {
                Some(dirichlet_energy(committed, graph)?)
            } else {
                None
            };
            Ok((train_seconds, state_seconds, infer_seconds, metrics, de))
        }
    }
}

/// Benchmark report: per-variant per-tick phase timings.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub entries: Vec<(Variant, Vec<TickTiming>)>,
}

/// Runs each requested variant on the same dataset and seed, collecting
/// phase timings.
pub fn run_benchmark(
    dataset: &TemporalDataset,
    config: &RunConfig,
    variants: &[Variant],
) -> Result<BenchReport> {
    let mut entries = Vec::new();
    for &variant in variants {
        let mut cfg = config.clone();
        cfg.variant = variant;
        if variant == Variant::CodenR {
            cfg.mode = SsmMode::Gated;
        }
        let out = run_continuous_prediction(dataset, &cfg)?;
        entries.push((variant, out.timings));
    }
    Ok(BenchReport { entries })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes the versioned metrics file.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], timing: TimingMode) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    let w = |t: f64| match timing {
        TimingMode::Wall => t,
        TimingMode::None => 0.0,
    };
    writeln!(f, "# coden-metrics v1")
        .and_then(|_| {
            writeln!(
                f,
                "timestep,micro_f1,accuracy,train_seconds,inference_seconds,samples_emitted,push_ops,dirichlet_coden,dirichlet_attn"
            )
        })
        .map_err(|e| CodenError::io(path.display().to_string(), e))?;
    for r in rows {
        writeln!(
            f,
            "{},{:.6},{:.6},{:.3},{:.3},{},{},{},{}",
            r.timestep,
            r.micro_f1,
            r.accuracy,
            w(r.train_seconds),
            w(r.inference_seconds),
            r.samples_emitted,
            r.push_ops,
            fmt_opt(r.dirichlet_coden),
            fmt_opt(r.dirichlet_attn),
        )
        .map_err(|e| CodenError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Writes the benchmark phase timings per variant.
pub fn write_bench_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    writeln!(f, "# coden-bench v1")
        .and_then(|_| {
            writeln!(
                f,
                "variant,timestep,embed_seconds,state_seconds,train_seconds,infer_seconds,push_ops,samples"
            )
        })
        .map_err(|e| CodenError::io(path.display().to_string(), e))?;
    for (variant, ticks) in &report.entries {
        for t in ticks {
            writeln!(
                f,
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                variant.name(),
                t.timestep,
                t.embed_seconds,
                t.state_seconds,
                t.train_seconds,
                t.infer_seconds,
                t.push_ops,
                t.samples
            )
            .map_err(|e| CodenError::io(path.display().to_string(), e))?;
        }
    }
    Ok(())
}
