//! Dataset assembly: TSV loading, arrival-pattern generation, and the
//! synthetic dynamic stochastic-block-model generator.
//!
//! A temporal dataset is an initial graph, static node features and labels,
//! a time-ordered edge-toggle stream, and the prediction ticks. Events are
//! grouped into one batch per tick; an event timestamped exactly at a tick
//! belongs to the batch ending there.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CodenError, Result};
use crate::graph::{DynamicGraph, EdgeEvent};
use crate::ppr::FeatureMatrix;

/// Edge arrival patterns for stress-testing temporal memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalPattern {
    /// Start empty, add batches chronologically.
    Inclined,
    /// Start from the full graph, remove batches in reverse order.
    Declined,
    /// Keep roughly half the batches present, rotating one in and one out
    /// per tick at random.
    Balanced,
}

impl std::str::FromStr for ArrivalPattern {
    type Err = CodenError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inclined" => Ok(ArrivalPattern::Inclined),
            "declined" => Ok(ArrivalPattern::Declined),
            "balanced" => Ok(ArrivalPattern::Balanced),
            other => Err(CodenError::InvalidParameter(format!(
                "unknown arrival pattern '{other}'"
            ))),
        }
    }
}

/// Initial graph, features, labels, event stream, and prediction ticks.
#[derive(Debug, Clone)]
pub struct TemporalDataset {
    pub initial_graph: DynamicGraph,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub events: Vec<EdgeEvent>,
    /// Exclusive end index into `events` per tick.
    pub batch_ends: Vec<usize>,
    pub prediction_times: Vec<u64>,
}

impl TemporalDataset {
    pub fn node_count(&self) -> usize {
        self.initial_graph.node_count()
    }

    pub fn ticks(&self) -> usize {
        self.prediction_times.len()
    }

    /// Event index range of one tick's batch.
    pub fn batch_range(&self, tick: usize) -> std::ops::Range<usize> {
        let start = if tick == 0 {
            0
        } else {
            self.batch_ends[tick - 1]
        };
        start..self.batch_ends[tick]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        if self.features.node_count() != n || self.labels.len() != n {
            return Err(CodenError::InconsistentInput(format!(
                "node counts differ: graph {n}, features {}, labels {}",
                self.features.node_count(),
                self.labels.len()
            )));
        }
        if self.prediction_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CodenError::InconsistentInput(
                "prediction times must be strictly increasing".into(),
            ));
        }
        if self.batch_ends.len() != self.prediction_times.len() {
            return Err(CodenError::InconsistentInput(
                "one batch per prediction tick required".into(),
            ));
        }
        if let (Some(&last_end), Some(&last_t)) =
            (self.batch_ends.last(), self.prediction_times.last())
        {
            if last_end != self.events.len() {
                return Err(CodenError::InconsistentInput(
                    "batches must cover the whole event stream".into(),
                ));
            }
            if self.events.iter().any(|e| e.time > last_t) {
                return Err(CodenError::InconsistentInput(
                    "event beyond the last prediction time".into(),
                ));
            }
        }
        for label in &self.labels {
            if *label >= self.classes {
                return Err(CodenError::InconsistentInput(format!(
                    "label {label} out of range for {} classes",
                    self.classes
                )));
            }
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file =
        std::fs::File::open(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CodenError::io(path.display().to_string(), e))?;
        if !line.trim().is_empty() {
            out.push(line);
        } else {
            let _ = i;
        }
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> CodenError {
    CodenError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads features from a TSV with one row per node.
pub fn read_features_tsv(path: &Path) -> Result<FeatureMatrix> {
    let lines = read_lines(path)?;
    let mut rows = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let row: Vec<f64> = line
            .split('\t')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("bad float '{tok}'")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    FeatureMatrix::from_rows(&rows)
}

/// Reads `node_id<TAB>class_id` labels; every node must appear exactly once.
pub fn read_labels_tsv(path: &Path, node_count: usize) -> Result<(Vec<usize>, usize)> {
    let lines = read_lines(path)?;
    let mut labels = vec![usize::MAX; node_count];
    for (i, line) in lines.iter().enumerate() {
        let mut parts = line.split('\t');
        let node: usize = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| parse_err(path, i + 1, "bad node id"))?;
        let class: usize = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| parse_err(path, i + 1, "bad class id"))?;
        if node >= node_count {
            return Err(parse_err(path, i + 1, format!("node {node} out of range")));
        }
        labels[node] = class;
    }
    if let Some(u) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(CodenError::InconsistentInput(format!(
            "node {u} missing from the labels file"
        )));
    }
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Ok((labels, classes))
}

/// Reads `src<TAB>dst<TAB>time` events sorted by time.
pub fn read_edges_tsv(path: &Path, node_count: usize) -> Result<Vec<EdgeEvent>> {
    let lines = read_lines(path)?;
    let mut events = Vec::with_capacity(lines.len());
    let mut last_time = 0u64;
    for (i, line) in lines.iter().enumerate() {
        let mut parts = line.split('\t');
        let src: usize = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| parse_err(path, i + 1, "bad src id"))?;
        let dst: usize = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| parse_err(path, i + 1, "bad dst id"))?;
        let time: u64 = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| parse_err(path, i + 1, "bad timestamp"))?;
        if src >= node_count || dst >= node_count {
            return Err(parse_err(path, i + 1, "node id out of range"));
        }
        if time < last_time {
            return Err(parse_err(path, i + 1, "events not sorted by time"));
        }
        last_time = time;
        events.push(EdgeEvent::new(src, dst, time));
    }
    Ok(events)
}

/// Count-based batching into `ticks` batches; earlier batches take the
/// remainder, and a boundary extends while the next event shares its
/// timestamp so each tick is closed on the right.
fn partition_events(events: &[EdgeEvent], ticks: usize) -> (Vec<usize>, Vec<u64>) {
    if events.is_empty() {
        return (vec![0], vec![0]);
    }
    let ticks = ticks.max(1).min(events.len());
    let base = events.len() / ticks;
    let rem = events.len() % ticks;
    let mut ends = Vec::with_capacity(ticks);
    let mut cursor = 0usize;
    for k in 0..ticks {
        cursor += base + if k < rem { 1 } else { 0 };
        // keep equal timestamps in the batch that closes at them
        while cursor < events.len() && events[cursor].time == events[cursor - 1].time {
            cursor += 1;
        }
        cursor = cursor.min(events.len());
        if ends.last() != Some(&cursor) {
            ends.push(cursor);
        }
        if cursor == events.len() {
            break;
        }
    }
    if *ends.last().unwrap() != events.len() {
        ends.push(events.len());
    }
    let times = ends.iter().map(|&e| events[e - 1].time).collect();
    (ends, times)
}

/// Loads a dataset from its three TSV files and partitions the events into
/// `ticks` batches.
pub fn load_dataset(
    edges_path: &Path,
    features_path: &Path,
    labels_path: &Path,
    ticks: usize,
) -> Result<TemporalDataset> {
    let features = read_features_tsv(features_path)?;
    let n = features.node_count();
    let (labels, classes) = read_labels_tsv(labels_path, n)?;
    let events = read_edges_tsv(edges_path, n)?;
    let (batch_ends, prediction_times) = partition_events(&events, ticks);
    let ds = TemporalDataset {
        initial_graph: DynamicGraph::new(n),
        features,
        labels,
        classes,
        events,
        batch_ends,
        prediction_times,
    };
    ds.validate()?;
    Ok(ds)
}

/// Chronologically ordered surviving edges after replaying the stream.
fn surviving_edges(ds: &TemporalDataset) -> Result<Vec<(usize, usize)>> {
    let mut graph = ds.initial_graph.clone();
    let mut order: HashMap<(usize, usize), u64> = HashMap::new();
    for (rank, &(u, v)) in graph.edges().iter().enumerate() {
        order.insert((u, v), rank as u64);
    }
    let mut next = order.len() as u64;
    for &e in &ds.events {
        let inserted = graph.apply_event(e)?;
        if inserted {
            order.insert((e.src, e.dst), next);
        } else {
            order.remove(&(e.src, e.dst));
        }
        next += 1;
    }
    let mut edges: Vec<((usize, usize), u64)> = graph
        .edges()
        .into_iter()
        .map(|e| (e, *order.get(&e).expect("present edge has an order")))
        .collect();
    edges.sort_by_key(|&(_, rank)| rank);
    Ok(edges.into_iter().map(|(e, _)| e).collect())
}

fn equal_count_chunks(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.max(1).min(len.max(1));
    let base = len / parts;
    let rem = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let size = base + if k < rem { 1 } else { 0 };
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Rebuilds the dataset under an arrival pattern.
///
/// The canonical edge list is the surviving edges of the original stream in
/// chronological order, split into one batch per tick.
pub fn generate_pattern(
    ds: &TemporalDataset,
    pattern: ArrivalPattern,
    seed: u64,
) -> Result<TemporalDataset> {
    let edges = surviving_edges(ds)?;
    let ticks = ds.ticks().max(1);
    let chunks = equal_count_chunks(edges.len(), ticks);
    let n = ds.node_count();

    let mut initial = DynamicGraph::new(n);
    let mut stream: Vec<EdgeEvent> = Vec::new();
    let mut batch_ends = Vec::new();
    let mut times = Vec::new();
    let mut clock = 0u64;

    let push_batch = |stream: &mut Vec<EdgeEvent>,
                      batch_ends: &mut Vec<usize>,
                      times: &mut Vec<u64>,
                      clock: &mut u64,
                      batch: &[(usize, usize)]| {
        for &(u, v) in batch {
            *clock += 1;
            stream.push(EdgeEvent::new(u, v, *clock));
        }
        if batch.is_empty() {
            *clock += 1;
        }
        batch_ends.push(stream.len());
        times.push(*clock);
    };

    match pattern {
        ArrivalPattern::Inclined => {
            for chunk in &chunks {
                let batch: Vec<(usize, usize)> = edges[chunk.clone()].to_vec();
                push_batch(&mut stream, &mut batch_ends, &mut times, &mut clock, &batch);
            }
        }
        ArrivalPattern::Declined => {
            initial = DynamicGraph::from_edges(n, &edges)?;
            for k in 0..ticks {
                let chunk = &chunks[ticks - 1 - k];
                let batch: Vec<(usize, usize)> = edges[chunk.clone()].to_vec();
                push_batch(&mut stream, &mut batch_ends, &mut times, &mut clock, &batch);
            }
        }
        ArrivalPattern::Balanced => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // deterministic half of the batches starts present
            let mut present: Vec<usize> = (0..ticks).filter(|k| k % 2 == 0).collect();
            let mut absent: Vec<usize> = (0..ticks).filter(|k| k % 2 == 1).collect();
            let mut start_edges = Vec::new();
            for &k in &present {
                start_edges.extend_from_slice(&edges[chunks[k].clone()]);
            }
            initial = DynamicGraph::from_edges(n, &start_edges)?;
            for _ in 0..ticks {
                let mut batch = Vec::new();
                let added = if absent.is_empty() {
                    None
                } else {
                    let pick = rng.gen_range(0..absent.len());
                    let b = absent.swap_remove(pick);
                    batch.extend_from_slice(&edges[chunks[b].clone()]);
                    Some(b)
                };
                if !present.is_empty() {
                    let pick = rng.gen_range(0..present.len());
                    let b = present.swap_remove(pick);
                    batch.extend_from_slice(&edges[chunks[b].clone()]);
                    absent.push(b);
                }
                if let Some(b) = added {
                    present.push(b);
                }
                push_batch(&mut stream, &mut batch_ends, &mut times, &mut clock, &batch);
            }
        }
    }

    let out = TemporalDataset {
        initial_graph: initial,
        features: ds.features.clone(),
        labels: ds.labels.clone(),
        classes: ds.classes,
        events: stream,
        batch_ends,
        prediction_times: times,
    };
    out.validate()?;
    Ok(out)
}

/// Generator knobs for the synthetic dynamic stochastic block model.
#[derive(Debug, Clone)]
pub struct SbmConfig {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub ticks: usize,
    pub churn: f64,
    pub seed: u64,
    /// Magnitude of the class-indicator component of each feature row.
    pub feature_scale: f64,
    /// Standard deviation of the additive feature noise.
    pub noise_scale: f64,
    /// Probability that an added edge connects two same-class nodes.
    pub intra_add_bias: f64,
    /// Fraction of churn events that are additions; 0.5 keeps the edge
    /// count stationary, lower values thin the graph over time.
    pub add_fraction: f64,
}

impl SbmConfig {
    pub fn new(
        n: usize,
        classes: usize,
        p_in: f64,
        p_out: f64,
        ticks: usize,
        churn: f64,
        seed: u64,
    ) -> Self {
        SbmConfig {
            n,
            classes,
            p_in,
            p_out,
            ticks,
            churn,
            seed,
            feature_scale: 0.02,
            noise_scale: 0.03,
            intra_add_bias: 0.9,
            add_fraction: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.n < self.classes {
            return Err(CodenError::InvalidParameter(
                "need at least one node per class".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in)
            || !(0.0..=1.0).contains(&self.p_out)
            || self.p_out > self.p_in
        {
            return Err(CodenError::InvalidParameter(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.churn < 0.0 || self.churn > 1.0 {
            return Err(CodenError::InvalidParameter(format!(
                "churn must lie in [0,1], got {}",
                self.churn
            )));
        }
        if !(0.0..=1.0).contains(&self.add_fraction) {
            return Err(CodenError::InvalidParameter(format!(
                "add_fraction must lie in [0,1], got {}",
                self.add_fraction
            )));
        }
        Ok(())
    }
}

/// Synthetic dynamic graph with class-aligned communities.
///
/// Nodes split into contiguous blocks; directed edges appear independently
/// with probability `p_in` inside a block and `p_out` across blocks.
/// Features are noisy class indicators. Each tick toggles a `churn`
/// fraction of the current edges: deletions pick uniform existing edges,
/// additions prefer intra-class pairs.
pub fn synth_dynamic_sbm(config: &SbmConfig) -> Result<TemporalDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let classes = config.classes;
    let label_of = |u: usize| u * classes / n;
    let labels: Vec<usize> = (0..n).map(label_of).collect();

    // block membership lists for targeted sampling
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (u, &c) in labels.iter().enumerate() {
        members[c].push(u);
    }

    // initial edge set
    let mut edge_list: Vec<(usize, usize)> = Vec::new();
    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let p = if labels[u] == labels[v] {
                config.p_in
            } else {
                config.p_out
            };
            if p > 0.0 && rng.gen_bool(p) {
                edge_index.insert((u, v), edge_list.len());
                edge_list.push((u, v));
            }
        }
    }
    let initial_graph = DynamicGraph::from_edges(n, &edge_list)?;

    // noisy class-indicator features
    let noise = Normal::new(0.0, config.noise_scale.max(f64::MIN_POSITIVE))
        .map_err(|e| CodenError::InvalidParameter(format!("bad noise scale: {e}")))?;
    let mut columns = vec![vec![0.0; n]; classes];
    for u in 0..n {
        for (c, col) in columns.iter_mut().enumerate() {
            let indicator = if labels[u] == c {
                config.feature_scale
            } else {
                0.0
            };
            let eta = if config.noise_scale > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            col[u] = indicator + eta;
        }
    }
    let features = FeatureMatrix::new(columns)?;

    // churn stream
    let mut events = Vec::new();
    let mut batch_ends = Vec::new();
    let mut times = Vec::new();
    let mut clock = 0u64;
    let remove_edge =
        |list: &mut Vec<(usize, usize)>, index: &mut HashMap<(usize, usize), usize>, at: usize| {
            let edge = list.swap_remove(at);
            index.remove(&edge);
            if at < list.len() {
                index.insert(list[at], at);
            }
            edge
        };
    for _tick in 0..config.ticks {
        let count = (config.churn * edge_list.len() as f64).round() as usize;
        for _ in 0..count {
            clock += 1;
            let delete = !edge_list.is_empty() && !rng.gen_bool(config.add_fraction);
            if delete {
                let at = rng.gen_range(0..edge_list.len());
                let (u, v) = remove_edge(&mut edge_list, &mut edge_index, at);
                events.push(EdgeEvent::new(u, v, clock));
            } else {
                // sample a fresh pair, preferring intra-class links
                let mut placed = false;
                for _try in 0..64 {
                    let (u, v) = if rng.gen_bool(config.intra_add_bias) {
                        let c = rng.gen_range(0..classes);
                        let blk = &members[c];
                        if blk.len() < 2 {
                            continue;
                        }
                        let u = blk[rng.gen_range(0..blk.len())];
                        let v = blk[rng.gen_range(0..blk.len())];
                        (u, v)
                    } else {
                        (rng.gen_range(0..n), rng.gen_range(0..n))
                    };
                    if u == v || edge_index.contains_key(&(u, v)) {
                        continue;
                    }
                    edge_index.insert((u, v), edge_list.len());
                    edge_list.push((u, v));
                    events.push(EdgeEvent::new(u, v, clock));
                    placed = true;
                    break;
                }
                if !placed {
                    // dense corner: fall back to deleting so the tick keeps
                    // its event budget
                    if edge_list.is_empty() {
                        clock -= 1;
                        continue;
                    }
                    let at = rng.gen_range(0..edge_list.len());
                    let (u, v) = remove_edge(&mut edge_list, &mut edge_index, at);
                    events.push(EdgeEvent::new(u, v, clock));
                }
            }
        }
        if count == 0 {
            clock += 1;
        }
        batch_ends.push(events.len());
        times.push(clock);
    }

    let ds = TemporalDataset {
        initial_graph,
        features,
        labels,
        classes,
        events,
        batch_ends,
        prediction_times: times,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the event stream as `src<TAB>dst<TAB>time`.
pub fn write_edges_tsv(path: &Path, events: &[EdgeEvent]) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    for e in events {
        writeln!(f, "{}\t{}\t{}", e.src, e.dst, e.time)
            .map_err(|er| CodenError::io(path.display().to_string(), er))?;
    }
    Ok(())
}

/// Writes features row-per-node TSV.
pub fn write_features_tsv(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    for u in 0..features.node_count() {
        let row: Vec<String> = (0..features.dims())
            .map(|i| format!("{}", features.column(i)[u]))
            .collect();
        writeln!(f, "{}", row.join("\t"))
            .map_err(|er| CodenError::io(path.display().to_string(), er))?;
    }
    Ok(())
}

/// Writes `node_id<TAB>class_id` labels.
pub fn write_labels_tsv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    for (u, c) in labels.iter().enumerate() {
        writeln!(f, "{u}\t{c}").map_err(|er| CodenError::io(path.display().to_string(), er))?;
    }
    Ok(())
}
