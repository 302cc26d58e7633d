//! Command-line driver for continuous prediction runs and benchmarks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coden::checkpoint::save_checkpoint;
use coden::dataset::{
    generate_pattern, load_dataset, synth_dynamic_sbm, ArrivalPattern, SbmConfig, TemporalDataset,
};
use coden::error::{CodenError, Result};
use coden::runner::{
    run_benchmark, run_continuous_prediction, write_bench_csv, write_metrics_csv, RunConfig,
    TimingMode, Variant,
};
use coden::ssm::SsmMode;

#[derive(Parser)]
#[command(name = "coden", about = "Streaming temporal-graph embedding engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the continuous-prediction loop and write a metrics file.
    Run(RunArgs),
    /// Time several pipeline variants on the same dataset.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Edge-stream TSV (src<TAB>dst<TAB>time, sorted by time).
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Feature TSV, one row per node.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Labels TSV (node_id<TAB>class_id).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of prediction ticks for file datasets.
    #[arg(long)]
    ticks: Option<usize>,

    /// Generate a synthetic dynamic block-model dataset instead of loading
    /// files.
    #[arg(long, default_value_t = false)]
    synth: bool,
    #[arg(long)]
    synth_n: Option<usize>,
    #[arg(long)]
    synth_classes: Option<usize>,
    #[arg(long)]
    synth_p_in: Option<f64>,
    #[arg(long)]
    synth_p_out: Option<f64>,
    #[arg(long)]
    synth_ticks: Option<usize>,
    #[arg(long)]
    synth_churn: Option<f64>,
    #[arg(long)]
    synth_feature_scale: Option<f64>,
    #[arg(long)]
    synth_noise: Option<f64>,
    #[arg(long)]
    synth_intra_bias: Option<f64>,
    #[arg(long)]
    synth_add_fraction: Option<f64>,

    /// Edge arrival pattern applied to the dataset.
    #[arg(long)]
    pattern: Option<String>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Temporal state width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Classifier hidden width.
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    reg_weight: Option<f64>,
    /// Temporal block structure: general or gated.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-initialize the model at every tick instead of warm-starting.
    #[arg(long, default_value_t = false)]
    reinit: bool,
    /// Dense-oracle accuracy checks per tick (small graphs only).
    #[arg(long, default_value_t = false)]
    verify: bool,
    /// Record representation-energy diagnostics per tick.
    #[arg(long, default_value_t = false)]
    diagnostics: bool,
    /// wall (default) or none; none zeroes the timing columns so output is
    /// byte-reproducible.
    #[arg(long)]
    timing_mode: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Pipeline variant to run.
    #[arg(long)]
    baseline: Option<String>,
    /// Metrics CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the final embedding matrix as TSV.
    #[arg(long)]
    dump_embeddings: Option<PathBuf>,
    /// Write the trained parameters as a checkpoint file.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated variants to benchmark.
    #[arg(long, default_value = "coden,from_scratch_embeddings")]
    baselines: String,
    /// Benchmark CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CodenError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn kv_parse<T: std::str::FromStr>(kv: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match kv.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            CodenError::InvalidParameter(format!("bad value '{raw}' for config key '{key}'"))
        }),
    }
}

/// Defaults, overridden by the config file, overridden by flags.
fn build_run_config(model: &ModelArgs, baseline: Option<&str>) -> Result<RunConfig> {
    let kv = match &model.config {
        Some(path) => read_config_file(path)?,
        None => HashMap::new(),
    };
    let mut cfg = RunConfig::default();
    cfg.alpha = model.alpha.or(kv_parse(&kv, "alpha")?).unwrap_or(cfg.alpha);
    cfg.epsilon = model
        .epsilon
        .or(kv_parse(&kv, "epsilon")?)
        .unwrap_or(cfg.epsilon);
    cfg.lambda = model
        .lambda
        .or(kv_parse(&kv, "lambda")?)
        .unwrap_or(cfg.lambda);
    cfg.state_dim = model
        .hidden
        .or(kv_parse(&kv, "hidden")?)
        .unwrap_or(cfg.state_dim);
    cfg.mlp_hidden = model
        .mlp_hidden
        .or(kv_parse(&kv, "mlp_hidden")?)
        .unwrap_or(cfg.mlp_hidden);
    cfg.train.epochs = model
        .epochs
        .or(kv_parse(&kv, "epochs")?)
        .unwrap_or(cfg.train.epochs);
    cfg.train.lr = model.lr.or(kv_parse(&kv, "lr")?).unwrap_or(cfg.train.lr);
    cfg.train.reg_weight = model
        .reg_weight
        .or(kv_parse(&kv, "reg_weight")?)
        .unwrap_or(cfg.train.reg_weight);
    cfg.train.seed = model.seed.or(kv_parse(&kv, "seed")?).unwrap_or(0);
    cfg.train.reinit = model.reinit || kv_parse::<bool>(&kv, "reinit")?.unwrap_or(false);
    cfg.verify = model.verify || kv_parse::<bool>(&kv, "verify")?.unwrap_or(false);
    cfg.diagnostics = model.diagnostics || kv_parse::<bool>(&kv, "diagnostics")?.unwrap_or(false);
    let mode = model
        .mode
        .clone()
        .or_else(|| kv.get("mode").cloned())
        .unwrap_or_else(|| "general".into());
    cfg.mode = match mode.as_str() {
        "general" => SsmMode::General,
        "gated" => SsmMode::Gated,
        other => {
            return Err(CodenError::InvalidParameter(format!(
                "unknown mode '{other}'"
            )))
        }
    };
    let timing = model
        .timing_mode
        .clone()
        .or_else(|| kv.get("timing_mode").cloned())
        .unwrap_or_else(|| "wall".into());
    cfg.timing = match timing.as_str() {
        "wall" => TimingMode::Wall,
        "none" => TimingMode::None,
        other => {
            return Err(CodenError::InvalidParameter(format!(
                "unknown timing mode '{other}'"
            )))
        }
    };
    if let Some(name) = baseline
        .map(str::to_string)
        .or_else(|| kv.get("baseline").cloned())
    {
        cfg.variant = name.parse()?;
    }
    if cfg.variant == Variant::CodenR {
        cfg.mode = SsmMode::Gated;
    }
    Ok(cfg)
}

fn build_dataset(data: &DataArgs, seed: u64) -> Result<TemporalDataset> {
    let mut ds = if data.synth {
        let mut cfg = SbmConfig::new(
            data.synth_n.unwrap_or(400),
            data.synth_classes.unwrap_or(4),
            data.synth_p_in.unwrap_or(0.05),
            data.synth_p_out.unwrap_or(0.005),
            data.synth_ticks.unwrap_or(8),
            data.synth_churn.unwrap_or(0.1),
            seed,
        );
        if let Some(v) = data.synth_feature_scale {
            cfg.feature_scale = v;
        }
        if let Some(v) = data.synth_noise {
            cfg.noise_scale = v;
        }
        if let Some(v) = data.synth_intra_bias {
            cfg.intra_add_bias = v;
        }
        if let Some(v) = data.synth_add_fraction {
            cfg.add_fraction = v;
        }
        synth_dynamic_sbm(&cfg)?
    } else {
        let (edges, features, labels) = match (&data.edges, &data.features, &data.labels) {
            (Some(e), Some(f), Some(l)) => (e, f, l),
            _ => {
                return Err(CodenError::InvalidParameter(
                    "provide --edges, --features and --labels, or use --synth".into(),
                ))
            }
        };
        load_dataset(edges, features, labels, data.ticks.unwrap_or(8))?
    };
    if let Some(pattern) = &data.pattern {
        let pattern: ArrivalPattern = pattern.parse()?;
        ds = generate_pattern(&ds, pattern, seed)?;
    }
    Ok(ds)
}

fn write_embedding_tsv(path: &Path, m: &nalgebra::DMatrix<f64>) -> Result<()> {
    use std::io::Write;
    let mut f =
        std::fs::File::create(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    for u in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(u, c)])).collect();
        writeln!(f, "{}", row.join("\t"))
            .map_err(|e| CodenError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = build_run_config(&args.model, args.baseline.as_deref())?;
    let ds = build_dataset(&args.data, cfg.train.seed)?;
    let out = run_continuous_prediction(&ds, &cfg)?;
    for row in &out.rows {
        println!(
            "tick {:>3}  micro_f1 {:.4}  accuracy {:.4}  samples {:>6}  push_ops {:>10}",
            row.timestep, row.micro_f1, row.accuracy, row.samples_emitted, row.push_ops
        );
    }
    if let Some(margin) = out.spectral_margin {
        eprintln!(
            "spectral floor margin {margin:.4} ({})",
            if margin >= 1.0 { "holds" } else { "below 1" }
        );
    }
    if let Some(path) = &args.out {
        write_metrics_csv(path, &out.rows, cfg.timing)?;
        eprintln!("metrics written to {}", path.display());
    }
    if let Some(path) = &args.dump_embeddings {
        write_embedding_tsv(path, &out.final_embedding)?;
    }
    if let Some(path) = &args.params_out {
        match &out.model {
            Some(model) => save_checkpoint(path, model)?,
            None => eprintln!("no temporal parameters to save for this variant"),
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = build_run_config(&args.model, None)?;
    let ds = build_dataset(&args.data, cfg.train.seed)?;
    let variants: Vec<Variant> = args
        .baselines
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    let report = run_benchmark(&ds, &cfg, &variants)?;
    for (variant, ticks) in &report.entries {
        let embed: f64 = ticks.iter().map(|t| t.embed_seconds).sum();
        let state: f64 = ticks.iter().map(|t| t.state_seconds).sum();
        let train: f64 = ticks.iter().map(|t| t.train_seconds).sum();
        let pushes: u64 = ticks.iter().map(|t| t.push_ops).sum();
        println!(
            "{:<24} embed {embed:>8.3}s  state {state:>8.3}s  train {train:>8.3}s  push_ops {pushes}",
            variant.name()
        );
    }
    if let Some(path) = &args.out {
        write_bench_csv(path, &report)?;
        eprintln!("benchmark written to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
