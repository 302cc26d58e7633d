//! Command-line surface: flag parsing, the flat config file with flag
//! overrides, dataset files on disk, and the metrics file format.

use std::process::Command;

fn coden_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coden"))
}

#[test]
fn synth_run_writes_versioned_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("metrics.csv");
    let status = coden_bin()
        .args([
            "run",
            "--synth",
            "--synth-n",
            "50",
            "--synth-classes",
            "3",
            "--synth-p-in",
            "0.2",
            "--synth-p-out",
            "0.02",
            "--synth-ticks",
            "3",
            "--synth-churn",
            "0.1",
            "--epochs",
            "10",
            "--epsilon",
            "1e-6",
            "--seed",
            "4",
            "--timing-mode",
            "none",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# coden-metrics v1");
    assert!(lines
        .next()
        .unwrap()
        .starts_with("timestep,micro_f1,accuracy"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &std::path::Path| {
        vec![
            "run".to_string(),
            "--synth".into(),
            "--synth-n".into(),
            "40".into(),
            "--synth-classes".into(),
            "2".into(),
            "--synth-ticks".into(),
            "2".into(),
            "--epochs".into(),
            "8".into(),
            "--epsilon".into(),
            "1e-6".into(),
            "--seed".into(),
            "9".into(),
            "--timing-mode".into(),
            "none".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    assert!(coden_bin().args(args(&p1)).status().unwrap().success());
    assert!(coden_bin().args(args(&p2)).status().unwrap().success());
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        "epsilon = 1e-6\nepochs = 5\nseed = 3\nlambda = 0.5\ntiming_mode = none\n",
    )
    .unwrap();
    let out1 = dir.path().join("from_file.csv");
    let status = coden_bin()
        .args(["run", "--synth", "--synth-n", "40", "--synth-ticks", "2"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out1)
        .status()
        .unwrap();
    assert!(status.success());

    // a flag overrides the same key from the file: seed change must alter
    // the metrics
    let out2 = dir.path().join("override.csv");
    let status = coden_bin()
        .args(["run", "--synth", "--synth-n", "40", "--synth-ticks", "2"])
        .arg("--config")
        .arg(&cfg)
        .args(["--seed", "8"])
        .arg("--out")
        .arg(&out2)
        .status()
        .unwrap();
    assert!(status.success());
    assert_ne!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
}

#[test]
fn file_dataset_roundtrip_through_cli() {
    use coden::dataset::{
        synth_dynamic_sbm, write_edges_tsv, write_features_tsv, write_labels_tsv, SbmConfig,
    };
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dynamic_sbm(&SbmConfig::new(40, 2, 0.25, 0.05, 3, 0.15, 21)).unwrap();
    let edges = dir.path().join("edges.tsv");
    let features = dir.path().join("features.tsv");
    let labels = dir.path().join("labels.tsv");
    write_edges_tsv(&edges, &ds.events).unwrap();
    write_features_tsv(&features, &ds.features).unwrap();
    write_labels_tsv(&labels, &ds.labels).unwrap();

    let out = dir.path().join("metrics.csv");
    let dump = dir.path().join("embedding.tsv");
    let status = coden_bin()
        .arg("run")
        .arg("--edges")
        .arg(&edges)
        .arg("--features")
        .arg(&features)
        .arg("--labels")
        .arg(&labels)
        .args([
            "--ticks",
            "3",
            "--epochs",
            "5",
            "--epsilon",
            "1e-6",
            "--verify",
        ])
        .arg("--out")
        .arg(&out)
        .arg("--dump-embeddings")
        .arg(&dump)
        .status()
        .unwrap();
    assert!(status.success());
    let dump_text = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(dump_text.lines().count(), 40);
    assert_eq!(dump_text.lines().next().unwrap().split('\t').count(), 2);
}

#[test]
fn bench_subcommand_reports_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let output = coden_bin()
        .args([
            "bench",
            "--synth",
            "--synth-n",
            "50",
            "--synth-ticks",
            "3",
            "--epochs",
            "3",
            "--epsilon",
            "1e-6",
            "--baselines",
            "coden,coden_s,from_scratch_embeddings",
        ])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("coden"));
    assert!(stdout.contains("from_scratch_embeddings"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# coden-bench v1"));
}

#[test]
fn unknown_variant_fails_cleanly() {
    let output = coden_bin()
        .args(["run", "--synth", "--baseline", "nonsense"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown variant"));
}
