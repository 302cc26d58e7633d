//! End-to-end pipeline checks: variant non-degeneracy, the representation
//! energy comparison log, multi-seed training health, pattern replay, and
//! the checkpoint surface.

use coden::checkpoint::{load_checkpoint, save_checkpoint};
use coden::dataset::{generate_pattern, synth_dynamic_sbm, ArrivalPattern, SbmConfig};
use coden::learner::{train_step, Adam, CodenModel};
use coden::runner::{run_continuous_prediction, RunConfig, TimingMode, Variant};
use coden::ssm::SsmMode;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn small_sbm(seed: u64) -> coden::dataset::TemporalDataset {
    let mut cfg = SbmConfig::new(60, 3, 0.2, 0.02, 4, 0.1, seed);
    cfg.feature_scale = 0.02;
    cfg.noise_scale = 0.02;
    synth_dynamic_sbm(&cfg).unwrap()
}

fn quick_config(seed: u64, variant: Variant) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.epsilon = 1e-6;
    cfg.state_dim = 6;
    cfg.mlp_hidden = 12;
    cfg.train.epochs = 40;
    cfg.train.lr = 0.02;
    cfg.train.reg_weight = 0.0;
    cfg.train.seed = seed;
    cfg.variant = variant;
    if variant == Variant::CodenR {
        cfg.mode = SsmMode::Gated;
    }
    cfg.timing = TimingMode::None;
    cfg
}

#[test]
fn gated_and_general_trajectories_differ() {
    // the constrained variant must not silently collapse onto the general
    // one: their committed states and predictions come from different
    // parameterizations
    let ds = small_sbm(3);
    let general = run_continuous_prediction(&ds, &quick_config(3, Variant::Coden)).unwrap();
    let gated = run_continuous_prediction(&ds, &quick_config(3, Variant::CodenR)).unwrap();
    let g = general.model.unwrap().to_ssm_parameters().unwrap();
    let r = gated.model.unwrap().to_ssm_parameters().unwrap();
    assert_eq!(g.mode(), SsmMode::General);
    assert_eq!(r.mode(), SsmMode::Gated);
    let ga = g.a_bar_matrix();
    let ra = r.a_bar_matrix();
    let diff = (0..3)
        .map(|i| (ga[(i, i)] - ra[(i, i)]).abs())
        .fold(0.0_f64, f64::max);
    assert!(diff > 1e-6, "transition gates identical: {diff}");
}

#[test]
fn energy_comparison_logged_over_seeds() {
    // representation-energy comparison: majority of seeds expected to show
    // the recurrence state at least as spread as the attention state;
    // logged, not hard-asserted (the hypothesis is only encouraged by
    // regularization)
    let mut wins = 0;
    let seeds = 10;
    for seed in 0..seeds {
        let ds = small_sbm(seed);
        let mut cfg = quick_config(seed, Variant::Coden);
        cfg.diagnostics = true;
        cfg.train.reg_weight = 0.1;
        let out = run_continuous_prediction(&ds, &cfg).unwrap();
        let last = out.rows.last().unwrap();
        let (de_c, de_a) = (
            last.dirichlet_coden.expect("diagnostics on"),
            last.dirichlet_attn.expect("diagnostics on"),
        );
        if de_c >= de_a {
            wins += 1;
        }
        println!(
            "seed {seed}: energy recurrence {de_c:.6e} vs attention {de_a:.6e}{}",
            if de_c >= de_a {
                ""
            } else {
                "  (attention higher)"
            }
        );
        if let Some(margin) = out.spectral_margin {
            println!("  spectral floor margin {margin:.4}");
        }
    }
    println!("energy comparison: recurrence >= attention on {wins}/{seeds} seeds");
}

#[test]
fn training_reduces_loss_across_seeds() {
    // separable toy: final loss below initial on at least 95% of seeds
    let mut ok = 0;
    let seeds = 40;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 24;
        let labels: Vec<usize> = (0..n).map(|u| u % 2).collect();
        let h: Vec<DMatrix<f64>> = (0..3)
            .map(|_| {
                DMatrix::from_fn(n, 3, |u, c| {
                    let sign = if u % 2 == 0 { 1.0 } else { -1.0 };
                    if c == 0 {
                        sign + rng.gen_range(-0.3..0.3)
                    } else {
                        rng.gen_range(-0.3..0.3)
                    }
                })
            })
            .collect();
        let mask: Vec<usize> = (0..n).collect();
        let m0 = DMatrix::zeros(n, 4);
        let mut model = CodenModel::general(3, 4, 8, 2, 1.0, &mut rng);
        let mut adam = Adam::new(0.01, model.flat_params().len());
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..20 {
            last = train_step(&mut model, &mut adam, &m0, &h, &labels, &mask, 0.0).unwrap();
            first.get_or_insert(last);
        }
        if last < first.unwrap() {
            ok += 1;
        }
    }
    assert!(
        ok * 100 >= seeds * 95,
        "loss decreased on only {ok}/{seeds} seeds"
    );
}

#[test]
fn balanced_pattern_runs_end_to_end() {
    let ds = small_sbm(9);
    let balanced = generate_pattern(&ds, ArrivalPattern::Balanced, 5).unwrap();
    let out = run_continuous_prediction(&balanced, &quick_config(9, Variant::Coden)).unwrap();
    assert_eq!(out.rows.len(), balanced.ticks());
}

#[test]
fn declined_pattern_under_verification() {
    let ds = small_sbm(11);
    let declined = generate_pattern(&ds, ArrivalPattern::Declined, 5).unwrap();
    let mut cfg = quick_config(11, Variant::Coden);
    cfg.verify = true;
    run_continuous_prediction(&declined, &cfg).unwrap();
}

#[test]
fn trained_checkpoint_roundtrips_through_runner() {
    let ds = small_sbm(13);
    let out = run_continuous_prediction(&ds, &quick_config(13, Variant::Coden)).unwrap();
    let model = out.model.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.tsv");
    save_checkpoint(&path, &model).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.flat_params(), model.flat_params());
}

#[test]
fn reinit_changes_trajectory() {
    let ds = small_sbm(17);
    let warm = run_continuous_prediction(&ds, &quick_config(17, Variant::Coden)).unwrap();
    let mut cfg = quick_config(17, Variant::Coden);
    cfg.train.reinit = true;
    let cold = run_continuous_prediction(&ds, &cfg).unwrap();
    let warm_params = warm.model.unwrap().flat_params();
    let cold_params = cold.model.unwrap().flat_params();
    assert_ne!(warm_params, cold_params);
}

#[test]
fn zero_churn_aligns_snapshot_and_temporal() {
    // static graph: every sampled snapshot is identical, so the temporal
    // state carries no extra signal and the two variants score alike
    let mut cfg_ds = SbmConfig::new(120, 3, 0.1, 0.01, 4, 0.0, 23);
    cfg_ds.feature_scale = 0.02;
    cfg_ds.noise_scale = 0.02;
    let ds = synth_dynamic_sbm(&cfg_ds).unwrap();
    let coden = run_continuous_prediction(&ds, &quick_config(23, Variant::Coden)).unwrap();
    let snap = run_continuous_prediction(&ds, &quick_config(23, Variant::CodenS)).unwrap();
    let a = coden.rows.last().unwrap().micro_f1;
    let b = snap.rows.last().unwrap().micro_f1;
    println!("zero churn: coden {a:.4} vs coden_s {b:.4}");
    assert!((a - b).abs() <= 0.10, "{a} vs {b}");
}
