//! End-to-end trainer behavior: update cadence, determinism, checkpoint
//! continuation, transfer initialization and latent dumps, all on small
//! fast configurations.

use std::path::Path;

use hlps_core::statespace::filter_trajectory;
use hlps_train::config::{ReprVariant, TrainConfig};
use hlps_train::metrics::read_metrics;
use hlps_train::trainer::{run_training, transfer_init, Trainer};

/// Small-network config that still exercises every code path.
fn tiny_config(total_steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.total_steps = total_steps;
    cfg.warmup_steps = 0;
    cfg.hidden_dim = 16;
    cfg.encoder_hidden = 16;
    cfg.batch_low = 8;
    cfg.batch_high = 8;
    cfg.batch_triplets = 4;
    cfg.batch_windows = 2;
    cfg.eval_every = 500;
    cfg.eval_episodes = 2;
    cfg.env.horizon = 60;
    cfg.env.noise_sigma = 0.1;
    cfg
}

#[test]
fn zero_steps_yields_empty_metrics_and_initial_checkpoint() {
    let cfg = tiny_config(0);
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(cfg, 1).unwrap();
    let outcome = run_training(&mut trainer, Some(dir.path()), None).unwrap();
    assert!(outcome.metrics.is_empty());
    assert_eq!(trainer.counters.env_steps, 0);
    assert_eq!(trainer.counters.low_updates, 0);
    assert!(dir.path().join("checkpoints/final.hlps").exists());
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert!(rows.is_empty());
}

/// The update-cadence audit: 1000 steps with k=50, m=100 perform exactly
/// 1000 low-level, 20 high-level and 10 hyperparameter updates.
#[test]
fn cadence_audit_1000_steps() {
    let mut cfg = tiny_config(1000);
    cfg.k = 50;
    cfg.m = 100;
    let mut trainer = Trainer::new(cfg, 3).unwrap();
    run_training(&mut trainer, None, None).unwrap();
    assert_eq!(trainer.counters.env_steps, 1000);
    assert_eq!(trainer.counters.low_updates, 1000);
    assert_eq!(trainer.counters.encoder_updates, 1000);
    assert_eq!(trainer.counters.high_updates, 20);
    assert_eq!(trainer.counters.hyper_updates, 10);
}

/// Cadence generalizes to other (k, m, total) choices.
#[test]
fn cadence_audit_other_intervals() {
    let mut cfg = tiny_config(700);
    cfg.k = 30;
    cfg.m = 45;
    cfg.eval_every = 1000;
    let mut trainer = Trainer::new(cfg, 4).unwrap();
    run_training(&mut trainer, None, None).unwrap();
    assert_eq!(trainer.counters.low_updates, 700);
    assert_eq!(trainer.counters.high_updates, 700 / 30);
    assert_eq!(trainer.counters.hyper_updates, 700 / 45);
}

#[test]
fn same_seed_gives_bit_identical_metrics_files() {
    let cfg = tiny_config(1200);
    let run = |dir: &Path| {
        let mut trainer = Trainer::new(cfg.clone(), 7).unwrap();
        run_training(&mut trainer, Some(dir), None).unwrap();
        std::fs::read(dir.join("metrics.csv")).unwrap()
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = run(d1.path());
    let b = run(d2.path());
    assert!(!a.is_empty());
    assert_eq!(a, b, "two runs with the same seed must write identical bytes");
}

#[test]
fn different_seeds_diverge() {
    let cfg = tiny_config(600);
    let mut t1 = Trainer::new(cfg.clone(), 1).unwrap();
    let mut t2 = Trainer::new(cfg, 2).unwrap();
    let m1 = run_training(&mut t1, None, None).unwrap().metrics;
    let m2 = run_training(&mut t2, None, None).unwrap().metrics;
    assert_ne!(m1, m2);
}

/// Save at step n, continue m steps; compare against an uninterrupted
/// n+m run: metrics and final checkpoints must match bit for bit.
#[test]
fn checkpoint_roundtrip_continuation_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(900);
    cfg.eval_every = 300;

    // uninterrupted reference
    let mut full = Trainer::new(cfg.clone(), 11).unwrap();
    let full_metrics = run_training(&mut full, None, None).unwrap().metrics;
    let full_cp = dir.path().join("full.hlps");
    full.save_checkpoint(&full_cp).unwrap();

    // interrupted at 300
    let mut head = Trainer::new(
        {
            let mut c = cfg.clone();
            c.total_steps = 300;
            c
        },
        11,
    )
    .unwrap();
    let head_metrics = run_training(&mut head, None, None).unwrap().metrics;
    let mid_cp = dir.path().join("mid.hlps");
    head.save_checkpoint(&mid_cp).unwrap();
    drop(head);

    let mut tail = Trainer::load_checkpoint(&mid_cp).unwrap();
    tail.cfg.total_steps = 900;
    let tail_metrics = run_training(&mut tail, None, None).unwrap().metrics;
    let resumed_cp = dir.path().join("resumed.hlps");
    tail.save_checkpoint(&resumed_cp).unwrap();

    let mut combined = head_metrics;
    combined.extend(tail_metrics);
    assert_eq!(combined, full_metrics, "metrics must continue seamlessly");

    // checkpoints agree except for the embedded total_steps config line
    let full_tr = Trainer::load_checkpoint(&full_cp).unwrap();
    let res_tr = Trainer::load_checkpoint(&resumed_cp).unwrap();
    assert_eq!(full_tr.counters, res_tr.counters);
    for (a, b) in full_tr
        .low
        .all_params()
        .iter()
        .chain(full_tr.high.all_params().iter())
        .zip(res_tr.low.all_params().iter().chain(res_tr.high.all_params().iter()))
    {
        assert_eq!(a.borrow().value.data(), b.borrow().value.data(), "{}", a.borrow().name);
        assert_eq!(a.borrow().m.data(), b.borrow().m.data());
    }
    for (a, b) in full_tr
        .repr
        .encoder
        .params()
        .iter()
        .chain(full_tr.repr.hp.params().iter())
        .zip(res_tr.repr.encoder.params().iter().chain(res_tr.repr.hp.params().iter()))
    {
        assert_eq!(a.borrow().value.data(), b.borrow().value.data(), "{}", a.borrow().name);
    }
}

#[test]
fn transfer_copies_low_level_and_resets_high_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(400);
    let mut source = Trainer::new(cfg.clone(), 5).unwrap();
    run_training(&mut source, None, None).unwrap();
    let cp = dir.path().join("source.hlps");
    source.save_checkpoint(&cp).unwrap();

    let mut target_cfg = cfg.clone();
    target_cfg.env.eval_goal = [10.5, 9.5];
    let transferred = transfer_init(target_cfg, 6, &cp).unwrap();

    for (a, b) in source.low.all_params().iter().zip(transferred.low.all_params().iter()) {
        assert_eq!(
            a.borrow().value.data(),
            b.borrow().value.data(),
            "low-level weights must copy bit-exactly ({})",
            a.borrow().name
        );
    }
    for (a, b) in source
        .repr
        .encoder
        .params()
        .iter()
        .zip(transferred.repr.encoder.params().iter())
    {
        assert_eq!(a.borrow().value.data(), b.borrow().value.data());
    }
    let src_hi = source.high.actor.w1.borrow().value.clone();
    let dst_hi = transferred.high.actor.w1.borrow().value.clone();
    assert_ne!(src_hi.data(), dst_hi.data(), "high-level actor must start fresh");
    assert_eq!(transferred.buffer.len(), 0, "replay buffer must start fresh");
}

#[test]
fn transfer_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(50);
    let mut source = Trainer::new(cfg.clone(), 5).unwrap();
    run_training(&mut source, None, None).unwrap();
    let cp = dir.path().join("source.hlps");
    source.save_checkpoint(&cp).unwrap();

    let mut bad = cfg;
    bad.latent_dim = 3;
    let err = match transfer_init(bad, 6, &cp) {
        Err(e) => e.to_string(),
        Ok(_) => panic!("mismatched transfer must fail"),
    };
    assert!(err.contains("latent dimension mismatch"), "{err}");
}

#[test]
fn latent_dump_rows_match_filter_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(300);
    let mut trainer = Trainer::new(cfg, 9).unwrap();
    run_training(&mut trainer, None, None).unwrap();

    let jsonl = dir.path().join("latent.jsonl");
    let svg = dir.path().join("latent.svg");
    let rows = trainer.dump_latent_trajectories(3, &jsonl, Some(&svg)).unwrap();
    let text = std::fs::read_to_string(&jsonl).unwrap();
    let parsed: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed.len() as u64, rows);
    assert!(svg.exists());

    // per-episode: z columns equal an offline filter over the dumped states,
    // and the subgoal changes only at multiples of k
    for episode in 0..3u64 {
        let ep_rows: Vec<&serde_json::Value> = parsed
            .iter()
            .filter(|r| r["episode"].as_u64() == Some(episode))
            .collect();
        assert!(!ep_rows.is_empty());
        let states: Vec<Vec<f64>> = ep_rows
            .iter()
            .map(|r| r["s"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
            .collect();
        let f = trainer.repr.encode_batch(&states).unwrap();
        let expected = filter_trajectory(&states, &f, &trainer.repr.hp).unwrap();
        let mut prev_g: Option<Vec<f64>> = None;
        for (i, row) in ep_rows.iter().enumerate() {
            let z: Vec<f64> =
                row["z"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            for j in 0..z.len() {
                assert!(
                    (z[j] - expected.get(i, j)).abs() < 1e-9,
                    "episode {episode} row {i} dim {j}"
                );
            }
            let g: Vec<f64> =
                row["g"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            if let Some(pg) = &prev_g {
                let step = row["step"].as_u64().unwrap();
                if step % 50 != 0 {
                    assert_eq!(&g, pg, "subgoal changed off-boundary at step {step}");
                }
            }
            prev_g = Some(g);
        }
    }
}

#[test]
fn random_projection_variant_trains_to_completion() {
    let mut cfg = tiny_config(500);
    cfg.repr_variant = ReprVariant::RandomProjection;
    let mut trainer = Trainer::new(cfg, 13).unwrap();
    run_training(&mut trainer, None, None).unwrap();
    assert_eq!(trainer.counters.low_updates, 500);
    assert_eq!(trainer.counters.encoder_updates, 0, "nothing to train in the projection");
    assert_eq!(trainer.counters.hyper_updates, 0);
    assert_eq!(trainer.counters.high_updates, 10);
}

#[test]
fn frozen_variant_skips_representation_updates_but_filters() {
    let mut cfg = tiny_config(300);
    cfg.repr_variant = ReprVariant::Frozen;
    let mut trainer = Trainer::new(cfg, 14).unwrap();
    run_training(&mut trainer, None, None).unwrap();
    assert_eq!(trainer.counters.encoder_updates, 0);
    assert_eq!(trainer.counters.hyper_updates, 0);
    assert_eq!(trainer.counters.low_updates, 300);
}

#[test]
fn evaluation_is_insensitive_to_call_order() {
    let cfg = tiny_config(300);
    let mut trainer = Trainer::new(cfg, 15).unwrap();
    run_training(&mut trainer, None, None).unwrap();
    let (a, ra) = trainer.evaluate(3, 42).unwrap();
    let (b, rb) = trainer.evaluate(3, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}
