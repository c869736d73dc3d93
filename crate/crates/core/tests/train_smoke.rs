//! Desk-scale training integration checks: the run loop end to end,
//! checkpoint resume, and recovery from numeric blow-ups.

use progan_core::dataio::{PhantomConfig, PhantomDataset};
use progan_core::nets::{StagePlan, StageSpec};
use progan_core::objectives::{GradientPenaltyConfig, LatentKind};
use progan_core::trainer::{
    self, list_checkpoints, read_diagnostics, StagePhase, TrainConfig, TrainError, TrainSchedule,
};

fn smoke_plan() -> StagePlan {
    StagePlan::new(
        vec![
            StageSpec { height: 8, width: 8, channels: 16 },
            StageSpec { height: 16, width: 16, channels: 16 },
        ],
        16,
    )
    .unwrap()
}

fn smoke_config(seed: u64, total: Option<u64>) -> TrainConfig {
    TrainConfig {
        schedule: TrainSchedule {
            stages: vec![
                StagePhase { images_fade: 0, images_stable: 256, batch_size: 8 },
                StagePhase { images_fade: 256, images_stable: 256, batch_size: 8 },
            ],
            learning_rate: 0.0015,
            n_critic_ramp: vec![(0, 1)],
            total_images_target: total,
            seed,
        },
        penalty: GradientPenaltyConfig::default(),
        drift_eps: 0.001,
        label_weight: 1.0,
        latent: LatentKind::Normal,
        use_mbstd: true,
        log_interval_images: 64,
        grid_interval_images: 512,
        ckpt_interval_images: 256,
        max_restarts: 3,
    }
}

fn dataset(seed: u64) -> PhantomDataset {
    let cfg = PhantomConfig { height: 16, width: 16, seed, ..Default::default() };
    PhantomDataset::new(&cfg, 128).unwrap()
}

#[test]
fn run_writes_artifacts_and_grows_stages() {
    let ds = dataset(0);
    let dir = tempfile::tempdir().unwrap();
    let report = trainer::run(&smoke_plan(), &smoke_config(0, None), &ds, dir.path(), None).unwrap();
    assert_eq!(report.images_seen, 768);
    assert_eq!(report.final_fade.stage(), 1);
    assert_eq!(report.restarts, 0);

    let rows = read_diagnostics(&dir.path().join("diagnostics.csv")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| !r.is_flagged()), "all diagnostics rows finite");
    assert!(rows.windows(2).all(|w| w[0].images_seen < w[1].images_seen));

    let ckpts = list_checkpoints(dir.path()).unwrap();
    assert!(ckpts.len() >= 3, "initial + periodic + final checkpoints");
    assert!(dir.path().join("samples").read_dir().unwrap().next().is_some());
}

#[test]
fn same_seed_reproduces_diagnostics_byte_for_byte() {
    let ds = dataset(1);
    let cfg = smoke_config(5, Some(256));
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    trainer::run(&smoke_plan(), &cfg, &ds, d1.path(), None).unwrap();
    trainer::run(&smoke_plan(), &cfg, &ds, d2.path(), None).unwrap();
    let a = std::fs::read(d1.path().join("diagnostics.csv")).unwrap();
    let b = std::fs::read(d2.path().join("diagnostics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_matches_uninterrupted_run_bit_exactly() {
    let ds = dataset(2);

    // uninterrupted: 512 images
    let full_dir = tempfile::tempdir().unwrap();
    let full_cfg = smoke_config(9, Some(512));
    trainer::run(&smoke_plan(), &full_cfg, &ds, full_dir.path(), None).unwrap();

    // split: run to 256, then resume to 512 in the same directory
    let split_dir = tempfile::tempdir().unwrap();
    let first_cfg = smoke_config(9, Some(256));
    let report = trainer::run(&smoke_plan(), &first_cfg, &ds, split_dir.path(), None).unwrap();
    let resume_from = report.checkpoints.last().unwrap().clone();
    trainer::run(&smoke_plan(), &full_cfg, &ds, split_dir.path(), Some(&resume_from)).unwrap();

    // identical diagnostics CSV
    let a = std::fs::read(full_dir.path().join("diagnostics.csv")).unwrap();
    let b = std::fs::read(split_dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(a, b, "diagnostics differ between resumed and uninterrupted runs");

    // bit-identical final parameters
    let ck_full = trainer::load_checkpoint(&full_dir.path().join("ckpt_512")).unwrap();
    let ck_split = trainer::load_checkpoint(&split_dir.path().join("ckpt_512")).unwrap();
    assert_eq!(ck_full.gen_params.len(), ck_split.gen_params.len());
    for ((na, ta), (nb, tb)) in ck_full.gen_params.iter().zip(&ck_split.gen_params) {
        assert_eq!(na, nb);
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "parameter {na} diverged");
        }
    }
    for ((na, ta), (nb, tb)) in ck_full.critic_params.iter().zip(&ck_split.critic_params) {
        assert_eq!(na, nb);
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "parameter {na} diverged");
        }
    }
}

#[test]
fn diverging_run_rolls_back_then_gives_up() {
    // An absurd learning rate reliably produces non-finite losses; the run
    // must roll back (re-drawing its RNG stream) and, once restarts are
    // exhausted, surface the restart error rather than a raw numeric one.
    let ds = dataset(3);
    let mut cfg = smoke_config(11, Some(512));
    cfg.schedule.learning_rate = 1e7;
    cfg.max_restarts = 2;
    let dir = tempfile::tempdir().unwrap();
    match trainer::run(&smoke_plan(), &cfg, &ds, dir.path(), None) {
        Err(TrainError::TooManyRestarts { restarts, .. }) => assert_eq!(restarts, 3),
        other => panic!("expected TooManyRestarts, got {other:?}"),
    }
}
