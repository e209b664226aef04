use sdpg_core::checkpoint::Checkpoint;
use sdpg_core::config::TrainConfig;
use sdpg_core::envs::{EnvId, ObsMode};
use sdpg_core::eval::evaluate_checkpoint;
use sdpg_core::train::{train, Trainer, METRICS_HEADER};
use sdpg_core::Error;

fn tiny(env: EnvId, mode: ObsMode, dir: &std::path::Path) -> TrainConfig {
    let mut cfg = TrainConfig::desk_scale(env, mode);
    cfg.rollout.n = 2;
    cfg.rollout.m = 3;
    cfg.rollout.h = 4;
    cfg.optim.critic_batch = 16;
    cfg.network.actor_hidden = vec![8];
    cfg.network.critic_hidden = vec![8];
    cfg.run.epochs = 3;
    cfg.run.checkpoint_every = 2;
    cfg.run.out_dir = dir.to_path_buf();
    cfg
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train(tiny(EnvId::PointMass2D, ObsMode::State, dir.path())).unwrap();
    let text = std::fs::read_to_string(&summary.metrics_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(lines.count(), 3);
    assert!(dir.path().join("ckpt_epoch_00002.ckpt").exists());
    assert!(dir.path().join("config.toml").exists());
    let ckpt = Checkpoint::load(&summary.final_checkpoint).unwrap();
    assert_eq!(ckpt.epoch, 3);
    assert_eq!(ckpt.env_id, EnvId::PointMass2D);
}

#[test]
fn zero_epochs_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(EnvId::CartPole, ObsMode::State, dir.path());
    cfg.run.epochs = 0;
    let summary = train(cfg).unwrap();
    let text = std::fs::read_to_string(&summary.metrics_path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(Checkpoint::load(&summary.final_checkpoint).unwrap().epoch, 0);
}

#[test]
fn metrics_identical_across_worker_counts() {
    let mut outputs = Vec::new();
    for workers in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(EnvId::PendulumSwingUp, ObsMode::State, dir.path());
        cfg.rollout.n = 3;
        cfg.rollout.m = 12;
        cfg.run.workers = workers;
        let summary = train(cfg).unwrap();
        outputs.push(std::fs::read(summary.metrics_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn pixel_mode_trains_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(EnvId::PointMass2D, ObsMode::Pixels, dir.path());
    cfg.run.epochs = 1;
    let summary = train(cfg).unwrap();
    let ckpt = Checkpoint::load(&summary.final_checkpoint).unwrap();
    assert_eq!(Checkpoint::from_text(&ckpt.to_text()).unwrap(), ckpt);
    let a = evaluate_checkpoint(&ckpt, EnvId::PointMass2D, 2, 5).unwrap();
    let b = evaluate_checkpoint(&ckpt, EnvId::PointMass2D, 2, 5).unwrap();
    assert_eq!(a.mean_return().to_bits(), b.mean_return().to_bits());
}

#[test]
fn checkpoint_matches_trainer_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(tiny(EnvId::PointMass2D, ObsMode::State, dir.path())).unwrap();
    trainer.run_epoch().unwrap();
    let ckpt = trainer.checkpoint();
    assert_eq!(ckpt.theta, trainer.theta);
    assert_eq!(ckpt.log_delta, trainer.exploration.log_delta);
    let back = Checkpoint::from_text(&ckpt.to_text()).unwrap();
    assert_eq!(back, ckpt);
}

#[test]
fn checkpoint_rejects_env_mismatch_and_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let trainer = Trainer::new(tiny(EnvId::PointMass2D, ObsMode::State, dir.path())).unwrap();
    let ckpt = trainer.checkpoint();
    assert!(evaluate_checkpoint(&ckpt, EnvId::CartPole, 1, 0).is_err());
    assert!(matches!(Checkpoint::from_text("not a checkpoint"), Err(Error::Checkpoint(_))));
    let truncated: String = ckpt.to_text().lines().take(4).collect::<Vec<_>>().join("\n");
    assert!(Checkpoint::from_text(&truncated).is_err());
}

#[test]
fn same_seed_same_metrics() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny(EnvId::CartPole, ObsMode::State, dir.path())).unwrap();
        (0..2).map(|_| t.run_epoch().unwrap().record()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
