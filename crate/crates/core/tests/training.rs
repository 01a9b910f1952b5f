use dsat_core::checkpoint;
use dsat_core::config::{EncoderMode, RunConfig};
use dsat_core::network::Ablation;
use dsat_core::train::run::{periodic_checkpoint, METRICS, MODEL_CHECKPOINT};
use dsat_core::train::{learning_rate, run_joint, training_pool, Adam, Parts, TrainState};
use dsat_core::{Error, ParamSet, Tensor};
use proptest::prelude::*;

fn tiny(model: usize) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.data.synthetic_images = 4;
    cfg.data.synthetic_size = 48;
    cfg.data.lr_patch = 8;
    cfg.train.batch_size = 2;
    cfg.train.total_epochs = 6;
    cfg.train.halving_period_epochs = 2;
    cfg.train.checkpoint_every = 0;
    cfg.model.ablation = Ablation::model(model).unwrap();
    cfg.finalize().unwrap();
    cfg
}

fn snapshot(state: &TrainState<f32>) -> Vec<(String, Tensor<f32>)> {
    state.records(Parts::All).unwrap()
}

#[test]
fn adam_converges_on_a_convex_quadratic() {
    let scale: Vec<f64> = (0..10).map(|i| 0.5 + i as f64).collect();
    let target: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
    let mut params = ParamSet::new();
    params.add("x", Tensor::<f64>::zeros(&[10]));
    let mut opt = Adam::new(&params, 0.9, 0.999, 1e-8);
    let mut converged_at = None;
    for step in 0..5000 {
        let x = params.values()[0].data().to_vec();
        let grad: Vec<f64> = (0..10).map(|i| 2.0 * scale[i] * (x[i] - target[i])).collect();
        opt.step(&mut params, &[Tensor::new(&[10], grad).unwrap()], 0.01).unwrap();
        let err = params.values()[0]
            .data()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if err < 1e-6 {
            converged_at = Some(step);
            break;
        }
    }
    assert!(converged_at.is_some());
}

#[test]
fn adam_rejects_mismatched_gradients() {
    let mut params = ParamSet::new();
    params.add("x", Tensor::<f64>::zeros(&[3]));
    let mut opt = Adam::new(&params, 0.9, 0.999, 1e-8);
    assert!(opt.step(&mut params, &[], 0.1).is_err());
    assert!(opt.step(&mut params, &[Tensor::zeros(&[2])], 0.1).is_err());
}

proptest! {
    #[test]
    fn schedule_depends_only_on_epoch(epoch in 0u64..5000, period in 50u64..600) {
        let lr = learning_rate(2e-4, epoch, period);
        prop_assert_eq!(lr, 2e-4 / 2f64.powi((epoch / period) as i32));
        prop_assert_eq!(lr, learning_rate(2e-4, epoch, period));
        prop_assert!(learning_rate(2e-4, epoch + 1, period) <= lr);
    }
}

#[test]
fn epoch_boundary_halves_the_rate() {
    assert_eq!(learning_rate(2e-4, 249, 250), 2e-4);
    assert_eq!(learning_rate(2e-4, 250, 250), 1e-4);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut cfg = tiny(5);
    cfg.train.lr0 = 0.0;
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let net = state.models.net_params.clone();
    let query = state.models.query.clone();
    state.joint_step(&cfg, &pool).unwrap();
    assert_eq!(state.models.net_params, net);
    assert_eq!(state.models.query, query);
}

#[test]
fn logged_rates_follow_the_schedule() {
    let cfg = tiny(1);
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let lrs: Vec<f64> = (0..6).map(|_| state.joint_step(&cfg, &pool).unwrap().lr).collect();
    let lr0 = cfg.train.lr0;
    assert_eq!(lrs, vec![lr0, lr0, lr0 / 2.0, lr0 / 2.0, lr0 / 4.0, lr0 / 4.0]);
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny(5);
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let run = || {
        let mut s = TrainState::<f32>::init(&cfg).unwrap();
        let losses: Vec<f64> = (0..4).map(|_| s.joint_step(&cfg, &pool).unwrap().l_total).collect();
        (losses, snapshot(&s))
    };
    assert_eq!(run(), run());
}

#[test]
fn different_seeds_give_different_runs() {
    let a = tiny(1);
    let mut b = a.clone();
    b.seed = 1;
    let first = |cfg: &RunConfig| {
        let pool = training_pool(&cfg.data, cfg.seed).unwrap();
        TrainState::<f32>::init(cfg).unwrap().joint_step(cfg, &pool).unwrap().l_sr
    };
    assert_ne!(first(&a), first(&b));
}

#[test]
fn model1_total_loss_is_the_reconstruction_loss() {
    let cfg = tiny(1);
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let query = state.models.query.clone();
    let queue = state.models.queue.clone();
    for _ in 0..2 {
        let s = state.joint_step(&cfg, &pool).unwrap();
        assert_eq!(s.l_degrad, None);
        assert_eq!(s.l_total, s.l_sr);
    }
    assert_eq!(state.models.query, query);
    assert_eq!(state.models.queue, queue);
}

#[test]
fn model5_total_loss_adds_both_terms() {
    let cfg = tiny(5);
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let s = state.joint_step(&cfg, &pool).unwrap();
    let d = s.l_degrad.unwrap();
    assert!(d > 0.0);
    assert!((s.l_total - (s.l_sr + d)).abs() < 1e-5 * s.l_total);
}

#[test]
fn key_encoder_moves_only_by_momentum() {
    let cfg = tiny(5);
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    state.joint_step(&cfg, &pool).unwrap();
    let key_before = state.models.key.clone();
    state.joint_step(&cfg, &pool).unwrap();
    let m = cfg.contrastive.momentum as f32;
    for ((k0, k1), q) in key_before
        .values()
        .iter()
        .zip(state.models.key.values())
        .zip(state.models.query.values())
    {
        for i in 0..k0.numel() {
            let want = m * k0.data()[i] + (1.0 - m) * q.data()[i];
            assert!((k1.data()[i] - want).abs() <= 1e-6 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn frozen_mode_keeps_the_query_encoder() {
    let mut cfg = tiny(5);
    cfg.train.encoder_mode = EncoderMode::Frozen;
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let query = state.models.query.clone();
    let net = state.models.net_params.clone();
    state.joint_step(&cfg, &pool).unwrap();
    assert_eq!(state.models.query, query);
    assert_ne!(state.models.net_params, net);
}

#[test]
fn runaway_learning_rate_is_a_numeric_error() {
    let mut cfg = tiny(1);
    cfg.train.lr0 = 1e37;
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let err = (0..5)
        .find_map(|_| state.joint_step(&cfg, &pool).err())
        .expect("training diverged without an error");
    assert!(matches!(err, Error::Numeric(_)), "{err}");
}

#[test]
fn restored_state_continues_bit_exactly() {
    for model in [1, 5] {
        let cfg = tiny(model);
        let pool = training_pool(&cfg.data, cfg.seed).unwrap();
        let mut straight = TrainState::<f32>::init(&cfg).unwrap();
        for _ in 0..4 {
            straight.joint_step(&cfg, &pool).unwrap();
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        let mut first = TrainState::<f32>::init(&cfg).unwrap();
        for _ in 0..2 {
            first.joint_step(&cfg, &pool).unwrap();
        }
        let records = first.records(Parts::All).unwrap();
        checkpoint::save(&path, records.iter().map(|(n, t)| (n.as_str(), t))).unwrap();

        let mut cfg_other_seed = cfg.clone();
        cfg_other_seed.seed = 99;
        let mut resumed = TrainState::<f32>::init(&cfg_other_seed).unwrap();
        resumed.restore(&checkpoint::load(&path).unwrap(), Parts::All).unwrap();
        assert_eq!(resumed.step, 2);
        for _ in 0..2 {
            resumed.joint_step(&cfg, &pool).unwrap();
        }
        assert_eq!(snapshot(&resumed), snapshot(&straight), "model{model}");
    }
}

#[test]
fn restore_rejects_foreign_checkpoints() {
    let cfg = tiny(5);
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let mut records = state.records(Parts::All).unwrap();
    records.retain(|(n, _)| !n.starts_with("opt.net.m."));
    assert!(state.restore(&records, Parts::All).is_err());
}

#[test]
fn interrupted_run_resumes_to_identical_artifacts() {
    let mut cfg = tiny(5);
    cfg.train.checkpoint_every = 3;
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();

    let a = tempfile::tempdir().unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let stats = run_joint(&mut state, &cfg, &pool, a.path()).unwrap();
    assert_eq!(stats.len(), 6);
    assert!(periodic_checkpoint(a.path(), 3).exists());

    let b = tempfile::tempdir().unwrap();
    std::fs::copy(a.path().join(METRICS), b.path().join(METRICS)).unwrap();
    let mut resumed = TrainState::<f32>::init(&cfg).unwrap();
    resumed
        .restore(&checkpoint::load(&periodic_checkpoint(a.path(), 3)).unwrap(), Parts::All)
        .unwrap();
    let rest = run_joint(&mut resumed, &cfg, &pool, b.path()).unwrap();
    assert_eq!(rest.len(), 3);

    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a.path().join(METRICS)), read(&b.path().join(METRICS)));
    assert_eq!(read(&a.path().join(MODEL_CHECKPOINT)), read(&b.path().join(MODEL_CHECKPOINT)));
    let log = String::from_utf8(read(&a.path().join(METRICS))).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,epoch,lr,l_sr,l_degrad,l_total");
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn model1_log_leaves_the_contrastive_column_empty() {
    let cfg = tiny(1);
    let pool = training_pool(&cfg.data, cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    run_joint(&mut state, &cfg, &pool, dir.path()).unwrap();
    let log = std::fs::read_to_string(dir.path().join(METRICS)).unwrap();
    for line in log.lines().skip(1) {
        assert_eq!(line.split(',').nth(4), Some(""));
    }
}
