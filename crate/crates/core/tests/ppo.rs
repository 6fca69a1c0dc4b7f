use std::sync::Arc;

use doorlab::env::{Env, EnvSettings};
use doorlab::nn::{ActorCritic, Adam, AdamConfig};
use doorlab::ppo::*;
use doorlab::robot::Action;
use doorlab::runlog::Stamp;
use proptest::prelude::*;

fn small_cfg() -> PpoConfig {
    PpoConfig {
        num_envs: 4,
        rollout_len: 16,
        hidden: vec![32, 32],
        minibatches: 2,
        epochs: 2,
        eval_every: 2,
        eval_envs: 4,
        total_steps: 4 * 16 * 3,
        ..Default::default()
    }
}

fn settings(horizon: usize) -> Arc<EnvSettings> {
    let mut s = EnvSettings::default();
    s.env.horizon = horizon;
    Arc::new(s)
}

#[test]
fn deterministic_policy_gives_reproducible_buffer() {
    let run = || {
        let mut t = PpoTrainer::new(small_cfg(), settings(500), 3).unwrap();
        t.deterministic = true;
        t.collect_rollout()
    };
    assert_eq!(run(), run());
}

#[test]
fn buffer_rewards_match_env_trace() {
    let mut t = PpoTrainer::new(small_cfg(), settings(500), 5).unwrap();
    let buf = t.collect_rollout();
    let ad = buf.act_dim;
    for e in 0..buf.n {
        let mut env = Env::new(settings(500), 5, e as u64);
        for step in 0..buf.t_len {
            let k = step * buf.n + e;
            let r = env.step(&Action::from_slice(&buf.actions[k * ad..(k + 1) * ad]));
            assert_eq!(buf.rewards[k], r.reward as f32, "env {e} step {step}");
        }
    }
}

#[test]
fn done_flags_at_horizon() {
    let mut t = PpoTrainer::new(small_cfg(), settings(7), 1).unwrap();
    let buf = t.collect_rollout();
    for step in 0..buf.t_len {
        for e in 0..buf.n {
            assert_eq!(buf.dones[step * buf.n + e], (step + 1) % 7 == 0, "step {step}");
        }
    }
    // Every cutoff carries a bootstrap value.
    assert!(buf
        .dones
        .iter()
        .zip(&buf.bootstrap)
        .filter(|(d, _)| **d)
        .all(|(_, b)| *b != 0.0));
}

fn frozen_batch(seed: u64) -> (ActorCritic, Vec<f32>, Minibatch, PpoConfig) {
    let cfg = small_cfg();
    let mut t = PpoTrainer::new(cfg.clone(), settings(500), seed).unwrap();
    let buf = t.collect_rollout();
    let (mut adv, ret) = compute_gae(
        &buf.rewards,
        &buf.values,
        &buf.dones,
        &buf.bootstrap,
        &buf.last_values,
        buf.t_len,
        buf.n,
        cfg.gamma,
        cfg.lambda,
    );
    normalize_advantages(&mut adv);
    let idx: Vec<usize> = (0..buf.len()).collect();
    let mb = Minibatch::gather(&buf, &adv, &ret, &idx);
    (t.net.clone(), t.params.clone(), mb, cfg)
}

#[test]
fn zero_advantages_leave_policy_parameters_unchanged() {
    let (net, mut params, mut mb, mut cfg) = frozen_batch(2);
    mb.adv.iter_mut().for_each(|a| *a = 0.0);
    cfg.entropy_coef = 0.0;
    let before = params.clone();
    let mut adam = Adam::new(params.len(), AdamConfig::default());
    for _ in 0..3 {
        let (st, g) = ppo_loss(&net, &params, &mb, &cfg);
        assert_eq!(st.policy_loss, 0.0);
        adam.step(&mut params, &g);
    }
    let actor = net.actor.end();
    assert_eq!(params[..actor], before[..actor]);
    assert_eq!(params[net.log_std_offset..], before[net.log_std_offset..]);
    assert_ne!(params[actor..net.log_std_offset], before[actor..net.log_std_offset]);
}

#[test]
fn unit_ratio_gives_unclipped_surrogate() {
    let (net, params, mb, cfg) = frozen_batch(4);
    let (st, _) = ppo_loss(&net, &params, &mb, &cfg);
    let expect = -mb.adv.iter().map(|a| *a as f64).sum::<f64>() / mb.len() as f64;
    assert!((st.policy_loss - expect).abs() < 1e-5, "{} vs {expect}", st.policy_loss);
    assert!(st.approx_kl.abs() < 1e-5);
    assert_eq!(st.clip_frac, 0.0);
}

#[test]
fn loss_decreases_on_frozen_buffer() {
    let (net, mut params, mb, cfg) = frozen_batch(6);
    let mut adam = Adam::new(params.len(), AdamConfig { lr: 1e-4, ..Default::default() });
    let first = ppo_loss(&net, &params, &mb, &cfg).0.total;
    for _ in 0..20 {
        let (_, mut g) = ppo_loss(&net, &params, &mb, &cfg);
        clip_grad_norm(&mut g, cfg.max_grad_norm);
        adam.step(&mut params, &g);
    }
    let last = ppo_loss(&net, &params, &mb, &cfg).0.total;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn clip_grad_norm_caps_norm() {
    let mut g = vec![3.0f32, 4.0];
    let n = clip_grad_norm(&mut g, 1.0);
    assert!((n - 5.0).abs() < 1e-9);
    assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-6);
}

#[test]
fn same_seed_gives_identical_curves() {
    let dir = tempfile::tempdir().unwrap();
    let stamp = Stamp::new("test", 9);
    let cfg = small_cfg();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sa = train_teacher(&cfg, settings(20), 9, &a, &stamp).unwrap();
    let sb = train_teacher(&cfg, settings(20), 9, &b, &stamp).unwrap();
    assert_eq!(sa.env_steps, sb.env_steps);
    for f in ["curves.jsonl", "evals.jsonl", "final.ckpt", "best.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let first = std::fs::read_to_string(a.join("curves.jsonl")).unwrap();
    assert!(first.contains("\"config_hash\":\"test\""));
}

proptest! {
    #[test]
    fn gae_lambda_one_is_monte_carlo(
        rewards in proptest::collection::vec(-5.0f32..5.0, 1..30),
        values_seed in proptest::collection::vec(-3.0f32..3.0, 30),
    ) {
        let t_len = rewards.len();
        let values = &values_seed[..t_len];
        let mut dones = vec![false; t_len];
        dones[t_len - 1] = true;
        let (adv, _) = compute_gae(&rewards, values, &dones, &vec![0.0; t_len], &[0.0], t_len, 1, 1.0, 1.0);
        for t in 0..t_len {
            let g: f64 = rewards[t..].iter().map(|r| *r as f64).sum();
            prop_assert!((adv[t] as f64 - (g - values[t] as f64)).abs() < 1e-4);
        }
    }
}
