//! Teacher training with clipped-surrogate PPO on vectorized environments.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvSettings, StepResult, VecEnv, LAYOUT_VERSION};
use crate::eval::{self, SuccessSummary};
use crate::nn::{
    all_finite, l2_norm, normal, save_checkpoint, ActorCritic, ActorCriticSpec, Adam, AdamConfig, Checkpoint,
    CheckpointError, NetworkSpec,
};
use crate::policy::{ObsKind, RunningNorm, TeacherPolicy};
use crate::randomization::{stream, StreamTag};
use crate::rewards::Stage;
use crate::robot::Action;
use crate::runlog::{JsonlWriter, Stamp};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    /// Control steps per environment per update.
    pub rollout_len: usize,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Total environment steps (summed over environments).
    pub total_steps: u64,
    pub num_envs: usize,
    /// Threads used for environment stepping.
    pub workers: usize,
    /// `student` trains the privilege-ablated variant.
    pub obs_kind: ObsKind,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Updates between evaluation snapshots.
    pub eval_every: usize,
    pub eval_envs: usize,
    /// Divide rewards by the running std of the discounted return.
    pub scale_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            rollout_len: 50,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.005,
            max_grad_norm: 1.0,
            total_steps: 10_000_000,
            num_envs: 256,
            workers: 1,
            obs_kind: ObsKind::Teacher,
            hidden: vec![256, 160, 128],
            init_log_std: -0.5,
            log_std_min: -5.0,
            log_std_max: 1.0,
            eval_every: 20,
            eval_envs: 128,
            scale_rewards: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("lr", self.lr),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (n, v) in pos {
            if !(v > 0.0) {
                return Err(format!("ppo.{n} must be positive"));
            }
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err("ppo.clip must lie in (0, 1)".into());
        }
        if self.gamma > 1.0 || self.lambda > 1.0 {
            return Err("ppo.gamma and ppo.lambda must not exceed 1".into());
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err("ppo loss coefficients must be non-negative".into());
        }
        if self.epochs == 0 || self.minibatches == 0 || self.rollout_len == 0 || self.num_envs == 0 {
            return Err("ppo epochs, minibatches, rollout_len and num_envs must be positive".into());
        }
        if self.minibatches > self.rollout_len * self.num_envs {
            return Err("ppo.minibatches exceeds the rollout size".into());
        }
        if self.log_std_min >= self.log_std_max {
            return Err("ppo.log_std_min must be below log_std_max".into());
        }
        Ok(())
    }

    pub fn spec(&self) -> ActorCriticSpec {
        ActorCriticSpec {
            obs_dim: self.obs_kind.dim(),
            act_dim: crate::robot::ACTION_DIM,
            hidden: self.hidden.clone(),
            init_log_std: self.init_log_std,
        }
    }
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("NaN abort at update {update}: {detail}")]
    Divergence { update: usize, detail: String },
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time-major storage for one rollout (`t_len` steps × `n` envs).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub t_len: usize,
    pub n: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Normalized observations fed to the network.
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub logp: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f32>,
    /// The episode ended at this step.
    pub dones: Vec<bool>,
    /// Value of the final observation of a time-limit cutoff (0 otherwise).
    pub bootstrap: Vec<f32>,
    pub stages: Vec<Stage>,
    /// Values of the observations following the last step.
    pub last_values: Vec<f32>,
}

impl RolloutBuffer {
    pub fn new(t_len: usize, n: usize, obs_dim: usize, act_dim: usize) -> Self {
        let m = t_len * n;
        Self {
            t_len,
            n,
            obs_dim,
            act_dim,
            obs: vec![0.0; m * obs_dim],
            actions: vec![0.0; m * act_dim],
            logp: vec![0.0; m],
            values: vec![0.0; m],
            rewards: vec![0.0; m],
            dones: vec![false; m],
            bootstrap: vec![0.0; m],
            stages: vec![Stage::Opening; m],
            last_values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.t_len * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generalized advantage estimation over a time-major buffer. A finished
/// episode stops the recursion; time-limit cutoffs bootstrap from
/// `bootstrap`, true terminals from zero.
#[allow(clippy::too_many_arguments)]
pub fn compute_gae(
    rewards: &[f32],
    values: &[f32],
    dones: &[bool],
    bootstrap: &[f32],
    last_values: &[f32],
    t_len: usize,
    n: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f32>, Vec<f32>) {
    let mut adv = vec![0.0f32; t_len * n];
    let mut ret = vec![0.0f32; t_len * n];
    for e in 0..n {
        let mut next_adv = 0.0f64;
        for t in (0..t_len).rev() {
            let k = t * n + e;
            let next_value = if dones[k] {
                bootstrap[k] as f64
            } else if t + 1 < t_len {
                values[k + n] as f64
            } else {
                last_values[e] as f64
            };
            let carry = if dones[k] { 0.0 } else { 1.0 };
            let delta = rewards[k] as f64 + gamma * next_value - values[k] as f64;
            next_adv = delta + gamma * lambda * carry * next_adv;
            adv[k] = next_adv as f32;
            ret[k] = (next_adv + values[k] as f64) as f32;
        }
    }
    (adv, ret)
}

pub fn normalize_advantages(adv: &mut [f32]) {
    let n = adv.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = adv.iter().map(|a| *a as f64).sum::<f64>() / n;
    let var = adv.iter().map(|a| (*a as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = ((*a as f64 - mean) / std) as f32;
    }
}

/// Diagonal Gaussian log-density of `a` under (mean, log-std).
pub fn gaussian_logp(a: &[f32], mean: &[f32], log_std: &[f32]) -> f64 {
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let ls = *ls as f64;
            let z = (*a as f64 - *m as f64) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f32]) -> f64 {
    log_std.iter().map(|ls| *ls as f64 + 0.5 * (1.0 + LN_2PI)).sum()
}

/// One minibatch view.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub logp_old: Vec<f32>,
    pub adv: Vec<f32>,
    pub returns: Vec<f32>,
}

impl Minibatch {
    pub fn gather(buf: &RolloutBuffer, adv: &[f32], ret: &[f32], idx: &[usize]) -> Self {
        let (od, ad) = (buf.obs_dim, buf.act_dim);
        let mut mb = Self {
            obs: Vec::with_capacity(idx.len() * od),
            actions: Vec::with_capacity(idx.len() * ad),
            logp_old: Vec::with_capacity(idx.len()),
            adv: Vec::with_capacity(idx.len()),
            returns: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            mb.obs.extend_from_slice(&buf.obs[i * od..(i + 1) * od]);
            mb.actions.extend_from_slice(&buf.actions[i * ad..(i + 1) * ad]);
            mb.logp_old.push(buf.logp[i]);
            mb.adv.push(adv[i]);
            mb.returns.push(ret[i]);
        }
        mb
    }

    pub fn len(&self) -> usize {
        self.adv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adv.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
}

/// PPO loss on a minibatch and its gradient w.r.t. every parameter.
///
/// L = −mean(min(ρA, clip(ρ)A)) + c_v·mean((V − R)²) − c_e·H
pub fn ppo_loss(net: &ActorCritic, params: &[f32], mb: &Minibatch, cfg: &PpoConfig) -> (LossStats, Vec<f32>) {
    let m = mb.len();
    let ad = net.spec.act_dim;
    let cache = net.forward(params, &mb.obs, m);
    let mean = cache.mean();
    let value = cache.value();
    let log_std = net.log_std(params);
    let mut dmean = vec![0.0f32; m * ad];
    let mut dvalue = vec![0.0f32; m];
    let mut dlogstd = vec![0.0f64; ad];
    let mut st = LossStats::default();
    let inv_m = 1.0 / m as f64;
    let mut clipped = 0usize;
    for i in 0..m {
        let a = &mb.actions[i * ad..(i + 1) * ad];
        let mu = &mean[i * ad..(i + 1) * ad];
        let logp = gaussian_logp(a, mu, log_std);
        let log_ratio = logp - mb.logp_old[i] as f64;
        let ratio = log_ratio.exp();
        let adv = mb.adv[i] as f64;
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        st.policy_loss -= unclipped.min(clipped_obj) * inv_m;
        st.approx_kl -= log_ratio * inv_m;
        let active = !((adv >= 0.0 && ratio > 1.0 + cfg.clip) || (adv < 0.0 && ratio < 1.0 - cfg.clip));
        if !active {
            clipped += 1;
        } else {
            // d(−ρA)/dlogp = −ρA
            let dlogp = -ratio * adv * inv_m;
            for j in 0..ad {
                let ls = log_std[j] as f64;
                let inv_var = (-2.0 * ls).exp();
                let diff = a[j] as f64 - mu[j] as f64;
                dmean[i * ad + j] = (dlogp * diff * inv_var) as f32;
                dlogstd[j] += dlogp * (diff * diff * inv_var - 1.0);
            }
        }
        let verr = value[i] as f64 - mb.returns[i] as f64;
        st.value_loss += verr * verr * inv_m;
        dvalue[i] = (2.0 * cfg.value_coef * verr * inv_m) as f32;
    }
    st.entropy = gaussian_entropy(log_std);
    for d in dlogstd.iter_mut() {
        *d -= cfg.entropy_coef;
    }
    st.total = st.policy_loss + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
    st.clip_frac = clipped as f64 * inv_m;
    let dlogstd: Vec<f32> = dlogstd.iter().map(|v| *v as f32).collect();
    let mut g = vec![0.0f32; params.len()];
    net.backward(params, &cache, &dmean, &dvalue, &dlogstd, &mut g);
    st.grad_norm = l2_norm(&g);
    (st, g)
}

/// Scale `g` so its global L2 norm does not exceed `max_norm`.
pub fn clip_grad_norm(g: &mut [f32], max_norm: f64) -> f64 {
    let norm = l2_norm(g);
    if norm > max_norm {
        let s = (max_norm / (norm + 1e-12)) as f32;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}

/// Per-update training record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub open_rate: f64,
    pub pass_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
    pub mean_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub open_rate: f64,
    pub pass_rate: f64,
    pub open_ci: [f64; 2],
    pub pass_ci: [f64; 2],
    pub mean_return: f64,
    pub best: bool,
}

/// PPO state: environments, network, optimizer and normalizer.
pub struct PpoTrainer {
    pub cfg: PpoConfig,
    pub settings: Arc<EnvSettings>,
    pub seed: u64,
    pub venv: VecEnv,
    pub net: ActorCritic,
    pub params: Vec<f32>,
    pub adam: Adam,
    pub norm: RunningNorm,
    /// Statistics of the per-env discounted return, for reward scaling.
    pub ret_norm: RunningNorm,
    pub update: usize,
    pub env_steps: u64,
    pub deterministic: bool,
    policy_rngs: Vec<ChaCha8Rng>,
    shuffle_rng: ChaCha8Rng,
    raw_obs: Vec<f32>,
    disc_returns: Vec<f64>,
    finished: Vec<crate::env::EpisodeMetrics>,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, settings: Arc<EnvSettings>, seed: u64) -> Result<Self, PpoError> {
        cfg.validate().map_err(PpoError::Config)?;
        let net = ActorCritic::new(cfg.spec());
        let mut init_rng = stream(seed, u64::MAX, 0, StreamTag::Policy);
        let params: Vec<f32> = net.init(&mut init_rng);
        let adam = Adam::new(
            params.len(),
            AdamConfig {
                lr: cfg.lr,
                ..Default::default()
            },
        );
        let n = cfg.num_envs;
        let mut venv = VecEnv::new(settings.clone(), seed, n);
        let od = cfg.obs_kind.dim();
        let mut raw_obs = vec![0.0; n * od];
        cfg.obs_kind.gather(&mut venv, &mut raw_obs);
        let policy_rngs = (0..n as u64).map(|i| stream(seed, i, 0, StreamTag::Policy)).collect();
        Ok(Self {
            norm: RunningNorm::new(od),
            shuffle_rng: stream(seed, u64::MAX - 1, 0, StreamTag::Policy),
            policy_rngs,
            raw_obs,
            disc_returns: vec![0.0; n],
            ret_norm: RunningNorm::new(1),
            finished: Vec::new(),
            cfg,
            settings,
            seed,
            venv,
            net,
            params,
            adam,
            update: 0,
            env_steps: 0,
            deterministic: false,
        })
    }

    fn step_envs(&mut self, actions: &[Action]) -> Vec<StepResult> {
        if self.cfg.workers > 1 {
            self.venv.step_partitioned(actions, self.cfg.workers)
        } else {
            self.venv.step(actions)
        }
    }

    /// Fill a rollout buffer by acting in every environment. Environments
    /// whose episode ends are reset in place.
    pub fn collect_rollout(&mut self) -> RolloutBuffer {
        let (n, t_len) = (self.cfg.num_envs, self.cfg.rollout_len);
        let od = self.cfg.obs_kind.dim();
        let ad = self.net.spec.act_dim;
        let mut buf = RolloutBuffer::new(t_len, n, od, ad);
        let mut z = vec![0.0f32; n * od];
        for t in 0..t_len {
            self.norm.update(&self.raw_obs);
            self.norm.normalize(&self.raw_obs, &mut z);
            let cache = self.net.forward(&self.params, &z, n);
            let log_std = self.net.log_std(&self.params).to_vec();
            let mut actions = Vec::with_capacity(n);
            for e in 0..n {
                let k = t * n + e;
                let mu = &cache.mean()[e * ad..(e + 1) * ad];
                let a = &mut buf.actions[k * ad..(k + 1) * ad];
                for j in 0..ad {
                    let eps: f32 = if self.deterministic {
                        0.0
                    } else {
                        normal(&mut self.policy_rngs[e], 1.0)
                    };
                    a[j] = mu[j] + log_std[j].exp() * eps;
                }
                buf.logp[k] = gaussian_logp(a, mu, &log_std) as f32;
                buf.values[k] = cache.value()[e];
                actions.push(Action::from_slice(a));
            }
            buf.obs[t * n * od..(t + 1) * n * od].copy_from_slice(&z);
            let results = self.step_envs(&actions);
            self.env_steps += n as u64;
            // Observations after the step, before any reset, for cutoff bootstrapping.
            self.cfg.obs_kind.gather(&mut self.venv, &mut self.raw_obs);
            let cutoff: Vec<usize> = (0..n)
                .filter(|&e| results[e].done && results[e].info.timeout && !results[e].info.nan_abort)
                .collect();
            if !cutoff.is_empty() {
                let mut zc = vec![0.0f32; cutoff.len() * od];
                let mut rc = Vec::with_capacity(cutoff.len() * od);
                for &e in &cutoff {
                    rc.extend_from_slice(&self.raw_obs[e * od..(e + 1) * od]);
                }
                self.norm.normalize(&rc, &mut zc);
                let vc = self.net.critic.forward(&self.params, &zc, cutoff.len());
                for (i, &e) in cutoff.iter().enumerate() {
                    buf.bootstrap[t * n + e] = vc.output()[i];
                }
            }
            let mut disc = Vec::with_capacity(n);
            for (e, r) in results.iter().enumerate() {
                let k = t * n + e;
                buf.rewards[k] = r.reward as f32;
                buf.dones[k] = r.done;
                buf.stages[k] = r.info.stage;
                self.disc_returns[e] = self.disc_returns[e] * self.cfg.gamma + r.reward;
                disc.push(self.disc_returns[e] as f32);
                if r.done {
                    self.finished.push(self.venv.envs[e].metrics());
                    self.disc_returns[e] = 0.0;
                }
            }
            self.ret_norm.update(&disc);
            if results.iter().any(|r| r.done) {
                self.venv.reset_done(&results);
                let mut fresh = vec![0.0f32; od];
                for (e, r) in results.iter().enumerate() {
                    if r.done {
                        match self.cfg.obs_kind {
                            ObsKind::Teacher => self.venv.envs[e].teacher_obs(&mut fresh),
                            ObsKind::Student => self.venv.envs[e].student_obs(&mut fresh),
                        }
                        self.raw_obs[e * od..(e + 1) * od].copy_from_slice(&fresh);
                    }
                }
            }
        }
        self.norm.normalize(&self.raw_obs, &mut z);
        let last = self.net.critic.forward(&self.params, &z, n);
        buf.last_values.copy_from_slice(last.output());
        buf
    }

    /// Minibatched PPO epochs over a full buffer.
    pub fn ppo_update(&mut self, buf: &RolloutBuffer) -> Result<LossStats, PpoError> {
        let rewards: Vec<f32> = if self.cfg.scale_rewards {
            let s = (1.0 / (self.ret_norm.var[0] + 1e-8).sqrt()) as f32;
            buf.rewards.iter().map(|r| r * s).collect()
        } else {
            buf.rewards.clone()
        };
        let (mut adv, ret) = compute_gae(
            &rewards,
            &buf.values,
            &buf.dones,
            &buf.bootstrap,
            &buf.last_values,
            buf.t_len,
            buf.n,
            self.cfg.gamma,
            self.cfg.lambda,
        );
        normalize_advantages(&mut adv);
        let total = buf.len();
        let mb_size = total / self.cfg.minibatches;
        let mut idx: Vec<usize> = (0..total).collect();
        let mut acc = LossStats::default();
        let mut count = 0.0;
        for _ in 0..self.cfg.epochs {
            idx.shuffle(&mut self.shuffle_rng);
            for chunk in idx.chunks_exact(mb_size) {
                let mb = Minibatch::gather(buf, &adv, &ret, chunk);
                let (st, mut g) = ppo_loss(&self.net, &self.params, &mb, &self.cfg);
                if !st.total.is_finite() || !all_finite(&g) {
                    return Err(PpoError::Divergence {
                        update: self.update,
                        detail: format!(
                            "policy_loss={} value_loss={} entropy={} grad_norm={}",
                            st.policy_loss, st.value_loss, st.entropy, st.grad_norm
                        ),
                    });
                }
                clip_grad_norm(&mut g, self.cfg.max_grad_norm);
                self.adam.step(&mut self.params, &g);
                let off = self.net.log_std_offset;
                let (lo, hi) = (self.cfg.log_std_min as f32, self.cfg.log_std_max as f32);
                for v in self.params[off..].iter_mut() {
                    *v = v.clamp(lo, hi);
                }
                acc.policy_loss += st.policy_loss;
                acc.value_loss += st.value_loss;
                acc.entropy += st.entropy;
                acc.total += st.total;
                acc.approx_kl += st.approx_kl;
                acc.clip_frac += st.clip_frac;
                acc.grad_norm += st.grad_norm;
                count += 1.0;
            }
        }
        for v in [
            &mut acc.policy_loss,
            &mut acc.value_loss,
            &mut acc.entropy,
            &mut acc.total,
            &mut acc.approx_kl,
            &mut acc.clip_frac,
            &mut acc.grad_norm,
        ] {
            *v /= count;
        }
        self.update += 1;
        Ok(acc)
    }

    /// Collect, update, and summarize the training episodes that finished.
    pub fn train_iteration(&mut self) -> Result<UpdateRecord, PpoError> {
        let buf = self.collect_rollout();
        let st = self.ppo_update(&buf)?;
        let fin = std::mem::take(&mut self.finished);
        let k = fin.len();
        let rate = |f: &dyn Fn(&crate::env::EpisodeMetrics) -> bool| {
            if k == 0 {
                0.0
            } else {
                fin.iter().filter(|m| f(m)).count() as f64 / k as f64
            }
        };
        let log_std = self.net.log_std(&self.params);
        Ok(UpdateRecord {
            update: self.update,
            env_steps: self.env_steps,
            episodes: k,
            mean_return: if k == 0 {
                0.0
            } else {
                fin.iter().map(|m| m.ret).sum::<f64>() / k as f64
            },
            open_rate: rate(&|m| m.opened_enough),
            pass_rate: rate(&|m| m.passed_through),
            policy_loss: st.policy_loss,
            value_loss: st.value_loss,
            entropy: st.entropy,
            approx_kl: st.approx_kl,
            clip_frac: st.clip_frac,
            grad_norm: st.grad_norm,
            mean_std: log_std.iter().map(|v| (*v as f64).exp()).sum::<f64>() / log_std.len() as f64,
        })
    }

    pub fn policy(&self) -> TeacherPolicy {
        TeacherPolicy {
            net: self.net.clone(),
            params: self.params.clone(),
            norm: self.norm.clone(),
            obs_kind: self.cfg.obs_kind,
        }
    }

    /// Deterministic evaluation on a separate set of environment streams.
    pub fn evaluate(&self, num_envs: usize) -> SuccessSummary {
        let mut pol = self.policy();
        let metrics = eval::run_episodes(
            &mut pol,
            self.settings.clone(),
            eval::eval_seed(self.seed),
            num_envs,
            1,
            self.cfg.workers,
        );
        eval::summarize(&metrics)
    }

    pub fn checkpoint(&self, stamp: &Stamp, extra: serde_json::Value) -> Checkpoint {
        let (mean, var) = self.norm.to_blocks();
        let mut meta = serde_json::json!({
            "obs_kind": self.cfg.obs_kind,
            "obs_count": self.norm.count,
            "update": self.update,
            "env_steps": self.env_steps,
            "workers": self.cfg.workers,
            "config_hash": stamp.config_hash,
        });
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        Checkpoint::new(
            LAYOUT_VERSION,
            NetworkSpec::ActorCritic(self.net.spec.clone()),
            self.seed,
            self.env_steps,
            meta,
        )
        .with_block("params", self.params.clone())
        .with_block("obs_mean", mean)
        .with_block("obs_var", var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub updates: usize,
    pub env_steps: u64,
    pub best_update: usize,
    pub best_open_rate: f64,
    pub best_pass_rate: f64,
    pub final_open_rate: f64,
    pub final_pass_rate: f64,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Run PPO to the step budget. Writes `curves.jsonl`, `evals.jsonl`,
/// `timing.jsonl`, `latest.ckpt`, `best.ckpt` and `final.ckpt` into `out`.
pub fn train_teacher(
    cfg: &PpoConfig,
    settings: Arc<EnvSettings>,
    seed: u64,
    out: &Path,
    stamp: &Stamp,
) -> Result<TeacherSummary, PpoError> {
    std::fs::create_dir_all(out)?;
    let mut tr = PpoTrainer::new(cfg.clone(), settings, seed)?;
    let mut curves = JsonlWriter::create(&out.join("curves.jsonl"), stamp)?;
    let mut evals = JsonlWriter::create(&out.join("evals.jsonl"), stamp)?;
    let mut timing = JsonlWriter::create(&out.join("timing.jsonl"), stamp)?;
    let per_update = (cfg.rollout_len * cfg.num_envs) as u64;
    let updates = cfg.total_steps.div_ceil(per_update).max(1) as usize;
    let start = Instant::now();
    // Success rates first, mean evaluation return breaks ties.
    let mut best_score = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best = (0usize, 0.0, 0.0);
    let mut last_eval = SuccessSummary::default();
    let best_path = out.join("best.ckpt");
    for u in 0..updates {
        let rec = match tr.train_iteration() {
            Ok(r) => r,
            Err(e) => {
                save_checkpoint(&out.join("diverged.ckpt"), &tr.checkpoint(stamp, serde_json::json!({})))?;
                return Err(e);
            }
        };
        curves.write(&rec)?;
        timing.write(&serde_json::json!({
            "update": rec.update,
            "env_steps": rec.env_steps,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }))?;
        let last = u + 1 == updates;
        if (u + 1) % cfg.eval_every.max(1) == 0 || last {
            let s = tr.evaluate(cfg.eval_envs);
            let score = (s.pass.rate + s.open.rate, s.mean_return);
            let is_best = score > best_score;
            let er = EvalRecord {
                update: tr.update,
                env_steps: tr.env_steps,
                episodes: s.open.trials,
                open_rate: s.open.rate,
                pass_rate: s.pass.rate,
                open_ci: [s.open.lo, s.open.hi],
                pass_ci: [s.pass.lo, s.pass.hi],
                mean_return: s.mean_return,
                best: is_best,
            };
            evals.write(&er)?;
            let extra = serde_json::json!({"eval_open_rate": s.open.rate, "eval_pass_rate": s.pass.rate});
            let ck = tr.checkpoint(stamp, extra);
            save_checkpoint(&out.join("latest.ckpt"), &ck)?;
            if is_best {
                best_score = score;
                best = (tr.update, s.open.rate, s.pass.rate);
                save_checkpoint(&best_path, &ck)?;
            }
            last_eval = s;
        }
    }
    let final_path = out.join("final.ckpt");
    save_checkpoint(
        &final_path,
        &tr.checkpoint(
            stamp,
            serde_json::json!({"eval_open_rate": last_eval.open.rate, "eval_pass_rate": last_eval.pass.rate}),
        ),
    )?;
    Ok(TeacherSummary {
        updates: tr.update,
        env_steps: tr.env_steps,
        best_update: best.0,
        best_open_rate: best.1,
        best_pass_rate: best.2,
        final_open_rate: last_eval.open.rate,
        final_pass_rate: last_eval.pass.rate,
        best_checkpoint: best_path,
        final_checkpoint: final_path,
    })
}
