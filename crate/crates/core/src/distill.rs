//! Student distillation: the student drives the environments while the
//! frozen teacher labels every visited state; Smooth L1 imitation and
//! estimation losses, cross entropy on the door type, truncated BPTT.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvSettings, VecEnv, ESTIMATION_DIM, LAYOUT_VERSION, STUDENT_OBS_DIM, TEACHER_OBS_DIM};
use crate::eval::{self, SuccessSummary};
use crate::nn::{
    all_finite, l2_norm, save_checkpoint, Adam, AdamConfig, Checkpoint, CheckpointError, Core, NetworkSpec, Student,
    StudentSpec, StudentStepCache,
};
use crate::policy::{ObsKind, PolicyError, RunningNorm, StudentPolicy, TeacherPolicy};
use crate::ppo::clip_grad_norm;
use crate::randomization::{stream, RandomizationRanges, StreamTag};
use crate::robot::{Action, ACTION_DIM};
use crate::runlog::{JsonlWriter, Stamp};

pub const DOOR_TYPES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub imitation_weight: f64,
    pub estimation_weight: f64,
    pub door_type_weight: f64,
    /// Truncated BPTT window in control steps; also the update interval.
    pub window: usize,
    pub num_envs: usize,
    pub lr: f64,
    /// Smooth L1 transition point.
    pub beta: f64,
    pub max_grad_norm: f64,
    pub total_steps: u64,
    /// Drop the estimation and door-type losses (decoder is kept).
    pub no_estimation_loss: bool,
    /// Replace the recurrent core by a feed-forward layer.
    pub mlp_student: bool,
    pub hidden: usize,
    pub head_hidden: Vec<usize>,
    pub workers: usize,
    pub eval_every: usize,
    pub eval_envs: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            imitation_weight: 1.0,
            estimation_weight: 0.5,
            door_type_weight: 0.5,
            window: 50,
            num_envs: 64,
            lr: 1e-3,
            beta: 1.0,
            max_grad_norm: 1.0,
            total_steps: 4_000_000,
            no_estimation_loss: false,
            mlp_student: false,
            hidden: 256,
            head_hidden: vec![128],
            workers: 1,
            eval_every: 25,
            eval_envs: 128,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.imitation_weight, self.estimation_weight, self.door_type_weight]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err("distill loss weights must be non-negative".into());
        }
        if self.window == 0 || self.num_envs == 0 || self.hidden == 0 {
            return Err("distill.window, num_envs and hidden must be positive".into());
        }
        if !(self.lr > 0.0 && self.beta > 0.0 && self.max_grad_norm > 0.0) {
            return Err("distill.lr, beta and max_grad_norm must be positive".into());
        }
        Ok(())
    }

    pub fn spec(&self) -> StudentSpec {
        StudentSpec {
            obs_dim: STUDENT_OBS_DIM,
            act_dim: ACTION_DIM,
            hidden: self.hidden,
            head_hidden: self.head_hidden.clone(),
            decoder_dim: ESTIMATION_DIM + DOOR_TYPES,
            core: if self.mlp_student { Core::Mlp } else { Core::Gru },
        }
    }
}

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("NaN abort at update {update}: {detail}")]
    Divergence { update: usize, detail: String },
    #[error("invalid distill config: {0}")]
    Config(String),
    #[error("teacher must consume teacher observations")]
    TeacherObs,
    #[error("teacher checkpoint changed during distillation")]
    TeacherModified,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Smooth L1 with transition point `beta`: ½x²/β for |x| < β, |x| − ½β
/// otherwise.
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Cross entropy of `logits` against class `target`, and its gradient
/// (softmax − one-hot).
pub fn cross_entropy(logits: &[f32], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, b| a.max(*b)) as f64;
    let e: Vec<f64> = logits.iter().map(|l| (*l as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let loss = -((logits[target] as f64 - m) - s.ln());
    let g = e
        .iter()
        .enumerate()
        .map(|(i, v)| v / s - if i == target { 1.0 } else { 0.0 })
        .collect();
    (loss, g)
}

/// Width of the randomization range behind each continuous estimation
/// target, used to bring targets to comparable scales. Falls back to 1 for
/// degenerate ranges.
pub fn estimation_scales(r: &RandomizationRanges) -> [f32; ESTIMATION_DIM] {
    let w = |a: [f64; 2]| {
        let d = a[1] - a[0];
        if d > 1e-6 {
            d
        } else {
            1.0
        }
    };
    let planar = w(r.d_center).max(w(r.d_wall));
    let theta_max = crate::door::DEFAULT_HINGE_LIMIT;
    let s = [
        planar,
        planar,
        w(r.h_h),
        planar,
        planar,
        1.0,
        2.0,
        2.0,
        theta_max,
        r.phi_max_deg[1].to_radians().max(1e-3),
        1.0,
        1.0,
        w(r.mass),
        w(r.tau_hinge),
        w(r.tau_handle),
    ];
    let mut out = [0.0f32; ESTIMATION_DIM];
    for (o, v) in out.iter_mut().zip(s) {
        *o = v as f32;
    }
    out
}

/// Per-sample supervision aligned with one student step.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    /// Teacher mean actions (n × act).
    pub actions: Vec<f32>,
    /// Continuous estimation targets (n × 15).
    pub targets: Vec<f32>,
    pub door_type: Vec<usize>,
}

/// Teacher mean actions on the noise-free privileged observations of the
/// current states, plus the estimation targets.
pub fn label_with_teacher(teacher: &TeacherPolicy, venv: &VecEnv) -> Labels {
    let n = venv.len();
    let mut obs = vec![0.0f32; n * TEACHER_OBS_DIM];
    venv.teacher_obs(&mut obs);
    let mut targets = Vec::with_capacity(n * ESTIMATION_DIM);
    let mut door_type = Vec::with_capacity(n);
    for e in &venv.envs {
        targets.extend_from_slice(&e.estimation_targets());
        door_type.push(e.door_type().index());
    }
    Labels {
        actions: teacher.mean_actions(&obs, n),
        targets,
        door_type,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillLosses {
    pub imitation: f64,
    pub estimation: f64,
    pub door_type: f64,
    pub total: f64,
}

/// Losses of one student step over `n` samples, accumulated into `acc`
/// with sample weight `1/total_samples`, and the gradients w.r.t. the
/// action output and the decoder output.
pub fn distill_losses(
    student_actions: &[f32],
    decoder: &[f32],
    labels: &Labels,
    scales: &[f32; ESTIMATION_DIM],
    cfg: &DistillConfig,
    total_samples: usize,
    acc: &mut DistillLosses,
) -> (Vec<f32>, Vec<f32>) {
    let n = labels.door_type.len();
    let dd = ESTIMATION_DIM + DOOR_TYPES;
    let inv = 1.0 / total_samples as f64;
    let mut dact = vec![0.0f32; n * ACTION_DIM];
    let mut ddec = vec![0.0f32; n * dd];
    let est_on = !cfg.no_estimation_loss;
    for i in 0..n {
        for j in 0..ACTION_DIM {
            let k = i * ACTION_DIM + j;
            let x = student_actions[k] as f64 - labels.actions[k] as f64;
            acc.imitation += smooth_l1(x, cfg.beta) * inv / ACTION_DIM as f64;
            dact[k] = (cfg.imitation_weight * smooth_l1_grad(x, cfg.beta) * inv / ACTION_DIM as f64) as f32;
        }
        for j in 0..ESTIMATION_DIM {
            let s = scales[j] as f64;
            let x = (decoder[i * dd + j] as f64 - labels.targets[i * ESTIMATION_DIM + j] as f64) / s;
            acc.estimation += smooth_l1(x, cfg.beta) * inv / ESTIMATION_DIM as f64;
            if est_on {
                ddec[i * dd + j] =
                    (cfg.estimation_weight * smooth_l1_grad(x, cfg.beta) / s * inv / ESTIMATION_DIM as f64) as f32;
            }
        }
        let logits = &decoder[i * dd + ESTIMATION_DIM..(i + 1) * dd];
        let (ce, g) = cross_entropy(logits, labels.door_type[i]);
        acc.door_type += ce * inv;
        if est_on {
            for (k, gk) in g.iter().enumerate() {
                ddec[i * dd + ESTIMATION_DIM + k] = (cfg.door_type_weight * gk * inv) as f32;
            }
        }
    }
    (dact, ddec)
}

pub fn total_loss(l: &DistillLosses, cfg: &DistillConfig) -> f64 {
    let mut t = cfg.imitation_weight * l.imitation;
    if !cfg.no_estimation_loss {
        t += cfg.estimation_weight * l.estimation + cfg.door_type_weight * l.door_type;
    }
    t
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub update: usize,
    pub env_steps: u64,
    pub imitation: f64,
    pub estimation: f64,
    pub door_type: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub episodes: usize,
    pub open_rate: f64,
    pub pass_rate: f64,
}

pub struct DistillTrainer {
    pub cfg: DistillConfig,
    pub settings: Arc<EnvSettings>,
    pub seed: u64,
    pub teacher: TeacherPolicy,
    pub net: Student,
    pub params: Vec<f32>,
    pub adam: Adam,
    pub norm: RunningNorm,
    pub venv: VecEnv,
    pub h: Vec<f32>,
    pub update: usize,
    pub env_steps: u64,
    pub scales: [f32; ESTIMATION_DIM],
    /// Reset mask for the first step of the next window.
    pending_reset: Vec<bool>,
    finished: Vec<crate::env::EpisodeMetrics>,
}

impl DistillTrainer {
    pub fn new(
        cfg: DistillConfig,
        teacher: TeacherPolicy,
        settings: Arc<EnvSettings>,
        seed: u64,
    ) -> Result<Self, DistillError> {
        cfg.validate().map_err(DistillError::Config)?;
        if teacher.obs_kind != ObsKind::Teacher {
            return Err(DistillError::TeacherObs);
        }
        let net = Student::new(cfg.spec());
        let mut rng = stream(seed, u64::MAX, 1, StreamTag::Policy);
        let params: Vec<f32> = net.init(&mut rng);
        let n = cfg.num_envs;
        Ok(Self {
            adam: Adam::new(
                params.len(),
                AdamConfig {
                    lr: cfg.lr,
                    ..Default::default()
                },
            ),
            norm: RunningNorm::new(STUDENT_OBS_DIM),
            venv: VecEnv::new(settings.clone(), seed, n),
            h: vec![0.0; n * net.hidden()],
            scales: estimation_scales(&settings.ranges),
            pending_reset: vec![true; n],
            finished: Vec::new(),
            update: 0,
            env_steps: 0,
            cfg,
            settings,
            seed,
            teacher,
            net,
            params,
        })
    }

    /// One window of student-driven steps followed by one gradient step.
    pub fn train_iteration(&mut self) -> Result<DistillRecord, DistillError> {
        let n = self.cfg.num_envs;
        let w = self.cfg.window;
        let hd = self.net.hidden();
        let total = n * w;
        let mut caches: Vec<StudentStepCache<f32>> = Vec::with_capacity(w);
        let mut resets = Vec::with_capacity(total);
        let mut dact_all = Vec::with_capacity(total * ACTION_DIM);
        let mut ddec_all = Vec::with_capacity(total * (ESTIMATION_DIM + DOOR_TYPES));
        let mut losses = DistillLosses::default();
        let mut raw = vec![0.0f32; n * STUDENT_OBS_DIM];
        let mut z = vec![0.0f32; n * STUDENT_OBS_DIM];
        for _ in 0..w {
            for e in 0..n {
                if self.pending_reset[e] {
                    self.h[e * hd..(e + 1) * hd].fill(0.0);
                }
            }
            resets.extend_from_slice(&self.pending_reset);
            let labels = label_with_teacher(&self.teacher, &self.venv);
            self.venv.student_obs(&mut raw);
            self.norm.update(&raw);
            self.norm.normalize(&raw, &mut z);
            let c = self.net.step(&self.params, &z, &self.h, n);
            let (da, dd) = distill_losses(c.action(), &c.dec, &labels, &self.scales, &self.cfg, total, &mut losses);
            dact_all.extend(da);
            ddec_all.extend(dd);
            let actions: Vec<Action> = c.action().chunks_exact(ACTION_DIM).map(Action::from_slice).collect();
            let results = if self.cfg.workers > 1 {
                self.venv.step_partitioned(&actions, self.cfg.workers)
            } else {
                self.venv.step(&actions)
            };
            self.env_steps += n as u64;
            self.h.clone_from(&c.h);
            caches.push(c);
            for (e, r) in results.iter().enumerate() {
                self.pending_reset[e] = r.done;
                if r.done {
                    self.finished.push(self.venv.envs[e].metrics());
                }
            }
            self.venv.reset_done(&results);
        }
        losses.total = total_loss(&losses, &self.cfg);
        let mut g = vec![0.0f32; self.params.len()];
        self.net.bptt(&self.params, &caches, &resets, &dact_all, &ddec_all, w, &mut g);
        let grad_norm = l2_norm(&g);
        if !losses.total.is_finite() || !all_finite(&g) {
            return Err(DistillError::Divergence {
                update: self.update,
                detail: format!(
                    "imitation={} estimation={} door_type={} grad_norm={grad_norm}",
                    losses.imitation, losses.estimation, losses.door_type
                ),
            });
        }
        clip_grad_norm(&mut g, self.cfg.max_grad_norm);
        self.adam.step(&mut self.params, &g);
        self.update += 1;
        let fin = std::mem::take(&mut self.finished);
        let k = fin.len();
        let rate = |f: fn(&crate::env::EpisodeMetrics) -> bool| {
            if k == 0 {
                0.0
            } else {
                fin.iter().filter(|m| f(m)).count() as f64 / k as f64
            }
        };
        Ok(DistillRecord {
            update: self.update,
            env_steps: self.env_steps,
            imitation: losses.imitation,
            estimation: losses.estimation,
            door_type: losses.door_type,
            total: losses.total,
            grad_norm,
            episodes: k,
            open_rate: rate(|m| m.opened_enough),
            pass_rate: rate(|m| m.passed_through),
        })
    }

    pub fn policy(&self, n: usize) -> StudentPolicy {
        StudentPolicy {
            net: self.net.clone(),
            params: self.params.clone(),
            norm: self.norm.clone(),
            h: vec![0.0; n * self.net.hidden()],
        }
    }

    pub fn evaluate(&self, num_envs: usize) -> SuccessSummary {
        let mut pol = self.policy(num_envs);
        let m = eval::run_episodes(
            &mut pol,
            self.settings.clone(),
            eval::eval_seed(self.seed),
            num_envs,
            1,
            self.cfg.workers,
        );
        eval::summarize(&m)
    }

    pub fn checkpoint(&self, stamp: &Stamp, extra: serde_json::Value) -> Checkpoint {
        let (mean, var) = self.norm.to_blocks();
        let mut meta = serde_json::json!({
            "obs_kind": ObsKind::Student,
            "obs_count": self.norm.count,
            "update": self.update,
            "env_steps": self.env_steps,
            "workers": self.cfg.workers,
            "config_hash": stamp.config_hash,
            "no_estimation_loss": self.cfg.no_estimation_loss,
        });
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        Checkpoint::new(
            LAYOUT_VERSION,
            NetworkSpec::Student(self.net.spec.clone()),
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
pub struct StudentSummary {
    pub updates: usize,
    pub env_steps: u64,
    /// Mean imitation loss over the last tenth of the updates.
    pub final_imitation: f64,
    pub final_estimation: f64,
    pub final_door_type: f64,
    pub final_open_rate: f64,
    pub final_pass_rate: f64,
    pub teacher_hash: String,
    pub checkpoint: PathBuf,
}

/// Distill `teacher_path` into a new student. Writes `curves.jsonl`,
/// `evals.jsonl`, `timing.jsonl` and `final.ckpt` into `out`.
pub fn train_student(
    teacher_path: &Path,
    cfg: &DistillConfig,
    settings: Arc<EnvSettings>,
    seed: u64,
    out: &Path,
    stamp: &Stamp,
) -> Result<StudentSummary, DistillError> {
    std::fs::create_dir_all(out)?;
    let hash_before = crate::nn::load_checkpoint(teacher_path, LAYOUT_VERSION)?.content_hash();
    let teacher = TeacherPolicy::load(teacher_path)?;
    let mut tr = DistillTrainer::new(cfg.clone(), teacher, settings, seed)?;
    let mut curves = JsonlWriter::create(&out.join("curves.jsonl"), stamp)?;
    let mut evals = JsonlWriter::create(&out.join("evals.jsonl"), stamp)?;
    let mut timing = JsonlWriter::create(&out.join("timing.jsonl"), stamp)?;
    let per_update = (cfg.window * cfg.num_envs) as u64;
    let updates = cfg.total_steps.div_ceil(per_update).max(1) as usize;
    let tail = (updates / 10).max(1);
    let start = Instant::now();
    let mut tail_sum = DistillLosses::default();
    let mut last_eval = SuccessSummary::default();
    for u in 0..updates {
        let rec = tr.train_iteration()?;
        curves.write(&rec)?;
        timing.write(&serde_json::json!({
            "update": rec.update,
            "env_steps": rec.env_steps,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }))?;
        if u + tail >= updates {
            tail_sum.imitation += rec.imitation / tail as f64;
            tail_sum.estimation += rec.estimation / tail as f64;
            tail_sum.door_type += rec.door_type / tail as f64;
        }
        if (u + 1) % cfg.eval_every.max(1) == 0 || u + 1 == updates {
            let s = tr.evaluate(cfg.eval_envs);
            evals.write(&serde_json::json!({
                "update": tr.update,
                "env_steps": tr.env_steps,
                "episodes": s.open.trials,
                "open_rate": s.open.rate,
                "pass_rate": s.pass.rate,
                "open_ci": [s.open.lo, s.open.hi],
                "pass_ci": [s.pass.lo, s.pass.hi],
            }))?;
            save_checkpoint(&out.join("latest.ckpt"), &tr.checkpoint(stamp, serde_json::json!({})))?;
            last_eval = s;
        }
    }
    let hash_after = crate::nn::load_checkpoint(teacher_path, LAYOUT_VERSION)?.content_hash();
    if hash_after != hash_before {
        return Err(DistillError::TeacherModified);
    }
    let path = out.join("final.ckpt");
    let extra = serde_json::json!({
        "teacher_hash": hash_before,
        "final_imitation": tail_sum.imitation,
        "eval_open_rate": last_eval.open.rate,
        "eval_pass_rate": last_eval.pass.rate,
    });
    save_checkpoint(&path, &tr.checkpoint(stamp, extra))?;
    Ok(StudentSummary {
        updates: tr.update,
        env_steps: tr.env_steps,
        final_imitation: tail_sum.imitation,
        final_estimation: tail_sum.estimation,
        final_door_type: tail_sum.door_type,
        final_open_rate: last_eval.open.rate,
        final_pass_rate: last_eval.pass.rate,
        teacher_hash: hash_before,
        checkpoint: path,
    })
}
