//! Observation normalization and the deployable policies built on the nn
//! models, shared by training and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{VecEnv, LAYOUT_VERSION, STUDENT_OBS_DIM, TEACHER_OBS_DIM};
use crate::nn::{
    load_checkpoint, ActorCritic, Checkpoint, CheckpointError, NetworkSpec, Student, StudentStepCache,
};
use crate::robot::Action;

pub const OBS_CLIP: f32 = 10.0;

/// Which observation vector a policy consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    #[default]
    Teacher,
    Student,
}

impl ObsKind {
    pub fn dim(self) -> usize {
        match self {
            ObsKind::Teacher => TEACHER_OBS_DIM,
            ObsKind::Student => STUDENT_OBS_DIM,
        }
    }

    /// Fill `out` (n×dim) from every environment.
    pub fn gather(self, venv: &mut VecEnv, out: &mut [f32]) {
        match self {
            ObsKind::Teacher => venv.teacher_obs(out),
            ObsKind::Student => venv.student_obs(out),
        }
    }
}

/// Running mean and variance (parallel Welford merge, f64 accumulators).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch: &[f32]) {
        let d = self.dim();
        let n = batch.len() / d;
        if n == 0 {
            return;
        }
        let mut bm = vec![0.0; d];
        for row in batch.chunks_exact(d) {
            for (m, x) in bm.iter_mut().zip(row) {
                *m += *x as f64;
            }
        }
        bm.iter_mut().for_each(|m| *m /= n as f64);
        let mut bv = vec![0.0; d];
        for row in batch.chunks_exact(d) {
            for ((v, m), x) in bv.iter_mut().zip(&bm).zip(row) {
                let e = *x as f64 - m;
                *v += e * e;
            }
        }
        bv.iter_mut().for_each(|v| *v /= n as f64);
        let (na, nb) = (self.count, n as f64);
        let tot = na + nb;
        for i in 0..d {
            let delta = bm[i] - self.mean[i];
            let m2 = if na > 0.0 { self.var[i] * na } else { 0.0 } + bv[i] * nb + delta * delta * na * nb / tot;
            self.mean[i] += delta * nb / tot;
            self.var[i] = m2 / tot;
        }
        self.count = tot;
    }

    pub fn normalize(&self, x: &[f32], out: &mut [f32]) {
        let d = self.dim();
        for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            for i in 0..d {
                let z = (xr[i] as f64 - self.mean[i]) / (self.var[i] + 1e-8).sqrt();
                or[i] = (z as f32).clamp(-OBS_CLIP, OBS_CLIP);
            }
        }
    }

    pub fn to_blocks(&self) -> (Vec<f32>, Vec<f32>) {
        (
            self.mean.iter().map(|v| *v as f32).collect(),
            self.var.iter().map(|v| *v as f32).collect(),
        )
    }

    pub fn from_blocks(mean: &[f32], var: &[f32], count: f64) -> Self {
        Self {
            mean: mean.iter().map(|v| *v as f64).collect(),
            var: var.iter().map(|v| *v as f64).collect(),
            count,
        }
    }
}

/// Deterministic (mean-action) teacher-architecture policy.
#[derive(Debug, Clone)]
pub struct TeacherPolicy {
    pub net: ActorCritic,
    pub params: Vec<f32>,
    pub norm: RunningNorm,
    pub obs_kind: ObsKind,
}

impl TeacherPolicy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, PolicyError> {
        let NetworkSpec::ActorCritic(spec) = ck.header.spec.clone() else {
            return Err(PolicyError::WrongKind("actor_critic"));
        };
        let obs_kind = obs_kind_from_meta(ck);
        if obs_kind.dim() != spec.obs_dim {
            return Err(PolicyError::ObsDim(spec.obs_dim));
        }
        let count = ck.header.meta.get("obs_count").and_then(|v| v.as_f64()).unwrap_or(0.0);
        Ok(Self {
            params: ck.params()?.to_vec(),
            norm: RunningNorm::from_blocks(ck.block("obs_mean")?, ck.block("obs_var")?, count),
            net: ActorCritic::new(spec),
            obs_kind,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_checkpoint(&load_checkpoint(path, LAYOUT_VERSION)?)
    }

    /// Mean actions for `n` raw observations.
    pub fn mean_actions(&self, obs: &[f32], n: usize) -> Vec<f32> {
        let mut z = vec![0.0; obs.len()];
        self.norm.normalize(obs, &mut z);
        self.net.actor_mean(&self.params, &z, n)
    }
}

/// Recurrent (or feed-forward ablation) student with per-env hidden state.
#[derive(Debug, Clone)]
pub struct StudentPolicy {
    pub net: Student,
    pub params: Vec<f32>,
    pub norm: RunningNorm,
    pub h: Vec<f32>,
}

impl StudentPolicy {
    pub fn from_checkpoint(ck: &Checkpoint, n: usize) -> Result<Self, PolicyError> {
        let NetworkSpec::Student(spec) = ck.header.spec.clone() else {
            return Err(PolicyError::WrongKind("student"));
        };
        let count = ck.header.meta.get("obs_count").and_then(|v| v.as_f64()).unwrap_or(0.0);
        let net = Student::new(spec);
        Ok(Self {
            h: vec![0.0; n * net.hidden()],
            params: ck.params()?.to_vec(),
            norm: RunningNorm::from_blocks(ck.block("obs_mean")?, ck.block("obs_var")?, count),
            net,
        })
    }

    pub fn load(path: &Path, n: usize) -> Result<Self, PolicyError> {
        Self::from_checkpoint(&load_checkpoint(path, LAYOUT_VERSION)?, n)
    }

    pub fn reset_env(&mut self, i: usize) {
        let hd = self.net.hidden();
        self.h[i * hd..(i + 1) * hd].fill(0.0);
    }

    /// Advance all `n` hidden states; returns the step cache (actions,
    /// decoder outputs, new hidden state).
    pub fn step(&mut self, obs: &[f32], n: usize) -> StudentStepCache<f32> {
        let mut z = vec![0.0; obs.len()];
        self.norm.normalize(obs, &mut z);
        let c = self.net.step(&self.params, &z, &self.h, n);
        self.h.clone_from(&c.h);
        c
    }
}

fn obs_kind_from_meta(ck: &Checkpoint) -> ObsKind {
    ck.header
        .meta
        .get("obs_kind")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint holds the wrong network kind (expected {0})")]
    WrongKind(&'static str),
    #[error("network input size {0} does not match its observation kind")]
    ObsDim(usize),
}

/// Anything that maps batched observations to actions in evaluation.
pub trait Policy {
    fn obs_kind(&self) -> ObsKind;
    fn reset_env(&mut self, i: usize);
    fn act(&mut self, obs: &[f32], n: usize) -> Vec<Action>;
}

impl Policy for TeacherPolicy {
    fn obs_kind(&self) -> ObsKind {
        self.obs_kind
    }

    fn reset_env(&mut self, _i: usize) {}

    fn act(&mut self, obs: &[f32], n: usize) -> Vec<Action> {
        let ad = self.net.spec.act_dim;
        self.mean_actions(obs, n).chunks_exact(ad).map(Action::from_slice).collect()
    }
}

impl Policy for StudentPolicy {
    fn obs_kind(&self) -> ObsKind {
        ObsKind::Student
    }

    fn reset_env(&mut self, i: usize) {
        StudentPolicy::reset_env(self, i);
    }

    fn act(&mut self, obs: &[f32], n: usize) -> Vec<Action> {
        let ad = self.net.spec.act_dim;
        let c = self.step(obs, n);
        c.action().chunks_exact(ad).map(Action::from_slice).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_norm_matches_batch_statistics() {
        let data: Vec<f32> = (0..300).map(|i| ((i * 37 % 101) as f32) * 0.1 - 3.0).collect();
        let mut a = RunningNorm::new(3);
        for chunk in data.chunks(30) {
            a.update(chunk);
        }
        let mut b = RunningNorm::new(3);
        b.update(&data);
        for i in 0..3 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-9);
            assert!((a.var[i] - b.var[i]).abs() < 1e-9);
        }
        assert_eq!(a.count, 100.0);
    }

    #[test]
    fn normalized_values_are_clipped() {
        let mut n = RunningNorm::new(1);
        n.update(&[0.0, 0.0, 0.0, 1e-3]);
        let mut out = [0.0];
        n.normalize(&[1e6], &mut out);
        assert_eq!(out[0], OBS_CLIP);
    }
}
