//! Evaluation protocols: success grids, hinge-resistance sweeps, door-type
//! probability traces, hidden-state exports and repeatability runs.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::door::DoorType;
use crate::env::{EnvSettings, EpisodeMetrics, StepResult, VecEnv};
use crate::policy::{Policy, StudentPolicy};
use crate::randomization::{stream, RandomizationRanges, StreamTag};
use crate::robot::Action;

/// Seed of the evaluation environment streams, disjoint from training.
pub fn eval_seed(seed: u64) -> u64 {
    stream(seed, 0, 0, StreamTag::Eval).next_u64()
}

/// Bernoulli rate with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub lo: f64,
    pub hi: f64,
}

pub const Z95: f64 = 1.959_963_984_540_054;

impl Rate {
    pub fn new(successes: usize, trials: usize) -> Self {
        let (lo, hi) = wilson(successes, trials, Z95);
        Self {
            successes,
            trials,
            rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            lo,
            hi,
        }
    }

    pub fn ci_width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessSummary {
    pub open: Rate,
    pub pass: Rate,
    pub mean_return: f64,
}

pub fn summarize(m: &[EpisodeMetrics]) -> SuccessSummary {
    let n = m.len();
    SuccessSummary {
        open: Rate::new(m.iter().filter(|x| x.opened_enough).count(), n),
        pass: Rate::new(m.iter().filter(|x| x.passed_through).count(), n),
        mean_return: if n == 0 {
            0.0
        } else {
            m.iter().map(|x| x.ret).sum::<f64>() / n as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub num_envs: usize,
    pub episodes: usize,
    pub workers: usize,
    /// Pin the hinge resistance torque (N·m) for every episode.
    pub hinge_resistance: Option<f64>,
    /// Restrict the sampled door types.
    pub door_types: Option<Vec<DoorType>>,
    pub sweep_levels: Vec<f64>,
    pub repeat_per_side: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            num_envs: 512,
            episodes: 1,
            workers: 1,
            hinge_resistance: None,
            door_types: None,
            sweep_levels: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            repeat_per_side: 20,
        }
    }
}

impl EvalProtocol {
    /// Settings with this protocol's randomization overrides applied.
    pub fn apply(&self, settings: &EnvSettings) -> EnvSettings {
        let mut s = settings.clone();
        if let Some(t) = self.hinge_resistance {
            pin_hinge_resistance(&mut s.ranges, t);
        }
        if let Some(d) = &self.door_types {
            s.ranges.door_types = d.clone();
        }
        s
    }
}

pub fn pin_hinge_resistance(r: &mut RandomizationRanges, tau: f64) {
    r.tau_hinge = [tau, tau];
    r.p_tau_hinge_zero = 0.0;
}

fn step_active(venv: &mut VecEnv, actions: &[Action], active: &[bool], workers: usize) -> Vec<Option<StepResult>> {
    let workers = workers.max(1).min(venv.len().max(1));
    if workers == 1 {
        return venv
            .envs
            .iter_mut()
            .zip(actions)
            .zip(active)
            .map(|((e, a), on)| on.then(|| e.step(a)))
            .collect();
    }
    let chunk = venv.len().div_ceil(workers);
    let mut out = Vec::with_capacity(venv.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = venv
            .envs
            .chunks_mut(chunk)
            .zip(actions.chunks(chunk))
            .zip(active.chunks(chunk))
            .map(|((envs, acts), act)| {
                scope.spawn(move || {
                    envs.iter_mut()
                        .zip(acts)
                        .zip(act)
                        .map(|((e, a), on)| on.then(|| e.step(a)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked"));
        }
    });
    out
}

/// Per-step observer for [`run_episodes_with`]: called after every step with
/// (episode, env index, step, environment, step result).
pub type StepHook<'a> = dyn FnMut(usize, usize, usize, &crate::env::Env, &StepResult) + 'a;

/// Run `episodes` full episodes in each of `num_envs` environments with a
/// deterministic policy. Metrics are ordered by (episode, env).
pub fn run_episodes<P: Policy + ?Sized>(
    policy: &mut P,
    settings: Arc<EnvSettings>,
    seed: u64,
    num_envs: usize,
    episodes: usize,
    workers: usize,
) -> Vec<EpisodeMetrics> {
    run_episodes_with(policy, settings, seed, num_envs, episodes, workers, &mut |_, _, _, _, _| {})
}

pub fn run_episodes_with<P: Policy + ?Sized>(
    policy: &mut P,
    settings: Arc<EnvSettings>,
    seed: u64,
    num_envs: usize,
    episodes: usize,
    workers: usize,
    hook: &mut StepHook<'_>,
) -> Vec<EpisodeMetrics> {
    let mut venv = VecEnv::new(settings, seed, num_envs);
    let kind = policy.obs_kind();
    let mut obs = vec![0.0f32; num_envs * kind.dim()];
    let mut out = Vec::with_capacity(num_envs * episodes);
    for ep in 0..episodes {
        if ep > 0 {
            venv.envs.iter_mut().for_each(|e| e.reset_next());
        }
        (0..num_envs).for_each(|i| policy.reset_env(i));
        let mut active = vec![true; num_envs];
        let mut metrics: Vec<Option<EpisodeMetrics>> = vec![None; num_envs];
        let mut t = 0;
        while active.iter().any(|a| *a) {
            kind.gather(&mut venv, &mut obs);
            let actions = policy.act(&obs, num_envs);
            let results = step_active(&mut venv, &actions, &active, workers);
            for (i, r) in results.iter().enumerate() {
                if let Some(r) = r {
                    hook(ep, i, t, &venv.envs[i], r);
                    if r.done {
                        active[i] = false;
                        metrics[i] = Some(venv.envs[i].metrics());
                    }
                }
            }
            t += 1;
        }
        out.extend(metrics.into_iter().map(|m| m.expect("every episode finishes")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub door_type: String,
    pub episodes: usize,
    pub open: Rate,
    pub pass: Rate,
}

/// Success table per door type plus an `all` row.
pub fn success_grid(m: &[EpisodeMetrics]) -> Vec<GridRow> {
    let mut rows = Vec::new();
    for dt in DoorType::ALL {
        let sub: Vec<_> = m.iter().filter(|x| x.door_type == dt).copied().collect();
        let s = summarize(&sub);
        rows.push(GridRow {
            door_type: dt.name().to_string(),
            episodes: sub.len(),
            open: s.open,
            pass: s.pass,
        });
    }
    let s = summarize(m);
    rows.push(GridRow {
        door_type: "all".into(),
        episodes: m.len(),
        open: s.open,
        pass: s.pass,
    });
    rows
}

pub fn evaluate_grid<P: Policy + ?Sized>(
    policy: &mut P,
    settings: &EnvSettings,
    protocol: &EvalProtocol,
    seed: u64,
) -> Vec<GridRow> {
    let s = Arc::new(protocol.apply(settings));
    let m = run_episodes(policy, s, eval_seed(seed), protocol.num_envs, protocol.episodes, protocol.workers);
    success_grid(&m)
}

pub const GRID_HEADER: [&str; 9] = [
    "door_type",
    "episodes",
    "open_rate",
    "open_lo",
    "open_hi",
    "pass_rate",
    "pass_lo",
    "pass_hi",
    "pass_successes",
];

pub fn grid_csv_rows(rows: &[GridRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.door_type.clone(),
                r.episodes.to_string(),
                format!("{:.6}", r.open.rate),
                format!("{:.6}", r.open.lo),
                format!("{:.6}", r.open.hi),
                format!("{:.6}", r.pass.rate),
                format!("{:.6}", r.pass.lo),
                format!("{:.6}", r.pass.hi),
                r.pass.successes.to_string(),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub open: Rate,
    pub pass: Rate,
}

/// Success rates with the hinge resistance pinned at each level and every
/// other randomization active.
pub fn resistance_sweep<P: Policy + ?Sized>(
    policy: &mut P,
    settings: &EnvSettings,
    protocol: &EvalProtocol,
    levels: &[f64],
    seed: u64,
) -> Vec<SweepRow> {
    levels
        .iter()
        .map(|&lvl| {
            let mut p = protocol.clone();
            p.hinge_resistance = Some(lvl);
            let s = Arc::new(p.apply(settings));
            let m = run_episodes(policy, s, eval_seed(seed), p.num_envs, p.episodes, p.workers);
            let sm = summarize(&m);
            SweepRow {
                level: lvl,
                open: sm.open,
                pass: sm.pass,
            }
        })
        .collect()
}

/// Machine-checkable properties of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepChecks {
    /// Pass rate never rises by more than one CI width between increasing
    /// levels.
    pub non_increasing: bool,
    /// Pass rate ≤ 10% at every level above 50 N·m.
    pub near_zero_above_50: bool,
    pub open_ge_pass: bool,
}

pub fn check_sweep(rows: &[SweepRow]) -> SweepChecks {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.level.total_cmp(&b.level));
    let non_increasing = sorted.windows(2).all(|w| {
        let tol = w[0].pass.ci_width().max(w[1].pass.ci_width());
        w[1].pass.rate <= w[0].pass.rate + tol
    });
    SweepChecks {
        non_increasing,
        near_zero_above_50: rows.iter().filter(|r| r.level > 50.0).all(|r| r.pass.rate <= 0.10),
        open_ge_pass: rows.iter().all(|r| r.open.rate >= r.pass.rate),
    }
}

pub fn softmax4(logits: &[f32]) -> [f64; 4] {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, b| a.max(*b)) as f64;
    let e: Vec<f64> = logits.iter().map(|l| (*l as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s, e[3] / s]
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum()
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// One step of a door-type probability trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeProbRow {
    pub episode: usize,
    pub env: usize,
    pub t: usize,
    pub true_type: usize,
    pub probs: [f64; 4],
    pub action: [f64; crate::robot::ACTION_DIM],
    pub door_contact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeProbSummary {
    pub episodes: usize,
    /// Episodes whose final-step argmax equals the true type.
    pub final_correct: Rate,
    /// Mean entropy over steps before the first door contact.
    pub entropy_before_contact: f64,
    pub entropy_at_end: f64,
}

/// Decoder type probabilities at every step of student-driven episodes.
pub fn export_type_probs(
    student: &mut StudentPolicy,
    settings: Arc<EnvSettings>,
    seed: u64,
    num_envs: usize,
    episodes: usize,
) -> (Vec<TypeProbRow>, TypeProbSummary) {
    let dec_off = crate::env::ESTIMATION_DIM;
    let mut venv = VecEnv::new(settings, seed, num_envs);
    let od = crate::env::STUDENT_OBS_DIM;
    let dd = student.net.spec.decoder_dim;
    let ad = student.net.spec.act_dim;
    let mut obs = vec![0.0f32; num_envs * od];
    let mut rows = Vec::new();
    let (mut correct, mut total) = (0usize, 0usize);
    let (mut ent_before, mut n_before) = (0.0f64, 0usize);
    let mut ent_end = 0.0f64;
    for ep in 0..episodes {
        if ep > 0 {
            venv.envs.iter_mut().for_each(|e| e.reset_next());
        }
        (0..num_envs).for_each(|i| student.reset_env(i));
        let mut active = vec![true; num_envs];
        let mut touched = vec![false; num_envs];
        let mut last: Vec<Option<[f64; 4]>> = vec![None; num_envs];
        let mut t = 0;
        while active.iter().any(|a| *a) {
            venv.student_obs(&mut obs);
            let c = student.step(&obs, num_envs);
            let actions: Vec<Action> = c.action().chunks_exact(ad).map(Action::from_slice).collect();
            let results = step_active(&mut venv, &actions, &active, 1);
            for (i, r) in results.iter().enumerate() {
                let Some(r) = r else { continue };
                let probs = softmax4(&c.dec[i * dd + dec_off..i * dd + dec_off + 4]);
                let env = &venv.envs[i];
                let rep = &env.report;
                touched[i] |= rep.grasped || rep.hinge_torque != 0.0 || rep.handle_torque != 0.0;
                if !touched[i] {
                    ent_before += entropy(&probs);
                    n_before += 1;
                }
                let mut action = [0.0; crate::robot::ACTION_DIM];
                action.copy_from_slice(&actions[i].0);
                rows.push(TypeProbRow {
                    episode: ep,
                    env: i,
                    t,
                    true_type: env.door_type() as usize,
                    probs,
                    action,
                    door_contact: touched[i],
                });
                last[i] = Some(probs);
                if r.done {
                    active[i] = false;
                    let p = last[i].expect("probabilities recorded");
                    total += 1;
                    if argmax(&p) == env.door_type() as usize {
                        correct += 1;
                    }
                    ent_end += entropy(&p);
                }
            }
            t += 1;
        }
    }
    let summary = TypeProbSummary {
        episodes: total,
        final_correct: Rate::new(correct, total),
        entropy_before_contact: if n_before == 0 { f64::NAN } else { ent_before / n_before as f64 },
        entropy_at_end: if total == 0 { f64::NAN } else { ent_end / total as f64 },
    };
    (rows, summary)
}

pub fn type_prob_csv(rows: &[TypeProbRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec![
        "episode", "env", "t", "true_type", "p_push_left", "p_push_right", "p_pull_left", "p_pull_right",
        "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "door_contact",
    ];
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.episode.to_string(), r.env.to_string(), r.t.to_string(), r.true_type.to_string()];
            v.extend(r.probs.iter().map(|p| format!("{p:.6}")));
            v.extend(r.action.iter().map(|a| format!("{a:.6}")));
            v.push((r.door_contact as u8).to_string());
            v
        })
        .collect();
    (header, body)
}

/// Hidden states of student-driven episodes, one row per (episode, step).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenExport {
    pub hidden_dim: usize,
    pub episode: Vec<usize>,
    pub t: Vec<usize>,
    pub door_type: Vec<usize>,
    /// Row-major, `rows × hidden_dim`. Row for t = 0 is the initial state.
    pub h: Vec<f32>,
}

impl HiddenExport {
    pub fn rows(&self) -> usize {
        self.t.len()
    }
}

/// Record the initial hidden state and the state after every step.
/// `episodes` distinct episodes are spread over `num_envs` environments.
pub fn export_hidden_states(
    student: &mut StudentPolicy,
    settings: Arc<EnvSettings>,
    seed: u64,
    num_envs: usize,
    episodes: usize,
) -> HiddenExport {
    let hd = student.net.hidden();
    let mut ex = HiddenExport {
        hidden_dim: hd,
        episode: Vec::new(),
        t: Vec::new(),
        door_type: Vec::new(),
        h: Vec::new(),
    };
    let mut venv = VecEnv::new(settings, seed, num_envs);
    let od = crate::env::STUDENT_OBS_DIM;
    let ad = student.net.spec.act_dim;
    let mut obs = vec![0.0f32; num_envs * od];
    let rounds = episodes.div_ceil(num_envs.max(1));
    for round in 0..rounds {
        if round > 0 {
            venv.envs.iter_mut().for_each(|e| e.reset_next());
        }
        (0..num_envs).for_each(|i| student.reset_env(i));
        let live: Vec<bool> = (0..num_envs).map(|i| round * num_envs + i < episodes).collect();
        let mut active = live.clone();
        for i in 0..num_envs {
            if live[i] {
                ex.episode.push(round * num_envs + i);
                ex.t.push(0);
                ex.door_type.push(venv.envs[i].door_type() as usize);
                ex.h.extend_from_slice(&student.h[i * hd..(i + 1) * hd]);
            }
        }
        let mut t = 0;
        while active.iter().any(|a| *a) {
            venv.student_obs(&mut obs);
            let c = student.step(&obs, num_envs);
            let actions: Vec<Action> = c.action().chunks_exact(ad).map(Action::from_slice).collect();
            let results = step_active(&mut venv, &actions, &active, 1);
            t += 1;
            for (i, r) in results.iter().enumerate() {
                let Some(r) = r else { continue };
                ex.episode.push(round * num_envs + i);
                ex.t.push(t);
                ex.door_type.push(venv.envs[i].door_type() as usize);
                ex.h.extend_from_slice(&c.h[i * hd..(i + 1) * hd]);
                if r.done {
                    active[i] = false;
                }
            }
        }
    }
    ex
}

/// Top-`k` principal components of the rows of `x` (n×d) by power iteration
/// with deflation from a fixed start vector. Returns (components k×d, mean).
pub fn pca(x: &[f32], d: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / d;
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut cov = vec![0.0; d * d];
    for row in x.chunks_exact(d) {
        let c: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| *v as f64 - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n.max(1) as f64;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let mut comps = Vec::with_capacity(k * d);
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i * 7 + c * 13) % 11) as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; d];
            for i in 0..d {
                w[i] = (0..d).map(|j| cov[i * d + j] * v[j]).sum();
            }
            let nrm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nrm < 1e-300 {
                break;
            }
            w.iter_mut().for_each(|a| *a /= nrm);
            let diff: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            lambda = nrm;
            if diff < 1e-12 {
                break;
            }
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        comps.extend(v);
    }
    (comps, mean)
}

pub fn project(x: &[f32], d: usize, comps: &[f64], mean: &[f64]) -> Vec<[f64; 2]> {
    x.chunks_exact(d)
        .map(|row| {
            let mut p = [0.0; 2];
            for (k, pk) in p.iter_mut().enumerate() {
                *pk = (0..d).map(|j| (row[j] as f64 - mean[j]) * comps[k * d + j]).sum();
            }
            p
        })
        .collect()
}

/// Training accuracy of a Fisher linear discriminant on 2-D points with
/// binary labels.
pub fn linear_separability(points: &[[f64; 2]], labels: &[bool]) -> f64 {
    let mut m = [[0.0; 2]; 2];
    let mut cnt = [0usize; 2];
    for (p, &l) in points.iter().zip(labels) {
        let c = l as usize;
        m[c][0] += p[0];
        m[c][1] += p[1];
        cnt[c] += 1;
    }
    if cnt[0] == 0 || cnt[1] == 0 {
        return 1.0;
    }
    for c in 0..2 {
        m[c][0] /= cnt[c] as f64;
        m[c][1] /= cnt[c] as f64;
    }
    let mut s = [0.0; 4];
    for (p, &l) in points.iter().zip(labels) {
        let c = l as usize;
        let (a, b) = (p[0] - m[c][0], p[1] - m[c][1]);
        s[0] += a * a;
        s[1] += a * b;
        s[3] += b * b;
    }
    s[2] = s[1];
    s[0] += 1e-9;
    s[3] += 1e-9;
    let det = s[0] * s[3] - s[1] * s[2];
    let dm = [m[1][0] - m[0][0], m[1][1] - m[0][1]];
    let w = [(s[3] * dm[0] - s[1] * dm[1]) / det, (-s[2] * dm[0] + s[0] * dm[1]) / det];
    let mid = [(m[0][0] + m[1][0]) / 2.0, (m[0][1] + m[1][1]) / 2.0];
    let ok = points
        .iter()
        .zip(labels)
        .filter(|(p, &l)| ((p[0] - mid[0]) * w[0] + (p[1] - mid[1]) * w[1] > 0.0) == l)
        .count();
    ok as f64 / points.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub push_trials: usize,
    pub push_opened: usize,
    pub push_passed: usize,
    pub pull_trials: usize,
    pub pull_opened: usize,
    pub pull_passed: usize,
}

impl RepeatResult {
    pub fn total(&self) -> usize {
        self.push_trials + self.pull_trials
    }

    pub fn pass_rate(&self) -> f64 {
        (self.push_passed + self.pull_passed) as f64 / self.total().max(1) as f64
    }
}

/// One fixed door (geometry and dynamics at their midpoints) approached
/// `n` times from its push side and `n` times from its pull side. Seen from
/// the pull side a right-hinged door is hinged on the left.
pub fn repeatability<P: Policy + ?Sized>(
    policy: &mut P,
    settings: &EnvSettings,
    n: usize,
    seed: u64,
    workers: usize,
) -> RepeatResult {
    let mut base = settings.clone();
    base.ranges.freeze("dynamics").expect("group name");
    base.ranges.freeze("geometry").expect("group name");
    let mut side = |dt: DoorType| {
        let mut s = base.clone();
        s.ranges.door_types = vec![dt];
        let m = run_episodes(policy, Arc::new(s), eval_seed(seed), n, 1, workers);
        (
            m.len(),
            m.iter().filter(|x| x.opened_enough).count(),
            m.iter().filter(|x| x.passed_through).count(),
        )
    };
    let (pt, po, pp) = side(DoorType::PushRight);
    let (lt, lo, lp) = side(DoorType::PullLeft);
    RepeatResult {
        push_trials: pt,
        push_opened: po,
        push_passed: pp,
        pull_trials: lt,
        pull_opened: lo,
        pull_passed: lp,
    }
}

/// Uniformly random actions; a sanity floor for success rates.
pub struct RandomPolicy {
    pub rng: rand_chacha::ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed, 0, 0, StreamTag::Policy),
        }
    }
}

impl Policy for RandomPolicy {
    fn obs_kind(&self) -> crate::policy::ObsKind {
        crate::policy::ObsKind::Student
    }

    fn reset_env(&mut self, _i: usize) {}

    fn act(&mut self, _obs: &[f32], n: usize) -> Vec<Action> {
        (0..n).map(|_| crate::env::random_action(&mut self.rng)).collect()
    }
}
