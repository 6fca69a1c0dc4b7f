//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Criteria 5-9 need trained teachers and students. They are trained once
//! through the `doorlab` binary from the files in `configs/` and cached under
//! the cargo target directory, keyed by config hash (and teacher checkpoint
//! hash for students). A cold cache costs several CPU hours.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use doorlab::config::ExperimentConfig;
use doorlab::door::{
    step_door, DoorDynamicsParams, DoorSpec, DoorState, DoorType, HingeSide, OpeningDir,
};
use doorlab::env::{Env, EnvSettings, VecEnv, TEACHER_OBS_DIM};
use doorlab::eval::{self, EvalProtocol};
use doorlab::interaction::Zone;
use doorlab::nn::gradcheck::check_gradients;
use doorlab::nn::{
    load_checkpoint, Activation, ActorCritic, ActorCriticSpec, Core, Gru, Linear, Mlp, Student, StudentSpec,
};
use doorlab::policy::{StudentPolicy, TeacherPolicy};
use doorlab::randomization::{sample_episode, RandomizationRanges};
use doorlab::rewards::*;
use doorlab::robot::{wrap_angle, Action, RobotConfig, ACTION_DIM, ARM_DOF};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_doorlab");
const EVAL_EPISODES: usize = 512;

type Verdict = (bool, String);

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config_path(name: &str) -> PathBuf {
    workspace().join("configs").join(format!("{name}.toml"))
}

fn cache_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache")
}

fn doorlab(args: &[&str]) {
    let o = Command::new(BIN).args(args).output().expect("binary runs");
    assert!(
        o.status.success(),
        "doorlab {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Run directory for a cached training run; trains when the final
/// checkpoint is absent.
fn cached_run(dir_name: &str, train: impl FnOnce(&str, &str)) -> PathBuf {
    let root = cache_root();
    let dir = root.join(dir_name);
    if !dir.join("final.ckpt").exists() {
        if dir.exists() {
            std::fs::remove_dir_all(&dir).unwrap();
        }
        std::fs::create_dir_all(&root).unwrap();
        eprintln!("training {dir_name} (not cached)");
        train(root.to_str().unwrap(), dir_name);
        assert!(dir.join("final.ckpt").exists());
    }
    dir
}

fn teacher_run(name: &str) -> (ExperimentConfig, PathBuf) {
    let path = config_path(name);
    let cfg = ExperimentConfig::load(&path).unwrap();
    let dir_name = format!("{name}-{}", &cfg.hash()[..12]);
    let dir = cached_run(&dir_name, |out, run| {
        doorlab(&[
            "train-teacher",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out,
            "--set",
            &format!("run_name={run}"),
        ])
    });
    (cfg, dir)
}

fn student_run(ablate: Option<&str>) -> (ExperimentConfig, PathBuf) {
    let (_, teacher_dir) = teacher_run("teacher");
    let teacher = teacher_dir.join("best.ckpt");
    let teacher_hash = load_checkpoint(&teacher, doorlab::env::LAYOUT_VERSION).unwrap().content_hash();
    let path = config_path("student");
    let overrides: Vec<String> = match ablate {
        Some("no-estimation") => vec!["distill.no_estimation_loss=true".into()],
        Some("mlp") => vec!["distill.mlp_student=true".into()],
        _ => vec![],
    };
    let cfg = ExperimentConfig::load(&path).unwrap().with_overrides(&overrides).unwrap();
    let label = ablate.map(|a| format!("student-{a}")).unwrap_or_else(|| "student".into());
    let dir_name = format!("{label}-{}-{}", &cfg.hash()[..12], &teacher_hash[..12]);
    let dir = cached_run(&dir_name, |out, run| {
        let run_set = format!("run_name={run}");
        let mut args = vec![
            "train-student",
            "--teacher",
            teacher.to_str().unwrap(),
            "--config",
            path.to_str().unwrap(),
            "--out",
            out,
            "--set",
            &run_set,
        ];
        if let Some(a) = ablate {
            args.extend_from_slice(&["--ablate", a]);
        }
        doorlab(&args)
    });
    (cfg, dir)
}

/// Held-out evaluation seed: distinct from the one used for evaluation
/// during training.
fn held_out(cfg: &ExperimentConfig) -> u64 {
    cfg.seed.wrapping_add(7919)
}

fn protocol(cfg: &ExperimentConfig) -> EvalProtocol {
    EvalProtocol {
        num_envs: EVAL_EPISODES,
        episodes: 1,
        ..cfg.eval.clone()
    }
}

// 1 ------------------------------------------------------------------------

fn criterion_1() -> Verdict {
    let spec = DoorSpec::new(OpeningDir::Push, HingeSide::Right, 0.9, 0.04, 0.1, 1.0, 0.05).unwrap();
    let dt = 0.005;
    let mut worst = 0.0f64;
    // Constant net acceleration of 0.1 rad/s² keeps 1000 substeps below the hinge stop.
    for (mass, pretension) in [(15.0, 0.0), (45.0, 10.0), (75.0, 30.0)] {
        let p = DoorDynamicsParams::new(mass, spec.d_w, pretension, 0.0, 0.0, 0.0, 1.0).unwrap();
        let a = 0.1;
        let applied = pretension + a * p.hinge_inertia;
        let mut s = DoorState {
            latched: false,
            ..Default::default()
        };
        for n in 1..=1000u32 {
            s = step_door(&s, &spec, &p, applied, 0.0, dt).unwrap();
            let n = n as f64;
            let theta = a * dt * dt * n * (n + 1.0) / 2.0;
            let omega = a * dt * n;
            worst = worst.max(((s.theta - theta) / theta).abs());
            worst = worst.max(((s.theta_dot - omega) / omega).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut latch_ok = true;
    for _ in 0..1000 {
        let mut p = DoorDynamicsParams::new(
            rng.gen_range(15.0..75.0),
            spec.d_w,
            rng.gen_range(0.0..30.0),
            rng.gen_range(0.0..3.0),
            rng.gen_range(0.0..4.0),
            rng.gen_range(0.0..90.0),
            rng.gen_range(15f64..90.0).to_radians(),
        )
        .unwrap();
        p.tau_handle = p.tau_handle.max(1e-3);
        let mut s = DoorState {
            phi: rng.gen_range(0.0..p.phi_unlatch),
            ..Default::default()
        };
        for _ in 0..200 {
            let hinge = rng.gen_range(-1e4..1e4);
            let handle = rng.gen_range(-50.0..0.0);
            s = step_door(&s, &spec, &p, hinge, handle, dt).unwrap();
            latch_ok &= s.theta == 0.0 && s.theta_dot == 0.0 && s.latched && s.phi < p.phi_unlatch;
        }
    }
    (
        worst <= 1e-9 && latch_ok,
        format!("closed-form max rel error {worst:.2e} over 1000 substeps; latch held exactly: {latch_ok}"),
    )
}

// 2 ------------------------------------------------------------------------

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

fn reward_examples(c: &RewardConfig) -> Vec<bool> {
    let h = Vector3::new(1.0, 2.0, 1.0);
    let mut ok = vec![];
    let t = handle_manipulation_terms(&h, &h, 0.0, true, false, 0.7, 0.7, c);
    ok.push(close(t.r_hm, 3.5));
    let t = handle_manipulation_terms(&(h + Vector3::x()), &h, 0.0, false, false, 0.0, 0.7, c);
    ok.push(close(t.r_ehd, (-1.0f64).exp()));
    let t = handle_manipulation_terms(&(h + Vector3::new(0.0, 0.3, 0.0)), &h, 0.0, false, true, 0.0, 0.7, c);
    ok.push(t.r_plg == -1.0);
    let (r_od, _) = open_door_terms(75f64.to_radians(), Zone::None, Zone::None, OpeningDir::Push, c);
    ok.push(close(r_od, 1.0));
    let (_, r_adp) = open_door_terms(40f64.to_radians(), Zone::Z2, Zone::Z1, OpeningDir::Pull, c);
    ok.push(close(r_adp, 3.0));
    let base = Vector3::new(-1.0, 0.0, 0.0);
    let center = Vector3::new(0.0, 0.0, 1.0);
    ok.push(close(passing_term(&(Vector3::x() * 0.25), &base, &center, &Vector3::x(), false, c), 0.5));
    ok.push(close(passing_term(&(Vector3::x() * -0.5), &base, &center, &Vector3::x(), false, c), -1.0));
    let z = [0.0; ARM_DOF];
    let a0 = [0.0; ACTION_DIM];
    let s = shaping_terms(&z, &z, 0.0, &Vector3::new(0.65, 0.0, 0.0), &Vector3::zeros(), &a0, 2, c);
    ok.push(close(s.r_ma, 12.0) && close(s.r_psa, -0.5) && close(s.r_s, 3.6 - 0.5 - 4.0));
    let mut b = RewardBreakdown {
        r_od: 1.0 - 35.0 / 75.0,
        r_adp: 4.0,
        ..Default::default()
    };
    ok.push(close(compose_reward(&mut b, Stage::Opening, 40f64.to_radians(), OpeningDir::Pull, c), 7.1));
    let mut b = RewardBreakdown {
        r_p: 1.0,
        ..Default::default()
    };
    ok.push(close(compose_reward(&mut b, Stage::Passing, 0.3, OpeningDir::Push, c), 7.5));
    ok
}

fn random_vec(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn random_zone(rng: &mut ChaCha8Rng) -> Zone {
    [Zone::None, Zone::Z1, Zone::Z2][rng.gen_range(0..3)]
}

fn criterion_2() -> Verdict {
    let c = RewardConfig::default();
    let examples = reward_examples(&c);
    let examples_ok = examples.iter().all(|b| *b);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut bounds, mut freeze, mut mono) = (0usize, 0usize, 0usize);
    let n = 1_000_000;
    let theta_max = doorlab::door::DEFAULT_HINGE_LIMIT;
    for _ in 0..n {
        let dir = if rng.gen() { OpeningDir::Push } else { OpeningDir::Pull };
        let phi_max = rng.gen_range(15f64..90.0).to_radians();
        let handle = random_vec(&mut rng, 2.0);
        let terms = |rng: &mut ChaCha8Rng| {
            handle_manipulation_terms(
                &(handle + random_vec(rng, 1.5)),
                &handle,
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.gen(),
                rng.gen(),
                rng.gen_range(0.0..=phi_max),
                phi_max,
                &c,
            )
        };
        let h1 = terms(&mut rng);
        let h2 = terms(&mut rng);
        let theta = rng.gen_range(0.0..=theta_max);
        let (r_od, r_adp) = open_door_terms(theta, random_zone(&mut rng), random_zone(&mut rng), dir, &c);
        let r_p = passing_term(
            &random_vec(&mut rng, 2.0),
            &random_vec(&mut rng, 3.0),
            &random_vec(&mut rng, 1.0),
            &Vector3::x(),
            rng.gen(),
            &c,
        );
        let mut qd = [0.0; ARM_DOF];
        let mut qdd = [0.0; ARM_DOF];
        for i in 0..ARM_DOF {
            qd[i] = rng.gen_range(-10.0..10.0);
            qdd[i] = rng.gen_range(-3000.0..3000.0);
        }
        let mut act = [0.0; ACTION_DIM];
        act.iter_mut().for_each(|a| *a = rng.gen_range(-5.0..5.0));
        let sh = shaping_terms(
            &qd,
            &qdd,
            rng.gen_range(0.0..0.3),
            &random_vec(&mut rng, 1.0),
            &random_vec(&mut rng, 0.2),
            &act,
            rng.gen_range(0..5),
            &c,
        );
        let fill = |h: &HandleTerms| RewardBreakdown {
            r_ehd: h.r_ehd,
            r_th: h.r_th,
            r_eho: h.r_eho,
            r_hg: h.r_hg,
            r_plg: h.r_plg,
            r_hm: h.r_hm,
            r_od,
            r_adp,
            r_p,
            r_ma: sh.r_ma,
            r_pbt: sh.r_pbt,
            r_psa: sh.r_psa,
            r_pcl: sh.r_pcl,
            r_pc: sh.r_pc,
            r_s: sh.r_s,
            ..Default::default()
        };
        let mut b1 = fill(&h1);
        let mut b2 = fill(&h2);
        let t1 = compose_reward(&mut b1, Stage::Opening, theta, dir, &c);
        let t2 = compose_reward(&mut b2, Stage::Opening, theta, dir, &c);
        let mut bp = fill(&h1);
        let tp = compose_reward(&mut bp, Stage::Passing, theta, dir, &c);

        let in_bounds = [&h1, &h2].iter().all(|h| {
            (0.0..=1.0).contains(&h.r_ehd)
                && (0.0..=1.0).contains(&h.r_th)
                && (0.0..=1.0).contains(&h.r_eho)
                && (-1.0..=c.max_handle_reward()).contains(&h.r_hm)
        }) && (0.0..=1.0).contains(&r_od)
            && (0.0..=4.0).contains(&r_adp)
            && r_p <= 1.0
            && (0.0..=12.0).contains(&sh.r_ma)
            && sh.r_s <= c.w_ma * 12.0
            && b1.r_o <= c.max_opening_reward(dir) + 1e-12
            && b1.r_o >= -1.0
            && (t1 - (b1.r_o + b1.r_s)).abs() < 1e-12
            && (tp - (c.max_opening_reward(dir) + r_p + sh.r_s)).abs() < 1e-12;
        bounds += in_bounds as usize;
        if theta >= c.enough_angle() {
            freeze += (t1 == t2) as usize;
        } else {
            freeze += 1;
        }
        // Passing pays at least as much opening reward as any opening state,
        // and the task machine never leaves Passing.
        let mut st = StageState::default();
        let mut ok = bp.r_o >= b1.r_o;
        for _ in 0..8 {
            let next = stage_update(
                st,
                rng.gen_range(0.0..=theta_max),
                dir,
                rng.gen(),
                rng.gen(),
                rng.gen(),
                &c,
            );
            ok &= !(st.stage == Stage::Passing && next.stage == Stage::Opening);
            ok &= !(st.passed_doorway && !next.passed_doorway);
            st = next;
        }
        mono += ok as usize;
    }
    let pass = examples_ok && bounds == n && freeze == n && mono == n;
    (
        pass,
        format!(
            "examples {}/{}; over {n} random states: bounds {bounds}, freeze rule {freeze}, stage monotonicity {mono}",
            examples.iter().filter(|b| **b).count(),
            examples.len()
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn ks_uniform(xs: &mut [f64], lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let u = (x - lo) / (hi - lo);
            (((i + 1) as f64) / n - u).max(u - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn criterion_3() -> Verdict {
    let r = RandomizationRanges::default();
    let robot = RobotConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let mut cols: Vec<(&str, [f64; 2], Vec<f64>)> = vec![
        ("d_wall", r.d_wall, vec![]),
        ("d_center", r.d_center, vec![]),
        ("yaw_deg", r.yaw_deg, vec![]),
        ("init_vx", r.init_vx, vec![]),
        ("init_vy", r.init_vy, vec![]),
        ("mass", r.mass, vec![]),
        ("tau_hinge", r.tau_hinge, vec![]),
        ("tau_handle", r.tau_handle, vec![]),
        ("k_ar", r.k_ar, vec![]),
        ("alpha_dc", r.alpha_dc, vec![]),
        ("phi_max_deg", r.phi_max_deg, vec![]),
        ("kp", r.kp, vec![]),
        ("kd", r.kd, vec![]),
        ("d_w", r.d_w, vec![]),
        ("d_t", r.d_t, vec![]),
        ("h_l", r.h_l, vec![]),
        ("h_h", r.h_h, vec![]),
        ("h_o", r.h_o, vec![]),
    ];
    let (mut hinge_zero, mut handle_zero, mut damping_zero) = (0usize, 0usize, 0usize);
    let mut types = [0usize; 4];
    for _ in 0..n {
        let s = sample_episode(&mut rng, &r, &robot).unwrap();
        let p = &s.params;
        let yaw = wrap_angle(s.base.yaw - s.spec.wall_pose.yaw);
        let (sn, cs) = s.base.yaw.sin_cos();
        let vx = cs * s.base.vx + sn * s.base.vy;
        let vy = -sn * s.base.vx + cs * s.base.vy;
        let mut push = |name: &str, v: f64| cols.iter_mut().find(|c| c.0 == name).unwrap().2.push(v);
        push("d_wall", s.d_wall);
        push("d_center", s.d_center);
        push("yaw_deg", yaw.to_degrees());
        push("init_vx", vx);
        push("init_vy", vy);
        push("mass", p.mass);
        push("phi_max_deg", p.phi_max.to_degrees());
        push("d_w", s.spec.d_w);
        push("d_t", s.spec.d_t);
        push("h_l", s.spec.h_l);
        push("h_h", s.spec.h_h);
        push("h_o", s.spec.h_o);
        push("kp", s.gains.kp[0]);
        push("kd", s.gains.kd[0]);
        if p.tau_hinge == 0.0 {
            hinge_zero += 1;
        } else {
            push("tau_hinge", p.tau_hinge);
        }
        if p.tau_handle == 0.0 {
            handle_zero += 1;
        } else {
            push("tau_handle", p.tau_handle);
        }
        if p.k_ar == 0.0 {
            damping_zero += 1;
        } else {
            push("k_ar", p.k_ar);
            if p.tau_hinge > 0.0 {
                push("alpha_dc", p.k_dc / p.tau_hinge);
            }
        }
        types[s.spec.door_type().index()] += 1;
    }
    let mut worst_ks = (0.0f64, "");
    let mut in_range = true;
    for (name, [lo, hi], xs) in cols.iter_mut() {
        in_range &= xs.iter().all(|x| *x >= *lo - 1e-9 && *x <= *hi + 1e-9);
        let d = ks_uniform(xs, *lo, *hi);
        if d > worst_ks.0 {
            worst_ks = (d, name);
        }
    }
    let f = |k: usize| k as f64 / n as f64;
    let zeros = [f(hinge_zero), f(handle_zero), f(damping_zero)];
    let zeros_ok = (0.19..=0.21).contains(&zeros[0])
        && (0.19..=0.21).contains(&zeros[1])
        && (0.39..=0.41).contains(&zeros[2]);
    let types_ok = types.iter().all(|t| (f(*t) - 0.25).abs() < 0.01);
    (
        in_range && zeros_ok && types_ok && worst_ks.0 <= 0.01,
        format!(
            "{n} draws; ranges respected {in_range}; zero fractions hinge {:.4} handle {:.4} damping {:.4}; max KS {:.4} ({}); door types {types:?}",
            zeros[0], zeros[1], zeros[2], worst_ks.0, worst_ks.1
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn sampled(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Option<Vec<usize>> {
    (n > k).then(|| (0..k).map(|_| rng.gen_range(0..n)).collect())
}

fn check_linear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = Linear::new(5, 4, 0);
    let p = rand_vec(&mut rng, l.num_params());
    let (batch, x, w) = (3, rand_vec(&mut rng, 15), rand_vec(&mut rng, 12));
    let loss = |p: &[f64]| {
        let mut y = vec![0.0; 12];
        l.forward(p, &x, batch, &mut y);
        y.iter().zip(&w).map(|(a, b)| a * a * b).sum::<f64>()
    };
    let mut y = vec![0.0; 12];
    l.forward(&p, &x, batch, &mut y);
    let dy: Vec<f64> = y.iter().zip(&w).map(|(a, b)| 2.0 * a * b).collect();
    let mut g = vec![0.0; p.len()];
    l.backward(&p, &x, &dy, batch, &mut g, None);
    check_gradients(&p, &g, loss, None).max_rel_error
}

fn check_mlp(seed: u64, act: Activation) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Mlp::new(&[6, 8, 5, 3], act, 0);
    let mut p = vec![0.0; m.num_params()];
    m.init(&mut p, 1.0, &mut rng);
    let batch = 4;
    let x = rand_vec(&mut rng, batch * 6);
    let w = rand_vec(&mut rng, batch * 3);
    let loss = |p: &[f64]| {
        let c = m.forward(p, &x, batch);
        c.output().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let c = m.forward(&p, &x, batch);
    let mut g = vec![0.0; p.len()];
    m.backward(&p, &c, &w, &mut g, false);
    check_gradients(&p, &g, loss, None).max_rel_error
}

fn check_gru(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = Gru::new(4, 5, 0);
    let mut p = vec![0.0; cell.num_params()];
    cell.init(&mut p, &mut rng);
    let batch = 3;
    let x = rand_vec(&mut rng, batch * 4);
    let h = rand_vec(&mut rng, batch * 5);
    let w = rand_vec(&mut rng, batch * 5);
    let loss = |p: &[f64]| {
        let (out, _) = cell.forward(p, &x, &h, batch);
        out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, c) = cell.forward(&p, &x, &h, batch);
    let mut g = vec![0.0; p.len()];
    cell.backward(&p, &c, &w, &mut g);
    check_gradients(&p, &g, loss, None).max_rel_error
}

fn check_actor_critic(seed: u64, spec: ActorCriticSpec) -> f64 {
    let ac = ActorCritic::new(spec.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<f64> = ac.init(&mut rng);
    for v in p.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    let batch = 3;
    let obs = rand_vec(&mut rng, batch * spec.obs_dim);
    let wm = rand_vec(&mut rng, batch * spec.act_dim);
    let wv = rand_vec(&mut rng, batch);
    let wl = rand_vec(&mut rng, spec.act_dim);
    let loss = |p: &[f64]| {
        let c = ac.forward(p, &obs, batch);
        let a: f64 = c.mean().iter().zip(&wm).map(|(x, w)| x * w).sum();
        let v: f64 = c.value().iter().zip(&wv).map(|(x, w)| x * x * w).sum();
        let l: f64 = ac.log_std(p).iter().zip(&wl).map(|(x, w)| x.exp() * w).sum();
        a + v + l
    };
    let c = ac.forward(&p, &obs, batch);
    let dv: Vec<f64> = c.value().iter().zip(&wv).map(|(x, w)| 2.0 * x * w).collect();
    let dl: Vec<f64> = ac.log_std(&p).iter().zip(&wl).map(|(x, w)| x.exp() * w).collect();
    let mut g = vec![0.0; p.len()];
    ac.backward(&p, &c, &wm, &dv, &dl, &mut g);
    let idx = sampled(&mut rng, p.len(), 400);
    check_gradients(&p, &g, loss, idx.as_deref()).max_rel_error
}

fn check_student(seed: u64, spec: StudentSpec) -> f64 {
    let s = Student::new(spec.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<f64> = s.init(&mut rng);
    let (t_len, batch) = (6, 2);
    let obs = rand_vec(&mut rng, t_len * batch * spec.obs_dim);
    let h0 = rand_vec(&mut rng, batch * spec.hidden);
    let mut resets = vec![false; t_len * batch];
    resets[3 * batch + 1] = true;
    let wa = rand_vec(&mut rng, t_len * batch * spec.act_dim);
    let wd = rand_vec(&mut rng, t_len * batch * spec.decoder_dim);
    let (ad, dd) = (spec.act_dim, spec.decoder_dim);
    let loss = |p: &[f64]| {
        let cs = s.unroll(p, &obs, &h0, &resets, t_len, batch);
        cs.iter()
            .enumerate()
            .map(|(t, c)| {
                c.action().iter().zip(&wa[t * batch * ad..]).map(|(x, w)| x * w).sum::<f64>()
                    + c.dec.iter().zip(&wd[t * batch * dd..]).map(|(x, w)| x * w).sum::<f64>()
            })
            .sum::<f64>()
    };
    let cs = s.unroll(&p, &obs, &h0, &resets, t_len, batch);
    let mut g = vec![0.0; p.len()];
    s.bptt(&p, &cs, &resets, &wa, &wd, t_len, &mut g);
    let idx = sampled(&mut rng, p.len(), 400);
    check_gradients(&p, &g, loss, idx.as_deref()).max_rel_error
}

fn criterion_4() -> Verdict {
    let small_ac = ActorCriticSpec {
        obs_dim: 5,
        act_dim: 3,
        hidden: vec![6, 4, 4],
        init_log_std: -0.5,
    };
    let small_student = |core| StudentSpec {
        obs_dim: 4,
        act_dim: 3,
        hidden: 5,
        head_hidden: vec![4],
        decoder_dim: 6,
        core,
    };
    let mut worst: Vec<(&str, f64)> = vec![];
    let mut record = |name: &'static str, f: &dyn Fn(u64) -> f64| {
        let e = (0..3).map(f).fold(0.0, f64::max);
        worst.push((name, e));
    };
    record("linear", &check_linear);
    record("mlp-tanh", &|s| check_mlp(s, Activation::Tanh));
    record("mlp-identity", &|s| check_mlp(s, Activation::Identity));
    record("gru", &check_gru);
    record("actor-critic-small", &|s| check_actor_critic(s, small_ac.clone()));
    record("actor-critic", &|s| check_actor_critic(s, ActorCriticSpec::default()));
    record("student-gru-small", &|s| check_student(s, small_student(Core::Gru)));
    record("student-mlp-small", &|s| check_student(s, small_student(Core::Mlp)));
    record("student-gru", &|s| check_student(s, StudentSpec::default()));
    record("student-mlp", &|s| {
        check_student(
            s,
            StudentSpec {
                core: Core::Mlp,
                ..Default::default()
            },
        )
    });
    let pass = worst.iter().all(|(_, e)| *e <= 1e-4);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    (pass, format!("max rel error over 3 seeds: {detail}"))
}

// 5 ------------------------------------------------------------------------

fn criterion_5() -> Verdict {
    let (cfg, dir) = teacher_run("smoke");
    let mut teacher = TeacherPolicy::load(&dir.join("best.ckpt")).unwrap();
    let grid = eval::evaluate_grid(&mut teacher, &cfg.settings(), &protocol(&cfg), held_out(&cfg));
    let all = grid.iter().find(|g| g.door_type == "all").unwrap();
    let budget_ok = cfg.ppo.total_steps <= 10_000_000;
    (
        all.open.rate >= 0.9 && budget_ok,
        format!(
            "fixed push-right door, budget {} steps: opened_enough {:.3} [{:.3}, {:.3}] on {} held-out episodes",
            cfg.ppo.total_steps, all.open.rate, all.open.lo, all.open.hi, all.episodes
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn pass_rate(name: &str) -> (u64, eval::Rate) {
    let (cfg, dir) = teacher_run(name);
    let mut teacher = TeacherPolicy::load(&dir.join("best.ckpt")).unwrap();
    let grid = eval::evaluate_grid(&mut teacher, &cfg.settings(), &protocol(&cfg), held_out(&cfg));
    let all = grid.into_iter().find(|g| g.door_type == "all").unwrap();
    (cfg.ppo.total_steps, all.pass)
}

fn criterion_6() -> Verdict {
    let (b1, nominal) = pass_rate("teacher");
    let (b2, ablated) = pass_rate("teacher_ablated");
    let gap = nominal.rate - ablated.rate;
    (
        gap >= 0.20 && b1 == b2,
        format!(
            "pass-through nominal {:.3} vs student-observation teacher {:.3} (gap {:+.1} pp) at {b1} steps each",
            nominal.rate,
            ablated.rate,
            100.0 * gap
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn final_imitation(dir: &Path) -> (f64, u64) {
    let text = std::fs::read_to_string(dir.join("curves.jsonl")).unwrap();
    let recs: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let k = (recs.len() / 10).max(1);
    let tail = &recs[recs.len() - k..];
    let mean = tail.iter().map(|r| r["imitation"].as_f64().unwrap()).sum::<f64>() / k as f64;
    (mean, recs.last().unwrap()["env_steps"].as_u64().unwrap())
}

fn criterion_7() -> Verdict {
    let (_, nominal) = student_run(None);
    let (_, mlp) = student_run(Some("mlp"));
    let (_, noest) = student_run(Some("no-estimation"));
    let (l_gru, s1) = final_imitation(&nominal);
    let (l_mlp, s2) = final_imitation(&mlp);
    let (l_noest, s3) = final_imitation(&noest);
    let rel = (l_noest - l_gru).abs() / l_gru;
    (
        l_gru < l_mlp && rel <= 0.10 && s1 == s2 && s2 == s3,
        format!(
            "final imitation loss: recurrent {l_gru:.5}, MLP {l_mlp:.5}, recurrent without estimation {l_noest:.5} ({:.1}% apart) at {s1} steps",
            100.0 * rel
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn criterion_8() -> Verdict {
    let (cfg, dir) = student_run(None);
    let mut st = StudentPolicy::load(&dir.join("final.ckpt"), EVAL_EPISODES).unwrap();
    let (_, summary) = eval::export_type_probs(
        &mut st,
        Arc::new(cfg.settings()),
        eval::eval_seed(held_out(&cfg)),
        EVAL_EPISODES,
        1,
    );
    let r = summary.final_correct;
    (
        r.rate >= 0.9,
        format!(
            "decoder argmax correct at episode end in {:.3} [{:.3}, {:.3}] of {} episodes; mean entropy before contact {:.3}, at end {:.3}",
            r.rate, r.lo, r.hi, r.trials, summary.entropy_before_contact, summary.entropy_at_end
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn criterion_9() -> Verdict {
    let (cfg, dir) = student_run(None);
    let mut st = StudentPolicy::load(&dir.join("final.ckpt"), EVAL_EPISODES).unwrap();
    let rows = eval::resistance_sweep(
        &mut st,
        &cfg.settings(),
        &protocol(&cfg),
        &cfg.eval.sweep_levels,
        held_out(&cfg),
    );
    let checks = eval::check_sweep(&rows);
    let table = rows
        .iter()
        .map(|r| format!("{:.0}:{:.3}", r.level, r.pass.rate))
        .collect::<Vec<_>>()
        .join(" ");
    // A flat zero curve satisfies both checks without showing any drop.
    let has_trend = rows.iter().any(|r| r.pass.rate > 0.10);
    (
        checks.non_increasing && checks.near_zero_above_50 && checks.open_ge_pass && has_trend,
        format!(
            "pass rate by N·m {table}; non-increasing {}, <=10% above 50 N·m {}, some level above 10% {has_trend}",
            checks.non_increasing, checks.near_zero_above_50
        ),
    )
}

// 10 -----------------------------------------------------------------------

fn stepping_agrees() -> bool {
    let settings = Arc::new(EnvSettings::default());
    let n = 6;
    let mut a = VecEnv::new(settings.clone(), 21, n);
    let mut b = VecEnv::new(settings.clone(), 21, n);
    let mut singles: Vec<Env> = (0..n as u64).map(|i| Env::new(settings.clone(), 21, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut oa, mut ob, mut os) = (vec![0f32; n * TEACHER_OBS_DIM], vec![0f32; n * TEACHER_OBS_DIM], vec![0f32; TEACHER_OBS_DIM]);
    let mut same = true;
    for _ in 0..1200 {
        let actions: Vec<Action> = (0..n).map(|_| doorlab::env::random_action(&mut rng)).collect();
        let ra = a.step(&actions);
        let rb = b.step_partitioned(&actions, 3);
        a.teacher_obs(&mut oa);
        b.teacher_obs(&mut ob);
        same &= ra == rb && oa == ob;
        for (i, e) in singles.iter_mut().enumerate() {
            let r = e.step(&actions[i]);
            e.teacher_obs(&mut os);
            same &= r == ra[i] && os[..] == oa[i * TEACHER_OBS_DIM..(i + 1) * TEACHER_OBS_DIM];
            if r.done {
                e.reset_next();
            }
        }
        a.reset_done(&ra);
        b.reset_done(&rb);
    }
    same
}

fn dir_files(d: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.jsonl")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let tiny: Vec<String> = [
        "env.horizon=10",
        "ppo.num_envs=2",
        "ppo.rollout_len=10",
        "ppo.total_steps=40",
        "ppo.hidden=[16]",
        "ppo.minibatches=2",
        "ppo.epochs=1",
        "ppo.eval_every=1",
        "ppo.eval_envs=2",
        "distill.num_envs=2",
        "distill.window=5",
        "distill.total_steps=40",
        "distill.hidden=8",
        "distill.head_hidden=[8]",
        "distill.eval_every=2",
        "distill.eval_envs=2",
        "eval.num_envs=3",
        "eval.sweep_levels=[0.0, 30.0, 60.0]",
        "eval.repeat_per_side=2",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect();
    let src = tmp.path().join("src");
    let src_s = src.to_str().unwrap().to_string();
    let mut base: Vec<String> = vec!["--out".into(), src_s.clone(), "--seed".into(), "3".into()];
    base.extend(tiny.iter().cloned());
    let run = |args: &[&str], extra: &[String]| {
        let mut a: Vec<&str> = args.to_vec();
        a.extend(extra.iter().map(|s| s.as_str()));
        doorlab(&a);
    };
    run(&["train-teacher", "--set", "run_name=teacher"], &base);
    let teacher = src.join("teacher").join("final.ckpt");
    run(&["train-student", "--teacher", teacher.to_str().unwrap(), "--set", "run_name=student"], &base);
    let student = src.join("student").join("final.ckpt");
    let (t, s) = (teacher.to_str().unwrap(), student.to_str().unwrap());
    let subcommands: Vec<Vec<&str>> = vec![
        vec!["train-teacher"],
        vec!["train-student", "--teacher", t],
        vec!["eval", "--ckpt", t],
        vec!["sweep", "--ckpt", s],
        vec!["export-hidden", "--ckpt", s, "--episodes", "3"],
        vec!["export-type-probs", "--ckpt", s, "--episodes", "3"],
        vec!["repeat", "--ckpt", t],
        vec!["replay", "--scripted", "--steps", "10"],
    ];
    let mut differing = vec![];
    for sub in &subcommands {
        // Same command line twice; the first run directory is cleared in between.
        let mut outs = vec![];
        let out = tmp.path().join("rerun");
        for _ in 0..2 {
            let _ = std::fs::remove_dir_all(out.join(sub[0]));
            let mut extra: Vec<String> = vec!["--out".into(), out.to_str().unwrap().into(), "--seed".into(), "3".into()];
            extra.extend(tiny.iter().cloned());
            extra.extend(["--set".to_string(), format!("run_name={}", sub[0])]);
            run(sub, &extra);
            outs.push(dir_files(&out.join(sub[0])));
        }
        if outs[0] != outs[1] || outs[0].is_empty() {
            differing.push(sub[0]);
        }
    }
    let stepping = stepping_agrees();
    (
        differing.is_empty() && stepping,
        format!(
            "{} subcommands rerun byte-identical ({}); vectorized, partitioned and sequential stepping bit-exact: {stepping}",
            subcommands.len() - differing.len(),
            if differing.is_empty() { "all".to_string() } else { format!("differing: {differing:?}") }
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("dynamics oracle", criterion_1),
        ("reward unit suite", criterion_2),
        ("sampler statistics", criterion_3),
        ("gradient checks", criterion_4),
        ("teacher smoke training", criterion_5),
        ("privilege ablation", criterion_6),
        ("distillation ablations", criterion_7),
        ("door-type inference", criterion_8),
        ("resistance sweep trend", criterion_9),
        ("determinism", criterion_10),
    ];
    // DOORLAB_ACCEPTANCE=1,2,3 restricts the run; skipped criteria count as failures.
    let only: Option<Vec<usize>> = std::env::var("DOORLAB_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = vec![];
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            println!("criterion {:>2} SKIP {name}", i + 1);
            failed.push(i + 1);
            continue;
        }
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "criterion {:>2} {} {name}: {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn reward_examples_hold() {
    assert!(reward_examples(&RewardConfig::default()).iter().all(|b| *b));
}

#[test]
fn door_type_names_are_distinct() {
    let names: std::collections::HashSet<_> = DoorType::ALL.iter().map(|t| t.name()).collect();
    assert_eq!(names.len(), 4);
}
