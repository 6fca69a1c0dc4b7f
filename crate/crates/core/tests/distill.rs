use std::path::{Path, PathBuf};
use std::sync::Arc;

use doorlab::distill::*;
use doorlab::env::{EnvSettings, VecEnv, LAYOUT_VERSION};
use doorlab::nn::load_checkpoint;
use doorlab::policy::{StudentPolicy, TeacherPolicy};
use doorlab::ppo::{train_teacher, PpoConfig};
use doorlab::runlog::Stamp;

fn settings() -> Arc<EnvSettings> {
    let mut s = EnvSettings::default();
    s.env.horizon = 12;
    Arc::new(s)
}

fn tiny_teacher(dir: &Path) -> PathBuf {
    let cfg = PpoConfig {
        num_envs: 2,
        rollout_len: 8,
        hidden: vec![16],
        minibatches: 2,
        epochs: 1,
        eval_every: 1,
        eval_envs: 2,
        total_steps: 32,
        ..Default::default()
    };
    let s = train_teacher(&cfg, settings(), 2, &dir.join("teacher"), &Stamp::new("t", 2)).unwrap();
    s.final_checkpoint
}

fn tiny_cfg() -> DistillConfig {
    DistillConfig {
        num_envs: 3,
        window: 5,
        total_steps: 60,
        hidden: 8,
        head_hidden: vec![8],
        eval_every: 2,
        eval_envs: 2,
        ..Default::default()
    }
}

#[test]
fn teacher_checkpoint_is_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let teacher = tiny_teacher(dir.path());
    let before = std::fs::read(&teacher).unwrap();
    let s = train_student(&teacher, &tiny_cfg(), settings(), 4, &dir.path().join("s"), &Stamp::new("s", 4)).unwrap();
    assert_eq!(std::fs::read(&teacher).unwrap(), before);
    assert_eq!(s.teacher_hash, load_checkpoint(&teacher, LAYOUT_VERSION).unwrap().content_hash());
    assert_eq!(s.env_steps, 60);
    assert!(s.final_imitation.is_finite());
}

#[test]
fn labels_depend_only_on_state() {
    let dir = tempfile::tempdir().unwrap();
    let teacher = TeacherPolicy::load(&tiny_teacher(dir.path())).unwrap();
    let a = VecEnv::new(settings(), 9, 4);
    let b = VecEnv::new(settings(), 9, 4);
    let la = label_with_teacher(&teacher, &a);
    assert_eq!(la, label_with_teacher(&teacher, &b));
    assert_eq!(la.actions.len(), 4 * 9);
    assert_eq!(la.targets.len(), 4 * doorlab::env::ESTIMATION_DIM);
    for (e, t) in a.envs.iter().zip(&la.door_type) {
        assert_eq!(e.door_type().index(), *t);
    }
}

#[test]
fn student_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let teacher = tiny_teacher(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        train_student(&teacher, &tiny_cfg(), settings(), 6, &out, &Stamp::new("s", 6)).unwrap();
        (
            std::fs::read(out.join("curves.jsonl")).unwrap(),
            std::fs::read(out.join("final.ckpt")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn hidden_state_is_zeroed_on_reset() {
    let dir = tempfile::tempdir().unwrap();
    let teacher = tiny_teacher(dir.path());
    let out = dir.path().join("s");
    let s = train_student(&teacher, &tiny_cfg(), settings(), 4, &out, &Stamp::new("s", 4)).unwrap();
    let mut st = StudentPolicy::load(&s.checkpoint, 2).unwrap();
    let hd = st.net.hidden();
    let mut venv = VecEnv::new(settings(), 1, 2);
    let mut obs = vec![0.0; 2 * doorlab::env::STUDENT_OBS_DIM];
    for _ in 0..3 {
        venv.student_obs(&mut obs);
        st.step(&obs, 2);
    }
    assert!(st.h.iter().any(|v| *v != 0.0));
    st.reset_env(1);
    assert!(st.h[hd..].iter().all(|v| *v == 0.0));
    assert!(st.h[..hd].iter().any(|v| *v != 0.0));
}

#[test]
fn ablations_train_and_record_their_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let teacher = tiny_teacher(dir.path());
    for (name, cfg) in [
        ("mlp", DistillConfig { mlp_student: true, ..tiny_cfg() }),
        ("noest", DistillConfig { no_estimation_loss: true, ..tiny_cfg() }),
    ] {
        let s = train_student(&teacher, &cfg, settings(), 4, &dir.path().join(name), &Stamp::new(name, 4)).unwrap();
        let ck = StudentPolicy::load(&s.checkpoint, 1).unwrap();
        assert_eq!(ck.net.spec, cfg.spec());
        if cfg.no_estimation_loss {
            // Estimation losses are still logged but do not enter the objective.
            let curves = std::fs::read_to_string(dir.path().join(name).join("curves.jsonl")).unwrap();
            for line in curves.lines() {
                let v: serde_json::Value = serde_json::from_str(line).unwrap();
                assert_eq!(v["total"], v["imitation"]);
            }
        }
    }
}
