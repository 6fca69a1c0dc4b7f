use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use doorlab::config::{ConfigError, ExperimentConfig};
use doorlab::distill::{train_student, DistillError};
use doorlab::env::{trace_row, write_trace_csv, Env, TraceRow};
use doorlab::eval::{self, check_sweep, grid_csv_rows, linear_separability, pca, project, GRID_HEADER};
use doorlab::nn::CheckpointError;
use doorlab::policy::{PolicyError, StudentPolicy, TeacherPolicy};
use doorlab::ppo::{train_teacher, PpoError};
use doorlab::robot::{Action, ACTION_DIM};
use doorlab::runlog::{write_csv, JsonlWriter, Stamp};
use doorlab::scripted::ScriptedController;

#[derive(Parser)]
#[command(name = "doorlab", about = "Door traversal: teacher PPO, student distillation, evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; the run directory is <out>/<run_name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. --set ppo.lr=1e-4
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    NoEstimation,
    Mlp,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the privileged teacher with PPO.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Distill a teacher checkpoint into the recurrent student.
    TrainStudent {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        ablate: Option<Ablation>,
        #[command(flatten)]
        common: Common,
    },
    /// Success grid per door type.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Evaluation protocol file (TOML, the `eval` section layout).
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Success rates at pinned hinge resistances.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated levels in N·m.
        #[arg(long, value_delimiter = ',')]
        resistances: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Student hidden states with labels, plus a 2-component PCA.
    ExportHidden {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 64)]
        episodes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Student door-type probabilities per step.
    ExportTypeProbs {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 64)]
        episodes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fixed door, n trials from each side.
    Repeat {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Drive one environment with an action file, or record a scripted run.
    Replay {
        /// CSV of actions (header a0..a8), one row per control step.
        #[arg(long, conflicts_with = "scripted")]
        actions: Option<PathBuf>,
        /// Record the built-in hook controller instead.
        #[arg(long)]
        scripted: bool,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        env_index: u64,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure classes; each maps to its own exit status.
#[derive(Debug)]
enum Failure {
    Config(String),
    CheckpointNotFound(String),
    CheckpointMismatch(String),
    NanAbort(String),
    Locked(String),
    Io(String),
}

impl Failure {
    fn class(&self) -> (&'static str, u8) {
        match self {
            Failure::Config(_) => ("config", 2),
            Failure::CheckpointNotFound(_) => ("checkpoint not found", 3),
            Failure::CheckpointMismatch(_) => ("checkpoint mismatch", 4),
            Failure::NanAbort(_) => ("NaN abort", 5),
            Failure::Locked(_) => ("run locked", 6),
            Failure::Io(_) => ("io", 1),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::CheckpointNotFound(m)
            | Failure::CheckpointMismatch(m)
            | Failure::NanAbort(m)
            | Failure::Locked(m)
            | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::NotFound(_) => Failure::CheckpointNotFound(e.to_string()),
            CheckpointError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::CheckpointMismatch(e.to_string()),
        }
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Checkpoint(c) => c.into(),
            other => Failure::CheckpointMismatch(other.to_string()),
        }
    }
}

impl From<PpoError> for Failure {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::Divergence { .. } => Failure::NanAbort(e.to_string()),
            PpoError::Config(m) => Failure::Config(m),
            PpoError::Checkpoint(c) => c.into(),
            PpoError::Io(io) => io.into(),
        }
    }
}

impl From<DistillError> for Failure {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::Divergence { .. } => Failure::NanAbort(e.to_string()),
            DistillError::Config(m) => Failure::Config(m),
            DistillError::Checkpoint(c) => c.into(),
            DistillError::Policy(p) => p.into(),
            DistillError::Io(io) => io.into(),
            DistillError::TeacherObs | DistillError::TeacherModified => Failure::CheckpointMismatch(e.to_string()),
        }
    }
}

type Res<T> = Result<T, Failure>;

/// Resolved configuration and the locked run directory.
struct Run {
    cfg: ExperimentConfig,
    dir: PathBuf,
    stamp: Stamp,
    lock: PathBuf,
}

impl Run {
    fn open(common: &Common, extra: &[String]) -> Res<Self> {
        let base = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let mut sets = common.set.clone();
        sets.extend_from_slice(extra);
        let mut cfg = base.with_overrides(&sets)?;
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(o) = &common.out {
            cfg.out_dir = o.clone();
        }
        let dir = cfg.run_dir();
        fs::create_dir_all(&dir)?;
        let lock = dir.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|_| Failure::Locked(format!("{} is in use by another run", dir.display())))?;
        let hash = cfg.hash();
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        fs::write(dir.join("config.hash"), format!("{hash}\n"))?;
        let stamp = Stamp::new(&hash, cfg.seed);
        Ok(Self { cfg, dir, stamp, lock })
    }

    /// Write the single-record run log. Paths inside the run directory are
    /// made relative so logs do not depend on where the run lives.
    fn record(&self, rec: serde_json::Value) -> Res<()> {
        let mut rec = rec;
        relativize(&mut rec, &format!("{}/", self.dir.display()));
        let mut w = JsonlWriter::create(&self.dir.join("run.jsonl"), &self.stamp)?;
        w.write(&rec)?;
        Ok(())
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

enum AnyPolicy {
    Teacher(TeacherPolicy),
    Student(StudentPolicy),
}

fn load_any(p: &Path, n: usize) -> Res<AnyPolicy> {
    let ck = doorlab::nn::load_checkpoint(p, doorlab::env::LAYOUT_VERSION)?;
    match ck.header.spec {
        doorlab::nn::NetworkSpec::ActorCritic(_) => Ok(AnyPolicy::Teacher(TeacherPolicy::from_checkpoint(&ck)?)),
        doorlab::nn::NetworkSpec::Student(_) => Ok(AnyPolicy::Student(StudentPolicy::from_checkpoint(&ck, n)?)),
    }
}

impl AnyPolicy {
    fn as_dyn(&mut self) -> &mut dyn doorlab::policy::Policy {
        match self {
            AnyPolicy::Teacher(t) => t,
            AnyPolicy::Student(s) => s,
        }
    }
}

fn relativize(v: &mut serde_json::Value, prefix: &str) {
    match v {
        serde_json::Value::String(s) => {
            if let Some(rest) = s.strip_prefix(prefix) {
                *s = rest.to_string();
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| relativize(x, prefix)),
        serde_json::Value::Object(m) => m.values_mut().for_each(|x| relativize(x, prefix)),
        _ => {}
    }
}

fn check_exists(p: &Path) -> Res<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Failure::CheckpointNotFound(format!("checkpoint not found: {}", p.display())))
    }
}

fn read_actions(p: &Path) -> Res<Vec<Action>> {
    let text = fs::read_to_string(p)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('a') {
            continue;
        }
        let v: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let v = v.map_err(|e| Failure::Config(format!("{}:{}: {e}", p.display(), i + 1)))?;
        if v.len() != ACTION_DIM {
            return Err(Failure::Config(format!(
                "{}:{}: expected {ACTION_DIM} values, found {}",
                p.display(),
                i + 1,
                v.len()
            )));
        }
        let mut a = [0.0; ACTION_DIM];
        a.copy_from_slice(&v);
        out.push(Action(a));
    }
    Ok(out)
}

fn write_actions(p: &Path, stamp: &Stamp, actions: &[Action]) -> Res<()> {
    let header: Vec<String> = (0..ACTION_DIM).map(|i| format!("a{i}")).collect();
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = actions
        .iter()
        .map(|a| a.0.iter().map(|v| format!("{v:e}")).collect())
        .collect();
    Ok(write_csv(p, stamp, &header, &rows)?)
}

fn write_trace(p: &Path, stamp: &Stamp, rows: &[TraceRow]) -> Res<()> {
    let mut w = BufWriter::new(File::create(p)?);
    writeln!(w, "{}", stamp.csv_comment())?;
    write_trace_csv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::TrainTeacher { common } => {
            let r = Run::open(&common, &[])?;
            let settings = Arc::new(r.cfg.settings());
            let s = train_teacher(&r.cfg.ppo, settings, r.cfg.seed, &r.dir, &r.stamp)?;
            r.record(serde_json::json!({"event": "train_teacher", "summary": s}))?;
            println!(
                "teacher: {} updates, {} env steps, best open {:.3} pass {:.3} at update {}",
                s.updates, s.env_steps, s.best_open_rate, s.best_pass_rate, s.best_update
            );
        }
        Cmd::TrainStudent { teacher, ablate, common } => {
            check_exists(&teacher)?;
            let extra: Vec<String> = match ablate {
                Some(Ablation::NoEstimation) => vec!["distill.no_estimation_loss=true".into()],
                Some(Ablation::Mlp) => vec!["distill.mlp_student=true".into()],
                None => vec![],
            };
            let r = Run::open(&common, &extra)?;
            let settings = Arc::new(r.cfg.settings());
            let s = train_student(&teacher, &r.cfg.distill, settings, r.cfg.seed, &r.dir, &r.stamp)?;
            r.record(serde_json::json!({"event": "train_student", "summary": s}))?;
            println!(
                "student: {} updates, final imitation {:.5}, open {:.3} pass {:.3}",
                s.updates, s.final_imitation, s.final_open_rate, s.final_pass_rate
            );
        }
        Cmd::Eval { ckpt, protocol, common } => {
            check_exists(&ckpt)?;
            let r = Run::open(&common, &[])?;
            let proto = match protocol {
                Some(p) => {
                    let text = fs::read_to_string(&p)?;
                    doorlab::config::ExperimentConfig::parse(&format!("[eval]\n{text}"))?.eval
                }
                None => r.cfg.eval.clone(),
            };
            let mut pol = load_any(&ckpt, proto.num_envs)?;
            let rows = eval::evaluate_grid(pol.as_dyn(), &r.cfg.settings(), &proto, r.cfg.seed);
            write_csv(&r.dir.join("grid.csv"), &r.stamp, &GRID_HEADER, &grid_csv_rows(&rows))?;
            r.record(serde_json::json!({"event": "eval", "protocol": proto, "grid": rows}))?;
            println!("{:<12} {:>8} {:>22} {:>22}", "door_type", "episodes", "opened_enough", "passed_through");
            for g in &rows {
                println!(
                    "{:<12} {:>8} {:>8.3} [{:.3},{:.3}] {:>8.3} [{:.3},{:.3}]",
                    g.door_type, g.episodes, g.open.rate, g.open.lo, g.open.hi, g.pass.rate, g.pass.lo, g.pass.hi
                );
            }
        }
        Cmd::Sweep { ckpt, resistances, common } => {
            check_exists(&ckpt)?;
            let r = Run::open(&common, &[])?;
            let levels = resistances.unwrap_or_else(|| r.cfg.eval.sweep_levels.clone());
            let mut pol = load_any(&ckpt, r.cfg.eval.num_envs)?;
            let rows = eval::resistance_sweep(pol.as_dyn(), &r.cfg.settings(), &r.cfg.eval, &levels, r.cfg.seed);
            let checks = check_sweep(&rows);
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|s| {
                    vec![
                        format!("{}", s.level),
                        format!("{:.6}", s.open.rate),
                        format!("{:.6}", s.pass.rate),
                        format!("{:.6}", s.pass.lo),
                        format!("{:.6}", s.pass.hi),
                        s.pass.trials.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &r.dir.join("sweep.csv"),
                &r.stamp,
                &["level", "open_rate", "pass_rate", "pass_lo", "pass_hi", "episodes"],
                &body,
            )?;
            r.record(serde_json::json!({"event": "sweep", "rows": rows, "checks": checks}))?;
            for s in &rows {
                println!("{:>6.1} N·m  open {:.3}  pass {:.3}", s.level, s.open.rate, s.pass.rate);
            }
            println!(
                "checks: non_increasing={} near_zero_above_50={} open_ge_pass={}",
                checks.non_increasing, checks.near_zero_above_50, checks.open_ge_pass
            );
        }
        Cmd::ExportHidden { ckpt, episodes, common } => {
            check_exists(&ckpt)?;
            let r = Run::open(&common, &[])?;
            let n = r.cfg.eval.num_envs.min(episodes).max(1);
            let mut st = StudentPolicy::load(&ckpt, n)?;
            let settings = Arc::new(r.cfg.settings());
            let ex = eval::export_hidden_states(&mut st, settings, eval::eval_seed(r.cfg.seed), n, episodes);
            let hd = ex.hidden_dim;
            let (comps, mean) = pca(&ex.h, hd, 2);
            let proj = project(&ex.h, hd, &comps, &mean);
            let mut header = vec!["episode".to_string(), "t".into(), "door_type".into(), "pc1".into(), "pc2".into()];
            header.extend((0..hd).map(|i| format!("h{i}")));
            let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let rows: Vec<Vec<String>> = (0..ex.rows())
                .map(|k| {
                    let mut v = vec![
                        ex.episode[k].to_string(),
                        ex.t[k].to_string(),
                        ex.door_type[k].to_string(),
                        format!("{:.6}", proj[k][0]),
                        format!("{:.6}", proj[k][1]),
                    ];
                    v.extend(ex.h[k * hd..(k + 1) * hd].iter().map(|x| format!("{x:.6}")));
                    v
                })
                .collect();
            write_csv(&r.dir.join("hidden.csv"), &r.stamp, &header, &rows)?;
            let t_max = ex.t.iter().copied().max().unwrap_or(0);
            let late: Vec<usize> = (0..ex.rows()).filter(|&k| ex.t[k] * 5 >= t_max * 4).collect();
            let pts: Vec<[f64; 2]> = late.iter().map(|&k| proj[k]).collect();
            let labels: Vec<bool> = late.iter().map(|&k| ex.door_type[k] < 2).collect();
            let acc = linear_separability(&pts, &labels);
            r.record(serde_json::json!({
                "event": "export_hidden", "rows": ex.rows(), "push_pull_late_accuracy": acc
            }))?;
            println!("{} rows; push/pull linear accuracy on late PCA points {:.3}", ex.rows(), acc);
        }
        Cmd::ExportTypeProbs { ckpt, episodes, common } => {
            check_exists(&ckpt)?;
            let r = Run::open(&common, &[])?;
            let n = r.cfg.eval.num_envs.min(episodes).max(1);
            let mut st = StudentPolicy::load(&ckpt, n)?;
            let settings = Arc::new(r.cfg.settings());
            let rounds = episodes.div_ceil(n);
            let (rows, summary) =
                eval::export_type_probs(&mut st, settings, eval::eval_seed(r.cfg.seed), n, rounds);
            let (header, body) = eval::type_prob_csv(&rows);
            write_csv(&r.dir.join("type_probs.csv"), &r.stamp, &header, &body)?;
            r.record(serde_json::json!({"event": "export_type_probs", "summary": summary}))?;
            println!(
                "{} episodes; final argmax correct {:.3}; entropy before contact {:.3}, at end {:.3}",
                summary.episodes, summary.final_correct.rate, summary.entropy_before_contact, summary.entropy_at_end
            );
        }
        Cmd::Repeat { ckpt, n, common } => {
            check_exists(&ckpt)?;
            let r = Run::open(&common, &[])?;
            let n = n.unwrap_or(r.cfg.eval.repeat_per_side);
            let mut pol = load_any(&ckpt, n)?;
            let res = eval::repeatability(pol.as_dyn(), &r.cfg.settings(), n, r.cfg.seed, r.cfg.eval.workers);
            r.record(serde_json::json!({"event": "repeat", "result": res}))?;
            println!(
                "push {}/{} opened {} passed; pull {}/{} opened {} passed; overall pass rate {:.3}",
                res.push_opened,
                res.push_trials,
                res.push_passed,
                res.pull_opened,
                res.pull_trials,
                res.pull_passed,
                res.pass_rate()
            );
        }
        Cmd::Replay {
            actions,
            scripted,
            steps,
            env_index,
            common,
        } => {
            let r = Run::open(&common, &[])?;
            let settings = Arc::new(r.cfg.settings());
            let mut env = Env::new(settings, r.cfg.seed, env_index);
            let mut rows = Vec::new();
            let mut taken = Vec::new();
            if let Some(p) = actions {
                for a in read_actions(&p)? {
                    let res = env.step(&a);
                    rows.push(trace_row(&env, &res));
                    if res.done {
                        break;
                    }
                }
            } else {
                if !scripted {
                    return Err(Failure::Config("replay needs --actions <file> or --scripted".into()));
                }
                let mut ctl = ScriptedController::default();
                for _ in 0..steps {
                    let a = ctl.act(&env);
                    let res = env.step(&a);
                    taken.push(a);
                    rows.push(trace_row(&env, &res));
                    if res.done {
                        break;
                    }
                }
                write_actions(&r.dir.join("actions.csv"), &r.stamp, &taken)?;
            }
            write_trace(&r.dir.join("trace.csv"), &r.stamp, &rows)?;
            let m = env.metrics();
            r.record(serde_json::json!({"event": "replay", "steps": rows.len(), "metrics": m}))?;
            println!(
                "{} steps; max θ {:.1}°; opened_enough {} passed_through {}",
                rows.len(),
                m.max_theta.to_degrees(),
                m.opened_enough,
                m.passed_through
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (class, code) = f.class();
            eprintln!("error[{class}]: {}", f.message().replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
