//! The 50 Hz episodic environment: reset/step, teacher and student
//! observations, rewards, termination and success metrics, plus a batch
//! wrapper that steps many environments.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::door::{step_door, DoorState, DoorType, OpeningDir, HandlePose};
use crate::interaction::{
    behind_panel, handle_coupling, panel_contact, update_grasp, zone_membership, ContactConfig,
    ContactLink, LinkSet, Probe, ProbeShape, Zone,
};
use crate::randomization::{sample_episode, stream, EpisodeSample, RandomizationRanges, StreamTag};
use crate::rewards::{
    compose_reward, handle_manipulation_terms, open_door_terms, passing_term, shaping_terms,
    stage_update, RewardBreakdown, RewardConfig, Stage, StageState,
};
use crate::robot::{
    arm_pd_target, clip_base_command, fk, grasp_orientation_error, grasp_zone_test, step_robot,
    Action, ArmKinematics, RobotConfig, RobotLoads, RobotState, ACTION_DIM, ARM_DOF,
};

pub const LAYOUT_VERSION: &str = "doorlab-obs-v1";
pub const TEACHER_OBS_DIM: usize = 46;
pub const STUDENT_OBS_DIM: usize = 19;
/// Length of the teacher's non-privileged prefix.
pub const TEACHER_PUBLIC_DIM: usize = 34;
pub const PASS_DISTANCE: f64 = 0.5;

/// Student observation noise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub position: f64,
    pub angle: f64,
    pub velocity: f64,
    pub extero: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            position: 0.01,
            angle: 0.05,
            velocity: 0.05,
            extero: 0.02,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            angle: 0.0,
            velocity: 0.0,
            extero: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub control_dt: f64,
    pub substeps: usize,
    /// Episode length in control steps.
    pub horizon: usize,
    pub num_envs: usize,
    pub noise: NoiseConfig,
    pub layout_version: String,
    pub contact: ContactConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.02,
            substeps: 4,
            horizon: 500,
            num_envs: 256,
            noise: NoiseConfig::default(),
            layout_version: LAYOUT_VERSION.to_string(),
            contact: ContactConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn physics_dt(&self) -> f64 {
        self.control_dt / self.substeps as f64
    }
}

/// Everything an environment needs besides its seed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvSettings {
    pub env: EnvConfig,
    pub robot: RobotConfig,
    pub reward: RewardConfig,
    pub ranges: RandomizationRanges,
}

/// Kind of quantity stored at an observation index, which selects its noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Angle,
    Velocity,
    Position,
    Extero,
    Action,
    Privileged,
}

/// One named block of an observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Field {
    pub name: &'static str,
    pub start: usize,
    pub len: usize,
    pub kind: FieldKind,
}

const fn field(name: &'static str, start: usize, len: usize, kind: FieldKind) -> Field {
    Field {
        name,
        start,
        len,
        kind,
    }
}

pub const TEACHER_FIELDS: [Field; 17] = [
    field("yaw", 0, 1, FieldKind::Angle),
    field("tilt", 1, 1, FieldKind::Angle),
    field("base_velocity", 2, 3, FieldKind::Velocity),
    field("arm_q", 5, 6, FieldKind::Angle),
    field("arm_qd", 11, 6, FieldKind::Velocity),
    field("prev_action", 17, 9, FieldKind::Action),
    field("handle_pos", 26, 3, FieldKind::Extero),
    field("doorway_center", 29, 3, FieldKind::Extero),
    field("doorway_dir", 32, 2, FieldKind::Angle),
    field("door_joints", 34, 2, FieldKind::Privileged),
    field("door_joint_rates", 36, 2, FieldKind::Privileged),
    field("panel_mass", 38, 1, FieldKind::Privileged),
    field("hinge_torque", 39, 1, FieldKind::Privileged),
    field("handle_torque", 40, 1, FieldKind::Privileged),
    field("door_type", 41, 4, FieldKind::Privileged),
    field("stage", 45, 1, FieldKind::Privileged),
    field("end", 46, 0, FieldKind::Privileged),
];

pub const STUDENT_FIELDS: [Field; 8] = [
    field("yaw", 0, 1, FieldKind::Angle),
    field("tilt", 1, 1, FieldKind::Angle),
    field("base_velocity", 2, 3, FieldKind::Velocity),
    field("arm_q", 5, 6, FieldKind::Angle),
    field("handle_pos", 11, 3, FieldKind::Extero),
    field("doorway_center", 14, 3, FieldKind::Extero),
    field("doorway_dir", 17, 2, FieldKind::Angle),
    field("end", 19, 0, FieldKind::Privileged),
];

/// Teacher indices copied, in order, into the student observation.
pub const STUDENT_FROM_TEACHER: [usize; STUDENT_OBS_DIM] =
    [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 26, 27, 28, 29, 30, 31, 32, 33];

/// Machine-readable observation index map.
pub fn layout_json() -> serde_json::Value {
    let block = |fields: &[Field]| {
        fields
            .iter()
            .filter(|f| f.len > 0)
            .map(|f| serde_json::json!({"name": f.name, "start": f.start, "len": f.len, "kind": f.kind}))
            .collect::<Vec<_>>()
    };
    serde_json::json!({
        "version": LAYOUT_VERSION,
        "teacher": {"dim": TEACHER_OBS_DIM, "fields": block(&TEACHER_FIELDS)},
        "student": {"dim": STUDENT_OBS_DIM, "fields": block(&STUDENT_FIELDS)},
        "student_from_teacher": STUDENT_FROM_TEACHER,
    })
}

/// Per-step information besides reward and observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepInfo {
    pub opened_enough: bool,
    pub passed_through: bool,
    pub stage: Stage,
    pub theta: f64,
    pub phi: f64,
    pub door_type: DoorType,
    pub grasped: bool,
    pub colliding: u16,
    pub nan_abort: bool,
    /// The episode ended by reaching the horizon.
    pub timeout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

/// Summary of a finished episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub opened_enough: bool,
    pub passed_through: bool,
    pub max_theta: f64,
    pub max_pass_depth: f64,
    pub door_type: DoorType,
    pub ret: f64,
    pub nan_abort: bool,
}

/// Success flags from the largest hinge angle and the deepest base position
/// past the wall plane reached during an episode.
pub fn episode_metrics(max_theta: f64, max_pass_depth: f64) -> (bool, bool) {
    (
        max_theta >= 30f64.to_radians(),
        max_pass_depth >= PASS_DISTANCE,
    )
}

/// Contact and grasp bookkeeping of the latest control step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactReport {
    pub grasped: bool,
    pub grasp_lost_this_step: bool,
    pub in_zone: bool,
    pub hinge_torque: f64,
    pub handle_torque: f64,
    pub ee_force: Vector3<f64>,
    pub base_force: Vector3<f64>,
    pub colliding: LinkSet,
    pub base_zone: Zone,
    pub ee_zone: Zone,
    pub base_behind: bool,
    pub ee_behind: bool,
}

/// Collision probes attached to the robot.
pub fn robot_probes(
    robot: &RobotState,
    kin: &ArmKinematics,
    contact: &ContactConfig,
) -> [Probe; 8] {
    let b = &robot.base;
    let base_vel = b.velocity();
    let (s, c) = b.yaw.sin_cos();
    let thigh_local = Vector3::new(0.35, 0.0, 0.3);
    let thigh = b.position() + Vector3::new(c * thigh_local.x - s * thigh_local.y, s * thigh_local.x + c * thigh_local.y, thigh_local.z);
    let thigh_vel = base_vel + Vector3::z().cross(&(thigh - b.position())) * b.yaw_rate;
    let mut probes = [Probe {
        link: ContactLink::Base,
        shape: ProbeShape::Disc,
        center: b.position() + Vector3::new(0.0, 0.0, 0.4),
        velocity: base_vel,
        radius: contact.r_b,
    }; 8];
    probes[1] = Probe {
        link: ContactLink::ThighProxy,
        shape: ProbeShape::Sphere,
        center: thigh,
        velocity: thigh_vel,
        radius: 0.1,
    };
    for i in 0..ARM_DOF {
        probes[2 + i] = Probe {
            link: ContactLink::Arm(i as u8 + 1),
            shape: ProbeShape::Sphere,
            center: kin.link_ends[i],
            velocity: kin.link_velocity(i, &robot.arm.qd, b),
            radius: contact.r_e,
        };
    }
    probes
}

/// A single environment.
#[derive(Debug, Clone)]
pub struct Env {
    settings: Arc<EnvSettings>,
    seed: u64,
    index: u64,
    episode: u64,
    pub sample: EpisodeSample,
    pub robot: RobotState,
    pub door: DoorState,
    pub stage: StageState,
    pub t: usize,
    pub prev_action: [f64; ACTION_DIM],
    pub report: ContactReport,
    max_theta: f64,
    max_pass_depth: f64,
    ret: f64,
    nan_abort: bool,
    noise_rng: ChaCha8Rng,
}

fn draw_sample(settings: &EnvSettings, seed: u64, index: u64, episode: u64) -> EpisodeSample {
    let mut rng = stream(seed, index, episode, StreamTag::Episode);
    sample_episode(&mut rng, &settings.ranges, &settings.robot)
        .expect("randomization ranges are validated before environments are built")
}

impl Env {
    pub fn new(settings: Arc<EnvSettings>, seed: u64, index: u64) -> Self {
        let sample = draw_sample(&settings, seed, index, 0);
        Self::with_sample(settings, seed, index, 0, sample)
    }

    /// Environment starting from a given episode draw.
    pub fn with_sample(
        settings: Arc<EnvSettings>,
        seed: u64,
        index: u64,
        episode: u64,
        sample: EpisodeSample,
    ) -> Self {
        let mut env = Self {
            noise_rng: stream(seed, index, episode, StreamTag::ObsNoise),
            robot: RobotState {
                base: sample.base,
                arm: sample.arm,
            },
            sample,
            settings,
            seed,
            index,
            episode,
            door: DoorState::default(),
            stage: StageState::default(),
            t: 0,
            prev_action: [0.0; ACTION_DIM],
            report: ContactReport::default(),
            max_theta: 0.0,
            max_pass_depth: f64::NEG_INFINITY,
            ret: 0.0,
            nan_abort: false,
        };
        env.refresh_report();
        env
    }

    pub fn settings(&self) -> &EnvSettings {
        &self.settings
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Start the next episode of this environment's stream.
    pub fn reset_next(&mut self) {
        let episode = self.episode + 1;
        let sample = draw_sample(&self.settings, self.seed, self.index, episode);
        *self = Self::with_sample(self.settings.clone(), self.seed, self.index, episode, sample);
    }

    /// Restart episode `episode` of this environment's stream.
    pub fn reset_to(&mut self, episode: u64) {
        let sample = draw_sample(&self.settings, self.seed, self.index, episode);
        *self = Self::with_sample(self.settings.clone(), self.seed, self.index, episode, sample);
    }

    pub fn kinematics(&self) -> ArmKinematics {
        fk(&self.robot.arm.q, &self.robot.base, &self.settings.robot)
    }

    pub fn handle_pose(&self) -> HandlePose {
        self.sample.spec.handle_pose(&self.door)
    }

    fn pass_depth(&self) -> f64 {
        self.sample.spec.wall_pose.to_local(self.robot.base.position()).x
    }

    fn refresh_report(&mut self) {
        let kin = self.kinematics();
        let hp = self.handle_pose();
        let spec = &self.sample.spec;
        let base = self.robot.base.position();
        self.report.in_zone = grasp_zone_test(&kin.ee, &kin.ee_rot, &hp.point);
        self.report.base_zone = zone_membership(&base, spec, &self.door);
        self.report.ee_zone = zone_membership(&kin.ee, spec, &self.door);
        self.report.base_behind = behind_panel(&base, spec, &self.door);
        self.report.ee_behind = behind_panel(&kin.ee, spec, &self.door);
        self.max_theta = self.max_theta.max(self.door.theta);
        self.max_pass_depth = self.max_pass_depth.max(self.pass_depth());
    }

    pub fn metrics(&self) -> EpisodeMetrics {
        let (opened_enough, passed_through) = episode_metrics(self.max_theta, self.max_pass_depth);
        EpisodeMetrics {
            opened_enough,
            passed_through,
            max_theta: self.max_theta,
            max_pass_depth: self.max_pass_depth,
            door_type: self.sample.spec.door_type(),
            ret: self.ret,
            nan_abort: self.nan_abort,
        }
    }

    /// Advance one control step. The episode is not reset here.
    pub fn step(&mut self, action: &Action) -> StepResult {
        let settings = self.settings.clone();
        let cfg = &settings.env;
        let rcfg = &settings.robot;
        let dt = cfg.physics_dt();
        let spec = self.sample.spec.clone();
        let params = self.sample.params.clone();
        let gains = self.sample.gains;

        let sanitized = if action.is_finite() {
            *action
        } else {
            Action([0.0; ACTION_DIM])
        };
        let command = clip_base_command(sanitized.base_command());
        self.robot.arm.targets = arm_pd_target(&sanitized.arm(), &self.robot.arm.q, rcfg, &gains);

        let grasped_before = self.report.grasped;
        let mut colliding = LinkSet::default();
        let mut nan = !action.is_finite();
        let mut last_hinge = 0.0;
        let mut last_handle = 0.0;
        let mut last_ee_force = Vector3::zeros();
        let mut last_base_force = Vector3::zeros();
        for _ in 0..cfg.substeps {
            if nan {
                break;
            }
            let kin = fk(&self.robot.arm.q, &self.robot.base, rcfg);
            let hp = spec.handle_pose(&self.door);
            let hv = hp.velocity(&self.door);
            let ee_vel = kin.link_velocity(ARM_DOF - 1, &self.robot.arm.qd, &self.robot.base);
            let in_zone = grasp_zone_test(&kin.ee, &kin.ee_rot, &hp.point);
            let dist = (kin.ee - hp.point).norm();
            self.report.grasped = update_grasp(self.report.grasped, in_zone, dist, &cfg.contact);
            let coupling = handle_coupling(&kin.ee, &ee_vel, &hp, &hv, self.report.grasped, &cfg.contact);
            let probes = robot_probes(&self.robot, &kin, &cfg.contact);
            let contacts = panel_contact(&probes, &spec, &self.door, &cfg.contact);
            colliding = colliding.union(contacts.colliding);

            let mut loads = RobotLoads {
                ee_force: coupling.on_ee + contacts.on_probes[2 + ARM_DOF - 1],
                base_force: coupling.on_ee,
                arm_torques: [0.0; ARM_DOF],
            };
            let t = kin.link_force_torques(ARM_DOF - 1, &coupling.on_ee);
            for j in 0..ARM_DOF {
                loads.arm_torques[j] += t[j];
            }
            for (k, probe) in probes.iter().enumerate() {
                let f = contacts.on_probes[k];
                loads.base_force += f;
                if let ContactLink::Arm(i) = probe.link {
                    let t = kin.link_force_torques(i as usize - 1, &f);
                    for j in 0..ARM_DOF {
                        loads.arm_torques[j] += t[j];
                    }
                }
            }
            let hinge = coupling.hinge_torque + contacts.hinge_torque;
            match (
                step_robot(&self.robot, rcfg, &gains, command, &loads, dt),
                step_door(&self.door, &spec, &params, hinge, coupling.handle_torque, dt),
            ) {
                (Ok(r), Ok(d)) if robot_finite(&r) => {
                    self.robot = r;
                    self.door = d;
                }
                _ => nan = true,
            }
            last_hinge = hinge;
            last_handle = coupling.handle_torque;
            last_ee_force = loads.ee_force;
            last_base_force = loads.base_force;
        }
        self.report.hinge_torque = last_hinge;
        self.report.handle_torque = last_handle;
        self.report.ee_force = last_ee_force;
        self.report.base_force = last_base_force;
        self.report.colliding = colliding;
        self.report.grasp_lost_this_step = grasped_before && !self.report.grasped;
        self.refresh_report();

        let kin = self.kinematics();
        let hp = self.handle_pose();
        let (center, through) = spec.doorway_frame();
        let base_pos = self.robot.base.position();
        let dir = spec.opening_dir;
        let rw = &settings.reward;

        self.stage = stage_update(
            self.stage,
            self.door.theta,
            dir,
            self.report.base_behind,
            self.report.ee_behind,
            self.pass_depth() > 0.0,
            rw,
        );

        let e_o = grasp_orientation_error(&kin.ee_rot, &hp.axis);
        let hm = handle_manipulation_terms(
            &kin.ee,
            &hp.point,
            e_o,
            self.report.in_zone,
            self.report.grasp_lost_this_step,
            self.door.phi,
            params.phi_max,
            rw,
        );
        let (r_od, r_adp) = open_door_terms(self.door.theta, self.report.base_zone, self.report.ee_zone, dir, rw);
        let r_p = passing_term(&self.robot.base.velocity(), &base_pos, &center, &through, self.stage.passed_doorway, rw);
        let sh = shaping_terms(
            &self.robot.arm.qd,
            &self.robot.arm.qdd,
            self.robot.base.tilt,
            &kin.ee,
            &kin.shoulder,
            &sanitized.0,
            colliding.len(),
            rw,
        );
        let mut b = RewardBreakdown {
            r_ehd: hm.r_ehd,
            r_th: hm.r_th,
            r_eho: hm.r_eho,
            r_hg: hm.r_hg,
            r_plg: hm.r_plg,
            r_od,
            r_adp,
            r_hm: hm.r_hm,
            r_o: 0.0,
            r_p,
            r_ma: sh.r_ma,
            r_pbt: sh.r_pbt,
            r_psa: sh.r_psa,
            r_pcl: sh.r_pcl,
            r_pc: sh.r_pc,
            r_s: sh.r_s,
            total: 0.0,
        };
        let mut reward = compose_reward(&mut b, self.stage.stage, self.door.theta, dir, rw);
        if nan || !reward.is_finite() {
            reward = 0.0;
            b = RewardBreakdown::default();
            self.nan_abort = true;
        }
        self.ret += reward;
        self.prev_action = sanitized.0;
        self.t += 1;
        let timeout = self.t >= cfg.horizon;
        let done = timeout || self.nan_abort;
        let m = self.metrics();
        StepResult {
            reward,
            breakdown: b,
            done,
            info: StepInfo {
                opened_enough: m.opened_enough,
                passed_through: m.passed_through,
                stage: self.stage.stage,
                theta: self.door.theta,
                phi: self.door.phi,
                door_type: spec.door_type(),
                grasped: self.report.grasped,
                colliding: colliding.0,
                nan_abort: self.nan_abort,
                timeout: timeout && !self.nan_abort,
            },
        }
    }

    /// Noise-free teacher observation.
    pub fn teacher_obs(&self, out: &mut [f32]) {
        assert_eq!(out.len(), TEACHER_OBS_DIM);
        let b = &self.robot.base;
        let spec = &self.sample.spec;
        let params = &self.sample.params;
        let hp = self.handle_pose();
        let (center, through) = spec.doorway_frame();
        let (bvx, bvy) = b.body_velocity();
        let h = b.to_base_frame(hp.point);
        let c = b.to_base_frame(center);
        let d = b.dir_to_base_frame(through);
        let mut v = [0.0f64; TEACHER_OBS_DIM];
        v[0] = b.yaw;
        v[1] = b.tilt;
        v[2] = bvx;
        v[3] = bvy;
        v[4] = b.yaw_rate;
        v[5..11].copy_from_slice(&self.robot.arm.q);
        v[11..17].copy_from_slice(&self.robot.arm.qd);
        v[17..26].copy_from_slice(&self.prev_action);
        v[26..29].copy_from_slice(h.as_slice());
        v[29..32].copy_from_slice(c.as_slice());
        v[32] = d.x;
        v[33] = d.y;
        v[34] = self.door.theta;
        v[35] = self.door.phi;
        v[36] = self.door.theta_dot;
        v[37] = self.door.phi_dot;
        v[38] = params.mass;
        v[39] = params.hinge_resistance(self.door.theta_dot);
        v[40] = params.tau_handle;
        v[41 + spec.door_type().index()] = 1.0;
        v[45] = match self.stage.stage {
            Stage::Opening => 0.0,
            Stage::Passing => 1.0,
        };
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o = *x as f32;
        }
    }

    /// Student observation: the public teacher fields minus previous action
    /// and joint velocities, with Gaussian noise per field.
    pub fn student_obs(&mut self, out: &mut [f32]) {
        assert_eq!(out.len(), STUDENT_OBS_DIM);
        let mut t = [0.0f32; TEACHER_OBS_DIM];
        self.teacher_obs(&mut t);
        let noise = self.settings.env.noise.clone();
        for f in STUDENT_FIELDS.iter().filter(|f| f.len > 0) {
            let std = match f.kind {
                FieldKind::Angle => noise.angle,
                FieldKind::Velocity => noise.velocity,
                FieldKind::Position => noise.position,
                FieldKind::Extero => noise.extero,
                FieldKind::Action | FieldKind::Privileged => 0.0,
            };
            for k in f.start..f.start + f.len {
                let z: f64 = StandardNormal.sample(&mut self.noise_rng);
                let x = t[STUDENT_FROM_TEACHER[k]] as f64;
                out[k] = if std > 0.0 { (x + std * z) as f32 } else { x as f32 };
            }
        }
    }

    /// Privileged estimation targets for the student decoder (continuous part).
    pub fn estimation_targets(&self) -> [f32; ESTIMATION_DIM] {
        let mut t = [0.0f32; TEACHER_OBS_DIM];
        self.teacher_obs(&mut t);
        let mut out = [0.0f32; ESTIMATION_DIM];
        out[..8].copy_from_slice(&t[26..34]);
        out[8..15].copy_from_slice(&t[34..41]);
        out
    }

    pub fn door_type(&self) -> DoorType {
        self.sample.spec.door_type()
    }

    pub fn opening_dir(&self) -> OpeningDir {
        self.sample.spec.opening_dir
    }
}

/// Number of continuous estimation targets.
pub const ESTIMATION_DIM: usize = 15;

pub const ESTIMATION_NAMES: [&str; ESTIMATION_DIM] = [
    "handle_x", "handle_y", "handle_z", "center_x", "center_y", "center_z", "dir_x", "dir_y",
    "theta", "phi", "theta_dot", "phi_dot", "mass", "hinge_torque", "handle_torque",
];

fn robot_finite(r: &RobotState) -> bool {
    let b = &r.base;
    [b.x, b.y, b.yaw, b.vx, b.vy, b.yaw_rate, b.tilt].iter().all(|v| v.is_finite())
        && r.arm.q.iter().chain(&r.arm.qd).all(|v| v.is_finite())
}

/// A batch of environments sharing settings, each with its own stream.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub envs: Vec<Env>,
}

impl VecEnv {
    pub fn new(settings: Arc<EnvSettings>, seed: u64, num_envs: usize) -> Self {
        Self::with_offset(settings, seed, 0, num_envs)
    }

    /// Environments with stream indices `offset..offset + num_envs`.
    pub fn with_offset(settings: Arc<EnvSettings>, seed: u64, offset: u64, num_envs: usize) -> Self {
        let envs = (0..num_envs as u64)
            .map(|i| Env::new(settings.clone(), seed, offset + i))
            .collect();
        Self { envs }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn teacher_obs(&self, out: &mut [f32]) {
        for (e, o) in self.envs.iter().zip(out.chunks_exact_mut(TEACHER_OBS_DIM)) {
            e.teacher_obs(o);
        }
    }

    pub fn student_obs(&mut self, out: &mut [f32]) {
        for (e, o) in self.envs.iter_mut().zip(out.chunks_exact_mut(STUDENT_OBS_DIM)) {
            e.student_obs(o);
        }
    }

    /// Step every environment. Finished environments are not reset.
    pub fn step(&mut self, actions: &[Action]) -> Vec<StepResult> {
        self.envs.iter_mut().zip(actions).map(|(e, a)| e.step(a)).collect()
    }

    /// Step with the batch split across `workers` threads.
    pub fn step_partitioned(&mut self, actions: &[Action], workers: usize) -> Vec<StepResult> {
        let workers = workers.max(1).min(self.envs.len().max(1));
        let chunk = self.envs.len().div_ceil(workers).max(1);
        let mut out: Vec<Vec<StepResult>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .envs
                .chunks_mut(chunk)
                .zip(actions.chunks(chunk))
                .map(|(envs, acts)| {
                    scope.spawn(move || {
                        envs.iter_mut().zip(acts).map(|(e, a)| e.step(a)).collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                out.push(h.join().expect("environment worker panicked"));
            }
        });
        out.into_iter().flatten().collect()
    }

    /// Reset every environment whose episode has finished.
    pub fn reset_done(&mut self, results: &[StepResult]) {
        for (e, r) in self.envs.iter_mut().zip(results) {
            if r.done {
                e.reset_next();
            }
        }
    }
}

/// One row of a per-step trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub theta: f64,
    pub phi: f64,
    pub stage: Stage,
    pub breakdown: RewardBreakdown,
    pub opened_enough: bool,
    pub passed_through: bool,
}

pub fn trace_row(env: &Env, r: &StepResult) -> TraceRow {
    TraceRow {
        time: env.t as f64 * env.settings.env.control_dt,
        theta: r.info.theta,
        phi: r.info.phi,
        stage: r.info.stage,
        breakdown: r.breakdown,
        opened_enough: r.info.opened_enough,
        passed_through: r.info.passed_through,
    }
}

/// Write a trace as CSV with one column per reward term.
pub fn write_trace_csv<W: std::io::Write>(w: &mut W, rows: &[TraceRow]) -> std::io::Result<()> {
    write!(w, "time,theta,phi,stage")?;
    for c in RewardBreakdown::COLUMNS {
        write!(w, ",{c}")?;
    }
    writeln!(w, ",opened_enough,passed_through")?;
    for r in rows {
        write!(
            w,
            "{:.2},{},{},{}",
            r.time,
            r.theta,
            r.phi,
            match r.stage {
                Stage::Opening => "opening",
                Stage::Passing => "passing",
            }
        )?;
        for v in r.breakdown.values() {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{},{}", r.opened_enough as u8, r.passed_through as u8)?;
    }
    Ok(())
}

/// Uniform random actions, for sanity baselines.
pub fn random_action<R: Rng>(rng: &mut R) -> Action {
    let mut a = [0.0; ACTION_DIM];
    for v in a.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    Action(a)
}
