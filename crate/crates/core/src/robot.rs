//! Simplified legged manipulator: a planar base that tracks velocity commands
//! with a first-order lag, carrying a six-joint PD-controlled arm with a hook.

use nalgebra::{Matrix3, Matrix3x6, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ARM_DOF: usize = 6;
pub const ACTION_DIM: usize = 9;

pub const MAX_LINEAR_CMD: f64 = 0.5;
pub const MAX_ANGULAR_CMD: f64 = 1.0;
pub const LINEAR_DEADBAND: f64 = 0.1;
pub const ANGULAR_DEADBAND: f64 = 0.1;

/// Half extents of the hook grasp zone in the end-effector frame; the long
/// axis runs along the hook opening (end-effector x).
pub const GRASP_ZONE_HALF: [f64; 3] = [0.03, 0.015, 0.015];

#[derive(Debug, Error, PartialEq)]
pub enum RobotError {
    #[error("non-finite robot input")]
    NonFinite,
    #[error("non-positive timestep {0}")]
    BadTimestep(f64),
}

/// Arm kinematic, actuation and base-abstraction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub link_lengths: [f64; ARM_DOF],
    /// Nominal proportional gains (episodes resample them).
    pub kp: [f64; ARM_DOF],
    pub kd: [f64; ARM_DOF],
    pub tau_limits: [f64; ARM_DOF],
    pub q_default: [f64; ARM_DOF],
    pub action_scale: f64,
    pub sigma: f64,
    /// Velocity-tracking time constant of the abstracted locomotion policy.
    pub tau_loco: f64,
    pub joint_lower: [f64; ARM_DOF],
    pub joint_upper: [f64; ARM_DOF],
    pub joint_inertia: [f64; ARM_DOF],
    pub velocity_cap: f64,
    /// Arm mount position in the base frame (base origin on the floor).
    pub mount: [f64; 3],
    pub base_mass: f64,
    /// Virtual tilt per newton of horizontal end-effector force.
    pub tilt_per_newton: f64,
    pub tilt_cap: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            link_lengths: [0.10, 0.30, 0.30, 0.10, 0.08, 0.06],
            kp: [50.0; ARM_DOF],
            kd: [4.5; ARM_DOF],
            tau_limits: [40.0, 40.0, 30.0, 15.0, 10.0, 10.0],
            q_default: [0.0, -1.4, 2.1, -0.7, 0.0, 0.0],
            action_scale: 0.5,
            sigma: 0.7,
            tau_loco: 0.3,
            joint_lower: [-2.0, -2.6, -0.5, -2.0, -2.5, -1.5],
            joint_upper: [2.0, 1.5, 2.8, 2.0, 2.5, 1.5],
            joint_inertia: [0.5, 0.5, 0.3, 0.1, 0.05, 0.02],
            velocity_cap: 10.0,
            mount: [0.25, 0.0, 0.75],
            base_mass: 50.0,
            tilt_per_newton: 0.002,
            tilt_cap: 0.3,
        }
    }
}

/// Per-episode joint gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmGains {
    pub kp: [f64; ARM_DOF],
    pub kd: [f64; ARM_DOF],
}

impl ArmGains {
    pub fn nominal(cfg: &RobotConfig) -> Self {
        Self {
            kp: cfg.kp,
            kd: cfg.kd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaseState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// World-frame planar velocity.
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    /// Virtual tilt synthesized from end-effector reaction force.
    pub tilt: f64,
}

impl BaseState {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 0.0)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, 0.0)
    }

    pub fn to_base_frame(&self, world: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let d = world - self.position();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn dir_to_base_frame(&self, world: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * world.x + s * world.y, -s * world.x + c * world.y, world.z)
    }

    /// Velocity (vx, vy) expressed in the base frame.
    pub fn body_velocity(&self) -> (f64, f64) {
        let v = self.dir_to_base_frame(self.velocity());
        (v.x, v.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmState {
    pub q: [f64; ARM_DOF],
    pub qd: [f64; ARM_DOF],
    pub qdd: [f64; ARM_DOF],
    pub targets: [f64; ARM_DOF],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub base: BaseState,
    pub arm: ArmState,
}

/// Policy action: base velocity command (v_x, v_y, yaw rate) followed by six
/// arm actions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub fn from_slice(v: &[f32]) -> Self {
        let mut a = [0.0; ACTION_DIM];
        for (o, &x) in a.iter_mut().zip(v) {
            *o = x as f64;
        }
        Action(a)
    }

    pub fn base_command(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn arm(&self) -> [f64; ARM_DOF] {
        let mut a = [0.0; ARM_DOF];
        a.copy_from_slice(&self.0[3..]);
        a
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Norm-clip the linear command to 0.5 m/s and the yaw rate to 1 rad/s, then
/// zero components below the 0.1 deadband.
pub fn clip_base_command(cmd: [f64; 3]) -> [f64; 3] {
    let [mut vx, mut vy, w] = cmd;
    let norm = vx.hypot(vy);
    if norm > MAX_LINEAR_CMD {
        let k = MAX_LINEAR_CMD / norm;
        vx *= k;
        vy *= k;
    }
    let mut w = w.clamp(-MAX_ANGULAR_CMD, MAX_ANGULAR_CMD);
    if vx.hypot(vy) < LINEAR_DEADBAND {
        vx = 0.0;
        vy = 0.0;
    }
    if w.abs() < ANGULAR_DEADBAND {
        w = 0.0;
    }
    [vx, vy, w]
}

/// PD target for each arm joint: the scaled action around the default posture,
/// clipped to a torque-proxy band around the current position and then to the
/// joint limits.
pub fn arm_pd_target(
    actions: &[f64; ARM_DOF],
    q: &[f64; ARM_DOF],
    cfg: &RobotConfig,
    gains: &ArmGains,
) -> [f64; ARM_DOF] {
    let mut out = [0.0; ARM_DOF];
    for i in 0..ARM_DOF {
        let band = cfg.sigma * cfg.tau_limits[i] / gains.kp[i];
        let raw = cfg.action_scale * actions[i] + cfg.q_default[i];
        out[i] = raw
            .clamp(q[i] - band, q[i] + band)
            .clamp(cfg.joint_lower[i], cfg.joint_upper[i]);
    }
    out
}

/// Forward kinematics of the arm in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmKinematics {
    pub ee: Vector3<f64>,
    pub ee_rot: Matrix3<f64>,
    pub shoulder: Vector3<f64>,
    /// Joint positions, joint 1 (mount) to joint 6.
    pub joints: [Vector3<f64>; ARM_DOF],
    /// Joint axes in the world frame.
    pub axes: [Vector3<f64>; ARM_DOF],
    /// Distal end of each link; the last entry is the end-effector point.
    pub link_ends: [Vector3<f64>; ARM_DOF],
    /// Positional Jacobian of the end-effector point.
    pub jacobian: Matrix3x6<f64>,
}

impl ArmKinematics {
    /// Joint torques produced by a force applied at the end of `link`.
    pub fn link_force_torques(&self, link: usize, force: &Vector3<f64>) -> [f64; ARM_DOF] {
        let p = self.link_ends[link];
        let mut tau = [0.0; ARM_DOF];
        for (i, t) in tau.iter_mut().enumerate().take(link + 1) {
            *t = self.axes[i].cross(&(p - self.joints[i])).dot(force);
        }
        tau
    }

    /// Velocity of the end of `link` given joint rates and base motion.
    pub fn link_velocity(&self, link: usize, qd: &[f64; ARM_DOF], base: &BaseState) -> Vector3<f64> {
        let p = self.link_ends[link];
        let mut v = base.velocity() + Vector3::z().cross(&(p - base.position())) * base.yaw_rate;
        for (i, &rate) in qd.iter().enumerate().take(link + 1) {
            v += self.axes[i].cross(&(p - self.joints[i])) * rate;
        }
        v
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), a).matrix()
}

fn rot_y(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), a).matrix()
}

fn rot_z(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), a).matrix()
}

/// Chain: yaw at the mount, shoulder pitch, elbow pitch, wrist pitch, wrist
/// roll, hook yaw. Positive pitch tilts the next link downward.
pub fn fk(q: &[f64; ARM_DOF], base: &BaseState, cfg: &RobotConfig) -> ArmKinematics {
    let l = &cfg.link_lengths;
    let r0 = rot_z(base.yaw);
    let mount = base.position() + r0 * Vector3::from(cfg.mount);
    let r1 = r0 * rot_z(q[0]);
    let r2 = r1 * rot_y(q[1]);
    let r3 = r2 * rot_y(q[2]);
    let r4 = r3 * rot_y(q[3]);
    let r5 = r4 * rot_x(q[4]);
    let r6 = r5 * rot_z(q[5]);

    let p0 = mount;
    let p1 = p0 + r1 * Vector3::new(0.0, 0.0, l[0]);
    let p2 = p1 + r2 * Vector3::new(l[1], 0.0, 0.0);
    let p3 = p2 + r3 * Vector3::new(l[2], 0.0, 0.0);
    let p4 = p3 + r4 * Vector3::new(l[3], 0.0, 0.0);
    let p5 = p4 + r5 * Vector3::new(l[4], 0.0, 0.0);
    let ee = p5 + r6 * Vector3::new(l[5], 0.0, 0.0);

    let joints = [p0, p1, p2, p3, p4, p5];
    let axes = [
        r0.column(2).into_owned(),
        r2.column(1).into_owned(),
        r3.column(1).into_owned(),
        r4.column(1).into_owned(),
        r5.column(0).into_owned(),
        r6.column(2).into_owned(),
    ];
    let mut jacobian = Matrix3x6::zeros();
    for i in 0..ARM_DOF {
        jacobian.set_column(i, &axes[i].cross(&(ee - joints[i])));
    }
    ArmKinematics {
        ee,
        ee_rot: r6,
        shoulder: p1,
        joints,
        axes,
        link_ends: [p1, p2, p3, p4, p5, ee],
        jacobian,
    }
}

/// Is `h` inside the hook grasp zone?
pub fn grasp_zone_test(ee: &Vector3<f64>, ee_rot: &Matrix3<f64>, h: &Vector3<f64>) -> bool {
    let local = ee_rot.transpose() * (h - ee);
    (0..3).all(|i| local[i].abs() <= GRASP_ZONE_HALF[i])
}

/// Diagonal length of the grasp zone box.
pub fn grasp_zone_diagonal() -> f64 {
    2.0 * GRASP_ZONE_HALF.iter().map(|h| h * h).sum::<f64>().sqrt()
}

/// Angle between the hook's closure axis (end-effector x) and the handle axis.
pub fn grasp_orientation_error(ee_rot: &Matrix3<f64>, handle_axis: &Vector3<f64>) -> f64 {
    let hook = ee_rot.column(0);
    let c = hook.dot(handle_axis) / handle_axis.norm();
    c.clamp(-1.0, 1.0).acos()
}

/// External loads acting on the robot during one substep.
#[derive(Debug, Clone, Copy, Default)]
pub struct RobotLoads {
    /// Force on the end-effector, used for the virtual tilt.
    pub ee_force: Vector3<f64>,
    /// Force on the base (horizontal components are used).
    pub base_force: Vector3<f64>,
    /// Joint torques from external forces on the arm.
    pub arm_torques: [f64; ARM_DOF],
}

/// One substep of the robot plant. `command` must already be clipped.
pub fn step_robot(
    state: &RobotState,
    cfg: &RobotConfig,
    gains: &ArmGains,
    command: [f64; 3],
    loads: &RobotLoads,
    dt: f64,
) -> Result<RobotState, RobotError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(RobotError::BadTimestep(dt));
    }
    let finite = command.iter().all(|v| v.is_finite())
        && loads.ee_force.iter().all(|v| v.is_finite())
        && loads.base_force.iter().all(|v| v.is_finite())
        && loads.arm_torques.iter().all(|v| v.is_finite());
    if !finite {
        return Err(RobotError::NonFinite);
    }
    let mut next = *state;

    // Arm.
    let arm = &state.arm;
    for i in 0..ARM_DOF {
        let pd = gains.kp[i] * (arm.targets[i] - arm.q[i]) - gains.kd[i] * arm.qd[i];
        let tau = pd.clamp(-cfg.tau_limits[i], cfg.tau_limits[i]) + loads.arm_torques[i];
        let acc = tau / cfg.joint_inertia[i];
        let mut qd = (arm.qd[i] + dt * acc).clamp(-cfg.velocity_cap, cfg.velocity_cap);
        let mut q = arm.q[i] + dt * qd;
        if q < cfg.joint_lower[i] {
            q = cfg.joint_lower[i];
            qd = 0.0;
        } else if q > cfg.joint_upper[i] {
            q = cfg.joint_upper[i];
            qd = 0.0;
        }
        next.arm.qdd[i] = (qd - arm.qd[i]) / dt;
        next.arm.qd[i] = qd;
        next.arm.q[i] = q;
    }

    // Base: exact first-order tracking of the world-frame command.
    let b = &state.base;
    let (s, c) = b.yaw.sin_cos();
    let cmd_vx = c * command[0] - s * command[1];
    let cmd_vy = s * command[0] + c * command[1];
    let blend = 1.0 - (-dt / cfg.tau_loco).exp();
    let ax = loads.base_force.x / cfg.base_mass;
    let ay = loads.base_force.y / cfg.base_mass;
    next.base.vx = b.vx + (cmd_vx - b.vx) * blend + dt * ax;
    next.base.vy = b.vy + (cmd_vy - b.vy) * blend + dt * ay;
    next.base.yaw_rate = b.yaw_rate + (command[2] - b.yaw_rate) * blend;
    next.base.x = b.x + dt * next.base.vx;
    next.base.y = b.y + dt * next.base.vy;
    next.base.yaw = wrap_angle(b.yaw + dt * next.base.yaw_rate);
    let horizontal = loads.ee_force.x.hypot(loads.ee_force.y);
    next.base.tilt = (cfg.tilt_per_newton * horizontal).min(cfg.tilt_cap);
    Ok(next)
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI) % two_pi;
    if r < 0.0 {
        r += two_pi;
    }
    r - std::f64::consts::PI
}

/// Robot at rest at a base pose with the arm in its default posture.
pub fn initial_state(base: BaseState, cfg: &RobotConfig) -> RobotState {
    RobotState {
        base,
        arm: ArmState {
            q: cfg.q_default,
            qd: [0.0; ARM_DOF],
            qdd: [0.0; ARM_DOF],
            targets: cfg.q_default,
        },
    }
}
