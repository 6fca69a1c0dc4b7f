//! A hand-written hook controller: reach the handle with damped least-squares
//! inverse kinematics, press it down, then push the panel open.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::env::Env;
use crate::robot::{Action, ACTION_DIM, ARM_DOF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Approach,
    Insert,
    Press,
    Push,
}

#[derive(Debug, Clone)]
pub struct ScriptedController {
    pub phase: Phase,
    pub damping: f64,
    pub max_joint_step: f64,
}

impl Default for ScriptedController {
    fn default() -> Self {
        Self {
            phase: Phase::Approach,
            damping: 0.05,
            max_joint_step: 0.3,
        }
    }
}

impl ScriptedController {
    /// Arm actions moving the end-effector toward `target`.
    pub fn reach(&self, env: &Env, target: &Vector3<f64>) -> [f64; ARM_DOF] {
        let cfg = &env.settings().robot;
        let kin = env.kinematics();
        let j = kin.jacobian;
        let err = target - kin.ee;
        let jjt = j * j.transpose() + Matrix3::identity() * (self.damping * self.damping);
        let y = jjt.lu().solve(&err).unwrap_or_else(Vector3::zeros);
        let dq = j.transpose() * y;
        let mut a = [0.0; ARM_DOF];
        for i in 0..ARM_DOF {
            let step = dq[i].clamp(-self.max_joint_step, self.max_joint_step);
            let q_des = env.robot.arm.q[i] + step;
            a[i] = (q_des - cfg.q_default[i]) / cfg.action_scale;
        }
        a
    }

    pub fn act(&mut self, env: &Env) -> Action {
        let hp = env.handle_pose();
        let kin = env.kinematics();
        let dist = (kin.ee - hp.point).norm();
        self.phase = match self.phase {
            Phase::Approach if dist < 0.1 => Phase::Insert,
            Phase::Insert if env.report.grasped => Phase::Press,
            Phase::Press if !env.door.latched => Phase::Push,
            p => p,
        };
        let target = match self.phase {
            Phase::Approach => hp.point - hp.axis * 0.08,
            Phase::Insert => hp.point,
            Phase::Press => hp.point - Vector3::z() * 0.4,
            Phase::Push => hp.point - Vector3::z() * 0.15 + hp.axis * 0.1,
        };
        let arm = self.reach(env, &target);
        let mut a = [0.0; ACTION_DIM];
        a[3..].copy_from_slice(&arm);
        if self.phase == Phase::Push {
            let fwd = env.robot.base.dir_to_base_frame(hp.axis);
            a[0] = 0.3 * fwd.x;
            a[1] = 0.3 * fwd.y;
        }
        Action(a)
    }
}
