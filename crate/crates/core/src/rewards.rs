//! Reward terms for handle manipulation, door opening, passing and shaping,
//! their stage-dependent composition, and the opening/passing task machine.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::door::OpeningDir;
use crate::interaction::Zone;
use crate::robot::{ACTION_DIM, ARM_DOF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Target opening angle for r_od (degrees).
    pub target_angle_deg: f64,
    /// Door counts as opened enough at this angle (degrees).
    pub enough_angle_deg: f64,
    /// Opening stage ends above this angle (degrees).
    pub pass_angle_deg: f64,
    /// Base tilt threshold (degrees).
    pub tilt_threshold_deg: f64,
    pub w_od: f64,
    pub w_adp: f64,
    pub w_hg: f64,
    pub w_ma: f64,
    pub w_pbt: f64,
    pub w_psa: f64,
    pub w_pcl: f64,
    pub w_pc: f64,
    /// Maximum commandable base speed, normalizes r_p.
    pub v_max: f64,
    /// Hook-handle distance within which grasp terms are active.
    pub grasp_active_distance: f64,
    pub stretch_start: f64,
    pub stretch_ramp: f64,
    pub action_limits: [f64; ACTION_DIM],
    pub action_ramps: [f64; ACTION_DIM],
}

impl Default for RewardConfig {
    fn default() -> Self {
        let mut action_limits = [2.0; ACTION_DIM];
        action_limits[0] = 0.5;
        action_limits[1] = 0.5;
        action_limits[2] = 1.0;
        let mut action_ramps = [0.0; ACTION_DIM];
        for (r, l) in action_ramps.iter_mut().zip(&action_limits) {
            *r = 0.5 * l;
        }
        Self {
            target_angle_deg: 75.0,
            enough_angle_deg: 30.0,
            pass_angle_deg: 70.0,
            tilt_threshold_deg: 8.0,
            w_od: 3.0,
            w_adp: 0.5,
            w_hg: 0.5,
            w_ma: 0.3,
            w_pbt: 0.5,
            w_psa: 1.0,
            w_pcl: 0.1,
            w_pc: 2.0,
            v_max: 0.5,
            grasp_active_distance: 1.0,
            stretch_start: 0.6,
            stretch_ramp: 0.1,
            action_limits,
            action_ramps,
        }
    }
}

impl RewardConfig {
    pub fn target_angle(&self) -> f64 {
        self.target_angle_deg.to_radians()
    }

    pub fn enough_angle(&self) -> f64 {
        self.enough_angle_deg.to_radians()
    }

    pub fn pass_angle(&self) -> f64 {
        self.pass_angle_deg.to_radians()
    }

    /// Maximum handle-manipulation reward: the sum of per-term maxima
    /// (r_ehd, r_th, r_eho, weighted r_hg; r_plg peaks at 0).
    pub fn max_handle_reward(&self) -> f64 {
        1.0 + 1.0 + 1.0 + self.w_hg * 1.0 + 0.0
    }

    /// Maximum opening reward for a door type.
    pub fn max_opening_reward(&self, dir: OpeningDir) -> f64 {
        let base = self.w_od * 1.0 + self.max_handle_reward();
        match dir {
            OpeningDir::Push => base,
            OpeningDir::Pull => base + self.w_adp * (Zone::Z2.score() * 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Stage {
    #[default]
    Opening,
    Passing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageState {
    pub stage: Stage,
    /// Base has crossed the wall plane.
    pub passed_doorway: bool,
}

/// One value per reward term plus the composed total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ehd: f64,
    pub r_th: f64,
    pub r_eho: f64,
    pub r_hg: f64,
    pub r_plg: f64,
    pub r_od: f64,
    pub r_adp: f64,
    pub r_hm: f64,
    pub r_o: f64,
    pub r_p: f64,
    pub r_ma: f64,
    pub r_pbt: f64,
    pub r_psa: f64,
    pub r_pcl: f64,
    pub r_pc: f64,
    pub r_s: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const COLUMNS: [&'static str; 17] = [
        "r_ehd", "r_th", "r_eho", "r_hg", "r_plg", "r_od", "r_adp", "r_hm", "r_o", "r_p", "r_ma",
        "r_pbt", "r_psa", "r_pcl", "r_pc", "r_s", "total",
    ];

    pub fn values(&self) -> [f64; 17] {
        [
            self.r_ehd, self.r_th, self.r_eho, self.r_hg, self.r_plg, self.r_od, self.r_adp,
            self.r_hm, self.r_o, self.r_p, self.r_ma, self.r_pbt, self.r_psa, self.r_pcl,
            self.r_pc, self.r_s, self.total,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandleTerms {
    pub r_ehd: f64,
    pub r_th: f64,
    pub r_eho: f64,
    pub r_hg: f64,
    pub r_plg: f64,
    pub r_hm: f64,
}

/// Handle-manipulation terms. `in_zone` says whether the handle point lies in
/// the grasp zone; `grasp_lost` whether a grasp held at the previous step is
/// gone now.
#[allow(clippy::too_many_arguments)]
pub fn handle_manipulation_terms(
    ee: &Vector3<f64>,
    handle: &Vector3<f64>,
    orientation_error: f64,
    in_zone: bool,
    grasp_lost: bool,
    phi: f64,
    phi_max: f64,
    cfg: &RewardConfig,
) -> HandleTerms {
    let dist = (ee - handle).norm();
    let active = dist <= cfg.grasp_active_distance;
    let r_ehd = (-dist).exp();
    let r_th = phi / phi_max;
    let r_eho = 1.0 - orientation_error.abs() / std::f64::consts::PI;
    let r_hg = if active && in_zone { 1.0 } else { 0.0 };
    let r_plg = if active && grasp_lost {
        -1.0
    } else {
        0.0
    };
    let r_hm = r_ehd + r_th + r_eho + cfg.w_hg * r_hg + r_plg;
    HandleTerms {
        r_ehd,
        r_th,
        r_eho,
        r_hg,
        r_plg,
        r_hm,
    }
}

/// Door-opening term and the pull-door move-around term.
pub fn open_door_terms(
    theta: f64,
    base_zone: Zone,
    ee_zone: Zone,
    dir: OpeningDir,
    cfg: &RewardConfig,
) -> (f64, f64) {
    let target = cfg.target_angle();
    let r_od = 1.0 - (theta - target).abs() / target;
    let r_adp = if dir == OpeningDir::Pull && theta >= cfg.enough_angle() {
        base_zone.score() + ee_zone.score()
    } else {
        0.0
    };
    (r_od, r_adp)
}

/// Progress vector: toward the doorway center before crossing the wall
/// plane, along the through-direction afterwards.
pub fn progress_vector(
    base: &Vector3<f64>,
    doorway_center: &Vector3<f64>,
    through: &Vector3<f64>,
    passed_doorway: bool,
) -> Vector3<f64> {
    if passed_doorway {
        Vector3::new(through.x, through.y, 0.0).normalize()
    } else {
        let d = Vector3::new(doorway_center.x - base.x, doorway_center.y - base.y, 0.0);
        let n = d.norm();
        if n > 0.0 {
            d / n
        } else {
            Vector3::new(through.x, through.y, 0.0).normalize()
        }
    }
}

/// Passing progress, clipped above at 1 and unclipped below.
pub fn passing_term(
    base_velocity: &Vector3<f64>,
    base: &Vector3<f64>,
    doorway_center: &Vector3<f64>,
    through: &Vector3<f64>,
    passed_doorway: bool,
    cfg: &RewardConfig,
) -> f64 {
    let p = progress_vector(base, doorway_center, through, passed_doorway);
    let v = Vector3::new(base_velocity.x, base_velocity.y, 0.0);
    (p.dot(&v) / cfg.v_max).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapingTerms {
    pub r_ma: f64,
    pub r_pbt: f64,
    pub r_psa: f64,
    pub r_pcl: f64,
    pub r_pc: f64,
    pub r_s: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn shaping_terms(
    qd: &[f64; ARM_DOF],
    qdd: &[f64; ARM_DOF],
    tilt: f64,
    ee: &Vector3<f64>,
    shoulder: &Vector3<f64>,
    action: &[f64; ACTION_DIM],
    colliding_links: usize,
    cfg: &RewardConfig,
) -> ShapingTerms {
    let r_ma: f64 = (0..ARM_DOF)
        .map(|i| (-0.01 * qd[i] * qd[i]).exp() + (-1e-6 * qdd[i] * qdd[i]).exp())
        .sum();
    let r_pbt = if tilt > cfg.tilt_threshold_deg.to_radians() {
        -1.0
    } else {
        0.0
    };
    let stretch = (ee - shoulder).norm();
    let r_psa = -((stretch - cfg.stretch_start) / cfg.stretch_ramp).clamp(0.0, 1.0);
    let r_pcl = -(0..ACTION_DIM)
        .map(|i| ((action[i].abs() - cfg.action_limits[i]) / cfg.action_ramps[i]).clamp(0.0, 1.0))
        .sum::<f64>();
    let r_pc = -(colliding_links as f64);
    let r_s = cfg.w_ma * r_ma + cfg.w_pbt * r_pbt + cfg.w_psa * r_psa + cfg.w_pcl * r_pcl + cfg.w_pc * r_pc;
    ShapingTerms {
        r_ma,
        r_pbt,
        r_psa,
        r_pcl,
        r_pc,
        r_s,
    }
}

/// Advance the task machine. Passing is absorbing.
pub fn stage_update(
    stage: StageState,
    theta: f64,
    dir: OpeningDir,
    base_behind_panel: bool,
    ee_behind_panel: bool,
    base_past_wall: bool,
    cfg: &RewardConfig,
) -> StageState {
    let mut next = stage;
    next.passed_doorway = stage.passed_doorway || base_past_wall;
    if stage.stage == Stage::Opening && theta > cfg.pass_angle() {
        let gates = match dir {
            OpeningDir::Push => true,
            OpeningDir::Pull => base_behind_panel && ee_behind_panel,
        };
        if gates {
            next.stage = Stage::Passing;
        }
    }
    next
}

/// Fill `r_hm`-dependent fields, `r_o` and `total` of a breakdown whose
/// individual terms are already set.
pub fn compose_reward(
    b: &mut RewardBreakdown,
    stage: Stage,
    theta: f64,
    dir: OpeningDir,
    cfg: &RewardConfig,
) -> f64 {
    let handle_part = if theta < cfg.enough_angle() {
        b.r_hm
    } else {
        cfg.max_handle_reward() + cfg.w_adp * b.r_adp
    };
    b.total = match stage {
        Stage::Opening => {
            b.r_o = cfg.w_od * b.r_od + handle_part;
            b.r_o + b.r_s
        }
        Stage::Passing => {
            b.r_o = cfg.max_opening_reward(dir);
            b.r_o + b.r_p + b.r_s
        }
    };
    b.total
}
