//! Robot-door coupling: the frictionless hook/handle grasp spring, penalty
//! contacts against the panel and walls, and the pull-door zones used by the
//! move-around-the-panel reward.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::door::{DoorSpec, DoorState, HandlePose, OpeningDir, Slab, WALL_THICKNESS};
use crate::robot::grasp_zone_diagonal;

/// Contact and coupling gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactConfig {
    pub k_g: f64,
    pub d_g: f64,
    pub k_c: f64,
    pub d_c: f64,
    pub r_b: f64,
    pub r_e: f64,
    /// Grasp releases when the hook-handle distance exceeds this multiple of
    /// the grasp zone diagonal.
    pub release_factor: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            k_g: 2000.0,
            d_g: 50.0,
            k_c: 5000.0,
            d_c: 100.0,
            r_b: 0.35,
            r_e: 0.04,
            release_factor: 1.5,
        }
    }
}

/// Robot bodies that can register collisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactLink {
    Base,
    ThighProxy,
    /// Arm link 1..=6; link 6 carries the hook.
    Arm(u8),
}

impl ContactLink {
    pub fn bit(self) -> u16 {
        match self {
            ContactLink::Base => 1,
            ContactLink::ThighProxy => 2,
            ContactLink::Arm(i) => 1 << (1 + i as u16),
        }
    }
}

/// Set of colliding links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkSet(pub u16);

impl LinkSet {
    pub fn insert(&mut self, link: ContactLink) {
        self.0 |= link.bit();
    }

    pub fn contains(&self, link: ContactLink) -> bool {
        self.0 & link.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: LinkSet) -> LinkSet {
        LinkSet(self.0 | other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Zone {
    #[default]
    None,
    Z1,
    Z2,
}

impl Zone {
    pub fn score(self) -> f64 {
        match self {
            Zone::None => 0.0,
            Zone::Z1 => 1.0,
            Zone::Z2 => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeShape {
    /// Vertical cylinder tested in the horizontal plane.
    Disc,
    Sphere,
}

/// A collision probe on the robot.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub link: ContactLink,
    pub shape: ProbeShape,
    pub center: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CouplingForces {
    /// Force acting on the end-effector.
    pub on_ee: Vector3<f64>,
    pub handle_torque: f64,
    pub hinge_torque: f64,
}

/// Frictionless hook-handle coupling: a spring-damper between the
/// end-effector point and the handle point with the component along the
/// handle lever removed.
pub fn handle_coupling(
    ee: &Vector3<f64>,
    ee_vel: &Vector3<f64>,
    handle: &HandlePose,
    handle_vel: &Vector3<f64>,
    grasped: bool,
    cfg: &ContactConfig,
) -> CouplingForces {
    if !grasped {
        return CouplingForces::default();
    }
    let mut f = (handle.point - ee) * cfg.k_g + (handle_vel - ee_vel) * cfg.d_g;
    f -= handle.lever * f.dot(&handle.lever);
    let on_handle = -f;
    CouplingForces {
        on_ee: f,
        handle_torque: on_handle.dot(&handle.d_dphi),
        hinge_torque: on_handle.dot(&handle.d_dtheta),
    }
}

/// Grasp engagement with hysteresis: engage when the handle enters the zone,
/// release once the hook is far from the handle.
pub fn update_grasp(engaged: bool, in_zone: bool, distance: f64, cfg: &ContactConfig) -> bool {
    if in_zone {
        true
    } else if engaged {
        distance <= cfg.release_factor * grasp_zone_diagonal()
    } else {
        false
    }
}

/// Penetration of a probe into a slab: depth and outward unit normal.
fn penetration(probe: &Probe, slab: &Slab) -> Option<(f64, Vector3<f64>)> {
    let d = probe.center - slab.center;
    let dims = match probe.shape {
        ProbeShape::Disc => 2,
        ProbeShape::Sphere => 3,
    };
    let local: [f64; 3] = [
        d.dot(&slab.axes[0]),
        d.dot(&slab.axes[1]),
        d.dot(&slab.axes[2]),
    ];
    let mut closest = [0.0; 3];
    let mut inside = true;
    for i in 0..dims {
        let h = slab.half_extents[i];
        closest[i] = local[i].clamp(-h, h);
        if local[i].abs() > h {
            inside = false;
        }
    }
    if !inside {
        let mut off = Vector3::zeros();
        for i in 0..dims {
            off += slab.axes[i] * (local[i] - closest[i]);
        }
        let dist = off.norm();
        if dist >= probe.radius || dist == 0.0 {
            return None;
        }
        Some((probe.radius - dist, off / dist))
    } else {
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..dims {
            let gap = slab.half_extents[i] - local[i].abs();
            if gap < best.0 {
                best = (gap, i);
            }
        }
        let i = best.1;
        let sign = if local[i] >= 0.0 { 1.0 } else { -1.0 };
        Some((probe.radius + best.0, slab.axes[i] * sign))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactForces {
    /// Reaction force on each probe, in input order.
    pub on_probes: Vec<Vector3<f64>>,
    /// Sum of forces applied to the door panel.
    pub on_panel: Vector3<f64>,
    pub hinge_torque: f64,
    pub colliding: LinkSet,
}

fn penalty_force(probe: &Probe, slab_point_vel: Vector3<f64>, depth: f64, n: Vector3<f64>, cfg: &ContactConfig) -> Vector3<f64> {
    let rate = -(probe.velocity - slab_point_vel).dot(&n);
    let mag = (cfg.k_c * depth + cfg.d_c * rate).max(0.0);
    n * mag
}

/// Penalty contacts of robot probes against the door panel and the walls.
/// Panel contacts push on the panel; walls only push back on the robot.
/// Contacts of the hook link with the panel do not count as collisions.
pub fn panel_contact(
    probes: &[Probe],
    spec: &DoorSpec,
    state: &DoorState,
    cfg: &ContactConfig,
) -> ContactForces {
    let panel = spec.panel_geometry(state);
    let walls = spec.wall_slabs();
    let mut out = ContactForces {
        on_probes: vec![Vector3::zeros(); probes.len()],
        on_panel: Vector3::zeros(),
        hinge_torque: 0.0,
        colliding: LinkSet::default(),
    };
    for (k, probe) in probes.iter().enumerate() {
        if let Some((depth, n)) = penetration(probe, &panel) {
            let contact = probe.center - n * (probe.radius - depth);
            let slab_vel = spec.panel_point_velocity(contact, state.theta_dot);
            let f = penalty_force(probe, slab_vel, depth, n, cfg);
            out.on_probes[k] += f;
            out.on_panel -= f;
            out.hinge_torque += spec.hinge_torque_from_force(contact, -f);
            if probe.link != ContactLink::Arm(6) {
                out.colliding.insert(probe.link);
            }
        }
        for wall in &walls {
            if let Some((depth, n)) = penetration(probe, wall) {
                out.on_probes[k] += penalty_force(probe, Vector3::zeros(), depth, n, cfg);
                out.colliding.insert(probe.link);
            }
        }
    }
    out
}

/// Pull-door zone of a world point: Z2 past the wall plane, Z1 on the start
/// side inside the sector already swept by the panel and near the doorway.
pub fn zone_membership(point: &Vector3<f64>, spec: &DoorSpec, state: &DoorState) -> Zone {
    if spec.opening_dir != OpeningDir::Pull {
        return Zone::None;
    }
    let p = spec.wall_pose.to_local(*point);
    if p.x > WALL_THICKNESS / 2.0 {
        return Zone::Z2;
    }
    if p.x >= 0.0 || state.theta <= 0.0 {
        return Zone::None;
    }
    let dist_center = p.x.hypot(p.y);
    if dist_center > 1.5 {
        return Zone::None;
    }
    let hinge = spec.hinge_local();
    let r = (p.x - 0.0, p.y - hinge.y);
    // Closed-panel direction from the hinge and rotation sense of opening.
    let side = if hinge.y > 0.0 { 1.0 } else { -1.0 };
    let u0 = (0.0, -side);
    let sense = spec.rotation_sign();
    let cross = u0.0 * r.1 - u0.1 * r.0;
    let dot = u0.0 * r.0 + u0.1 * r.1;
    let angle = (sense * cross).atan2(dot);
    if angle > 0.0 && angle < state.theta {
        Zone::Z1
    } else {
        Zone::None
    }
}

pub fn behind_panel(point: &Vector3<f64>, spec: &DoorSpec, state: &DoorState) -> bool {
    zone_membership(point, spec, state) != Zone::None
}
