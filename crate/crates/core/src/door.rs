//! Articulated door: hinge and handle degrees of freedom, latch, pretension
//! and damping torques, and the geometry queries the interaction layer needs.
//!
//! All geometry is expressed in world coordinates. The doorway frame has its
//! origin at the doorway center on the floor, x pointing from the robot's start
//! side through the doorway, z up. The wall plane is `x = 0` in that frame.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default hinge travel limit.
pub const DEFAULT_HINGE_LIMIT: f64 = 110.0 * std::f64::consts::PI / 180.0;
/// Handle inertia about its own axis.
pub const HANDLE_INERTIA: f64 = 0.05;
/// Unlatch threshold as a fraction of the handle's maximum turning angle.
pub const UNLATCH_FRACTION: f64 = 0.8;
/// Distance of the handle lever from the panel face.
pub const HANDLE_STANDOFF: f64 = 0.06;
pub const PANEL_HEIGHT: f64 = 2.0;
/// Wall slab thickness around the doorway.
pub const WALL_THICKNESS: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum DoorError {
    #[error("non-positive {0}: {1}")]
    NonPositive(&'static str, f64),
    #[error("non-finite input to door step")]
    NonFinite,
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpeningDir {
    Push,
    Pull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HingeSide {
    Left,
    Right,
}

/// One of the four door types. The discriminant is the class index used by
/// one-hot observations and the student's door-type head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoorType {
    PushLeft = 0,
    PushRight = 1,
    PullLeft = 2,
    PullRight = 3,
}

impl DoorType {
    pub const ALL: [DoorType; 4] = [
        DoorType::PushLeft,
        DoorType::PushRight,
        DoorType::PullLeft,
        DoorType::PullRight,
    ];

    pub fn new(dir: OpeningDir, side: HingeSide) -> Self {
        match (dir, side) {
            (OpeningDir::Push, HingeSide::Left) => DoorType::PushLeft,
            (OpeningDir::Push, HingeSide::Right) => DoorType::PushRight,
            (OpeningDir::Pull, HingeSide::Left) => DoorType::PullLeft,
            (OpeningDir::Pull, HingeSide::Right) => DoorType::PullRight,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn opening_dir(self) -> OpeningDir {
        match self {
            DoorType::PushLeft | DoorType::PushRight => OpeningDir::Push,
            DoorType::PullLeft | DoorType::PullRight => OpeningDir::Pull,
        }
    }

    pub fn hinge_side(self) -> HingeSide {
        match self {
            DoorType::PushLeft | DoorType::PullLeft => HingeSide::Left,
            DoorType::PushRight | DoorType::PullRight => HingeSide::Right,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DoorType::PushLeft => "push-left",
            DoorType::PushRight => "push-right",
            DoorType::PullLeft => "pull-left",
            DoorType::PullRight => "pull-right",
        }
    }
}

/// Planar pose of the wall (doorway frame) in the world.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl PlanarPose {
    pub fn to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y, p.z)
    }

    pub fn dir_to_world(&self, d: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z)
    }

    pub fn to_local(&self, p: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Vector3::new(c * dx + s * dy, -s * dx + c * dy, p.z)
    }

    pub fn dir_to_local(&self, d: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }
}

/// Door geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorSpec {
    pub opening_dir: OpeningDir,
    pub hinge_side: HingeSide,
    /// Panel width.
    pub d_w: f64,
    /// Panel thickness.
    pub d_t: f64,
    /// Handle lever length.
    pub h_l: f64,
    /// Handle height above the floor.
    pub h_h: f64,
    /// Handle pivot inset from the panel's free edge.
    pub h_o: f64,
    pub wall_pose: PlanarPose,
    pub panel_height: f64,
    pub hinge_limit: f64,
}

/// Randomized door dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorDynamicsParams {
    pub mass: f64,
    /// Constant hinge pretension opposing opening.
    pub tau_hinge: f64,
    /// Constant handle pretension opposing turning.
    pub tau_handle: f64,
    /// Quadratic (air) hinge damping.
    pub k_ar: f64,
    /// Linear (door closer) hinge damping.
    pub k_dc: f64,
    pub phi_max: f64,
    pub phi_unlatch: f64,
    pub hinge_inertia: f64,
    pub handle_inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorState {
    pub theta: f64,
    pub theta_dot: f64,
    pub phi: f64,
    pub phi_dot: f64,
    pub latched: bool,
}

impl Default for DoorState {
    fn default() -> Self {
        Self {
            theta: 0.0,
            theta_dot: 0.0,
            phi: 0.0,
            phi_dot: 0.0,
            latched: true,
        }
    }
}

/// Serialized door description. Key names are part of the config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoorConfig {
    pub opening_dir: OpeningDir,
    pub hinge_side: HingeSide,
    pub d_w: f64,
    pub d_t: f64,
    pub h_l: f64,
    pub h_h: f64,
    pub h_o: f64,
    pub mass: f64,
    pub tau_hinge: f64,
    pub tau_handle: f64,
    pub k_ar: f64,
    /// Closer damping as a multiple of the hinge pretension.
    pub alpha_dc: f64,
    /// Maximum handle angle in radians.
    pub phi_max: f64,
}

impl DoorConfig {
    pub fn build(&self) -> Result<(DoorSpec, DoorDynamicsParams), DoorError> {
        let spec = DoorSpec::new(
            self.opening_dir,
            self.hinge_side,
            self.d_w,
            self.d_t,
            self.h_l,
            self.h_h,
            self.h_o,
        )?;
        let params = DoorDynamicsParams::new(
            self.mass,
            self.d_w,
            self.tau_hinge,
            self.tau_handle,
            self.k_ar,
            self.alpha_dc * self.tau_hinge,
            self.phi_max,
        )?;
        Ok((spec, params))
    }

    pub fn from_parts(spec: &DoorSpec, params: &DoorDynamicsParams) -> Self {
        let alpha_dc = if params.tau_hinge > 0.0 {
            params.k_dc / params.tau_hinge
        } else {
            0.0
        };
        Self {
            opening_dir: spec.opening_dir,
            hinge_side: spec.hinge_side,
            d_w: spec.d_w,
            d_t: spec.d_t,
            h_l: spec.h_l,
            h_h: spec.h_h,
            h_o: spec.h_o,
            mass: params.mass,
            tau_hinge: params.tau_hinge,
            tau_handle: params.tau_handle,
            k_ar: params.k_ar,
            alpha_dc,
            phi_max: params.phi_max,
        }
    }
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), DoorError> {
    if !value.is_finite() || value < lo || value > hi {
        return Err(DoorError::OutOfRange {
            name,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

/// Moment of inertia of a uniform panel about its hinge edge.
pub fn hinge_inertia(mass: f64, d_w: f64) -> Result<f64, DoorError> {
    if !(mass > 0.0) {
        return Err(DoorError::NonPositive("mass", mass));
    }
    if !(d_w > 0.0) {
        return Err(DoorError::NonPositive("panel width", d_w));
    }
    Ok(mass * d_w * d_w / 3.0)
}

impl DoorDynamicsParams {
    pub fn new(
        mass: f64,
        d_w: f64,
        tau_hinge: f64,
        tau_handle: f64,
        k_ar: f64,
        k_dc: f64,
        phi_max: f64,
    ) -> Result<Self, DoorError> {
        let hinge_inertia = hinge_inertia(mass, d_w)?;
        for (name, v) in [
            ("tau_hinge", tau_hinge),
            ("tau_handle", tau_handle),
            ("k_ar", k_ar),
            ("k_dc", k_dc),
        ] {
            check_range(name, v, 0.0, f64::MAX)?;
        }
        if !(phi_max > 0.0) {
            return Err(DoorError::NonPositive("phi_max", phi_max));
        }
        Ok(Self {
            mass,
            tau_hinge,
            tau_handle,
            k_ar,
            k_dc,
            phi_max,
            phi_unlatch: UNLATCH_FRACTION * phi_max,
            hinge_inertia,
            handle_inertia: HANDLE_INERTIA,
        })
    }

    /// Torque currently opposing the hinge from pretension and damping.
    pub fn hinge_resistance(&self, theta_dot: f64) -> f64 {
        self.tau_hinge + self.k_dc * theta_dot + self.k_ar * theta_dot * theta_dot.abs()
    }
}

/// A rectangular slab in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub center: Vector3<f64>,
    /// Unit axes: along the panel width, along the panel normal, vertical.
    pub axes: [Vector3<f64>; 3],
    pub half_extents: Vector3<f64>,
}

impl Slab {
    pub fn normal(&self) -> Vector3<f64> {
        self.axes[1]
    }
}

/// Handle point and its derivatives with respect to the door joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandlePose {
    /// Grasp point at the lever tip.
    pub point: Vector3<f64>,
    pub pivot: Vector3<f64>,
    /// Rotation axis of the handle, pointing from the robot's face into the panel.
    pub axis: Vector3<f64>,
    /// Unit vector from the pivot along the lever.
    pub lever: Vector3<f64>,
    pub d_dtheta: Vector3<f64>,
    pub d_dphi: Vector3<f64>,
}

impl HandlePose {
    pub fn velocity(&self, state: &DoorState) -> Vector3<f64> {
        self.d_dtheta * state.theta_dot + self.d_dphi * state.phi_dot
    }
}

impl DoorSpec {
    pub fn new(
        opening_dir: OpeningDir,
        hinge_side: HingeSide,
        d_w: f64,
        d_t: f64,
        h_l: f64,
        h_h: f64,
        h_o: f64,
    ) -> Result<Self, DoorError> {
        check_range("d_w", d_w, 0.1, 3.0)?;
        check_range("d_t", d_t, 0.001, 0.5)?;
        check_range("h_l", h_l, 0.01, 0.5)?;
        check_range("h_h", h_h, 0.1, PANEL_HEIGHT)?;
        check_range("h_o", h_o, 0.0, d_w - h_l)?;
        Ok(Self {
            opening_dir,
            hinge_side,
            d_w,
            d_t,
            h_l,
            h_h,
            h_o,
            wall_pose: PlanarPose::default(),
            panel_height: PANEL_HEIGHT,
            hinge_limit: DEFAULT_HINGE_LIMIT,
        })
    }

    pub fn door_type(&self) -> DoorType {
        DoorType::new(self.opening_dir, self.hinge_side)
    }

    /// +1 for push doors, -1 for pull doors.
    fn swing_sign(&self) -> f64 {
        match self.opening_dir {
            OpeningDir::Push => 1.0,
            OpeningDir::Pull => -1.0,
        }
    }

    /// +1 when the hinge sits at positive doorway-frame y.
    fn side_sign(&self) -> f64 {
        match self.hinge_side {
            HingeSide::Right => 1.0,
            HingeSide::Left => -1.0,
        }
    }

    /// Sign of the panel's yaw rate for positive hinge velocity.
    pub fn rotation_sign(&self) -> f64 {
        self.swing_sign() * self.side_sign()
    }

    /// Hinge line position in the doorway frame (2D).
    pub fn hinge_local(&self) -> Vector2<f64> {
        Vector2::new(0.0, self.side_sign() * self.d_w / 2.0)
    }

    pub fn hinge_world(&self) -> Vector3<f64> {
        let h = self.hinge_local();
        self.wall_pose.to_world(Vector3::new(h.x, h.y, 0.0))
    }

    /// Unit vector from the hinge to the free edge, and the panel normal, in
    /// the doorway frame. The normal points through the doorway when closed.
    fn panel_axes_local(&self, theta: f64) -> (Vector3<f64>, Vector3<f64>) {
        let s = self.swing_sign();
        let h = self.side_sign();
        let (st, ct) = theta.sin_cos();
        let u = Vector3::new(s * st, -h * ct, 0.0);
        let n = Vector3::new(ct, s * h * st, 0.0);
        (u, n)
    }

    /// Doorway center at mid panel height and the unit through-direction.
    pub fn doorway_frame(&self) -> (Vector3<f64>, Vector3<f64>) {
        let center = self
            .wall_pose
            .to_world(Vector3::new(0.0, 0.0, self.panel_height / 2.0));
        let through = self.wall_pose.dir_to_world(Vector3::x());
        (center, through)
    }

    /// The door panel as a slab rotated about the hinge line.
    pub fn panel_geometry(&self, state: &DoorState) -> Slab {
        let (u, n) = self.panel_axes_local(state.theta);
        let hinge = self.hinge_local();
        let c = Vector3::new(hinge.x, hinge.y, self.panel_height / 2.0) + u * (self.d_w / 2.0);
        Slab {
            center: self.wall_pose.to_world(c),
            axes: [
                self.wall_pose.dir_to_world(u),
                self.wall_pose.dir_to_world(n),
                Vector3::z(),
            ],
            half_extents: Vector3::new(self.d_w / 2.0, self.d_t / 2.0, self.panel_height / 2.0),
        }
    }

    /// Handle on the start-side face of the panel. The lever points toward the
    /// hinge at rest and its tip moves downward as the handle turns.
    pub fn handle_pose(&self, state: &DoorState) -> HandlePose {
        let (u, n) = self.panel_axes_local(state.theta);
        let hinge = self.hinge_local();
        let hinge3 = Vector3::new(hinge.x, hinge.y, 0.0);
        let (sp, cp) = state.phi.sin_cos();
        let offset = self.d_t / 2.0 + HANDLE_STANDOFF;
        let pivot = hinge3 + u * (self.d_w - self.h_o) - n * offset + Vector3::z() * self.h_h;
        let lever = -u * cp - Vector3::z() * sp;
        let point = pivot + lever * self.h_l;
        // Panel rotates about z at rate rotation_sign * theta_dot.
        let omega = Vector3::z() * self.rotation_sign();
        let d_dtheta = omega.cross(&(point - hinge3));
        let d_dphi = (u * sp - Vector3::z() * cp) * self.h_l;
        let wp = &self.wall_pose;
        HandlePose {
            point: wp.to_world(point),
            pivot: wp.to_world(pivot),
            axis: wp.dir_to_world(n),
            lever: wp.dir_to_world(lever),
            d_dtheta: wp.dir_to_world(d_dtheta),
            d_dphi: wp.dir_to_world(d_dphi),
        }
    }

    /// Hinge torque produced by a force applied at a world point on the panel.
    pub fn hinge_torque_from_force(&self, point: Vector3<f64>, force: Vector3<f64>) -> f64 {
        let r = point - self.hinge_world();
        self.rotation_sign() * (r.x * force.y - r.y * force.x)
    }

    /// Velocity of a world point rigidly attached to the panel.
    pub fn panel_point_velocity(&self, point: Vector3<f64>, theta_dot: f64) -> Vector3<f64> {
        let r = point - self.hinge_world();
        let w = self.rotation_sign() * theta_dot;
        Vector3::new(-w * r.y, w * r.x, 0.0)
    }

    /// Immovable wall slabs on either side of the doorway opening.
    pub fn wall_slabs(&self) -> [Slab; 2] {
        const HALF_LEN: f64 = 20.0;
        let gap = 0.005;
        let make = |sign: f64| {
            let y = sign * (self.d_w / 2.0 + gap + HALF_LEN);
            Slab {
                center: self
                    .wall_pose
                    .to_world(Vector3::new(0.0, y, self.panel_height / 2.0 + 0.25)),
                axes: [
                    self.wall_pose.dir_to_world(Vector3::y()),
                    self.wall_pose.dir_to_world(Vector3::x()),
                    Vector3::z(),
                ],
                half_extents: Vector3::new(
                    HALF_LEN,
                    WALL_THICKNESS / 2.0,
                    self.panel_height / 2.0 + 0.25,
                ),
            }
        };
        [make(1.0), make(-1.0)]
    }
}

/// Net hinge and handle torques. Pretension acts toward the closed/rest
/// position; at rest on the boundary it behaves as stiction.
pub fn net_torques(
    state: &DoorState,
    params: &DoorDynamicsParams,
    applied_hinge: f64,
    applied_handle: f64,
) -> (f64, f64) {
    let hinge = pretension_net(state.theta, state.theta_dot, params.tau_hinge, applied_hinge)
        - params.k_dc * state.theta_dot
        - params.k_ar * state.theta_dot * state.theta_dot.abs();
    let handle = pretension_net(state.phi, state.phi_dot, params.tau_handle, applied_handle);
    (hinge, handle)
}

fn pretension_net(pos: f64, vel: f64, pretension: f64, applied: f64) -> f64 {
    if pos <= 0.0 && vel == 0.0 {
        if applied > pretension {
            applied - pretension
        } else {
            0.0
        }
    } else {
        applied - pretension
    }
}

/// One semi-implicit Euler substep of the door.
///
/// Damping is integrated implicitly so it can only remove speed.
pub fn step_door(
    state: &DoorState,
    spec: &DoorSpec,
    params: &DoorDynamicsParams,
    applied_hinge: f64,
    applied_handle: f64,
    dt: f64,
) -> Result<DoorState, DoorError> {
    if !(applied_hinge.is_finite()
        && applied_handle.is_finite()
        && dt.is_finite()
        && state.theta.is_finite()
        && state.theta_dot.is_finite()
        && state.phi.is_finite()
        && state.phi_dot.is_finite())
    {
        return Err(DoorError::NonFinite);
    }
    if !(dt > 0.0) {
        return Err(DoorError::NonPositive("dt", dt));
    }
    let mut next = *state;

    // Handle.
    let handle_drive = pretension_net(state.phi, state.phi_dot, params.tau_handle, applied_handle);
    next.phi_dot = state.phi_dot + dt * handle_drive / params.handle_inertia;
    next.phi = state.phi + dt * next.phi_dot;
    if next.phi <= 0.0 {
        next.phi = 0.0;
        next.phi_dot = 0.0;
    } else if next.phi >= params.phi_max {
        next.phi = params.phi_max;
        next.phi_dot = 0.0;
    }
    if next.latched && next.phi >= params.phi_unlatch {
        next.latched = false;
    }

    // Hinge.
    if next.latched {
        next.theta = 0.0;
        next.theta_dot = 0.0;
        return Ok(next);
    }
    let drive = pretension_net(state.theta, state.theta_dot, params.tau_hinge, applied_hinge);
    let i = params.hinge_inertia;
    let damping = params.k_dc + params.k_ar * state.theta_dot.abs();
    next.theta_dot = (state.theta_dot + dt * drive / i) / (1.0 + dt * damping / i);
    next.theta = state.theta + dt * next.theta_dot;
    if next.theta <= 0.0 {
        next.theta = 0.0;
        next.theta_dot = 0.0;
    } else if next.theta >= spec.hinge_limit {
        next.theta = spec.hinge_limit;
        next.theta_dot = 0.0;
    }
    if next.theta == 0.0 && next.phi < params.phi_unlatch {
        next.latched = true;
    }
    Ok(next)
}
