//! Per-episode sampling of door geometry, door dynamics, initial robot state
//! and arm gains from seeded counter-based streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::door::{DoorDynamicsParams, DoorError, DoorSpec, DoorType};
use crate::robot::{initial_state, ArmGains, ArmState, BaseState, RobotConfig, ARM_DOF};

#[derive(Debug, Error)]
pub enum RandomizationError {
    #[error("range `{0}` has lo {1} > hi {2}")]
    InvertedRange(&'static str, f64, f64),
    #[error("probability `{0}` = {1} outside [0, 1]")]
    BadProbability(&'static str, f64),
    #[error("no door types allowed")]
    NoDoorTypes,
    #[error("unknown randomization key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Door(#[from] DoorError),
}

/// Purposes of independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Episode = 1,
    ObsNoise = 2,
    Policy = 3,
    Eval = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A generator keyed by (experiment seed, env index, episode index, purpose).
/// The sequence of one key never depends on how many other keys exist.
pub fn stream(seed: u64, env: u64, episode: u64, tag: StreamTag) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, part) in [env, episode, tag as u64, 0x646f_6f72].into_iter().enumerate() {
        h = splitmix64(h ^ part.wrapping_mul(0x2545_f491_4f6c_dd1d));
        key[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationRanges {
    pub d_wall: [f64; 2],
    pub d_center: [f64; 2],
    pub yaw_deg: [f64; 2],
    pub init_vx: [f64; 2],
    pub init_vy: [f64; 2],
    pub mass: [f64; 2],
    pub tau_hinge: [f64; 2],
    pub p_tau_hinge_zero: f64,
    pub tau_handle: [f64; 2],
    pub p_tau_handle_zero: f64,
    pub k_ar: [f64; 2],
    pub alpha_dc: [f64; 2],
    pub p_damping_zero: f64,
    pub phi_max_deg: [f64; 2],
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    pub d_w: [f64; 2],
    pub d_t: [f64; 2],
    pub h_l: [f64; 2],
    pub h_h: [f64; 2],
    pub h_o: [f64; 2],
    pub door_types: Vec<DoorType>,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            d_wall: [1.0, 2.0],
            d_center: [-2.0, 2.0],
            yaw_deg: [-180.0, 180.0],
            init_vx: [-0.5, 0.5],
            init_vy: [-0.5, 0.5],
            mass: [15.0, 75.0],
            tau_hinge: [0.0, 30.0],
            p_tau_hinge_zero: 0.2,
            tau_handle: [0.0, 3.0],
            p_tau_handle_zero: 0.2,
            k_ar: [0.0, 4.0],
            alpha_dc: [1.5, 3.0],
            p_damping_zero: 0.4,
            phi_max_deg: [15.0, 90.0],
            kp: [40.0, 60.0],
            kd: [3.0, 6.0],
            d_w: [0.8, 1.0],
            d_t: [0.02, 0.06],
            h_l: [0.08, 0.12],
            h_h: [0.7, 1.3],
            h_o: [0.03, 0.12],
            door_types: DoorType::ALL.to_vec(),
        }
    }
}

/// Names accepted by [`RandomizationRanges::freeze`].
pub const RANGE_NAMES: [&str; 21] = [
    "d_wall", "d_center", "yaw_deg", "init_vx", "init_vy", "mass", "tau_hinge", "tau_handle",
    "k_ar", "alpha_dc", "phi_max_deg", "kp", "kd", "d_w", "d_t", "h_l", "h_h", "h_o",
    "door_type", "dynamics", "geometry",
];

impl RandomizationRanges {
    fn ranges(&self) -> [(&'static str, [f64; 2]); 18] {
        [
            ("d_wall", self.d_wall),
            ("d_center", self.d_center),
            ("yaw_deg", self.yaw_deg),
            ("init_vx", self.init_vx),
            ("init_vy", self.init_vy),
            ("mass", self.mass),
            ("tau_hinge", self.tau_hinge),
            ("tau_handle", self.tau_handle),
            ("k_ar", self.k_ar),
            ("alpha_dc", self.alpha_dc),
            ("phi_max_deg", self.phi_max_deg),
            ("kp", self.kp),
            ("kd", self.kd),
            ("d_w", self.d_w),
            ("d_t", self.d_t),
            ("h_l", self.h_l),
            ("h_h", self.h_h),
            ("h_o", self.h_o),
        ]
    }

    pub fn validate(&self) -> Result<(), RandomizationError> {
        for (name, [lo, hi]) in self.ranges() {
            if !(lo <= hi) {
                return Err(RandomizationError::InvertedRange(name, lo, hi));
            }
        }
        for (name, p) in [
            ("p_tau_hinge_zero", self.p_tau_hinge_zero),
            ("p_tau_handle_zero", self.p_tau_handle_zero),
            ("p_damping_zero", self.p_damping_zero),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(RandomizationError::BadProbability(name, p));
            }
        }
        if self.door_types.is_empty() {
            return Err(RandomizationError::NoDoorTypes);
        }
        Ok(())
    }

    /// Pin one quantity to the midpoint of its range. Frozen quantities also
    /// lose their zero-mixture. `door_type` pins to the first allowed type;
    /// `dynamics` and `geometry` freeze the door's dynamic or dimensional
    /// parameters as a group.
    pub fn freeze(&mut self, name: &str) -> Result<(), RandomizationError> {
        fn mid(r: &mut [f64; 2]) {
            let m = 0.5 * (r[0] + r[1]);
            *r = [m, m];
        }
        match name {
            "d_wall" => mid(&mut self.d_wall),
            "d_center" => mid(&mut self.d_center),
            "yaw_deg" => mid(&mut self.yaw_deg),
            "init_vx" => mid(&mut self.init_vx),
            "init_vy" => mid(&mut self.init_vy),
            "mass" => mid(&mut self.mass),
            "tau_hinge" => {
                mid(&mut self.tau_hinge);
                self.p_tau_hinge_zero = 0.0;
            }
            "tau_handle" => {
                mid(&mut self.tau_handle);
                self.p_tau_handle_zero = 0.0;
            }
            "k_ar" => {
                mid(&mut self.k_ar);
                self.p_damping_zero = 0.0;
            }
            "alpha_dc" => {
                mid(&mut self.alpha_dc);
                self.p_damping_zero = 0.0;
            }
            "phi_max_deg" => mid(&mut self.phi_max_deg),
            "kp" => mid(&mut self.kp),
            "kd" => mid(&mut self.kd),
            "d_w" => mid(&mut self.d_w),
            "d_t" => mid(&mut self.d_t),
            "h_l" => mid(&mut self.h_l),
            "h_h" => mid(&mut self.h_h),
            "h_o" => mid(&mut self.h_o),
            "door_type" => {
                let first = *self.door_types.first().ok_or(RandomizationError::NoDoorTypes)?;
                self.door_types = vec![first];
            }
            "dynamics" => {
                for n in ["mass", "tau_hinge", "tau_handle", "k_ar", "alpha_dc", "phi_max_deg"] {
                    self.freeze(n)?;
                }
            }
            "geometry" => {
                for n in ["d_w", "d_t", "h_l", "h_h", "h_o"] {
                    self.freeze(n)?;
                }
            }
            other => return Err(RandomizationError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

/// Everything drawn at the start of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSample {
    pub spec: DoorSpec,
    pub params: DoorDynamicsParams,
    pub base: BaseState,
    pub arm: ArmState,
    pub gains: ArmGains,
    pub d_wall: f64,
    pub d_center: f64,
}

/// Raw geometric draw for one door.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoorDraw {
    pub door_type: DoorType,
    pub d_w: f64,
    pub d_t: f64,
    pub h_l: f64,
    pub h_h: f64,
    pub h_o: f64,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.gen::<f64>()
}

/// Assemble the door geometry from a draw; the hinge side selects the edge
/// carrying the hinge.
pub fn generate_door(draw: &DoorDraw) -> Result<DoorSpec, DoorError> {
    DoorSpec::new(
        draw.door_type.opening_dir(),
        draw.door_type.hinge_side(),
        draw.d_w,
        draw.d_t,
        draw.h_l,
        draw.h_h,
        draw.h_o,
    )
}

/// Draw an episode. Every quantity consumes a fixed number of draws in a
/// fixed order, so the stream position never depends on earlier outcomes.
pub fn sample_episode<R: Rng>(
    rng: &mut R,
    ranges: &RandomizationRanges,
    robot: &RobotConfig,
) -> Result<EpisodeSample, RandomizationError> {
    ranges.validate()?;
    let type_u: f64 = rng.gen();
    let k = ((type_u * ranges.door_types.len() as f64) as usize).min(ranges.door_types.len() - 1);
    let draw = DoorDraw {
        door_type: ranges.door_types[k],
        d_w: uniform(rng, ranges.d_w),
        d_t: uniform(rng, ranges.d_t),
        h_l: uniform(rng, ranges.h_l),
        h_h: uniform(rng, ranges.h_h),
        h_o: uniform(rng, ranges.h_o),
    };
    let spec = generate_door(&draw)?;

    let mass = uniform(rng, ranges.mass);
    let tau_hinge_raw = uniform(rng, ranges.tau_hinge);
    let hinge_zero = rng.gen::<f64>() < ranges.p_tau_hinge_zero;
    let tau_handle_raw = uniform(rng, ranges.tau_handle);
    let handle_zero = rng.gen::<f64>() < ranges.p_tau_handle_zero;
    let k_ar_raw = uniform(rng, ranges.k_ar);
    let alpha = uniform(rng, ranges.alpha_dc);
    let damping_zero = rng.gen::<f64>() < ranges.p_damping_zero;
    let phi_max = uniform(rng, ranges.phi_max_deg).to_radians();

    let tau_hinge = if hinge_zero { 0.0 } else { tau_hinge_raw };
    let tau_handle = if handle_zero { 0.0 } else { tau_handle_raw };
    let (k_dc, k_ar) = if damping_zero {
        (0.0, 0.0)
    } else {
        (alpha * tau_hinge, k_ar_raw)
    };
    let params = DoorDynamicsParams::new(mass, spec.d_w, tau_hinge, tau_handle, k_ar, k_dc, phi_max)?;

    let d_wall = uniform(rng, ranges.d_wall);
    let d_center = uniform(rng, ranges.d_center);
    let yaw = uniform(rng, ranges.yaw_deg).to_radians();
    let bvx = uniform(rng, ranges.init_vx);
    let bvy = uniform(rng, ranges.init_vy);
    let mut gains = ArmGains::nominal(robot);
    for i in 0..ARM_DOF {
        gains.kp[i] = uniform(rng, ranges.kp);
    }
    for i in 0..ARM_DOF {
        gains.kd[i] = uniform(rng, ranges.kd);
    }

    // Start side is x < 0 in the doorway frame for every door type; the
    // opening direction decides which way the panel swings.
    let local = nalgebra::Vector3::new(-d_wall, d_center, 0.0);
    let p = spec.wall_pose.to_world(local);
    let yaw_world = spec.wall_pose.yaw + yaw;
    let (s, c) = yaw_world.sin_cos();
    let base = BaseState {
        x: p.x,
        y: p.y,
        yaw: crate::robot::wrap_angle(yaw_world),
        vx: c * bvx - s * bvy,
        vy: s * bvx + c * bvy,
        yaw_rate: 0.0,
        tilt: 0.0,
    };
    let arm = initial_state(base, robot).arm;
    Ok(EpisodeSample {
        spec,
        params,
        base,
        arm,
        gains,
        d_wall,
        d_center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::door::HingeSide;
    use rand::RngCore;

    #[test]
    fn streams_are_keyed() {
        let a = stream(7, 3, 2, StreamTag::Episode).next_u64();
        assert_eq!(a, stream(7, 3, 2, StreamTag::Episode).next_u64());
        assert_ne!(a, stream(7, 3, 3, StreamTag::Episode).next_u64());
        assert_ne!(a, stream(7, 4, 2, StreamTag::Episode).next_u64());
        assert_ne!(a, stream(8, 3, 2, StreamTag::Episode).next_u64());
        assert_ne!(a, stream(7, 3, 2, StreamTag::ObsNoise).next_u64());
    }

    #[test]
    fn sample_is_deterministic() {
        let r = RandomizationRanges::default();
        let c = RobotConfig::default();
        let a = sample_episode(&mut stream(1, 0, 0, StreamTag::Episode), &r, &c).unwrap();
        let b = sample_episode(&mut stream(1, 0, 0, StreamTag::Episode), &r, &c).unwrap();
        assert_eq!(a, b);
        let d = sample_episode(&mut stream(2, 0, 0, StreamTag::Episode), &r, &c).unwrap();
        assert_ne!(a.spec, d.spec);
    }

    #[test]
    fn generate_door_examples() {
        let draw = DoorDraw {
            door_type: DoorType::PushRight,
            d_w: 0.9,
            d_t: 0.04,
            h_l: 0.1,
            h_h: 1.0,
            h_o: 0.03,
        };
        let s = generate_door(&draw).unwrap();
        assert_eq!(s.hinge_side, HingeSide::Right);
        assert!((s.hinge_local().y - 0.45).abs() < 1e-12);
        // Handle pivot sits h_O from the free edge at y = -0.45.
        let hp = s.handle_pose(&Default::default());
        assert!((hp.pivot.y - (-0.45 + 0.03)).abs() < 1e-12);
    }

    #[test]
    fn start_side_and_initial_arm() {
        let r = RandomizationRanges::default();
        let c = RobotConfig::default();
        for ep in 0..200 {
            let s = sample_episode(&mut stream(3, 0, ep, StreamTag::Episode), &r, &c).unwrap();
            let local = s.spec.wall_pose.to_local(s.base.position());
            assert!(local.x <= -1.0 && local.x >= -2.0);
            assert_eq!(s.arm.q, c.q_default);
            assert_eq!(s.arm.qd, [0.0; ARM_DOF]);
            let speed = s.base.vx.hypot(s.base.vy);
            assert!(speed <= 0.5 * 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn freeze_pins_midpoints() {
        let mut r = RandomizationRanges::default();
        r.freeze("dynamics").unwrap();
        r.door_types = vec![DoorType::PushRight];
        let c = RobotConfig::default();
        let s = sample_episode(&mut stream(5, 0, 0, StreamTag::Episode), &r, &c).unwrap();
        assert_eq!(s.params.tau_hinge, 15.0);
        assert_eq!(s.params.mass, 45.0);
        assert_eq!(s.params.k_dc, 2.25 * 15.0);
        assert_eq!(s.spec.door_type(), DoorType::PushRight);
        assert!(r.freeze("nope").is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut r = RandomizationRanges::default();
        r.mass = [80.0, 10.0];
        assert!(r.validate().is_err());
        let mut r = RandomizationRanges::default();
        r.p_damping_zero = 1.5;
        assert!(r.validate().is_err());
    }
}
