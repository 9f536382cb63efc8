//! Generic four-finger kinematic hand.
//!
//! Each finger is a three-revolute chain: one abduction joint about the
//! vertical axis at the base, followed by two flexion joints about the
//! horizontal axis perpendicular to the finger plane. The first link leaves
//! the base horizontally; positive flexion pitches the following links
//! downward. Twelve joints total, position tracked.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{InhandError, Result};

/// Maximum change of a commanded joint angle per control step, radians.
pub const DQ_MAX: f64 = 0.1;

/// Natural frequency of the critically damped command-tracking response.
pub const TRACK_OMEGA: f64 = 20.0;

/// Default measurement noise half-range, radians.
pub const MEAS_NOISE: f64 = 0.05;

pub const NUM_FINGERS: usize = 4;
pub const NUM_JOINTS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FingerId {
    T,
    I,
    M,
    R,
}

impl FingerId {
    pub const ALL: [FingerId; 4] = [FingerId::T, FingerId::I, FingerId::M, FingerId::R];

    pub fn index(self) -> usize {
        match self {
            FingerId::T => 0,
            FingerId::I => 1,
            FingerId::M => 2,
            FingerId::R => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FingerId::T => "T",
            FingerId::I => "I",
            FingerId::M => "M",
            FingerId::R => "R",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "T" => Some(FingerId::T),
            "I" => Some(FingerId::I),
            "M" => Some(FingerId::M),
            "R" => Some(FingerId::R),
            _ => None,
        }
    }
}

impl std::fmt::Display for FingerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerModel {
    pub id: FingerId,
    pub base_pos: [f64; 3],
    /// Heading of the zero-abduction finger plane, radians about vertical.
    pub heading: f64,
    pub link_lengths: [f64; 3],
    /// Per-joint `[lo, hi]` limits: abduction, flexion 1, flexion 2.
    pub joint_limits: [[f64; 2]; 3],
}

/// Result of forward kinematics. `clamped` is set when the input joint
/// vector had to be clamped into the limits.
#[derive(Debug, Clone, Copy)]
pub struct FkResult {
    pub tip: Vector3<f64>,
    pub distal_dir: Vector3<f64>,
    pub clamped: bool,
}

impl FingerModel {
    pub fn validate(&self) -> Result<()> {
        for &l in &self.link_lengths {
            if !(l > 0.0) {
                return Err(InhandError::Config(format!(
                    "finger {} link length {l} must be positive",
                    self.id
                )));
            }
        }
        for lim in &self.joint_limits {
            if !(lim[0] < lim[1]) {
                return Err(InhandError::Config(format!(
                    "finger {} joint limits must satisfy lo < hi",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn base(&self) -> Vector3<f64> {
        Vector3::new(self.base_pos[0], self.base_pos[1], self.base_pos[2])
    }

    pub fn total_length(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    fn clamp_joints(&self, q: [f64; 3]) -> ([f64; 3], bool) {
        let mut out = q;
        let mut clamped = false;
        for k in 0..3 {
            let c = q[k].clamp(self.joint_limits[k][0], self.joint_limits[k][1]);
            if c != q[k] {
                clamped = true;
            }
            out[k] = c;
        }
        (out, clamped)
    }

    /// Direction of a link at azimuth `az` pitched down by `phi`.
    fn link_dir(az: f64, phi: f64) -> Vector3<f64> {
        Vector3::new(phi.cos() * az.cos(), phi.cos() * az.sin(), -phi.sin())
    }

    /// Fingertip position and distal link direction for joint angles
    /// `[abduction, flexion1, flexion2]`. Out-of-limit inputs are clamped
    /// and flagged.
    pub fn forward_kinematics(&self, q: [f64; 3]) -> FkResult {
        let (q, clamped) = self.clamp_joints(q);
        let az = self.heading + q[0];
        let [l1, l2, l3] = self.link_lengths;
        let p1 = self.base() + l1 * Self::link_dir(az, 0.0);
        let d2 = Self::link_dir(az, q[1]);
        let p2 = p1 + l2 * d2;
        let d3 = Self::link_dir(az, q[1] + q[2]);
        FkResult {
            tip: p2 + l3 * d3,
            distal_dir: d3,
            clamped,
        }
    }

    /// Analytic inverse kinematics for a fingertip target. Picks the elbow
    /// branch whose distal link points the more downward, then clamps into
    /// the joint limits. Returns the (possibly clamped) joint vector and
    /// whether the target was reachable without clamping.
    pub fn inverse_kinematics(&self, target: &Vector3<f64>) -> ([f64; 3], bool) {
        let b = self.base();
        let d = target - b;
        let az = d.y.atan2(d.x);
        let mut q1 = az - self.heading;
        // wrap into (-pi, pi]
        while q1 > std::f64::consts::PI {
            q1 -= std::f64::consts::TAU;
        }
        while q1 <= -std::f64::consts::PI {
            q1 += std::f64::consts::TAU;
        }
        let [l1, l2, l3] = self.link_lengths;
        let r_h = (d.x * d.x + d.y * d.y).sqrt();
        // planar problem in the finger plane: x outward, y downward
        let px = r_h - l1;
        let py = -d.z;
        let rr = px * px + py * py;
        let cos_q3 = (rr - l2 * l2 - l3 * l3) / (2.0 * l2 * l3);
        let reachable_planar = (-1.0..=1.0).contains(&cos_q3);
        let cos_q3 = cos_q3.clamp(-1.0, 1.0);
        let q3_mag = cos_q3.acos();
        // prefer the elbow branch that respects the joint limits; among
        // feasible branches take the one whose distal link points the more
        // downward
        let mut best: Option<([f64; 3], (bool, f64))> = None;
        for q3 in [q3_mag, -q3_mag] {
            let q2 = py.atan2(px) - (l3 * q3.sin()).atan2(l2 + l3 * q3.cos());
            let cand = [q1, q2, q3];
            let in_limits = cand
                .iter()
                .zip(&self.joint_limits)
                .all(|(&q, lim)| (lim[0]..=lim[1]).contains(&q));
            let down = (q2 + q3).sin(); // distal downward component
            let key = (in_limits, down);
            match best {
                Some((_, bk)) if bk >= key => {}
                _ => best = Some((cand, key)),
            }
        }
        let (q, _) = best.unwrap();
        let (qc, clamped) = self.clamp_joints(q);
        (qc, reachable_planar && !clamped)
    }
}

/// Hand layout: four fingers with fixed bases around the grasped-object
/// envelope. Thumb on the -y side, index/middle/ring on the +y side spaced
/// along x in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandModel {
    pub fingers: [FingerModel; 4],
}

/// Object envelope used for the construction-time workspace check:
/// half extents of the largest default object, centered at the origin.
pub const DEFAULT_ENVELOPE: [f64; 3] = [0.0175, 0.055, 0.05];

/// Clearance above the object top that crossover trajectories must reach.
pub const CROSSOVER_CLEARANCE: f64 = 0.03;

impl Default for HandModel {
    fn default() -> Self {
        let links = [0.10, 0.10, 0.08];
        let limits = [[-0.9, 0.9], [-1.2, 1.7], [-2.2, 2.2]];
        let half_pi = std::f64::consts::FRAC_PI_2;
        let finger = |id, x: f64, y: f64, heading: f64| FingerModel {
            id,
            base_pos: [x, y, 0.16],
            heading,
            link_lengths: links,
            joint_limits: limits,
        };
        Self {
            fingers: [
                finger(FingerId::T, 0.0, -0.15, half_pi),
                finger(FingerId::I, -0.06, 0.15, -half_pi),
                finger(FingerId::M, 0.0, 0.15, -half_pi),
                finger(FingerId::R, 0.06, 0.15, -half_pi),
            ],
        }
    }
}

impl HandModel {
    /// Validate link/limit invariants and the workspace against the default
    /// object envelope: every finger must reach both side faces and clear
    /// the top by [`CROSSOVER_CLEARANCE`].
    pub fn validate(&self) -> Result<()> {
        let [ex, ey, ez] = DEFAULT_ENVELOPE;
        for f in &self.fingers {
            f.validate()?;
            let reach = f.total_length();
            let targets = [
                Vector3::new(0.0, ey + 0.01, 0.0),
                Vector3::new(0.0, -(ey + 0.01), 0.0),
                Vector3::new(ex, 0.0, ez + CROSSOVER_CLEARANCE),
                Vector3::new(-ex, 0.0, ez + CROSSOVER_CLEARANCE),
            ];
            for t in targets {
                let dist = (t - f.base()).norm();
                if dist > reach {
                    return Err(InhandError::Config(format!(
                        "finger {} cannot reach workspace point {t:?} (distance {dist:.3} > reach {reach:.3})",
                        f.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn finger(&self, id: FingerId) -> &FingerModel {
        &self.fingers[id.index()]
    }

    /// Joint slice indices for one finger in the 12-vector.
    pub fn joint_range(id: FingerId) -> std::ops::Range<usize> {
        let i = id.index() * 3;
        i..i + 3
    }

    pub fn finger_joints(q: &[f64; NUM_JOINTS], id: FingerId) -> [f64; 3] {
        let i = id.index() * 3;
        [q[i], q[i + 1], q[i + 2]]
    }

    pub fn clamp_to_limits(&self, q: &mut [f64; NUM_JOINTS]) {
        for f in &self.fingers {
            let i = f.id.index() * 3;
            for k in 0..3 {
                q[i + k] = q[i + k].clamp(f.joint_limits[k][0], f.joint_limits[k][1]);
            }
        }
    }

    pub fn fk_all(&self, q: &[f64; NUM_JOINTS]) -> [FkResult; 4] {
        FingerId::ALL.map(|id| self.finger(id).forward_kinematics(Self::finger_joints(q, id)))
    }
}

/// Joint state: commanded, actual (simulated plant), and measured angles,
/// plus the tracked joint velocity of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q_cmd: [f64; NUM_JOINTS],
    pub q_act: [f64; NUM_JOINTS],
    pub qd_act: [f64; NUM_JOINTS],
    pub q_meas: [f64; NUM_JOINTS],
}

impl JointState {
    pub fn at(q: [f64; NUM_JOINTS]) -> Self {
        Self {
            q_cmd: q,
            q_act: q,
            qd_act: [0.0; NUM_JOINTS],
            q_meas: q,
        }
    }
}

/// Advance the commanded angles by a rate- and limit-clamped action.
pub fn apply_action(state: &JointState, dq: &[f64; NUM_JOINTS], hand: &HandModel) -> JointState {
    let mut out = *state;
    for j in 0..NUM_JOINTS {
        out.q_cmd[j] += dq[j].clamp(-DQ_MAX, DQ_MAX);
    }
    hand.clamp_to_limits(&mut out.q_cmd);
    out
}

/// One physics substep of the position-tracking plant: exact propagation of
/// the critically damped second-order response toward `q_cmd`, followed by a
/// re-clamp into the joint limits.
pub fn track_command(state: &JointState, dt: f64, hand: &HandModel) -> JointState {
    debug_assert!(dt > 0.0);
    let w = TRACK_OMEGA;
    let decay = (-w * dt).exp();
    let mut out = *state;
    for j in 0..NUM_JOINTS {
        let e0 = state.q_act[j] - state.q_cmd[j];
        let v0 = state.qd_act[j];
        // closed-form solution of e'' + 2w e' + w^2 e = 0
        let e = decay * (e0 * (1.0 + w * dt) + v0 * dt);
        let v = decay * (v0 * (1.0 - w * dt) - e0 * w * w * dt);
        out.q_act[j] = state.q_cmd[j] + e;
        out.qd_act[j] = v;
    }
    let before = out.q_act;
    hand.clamp_to_limits(&mut out.q_act);
    for j in 0..NUM_JOINTS {
        if out.q_act[j] != before[j] {
            out.qd_act[j] = 0.0;
        }
    }
    out
}

/// Fresh measurement: actual angles plus iid uniform noise per joint.
pub fn measure<R: Rng>(state: &JointState, rng: &mut R, noise_range: f64) -> [f64; NUM_JOINTS] {
    let mut m = state.q_act;
    if noise_range > 0.0 {
        for v in m.iter_mut() {
            *v += rng.gen_range(-noise_range..=noise_range);
        }
    }
    m
}
