//! Step-wise reward engine, phase latching, termination tests, and the
//! episode/chain success predicates.
//!
//! The per-step reward splits into a transition part (detach guidance,
//! staircase crossover bonus, attach guidance) and an object part (finger
//! direction, spurious rotation, position drift, survival bonus).

use serde::{Deserialize, Serialize};

use crate::contactstate::{self, ContactStateDescriptor, SideLabel};
use crate::hand::FingerId;
use crate::simcore::WorldState;

/// Reward constants and weights bound to one primitive policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub c_x1: f64,
    pub c_x2: f64,
    pub c_att: f64,
    pub c_term: f64,
    pub w_det: f64,
    pub w_att: f64,
    pub w_dir: f64,
    pub w_rot: f64,
    pub w_pos: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl RewardConfig {
    /// Constants shared by the first three primitives.
    pub fn standard() -> Self {
        Self {
            c_x1: 0.1,
            c_x2: 0.2,
            c_att: 1.0,
            c_term: 0.1,
            w_det: 0.1,
            w_att: 0.1,
            w_dir: 0.1,
            w_rot: 0.1,
            w_pos: 0.01,
        }
    }

    /// Constants for the final (index-finger) primitive, which must also
    /// recover the precision grasp.
    pub fn final_primitive() -> Self {
        Self {
            c_x1: 0.2,
            c_x2: 0.5,
            c_att: 0.5,
            c_term: 0.1,
            w_det: 2.0,
            w_att: 1.0,
            w_dir: 0.1,
            w_rot: 0.1,
            w_pos: 0.01,
        }
    }
}

/// Early-termination thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    /// Limit on the summed finger-direction angles, rad.
    pub theta1: f64,
    /// Limit on roll deviation, rad.
    pub theta2: f64,
    /// Drop below the initial height that counts as a fall, m.
    pub fall_drop: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            theta1: 120.0f64.to_radians(),
            theta2: 15.0f64.to_radians(),
            fall_drop: 0.1,
        }
    }
}

/// Phase latches of one primitive episode. `above_top` tracks the current
/// step; `crossed_below` and `attached` latch once achieved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseFlags {
    pub above_top: bool,
    pub crossed_below: bool,
    pub attached: bool,
}

/// Why an episode ended early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationVerdict {
    Fall,
    SurfaceContactLost,
    RollDeviation,
    None,
}

impl TerminationVerdict {
    pub fn terminated(self) -> bool {
        self != TerminationVerdict::None
    }

    pub fn label(self) -> &'static str {
        match self {
            TerminationVerdict::Fall => "FALL",
            TerminationVerdict::SurfaceContactLost => "SURFACE_CONTACT_LOST",
            TerminationVerdict::RollDeviation => "ROLL_DEVIATION",
            TerminationVerdict::None => "NONE",
        }
    }
}

/// Per-step reward breakdown; the raw terms, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_det: f64,
    pub r_x: f64,
    pub r_att: f64,
    pub r_dir: f64,
    pub r_rot: f64,
    pub r_pos: f64,
    pub r_term: f64,
    pub total: f64,
}

fn tip_of(world: &WorldState, f: FingerId) -> nalgebra::Vector3<f64> {
    world.fingertips()[f.index()].tip
}

/// Signed side of the object's depth mid-plane in the object frame:
/// negative local x is the `Near` half-space.
fn on_goal_side(world: &WorldState, tip: &nalgebra::Vector3<f64>, goal: SideLabel) -> bool {
    let local = world.to_local(tip);
    match goal {
        SideLabel::Near => local.x < 0.0,
        SideLabel::Far => local.x > 0.0,
        _ => false,
    }
}

/// Update the phase latches for moving finger `f` heading to `goal_side`,
/// with `goal` the target contact-state of the primitive.
pub fn phase_update(
    world: &WorldState,
    f: FingerId,
    goal_side: SideLabel,
    goal: &ContactStateDescriptor,
    prev: PhaseFlags,
) -> PhaseFlags {
    let tip = tip_of(world, f);
    let local = world.to_local(&tip);
    let xy = nalgebra::Vector2::new(local.x, local.y);
    let above_top = world.shape.footprint_contains(&xy) && tip.z > world.top_z();

    let outside = world
        .shape
        .face_distance(&local)
        .map(|d| d > 0.0)
        .unwrap_or(false);
    let crossed_now =
        on_goal_side(world, &tip, goal_side) && outside && tip.z < world.top_z();
    let crossed_below = prev.crossed_below || crossed_now;

    let descriptor = contactstate::classify(world);
    let attached_now = crossed_below && descriptor.side(f) == goal.side(f);
    let attached = prev.attached || attached_now;

    PhaseFlags {
        above_top,
        crossed_below,
        attached,
    }
}

/// Vertical gap from the top-surface plane down to the fingertip, >= 0.
fn d_z(world: &WorldState, f: FingerId) -> f64 {
    (world.top_z() - tip_of(world, f).z).max(0.0)
}

/// Distance from the fingertip to the object surface, >= 0.
fn d_x(world: &WorldState, f: FingerId) -> f64 {
    let local = world.to_local(&tip_of(world, f));
    world
        .shape
        .face_distance(&local)
        .map(|d| d.max(0.0))
        .unwrap_or(0.0)
}

/// Transition reward: weighted detach guidance, crossover staircase, and
/// attach guidance. Returns (weighted total, r_det, r_x, r_att).
pub fn r_transition(
    world: &WorldState,
    f: FingerId,
    flags: PhaseFlags,
    cfg: &RewardConfig,
) -> (f64, f64, f64, f64) {
    let r_det = if flags.crossed_below { 0.0 } else { -d_z(world, f) };
    let r_x = if flags.crossed_below {
        cfg.c_x1 + cfg.c_x2
    } else if flags.above_top {
        cfg.c_x1
    } else {
        0.0
    };
    let r_att = if !flags.crossed_below {
        0.0
    } else if flags.attached {
        -d_x(world, f) + cfg.c_att
    } else {
        -d_x(world, f)
    };
    (cfg.w_det * r_det + r_x + cfg.w_att * r_att, r_det, r_x, r_att)
}

/// Angle between finger `f`'s distal direction and the inward top-surface
/// normal of the object.
pub fn theta_f(world: &WorldState, f: FingerId) -> f64 {
    let distal = world.fingertips()[f.index()].distal_dir;
    let inward = -world.object.rot.transform_vector(&nalgebra::Vector3::z());
    distal.dot(&inward).clamp(-1.0, 1.0).acos()
}

/// Sum of finger-direction angles over all four fingers.
pub fn theta_sum(world: &WorldState) -> f64 {
    FingerId::ALL.iter().map(|&f| theta_f(world, f)).sum()
}

/// Object reward: finger direction, spurious rotation, position drift, and
/// survival. Returns (weighted total, r_dir, r_rot, r_pos, r_term).
pub fn r_obj(
    world: &WorldState,
    f: FingerId,
    flags: PhaseFlags,
    cfg: &RewardConfig,
    terminated: bool,
) -> (f64, f64, f64, f64, f64) {
    let r_dir = -FingerId::ALL
        .iter()
        .filter(|&&g| flags.crossed_below || g != f)
        .map(|&g| theta_f(world, g))
        .sum::<f64>();
    let r_rot = -(world.theta_roll() + world.theta_pitch());
    let r_pos = -(world.object.pos - world.init_pos).norm();
    let r_term = if terminated { -cfg.c_term } else { cfg.c_term };
    (
        cfg.w_dir * r_dir + cfg.w_rot * r_rot + cfg.w_pos * r_pos + r_term,
        r_dir,
        r_rot,
        r_pos,
        r_term,
    )
}

/// Full per-step reward with its breakdown.
pub fn total_reward(
    world: &WorldState,
    f: FingerId,
    flags: PhaseFlags,
    cfg: &RewardConfig,
    terminated: bool,
) -> RewardBreakdown {
    let (rt, r_det, r_x, r_att) = r_transition(world, f, flags, cfg);
    let (ro, r_dir, r_rot, r_pos, r_term) = r_obj(world, f, flags, cfg, terminated);
    RewardBreakdown {
        r_det,
        r_x,
        r_att,
        r_dir,
        r_rot,
        r_pos,
        r_term,
        total: rt + ro,
    }
}

/// Early-termination test: fall, summed finger misalignment, roll.
pub fn check_termination(world: &WorldState, cfg: &TerminationConfig) -> TerminationVerdict {
    if world.object.pos.z < world.init_pos.z - cfg.fall_drop {
        TerminationVerdict::Fall
    } else if theta_sum(world) > cfg.theta1 {
        TerminationVerdict::SurfaceContactLost
    } else if world.theta_roll() > cfg.theta2 {
        TerminationVerdict::RollDeviation
    } else {
        TerminationVerdict::None
    }
}

/// End-of-primitive success: the contact state matches the goal anchor and
/// the grasp is most-stable.
pub fn primitive_success(world: &WorldState, goal: &ContactStateDescriptor) -> bool {
    contactstate::classify(world) == *goal && contactstate::is_most_stable(world)
}

/// Yaw tolerance of the full chain, rad.
pub const CHAIN_YAW_TOL: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// End-of-chain success: final primitive succeeded, the object has turned
/// half a turn about the vertical, and no step terminated early.
pub fn chain_success(world: &WorldState, final_goal: &ContactStateDescriptor, ever_terminated: bool) -> bool {
    if ever_terminated || !primitive_success(world, final_goal) {
        return false;
    }
    let yaw = world.yaw();
    // yaw is extracted in (-pi, pi]; both pi and -pi mean half a turn
    (yaw.abs() - std::f64::consts::PI).abs() <= CHAIN_YAW_TOL
}
