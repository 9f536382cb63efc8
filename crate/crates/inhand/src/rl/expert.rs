//! Scripted expert controller for regrasp primitives.
//!
//! The expert has ground-truth access to the world state and drives each
//! primitive with a fixed choreography:
//!
//! 1. support fingers that need a fresh grip slide along their faces to the
//!    slots of the end-of-primitive pose, one finger at a time with reduced
//!    squeeze so the skidding contact cannot drag the object along;
//! 2. the moving finger retracts off its face, lifts over the object top,
//!    crosses above the center, and descends just outside the goal face;
//! 3. the support fingers meanwhile twist the object an eighth turn about
//!    the vertical by leading their grip targets tangentially;
//! 4. the moving finger presses onto its goal slot and the grasp settles.
//!
//! Slot positions are chosen per face to minimize sliding, keep fingers
//! close enough to their bases, keep slots separated along the width axis,
//! and preserve the clockwise T, I, M, R fingertip ordering of a
//! most-stable grasp.

use nalgebra::{UnitQuaternion, Vector2, Vector3};

use crate::contactstate::{
    force_closure_margin, ContactStateDescriptor, SideLabel, DEFAULT_M_EDGES,
};
use crate::simcore::ContactRecord;
use crate::graph::Primitive;
use crate::hand::{FingerId, HandModel, NUM_JOINTS};
use crate::simcore::WorldState;

/// Tuning constants of the scripted expert.
#[derive(Debug, Clone, Copy)]
pub struct ExpertConfig {
    /// Base commanded fingertip penetration, m.
    pub squeeze: f64,
    /// Keep slots this far from the width-axis edge of a face, m.
    pub slot_margin: f64,
    /// Minimum spacing between slots that share a face, m.
    pub slot_separation: f64,
    /// Grid pitch of the slot search along the width axis, m.
    pub slot_grid: f64,
    /// Horizontal base-to-slot distance beyond which a slot is penalized, m.
    pub reach_max: f64,
    /// Tangential speed of a sliding support finger, m per control step.
    pub slide_rate: f64,
    /// Latest step by which the pre-rotation slides must be finished.
    pub slide_budget: usize,
    /// First step of the yaw ramp within the primitive.
    pub rot_start: usize,
    /// Last step of the yaw ramp within the primitive.
    pub rot_end: usize,
    /// Yaw advance per primitive, rad (counterclockwise positive).
    pub yaw_step: f64,
    /// Maximum lead of the commanded grip-frame yaw over the actual object
    /// yaw, rad. Beyond it the frame slows to the crawl rate.
    pub yaw_lead_max: f64,
    /// Yaw advance per step kept while the object lags the frame, rad. The
    /// object follows the frame at roughly this rate with a steady lag, so
    /// this is the effective rotation speed.
    pub yaw_crawl: f64,
    /// Extra yaw commanded past the per-primitive step, rad, compensating
    /// the steady lag the object keeps behind the traveling frame.
    pub yaw_overdrive: f64,
    /// Horizontal travel per control step of the moving finger while it
    /// crosses over the object, m.
    pub hop_step: f64,
    /// Outward clearance when retracting off a face, m.
    pub retract_dist: f64,
    /// Height of the crossing path above the object top, m.
    pub cross_height: f64,
    /// Gap outside the goal face held before the final press, m.
    pub approach_gap: f64,
    /// Gap outside the face kept by a repositioning support finger, m.
    pub hover_gap: f64,
    /// Per-step gain of the corrective frame tilt against measured roll and
    /// pitch, dimensionless.
    pub tilt_gain: f64,
    /// Cap on the corrective frame-tilt rate, rad per control step.
    pub tilt_rate: f64,
    /// Cap on the corrective frame-center rate, m per control step.
    pub center_rate: f64,
    /// Minimum planned force-closure margin of an end-of-primitive layout.
    pub min_margin: f64,
    /// Fingertip radius mirrored from the simulator configuration, m.
    pub fingertip_radius: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            squeeze: 0.004,
            slot_margin: 0.01,
            slot_separation: 0.03,
            slot_grid: 0.015,
            reach_max: 0.125,
            slide_rate: 0.006,
            slide_budget: 42,
            rot_start: 2,
            rot_end: 92,
            yaw_step: std::f64::consts::FRAC_PI_4,
            yaw_lead_max: 0.06,
            yaw_crawl: 0.012,
            yaw_overdrive: 0.045,
            hop_step: 0.013,
            retract_dist: 0.02,
            cross_height: 0.015,
            approach_gap: 0.006,
            hover_gap: 0.002,
            tilt_gain: 0.6,
            tilt_rate: 0.015,
            center_rate: 0.002,
            min_margin: 0.02,
            fingertip_radius: 0.008,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MoverPhase {
    Grip,
    Retract,
    Shift,
    Lift,
    CrossMid,
    CrossOut,
    Descend,
    Press,
}

/// One staggered support-finger slide window.
#[derive(Debug, Clone, Copy)]
struct Slide {
    finger: usize,
    start: usize,
    end: usize,
}

/// Deterministic ground-truth controller executing one primitive at a time.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    pub cfg: ExpertConfig,
    mover: FingerId,
    /// Object-frame face sign of each finger's grip slot (+1 far, -1 near).
    sign: [f64; 4],
    /// Width-axis slot parameter at the end of the primitive.
    end_t: [f64; 4],
    /// Width-axis slot parameter at the start of the primitive.
    start_t: [f64; 4],
    slides: Vec<Slide>,
    /// Start-face sign of the moving finger (its pre-detach grip).
    mover_start_sign: f64,
    mover_start_t: f64,
    /// Step at which the moving finger starts its transfer and the yaw ramp
    /// begins (after the slides).
    mover_start: usize,
    yaw0: f64,
    /// Open-loop yaw of the commanded grip frame. The viscous contact model
    /// transmits tip velocity, not positional offset, so the grip targets
    /// must themselves travel along the rotation schedule; this integrator
    /// never retreats, and pauses when it leads the object too far.
    yaw_cmd: f64,
    /// Corrective roll/pitch of the commanded grip frame. Mid-height
    /// contacts give no restoring signal for tilt, so the frame tilts at a
    /// rate opposing the object's measured roll/pitch; the contacts turn
    /// that frame velocity into a righting drag.
    tilt_cmd: Vector2<f64>,
    /// Corrective offset of the commanded grip-frame center. Gravity makes
    /// the object sink steadily under the velocity-transmitting contacts,
    /// so the frame center climbs against the measured position error.
    center_cmd: Vector3<f64>,
    #[cfg(test)]
    pub(crate) dbg_targets: [Vector3<f64>; 4],
    step: usize,
    phase: MoverPhase,
}

fn side_sign(s: SideLabel) -> f64 {
    match s {
        SideLabel::Near => -1.0,
        _ => 1.0,
    }
}

fn wrap_pos(mut a: f64) -> f64 {
    while a <= 0.0 {
        a += std::f64::consts::TAU;
    }
    while a > std::f64::consts::TAU {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Do the four points wind clockwise (seen from above) in T, I, M, R order?
fn clockwise_ok(pts: &[Vector2<f64>; 4], center: &Vector2<f64>) -> bool {
    let ang: Vec<f64> = pts.iter().map(|p| (p.y - center.y).atan2(p.x - center.x)).collect();
    let mut total = 0.0;
    for i in 0..4 {
        total += wrap_pos(ang[i] - ang[(i + 1) % 4]);
    }
    (total - std::f64::consts::TAU).abs() < 1e-6
}

/// Smooth 0->1 ramp.
fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl ScriptedExpert {
    pub fn new(cfg: ExpertConfig) -> Self {
        Self {
            cfg,
            mover: FingerId::R,
            sign: [0.0; 4],
            end_t: [0.0; 4],
            start_t: [0.0; 4],
            slides: Vec::new(),
            mover_start_sign: 1.0,
            mover_start_t: 0.0,
            mover_start: 6,
            yaw0: 0.0,
            yaw_cmd: 0.0,
            tilt_cmd: Vector2::zeros(),
            center_cmd: Vector3::zeros(),
            #[cfg(test)]
            dbg_targets: [Vector3::zeros(); 4],
            step: 0,
            phase: MoverPhase::Grip,
        }
    }

    /// Width-axis clamp window of the slots.
    fn t_max(&self, world: &WorldState) -> f64 {
        world.shape.width / 2.0 - self.cfg.slot_margin
    }

    /// World point of the slot `(sign, t)` at origin `c` and rotation `rot`.
    fn slot_world(
        world: &WorldState,
        c: &Vector3<f64>,
        rot: &UnitQuaternion<f64>,
        sign: f64,
        t: f64,
    ) -> Vector3<f64> {
        let local = world
            .shape
            .radial_surface_point(&Vector3::new(sign * world.shape.depth / 2.0, t, 0.0))
            .expect("slot ray is never degenerate");
        c + rot.transform_vector(&local)
    }

    /// Can this support finger be repositioned during the primitive? Only
    /// when at least one other support holds the same face, so the grasp
    /// never loses a whole face while the finger hovers.
    fn slidable(sign: &[f64; 4], mover: FingerId, id: FingerId) -> bool {
        if id == mover {
            return false;
        }
        FingerId::ALL
            .iter()
            .any(|&g| g != id && g != mover && sign[g.index()] == sign[id.index()])
    }

    /// Pick end-of-primitive slot parameters for all four fingers given the
    /// goal contact state. Grid search per face over separated slot tuples,
    /// keeping only layouts that wind clockwise, minimizing support sliding
    /// plus an out-of-reach penalty. Supports that are the sole holder of
    /// their face cannot be repositioned and are pinned where they are.
    fn assign_slots(
        &self,
        world: &WorldState,
        goal: &ContactStateDescriptor,
        start_t: &[f64; 4],
        mover: FingerId,
        c: &Vector3<f64>,
        rot_end: &UnitQuaternion<f64>,
    ) -> ([f64; 4], [f64; 4]) {
        let t_max = self.t_max(world);
        let mut sign = [0.0; 4];
        for id in FingerId::ALL {
            sign[id.index()] = side_sign(goal.side(id));
        }

        let mut grid = Vec::new();
        let mut t = -t_max;
        while t <= t_max + 1e-9 {
            grid.push(t);
            t += self.cfg.slot_grid;
        }

        let faces: [Vec<FingerId>; 2] = [-1.0, 1.0].map(|f| {
            FingerId::ALL
                .into_iter()
                .filter(|id| sign[id.index()] == f)
                .collect()
        });

        // per-finger candidate slot parameters
        let candidates_of = |id: FingerId| -> Vec<f64> {
            if id != mover && !Self::slidable(&sign, mover, id) {
                vec![start_t[id.index()]]
            } else {
                grid.clone()
            }
        };

        // per-finger cost of parking at parameter t on its goal face
        let cost_of = |id: FingerId, t: f64| -> f64 {
            let p = Self::slot_world(world, c, rot_end, sign[id.index()], t);
            let b = world.hand.finger(id).base();
            let reach = (Vector2::new(p.x, p.y) - Vector2::new(b.x, b.y)).norm();
            let reach_pen = (reach - self.cfg.reach_max).max(0.0);
            let move_cost = if id == mover {
                // a mover parked at the width extreme becomes an
                // unbalanceable lone support in the next primitive
                0.3 * t * t
            } else {
                (t - start_t[id.index()]).powi(2)
            };
            move_cost + 2000.0 * reach_pen * reach_pen
        };

        // enumerate separated tuples per face
        let tuples_for = |members: &[FingerId]| -> Vec<Vec<f64>> {
            let mut out = Vec::new();
            let n = members.len();
            if n == 0 {
                out.push(Vec::new());
                return out;
            }
            let cands: Vec<Vec<f64>> = members.iter().map(|&id| candidates_of(id)).collect();
            let mut pick = vec![0.0; n];
            fn rec(
                cands: &[Vec<f64>],
                sep: f64,
                depth: usize,
                pick: &mut Vec<f64>,
                out: &mut Vec<Vec<f64>>,
            ) {
                if depth == cands.len() {
                    out.push(pick.clone());
                    return;
                }
                'next: for &v in &cands[depth] {
                    for &u in pick[..depth].iter() {
                        if (v - u).abs() < sep - 1e-9 {
                            continue 'next;
                        }
                    }
                    pick[depth] = v;
                    rec(cands, sep, depth + 1, pick, out);
                }
            }
            rec(&cands, self.cfg.slot_separation, 0, &mut pick, &mut out);
            out
        };

        let near_tuples = tuples_for(&faces[0]);
        let far_tuples = tuples_for(&faces[1]);
        let cxy = Vector2::new(c.x, c.y);

        // planned closure margin of a full layout: synthetic contacts at
        // the slots with the faces' outward normals
        let layout_margin = |cand: &[f64; 4]| -> f64 {
            let contacts: Vec<ContactRecord> = FingerId::ALL
                .into_iter()
                .map(|id| {
                    let s = sign[id.index()];
                    let t = cand[id.index()];
                    let local = world
                        .shape
                        .radial_surface_point(&Vector3::new(s * world.shape.depth / 2.0, t, 0.0))
                        .expect("slot ray is never degenerate");
                    let normal = rot_end.transform_vector(&world.shape.surface_normal(&local));
                    ContactRecord {
                        finger: id,
                        point: c + rot_end.transform_vector(&local),
                        normal,
                        force: -normal,
                        penetration: 0.001,
                        side: SideLabel::None,
                    }
                })
                .collect();
            force_closure_margin(
                &contacts,
                world.mu,
                DEFAULT_M_EDGES,
                c,
                world.shape.max_half_extent(),
            )
        };

        let mut best: Option<([f64; 4], f64)> = None;
        for nt in &near_tuples {
            for ft in &far_tuples {
                let mut cand = [0.0; 4];
                let mut score = 0.0;
                for (k, &id) in faces[0].iter().enumerate() {
                    cand[id.index()] = nt[k];
                    score += cost_of(id, nt[k]);
                }
                for (k, &id) in faces[1].iter().enumerate() {
                    cand[id.index()] = ft[k];
                    score += cost_of(id, ft[k]);
                }
                if let Some((_, s)) = best {
                    if score >= s {
                        continue;
                    }
                }
                let tips: [Vector2<f64>; 4] = std::array::from_fn(|j| {
                    let id = FingerId::ALL[j];
                    let p =
                        Self::slot_world(world, c, rot_end, sign[id.index()], cand[id.index()]);
                    Vector2::new(p.x, p.y)
                });
                // while the mover is in transit the three supports alone
                // hold the object; if their slots all sit on one side of
                // the width axis the far half hangs cantilevered and pitch
                // drifts away, so they must bracket the center
                let sup: Vec<(f64, f64)> = FingerId::ALL
                    .into_iter()
                    .filter(|&id| id != mover)
                    .map(|id| (sign[id.index()], cand[id.index()]))
                    .collect();
                let straddle = {
                    let lo = sup.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
                    let hi = sup.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
                    let b = 0.5 * self.cfg.slot_separation;
                    lo <= -b && hi >= b
                };
                let bal = self.transfer_balanced(&sup);
                let cw = clockwise_ok(&tips, &cxy);
                let lm = layout_margin(&cand);
                if std::env::var("EXPERT_DEBUG_ASSIGN").is_ok() {
                    eprintln!(
                        "cand {:?} score {:.5} straddle={} bal={} cw={} margin={:.4}",
                        cand, score, straddle, bal, cw, lm
                    );
                }
                if straddle && bal && cw && lm > self.cfg.min_margin {
                    best = Some((cand, score));
                }
            }
        }
        // fallback when pinned fingers block every clockwise layout: take
        // the cheapest separated tuple and let the servo make the best of it
        let (end_t, _) = best.unwrap_or_else(|| {
            let mut any: Option<([f64; 4], f64)> = None;
            for nt in &near_tuples {
                for ft in &far_tuples {
                    let mut cand = [0.0; 4];
                    let mut score = 0.0;
                    for (k, &id) in faces[0].iter().enumerate() {
                        cand[id.index()] = nt[k];
                        score += cost_of(id, nt[k]);
                    }
                    for (k, &id) in faces[1].iter().enumerate() {
                        cand[id.index()] = ft[k];
                        score += cost_of(id, ft[k]);
                    }
                    match any {
                        Some((_, s)) if s <= score => {}
                        _ => any = Some((cand, score)),
                    }
                }
            }
            any.expect("slot grid always admits a separated layout")
        });
        (sign, end_t)
    }

    /// Arm the expert for one primitive starting from the given state.
    pub fn begin_primitive(&mut self, world: &WorldState, primitive: &Primitive) {
        self.mover = primitive.moving_finger;
        self.yaw0 = world.yaw();
        self.yaw_cmd = self.yaw0;
        self.step = 0;
        self.phase = MoverPhase::Grip;

        // supports start from wherever their tips currently sit
        let t_max = self.t_max(world);
        let tips = world.fingertips();
        for id in FingerId::ALL {
            let local = world.to_local(&tips[id.index()].tip);
            self.start_t[id.index()] = local.y.clamp(-t_max, t_max);
        }
        self.mover_start_sign = side_sign(primitive.start.descriptor.side(self.mover));
        self.mover_start_t = self.start_t[self.mover.index()];

        let rot_end = UnitQuaternion::from_axis_angle(
            &Vector3::z_axis(),
            self.yaw0 + self.cfg.yaw_step,
        ) * world.init_rot;
        let (sign, end_t) = self.assign_slots(
            world,
            &primitive.goal.descriptor,
            &self.start_t,
            self.mover,
            &world.init_pos,
            &rot_end,
        );
        self.sign = sign;
        self.end_t = end_t;

        // staggered slide schedule for supports that change slots; if it
        // overruns the budget, speed the slides up to fit
        self.slides.clear();
        let mut at = 2usize;
        let mut spans = Vec::new();
        for id in FingerId::ALL {
            if id == self.mover {
                continue;
            }
            let dist = (self.end_t[id.index()] - self.start_t[id.index()]).abs();
            if dist < 0.01 {
                continue;
            }
            spans.push((id.index(), (dist / self.cfg.slide_rate).ceil() as usize + 2));
        }
        let total: usize = spans.iter().map(|s| s.1).sum();
        let scale = if at + total > self.cfg.slide_budget {
            (self.cfg.slide_budget - at) as f64 / total as f64
        } else {
            1.0
        };
        for (finger, len) in spans {
            let len = ((len as f64 * scale).ceil() as usize).max(4);
            self.slides.push(Slide {
                finger,
                start: at,
                end: at + len,
            });
            at += len;
        }
        // a settle gap after the last slide: the landing finger needs a few
        // steps to press back in before the mover lets go
        self.mover_start = if self.slides.is_empty() { at.max(4) } else { at + 3 };
    }

    /// Scheduled yaw at primitive step `k`: a constant-rate ramp over the
    /// whole primitive (the gripping fingers drive the rotation throughout,
    /// hovering or transferring fingers just follow the frame).
    fn yaw_sched(&self, k: usize) -> f64 {
        let span = (self.cfg.rot_end.saturating_sub(self.cfg.rot_start)).max(1) as f64;
        let x = ((k as f64 - self.cfg.rot_start as f64) / span).clamp(0.0, 1.0);
        self.yaw0 + (self.cfg.yaw_step + self.cfg.yaw_overdrive) * x
    }

    /// Support slot parameter at step `k`.
    fn support_t(&self, i: usize, k: usize) -> f64 {
        for s in &self.slides {
            if s.finger == i {
                if k < s.start {
                    return self.start_t[i];
                }
                let x = (k as f64 - s.start as f64) / (s.end - s.start) as f64;
                return self.start_t[i] + (self.end_t[i] - self.start_t[i]) * smoothstep(x);
            }
        }
        self.end_t[i]
    }

    fn sliding_now(&self, i: usize, k: usize) -> bool {
        self.slides
            .iter()
            .any(|s| s.finger == i && k >= s.start && k < s.end)
    }

    /// Can squeezes on this `(face, t)` support set balance both the net
    /// normal force and its first moment along the width axis? When they
    /// cannot, the residual is a standing yaw torque that spins the object
    /// off the commanded frame.
    fn transfer_balanced(&self, sup: &[(f64, f64)]) -> bool {
        let total = 1.5 * self.cfg.squeeze;
        let floor = 0.15 * total;
        let range = |face: f64| -> Option<(f64, f64)> {
            let ts: Vec<f64> = sup
                .iter()
                .filter(|&&(s, _)| s == face)
                .map(|&(_, t)| t)
                .collect();
            if ts.is_empty() {
                return None;
            }
            let n = ts.len() as f64;
            let sum: f64 = ts.iter().sum();
            let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Some((
                floor * sum + (total - n * floor) * lo,
                floor * sum + (total - n * floor) * hi,
            ))
        };
        match (range(-1.0), range(1.0)) {
            (Some((a0, a1)), Some((b0, b1))) => a0.max(b0) <= a1.min(b1) + 1e-6,
            _ => false,
        }
    }

    /// Per-finger squeeze depths balancing the penalty springs across the
    /// two faces: equal normal-force totals per face AND equal first
    /// moments along the width axis. An unbalanced moment is a standing
    /// yaw torque that spins the object off the commanded frame.
    fn balanced_squeezes(&self, grip: &[Option<(f64, f64)>; 4]) -> [f64; 4] {
        let total = 1.5 * self.cfg.squeeze;
        let floor = 0.15 * total;
        let mut out = [0.0; 4];

        // feasible first-moment range of each face at fixed total squeeze
        let face_members = |face: f64| -> Vec<(usize, f64)> {
            grip.iter()
                .enumerate()
                .filter_map(|(i, g)| match g {
                    Some((s, t)) if *s == face => Some((i, *t)),
                    _ => None,
                })
                .collect()
        };
        let moment_range = |members: &[(usize, f64)]| -> Option<(f64, f64)> {
            if members.is_empty() {
                return None;
            }
            let n = members.len() as f64;
            let lo = members.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = members.iter().map(|m| m.1).sum();
            Some((
                floor * sum + (total - n * floor) * lo,
                floor * sum + (total - n * floor) * hi,
            ))
        };

        let near = face_members(-1.0);
        let far = face_members(1.0);
        let rn = moment_range(&near);
        let rf = moment_range(&far);
        // shared moment target: the midpoint of the ranges' intersection,
        // or the closest achievable pair when they do not overlap
        let (mn, mf) = match (rn, rf) {
            (Some((a0, a1)), Some((b0, b1))) => {
                let lo = a0.max(b0);
                let hi = a1.min(b1);
                if lo <= hi {
                    let m = 0.5 * (lo + hi);
                    (m, m)
                } else if a1 < b0 {
                    (a1, b0)
                } else {
                    (a0, b1)
                }
            }
            (a, b) => (
                a.map(|(x, y)| 0.5 * (x + y)).unwrap_or(0.0),
                b.map(|(x, y)| 0.5 * (x + y)).unwrap_or(0.0),
            ),
        };

        for (members, m_tgt) in [(&near, mn), (&far, mf)] {
            let n = members.len() as f64;
            if members.is_empty() {
                continue;
            }
            let t_bar: f64 = members.iter().map(|m| m.1).sum::<f64>() / n;
            let spread: f64 = members.iter().map(|m| (m.1 - t_bar).powi(2)).sum();
            for &(i, t) in members {
                let p = if spread > 1e-12 {
                    total / n + (m_tgt - total * t_bar) * (t - t_bar) / spread
                } else {
                    total / n
                };
                out[i] = p.clamp(floor, total - (n - 1.0) * floor);
            }
        }
        out
    }

    /// One control action for the current world state.
    pub fn act(&mut self, world: &WorldState) -> [f64; NUM_JOINTS] {
        let cfg = self.cfg;
        let k = self.step;
        let tips = world.fingertips();
        let tip_m = tips[self.mover.index()].tip;
        let top_z = world.top_z();

        // grip-target pose: the commanded frame travels along the yaw
        // schedule (pausing when it leads the object too far, never
        // retreating when the object drifts), centered at the episode
        // origin and upright in roll/pitch
        let yaw_act = world.yaw();
        let want = (self.yaw_sched(k) - self.yaw_cmd).max(0.0);
        // when the object lags the frame too far, keep crawling instead of
        // pausing: contacts transmit velocity, not positional offset, so a
        // frozen frame would never pull the object back on schedule
        let advance = if self.yaw_cmd - yaw_act < cfg.yaw_lead_max {
            want
        } else {
            want.min(cfg.yaw_crawl)
        };
        self.yaw_cmd += advance;
        let (roll_act, pitch_act, _) = world.relative_rotation().euler_angles();
        // leaky integrator: tilt needs no persistent rate at equilibrium, so
        // the accumulated correction bleeds off instead of winding up on a
        // small steady error
        self.tilt_cmd *= 0.9;
        self.tilt_cmd.x += (-cfg.tilt_gain * roll_act).clamp(-cfg.tilt_rate, cfg.tilt_rate);
        self.tilt_cmd.y += (-cfg.tilt_gain * pitch_act).clamp(-cfg.tilt_rate, cfg.tilt_rate);
        self.tilt_cmd = self.tilt_cmd.map(|v| v.clamp(-0.3, 0.3));
        let rot_tgt = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw_cmd)
            * UnitQuaternion::from_euler_angles(self.tilt_cmd.x, self.tilt_cmd.y, 0.0)
            * world.init_rot;
        let pos_err = world.init_pos - world.object.pos;
        self.center_cmd += pos_err
            .map(|e| (cfg.tilt_gain * e).clamp(-cfg.center_rate, cfg.center_rate));
        let c_tgt = world.init_pos + self.center_cmd;

        // mover phase transitions
        let local_m = world.to_local(&tip_m);
        let outside_m = world.shape.face_distance(&local_m).unwrap_or(0.0);
        // a tilted object raises one top corner by up to half the width
        // times the tilt; the crossing path must clear it
        let cross_z = top_z
            + cfg.cross_height
            + 0.5 * world.shape.width * (world.theta_roll() + world.theta_pitch()).min(0.5);
        let mover_i = self.mover.index();
        // attachment targets the face where it actually is: the command
        // frame can lead or lag the object by enough that a frame-relative
        // press misses the face entirely
        let attach_slot = Self::slot_world(
            world,
            &world.object.pos,
            &world.object.rot,
            self.sign[mover_i],
            self.end_t[mover_i],
        );
        let attach_n = {
            let local = world
                .shape
                .radial_surface_point(&Vector3::new(
                    self.sign[mover_i] * world.shape.depth / 2.0,
                    self.end_t[mover_i],
                    0.0,
                ))
                .expect("slot ray is never degenerate");
            world
                .object
                .rot
                .transform_vector(&world.shape.surface_normal(&local))
        };
        let approach = attach_slot + attach_n * (cfg.fingertip_radius + cfg.approach_gap);

        // the climb column: outside the start face at the end farthest from
        // the moving finger's base, where the lifted posture keeps the
        // distal link pointing down and the summed finger-direction angle
        // clear of the termination threshold
        let start_out = world.object.rot.transform_vector(&Vector3::new(
            self.mover_start_sign,
            0.0,
            0.0,
        ));
        let lift_col = {
            let t_lim = self.t_max(world);
            let base_m = world.hand.finger(self.mover).base();
            let cand = [-t_lim, t_lim].map(|t| {
                Self::slot_world(
                    world,
                    &world.object.pos,
                    &world.object.rot,
                    self.mover_start_sign,
                    t,
                )
            });
            let far = if (cand[0].xy() - base_m.xy()).norm() >= (cand[1].xy() - base_m.xy()).norm()
            {
                cand[0]
            } else {
                cand[1]
            };
            far + start_out * (cfg.fingertip_radius + cfg.retract_dist)
        };

        self.phase = match self.phase {
            MoverPhase::Grip if k >= self.mover_start => MoverPhase::Retract,
            MoverPhase::Grip => MoverPhase::Grip,
            MoverPhase::Retract if outside_m > 0.6 * cfg.retract_dist => MoverPhase::Shift,
            MoverPhase::Retract => MoverPhase::Retract,
            MoverPhase::Shift if (tip_m.xy() - lift_col.xy()).norm() < 0.008 => MoverPhase::Lift,
            MoverPhase::Shift => MoverPhase::Shift,
            MoverPhase::Lift if tip_m.z > cross_z - 0.004 => MoverPhase::CrossMid,
            MoverPhase::Lift => MoverPhase::Lift,
            MoverPhase::CrossMid
                if (tip_m.xy() - world.object.pos.xy()).norm() < 0.012 =>
            {
                MoverPhase::CrossOut
            }
            MoverPhase::CrossMid => MoverPhase::CrossMid,
            MoverPhase::CrossOut if (tip_m.xy() - approach.xy()).norm() < 0.010 => {
                MoverPhase::Descend
            }
            MoverPhase::CrossOut => MoverPhase::CrossOut,
            MoverPhase::Descend if (tip_m - approach).norm() < 0.008 => MoverPhase::Press,
            MoverPhase::Descend => MoverPhase::Descend,
            p => p,
        };

        // which fingers grip (and on which face) this step; a hovering
        // slider is out of contact and out of the squeeze balance
        let mut grip_signs: [Option<f64>; 4] = [None; 4];
        for id in FingerId::ALL {
            if id == self.mover {
                match self.phase {
                    MoverPhase::Grip => grip_signs[id.index()] = Some(self.mover_start_sign),
                    MoverPhase::Press => grip_signs[id.index()] = Some(self.sign[id.index()]),
                    _ => {}
                }
            } else if !self.sliding_now(id.index(), k) {
                grip_signs[id.index()] = Some(self.sign[id.index()]);
            }
        }

        // slot (face, width parameter) of each finger this step
        let slots: [(f64, f64); 4] = std::array::from_fn(|i| {
            let id = FingerId::ALL[i];
            let face = if id == self.mover && self.phase == MoverPhase::Grip {
                self.mover_start_sign
            } else {
                self.sign[i]
            };
            let t = if id == self.mover {
                if self.phase == MoverPhase::Grip {
                    self.mover_start_t
                } else {
                    self.end_t[i]
                }
            } else {
                self.support_t(i, k)
            };
            (face, t)
        });
        // the pressing mover is left out of the balance until its contact
        // exists: rebalancing around it early would drop the established
        // grip before the new contact can carry load
        let mover_attached = world
            .contacts
            .iter()
            .any(|ct| ct.finger == self.mover);
        let balance_set: [Option<(f64, f64)>; 4] = std::array::from_fn(|i| {
            let id = FingerId::ALL[i];
            if grip_signs[i].is_none()
                || (id == self.mover && self.phase == MoverPhase::Press && !mover_attached)
            {
                None
            } else {
                Some(slots[i])
            }
        });
        let squeezes = self.balanced_squeezes(&balance_set);

        let mut q_des = world.joints.q_cmd;
        for id in FingerId::ALL {
            let i = id.index();
            let hovering = id != self.mover && self.sliding_now(i, k);
            let target = if grip_signs[i].is_some() || hovering {
                let (face, t) = slots[i];
                // hovering sliders reposition just outside the face; the
                // viscous contact model would otherwise let any skidding
                // finger drag the object along
                let offset = if hovering {
                    cfg.fingertip_radius + cfg.hover_gap
                } else if balance_set[i].is_none() {
                    cfg.fingertip_radius - 0.75 * self.cfg.squeeze
                } else {
                    cfg.fingertip_radius - squeezes[i]
                };
                if id == self.mover && self.phase == MoverPhase::Press {
                    attach_slot + attach_n * offset
                } else {
                    let slot = Self::slot_world(world, &c_tgt, &rot_tgt, face, t);
                    let n = {
                        let local = world
                            .shape
                            .radial_surface_point(&Vector3::new(
                                face * world.shape.depth / 2.0,
                                t,
                                0.0,
                            ))
                            .expect("slot ray is never degenerate");
                        rot_tgt.transform_vector(&world.shape.surface_normal(&local))
                    };
                    slot + n * offset
                }
            } else {
                // moving finger in transfer; the retract anchor is pinned
                // just outside the start face and tracks the rotating object
                let out_n = world.object.rot.transform_vector(&Vector3::new(
                    self.mover_start_sign,
                    0.0,
                    0.0,
                ));
                let anchor = Self::slot_world(
                    world,
                    &world.object.pos,
                    &world.object.rot,
                    self.mover_start_sign,
                    self.mover_start_t,
                ) + out_n * (cfg.fingertip_radius + cfg.retract_dist);
                // all transfer waypoints are reached in short hops:
                // joint-space tracking between distant waypoints swings the
                // tip along arcs that re-enter the object
                let hop_xy = |wp: Vector2<f64>, z: f64| {
                    let d = wp - tip_m.xy();
                    let n = d.norm();
                    let xy = if n > cfg.hop_step {
                        tip_m.xy() + d * (cfg.hop_step / n)
                    } else {
                        wp
                    };
                    Vector3::new(xy.x, xy.y, z)
                };
                match self.phase {
                    MoverPhase::Retract => anchor,
                    MoverPhase::Shift => hop_xy(lift_col.xy(), 0.0),
                    MoverPhase::Lift => Vector3::new(
                        lift_col.x,
                        lift_col.y,
                        (tip_m.z + 0.014).min(cross_z + 0.002),
                    ),
                    MoverPhase::CrossMid => hop_xy(world.object.pos.xy(), cross_z),
                    MoverPhase::CrossOut => hop_xy(approach.xy(), cross_z),
                    MoverPhase::Descend => Vector3::new(
                        approach.x,
                        approach.y,
                        (tip_m.z - 0.010).max(approach.z),
                    ),
                    MoverPhase::Grip | MoverPhase::Press => unreachable!(),
                }
            };
            #[cfg(test)]
            {
                self.dbg_targets[i] = target;
            }
            let (qf, _) = world.hand.finger(id).inverse_kinematics(&target);
            let r = HandModel::joint_range(id);
            q_des[r.start] = qf[0];
            q_des[r.start + 1] = qf[1];
            q_des[r.start + 2] = qf[2];
        }

        self.step += 1;
        let mut dq = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            dq[j] = q_des[j] - world.joints.q_cmd[j];
        }
        dq
    }
}


#[cfg(test)]
mod debug_tests {
    use super::*;
    use crate::graph::{canonical_start, half_turn_goal, TransitionGraph};
    use crate::reward::{theta_sum, RewardConfig, TerminationConfig};
    use crate::rl::env::PrimitiveEnv;
    use crate::simcore::{nominal_world, SimConfig};

    #[test]
    #[ignore]
    fn debug_chain() {
        let hand = crate::hand::HandModel::default();
        let shape = crate::geometry::Superquadric::new(0.035, 0.11, 0.1, 0.0, 0.0).unwrap();
        let mut world = nominal_world(&hand, shape, 1.0, &SimConfig::default(), 0.004).unwrap();
        world.begin_episode();
        let graph = TransitionGraph::build();
        let plan = graph
            .plan_primitives(&canonical_start(), &half_turn_goal(&canonical_start()))
            .unwrap();
        let mut expert = ScriptedExpert::new(ExpertConfig::default());
        for prim in &plan.primitives {
            let mut env = PrimitiveEnv::continuing(
                world,
                prim.clone(),
                SimConfig::default(),
                RewardConfig::standard(),
                TerminationConfig::default(),
                11,
            );
            expert.begin_primitive(&env.world, prim);
            println!(
                "=== primitive {} mover {} end_t {:?} sign {:?} slides {:?} mover_start {}",
                prim.label(), prim.moving_finger, expert.end_t, expert.sign, expert.slides,
                expert.mover_start
            );
            let mut terminated = false;
            while !env.done() {
                let a = expert.act(&env.world);
                let phase = expert.phase;
                let out = env.step(&a).unwrap();
                let w = &env.world;
                let tipm = w.fingertips()[prim.moving_finger.index()].tip;
                println!(
                    "t={:3} ph={:?} verdict={} yaw={:+.3} roll={:+.3} pitch={:+.3} pos=({:+.4},{:+.4},{:+.4}) tipM=({:+.4},{:+.4},{:+.4}) thsum={:.1} nc={} flags=({}{}{})",
                    w.t, phase, out.verdict.label(), w.yaw(), w.theta_roll(), w.theta_pitch(),
                    w.object.pos.x, w.object.pos.y, w.object.pos.z,
                    tipm.x, tipm.y, tipm.z,
                    theta_sum(w).to_degrees(), w.contacts.len(),
                    w.phase.above_top as u8, w.phase.crossed_below as u8, w.phase.attached as u8,
                );
                if (11..22).contains(&w.t) {
                    for id in crate::hand::FingerId::ALL {
                        let tg = expert.dbg_targets[id.index()];
                        let tp = w.fingertips()[id.index()].tip;
                        println!(
                            "      {:?} tgt=({:+.4},{:+.4},{:+.4}) tip=({:+.4},{:+.4},{:+.4})",
                            id, tg.x, tg.y, tg.z, tp.x, tp.y, tp.z
                        );
                    }
                }
                terminated |= out.verdict.terminated();
                if terminated {
                    break;
                }
            }
            println!(
                "primitive {}: succeeded={} descriptor={} terminated={} margin={:?} order={:?}",
                prim.label(),
                env.succeeded(),
                crate::contactstate::classify(&env.world),
                terminated,
                crate::contactstate::is_stable(&env.world).closure_margin,
                crate::contactstate::manipulability_ok(&env.world),
            );
            for c in &env.world.contacts {
                println!(
                    "  contact {:?} point=({:+.6},{:+.6},{:+.6}) normal=({:+.6},{:+.6},{:+.6}) pen={:.4} side={:?}",
                    c.finger, c.point.x, c.point.y, c.point.z, c.normal.x, c.normal.y, c.normal.z,
                    c.penetration, c.side
                );
            }
            {
                let wp = crate::contactstate::wrench_points(
                    &env.world.contacts,
                    env.world.mu,
                    crate::contactstate::DEFAULT_M_EDGES,
                    &env.world.object.pos,
                    env.world.shape.max_half_extent(),
                );
                if let Ok(f) = crate::contactstate::hull::convex_hull_facets(&wp) {
                    let (n_min, b_min) = f
                        .planes
                        .iter()
                        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                        .unwrap();
                    println!(
                        "  min facet b={:+.3e} support(n)={:+.3e} support(-n)={:+.3e} nfacets={}",
                        b_min,
                        crate::contactstate::hull::support(&wp, n_min),
                        crate::contactstate::hull::support(&wp, &-n_min),
                        f.planes.len()
                    );
                }
            }
            println!(
                "  recomputed margin {:+.8} center=({:+.6},{:+.6},{:+.6}) rho={:.4} mu={}",
                crate::contactstate::force_closure_margin(
                    &env.world.contacts,
                    env.world.mu,
                    crate::contactstate::DEFAULT_M_EDGES,
                    &env.world.object.pos,
                    env.world.shape.max_half_extent(),
                ),
                env.world.object.pos.x, env.world.object.pos.y, env.world.object.pos.z,
                env.world.shape.max_half_extent(), env.world.mu,
            );
            if terminated {
                return;
            }
            world = env.into_world();
        }
        println!("final yaw {:+.3}", world.yaw());
    }

    #[test]
    #[ignore]
    fn debug_margins() {
        use crate::simcore::ContactRecord;
        let hand = crate::hand::HandModel::default();
        let shape = crate::geometry::Superquadric::new(0.035, 0.11, 0.1, 0.0, 0.0).unwrap();
        let world = nominal_world(&hand, shape, 1.0, &SimConfig::default(), 0.004).unwrap();
        let margin_of = |layout: &[(f64, f64); 4]| -> f64 {
            let contacts: Vec<ContactRecord> = FingerId::ALL
                .into_iter()
                .zip(layout)
                .map(|(id, &(s, t))| {
                    let local = world
                        .shape
                        .radial_surface_point(&Vector3::new(s * world.shape.depth / 2.0, t, 0.0))
                        .unwrap();
                    let normal = world.object.rot.transform_vector(&world.shape.surface_normal(&local));
                    ContactRecord {
                        finger: id,
                        point: world.object.pos + world.object.rot.transform_vector(&local),
                        normal,
                        force: -normal,
                        penetration: 0.001,
                        side: SideLabel::None,
                    }
                })
                .collect();
            force_closure_margin(
                &contacts,
                world.mu,
                DEFAULT_M_EDGES,
                &world.object.pos,
                world.shape.max_half_extent(),
            )
        };
        let nominal = [(-1.0, 0.0), (1.0, 0.035), (1.0, 0.0), (1.0, -0.035)];
        let chain_a = [(-1.0, 0.0), (1.0, -0.015), (1.0, -0.045), (-1.0, -0.045)];
        let spread = [(-1.0, 0.0), (1.0, -0.015), (1.0, -0.045), (-1.0, 0.045)];
        println!("nominal  {:+.5}", margin_of(&nominal));
        println!("chain_a  {:+.5}", margin_of(&chain_a));
        println!("spread   {:+.5}", margin_of(&spread));

        // replay the exact end-of-primitive-A contact set
        let n1 = Vector3::new(0.720, -0.694, 0.009).normalize();
        let real = [
            (FingerId::T, Vector3::new(0.0125, -0.0113, -0.0002), n1),
            (FingerId::I, Vector3::new(-0.0052, 0.0209, -0.0001), -n1),
            (FingerId::M, Vector3::new(0.0104, 0.0370, -0.0002), -n1),
            (FingerId::R, Vector3::new(0.0373, 0.0145, -0.0001), n1),
        ];
        let contacts: Vec<ContactRecord> = real
            .iter()
            .map(|&(finger, point, normal)| ContactRecord {
                finger,
                point,
                normal,
                force: -normal,
                penetration: 0.001,
                side: SideLabel::None,
            })
            .collect();
        let m = force_closure_margin(
            &contacts,
            world.mu,
            DEFAULT_M_EDGES,
            &Vector3::new(-0.0002, 0.0008, -0.0006),
            world.shape.max_half_extent(),
        );
        println!("real_a   {:+.8}", m);

        let n6 = Vector3::new(0.719753, -0.694168, 0.009291).normalize();
        let real6 = [
            (FingerId::T, Vector3::new(0.012482, -0.011255, -0.000159), n6),
            (FingerId::I, Vector3::new(-0.005160, 0.020873, -0.000137), -n6),
            (FingerId::M, Vector3::new(0.010417, 0.037024, -0.000155), -n6),
            (FingerId::R, Vector3::new(0.037329, 0.014508, -0.000131), n6),
        ];
        let contacts6: Vec<ContactRecord> = real6
            .iter()
            .map(|&(finger, point, normal)| ContactRecord {
                finger,
                point,
                normal,
                force: -normal,
                penetration: 0.001,
                side: SideLabel::None,
            })
            .collect();
        let center = Vector3::new(-0.000197, 0.000802, -0.000650);
        let wp = crate::contactstate::wrench_points(
            &contacts6,
            world.mu,
            DEFAULT_M_EDGES,
            &center,
            world.shape.max_half_extent(),
        );
        let dist = crate::contactstate::mnp::distance_to_hull(&wp);
        println!("real6 mnp dist {dist:+.10e}");
        match crate::contactstate::hull::convex_hull_facets(&wp) {
            Ok(f) => println!(
                "real6 inscribed {:+.8}",
                crate::contactstate::hull::inscribed_radius(&f)
            ),
            Err(e) => println!("real6 hull error {e:?}"),
        }
    }
}
