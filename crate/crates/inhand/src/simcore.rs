//! Deterministic rigid-body world.
//!
//! A single 6-DOF object held in the air by four kinematic fingertips:
//! penalty normal forces with regularized Coulomb friction, semi-implicit
//! Euler integration at the physics rate, observations and privileged
//! state, plus the initial-state generator.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contactstate::{self, SideLabel};
use crate::error::{InhandError, Result};
use crate::geometry::{sample_shape, ShapeRandomizationTable, Superquadric};
use crate::hand::{
    apply_action, measure, track_command, FingerId, FkResult, HandModel, JointState, DQ_MAX,
    NUM_JOINTS,
};
use crate::reward::PhaseFlags;

/// Episode horizon in control steps.
pub const T_HORIZON: usize = 100;

/// Simulation settings. Physics runs at `physics_hz`, control at
/// `control_hz`, with `substeps` physics steps per control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub physics_hz: f64,
    pub control_hz: f64,
    pub substeps: usize,
    pub gravity: f64,
    /// Penalty contact stiffness k_n, N/m.
    pub contact_stiffness: f64,
    /// Penalty contact damping c_n, N.s/m.
    pub contact_damping: f64,
    /// Friction regularization velocity, m/s.
    pub friction_vel_eps: f64,
    pub object_mass: f64,
    /// First-order angular velocity decay rate, 1/s.
    pub angular_damping: f64,
    pub fingertip_radius: f64,
    /// Joint measurement noise half-range, rad.
    pub joint_noise: f64,
    pub horizon: usize,
    /// Object-integration refinements per physics step; the penalty
    /// stiffness needs a finer grid than the 120 Hz contact/finger update.
    pub micro_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            physics_hz: 120.0,
            control_hz: 20.0,
            substeps: 6,
            gravity: 9.81,
            contact_stiffness: 2000.0,
            contact_damping: 5.0,
            friction_vel_eps: 0.001,
            object_mass: 0.1,
            angular_damping: 2.0,
            fingertip_radius: 0.008,
            joint_noise: 0.05,
            horizon: T_HORIZON,
            micro_steps: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.physics_hz - self.control_hz * self.substeps as f64).abs() > 1e-9 {
            return Err(InhandError::Config(format!(
                "physics_hz ({}) must equal control_hz ({}) x substeps ({})",
                self.physics_hz, self.control_hz, self.substeps
            )));
        }
        if !(self.object_mass > 0.0 && self.contact_stiffness > 0.0 && self.friction_vel_eps > 0.0)
        {
            return Err(InhandError::Config("sim constants must be positive".into()));
        }
        if self.micro_steps == 0 {
            return Err(InhandError::Config("micro_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn physics_dt(&self) -> f64 {
        1.0 / self.physics_hz
    }
}

/// 6-DOF object state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pos: Vector3<f64>,
    pub rot: UnitQuaternion<f64>,
    pub vel: Vector3<f64>,
    pub ang_vel: Vector3<f64>,
}

impl ObjectState {
    pub fn at_rest(pos: Vector3<f64>, rot: UnitQuaternion<f64>) -> Self {
        Self {
            pos,
            rot,
            vel: Vector3::zeros(),
            ang_vel: Vector3::zeros(),
        }
    }
}

/// Orientation of the object at the start of the task: the depth axis faces
/// the thumb, i.e. object-local x maps to world y.
pub fn initial_rotation() -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2)
}

/// One fingertip-object contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub finger: FingerId,
    /// Contact point on the object surface, world frame.
    pub point: Vector3<f64>,
    /// Outward surface normal, world frame.
    pub normal: Vector3<f64>,
    /// Force applied to the object, world frame.
    pub force: Vector3<f64>,
    pub penetration: f64,
    pub side: SideLabel,
}

/// Ground-truth world state of one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub object: ObjectState,
    pub joints: JointState,
    pub shape: Superquadric,
    pub mu: f64,
    pub contacts: Vec<ContactRecord>,
    /// Control-step index within the episode.
    pub t: usize,
    pub phase: PhaseFlags,
    pub init_pos: Vector3<f64>,
    pub init_rot: UnitQuaternion<f64>,
    pub prev_action: [f64; NUM_JOINTS],
    pub hand: HandModel,
}

impl WorldState {
    pub fn fingertips(&self) -> [FkResult; 4] {
        self.hand.fk_all(&self.joints.q_act)
    }

    /// Rotation of the object relative to its episode-initial orientation.
    pub fn relative_rotation(&self) -> UnitQuaternion<f64> {
        self.object.rot * self.init_rot.inverse()
    }

    /// Yaw about the world vertical, relative to the episode start.
    pub fn yaw(&self) -> f64 {
        self.relative_rotation().euler_angles().2
    }

    /// Magnitude of rotation about the initial long axis (world x).
    pub fn theta_roll(&self) -> f64 {
        self.relative_rotation().euler_angles().0.abs()
    }

    /// Magnitude of rotation about the initial depth axis (world y).
    pub fn theta_pitch(&self) -> f64 {
        self.relative_rotation().euler_angles().1.abs()
    }

    /// World z of the object's top plane (ignores roll/pitch, which the
    /// termination rules keep small).
    pub fn top_z(&self) -> f64 {
        self.object.pos.z + self.shape.top_height()
    }

    /// Point expressed in the object's local frame.
    pub fn to_local(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.object
            .rot
            .inverse_transform_vector(&(p_world - self.object.pos))
    }

    pub fn to_world(&self, p_local: &Vector3<f64>) -> Vector3<f64> {
        self.object.pos + self.object.rot.transform_vector(p_local)
    }

    /// Reset episode bookkeeping so the current pose becomes the episode
    /// origin: step counter, phase latches, reference pose, last action.
    pub fn begin_episode(&mut self) {
        self.t = 0;
        self.phase = PhaseFlags::default();
        self.init_pos = self.object.pos;
        self.init_rot = self.object.rot;
        self.prev_action = [0.0; NUM_JOINTS];
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.7..=1.3).contains(&self.mu) {
            return Err(InhandError::Config(format!("mu {} outside [0.7, 1.3]", self.mu)));
        }
        if (self.object.rot.norm() - 1.0).abs() > 1e-9 {
            return Err(InhandError::Contract("object quaternion not normalized".into()));
        }
        Ok(())
    }
}

/// Observed (deployable) per-step information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub q_cmd: [f64; NUM_JOINTS],
    pub q_meas: [f64; NUM_JOINTS],
    pub prev_action: [f64; NUM_JOINTS],
}

pub const OBS_DIM: usize = 3 * NUM_JOINTS;

impl Observation {
    pub fn zeros() -> Self {
        Self {
            q_cmd: [0.0; NUM_JOINTS],
            q_meas: [0.0; NUM_JOINTS],
            prev_action: [0.0; NUM_JOINTS],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.q_cmd);
        v.extend_from_slice(&self.q_meas);
        v.extend_from_slice(&self.prev_action);
        v
    }
}

/// Privileged (simulator-only) per-step information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Privileged {
    pub pos: [f64; 3],
    pub quat: [f64; 4],
    pub shape: [f64; 5],
    pub mu: f64,
    pub contact_flags: [bool; 4],
}

pub const PRIV_DIM: usize = 17;

impl Privileged {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PRIV_DIM);
        v.extend_from_slice(&self.pos);
        v.extend_from_slice(&self.quat);
        v.extend_from_slice(&self.shape);
        v.push(self.mu);
        v.extend(self.contact_flags.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        v
    }
}

pub fn observation_of(world: &WorldState) -> Observation {
    Observation {
        q_cmd: world.joints.q_cmd,
        q_meas: world.joints.q_meas,
        prev_action: world.prev_action,
    }
}

pub fn privileged_of(world: &WorldState) -> Privileged {
    let mut flags = [false; 4];
    for c in &world.contacts {
        flags[c.finger.index()] = true;
    }
    let q = world.object.rot.quaternion();
    Privileged {
        pos: [world.object.pos.x, world.object.pos.y, world.object.pos.z],
        quat: [q.w, q.i, q.j, q.k],
        shape: [
            world.shape.depth,
            world.shape.width,
            world.shape.height,
            world.shape.eps1,
            world.shape.eps2,
        ],
        mu: world.mu,
        contact_flags: flags,
    }
}

/// Sphere-vs-implicit-surface contact detection for all four fingertips.
/// A fingertip touches when the signed radial surface distance of its
/// center is below the tip radius. Forces are left zeroed.
pub fn detect_contacts(world: &WorldState, cfg: &SimConfig) -> Vec<ContactRecord> {
    let tips = world.fingertips();
    let mut out = Vec::new();
    for id in FingerId::ALL {
        let tip = tips[id.index()].tip;
        let local = world.to_local(&tip);
        if local.norm() < 1e-9 {
            continue;
        }
        let sp_local = match world.shape.radial_surface_point(&local) {
            Ok(sp) => sp,
            Err(_) => continue,
        };
        let n_local = world.shape.surface_normal(&sp_local);
        let dist = (local - sp_local).dot(&n_local);
        if dist < cfg.fingertip_radius {
            out.push(ContactRecord {
                finger: id,
                point: world.to_world(&sp_local),
                normal: world.object.rot.transform_vector(&n_local),
                force: Vector3::zeros(),
                penetration: cfg.fingertip_radius - dist,
                side: contactstate::side_from_normal_local(&n_local),
            });
        }
    }
    out
}

/// Resolve one micro step of contact dynamics and return the post-step
/// (linear, angular) velocity of the object.
///
/// Normal forces are explicit penalty terms (stiffness plus approach-rate
/// damping, clamped non-negative). Friction follows the tanh-regularized
/// Coulomb law opposing the slip of the contact point relative to the
/// fingertip; near zero slip that law is a viscous damper with coefficient
/// mu.N/v_eps, far too stiff for explicit integration at any practical step
/// size. It is therefore folded into the velocity update implicitly: each
/// contact contributes a secant damping coefficient
/// beta = mu.N.tanh(s/v_eps)/s evaluated at the pre-step slip speed s
/// (bounded above by mu.N/v_eps), and the coupled 6x6 linear system for the
/// new generalized velocity is solved exactly. Recorded friction forces are
/// evaluated at the post-step velocities and clamped to the friction cone.
pub fn resolve_contacts(
    contacts: &mut [ContactRecord],
    object: &ObjectState,
    mu: f64,
    cfg: &SimConfig,
    tip_velocities: &[Vector3<f64>; 4],
    dt: f64,
    inertia_world: &Matrix3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    // explicit generalized force: gravity, penalty normals, gyroscopic term
    let mut f_ext = Vector3::new(0.0, 0.0, -cfg.gravity * cfg.object_mass);
    let mut tau_ext = -object.ang_vel.cross(&(inertia_world * object.ang_vel));
    let mut betas = vec![0.0; contacts.len()];
    for (k, c) in contacts.iter_mut().enumerate() {
        debug_assert!(c.penetration >= 0.0);
        let n = c.normal;
        let v_tip = tip_velocities[c.finger.index()];
        let r = c.point - object.pos;
        let v_obj = object.vel + object.ang_vel.cross(&r);
        // separation rate of the tip center from the surface
        let approach = n.dot(&(v_tip - v_obj));
        let normal_mag =
            (cfg.contact_stiffness * c.penetration + cfg.contact_damping * (-approach).max(0.0))
                .max(0.0);
        c.force = -normal_mag * n; // friction is added after the solve
        f_ext += c.force;
        tau_ext += r.cross(&c.force);

        let v_rel = v_obj - v_tip;
        let v_t = v_rel - n * n.dot(&v_rel);
        let s = v_t.norm();
        betas[k] = if s > 1e-9 {
            mu * normal_mag * (s / cfg.friction_vel_eps).tanh() / s
        } else {
            mu * normal_mag / cfg.friction_vel_eps
        };
    }

    // (M + dt sum beta J^T T J) u' = M u + dt (f_ext + sum beta J^T T v_tip)
    // with u = [v; w], J_c = [I, -[r]x] the contact-point velocity map and
    // T_c = I - n n^T the tangential projector
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * cfg.object_mass));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(inertia_world);
    let mut b = Vector6::zeros();
    b.fixed_view_mut::<3, 1>(0, 0)
        .copy_from(&(cfg.object_mass * object.vel + dt * f_ext));
    b.fixed_view_mut::<3, 1>(3, 0)
        .copy_from(&(inertia_world * object.ang_vel + dt * tau_ext));
    for (k, c) in contacts.iter().enumerate() {
        let n = c.normal;
        let r = c.point - object.pos;
        let t_proj = Matrix3::identity() - n * n.transpose();
        let mut j = Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r.cross_matrix()));
        let jt_t = j.transpose() * t_proj;
        a += dt * betas[k] * jt_t * j;
        b += dt * betas[k] * (jt_t * tip_velocities[c.finger.index()]);
    }
    let u = a
        .lu()
        .solve(&b)
        .expect("contact velocity system is positive definite");
    let v_new = Vector3::new(u[0], u[1], u[2]);
    let w_new = Vector3::new(u[3], u[4], u[5]);

    for (k, c) in contacts.iter_mut().enumerate() {
        let n = c.normal;
        let r = c.point - object.pos;
        let v_c = v_new + w_new.cross(&r) - tip_velocities[c.finger.index()];
        let v_t = v_c - n * n.dot(&v_c);
        let mut f_t = -betas[k] * v_t;
        let f_max = mu * c.force.norm();
        let f_mag = f_t.norm();
        if f_mag > f_max && f_mag > 0.0 {
            f_t *= f_max / f_mag;
        }
        c.force += f_t;
    }
    (v_new, w_new)
}

fn body_inertia(shape: &Superquadric, mass: f64) -> Vector3<f64> {
    // box approximation of the inertia tensor, body frame diagonal
    let (d, w, h) = (shape.depth, shape.width, shape.height);
    Vector3::new(
        mass / 12.0 * (w * w + h * h),
        mass / 12.0 * (d * d + h * h),
        mass / 12.0 * (d * d + w * w),
    )
}

/// Advance one control step: apply the action to the commanded joints, run
/// the physics substeps, and emit the observation and privileged state.
pub fn step<R: Rng>(
    world: &mut WorldState,
    action: &[f64; NUM_JOINTS],
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(Observation, Privileged)> {
    if world.t >= cfg.horizon {
        return Err(InhandError::Contract(format!(
            "episode horizon {} exhausted",
            cfg.horizon
        )));
    }
    world.joints = apply_action(&world.joints, action, &world.hand);

    let dt = cfg.physics_dt();
    let inertia = body_inertia(&world.shape, cfg.object_mass);
    for _ in 0..cfg.substeps {
        let old_tips = world.fingertips();
        world.joints = track_command(&world.joints, dt, &world.hand);
        let new_tips = world.fingertips();
        let tip_vels = [
            (new_tips[0].tip - old_tips[0].tip) / dt,
            (new_tips[1].tip - old_tips[1].tip) / dt,
            (new_tips[2].tip - old_tips[2].tip) / dt,
            (new_tips[3].tip - old_tips[3].tip) / dt,
        ];

        // integrate the object on a finer grid than the finger update: the
        // penalty stiffness is too stiff for the raw physics step
        let dt_micro = dt / cfg.micro_steps as f64;
        for _ in 0..cfg.micro_steps {
            let rot_m: Matrix3<f64> = world.object.rot.to_rotation_matrix().into_inner();
            let inertia_world = rot_m * Matrix3::from_diagonal(&inertia) * rot_m.transpose();

            let mut contacts = detect_contacts(world, cfg);
            let (v_new, w_new) = resolve_contacts(
                &mut contacts,
                &world.object,
                world.mu,
                cfg,
                &tip_vels,
                dt_micro,
                &inertia_world,
            );

            let obj = &mut world.object;
            obj.vel = v_new;
            obj.ang_vel = w_new * (-cfg.angular_damping * dt_micro).exp();
            obj.pos += obj.vel * dt_micro;
            obj.rot = UnitQuaternion::from_scaled_axis(obj.ang_vel * dt_micro) * obj.rot;
            obj.rot.renormalize();

            world.contacts = contacts;
        }
    }

    let obj = &world.object;
    if !(obj.pos.iter().all(|v| v.is_finite())
        && obj.vel.iter().all(|v| v.is_finite())
        && obj.ang_vel.iter().all(|v| v.is_finite()))
    {
        return Err(InhandError::SimFault(format!(
            "non-finite object state at t={}: pos {:?} vel {:?}",
            world.t, obj.pos, obj.vel
        )));
    }

    world.t += 1;
    world.joints.q_meas = measure(&world.joints, rng, cfg.joint_noise);
    let mut effective = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        effective[j] = action[j].clamp(-DQ_MAX, DQ_MAX);
    }
    world.prev_action = effective;

    Ok((observation_of(world), privileged_of(world)))
}

/// Environment randomization tables: object shape plus friction range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub shape_table: ShapeRandomizationTable,
    pub mu_range: [f64; 2],
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            shape_table: ShapeRandomizationTable::default(),
            mu_range: [0.7, 1.3],
        }
    }
}

/// Per-episode draw of object shape and friction coefficient.
pub fn randomize_env<R: Rng>(
    rng: &mut R,
    tables: &RandomizationConfig,
) -> Result<(Superquadric, f64)> {
    let shape = sample_shape(rng, &tables.shape_table)?;
    let mu = if tables.mu_range[0] == tables.mu_range[1] {
        tables.mu_range[0]
    } else {
        rng.gen_range(tables.mu_range[0]..tables.mu_range[1])
    };
    Ok((shape, mu))
}

/// Fingertip contact slots of the nominal grasp, object-local surface
/// points: thumb centered on the near face, long fingers on the far face
/// spread along the width axis.
pub fn grasp_slots(shape: &Superquadric) -> [Vector3<f64>; 4] {
    let h = shape.depth / 2.0;
    let spread = 0.035;
    let ray = |x: f64, y: f64| {
        shape
            .radial_surface_point(&Vector3::new(x, y, 0.0))
            .expect("slot ray is never degenerate")
    };
    [
        ray(-h, 0.0),          // T
        ray(h, spread),        // I
        ray(h, 0.0),           // M
        ray(h, -spread),       // R
    ]
}

/// Grasp construction settings for the initial-state generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialStateConfig {
    /// Commanded fingertip penetration into the surface, m.
    pub squeeze: f64,
    /// Uniform position noise half-range on the object, m.
    pub noise_pos: f64,
    /// Uniform orientation noise half-range per axis, rad.
    pub noise_ang: f64,
    /// Uniform noise half-range on joint commands, rad.
    pub noise_cmd: f64,
    /// Settling duration, control steps.
    pub settle_steps: usize,
    /// Maximum accepted drift of the object during settling, m.
    pub displacement_tol: f64,
}

impl Default for InitialStateConfig {
    fn default() -> Self {
        Self {
            squeeze: 0.004,
            noise_pos: 0.005,
            noise_ang: 5.0f64.to_radians(),
            noise_cmd: 0.05,
            settle_steps: 50,
            displacement_tol: 0.02,
        }
    }
}

/// Joint state commanding fingertips onto their grasp slots, pressed in by
/// `squeeze`.
pub fn nominal_grasp(
    hand: &HandModel,
    shape: &Superquadric,
    object: &ObjectState,
    cfg: &SimConfig,
    squeeze: f64,
) -> Result<JointState> {
    let slots = grasp_slots(shape);
    let mut q = [0.0; NUM_JOINTS];
    for id in FingerId::ALL {
        let slot_local = slots[id.index()];
        let n_local = shape.surface_normal(&slot_local);
        // the thumb opposes three fingers; split the squeeze 3:1 so the
        // penalty normal forces balance at the nominal pose
        let s = if id == FingerId::T {
            1.5 * squeeze
        } else {
            0.5 * squeeze
        };
        let center_local = slot_local + (cfg.fingertip_radius - s) * n_local;
        let target = object.pos + object.rot.transform_vector(&center_local);
        let finger = hand.finger(id);
        let (qf, ok) = finger.inverse_kinematics(&target);
        if !ok {
            return Err(InhandError::Config(format!(
                "nominal grasp target {target:?} unreachable for finger {id}"
            )));
        }
        let r = HandModel::joint_range(id);
        q[r.start] = qf[0];
        q[r.start + 1] = qf[1];
        q[r.start + 2] = qf[2];
    }
    Ok(JointState::at(q))
}

/// World at the nominal grasp: object at the origin in its initial
/// orientation, fingers on their slots, contacts populated.
pub fn nominal_world(
    hand: &HandModel,
    shape: Superquadric,
    mu: f64,
    cfg: &SimConfig,
    squeeze: f64,
) -> Result<WorldState> {
    let object = ObjectState::at_rest(Vector3::zeros(), initial_rotation());
    let joints = nominal_grasp(hand, &shape, &object, cfg, squeeze)?;
    let mut world = WorldState {
        object,
        joints,
        shape,
        mu,
        contacts: Vec::new(),
        t: 0,
        phase: PhaseFlags::default(),
        init_pos: object.pos,
        init_rot: object.rot,
        prev_action: [0.0; NUM_JOINTS],
        hand: hand.clone(),
    };
    world.contacts = detect_contacts(&world, cfg);
    Ok(world)
}

/// Initial-state generation: perturb the nominal grasp, settle under
/// constant commands, and keep states that remain a full four-finger
/// stable grasp without drifting.
pub fn generate_initial_states<R: Rng>(
    count: usize,
    rng: &mut R,
    hand: &HandModel,
    tables: &RandomizationConfig,
    gen_cfg: &InitialStateConfig,
    sim_cfg: &SimConfig,
) -> Result<Vec<WorldState>> {
    if count == 0 {
        return Err(InhandError::Config("initial-state count must be >= 1".into()));
    }
    let max_attempts = 100 * count;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts >= max_attempts {
            return Err(InhandError::GraspInfeasible);
        }
        attempts += 1;
        let (shape, mu) = randomize_env(rng, tables)?;
        let mut world = nominal_world(hand, shape, mu, sim_cfg, gen_cfg.squeeze)?;

        // step 1: uniform noise on object pose and joint commands
        for k in 0..3 {
            world.object.pos[k] += rng.gen_range(-gen_cfg.noise_pos..=gen_cfg.noise_pos);
        }
        let d_ang = Vector3::new(
            rng.gen_range(-gen_cfg.noise_ang..=gen_cfg.noise_ang),
            rng.gen_range(-gen_cfg.noise_ang..=gen_cfg.noise_ang),
            rng.gen_range(-gen_cfg.noise_ang..=gen_cfg.noise_ang),
        );
        world.object.rot = UnitQuaternion::from_scaled_axis(d_ang) * world.object.rot;
        for j in 0..NUM_JOINTS {
            world.joints.q_cmd[j] += rng.gen_range(-gen_cfg.noise_cmd..=gen_cfg.noise_cmd);
        }
        world.hand.clamp_to_limits(&mut world.joints.q_cmd);

        // step 2: settle with constant commands
        let start_pos = world.object.pos;
        let mut faulted = false;
        for _ in 0..gen_cfg.settle_steps {
            world.t = 0; // settling does not consume episode budget
            if step(&mut world, &[0.0; NUM_JOINTS], sim_cfg, rng).is_err() {
                faulted = true;
                break;
            }
        }
        if faulted {
            continue;
        }

        // step 3: keep states where the grasp is maintained
        let displaced = (world.object.pos - start_pos).norm();
        if displaced < gen_cfg.displacement_tol && contactstate::is_most_stable(&world) {
            world.begin_episode();
            world.object.vel = Vector3::zeros();
            world.object.ang_vel = Vector3::zeros();
            out.push(world);
        }
    }
    // guard against a generator that only just scraped by: a sub-1% yield
    // signals an infeasible nominal grasp
    if out.len() * 100 < attempts {
        return Err(InhandError::GraspInfeasible);
    }
    Ok(out)
}

/// Footprint test in the object's horizontal cross-section for a world
/// point: used by the reward's crossover gate.
pub fn footprint_contains_world(world: &WorldState, p_world: &Vector3<f64>) -> bool {
    let local = world.to_local(p_world);
    world.shape.footprint_contains(&Vector2::new(local.x, local.y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;


    fn test_inertia(cfg: &SimConfig) -> Matrix3<f64> {
        Matrix3::from_diagonal(&body_inertia(&default_shape(), cfg.object_mass))
    }

    fn default_shape() -> Superquadric {
        Superquadric::new(0.02, 0.11, 0.1, 0.0, 0.0).unwrap()
    }

    fn quiet_cfg() -> SimConfig {
        SimConfig {
            joint_noise: 0.0,
            ..SimConfig::default()
        }
    }

    fn free_world(cfg: &SimConfig) -> WorldState {
        let hand = HandModel::default();
        let object = ObjectState::at_rest(Vector3::new(0.0, 0.0, -0.5), initial_rotation());
        let mut w = WorldState {
            object,
            joints: JointState::at([0.0; NUM_JOINTS]),
            shape: default_shape(),
            mu: 1.0,
            contacts: Vec::new(),
            t: 0,
            phase: PhaseFlags::default(),
            init_pos: object.pos,
            init_rot: object.rot,
            prev_action: [0.0; NUM_JOINTS],
            hand,
        };
        w.contacts = detect_contacts(&w, cfg);
        assert!(w.contacts.is_empty());
        w
    }



    #[test]
    fn zero_gravity_no_contacts_is_static() {
        let cfg = SimConfig {
            gravity: 0.0,
            ..quiet_cfg()
        };
        let mut w = free_world(&cfg);
        let before = w.object;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        step(&mut w, &[0.0; NUM_JOINTS], &cfg, &mut rng).unwrap();
        assert_eq!(w.object, before);
    }

    #[test]
    fn free_fall_velocity_is_exact() {
        let cfg = quiet_cfg();
        let mut w = free_world(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            step(&mut w, &[0.0; NUM_JOINTS], &cfg, &mut rng).unwrap();
        }
        let n = (3 * cfg.substeps) as f64;
        assert_relative_eq!(w.object.vel.z, -cfg.gravity * n * cfg.physics_dt(), epsilon = 1e-9);
    }

    #[test]
    fn far_fingertip_no_contact_and_touching_detection() {
        let cfg = quiet_cfg();
        let hand = HandModel::default();
        let w = nominal_world(&hand, default_shape(), 1.0, &cfg, 0.004).unwrap();
        // nominal world: all four fingers contact
        assert_eq!(w.contacts.len(), 4);
        for c in &w.contacts {
            assert!(c.penetration > 0.0);
        }
        // retract all commands far: no contacts
        let mut w2 = w.clone();
        w2.joints = JointState::at([0.0; NUM_JOINTS]);
        assert!(detect_contacts(&w2, &cfg).is_empty());
    }

    #[test]
    fn contact_at_exact_surface_has_full_penetration() {
        // fingertip center exactly on the surface -> penetration == radius
        let cfg = quiet_cfg();
        let hand = HandModel::default();
        let shape = default_shape();
        let object = ObjectState::at_rest(Vector3::zeros(), initial_rotation());
        // place middle fingertip on the far face surface point
        let slot = grasp_slots(&shape)[FingerId::M.index()];
        let target = object.pos + object.rot.transform_vector(&slot);
        let finger = hand.finger(FingerId::M);
        let (qf, ok) = finger.inverse_kinematics(&target);
        assert!(ok);
        let mut q = [0.0; NUM_JOINTS];
        // keep other fingers away
        let r = HandModel::joint_range(FingerId::M);
        q[r.start] = qf[0];
        q[r.start + 1] = qf[1];
        q[r.start + 2] = qf[2];
        let w = WorldState {
            object,
            joints: JointState::at(q),
            shape,
            mu: 1.0,
            contacts: Vec::new(),
            t: 0,
            phase: PhaseFlags::default(),
            init_pos: object.pos,
            init_rot: object.rot,
            prev_action: [0.0; NUM_JOINTS],
            hand: hand.clone(),
        };
        let contacts = detect_contacts(&w, &cfg);
        let m: Vec<_> = contacts.iter().filter(|c| c.finger == FingerId::M).collect();
        assert_eq!(m.len(), 1);
        assert_relative_eq!(m[0].penetration, cfg.fingertip_radius, epsilon = 1e-9);
        assert_eq!(m[0].side, SideLabel::Far);
    }

    /// Dense surface-sampling oracle for contact detection on near-normal
    /// approaches: compare the radial-distance verdict against the nearest
    /// sampled surface point, skipping the band where the two distance
    /// notions straddle the radius.
    #[test]
    fn detection_matches_dense_sampling() {
        let cfg = quiet_cfg();
        let hand = HandModel::default();
        let shape = Superquadric::new(0.0275, 0.11, 0.1, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        for _ in 0..200 {
            let mut w = nominal_world(&hand, shape, 1.0, &cfg, 0.004).unwrap();
            // jitter the commanded joints slightly and re-evaluate
            let mut q = w.joints.q_cmd;
            for v in q.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
            w.joints = JointState::at(q);
            let contacts = detect_contacts(&w, &cfg);
            let tips = w.fingertips();
            for id in FingerId::ALL {
                let local = w.to_local(&tips[id.index()].tip);
                // nearest surface point over a dense grid of rays
                let mut best = f64::INFINITY;
                let n = 400;
                for i in 0..n {
                    let th = std::f64::consts::TAU * i as f64 / n as f64;
                    for &z in &[-0.04, -0.02, 0.0, 0.02, 0.04] {
                        let dir = Vector3::new(th.cos(), th.sin(), z * 10.0);
                        let sp = shape.radial_surface_point(&dir).unwrap();
                        best = best.min((local - sp).norm());
                    }
                }
                let signed = shape.face_distance(&local).unwrap();
                let euclid = if signed < 0.0 { -best } else { best };
                if (euclid - cfg.fingertip_radius).abs() < 0.004 {
                    continue; // ambiguous band between distance notions
                }
                let oracle_contact = euclid < cfg.fingertip_radius;
                let got = contacts.iter().any(|c| c.finger == id);
                assert_eq!(got, oracle_contact, "finger {id} signed {signed} euclid {euclid}");
                checked += 1;
            }
        }
        assert!(checked > 300, "too few unambiguous checks: {checked}");
    }

    #[test]
    fn static_penetration_force_is_linear() {
        let cfg = SimConfig {
            gravity: 0.0,
            ..quiet_cfg()
        };
        let object = ObjectState::at_rest(Vector3::zeros(), initial_rotation());
        let delta = 0.003;
        let mut contacts = vec![ContactRecord {
            finger: FingerId::M,
            point: Vector3::new(0.0, 0.01, 0.0),
            normal: Vector3::new(0.0, 1.0, 0.0),
            force: Vector3::zeros(),
            penetration: delta,
            side: SideLabel::Far,
        }];
        let inertia = test_inertia(&cfg);
        resolve_contacts(&mut contacts, &object, 1.0, &cfg, &[Vector3::zeros(); 4], 1e-3, &inertia);
        let f = contacts[0].force;
        assert_relative_eq!(f.y, -cfg.contact_stiffness * delta, epsilon = 1e-12);
        assert!(f.x.abs() < 1e-12 && f.z.abs() < 1e-12);

        // zero penetration, zero velocity -> zero force
        contacts[0].penetration = 0.0;
        resolve_contacts(&mut contacts, &object, 1.0, &cfg, &[Vector3::zeros(); 4], 1e-3, &inertia);
        assert_eq!(contacts[0].force, Vector3::zeros());
    }

    #[test]
    fn sliding_friction_opposes_and_respects_cone() {
        let cfg = SimConfig {
            gravity: 0.0,
            ..quiet_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mu: f64 = rng.gen_range(0.7..1.3);
            let object = ObjectState {
                pos: Vector3::zeros(),
                rot: initial_rotation(),
                vel: Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ),
                ang_vel: Vector3::zeros(),
            };
            let n = Vector3::new(0.0, 1.0, 0.0);
            let mut contacts = vec![ContactRecord {
                finger: FingerId::M,
                point: Vector3::new(0.0, 0.01, 0.0),
                normal: n,
                force: Vector3::zeros(),
                penetration: rng.gen_range(0.0..0.004),
                side: SideLabel::Far,
            }];
            let inertia = test_inertia(&cfg);
            resolve_contacts(&mut contacts, &object, mu, &cfg, &[Vector3::zeros(); 4], 1e-3, &inertia);
            let f = contacts[0].force;
            let f_n = n.dot(&f);
            assert!(f_n <= 0.0, "normal force must push into the object");
            let f_t = f - n * f_n;
            assert!(f_t.norm() <= mu * f_n.abs() + 1e-9, "friction cone violated");
            // friction opposes the object's tangential slip
            let v_t = object.vel - n * n.dot(&object.vel);
            if v_t.norm() > 1e-6 && f_t.norm() > 1e-12 {
                assert!(f_t.dot(&v_t) < 0.0);
            }
        }
    }

    #[test]
    fn symmetric_grasp_holds_object() {
        let cfg = quiet_cfg();
        let hand = HandModel::default();
        for shape in [
            default_shape(),
            Superquadric::new(0.035, 0.11, 0.1, 0.0, 1.0).unwrap(),
        ] {
            let mut w = nominal_world(&hand, shape, 0.9, &cfg, 0.004).unwrap();
            let start = w.object.pos;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..100 {
                step(&mut w, &[0.0; NUM_JOINTS], &cfg, &mut rng).unwrap();
            }
            let drift = (w.object.pos - start).norm();
            assert!(drift < 0.002, "object drifted {drift} m");
            // friction cone holds on every emitted contact
            for c in &w.contacts {
                let f_n = c.normal.dot(&c.force);
                let f_t = c.force - c.normal * f_n;
                assert!(f_t.norm() <= w.mu * f_n.abs() + 1e-6);
            }
        }
    }

    #[test]
    fn trajectories_are_bit_identical() {
        let cfg = SimConfig::default();
        let hand = HandModel::default();
        let run = || {
            let mut w = nominal_world(&hand, default_shape(), 1.1, &cfg, 0.004).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut action_rng = ChaCha8Rng::seed_from_u64(78);
            let mut log = Vec::new();
            for _ in 0..40 {
                let mut a = [0.0; NUM_JOINTS];
                for v in a.iter_mut() {
                    *v = action_rng.gen_range(-0.02..0.02);
                }
                step(&mut w, &a, &cfg, &mut rng).unwrap();
                log.push((w.object.pos, w.object.vel, w.joints.q_meas));
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn observation_has_no_privileged_fields() {
        let cfg = quiet_cfg();
        let hand = HandModel::default();
        let mut w = nominal_world(&hand, default_shape(), 1.0, &cfg, 0.004).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (obs, privileged) = step(&mut w, &[0.0; NUM_JOINTS], &cfg, &mut rng).unwrap();
        assert_eq!(obs.to_vec().len(), OBS_DIM);
        assert_eq!(privileged.to_vec().len(), PRIV_DIM);
        // the observation is a pure function of joint-space quantities
        assert_eq!(obs.q_cmd, w.joints.q_cmd);
        assert_eq!(obs.q_meas, w.joints.q_meas);
        assert_eq!(obs.prev_action, w.prev_action);
    }

    #[test]
    fn mu_sampling_statistics() {
        let tables = RandomizationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let (_, mu) = randomize_env(&mut rng, &tables).unwrap();
            assert!((0.7..=1.3).contains(&mu));
            sum += mu;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean mu {mean}");

        // reproducible
        let a = randomize_env(&mut ChaCha8Rng::seed_from_u64(3), &tables).unwrap();
        let b = randomize_env(&mut ChaCha8Rng::seed_from_u64(3), &tables).unwrap();
        assert_eq!(a, b);

        // degenerate table -> constant shape
        let one = RandomizationConfig {
            shape_table: ShapeRandomizationTable {
                depth_choices: vec![0.02],
                eps1_choices: vec![0.0],
                eps2_choices: vec![0.5],
                ..Default::default()
            },
            mu_range: [1.0, 1.0],
        };
        let (s1, m1) = randomize_env(&mut rng, &one).unwrap();
        let (s2, m2) = randomize_env(&mut rng, &one).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn initial_states_zero_noise_always_accepts() {
        let cfg = quiet_cfg();
        let hand = HandModel::default();
        let gen_cfg = InitialStateConfig {
            noise_pos: 0.0,
            noise_ang: 0.0,
            noise_cmd: 0.0,
            ..InitialStateConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let states =
            generate_initial_states(5, &mut rng, &hand, &RandomizationConfig::default(), &gen_cfg, &cfg)
                .unwrap();
        assert_eq!(states.len(), 5);
    }

    #[test]
    fn initial_states_satisfy_most_stable_audit() {
        let cfg = SimConfig::default();
        let hand = HandModel::default();
        let gen_cfg = InitialStateConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let states = generate_initial_states(
            20,
            &mut rng,
            &hand,
            &RandomizationConfig::default(),
            &gen_cfg,
            &cfg,
        )
        .unwrap();
        assert_eq!(states.len(), 20);
        for s in &states {
            assert!(crate::contactstate::is_most_stable(s));
            assert_eq!(s.t, 0);
            assert_eq!(s.init_pos, s.object.pos);
        }
    }

    #[test]
    fn initial_states_deterministic_per_seed() {
        let cfg = SimConfig::default();
        let hand = HandModel::default();
        let gen_cfg = InitialStateConfig::default();
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(55);
            generate_initial_states(3, &mut rng, &hand, &RandomizationConfig::default(), &gen_cfg, &cfg)
                .unwrap()
        };
        assert_eq!(make(), make());
    }
}
