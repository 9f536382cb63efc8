//! Contact-state classification and grasp stability tests.
//!
//! A world state is summarized by which fingers touch the object and on
//! which face; stability combines a Ferrari-Canny force-closure margin with
//! a minimum contact count, and manipulability checks the clockwise
//! thumb-index-middle-ring arrangement.

pub mod hull;
pub mod mnp;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::hand::FingerId;
use crate::simcore::{ContactRecord, WorldState};

/// Contact side, named from the thumb's starting face of the object.
/// `Near` is the face the thumb starts on (local -x), `Far` the opposite
/// face. Assigned from the contact normal in the object frame, so labels
/// stay attached to the object as it rotates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SideLabel {
    Near,
    Far,
    Top,
    None,
}

impl SideLabel {
    pub fn opposite(self) -> SideLabel {
        match self {
            SideLabel::Near => SideLabel::Far,
            SideLabel::Far => SideLabel::Near,
            other => other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SideLabel::Near => "NEAR",
            SideLabel::Far => "FAR",
            SideLabel::Top => "TOP",
            SideLabel::None => "NONE",
        }
    }
}

impl std::fmt::Display for SideLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Classify a contact normal given in the object frame. A dominant vertical
/// component maps to `Top` (bottom contacts share the label; they do not
/// occur in practice); otherwise the sign of the depth-axis component picks
/// the face.
pub fn side_from_normal_local(n: &Vector3<f64>) -> SideLabel {
    if n.z.abs() >= n.x.abs() && n.z.abs() >= n.y.abs() {
        SideLabel::Top
    } else if n.x < 0.0 {
        SideLabel::Near
    } else {
        SideLabel::Far
    }
}

/// Per-finger side assignment; `None` exactly when the finger is not in
/// contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContactStateDescriptor {
    pub sides: [SideLabel; 4],
}

impl ContactStateDescriptor {
    pub fn new(sides: [SideLabel; 4]) -> Self {
        Self { sides }
    }

    pub fn side(&self, id: FingerId) -> SideLabel {
        self.sides[id.index()]
    }

    pub fn in_contact(&self, id: FingerId) -> bool {
        self.side(id) != SideLabel::None
    }

    pub fn contact_count(&self) -> usize {
        FingerId::ALL.iter().filter(|&&f| self.in_contact(f)).count()
    }

    pub fn with_side(&self, id: FingerId, side: SideLabel) -> Self {
        let mut sides = self.sides;
        sides[id.index()] = side;
        Self { sides }
    }
}

impl std::fmt::Display for ContactStateDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for id in FingerId::ALL {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{}:{}", id, self.side(id))?;
            first = false;
        }
        Ok(())
    }
}

/// Stability summary of a world state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub contact_count: usize,
    pub closure_margin: f64,
    pub prehensile: bool,
}

impl StabilityReport {
    /// Stable: prehensile closure with at least three fingers in contact.
    pub fn stable(&self) -> bool {
        self.prehensile && self.contact_count >= 3
    }
}

/// Ordering verdict; `Indeterminate` when fewer than three fingers contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderingVerdict {
    Satisfied,
    Violated,
    Indeterminate,
}

/// Deterministic per-finger labeling from the world's contact records. A
/// finger with multiple records takes the record with the largest force
/// (falling back to penetration when forces are unset).
pub fn classify(world: &WorldState) -> ContactStateDescriptor {
    let mut sides = [SideLabel::None; 4];
    for id in FingerId::ALL {
        let mut best: Option<&ContactRecord> = None;
        for c in world.contacts.iter().filter(|c| c.finger == id) {
            let better = match best {
                Option::None => true,
                Some(b) => {
                    let (f, bf) = (c.force.norm(), b.force.norm());
                    if (f - bf).abs() > 1e-12 {
                        f > bf
                    } else {
                        c.penetration > b.penetration
                    }
                }
            };
            if better {
                best = Some(c);
            }
        }
        if let Some(c) = best {
            let n_local = world.object.rot.inverse_transform_vector(&c.normal);
            sides[id.index()] = side_from_normal_local(&n_local);
        }
    }
    ContactStateDescriptor::new(sides)
}

/// Primitive contact wrenches for a friction pyramid with `m_edges` edges.
/// Forces are unit vectors inside the cone about the inward normal; torques
/// are scaled by `1/rho`. Everything is expressed in a frame derived from
/// the contact set itself so the result is equivariant under rigid rotation.
pub fn wrench_points(
    contacts: &[ContactRecord],
    mu: f64,
    m_edges: usize,
    center: &Vector3<f64>,
    rho: f64,
) -> Vec<SVector<f64, 6>> {
    let basis = canonical_frame(contacts, center);
    let mut out = Vec::with_capacity(contacts.len() * m_edges);
    for c in contacts {
        let n = to_frame(&basis, &c.normal);
        let r = to_frame(&basis, &(c.point - center));
        // tangent basis in the canonical frame
        let helper = if n.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let u = (helper - n * helper.dot(&n)).normalize();
        let v = n.cross(&u);
        for k in 0..m_edges {
            let phi = std::f64::consts::TAU * k as f64 / m_edges as f64;
            let t = u * phi.cos() + v * phi.sin();
            let f = (-n + mu * t).normalize();
            let tau = r.cross(&f) / rho;
            let mut w = SVector::<f64, 6>::zeros();
            w.fixed_rows_mut::<3>(0).copy_from(&f);
            w.fixed_rows_mut::<3>(3).copy_from(&tau);
            out.push(w);
        }
    }
    out
}

/// Orthonormal frame built covariantly from the contact set: first normal,
/// then the first direction (normal or lever arm) with an independent
/// component, completed by a cross product.
fn canonical_frame(contacts: &[ContactRecord], center: &Vector3<f64>) -> [Vector3<f64>; 3] {
    let e1 = contacts
        .first()
        .map(|c| c.normal.normalize())
        .unwrap_or_else(Vector3::x);
    let mut candidates: Vec<Vector3<f64>> = Vec::new();
    for c in contacts.iter().skip(1) {
        candidates.push(c.normal);
    }
    for c in contacts {
        candidates.push(c.point - center);
    }
    candidates.push(Vector3::z());
    candidates.push(Vector3::x());
    candidates.push(Vector3::y());
    let mut e2 = Vector3::zeros();
    for cand in candidates {
        let r = cand - e1 * e1.dot(&cand);
        if r.norm() > 1e-8 {
            e2 = r.normalize();
            break;
        }
    }
    let e3 = e1.cross(&e2);
    [e1, e2, e3]
}

fn to_frame(basis: &[Vector3<f64>; 3], v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(basis[0].dot(v), basis[1].dot(v), basis[2].dot(v))
}

/// Ferrari-Canny force-closure margin: radius of the largest origin-centered
/// ball inside the convex hull of the primitive wrenches; when the origin
/// lies outside the hull, the negated distance to it. Degenerate (rank
/// deficient) wrench sets report a non-positive margin. Clamped to >= -1.
pub fn force_closure_margin(
    contacts: &[ContactRecord],
    mu: f64,
    m_edges: usize,
    center: &Vector3<f64>,
    rho: f64,
) -> f64 {
    assert!(mu > 0.0, "friction coefficient must be positive");
    if contacts.is_empty() {
        return -1.0;
    }
    let points = wrench_points(contacts, mu, m_edges, center, rho);
    let dist = mnp::distance_to_hull(&points);
    if dist > 1e-6 {
        return (-dist).max(-1.0);
    }
    // near-zero distances are ambiguous (the minimum-norm-point iteration
    // can stall at ~1e-8 with the origin well inside); the facet offsets
    // decide the sign robustly
    match hull::convex_hull_facets(&points) {
        Ok(facets) => hull::inscribed_radius(&facets).max(-1.0),
        Err(hull::HullError::RankDeficient) => 0.0,
    }
}

pub const DEFAULT_M_EDGES: usize = 8;

/// Stability test: closure margin over the world's current contacts.
pub fn is_stable(world: &WorldState) -> StabilityReport {
    let descriptor = classify(world);
    let contact_count = descriptor.contact_count();
    if world.contacts.is_empty() {
        return StabilityReport {
            contact_count,
            closure_margin: -1.0,
            prehensile: false,
        };
    }
    let margin = force_closure_margin(
        &world.contacts,
        world.mu,
        DEFAULT_M_EDGES,
        &world.object.pos,
        world.shape.max_half_extent(),
    );
    StabilityReport {
        contact_count,
        closure_margin: margin,
        prehensile: margin > 0.0,
    }
}

/// Clockwise ordering check: the polar angles of the contacting fingertips
/// around the object center must follow thumb, index, middle, ring when
/// walked clockwise. Fewer than three contacting fingers is indeterminate.
pub fn manipulability_ok(world: &WorldState) -> OrderingVerdict {
    let descriptor = classify(world);
    let tips = world.fingertips();
    let mut angles = Vec::new();
    for id in FingerId::ALL {
        if descriptor.in_contact(id) {
            let d = tips[id.index()].tip - world.object.pos;
            angles.push(d.y.atan2(d.x));
        }
    }
    if angles.len() < 3 {
        return OrderingVerdict::Indeterminate;
    }
    // sum of clockwise gaps around the cycle is exactly one turn iff the
    // cyclic order matches
    let mut total = 0.0;
    for i in 0..angles.len() {
        let a = angles[i];
        let b = angles[(i + 1) % angles.len()];
        let mut gap = a - b;
        while gap < 0.0 {
            gap += std::f64::consts::TAU;
        }
        while gap >= std::f64::consts::TAU {
            gap -= std::f64::consts::TAU;
        }
        total += gap;
    }
    if (total - std::f64::consts::TAU).abs() < 1e-9 {
        OrderingVerdict::Satisfied
    } else {
        OrderingVerdict::Violated
    }
}

/// All four fingers in contact, stable, and correctly ordered.
pub fn is_most_stable(world: &WorldState) -> bool {
    let descriptor = classify(world);
    descriptor.contact_count() == 4
        && is_stable(world).stable()
        && manipulability_ok(world) == OrderingVerdict::Satisfied
}
