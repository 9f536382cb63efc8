//! Superquadric object model.
//!
//! All simulation and reward queries against the object go through this
//! module: inside/outside tests, radial surface distance, outward normals,
//! top-surface and footprint queries, and shape randomization.
//!
//! The implicit function used here is positively homogeneous of degree one
//! in the local point, so the surface point along a ray from the center is
//! simply `p / F(p)` and radial distances are exact.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{InhandError, Result};

/// Lower clamp for both shape exponents. At or below this value the vertical
/// profile is treated as an extruded prism with flat top and bottom faces.
pub const EPS_MIN: f64 = 0.05;

/// Superquadric solid. `depth`, `width`, `height` are full extents along the
/// local x, y, z axes; `eps1` controls the vertical profile and `eps2` the
/// horizontal cross-section (box-like near 0, elliptical at 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Superquadric {
    pub depth: f64,
    pub width: f64,
    pub height: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Superquadric {
    /// Build a shape, clamping the exponents into `[EPS_MIN, 1]`.
    pub fn new(depth: f64, width: f64, height: f64, eps1: f64, eps2: f64) -> Result<Self> {
        if !(depth > 0.0 && width > 0.0 && height > 0.0) {
            return Err(InhandError::Config(format!(
                "superquadric extents must be positive, got {depth} x {width} x {height}"
            )));
        }
        if !(depth.is_finite() && width.is_finite() && height.is_finite()) {
            return Err(InhandError::Config("superquadric extents must be finite".into()));
        }
        Ok(Self {
            depth,
            width,
            height,
            eps1: eps1.clamp(EPS_MIN, 1.0),
            eps2: eps2.clamp(EPS_MIN, 1.0),
        })
    }

    /// Prism mode: flat top/bottom faces with a superellipse cross-section.
    pub fn is_prism(&self) -> bool {
        self.eps1 <= EPS_MIN
    }

    #[inline]
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.depth / 2.0, self.width / 2.0, self.height / 2.0)
    }

    /// Largest half extent; used as the torque normalization length.
    pub fn max_half_extent(&self) -> f64 {
        (self.depth.max(self.width).max(self.height)) / 2.0
    }

    /// Cross-section value `g(x, y)`: the `2/eps2`-norm of the scaled
    /// horizontal coordinates. `g = 1` on the cross-section boundary and the
    /// function is homogeneous of degree one.
    fn cross_section(&self, x: f64, y: f64) -> f64 {
        let u = (x / (self.depth / 2.0)).abs();
        let v = (y / (self.width / 2.0)).abs();
        let m = 2.0 / self.eps2;
        (u.powf(m) + v.powf(m)).powf(1.0 / m)
    }

    /// Inside-outside function: `< 1` inside, `= 1` on the surface, `> 1`
    /// outside. Homogeneous of degree one in `p_local`.
    pub fn implicit_value(&self, p_local: &Vector3<f64>) -> f64 {
        let g = self.cross_section(p_local.x, p_local.y);
        let w = (p_local.z / (self.height / 2.0)).abs();
        if self.is_prism() {
            g.max(w)
        } else {
            let gq = g.powf(2.0 / self.eps1);
            let wq = w.powf(2.0 / self.eps1);
            (gq + wq).powf(self.eps1 / 2.0)
        }
    }

    /// Signed distance along the ray from the center through `p_local` to the
    /// surface: negative inside, positive outside, zero on the surface.
    pub fn radial_surface_distance(&self, p_local: &Vector3<f64>) -> Result<f64> {
        let r = p_local.norm();
        if r < 1e-12 {
            return Err(InhandError::DegenerateRay);
        }
        let f = self.implicit_value(p_local);
        Ok(r * (1.0 - 1.0 / f))
    }

    /// Signed surface distance measured along the local surface normal:
    /// the radial surface point is found first and `p - sp` is projected
    /// onto the outward normal there. Exact on flat prism faces (where the
    /// radial measure overstates the gap for off-axis points); first-order
    /// accurate on curved regions. Negative inside, positive outside.
    pub fn face_distance(&self, p_local: &Vector3<f64>) -> Result<f64> {
        let sp = self.radial_surface_point(p_local)?;
        let n = self.surface_normal(&sp);
        Ok((p_local - sp).dot(&n))
    }

    /// Surface point hit by the ray from the center through `p_local`.
    pub fn radial_surface_point(&self, p_local: &Vector3<f64>) -> Result<Vector3<f64>> {
        let r = p_local.norm();
        if r < 1e-12 {
            return Err(InhandError::DegenerateRay);
        }
        let f = self.implicit_value(p_local);
        Ok(p_local / f)
    }

    /// Gradient of the cross-section value in the horizontal plane.
    fn cross_section_grad(&self, x: f64, y: f64) -> Vector2<f64> {
        let ax = self.depth / 2.0;
        let ay = self.width / 2.0;
        let u = (x / ax).abs();
        let v = (y / ay).abs();
        let m = 2.0 / self.eps2;
        let s = u.powf(m) + v.powf(m);
        if s < 1e-300 {
            return Vector2::zeros();
        }
        let c = s.powf(1.0 / m - 1.0);
        Vector2::new(
            c * u.powf(m - 1.0) * x.signum() / ax,
            c * v.powf(m - 1.0) * y.signum() / ay,
        )
    }

    /// Outward unit normal at a point close to the surface.
    ///
    /// Prism faces are handled analytically. On prism edges (side and top
    /// faces within `1e-9` of each other) the tie-break picks the candidate
    /// normal with the larger component along the radial direction, i.e. the
    /// face better able to resolve a radial penetration.
    pub fn surface_normal(&self, p_surface: &Vector3<f64>) -> Vector3<f64> {
        let az = self.height / 2.0;
        if self.is_prism() {
            let g = self.cross_section(p_surface.x, p_surface.y);
            let w = (p_surface.z / az).abs();
            let top = Vector3::new(0.0, 0.0, p_surface.z.signum());
            let grad = self.cross_section_grad(p_surface.x, p_surface.y);
            let side = if grad.norm() > 1e-300 {
                let n = grad / grad.norm();
                Vector3::new(n.x, n.y, 0.0)
            } else {
                // degenerate vertical axis point; only the flat faces apply
                return top;
            };
            let d = g - w;
            if d > 1e-9 {
                side
            } else if d < -1e-9 {
                top
            } else {
                let radial = p_surface / p_surface.norm().max(1e-12);
                if side.dot(&radial) >= top.dot(&radial) {
                    side
                } else {
                    top
                }
            }
        } else {
            let g = self.cross_section(p_surface.x, p_surface.y);
            let w = (p_surface.z / az).abs();
            if g < 1e-12 {
                return Vector3::new(0.0, 0.0, p_surface.z.signum());
            }
            let e1 = self.eps1;
            let t = g.powf(2.0 / e1) + w.powf(2.0 / e1);
            let tc = t.powf(e1 / 2.0 - 1.0);
            let grad_g = self.cross_section_grad(p_surface.x, p_surface.y);
            let cg = tc * g.powf(2.0 / e1 - 1.0);
            let gz = tc * w.powf(2.0 / e1 - 1.0) * p_surface.z.signum() / az;
            let grad = Vector3::new(cg * grad_g.x, cg * grad_g.y, gz);
            let n = grad.norm();
            if n > 1e-300 {
                grad / n
            } else {
                Vector3::new(0.0, 0.0, 1.0)
            }
        }
    }

    /// Height of the top face above the object center, in the object frame.
    pub fn top_height(&self) -> f64 {
        self.height / 2.0
    }

    /// Whether `xy` lies inside (or on the boundary of) the horizontal
    /// cross-section. Boundary points are contained.
    pub fn footprint_contains(&self, xy: &Vector2<f64>) -> bool {
        self.cross_section(xy.x, xy.y) <= 1.0 + 1e-12
    }
}

/// Discrete shape randomization table. The default values are the desk-scale
/// object family: three depths, fixed width and height, a box-like vertical
/// profile, and three cross-section exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRandomizationTable {
    pub depth_choices: Vec<f64>,
    pub width: f64,
    pub height: f64,
    pub eps1_choices: Vec<f64>,
    pub eps2_choices: Vec<f64>,
}

impl Default for ShapeRandomizationTable {
    fn default() -> Self {
        Self {
            depth_choices: vec![0.02, 0.0275, 0.035],
            width: 0.11,
            height: 0.1,
            eps1_choices: vec![0.0],
            eps2_choices: vec![0.0, 0.5, 1.0],
        }
    }
}

impl ShapeRandomizationTable {
    pub fn validate(&self) -> Result<()> {
        if self.depth_choices.is_empty()
            || self.eps1_choices.is_empty()
            || self.eps2_choices.is_empty()
        {
            return Err(InhandError::Config("shape table has an empty choice list".into()));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(InhandError::Config("shape table width/height must be positive".into()));
        }
        for &d in &self.depth_choices {
            if !(d > 0.0) {
                return Err(InhandError::Config(format!("shape table depth {d} must be positive")));
            }
        }
        Ok(())
    }
}

/// Uniform draw over the cross product of the table's choice lists.
pub fn sample_shape<R: Rng>(rng: &mut R, table: &ShapeRandomizationTable) -> Result<Superquadric> {
    table.validate()?;
    let depth = table.depth_choices[rng.gen_range(0..table.depth_choices.len())];
    let eps1 = table.eps1_choices[rng.gen_range(0..table.eps1_choices.len())];
    let eps2 = table.eps2_choices[rng.gen_range(0..table.eps2_choices.len())];
    Superquadric::new(depth, table.width, table.height, eps1, eps2)
}
