//! Incremental convex hull in 6 dimensions.
//!
//! Used to compute the inscribed-ball radius of the grasp wrench space:
//! the hull of the primitive contact wrenches is built facet by facet and
//! the margin is the smallest facet offset from the origin.
//!
//! Inputs are deterministically joggled by a tiny amount so that facets are
//! simplicial; the perturbation is orders of magnitude below the 1e-9
//! tolerances used by callers.

use nalgebra::{DMatrix, SMatrix, SVector};

pub const DIM: usize = 6;

type Point = SVector<f64, DIM>;

#[derive(Debug, Clone)]
struct Facet {
    vertices: [usize; DIM],
    normal: Point,
    offset: f64,
}

/// Convex hull facets as oriented hyperplanes `normal . x <= offset`.
#[derive(Debug, Clone)]
pub struct HullFacets {
    pub planes: Vec<(SVector<f64, DIM>, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HullError {
    /// The points do not span all 6 dimensions.
    RankDeficient,
}

/// Deterministic joggle derived from the point index; keeps the hull build
/// in general position without breaking reproducibility.
fn joggle(points: &[Point], scale: f64) -> Vec<Point> {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    points
        .iter()
        .map(|p| {
            let mut q = *p;
            for k in 0..DIM {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let u = (state >> 11) as f64 / (1u64 << 53) as f64; // [0, 1)
                q[k] += scale * (2.0 * u - 1.0);
            }
            q
        })
        .collect()
}

/// Hyperplane through `DIM` points, oriented away from `interior`.
/// Returns `None` when the points are affinely degenerate.
fn facet_plane(points: &[Point], vertices: &[usize; DIM], interior: &Point) -> Option<(Point, f64)> {
    let v0 = points[vertices[0]];
    let mut m = SMatrix::<f64, DIM, DIM>::zeros();
    for i in 1..DIM {
        let d = points[vertices[i]] - v0;
        m.row_mut(i - 1).copy_from(&d.transpose());
    }
    // last row pins the normalization; pick the direction from the interior
    let probe = v0 - interior;
    m.row_mut(DIM - 1).copy_from(&probe.transpose());
    let mut rhs = SVector::<f64, DIM>::zeros();
    rhs[DIM - 1] = 1.0;
    let n = match m.lu().solve(&rhs) {
        Some(n) => n,
        None => {
            // fall back to a least-squares nullspace via SVD of the difference rows
            let mut a = DMatrix::<f64>::zeros(DIM - 1, DIM);
            for i in 1..DIM {
                for k in 0..DIM {
                    a[(i - 1, k)] = points[vertices[i]][k] - v0[k];
                }
            }
            let svd = a.svd(false, true);
            let vt = svd.v_t.as_ref()?;
            let row = vt.row(DIM - 1);
            let mut n = Point::zeros();
            for k in 0..DIM {
                n[k] = row[k];
            }
            n
        }
    };
    let norm = n.norm();
    if !(norm > 1e-300) || !norm.is_finite() {
        return None;
    }
    let mut n = n / norm;
    let mut b = n.dot(&v0);
    let side = n.dot(interior) - b;
    if side > 0.0 {
        n = -n;
        b = -b;
    } else if side == 0.0 {
        return None;
    }
    Some((n, b))
}

/// Greedy selection of `DIM + 1` affinely independent seed points; `None`
/// when the set's affine span is thinner than `min_extent` in some
/// direction.
fn initial_simplex(points: &[Point], min_extent: f64) -> Option<Vec<usize>> {
    let n = points.len();
    if n < DIM + 1 {
        return None;
    }
    let mut chosen = vec![0usize];
    // orthonormal basis of the current affine span
    let mut basis: Vec<Point> = Vec::new();
    while chosen.len() < DIM + 1 {
        let origin = points[chosen[0]];
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let mut r = p - origin;
            for b in &basis {
                r -= b.dot(&r) * b;
            }
            let d = r.norm();
            if best.map_or(true, |(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (idx, dist) = best?;
        if dist < min_extent {
            return None;
        }
        let origin = points[chosen[0]];
        let mut r = points[idx] - origin;
        for b in &basis {
            r -= b.dot(&r) * b;
        }
        basis.push(r / r.norm());
        chosen.push(idx);
    }
    Some(chosen)
}

/// Build the convex hull of `input` (joggled copies) and return its facet
/// planes. `scale` sets the joggle magnitude relative to the data spread.
pub fn convex_hull_facets(input: &[SVector<f64, DIM>]) -> Result<HullFacets, HullError> {
    let spread = input
        .iter()
        .map(|p| p.amax())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    // rank test on the raw input: the joggle would otherwise mask genuine
    // degeneracy
    initial_simplex(input, spread * 1e-9).ok_or(HullError::RankDeficient)?;
    let points = joggle(input, spread * 1e-7);

    let seed = initial_simplex(&points, spread * 1e-9).ok_or(HullError::RankDeficient)?;
    let mut interior = Point::zeros();
    for &i in &seed {
        interior += points[i];
    }
    interior /= (DIM + 1) as f64;

    let mut facets: Vec<Facet> = Vec::new();
    for skip in 0..seed.len() {
        let mut verts = [0usize; DIM];
        let mut k = 0;
        for (j, &v) in seed.iter().enumerate() {
            if j != skip {
                verts[k] = v;
                k += 1;
            }
        }
        let (normal, offset) =
            facet_plane(&points, &verts, &interior).ok_or(HullError::RankDeficient)?;
        facets.push(Facet {
            vertices: verts,
            normal,
            offset,
        });
    }

    let tol = spread * 1e-13;
    for idx in 0..points.len() {
        if seed.contains(&idx) {
            continue;
        }
        let p = points[idx];
        let visible: Vec<usize> = facets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.normal.dot(&p) > f.offset + tol)
            .map(|(i, _)| i)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // horizon ridges: ridges of visible facets that appear exactly once
        use std::collections::HashMap;
        let mut ridges: HashMap<[usize; DIM - 1], usize> = HashMap::new();
        for &fi in &visible {
            let verts = facets[fi].vertices;
            for skip in 0..DIM {
                let mut ridge = [0usize; DIM - 1];
                let mut k = 0;
                for (j, &v) in verts.iter().enumerate() {
                    if j != skip {
                        ridge[k] = v;
                        k += 1;
                    }
                }
                ridge.sort_unstable();
                *ridges.entry(ridge).or_insert(0) += 1;
            }
        }
        let mut new_facets = Vec::new();
        for (ridge, count) in &ridges {
            if *count != 1 {
                continue;
            }
            let mut verts = [0usize; DIM];
            verts[..DIM - 1].copy_from_slice(ridge);
            verts[DIM - 1] = idx;
            if let Some((normal, offset)) = facet_plane(&points, &verts, &interior) {
                new_facets.push(Facet {
                    vertices: verts,
                    normal,
                    offset,
                });
            }
        }
        let mut keep = Vec::with_capacity(facets.len() - visible.len() + new_facets.len());
        for (i, f) in facets.into_iter().enumerate() {
            if !visible.contains(&i) {
                keep.push(f);
            }
        }
        keep.extend(new_facets);
        facets = keep;
    }

    // refit every plane to the unjoggled coordinates: exact for flat faces
    // that the joggle had triangulated into slivers. The refit collapses
    // those slivers onto a shared plane, so deduplicate.
    use std::collections::HashSet;
    let mut seen: HashSet<[i64; DIM + 1]> = HashSet::new();
    let mut planes = Vec::new();
    for f in &facets {
        let (mut n, mut b) = refit_plane(input, &f.vertices, &f.normal);
        // a degenerate vertex set can leave the refit plane tilted into the
        // hull interior; a genuine facet plane supports the whole set
        if support(input, &n) > b + spread * 1e-9 {
            n = f.normal;
            b = support(input, &n);
        }
        let mut key = [0i64; DIM + 1];
        for k in 0..DIM {
            key[k] = (n[k] / 1e-9).round() as i64;
        }
        key[DIM] = (b / 1e-9).round() as i64;
        if seen.insert(key) {
            planes.push((n, b));
        }
    }
    Ok(HullFacets { planes })
}

/// Plane through the original (unjoggled) coordinates of a facet's
/// vertices. The nullspace of the vertex differences gives candidate
/// normals; the one closest to the joggled-build normal is chosen so that
/// orientation and degenerate (affinely dependent) vertex sets are handled
/// uniformly.
fn refit_plane(original: &[Point], vertices: &[usize; DIM], approx_n: &Point) -> (Point, f64) {
    let v0 = original[vertices[0]];
    let mut a = DMatrix::<f64>::zeros(DIM, DIM);
    let mut scale = 0.0f64;
    for i in 1..DIM {
        for k in 0..DIM {
            a[(i - 1, k)] = original[vertices[i]][k] - v0[k];
            scale = scale.max(a[(i - 1, k)].abs());
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("svd of square matrix always yields v_t");
    // project the approximate normal onto the nullspace of the differences
    let tol = scale.max(1e-300) * 1e-9;
    let mut n = Point::zeros();
    for r in 0..DIM {
        if r >= svd.singular_values.len() || svd.singular_values[r] <= tol {
            let mut basis = Point::zeros();
            for k in 0..DIM {
                basis[k] = vt[(r, k)];
            }
            n += basis.dot(approx_n) * basis;
        }
    }
    if n.norm() < 1e-9 {
        n = *approx_n; // nullspace estimate unusable; keep the build normal
    }
    n /= n.norm();
    if n.dot(approx_n) < 0.0 {
        n = -n;
    }
    let b = vertices
        .iter()
        .map(|&v| n.dot(&original[v]))
        .fold(f64::NEG_INFINITY, f64::max);
    (n, b)
}

/// Radius of the largest origin-centered ball inside the hull: the minimum
/// facet offset. Negative when the origin is outside some facet plane.
pub fn inscribed_radius(facets: &HullFacets) -> f64 {
    facets
        .planes
        .iter()
        .map(|&(_, b)| b)
        .fold(f64::INFINITY, f64::min)
}

#[allow(dead_code)]
pub fn contains(facets: &HullFacets, p: &SVector<f64, DIM>, tol: f64) -> bool {
    facets.planes.iter().all(|(n, b)| n.dot(p) <= b + tol)
}

/// Support function of a point cloud: used to cross-check hull facets.
#[allow(dead_code)]
pub fn support(points: &[SVector<f64, DIM>], dir: &SVector<f64, DIM>) -> f64 {
    points
        .iter()
        .map(|p| p.dot(dir))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_point(rng: &mut ChaCha8Rng) -> Point {
        Point::from_fn(|_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn cross_polytope_inscribed_radius() {
        // +-e_i hull: facets are x . s = 1/sqrt(6) planes, inscribed radius 1/sqrt(6)
        let mut pts = Vec::new();
        for k in 0..DIM {
            let mut p = Point::zeros();
            p[k] = 1.0;
            pts.push(p);
            p[k] = -1.0;
            pts.push(p);
        }
        let hull = convex_hull_facets(&pts).unwrap();
        let r = inscribed_radius(&hull);
        assert!((r - 1.0 / (DIM as f64).sqrt()).abs() < 1e-9, "r = {r}");
        assert_eq!(hull.planes.len(), 64);
    }

    #[test]
    fn hypercube_inscribed_radius() {
        let mut pts = Vec::new();
        for mask in 0..(1u32 << DIM) {
            let p = Point::from_fn(|k, _| if mask >> k & 1 == 1 { 1.0 } else { -1.0 });
            pts.push(p);
        }
        let hull = convex_hull_facets(&pts).unwrap();
        let r = inscribed_radius(&hull);
        assert!((r - 1.0).abs() < 1e-9, "r = {r}");
        // all 12 axis-aligned face planes must appear among the facets
        for k in 0..DIM {
            for sign in [1.0, -1.0] {
                let mut axis = Point::zeros();
                axis[k] = sign;
                let found = hull.planes.iter().any(|(n, b)| {
                    (n - axis).norm() < 1e-9 && (b - 1.0).abs() < 1e-9
                });
                assert!(found, "face plane {k}/{sign} missing");
            }
        }
    }

    #[test]
    fn rank_deficient_detected() {
        // points confined to a hyperplane
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point> = (0..20)
            .map(|_| {
                let mut p = rand_point(&mut rng);
                p[5] = 0.0;
                p
            })
            .collect();
        assert!(matches!(convex_hull_facets(&pts), Err(HullError::RankDeficient)));
    }

    #[test]
    fn facets_match_support_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let pts: Vec<Point> = (0..24).map(|_| rand_point(&mut rng)).collect();
            let hull = convex_hull_facets(&pts).unwrap();
            // every input point is inside every facet plane
            for p in &pts {
                for (n, b) in &hull.planes {
                    assert!(n.dot(p) <= b + 1e-8, "point escapes facet");
                }
            }
            // every facet plane is supporting: support function equals offset
            for (n, b) in &hull.planes {
                let s = support(&pts, n);
                assert!((s - b).abs() < 1e-8, "facet not supporting: {s} vs {b}");
            }
        }
    }

    #[test]
    fn inscribed_radius_matches_sampled_support_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point> = (0..20).map(|_| rand_point(&mut rng)).collect();
        let hull = convex_hull_facets(&pts).unwrap();
        let r = inscribed_radius(&hull);
        // sampled directions can only overestimate the true minimum support
        let mut sampled = f64::INFINITY;
        for _ in 0..20_000 {
            let mut d = rand_point(&mut rng);
            if d.norm() < 1e-9 {
                continue;
            }
            d /= d.norm();
            sampled = sampled.min(support(&pts, &d));
        }
        assert!(r <= sampled + 1e-9, "r = {r}, sampled min = {sampled}");
        assert!(sampled - r < 0.35 * r.abs().max(0.1), "sampling far from facet min");
    }
}
