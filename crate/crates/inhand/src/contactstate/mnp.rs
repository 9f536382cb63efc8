//! Wolfe's minimum-norm-point algorithm over the convex hull of a finite
//! point set. Provides the distance from the origin to the hull, which is
//! the (negated) closure margin when the origin lies outside the grasp
//! wrench space.

use nalgebra::{DMatrix, DVector, SVector};

const DIM: usize = 6;
type Point = SVector<f64, DIM>;

/// Minimum-norm point in `conv(points)`. Returns the point and its norm.
pub fn min_norm_point(points: &[Point]) -> (Point, f64) {
    assert!(!points.is_empty());
    let scale = points
        .iter()
        .map(|p| p.norm())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let tol = 1e-13 * scale * scale;

    // start from the smallest-norm input point
    let start = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    let mut corral: Vec<usize> = vec![start];
    let mut lambda: Vec<f64> = vec![1.0];
    let mut x = points[start];

    for _ in 0..10_000 {
        // optimality: min_j x . p_j >= x . x  (within tolerance)
        let (jmin, dmin) = points
            .iter()
            .enumerate()
            .map(|(j, p)| (j, x.dot(p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if dmin >= x.norm_squared() - tol {
            break;
        }
        if !corral.contains(&jmin) {
            corral.push(jmin);
            lambda.push(0.0);
        }

        // minor cycle: project onto the affine hull of the corral, shrinking
        // it until the affine minimizer is a convex combination
        loop {
            let m = corral.len();
            // solve [[0 1^T][1 G]] [t; a] = [1; 0]
            let mut sys = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut rhs = DVector::<f64>::zeros(m + 1);
            rhs[0] = 1.0;
            for i in 0..m {
                sys[(0, i + 1)] = 1.0;
                sys[(i + 1, 0)] = 1.0;
                for j in 0..m {
                    sys[(i + 1, j + 1)] = points[corral[i]].dot(&points[corral[j]]);
                }
            }
            let sol = match sys.lu().solve(&rhs) {
                Some(s) => s,
                None => {
                    // degenerate corral: drop the smallest-weight member
                    let (drop, _) = lambda
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap();
                    corral.swap_remove(drop);
                    lambda.swap_remove(drop);
                    if corral.is_empty() {
                        return (Point::zeros(), 0.0);
                    }
                    continue;
                }
            };
            let alpha: Vec<f64> = (0..m).map(|i| sol[i + 1]).collect();
            let eps = 1e-12;
            if alpha.iter().all(|&a| a > eps) {
                lambda = alpha;
                x = combine(points, &corral, &lambda);
                break;
            }
            // line search from lambda toward alpha staying in the simplex
            let mut theta = 1.0f64;
            for i in 0..m {
                if alpha[i] <= eps {
                    let denom = lambda[i] - alpha[i];
                    if denom > 1e-300 {
                        theta = theta.min(lambda[i] / denom);
                    }
                }
            }
            for i in 0..m {
                lambda[i] = (1.0 - theta) * lambda[i] + theta * alpha[i];
            }
            // drop members that hit zero
            let mut i = 0;
            while i < corral.len() {
                if lambda[i] <= eps {
                    corral.swap_remove(i);
                    lambda.swap_remove(i);
                } else {
                    i += 1;
                }
            }
            let total: f64 = lambda.iter().sum();
            for l in lambda.iter_mut() {
                *l /= total;
            }
        }
    }
    (x, x.norm())
}

fn combine(points: &[Point], corral: &[usize], lambda: &[f64]) -> Point {
    let mut x = Point::zeros();
    for (&i, &l) in corral.iter().zip(lambda) {
        x += l * points[i];
    }
    x
}

/// Distance from the origin to `conv(points)`; zero when the origin is
/// inside the hull.
pub fn distance_to_hull(points: &[Point]) -> f64 {
    min_norm_point(points).1
}
