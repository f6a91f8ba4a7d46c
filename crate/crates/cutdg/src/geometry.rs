//! Level-set surfaces, closest-point projection and manufactured solutions.
//!
//! A surface is the zero set of a smooth scalar function `phi` with
//! non-vanishing gradient near the surface. The unit normal is
//! `n = grad(phi)/|grad(phi)|`, the tangential projector `P = I - n n^T`,
//! and surface data is extended off the surface by pulling back along the
//! closest-point projection `p(x)`.
//!
//! The right-hand side of the manufactured problems is evaluated from
//! analytic derivatives through
//!
//! ```text
//! lap_G u = lap u - n . (hess u) n - tr(grad n) (grad u . n)
//! tr(grad n) = (lap phi - n . (hess phi) n) / |grad phi|
//! ```

use nalgebra::{Matrix3, Point3, Vector3};
use std::sync::Arc;
use thiserror::Error;

/// Default tolerance for the closest-point iteration.
pub const PROJECTION_TOL: f64 = 1e-12;
/// Default iteration cap for the closest-point iteration.
pub const PROJECTION_MAX_ITER: usize = 100;
/// Gradient norms below this are treated as degenerate geometry.
const MIN_GRADIENT_NORM: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("level-set gradient vanishes at ({0:.6}, {1:.6}, {2:.6})")]
    DegenerateGradient(f64, f64, f64),
    #[error(
        "closest-point iteration stalled after {iters} iterations at \
         ({x:.6}, {y:.6}, {z:.6}): |phi| residual {residual:e}"
    )]
    ProjectionDiverged {
        iters: usize,
        residual: f64,
        x: f64,
        y: f64,
        z: f64,
    },
}

/// Which Laplace-Beltrami problem the right-hand side belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemVariant {
    /// `-lap_G u + u = f`; the zero-order term makes the problem
    /// unconstrained.
    Reaction,
    /// `-lap_G u = f`; well posed only on the zero-mean subspace.
    Pure,
}

/// Smooth scalar field defining a surface as its zero set.
///
/// Implementations provide hand-coded analytic derivatives; the Hessian
/// must be symmetric.
pub trait LevelSet: Send + Sync {
    fn value(&self, x: &Point3<f64>) -> f64;
    fn gradient(&self, x: &Point3<f64>) -> Vector3<f64>;
    fn hessian(&self, x: &Point3<f64>) -> Matrix3<f64>;
}

/// Smooth extension of a surface solution, with analytic derivatives.
pub trait ManufacturedSolution: Send + Sync {
    fn value(&self, x: &Point3<f64>) -> f64;
    fn gradient(&self, x: &Point3<f64>) -> Vector3<f64>;
    fn hessian(&self, x: &Point3<f64>) -> Matrix3<f64>;
}

/// A level set paired with a manufactured solution and the box it lives in.
#[derive(Clone)]
pub struct TestCase {
    pub name: &'static str,
    pub level_set: Arc<dyn LevelSet>,
    pub solution: Arc<dyn ManufacturedSolution>,
    /// Half-width `a` of the computational box `[-a, a]^3`.
    pub bounding_halfwidth: f64,
}

/// Unit sphere `x^2 + y^2 + z^2 - 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SphereLevelSet;

impl LevelSet for SphereLevelSet {
    fn value(&self, x: &Point3<f64>) -> f64 {
        x.coords.norm_squared() - 1.0
    }

    fn gradient(&self, x: &Point3<f64>) -> Vector3<f64> {
        2.0 * x.coords
    }

    fn hessian(&self, _x: &Point3<f64>) -> Matrix3<f64> {
        2.0 * Matrix3::identity()
    }
}

/// Orthocircle-style surface
/// `(x^2-1)^2 + (y^2-1)^2 + (z^2-1)^2 + (x^2+y^2-4)^2 + (x^2+z^2-4)^2
///  + (y^2+z^2-4)^2 - 16`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrthocircleLevelSet;

impl LevelSet for OrthocircleLevelSet {
    fn value(&self, p: &Point3<f64>) -> f64 {
        let (x2, y2, z2) = (p.x * p.x, p.y * p.y, p.z * p.z);
        let sq = |t: f64| t * t;
        sq(x2 - 1.0)
            + sq(y2 - 1.0)
            + sq(z2 - 1.0)
            + sq(x2 + y2 - 4.0)
            + sq(x2 + z2 - 4.0)
            + sq(y2 + z2 - 4.0)
            - 16.0
    }

    fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        let (x2, y2, z2) = (p.x * p.x, p.y * p.y, p.z * p.z);
        Vector3::new(
            4.0 * p.x * (3.0 * x2 + y2 + z2 - 9.0),
            4.0 * p.y * (x2 + 3.0 * y2 + z2 - 9.0),
            4.0 * p.z * (x2 + y2 + 3.0 * z2 - 9.0),
        )
    }

    fn hessian(&self, p: &Point3<f64>) -> Matrix3<f64> {
        let (x2, y2, z2) = (p.x * p.x, p.y * p.y, p.z * p.z);
        let dxx = 36.0 * x2 + 4.0 * y2 + 4.0 * z2 - 36.0;
        let dyy = 4.0 * x2 + 36.0 * y2 + 4.0 * z2 - 36.0;
        let dzz = 4.0 * x2 + 4.0 * y2 + 36.0 * z2 - 36.0;
        let dxy = 8.0 * p.x * p.y;
        let dxz = 8.0 * p.x * p.z;
        let dyz = 8.0 * p.y * p.z;
        Matrix3::new(dxx, dxy, dxz, dxy, dyy, dyz, dxz, dyz, dzz)
    }
}

/// Affine level set `n . x - offset` (a plane); constant gradient.
#[derive(Debug, Clone, Copy)]
pub struct PlaneLevelSet {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl LevelSet for PlaneLevelSet {
    fn value(&self, x: &Point3<f64>) -> f64 {
        self.normal.dot(&x.coords) - self.offset
    }

    fn gradient(&self, _x: &Point3<f64>) -> Vector3<f64> {
        self.normal
    }

    fn hessian(&self, _x: &Point3<f64>) -> Matrix3<f64> {
        Matrix3::zeros()
    }
}

/// Rigid translation of another level set; used by the positioning sweep.
#[derive(Clone)]
pub struct TranslatedLevelSet<L> {
    pub inner: L,
    pub shift: Vector3<f64>,
}

impl<L: LevelSet> LevelSet for TranslatedLevelSet<L> {
    fn value(&self, x: &Point3<f64>) -> f64 {
        self.inner.value(&(x - self.shift))
    }

    fn gradient(&self, x: &Point3<f64>) -> Vector3<f64> {
        self.inner.gradient(&(x - self.shift))
    }

    fn hessian(&self, x: &Point3<f64>) -> Matrix3<f64> {
        self.inner.hessian(&(x - self.shift))
    }
}

/// `u = sin(pi x / 2) sin(pi y / 2) sin(pi z / 2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigProductSolution;

impl ManufacturedSolution for TrigProductSolution {
    fn value(&self, p: &Point3<f64>) -> f64 {
        let k = std::f64::consts::FRAC_PI_2;
        (k * p.x).sin() * (k * p.y).sin() * (k * p.z).sin()
    }

    fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        let k = std::f64::consts::FRAC_PI_2;
        let (sx, cx) = (k * p.x).sin_cos();
        let (sy, cy) = (k * p.y).sin_cos();
        let (sz, cz) = (k * p.z).sin_cos();
        k * Vector3::new(cx * sy * sz, sx * cy * sz, sx * sy * cz)
    }

    fn hessian(&self, p: &Point3<f64>) -> Matrix3<f64> {
        let k = std::f64::consts::FRAC_PI_2;
        let (sx, cx) = (k * p.x).sin_cos();
        let (sy, cy) = (k * p.y).sin_cos();
        let (sz, cz) = (k * p.z).sin_cos();
        let k2 = k * k;
        let dxx = -k2 * sx * sy * sz;
        let dxy = k2 * cx * cy * sz;
        let dxz = k2 * cx * sy * cz;
        let dyz = k2 * sx * cy * cz;
        Matrix3::new(dxx, dxy, dxz, dxy, dxx, dyz, dxz, dyz, dxx)
    }
}

/// `u = x y - 5 y + z + x z`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BilinearSolution;

impl ManufacturedSolution for BilinearSolution {
    fn value(&self, p: &Point3<f64>) -> f64 {
        p.x * p.y - 5.0 * p.y + p.z + p.x * p.z
    }

    fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        Vector3::new(p.y + p.z, p.x - 5.0, 1.0 + p.x)
    }

    fn hessian(&self, _p: &Point3<f64>) -> Matrix3<f64> {
        Matrix3::new(0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    }
}

/// The two built-in test problems: `sphere` and `orthocircle`.
pub fn builtin_cases() -> Vec<TestCase> {
    vec![
        TestCase {
            name: "sphere",
            level_set: Arc::new(SphereLevelSet),
            solution: Arc::new(TrigProductSolution),
            bounding_halfwidth: 1.6,
        },
        TestCase {
            name: "orthocircle",
            level_set: Arc::new(OrthocircleLevelSet),
            solution: Arc::new(BilinearSolution),
            bounding_halfwidth: 2.2,
        },
    ]
}

/// Look up a built-in case by its CLI name.
pub fn case_by_name(name: &str) -> Option<TestCase> {
    builtin_cases().into_iter().find(|c| c.name == name)
}

fn checked_gradient(
    ls: &dyn LevelSet,
    x: &Point3<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    let g = ls.gradient(x);
    if g.norm() < MIN_GRADIENT_NORM {
        return Err(GeometryError::DegenerateGradient(x.x, x.y, x.z));
    }
    Ok(g)
}

/// Unit normal `grad(phi)/|grad(phi)|` at `x`.
pub fn surface_normal(
    ls: &dyn LevelSet,
    x: &Point3<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    let g = checked_gradient(ls, x)?;
    Ok(g / g.norm())
}

/// Closest-point projection of `x` onto the zero set of `ls`.
///
/// Damped first-order Newton steps `p <- p - phi(p) g / |g|^2` alternate
/// with tangential corrections pulling `p` toward the foot point of `x`,
/// until `|phi(p)| <= tol (1 + |phi(x)|)` and `x - p` is parallel to the
/// gradient within `10 tol`.
pub fn closest_point(
    ls: &dyn LevelSet,
    x: &Point3<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Point3<f64>, GeometryError> {
    let phi_tol = tol * (1.0 + ls.value(x).abs());
    let mut p = *x;
    let mut residual = ls.value(&p).abs();
    for _ in 0..max_iter {
        let phi = ls.value(&p);
        let g = checked_gradient(ls, &p)?;
        let inv_g2 = 1.0 / g.norm_squared();

        // Damped projection step toward the zero set.
        let full = -(phi * inv_g2) * g;
        let mut t = 1.0;
        let mut cand = p + full;
        for _ in 0..40 {
            if ls.value(&cand).abs() <= 0.9 * phi.abs() || full.norm() * t < tol {
                break;
            }
            t *= 0.5;
            cand = p + t * full;
        }
        p = cand;

        // Tangential correction: slide toward x within the tangent plane.
        let g = checked_gradient(ls, &p)?;
        let n = g / g.norm();
        let d = x - p;
        let tangential = d - n * d.dot(&n);
        p += tangential;

        residual = ls.value(&p).abs();
        let d = x - p;
        let n = surface_normal(ls, &p)?;
        let misalignment = (d - n * d.dot(&n)).norm();
        if residual <= phi_tol && misalignment <= 10.0 * tol * (1.0 + d.norm()) {
            return Ok(p);
        }
    }
    Err(GeometryError::ProjectionDiverged {
        iters: max_iter,
        residual,
        x: x.x,
        y: x.y,
        z: x.z,
    })
}

/// Pull back a field defined on the surface: `value = field(p(x))`.
pub fn extend<T>(
    field: impl Fn(&Point3<f64>) -> T,
    ls: &dyn LevelSet,
    x: &Point3<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<T, GeometryError> {
    let p = closest_point(ls, x, tol, max_iter)?;
    Ok(field(&p))
}

/// Right-hand side `f` of the manufactured problem at a surface point.
///
/// `f = -lap_G u + u` for [`ProblemVariant::Reaction`], `f = -lap_G u`
/// for [`ProblemVariant::Pure`], with the Laplace-Beltrami operator
/// expanded through the level-set normal field.
pub fn exact_rhs(
    ls: &dyn LevelSet,
    sol: &dyn ManufacturedSolution,
    x: &Point3<f64>,
    variant: ProblemVariant,
) -> Result<f64, GeometryError> {
    let g = checked_gradient(ls, x)?;
    let gn = g.norm();
    let n = g / gn;
    let hphi = ls.hessian(x);
    let div_n = (hphi.trace() - n.dot(&(hphi * n))) / gn;

    let hu = sol.hessian(x);
    let gu = sol.gradient(x);
    let lap_gamma = hu.trace() - n.dot(&(hu * n)) - div_n * gu.dot(&n);

    let reaction = match variant {
        ProblemVariant::Reaction => sol.value(x),
        ProblemVariant::Pure => 0.0,
    };
    Ok(-lap_gamma + reaction)
}

impl TestCase {
    /// `u(p(x))`: the exact solution extended off the surface.
    pub fn solution_at_projected(&self, x: &Point3<f64>) -> Result<f64, GeometryError> {
        let p = closest_point(self.level_set.as_ref(), x, PROJECTION_TOL, PROJECTION_MAX_ITER)?;
        Ok(self.solution.value(&p))
    }

    /// `f(p(x))`: the extended right-hand side used by the load vector.
    pub fn rhs_at_projected(
        &self,
        x: &Point3<f64>,
        variant: ProblemVariant,
    ) -> Result<f64, GeometryError> {
        let ls = self.level_set.as_ref();
        let p = closest_point(ls, x, PROJECTION_TOL, PROJECTION_MAX_ITER)?;
        exact_rhs(ls, self.solution.as_ref(), &p, variant)
    }

    /// `(grad_G u)(p(x)) = P_G grad(u)` evaluated at the projected point.
    pub fn surface_gradient_at_projected(
        &self,
        x: &Point3<f64>,
    ) -> Result<Vector3<f64>, GeometryError> {
        let ls = self.level_set.as_ref();
        let p = closest_point(ls, x, PROJECTION_TOL, PROJECTION_MAX_ITER)?;
        let n = surface_normal(ls, &p)?;
        let gu = self.solution.gradient(&p);
        Ok(gu - n * gu.dot(&n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ConstantSolution(f64);

    impl ManufacturedSolution for ConstantSolution {
        fn value(&self, _x: &Point3<f64>) -> f64 {
            self.0
        }
        fn gradient(&self, _x: &Point3<f64>) -> Vector3<f64> {
            Vector3::zeros()
        }
        fn hessian(&self, _x: &Point3<f64>) -> Matrix3<f64> {
            Matrix3::zeros()
        }
    }

    /// u = z; on the unit sphere a degree-1 spherical harmonic.
    struct CoordinateSolution;

    impl ManufacturedSolution for CoordinateSolution {
        fn value(&self, x: &Point3<f64>) -> f64 {
            x.z
        }
        fn gradient(&self, _x: &Point3<f64>) -> Vector3<f64> {
            Vector3::z()
        }
        fn hessian(&self, _x: &Point3<f64>) -> Matrix3<f64> {
            Matrix3::zeros()
        }
    }

    /// u = x^2.
    struct SquareSolution;

    impl ManufacturedSolution for SquareSolution {
        fn value(&self, x: &Point3<f64>) -> f64 {
            x.x * x.x
        }
        fn gradient(&self, x: &Point3<f64>) -> Vector3<f64> {
            Vector3::new(2.0 * x.x, 0.0, 0.0)
        }
        fn hessian(&self, _x: &Point3<f64>) -> Matrix3<f64> {
            Matrix3::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0x5eed)
    }

    fn random_point(rng: &mut ChaCha8Rng, halfwidth: f64) -> Point3<f64> {
        Point3::new(
            rng.random_range(-halfwidth..halfwidth),
            rng.random_range(-halfwidth..halfwidth),
            rng.random_range(-halfwidth..halfwidth),
        )
    }

    #[test]
    fn closest_point_on_sphere_is_radial() {
        let p = closest_point(&SphereLevelSet, &Point3::new(2.0, 0.0, 0.0), 1e-12, 100).unwrap();
        assert_relative_eq!(p.x, 1.0, epsilon = 1e-11);
        assert!(p.y.abs() < 1e-11 && p.z.abs() < 1e-11);

        // General off-axis points project onto x/|x|.
        let mut r = rng();
        for _ in 0..50 {
            let x = random_point(&mut r, 1.5);
            if x.coords.norm() < 0.3 {
                continue;
            }
            let p = closest_point(&SphereLevelSet, &x, 1e-12, 100).unwrap();
            let expected = Point3::from(x.coords / x.coords.norm());
            assert!((p - expected).norm() < 1e-10, "{x:?} -> {p:?}");
        }
    }

    #[test]
    fn closest_point_fixes_surface_points() {
        let x = Point3::new(0.6, 0.0, 0.8);
        let p = closest_point(&SphereLevelSet, &x, 1e-12, 100).unwrap();
        assert!((p - x).norm() < 1e-12);
    }

    #[test]
    fn closest_point_orthocircle_diagonal() {
        // Oracle: bisect phi2 along the main diagonal to locate the
        // crossing, confirming a root within 0.2 of the query point.
        let ls = OrthocircleLevelSet;
        let diag = |s: f64| ls.value(&Point3::new(s, s, s));
        let (mut lo, mut hi) = (1.2, 1.9);
        assert!(diag(lo) < 0.0 && diag(hi) > 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if diag(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let x = Point3::new(1.7, 1.7, 1.7);
        assert!((Point3::new(s, s, s) - x).norm() <= 0.2);

        let p = closest_point(&ls, &x, 1e-12, 100).unwrap();
        assert!(ls.value(&p).abs() <= 1e-10);
        assert!((p - x).norm() <= 0.2);
    }

    #[test]
    fn closest_point_is_idempotent() {
        let mut r = rng();
        for case in builtin_cases() {
            let ls = case.level_set.as_ref();
            for _ in 0..30 {
                let x = random_point(&mut r, case.bounding_halfwidth);
                let Ok(p1) = closest_point(ls, &x, 1e-12, 100) else {
                    continue;
                };
                let p2 = closest_point(ls, &p1, 1e-12, 100).unwrap();
                assert!((p2 - p1).norm() < 10.0 * 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_gradient_is_an_error() {
        let origin = Point3::origin();
        assert!(matches!(
            surface_normal(&SphereLevelSet, &origin),
            Err(GeometryError::DegenerateGradient(..))
        ));
        assert!(closest_point(&SphereLevelSet, &origin, 1e-12, 100).is_err());
    }

    #[test]
    fn surface_normal_examples() {
        let n = surface_normal(&SphereLevelSet, &Point3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((n - Vector3::z()).norm() < 1e-14);
        let n = surface_normal(&SphereLevelSet, &Point3::new(-3.0, 0.0, 0.0)).unwrap();
        assert!((n - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-14);

        let plane = PlaneLevelSet {
            normal: Vector3::z(),
            offset: 0.3,
        };
        let n = surface_normal(&plane, &Point3::new(0.4, -0.2, 0.9)).unwrap();
        assert!((n - Vector3::z()).norm() < 1e-14);
        assert!((n.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normal_aligns_with_projection_direction() {
        let mut r = rng();
        for (case, band, tol) in [
            (&builtin_cases()[0], 0.15, 1e-6),
            (&builtin_cases()[1], 0.05, 1e-3),
        ] {
            let ls = case.level_set.as_ref();
            let mut tested = 0;
            while tested < 40 {
                let seed = random_point(&mut r, case.bounding_halfwidth);
                let Ok(base) = closest_point(ls, &seed, 1e-12, 100) else {
                    continue;
                };
                let n0 = surface_normal(ls, &base).unwrap();
                let s: f64 = r.random_range(-1.0..1.0) * band;
                if s.abs() < 1e-3 {
                    continue;
                }
                let x = base + s * n0;
                let p = closest_point(ls, &x, 1e-12, 100).unwrap();
                let n = surface_normal(ls, &p).unwrap();
                assert!((n.norm() - 1.0).abs() < 1e-14);
                let dir = (x - p).normalize();
                assert!(
                    dir.dot(&n).abs() >= 1.0 - tol,
                    "case {}: alignment {} at {:?}",
                    case.name,
                    dir.dot(&n).abs(),
                    x
                );
                tested += 1;
            }
        }
    }

    #[test]
    fn exact_rhs_constant_solution() {
        let mut r = rng();
        let sol = ConstantSolution(1.0);
        for _ in 0..20 {
            let seed = random_point(&mut r, 1.5);
            if seed.coords.norm() < 0.3 {
                continue;
            }
            let p = closest_point(&SphereLevelSet, &seed, 1e-12, 100).unwrap();
            let f = exact_rhs(&SphereLevelSet, &sol, &p, ProblemVariant::Reaction).unwrap();
            assert_relative_eq!(f, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_rhs_sphere_harmonic() {
        // -lap_G z = 2z on the unit sphere; the reaction problem adds z.
        let north = Point3::new(0.0, 0.0, 1.0);
        let f = exact_rhs(&SphereLevelSet, &CoordinateSolution, &north, ProblemVariant::Reaction)
            .unwrap();
        assert_relative_eq!(f, 3.0, epsilon = 1e-12);

        let mut r = rng();
        for _ in 0..100 {
            let seed = random_point(&mut r, 1.5);
            if seed.coords.norm() < 0.3 {
                continue;
            }
            let p = closest_point(&SphereLevelSet, &seed, 1e-12, 100).unwrap();
            let f = exact_rhs(&SphereLevelSet, &CoordinateSolution, &p, ProblemVariant::Pure)
                .unwrap();
            assert_relative_eq!(f, 2.0 * p.z, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn exact_rhs_matches_finite_difference_surface_laplacian() {
        // Oracle: spherical-coordinate Laplacian of u = z = cos(theta) by
        // central differences on a fine polar grid.
        let dtheta: f64 = 1e-4;
        let u = |theta: f64| theta.cos();
        for &theta in &[0.3, 0.9, 1.5, 2.2, 2.8] {
            let fd = ((theta + 0.5 * dtheta).sin() * (u(theta + dtheta) - u(theta))
                - (theta - 0.5 * dtheta).sin() * (u(theta) - u(theta - dtheta)))
                / (dtheta * dtheta * theta.sin());
            let x = Point3::new(theta.sin(), 0.0, theta.cos());
            let f =
                exact_rhs(&SphereLevelSet, &CoordinateSolution, &x, ProblemVariant::Pure).unwrap();
            // f = -lap_G u.
            assert_relative_eq!(f, -fd, epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn exact_rhs_plane_pure() {
        // On z = c with normal e_z the surface Laplacian of x^2 is 2.
        let plane = PlaneLevelSet {
            normal: Vector3::z(),
            offset: 0.3,
        };
        let f = exact_rhs(&plane, &SquareSolution, &Point3::new(0.7, -0.4, 0.3), ProblemVariant::Pure)
            .unwrap();
        assert_relative_eq!(f, -2.0, epsilon = 1e-14);
    }

    #[test]
    fn extend_examples() {
        let c = extend(|_| 42.0, &SphereLevelSet, &Point3::new(0.3, 0.4, 0.8), 1e-12, 100).unwrap();
        assert_relative_eq!(c, 42.0);

        let z = extend(|p: &Point3<f64>| p.z, &SphereLevelSet, &Point3::new(0.0, 0.0, 0.5), 1e-12, 100)
            .unwrap();
        assert_relative_eq!(z, 1.0, epsilon = 1e-11);

        let xy = extend(
            |p: &Point3<f64>| p.x * p.y,
            &SphereLevelSet,
            &Point3::new(2.0, 2.0, 0.0),
            1e-12,
            100,
        )
        .unwrap();
        assert_relative_eq!(xy, 0.5, epsilon = 1e-11);
    }

    #[test]
    fn builtin_case_values() {
        let cases = builtin_cases();
        let sphere = &cases[0];
        assert_eq!(sphere.name, "sphere");
        assert_relative_eq!(sphere.level_set.value(&Point3::new(1.0, 0.0, 0.0)), 0.0);
        assert_relative_eq!(sphere.solution.value(&Point3::new(1.0, 0.0, 0.0)), 0.0);
        assert!(sphere.solution.gradient(&Point3::origin()).norm() < 1e-15);

        let ortho = &cases[1];
        assert_eq!(ortho.name, "orthocircle");
        assert_relative_eq!(ortho.level_set.value(&Point3::origin()), 35.0);

        assert!(case_by_name("sphere").is_some());
        assert!(case_by_name("torus").is_none());
    }

    /// Central finite differences of a scalar field.
    fn fd_check(
        value: &dyn Fn(&Point3<f64>) -> f64,
        gradient: &dyn Fn(&Point3<f64>) -> Vector3<f64>,
        hessian: &dyn Fn(&Point3<f64>) -> Matrix3<f64>,
        x: &Point3<f64>,
        scale: f64,
    ) {
        let h = 1e-5;
        let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        let g = gradient(x);
        let hess = hessian(x);
        assert!((hess - hess.transpose()).norm() < 1e-14 * (1.0 + hess.norm()));
        for (i, e) in axes.iter().enumerate() {
            let fd = (value(&(x + h * e)) - value(&(x - h * e))) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * scale.max(g[i].abs()),
                "gradient component {i} at {x:?}: fd {fd} vs {}",
                g[i]
            );
            let gp = gradient(&(x + h * e));
            let gm = gradient(&(x - h * e));
            let col = (gp - gm) / (2.0 * h);
            for j in 0..3 {
                assert!(
                    (col[j] - hess[(j, i)]).abs() <= 1e-6 * scale.max(hess[(j, i)].abs()),
                    "hessian ({j},{i}) at {x:?}"
                );
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut r = rng();
        for case in builtin_cases() {
            let ls = case.level_set.clone();
            let sol = case.solution.clone();
            // Derivative magnitudes differ wildly between the two level
            // sets; scale the tolerance by a per-case characteristic size.
            let scale = if case.name == "sphere" { 1.0 } else { 100.0 };
            for _ in 0..100 {
                let x = random_point(&mut r, case.bounding_halfwidth);
                fd_check(
                    &|p| ls.value(p),
                    &|p| ls.gradient(p),
                    &|p| ls.hessian(p),
                    &x,
                    scale,
                );
                fd_check(
                    &|p| sol.value(p),
                    &|p| sol.gradient(p),
                    &|p| sol.hessian(p),
                    &x,
                    scale,
                );
            }
        }
    }

    #[test]
    fn translated_level_set_shifts_zero_set() {
        let shifted = TranslatedLevelSet {
            inner: SphereLevelSet,
            shift: Vector3::new(0.25, 0.25, 0.25),
        };
        let p = Point3::new(1.25, 0.25, 0.25);
        assert_relative_eq!(shifted.value(&p), 0.0, epsilon = 1e-15);
        let n = surface_normal(&shifted, &p).unwrap();
        assert!((n - Vector3::x()).norm() < 1e-14);
    }
}
