//! Experiment drivers: error norms, convergence rates, condition-number
//! sweeps, and CSV/plot-script emission.
//!
//! The convergence study refines a background box mesh, solves the
//! manufactured problem on every level and reports errors in
//! `H^1(Gamma_h)`, `L^2(Gamma_h)` and `L^inf(N_h)` together with the
//! experimental order of convergence `EOC(k) = log2(E_{k-1}/E_k)`.
//!
//! The condition-number sweep translates the unit sphere along the cell
//! diagonal `delta (h,h,h)` for `delta in [0,1]` and reports the spectral
//! condition number of the stabilized stiffness matrix with the constant
//! kernel deflated, optionally after Jacobi scaling.

use crate::cutcomplex::CutComplex;
use crate::dg::{
    assemble_ah, assemble_jh, assemble_system, solve, DgError, DgSpace, SystemParams,
    MEAN_FACTOR_CLASSICAL,
};
use crate::geometry::{
    builtin_cases, GeometryError, ProblemVariant, SphereLevelSet, TestCase, TranslatedLevelSet,
};
use crate::linalg::{condition_number, constant_kernel_vector, EigMethod, LinalgError};
use crate::mesh::{BackgroundMesh, MeshSpec};
use crate::quadrature::triangle_rule;
use nalgebra::{Point3, Vector3};
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: DgError,
    },
    #[error("condition sweep at level {level}, delta {delta}: {source}")]
    AtSweepPoint {
        level: usize,
        delta: f64,
        #[source]
        source: LinalgError,
    },
    #[error("EOC undefined for non-positive error {0:e}")]
    NonPositiveError(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-level record of a convergence study.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub level: usize,
    pub h: f64,
    pub n_dofs: usize,
    pub err_h1: f64,
    pub err_l2: f64,
    pub err_linf: f64,
    pub eoc_h1: Option<f64>,
    pub eoc_l2: Option<f64>,
    pub eoc_linf: Option<f64>,
}

/// One point of the condition-number sweep.
#[derive(Debug, Clone)]
pub struct CondReport {
    pub level: usize,
    pub delta: f64,
    pub kappa: f64,
    pub beta_e: f64,
    pub beta_f: f64,
    pub gamma: f64,
    pub jacobi: bool,
}

/// Parameters of a convergence study.
#[derive(Debug, Clone, Copy)]
pub struct StudyParams {
    pub beta_e: f64,
    pub beta_f: f64,
    pub gamma: f64,
    pub mean_factor: f64,
    pub variant: ProblemVariant,
    /// Cells per axis on the coarsest level.
    pub n0: usize,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            beta_e: 50.0,
            beta_f: 50.0,
            gamma: 0.01,
            mean_factor: MEAN_FACTOR_CLASSICAL,
            variant: ProblemVariant::Reaction,
            n0: 5,
        }
    }
}

/// Discretization errors of a solved system.
///
/// `L^2(Gamma_h)` integrates `(u_h - u o p)^2` with the degree-4 rule;
/// the `H^1(Gamma_h)` norm adds the tangential-gradient mismatch
/// `P_K (grad u_h - (grad_G u) o p)`; the max norm takes the largest
/// deviation over all surface-element vertices. Off-surface nodal values
/// of the band extension are deliberately not sampled: the normal slope
/// of `u_h` inside a tet is a near-null direction of the energy, so only
/// values on the discrete surface carry the discretization order.
pub fn error_norms(
    complex: &CutComplex,
    space: &DgSpace,
    coeffs: &[f64],
    tc: &TestCase,
) -> Result<(f64, f64, f64), GeometryError> {
    let rule = triangle_rule(4).expect("supported triangle degree");
    let mut l2_sq = 0.0f64;
    let mut grad_sq = 0.0f64;
    let mut linf = 0.0f64;
    for elem in &complex.surface_elements {
        let rank = space.rank_of_tet(elem.parent_tet);
        let dofs = space.dofs_of_rank(rank);
        let basis = &space.basis[rank as usize];
        let n = elem.tangent_normal;
        // Elementwise-constant discrete tangential gradient.
        let mut grad_uh = Vector3::zeros();
        for i in 0..4 {
            grad_uh += coeffs[dofs[i] as usize] * basis.grad[i];
        }
        let pgrad_uh = grad_uh - n * n.dot(&grad_uh);
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let x = Point3::from(
                bary[0] * elem.vertices[0].coords
                    + bary[1] * elem.vertices[1].coords
                    + bary[2] * elem.vertices[2].coords,
            );
            let wq = w * elem.area;
            let mut uh = 0.0;
            for i in 0..4 {
                uh += coeffs[dofs[i] as usize] * basis.eval(i, &x);
            }
            let u = tc.solution_at_projected(&x)?;
            l2_sq += wq * (uh - u) * (uh - u);

            let gexact = tc.surface_gradient_at_projected(&x)?;
            let pgexact = gexact - n * n.dot(&gexact);
            grad_sq += wq * (pgrad_uh - pgexact).norm_squared();
        }
        // The error is affine per element; its extremum sits at a vertex.
        for v in &elem.vertices {
            let mut uh = 0.0;
            for i in 0..4 {
                uh += coeffs[dofs[i] as usize] * basis.eval(i, v);
            }
            let u = tc.solution_at_projected(v)?;
            linf = linf.max((uh - u).abs());
        }
    }
    Ok(((l2_sq + grad_sq).sqrt(), l2_sq.sqrt(), linf))
}

/// Experimental orders of convergence `log2(E_{k-1} / E_k)`.
pub fn eoc(errors: &[f64]) -> Result<Vec<f64>, HarnessError> {
    for &e in errors {
        if e <= 0.0 {
            return Err(HarnessError::NonPositiveError(e));
        }
    }
    Ok(errors
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .collect())
}

/// Run `levels` successive refinements of the convergence study.
pub fn run_convergence(
    case: &TestCase,
    levels: usize,
    params: StudyParams,
) -> Result<Vec<ErrorReport>, HarnessError> {
    let mut reports: Vec<ErrorReport> = Vec::with_capacity(levels);
    for k in 0..levels {
        let at = |source: DgError| HarnessError::AtLevel { level: k, source };
        let spec = MeshSpec::new(
            Point3::origin(),
            case.bounding_halfwidth,
            params.n0 << k,
        );
        let (complex, space, h) = {
            let mesh = spec.build();
            let complex = CutComplex::build(&mesh, case.level_set.as_ref());
            let space = DgSpace::new(&mesh, &complex);
            (complex, space, mesh.h())
        };
        let sys_params = SystemParams {
            beta_e: params.beta_e,
            beta_f: params.beta_f,
            gamma: params.gamma,
            mean_factor: params.mean_factor,
            h,
        };
        let system = assemble_system(&complex, &space, case, sys_params, params.variant)
            .map_err(|e| at(e.into()))?;
        let report = solve(&system, params.variant).map_err(at)?;
        let (err_h1, err_l2, err_linf) =
            error_norms(&complex, &space, &report.coefficients, case)
                .map_err(|e| at(e.into()))?;

        let eoc_of = |prev: Option<f64>, cur: f64| prev.map(|p: f64| (p / cur).log2());
        let prev = reports.last();
        reports.push(ErrorReport {
            level: k,
            h,
            n_dofs: space.n_dofs,
            eoc_h1: eoc_of(prev.map(|r| r.err_h1), err_h1),
            eoc_l2: eoc_of(prev.map(|r| r.err_l2), err_l2),
            eoc_linf: eoc_of(prev.map(|r| r.err_linf), err_linf),
            err_h1,
            err_l2,
            err_linf,
        });
    }
    Ok(reports)
}

/// Condition number of `a_h + j_h` for the unit sphere translated by
/// `delta (h, h, h)` on the given mesh.
pub fn condnum_at(
    mesh: &BackgroundMesh,
    delta: f64,
    beta_e: f64,
    beta_f: f64,
    gamma: f64,
    jacobi: bool,
    method: EigMethod,
) -> Result<f64, LinalgError> {
    let h = mesh.h();
    let ls = TranslatedLevelSet {
        inner: SphereLevelSet,
        shift: Vector3::new(delta * h, delta * h, delta * h),
    };
    let complex = CutComplex::build(mesh, &ls);
    let space = DgSpace::new(mesh, &complex);
    let (ah, _) = assemble_ah(&complex, &space, beta_e, MEAN_FACTOR_CLASSICAL);
    let (jh, _) = assemble_jh(&complex, &space, beta_f, gamma);
    let a = ah.add(&jh);
    let kernel = constant_kernel_vector(space.n_dofs);
    condition_number(&a, Some(&kernel), jacobi, method)
}

/// The mesh used by sweep level `k`: `[-1.6, 1.6]^3` with `h = 3.2/5 2^-k`.
pub fn condnum_mesh(level: usize) -> BackgroundMesh {
    MeshSpec::new(Point3::origin(), 1.6, 5 << level).build()
}

/// Full positioning sweep: levels `0..=levels`, `delta = l/steps`.
pub fn run_condnum(
    levels: usize,
    steps: usize,
    beta_e: f64,
    beta_f: f64,
    gamma: f64,
    jacobi: bool,
) -> Result<Vec<CondReport>, HarnessError> {
    let mut reports = Vec::with_capacity((levels + 1) * (steps + 1));
    for k in 0..=levels {
        let mesh = condnum_mesh(k);
        for l in 0..=steps {
            let delta = l as f64 / steps as f64;
            let kappa = condnum_at(&mesh, delta, beta_e, beta_f, gamma, jacobi, EigMethod::Auto)
                .map_err(|source| HarnessError::AtSweepPoint {
                    level: k,
                    delta,
                    source,
                })?;
            reports.push(CondReport {
                level: k,
                delta,
                kappa,
                beta_e,
                beta_f,
                gamma,
                jacobi,
            });
        }
    }
    Ok(reports)
}

fn fmt_float(v: f64) -> String {
    format!("{:.16e}", v)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Convergence CSV: `level,h,ndofs,err_h1,eoc_h1,err_l2,eoc_l2,err_linf,eoc_linf`.
pub fn emit_convergence_csv(reports: &[ErrorReport], out: &mut impl Write) -> io::Result<()> {
    write!(
        out,
        "level,h,ndofs,err_h1,eoc_h1,err_l2,eoc_l2,err_linf,eoc_linf\n"
    )?;
    for r in reports {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{}\n",
            r.level,
            fmt_float(r.h),
            r.n_dofs,
            fmt_float(r.err_h1),
            fmt_opt(r.eoc_h1),
            fmt_float(r.err_l2),
            fmt_opt(r.eoc_l2),
            fmt_float(r.err_linf),
            fmt_opt(r.eoc_linf),
        )?;
    }
    Ok(())
}

/// Condition-number CSV: `level,delta,kappa`.
pub fn emit_condnum_csv(reports: &[CondReport], out: &mut impl Write) -> io::Result<()> {
    write!(out, "level,delta,kappa\n")?;
    for r in reports {
        write!(
            out,
            "{},{},{}\n",
            r.level,
            fmt_float(r.delta),
            fmt_float(r.kappa)
        )?;
    }
    Ok(())
}

/// Gnuplot script plotting errors against h on log-log axes.
pub fn emit_convergence_plotscript(csv_path: &Path, out: &mut impl Write) -> io::Result<()> {
    let csv = csv_path.display();
    write!(out, "set datafile separator ','\n")?;
    write!(out, "set logscale xy\n")?;
    write!(out, "set xlabel 'h'\n")?;
    write!(out, "set ylabel 'error'\n")?;
    write!(out, "set key left top\n")?;
    write!(
        out,
        "plot '{csv}' every ::1 using 2:4 with linespoints title 'H1', \\\n"
    )?;
    write!(
        out,
        "     '{csv}' every ::1 using 2:6 with linespoints title 'L2', \\\n"
    )?;
    write!(
        out,
        "     '{csv}' every ::1 using 2:8 with linespoints title 'Linf'\n"
    )?;
    Ok(())
}

/// Gnuplot script plotting kappa against delta, one curve per level.
pub fn emit_condnum_plotscript(
    csv_path: &Path,
    levels: usize,
    out: &mut impl Write,
) -> io::Result<()> {
    let csv = csv_path.display();
    write!(out, "set datafile separator ','\n")?;
    write!(out, "set logscale y\n")?;
    write!(out, "set xlabel 'delta'\n")?;
    write!(out, "set ylabel 'condition number'\n")?;
    write!(out, "set key right top\n")?;
    write!(out, "plot \\\n")?;
    for k in 0..=levels {
        let sep = if k == levels { "\n" } else { ", \\\n" };
        write!(
            out,
            "  '{csv}' every ::1 using ($1=={k}?$2:1/0):3 with linespoints title 'level {k}'{sep}"
        )?;
    }
    Ok(())
}

/// Outcome of one self-test check.
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<(), String>) -> CheckResult {
    match run() {
        Ok(()) => CheckResult {
            name,
            passed: true,
            detail: String::new(),
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn ensure(cond: bool, msg: impl Fn() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Fast invariant suite behind the `selftest` CLI command.
pub fn selftest() -> Vec<CheckResult> {
    use crate::geometry::{closest_point, exact_rhs, surface_normal, ManufacturedSolution};
    use crate::linalg::{cg_solve, dense_extremal_eigs, extremal_eigs, PseudoInverseOp,
        LinearOperator, SparseSym};

    struct CoordZ;
    impl ManufacturedSolution for CoordZ {
        fn value(&self, x: &Point3<f64>) -> f64 {
            x.z
        }
        fn gradient(&self, _: &Point3<f64>) -> Vector3<f64> {
            Vector3::z()
        }
        fn hessian(&self, _: &Point3<f64>) -> nalgebra::Matrix3<f64> {
            nalgebra::Matrix3::zeros()
        }
    }

    let mut results = Vec::new();

    results.push(check("quadrature exactness", || {
        for deg in [1usize, 2, 4] {
            let rule = triangle_rule(deg).map_err(|e| e.to_string())?;
            let sum: f64 = rule.weights.iter().sum();
            ensure((sum - 1.0).abs() < 1e-14, || {
                format!("triangle weights sum {sum}")
            })?;
        }
        let rule = triangle_rule(2).unwrap();
        // x^2 over the reference triangle integrates to 1/12.
        let got: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(b, w)| 0.5 * w * b[1] * b[1])
            .sum();
        ensure((got - 1.0 / 12.0).abs() < 1e-14, || {
            format!("triangle degree-2 rule: int x^2 = {got}")
        })
    }));

    results.push(check("mesh volume partition", || {
        let mesh = MeshSpec::new(Point3::origin(), 0.7, 3).build();
        let vol: f64 = (0..mesh.tets().len() as u32)
            .map(|t| mesh.signed_volume(t))
            .sum();
        let want = (2.0f64 * 0.7).powi(3);
        ensure((vol - want).abs() <= 1e-12 * want, || {
            format!("volume {vol} vs {want}")
        })
    }));

    results.push(check("closest point projection", || {
        let p = closest_point(&SphereLevelSet, &Point3::new(2.0, 0.0, 0.0), 1e-12, 100)
            .map_err(|e| e.to_string())?;
        ensure((p - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-10, || {
            format!("sphere projection landed at {p:?}")
        })?;
        let p2 = closest_point(&SphereLevelSet, &p, 1e-12, 100).map_err(|e| e.to_string())?;
        ensure((p2 - p).norm() < 1e-11, || "projection not idempotent".into())
    }));

    results.push(check("derivatives vs finite differences", || {
        let h = 1e-5;
        for case in builtin_cases() {
            let ls = case.level_set.as_ref();
            for s in [-0.9f64, -0.3, 0.4, 1.1] {
                let x = Point3::new(s, 0.5 * s, -0.7 * s);
                let g = ls.gradient(&x);
                for (i, e) in [Vector3::x(), Vector3::y(), Vector3::z()].iter().enumerate() {
                    let fd = (ls.value(&(x + h * e)) - ls.value(&(x - h * e))) / (2.0 * h);
                    ensure((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(100.0), || {
                        format!("{}: grad[{i}] fd {fd} vs {}", case.name, g[i])
                    })?;
                }
            }
        }
        Ok(())
    }));

    results.push(check("sphere eigenfunction identity", || {
        // -lap_G z = 2z on the unit sphere.
        for s in [0.3f64, 1.1, 2.0] {
            let x = Point3::new(s.sin(), 0.2, s.cos());
            let p = closest_point(&SphereLevelSet, &x, 1e-12, 100).map_err(|e| e.to_string())?;
            let f = exact_rhs(&SphereLevelSet, &CoordZ, &p, ProblemVariant::Pure)
                .map_err(|e| e.to_string())?;
            ensure((f - 2.0 * p.z).abs() <= 1e-8, || {
                format!("-lap_G z = {f} vs {}", 2.0 * p.z)
            })?;
        }
        Ok(())
    }));

    results.push(check("watertight cut complexes", || {
        for (case, n) in [(&builtin_cases()[0], 8usize), (&builtin_cases()[1], 8)] {
            let mesh = MeshSpec::new(Point3::origin(), case.bounding_halfwidth, n).build();
            let complex = CutComplex::build(&mesh, case.level_set.as_ref());
            ensure(complex.unmatched_segments == 0, || {
                format!("{}: {} unmatched segments", case.name, complex.unmatched_segments)
            })?;
            for edge in &complex.cut_edges {
                let ep = &complex.surface_elements[edge.plus_element as usize];
                let em = &complex.surface_elements[edge.minus_element as usize];
                ensure(ep.parent_tet != em.parent_tet, || {
                    "cut edge inside a single tet".into()
                })?;
                for (q, elem) in [(edge.conormal_plus, ep), (edge.conormal_minus, em)] {
                    ensure((q.norm() - 1.0).abs() < 1e-12, || "co-normal not unit".into())?;
                    ensure(q.dot(&elem.tangent_normal).abs() < 1e-12, || {
                        "co-normal leaves the element plane".into()
                    })?;
                    ensure(q.dot(&(edge.midpoint() - elem.centroid())) > 0.0, || {
                        "co-normal not outward".into()
                    })?;
                }
            }
        }
        Ok(())
    }));

    results.push(check("geometric convergence orders", || {
        let mut residuals = Vec::new();
        let mut angles = Vec::new();
        for k in 0..3 {
            let mesh = MeshSpec::new(Point3::origin(), 1.6, 8 << k).build();
            let complex = CutComplex::build(&mesh, &SphereLevelSet);
            let resid = complex
                .surface_elements
                .iter()
                .flat_map(|e| e.vertices.iter())
                .map(|v| (v.coords.norm_squared() - 1.0).abs() / (2.0 * v.coords.norm()))
                .fold(0.0, f64::max);
            let angle = complex
                .surface_elements
                .iter()
                .map(|e| {
                    let c = e.centroid();
                    e.tangent_normal
                        .dot(&(c.coords / c.coords.norm()))
                        .clamp(-1.0, 1.0)
                        .acos()
                })
                .fold(0.0, f64::max);
            residuals.push(resid);
            angles.push(angle);
        }
        for k in 1..3 {
            ensure(residuals[k - 1] / residuals[k] >= 1.7, || {
                format!("vertex residuals {residuals:?}")
            })?;
            ensure(angles[k - 1] / angles[k] >= 1.7, || format!("normal angles {angles:?}"))?;
        }
        Ok(())
    }));

    results.push(check("sphere area converges to 4 pi", || {
        let four_pi = 4.0 * std::f64::consts::PI;
        let mesh = MeshSpec::new(Point3::origin(), 1.6, 16).build();
        let complex = CutComplex::build(&mesh, &SphereLevelSet);
        let err = (complex.surface_area() - four_pi).abs();
        ensure(err <= 6.0 * mesh.h() * mesh.h(), || {
            format!("area error {err}")
        })
    }));

    results.push(check("stiffness symmetry and kernel", || {
        let mesh = MeshSpec::new(Point3::origin(), 1.6, 6).build();
        let complex = CutComplex::build(&mesh, &SphereLevelSet);
        let space = DgSpace::new(&mesh, &complex);
        let (ah, asym_a) = assemble_ah(&complex, &space, 50.0, MEAN_FACTOR_CLASSICAL);
        let (jh, asym_j) = assemble_jh(&complex, &space, 50.0, 0.01);
        let a = ah.add(&jh);
        ensure(asym_a.max(asym_j) <= 1e-12 * a.max_abs(), || {
            format!("asymmetry {:e}", asym_a.max(asym_j))
        })?;
        let ones = vec![1.0; space.n_dofs];
        let mut y = vec![0.0; space.n_dofs];
        a.apply(&ones, &mut y);
        let resid = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        ensure(resid <= 1e-10 * a.frobenius_norm(), || {
            format!("kernel residual {resid:e}")
        })?;
        let kernel = constant_kernel_vector(space.n_dofs);
        let (_, min) = dense_extremal_eigs(&a, Some(&kernel));
        ensure(min > 0.0, || format!("deflated minimum eigenvalue {min:e}"))
    }));

    results.push(check("single-cut-tet assembly oracle", || {
        use crate::cutcomplex::SurfaceElement;
        let area = 3.0f64.sqrt() / 8.0;
        let complex = CutComplex {
            h: 1.0,
            active_tets: vec![0],
            surface_elements: vec![SurfaceElement {
                parent_tet: 0,
                vertices: [
                    Point3::new(0.5, 0.0, 0.0),
                    Point3::new(0.0, 0.5, 0.0),
                    Point3::new(0.0, 0.0, 0.5),
                ],
                area,
                tangent_normal: Vector3::new(1.0, 1.0, 1.0) / 3.0f64.sqrt(),
            }],
            ..Default::default()
        };
        let space = DgSpace::from_raw(
            vec![0],
            &[[
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ]],
        );
        let (mass, _) = crate::dg::assemble_mass(&complex, &space);
        let m = mass.to_dense();
        let s = area;
        ensure((m[(0, 0)] - s / 4.0).abs() < 1e-12, || {
            format!("M00 = {}", m[(0, 0)])
        })?;
        ensure((m[(1, 2)] - s / 48.0).abs() < 1e-12, || {
            format!("M12 = {}", m[(1, 2)])
        })?;
        let (ah, _) = assemble_ah(&complex, &space, 50.0, MEAN_FACTOR_CLASSICAL);
        let a = ah.to_dense();
        ensure(a[(0, 0)].abs() < 1e-13, || format!("A00 = {}", a[(0, 0)]))?;
        ensure((a[(1, 1)] - 2.0 * s / 3.0).abs() < 1e-12, || {
            format!("A11 = {}", a[(1, 1)])
        })
    }));

    results.push(check("load partition of unity", || {
        use crate::geometry::ManufacturedSolution;
        struct One;
        impl ManufacturedSolution for One {
            fn value(&self, _: &Point3<f64>) -> f64 {
                1.0
            }
            fn gradient(&self, _: &Point3<f64>) -> Vector3<f64> {
                Vector3::zeros()
            }
            fn hessian(&self, _: &Point3<f64>) -> nalgebra::Matrix3<f64> {
                nalgebra::Matrix3::zeros()
            }
        }
        let tc = TestCase {
            name: "sphere-const",
            level_set: std::sync::Arc::new(SphereLevelSet),
            solution: std::sync::Arc::new(One),
            bounding_halfwidth: 1.6,
        };
        let mesh = MeshSpec::new(Point3::origin(), 1.6, 6).build();
        let complex = CutComplex::build(&mesh, &SphereLevelSet);
        let space = DgSpace::new(&mesh, &complex);
        let load = crate::dg::assemble_load(&complex, &space, &tc, ProblemVariant::Reaction)
            .map_err(|e| e.to_string())?;
        let total: f64 = load.iter().sum();
        let want = complex.surface_area();
        ensure((total - want).abs() <= 1e-12 * want, || {
            format!("load total {total} vs surface area {want}")
        })
    }));

    results.push(check("linear algebra fixtures", || {
        let p3 = SparseSym::from_dense(&nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        ));
        let kernel = constant_kernel_vector(3);
        let sol = cg_solve(&p3, &[1.0, 0.0, -1.0], None, Some(&kernel), 1e-12, 100)
            .map_err(|e| e.to_string())?;
        ensure((sol.x[0] - 1.0).abs() < 1e-10 && (sol.x[2] + 1.0).abs() < 1e-10, || {
            format!("P3 deflated CG returned {:?}", sol.x)
        })?;
        let (max, min) = dense_extremal_eigs(&p3, Some(&kernel));
        ensure((max - 3.0).abs() < 1e-10 && (min - 1.0).abs() < 1e-10, || {
            format!("P3 extremal eigenvalues ({max}, {min})")
        })?;
        let (lmax, lmin) =
            extremal_eigs(&p3, Some(&kernel), EigMethod::Lanczos).map_err(|e| e.to_string())?;
        ensure((lmax - 3.0).abs() < 1e-5 && (lmin - 1.0).abs() < 1e-5, || {
            format!("P3 Lanczos eigenvalues ({lmax}, {lmin})")
        })?;
        let pinv = PseudoInverseOp::new(&p3, Some(&kernel)).map_err(|e| e.to_string())?;
        let mut y = vec![0.0; 3];
        pinv.apply(&[1.0, 0.0, -1.0], &mut y);
        ensure((y[0] - 1.0).abs() < 1e-12, || format!("pinv apply {y:?}"))
    }));

    results.push(check("surface normals", || {
        let n = surface_normal(&SphereLevelSet, &Point3::new(0.0, 0.0, 2.0))
            .map_err(|e| e.to_string())?;
        ensure((n - Vector3::z()).norm() < 1e-14, || format!("normal {n:?}"))
    }));

    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn eoc_examples() {
        assert_eq!(eoc(&[0.4, 0.1]).unwrap(), vec![2.0]);
        assert_eq!(eoc(&[1.0, 1.0]).unwrap(), vec![0.0]);
        // Table-style rounding: log2(2.49e-1 / 7.28e-2) = 1.774.
        let e = eoc(&[2.49e-1, 7.28e-2]).unwrap();
        assert_relative_eq!(e[0], 1.774, epsilon = 5e-3);
        assert!(eoc(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn csv_format_contract() {
        let reports = vec![
            ErrorReport {
                level: 0,
                h: 0.64,
                n_dofs: 100,
                err_h1: 1.0,
                err_l2: 0.5,
                err_linf: 0.25,
                eoc_h1: None,
                eoc_l2: None,
                eoc_linf: None,
            },
            ErrorReport {
                level: 1,
                h: 0.32,
                n_dofs: 400,
                err_h1: 0.5,
                err_l2: 0.125,
                err_linf: 0.0625,
                eoc_h1: Some(1.0),
                eoc_l2: Some(2.0),
                eoc_linf: Some(2.0),
            },
        ];
        let mut buf = Vec::new();
        emit_convergence_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "level,h,ndofs,err_h1,eoc_h1,err_l2,eoc_l2,err_linf,eoc_linf"
        );
        // Level 0 has empty EOC fields.
        assert!(lines[1].contains(",,"));
        assert!(!text.contains('\r'));
        // Byte-identical on repetition.
        let mut buf2 = Vec::new();
        emit_convergence_csv(&reports, &mut buf2).unwrap();
        assert_eq!(buf, buf2);

        // Header-only output for an empty report list.
        let mut empty = Vec::new();
        emit_convergence_csv(&[], &mut empty).unwrap();
        assert_eq!(
            String::from_utf8(empty).unwrap(),
            "level,h,ndofs,err_h1,eoc_h1,err_l2,eoc_l2,err_linf,eoc_linf\n"
        );

        let cond = vec![CondReport {
            level: 0,
            delta: 0.5,
            kappa: 123.0,
            beta_e: 50.0,
            beta_f: 50.0,
            gamma: 0.01,
            jacobi: false,
        }];
        let mut buf = Vec::new();
        emit_condnum_csv(&cond, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("level,delta,kappa\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("0,5.0000000000000000e-1,"));
    }

    #[test]
    fn plotscripts_reference_csv() {
        let mut buf = Vec::new();
        emit_convergence_plotscript(Path::new("out.csv"), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("out.csv"));
        assert!(text.contains("logscale"));

        let mut buf = Vec::new();
        emit_condnum_plotscript(Path::new("k.csv"), 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("level 2"));
    }

    #[test]
    fn single_level_study_has_empty_eoc() {
        let case = builtin_cases().remove(0);
        let reports = run_convergence(&case, 1, StudyParams::default()).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].eoc_h1.is_none());
        assert!(reports[0].err_h1 > 0.0);
    }

    #[test]
    fn interpolant_has_zero_nodal_error() {
        // Coefficients from the nodal interpolant of u o p reproduce the
        // field exactly at their own (tet) nodes, and the max error over
        // the surface vertices is pure interpolation error, O(h^2).
        let case = builtin_cases().remove(0);
        let mesh = MeshSpec::new(Point3::origin(), 1.6, 6).build();
        let complex = CutComplex::build(&mesh, case.level_set.as_ref());
        let space = DgSpace::new(&mesh, &complex);
        let coeffs: Vec<f64> = space
            .node_positions
            .iter()
            .map(|p| case.solution_at_projected(p).unwrap())
            .collect();
        for (dof, node) in space.node_positions.iter().enumerate() {
            let u = case.solution_at_projected(node).unwrap();
            assert!((coeffs[dof] - u).abs() == 0.0, "nodal interpolation is exact");
        }
        let (_, _, linf) = error_norms(&complex, &space, &coeffs, &case).unwrap();
        assert!(
            linf <= 2.0 * mesh.h() * mesh.h(),
            "interpolant surface error {linf:e}"
        );

        // And the all-zero field against u = 0 has no error at all.
        struct Zero;
        impl crate::geometry::ManufacturedSolution for Zero {
            fn value(&self, _: &Point3<f64>) -> f64 {
                0.0
            }
            fn gradient(&self, _: &Point3<f64>) -> Vector3<f64> {
                Vector3::zeros()
            }
            fn hessian(&self, _: &Point3<f64>) -> nalgebra::Matrix3<f64> {
                nalgebra::Matrix3::zeros()
            }
        }
        let tc0 = TestCase {
            name: "sphere-zero",
            level_set: case.level_set.clone(),
            solution: Arc::new(Zero),
            bounding_halfwidth: 1.6,
        };
        let zeros = vec![0.0; space.n_dofs];
        let (h1, l2, linf) = error_norms(&complex, &space, &zeros, &tc0).unwrap();
        assert_eq!((h1, l2, linf), (0.0, 0.0, 0.0));
    }

    #[test]
    fn selftest_passes() {
        let results = selftest();
        for r in &results {
            assert!(r.passed, "{} failed: {}", r.name, r.detail);
        }
        assert!(results.len() >= 10);
    }

    #[test]
    fn condnum_periodicity_at_level_one() {
        // Translating by a full cell diagonal reproduces the cut pattern
        // shifted by one cube; kappa agrees to high accuracy.
        let mesh = condnum_mesh(1);
        let k0 = condnum_at(&mesh, 0.0, 50.0, 50.0, 0.01, false, EigMethod::Auto).unwrap();
        let k1 = condnum_at(&mesh, 1.0, 50.0, 50.0, 0.01, false, EigMethod::Auto).unwrap();
        assert_relative_eq!(k0, k1, max_relative = 1e-3);
    }
}
