//! Discontinuous P1 space on the active mesh and assembly of all forms.
//!
//! Every active tet carries four nodal dofs with no sharing. The
//! stiffness form is
//!
//! ```text
//! a_h(v,w) = sum_K (P_K grad v, P_K grad w)_K
//!          - sum_E (<grad v>, [w])_E - sum_E ([v], <grad w>)_E
//!          + sum_E beta_E/h ([v],[w])_E
//! j_h(v,w) = sum_F beta_F/h^2 ([v],[w])_F
//!          + gamma (n_F.[grad v], n_F.[grad w])_F
//! ```
//!
//! with the average flux `<sigma> = c (sigma^+ . n_E^+ - sigma^- . n_E^-)`.
//! The co-normal form of the average doubles the classical flat-case value,
//! so the scale `c` is configurable: `c = 1/2` (the default) recovers the
//! classical DG average, `c = 1` takes the expression at face value. Face
//! integrals run over entire background faces, not just their cut parts.

use crate::cutcomplex::CutComplex;
use crate::geometry::{GeometryError, ProblemVariant, TestCase};
use crate::linalg::{cg_solve, LinalgError, LinearOperator, SparseSym};
use crate::mesh::{p1_gradients, BackgroundMesh};
use crate::quadrature::{segment_rule, triangle_rule};
use nalgebra::{Point3, Vector3};
use std::collections::HashMap;
use thiserror::Error;

/// Classical DG average scale for the co-normal flux.
pub const MEAN_FACTOR_CLASSICAL: f64 = 0.5;
/// Average flux exactly as the co-normal expression is written.
pub const MEAN_FACTOR_AS_WRITTEN: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DgError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("solved residual {residual:e} exceeds tolerance {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
}

/// Affine nodal P1 basis of one tet: `lambda_i(x) = coeff[i] + grad[i].x`.
#[derive(Debug, Clone)]
pub struct TetBasis {
    pub coeff: [f64; 4],
    pub grad: [Vector3<f64>; 4],
}

impl TetBasis {
    pub fn from_vertices(verts: &[Point3<f64>; 4]) -> Self {
        let grad = p1_gradients(verts);
        let mut coeff = [0.0; 4];
        for i in 0..4 {
            coeff[i] = if i == 0 { 1.0 } else { 0.0 } - grad[i].dot(&verts[0].coords);
        }
        Self { coeff, grad }
    }

    #[inline]
    pub fn eval(&self, i: usize, x: &Point3<f64>) -> f64 {
        self.coeff[i] + self.grad[i].dot(&x.coords)
    }
}

/// Element-local discontinuous P1 space over the active tets.
pub struct DgSpace {
    pub active_tets: Vec<u32>,
    pub basis: Vec<TetBasis>,
    /// One entry per dof: the background vertex the dof is nodal at.
    pub node_positions: Vec<Point3<f64>>,
    pub n_dofs: usize,
    rank_of_tet: HashMap<u32, u32>,
}

impl DgSpace {
    pub fn new(mesh: &BackgroundMesh, complex: &CutComplex) -> Self {
        let mut basis = Vec::with_capacity(complex.active_tets.len());
        let mut node_positions = Vec::with_capacity(4 * complex.active_tets.len());
        let mut rank_of_tet = HashMap::with_capacity(complex.active_tets.len());
        for (rank, &t) in complex.active_tets.iter().enumerate() {
            let verts = mesh.tet_vertices(t);
            basis.push(TetBasis::from_vertices(&verts));
            node_positions.extend_from_slice(&verts);
            rank_of_tet.insert(t, rank as u32);
        }
        Self {
            active_tets: complex.active_tets.clone(),
            n_dofs: 4 * basis.len(),
            basis,
            node_positions,
            rank_of_tet,
        }
    }

    /// Fixture constructor from explicit tet vertices.
    pub fn from_raw(active_tets: Vec<u32>, tet_vertices: &[[Point3<f64>; 4]]) -> Self {
        assert_eq!(active_tets.len(), tet_vertices.len());
        let basis: Vec<TetBasis> = tet_vertices.iter().map(TetBasis::from_vertices).collect();
        let node_positions = tet_vertices.iter().flatten().copied().collect();
        let rank_of_tet = active_tets
            .iter()
            .enumerate()
            .map(|(r, &t)| (t, r as u32))
            .collect();
        Self {
            n_dofs: 4 * active_tets.len(),
            active_tets,
            basis,
            node_positions,
            rank_of_tet,
        }
    }

    pub fn rank_of_tet(&self, t: u32) -> u32 {
        self.rank_of_tet[&t]
    }

    pub fn dofs_of_rank(&self, rank: u32) -> [u32; 4] {
        [4 * rank, 4 * rank + 1, 4 * rank + 2, 4 * rank + 3]
    }

    /// Nodal interpolant of a scalar field (dof value = field at node).
    pub fn nodal_interpolant(&self, f: impl Fn(&Point3<f64>) -> f64) -> Vec<f64> {
        self.node_positions.iter().map(|p| f(p)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SystemParams {
    pub beta_e: f64,
    pub beta_f: f64,
    pub gamma: f64,
    pub mean_factor: f64,
    pub h: f64,
}

/// Stiffness `a_h + j_h`, surface mass, load and mean-value vector.
pub struct AssembledSystem {
    pub stiffness: SparseSym,
    pub mass: SparseSym,
    pub load: Vec<f64>,
    /// `m_i = int_Gamma_h basis_i`; `sum m_i = |Gamma_h|`.
    pub mean_vector: Vec<f64>,
    pub params: SystemParams,
    /// Measured `max |A_ij - A_ji|` of the assembled matrices.
    pub stiffness_asymmetry: f64,
    pub mass_asymmetry: f64,
}

impl AssembledSystem {
    pub fn surface_measure(&self) -> f64 {
        self.mean_vector.iter().sum()
    }

    pub fn n_dofs(&self) -> usize {
        self.load.len()
    }
}

/// The consistency/penalty form on the surface elements and cut edges.
///
/// Plus/minus labels follow the lower-element-index rule; the assembled
/// matrix is invariant under flipping them. Returns the matrix and its
/// measured asymmetry.
pub fn assemble_ah(
    complex: &CutComplex,
    space: &DgSpace,
    beta_e: f64,
    mean_factor: f64,
) -> (SparseSym, f64) {
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();

    // Element gradient term.
    for elem in &complex.surface_elements {
        let rank = space.rank_of_tet(elem.parent_tet);
        let dofs = space.dofs_of_rank(rank);
        let basis = &space.basis[rank as usize];
        let n = elem.tangent_normal;
        let mut pg = [Vector3::zeros(); 4];
        for i in 0..4 {
            pg[i] = basis.grad[i] - n * n.dot(&basis.grad[i]);
        }
        for i in 0..4 {
            for j in 0..4 {
                triplets.push((dofs[i], dofs[j], pg[i].dot(&pg[j]) * elem.area));
            }
        }
    }

    // Edge terms: consistency pair and edge penalty.
    let rule = segment_rule(3).expect("supported segment degree");
    for edge in &complex.cut_edges {
        let ep = &complex.surface_elements[edge.plus_element as usize];
        let em = &complex.surface_elements[edge.minus_element as usize];
        let sides = [
            (ep.parent_tet, 1.0, edge.conormal_plus),
            (em.parent_tet, -1.0, edge.conormal_minus),
        ];
        let mut dofs = [0u32; 8];
        let mut mean_c = [0.0f64; 8];
        let mut bases: [&TetBasis; 2] = [&space.basis[0], &space.basis[0]];
        let mut signs = [0.0f64; 2];
        for (s, &(tet, sign, conormal)) in sides.iter().enumerate() {
            let rank = space.rank_of_tet(tet);
            let b = &space.basis[rank as usize];
            let d = space.dofs_of_rank(rank);
            for i in 0..4 {
                dofs[4 * s + i] = d[i];
                // <grad phi> of a one-sided basis function.
                mean_c[4 * s + i] = mean_factor * sign * b.grad[i].dot(&conormal);
            }
            bases[s] = b;
            signs[s] = sign;
        }

        let mut local = [[0.0f64; 8]; 8];
        let penalty = beta_e / complex.h;
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let x = Point3::from(
                bary[0] * edge.endpoints[0].coords + bary[1] * edge.endpoints[1].coords,
            );
            let mut jump = [0.0f64; 8];
            for s in 0..2 {
                for i in 0..4 {
                    jump[4 * s + i] = signs[s] * bases[s].eval(i, &x);
                }
            }
            let wq = w * edge.length;
            for k in 0..8 {
                for l in 0..8 {
                    local[k][l] += wq
                        * (-mean_c[k] * jump[l] - jump[k] * mean_c[l]
                            + penalty * jump[k] * jump[l]);
                }
            }
        }
        for k in 0..8 {
            for l in 0..8 {
                triplets.push((dofs[k], dofs[l], local[k][l]));
            }
        }
    }

    SparseSym::from_triplets_symmetric(space.n_dofs, triplets)
}

/// Ghost-penalty form over full interior faces of the active mesh.
pub fn assemble_jh(
    complex: &CutComplex,
    space: &DgSpace,
    beta_f: f64,
    gamma: f64,
) -> (SparseSym, f64) {
    let rule = triangle_rule(2).expect("supported triangle degree");
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    let value_penalty = beta_f / (complex.h * complex.h);

    for face in &complex.interior_faces {
        let sides = [(face.tet_plus, 1.0), (face.tet_minus, -1.0)];
        let mut dofs = [0u32; 8];
        let mut grad_jump = [0.0f64; 8];
        let mut bases: [&TetBasis; 2] = [&space.basis[0], &space.basis[0]];
        let mut signs = [0.0f64; 2];
        for (s, &(tet, sign)) in sides.iter().enumerate() {
            let rank = space.rank_of_tet(tet);
            let b = &space.basis[rank as usize];
            let d = space.dofs_of_rank(rank);
            for i in 0..4 {
                dofs[4 * s + i] = d[i];
                grad_jump[4 * s + i] = sign * b.grad[i].dot(&face.normal);
            }
            bases[s] = b;
            signs[s] = sign;
        }

        let mut local = [[0.0f64; 8]; 8];
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let x = Point3::from(
                bary[0] * face.vertices[0].coords
                    + bary[1] * face.vertices[1].coords
                    + bary[2] * face.vertices[2].coords,
            );
            let mut jump = [0.0f64; 8];
            for s in 0..2 {
                for i in 0..4 {
                    jump[4 * s + i] = signs[s] * bases[s].eval(i, &x);
                }
            }
            let wq = w * face.area;
            for k in 0..8 {
                for l in 0..8 {
                    local[k][l] += wq * value_penalty * jump[k] * jump[l];
                }
            }
        }
        // The normal gradient jump is constant on the face.
        for k in 0..8 {
            for l in 0..8 {
                local[k][l] += gamma * face.area * grad_jump[k] * grad_jump[l];
                triplets.push((dofs[k], dofs[l], local[k][l]));
            }
        }
    }

    SparseSym::from_triplets_symmetric(space.n_dofs, triplets)
}

/// Surface mass matrix `(v, w)_{Gamma_h}`.
pub fn assemble_mass(complex: &CutComplex, space: &DgSpace) -> (SparseSym, f64) {
    let rule = triangle_rule(2).expect("supported triangle degree");
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    for elem in &complex.surface_elements {
        let rank = space.rank_of_tet(elem.parent_tet);
        let dofs = space.dofs_of_rank(rank);
        let basis = &space.basis[rank as usize];
        let mut local = [[0.0f64; 4]; 4];
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let x = Point3::from(
                bary[0] * elem.vertices[0].coords
                    + bary[1] * elem.vertices[1].coords
                    + bary[2] * elem.vertices[2].coords,
            );
            let vals = [
                basis.eval(0, &x),
                basis.eval(1, &x),
                basis.eval(2, &x),
                basis.eval(3, &x),
            ];
            let wq = w * elem.area;
            for i in 0..4 {
                for j in 0..4 {
                    local[i][j] += wq * vals[i] * vals[j];
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                triplets.push((dofs[i], dofs[j], local[i][j]));
            }
        }
    }
    SparseSym::from_triplets_symmetric(space.n_dofs, triplets)
}

/// Load vector `l(v) = (f o p, v)_{Gamma_h}` by degree-4 quadrature.
pub fn assemble_load(
    complex: &CutComplex,
    space: &DgSpace,
    tc: &TestCase,
    variant: ProblemVariant,
) -> Result<Vec<f64>, GeometryError> {
    let rule = triangle_rule(4).expect("supported triangle degree");
    let mut load = vec![0.0f64; space.n_dofs];
    for elem in &complex.surface_elements {
        let rank = space.rank_of_tet(elem.parent_tet);
        let dofs = space.dofs_of_rank(rank);
        let basis = &space.basis[rank as usize];
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let x = Point3::from(
                bary[0] * elem.vertices[0].coords
                    + bary[1] * elem.vertices[1].coords
                    + bary[2] * elem.vertices[2].coords,
            );
            let f = tc.rhs_at_projected(&x, variant)?;
            let wq = w * elem.area;
            for i in 0..4 {
                load[dofs[i] as usize] += wq * f * basis.eval(i, &x);
            }
        }
    }
    Ok(load)
}

/// Mean-value constraint vector `m_i = int_{Gamma_h} basis_i`.
pub fn assemble_mean_vector(complex: &CutComplex, space: &DgSpace) -> Vec<f64> {
    let rule = triangle_rule(2).expect("supported triangle degree");
    let mut mean = vec![0.0f64; space.n_dofs];
    for elem in &complex.surface_elements {
        let rank = space.rank_of_tet(elem.parent_tet);
        let dofs = space.dofs_of_rank(rank);
        let basis = &space.basis[rank as usize];
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let x = Point3::from(
                bary[0] * elem.vertices[0].coords
                    + bary[1] * elem.vertices[1].coords
                    + bary[2] * elem.vertices[2].coords,
            );
            let wq = w * elem.area;
            for i in 0..4 {
                mean[dofs[i] as usize] += wq * basis.eval(i, &x);
            }
        }
    }
    mean
}

/// Assemble the complete system for one test case.
pub fn assemble_system(
    complex: &CutComplex,
    space: &DgSpace,
    tc: &TestCase,
    params: SystemParams,
    variant: ProblemVariant,
) -> Result<AssembledSystem, GeometryError> {
    let (ah, asym_a) = assemble_ah(complex, space, params.beta_e, params.mean_factor);
    let (jh, asym_j) = assemble_jh(complex, space, params.beta_f, params.gamma);
    let (mass, mass_asymmetry) = assemble_mass(complex, space);
    let load = assemble_load(complex, space, tc, variant)?;
    let mean_vector = assemble_mean_vector(complex, space);
    Ok(AssembledSystem {
        stiffness: ah.add(&jh),
        mass,
        load,
        mean_vector,
        params,
        stiffness_asymmetry: asym_a.max(asym_j),
        mass_asymmetry,
    })
}

/// `A + sigma m m^T`: rank-one regularization of the singular pure
/// problem around an SPD solve.
struct RankOneAugmented<'a> {
    a: &'a SparseSym,
    m: &'a [f64],
    sigma: f64,
}

impl LinearOperator for RankOneAugmented<'_> {
    fn dim(&self) -> usize {
        LinearOperator::dim(self.a)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.a.apply(x, y);
        let mx: f64 = self.m.iter().zip(x).map(|(a, b)| a * b).sum();
        for (yi, mi) in y.iter_mut().zip(self.m) {
            *yi += self.sigma * mx * mi;
        }
    }
}

pub struct SolveReport {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Relative CG tolerance used by [`solve`].
pub const SOLVE_TOL: f64 = 1e-10;

/// Solve the assembled system with Jacobi-preconditioned CG.
///
/// The reaction variant solves `(A + M) u = b`. The pure variant solves
/// the zero-mean constrained problem through the SPD regularization
/// `A + (1/|Gamma_h|) m m^T`, then shifts the constant component out so
/// the returned coefficients satisfy `m . u = 0`.
pub fn solve(system: &AssembledSystem, variant: ProblemVariant) -> Result<SolveReport, DgError> {
    let n = system.n_dofs();
    let max_iter = 20 * n.max(1);
    match variant {
        ProblemVariant::Reaction => {
            let full = system.stiffness.add(&system.mass);
            let inv_diag = full.jacobi_inverse_diagonal();
            let result = cg_solve(&full, &system.load, Some(&inv_diag), None, SOLVE_TOL, max_iter)?;
            Ok(SolveReport {
                coefficients: result.x,
                iterations: result.iterations,
                rel_residual: result.rel_residual,
            })
        }
        ProblemVariant::Pure => {
            let area = system.surface_measure();
            let sigma = 1.0 / area;
            let op = RankOneAugmented {
                a: &system.stiffness,
                m: &system.mean_vector,
                sigma,
            };
            let inv_diag: Vec<f64> = system
                .stiffness
                .diag()
                .iter()
                .zip(&system.mean_vector)
                .map(|(&d, &mi)| {
                    let dd = d + sigma * mi * mi;
                    if dd > 0.0 {
                        1.0 / dd
                    } else {
                        1.0
                    }
                })
                .collect();
            let result = cg_solve(&op, &system.load, Some(&inv_diag), None, SOLVE_TOL, max_iter)?;
            let mut u = result.x;
            let mu: f64 = system.mean_vector.iter().zip(&u).map(|(m, x)| m * x).sum();
            let shift = mu / area;
            for ui in &mut u {
                *ui -= shift;
            }
            Ok(SolveReport {
                coefficients: u,
                iterations: result.iterations,
                rel_residual: result.rel_residual,
            })
        }
    }
}

/// Dense direct solve for small systems; the iterative-path oracle.
pub fn solve_dense(
    system: &AssembledSystem,
    variant: ProblemVariant,
) -> Result<Vec<f64>, DgError> {
    let n = system.n_dofs();
    assert!(n <= 3000, "dense fallback is for desk-scale systems");
    match variant {
        ProblemVariant::Reaction => {
            let full = system.stiffness.add(&system.mass).to_dense();
            let b = nalgebra::DVector::from_column_slice(&system.load);
            let x = full
                .lu()
                .solve(&b)
                .expect("reaction system is positive definite");
            Ok(x.iter().copied().collect())
        }
        ProblemVariant::Pure => {
            // Bordered saddle system [[A, m], [m^T, 0]].
            let a = system.stiffness.to_dense();
            let mut big = nalgebra::DMatrix::zeros(n + 1, n + 1);
            big.view_mut((0, 0), (n, n)).copy_from(&a);
            for i in 0..n {
                big[(i, n)] = system.mean_vector[i];
                big[(n, i)] = system.mean_vector[i];
            }
            let mut rhs = nalgebra::DVector::zeros(n + 1);
            for i in 0..n {
                rhs[i] = system.load[i];
            }
            let x = big.lu().solve(&rhs).expect("bordered system nonsingular");
            Ok(x.iter().take(n).copied().collect())
        }
    }
}
