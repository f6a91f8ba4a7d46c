//! Cut discontinuous Galerkin (CutDG) solver for the Laplace-Beltrami
//! operator on implicitly defined surfaces.
//!
//! The surface is given as the zero set of a smooth level-set function
//! embedded in a structured tetrahedral background mesh of a box. A
//! piecewise linear discrete surface is extracted by marching tetrahedra,
//! and the PDE is discretized with discontinuous P1 elements on the active
//! background cells, stabilized by ghost penalties on the full interior
//! faces so that the stiffness matrix conditioning is insensitive to how
//! the surface cuts the mesh.
//!
//! Pipeline: [`geometry`] (level sets, closest-point projection,
//! manufactured solutions) -> [`mesh`] (structured Kuhn tetrahedral mesh)
//! -> [`cutcomplex`] (active cells, surface elements, cut edges, interior
//! faces) -> [`dg`] (form assembly and solve) -> [`harness`] (error norms,
//! convergence and condition-number studies, CSV emission). [`linalg`]
//! holds the sparse symmetric kernel (CG, Lanczos, envelope LDL^T) and
//! [`quadrature`] the fixed triangle/segment rules.

pub mod cutcomplex;
pub mod dg;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod quadrature;

pub use cutcomplex::CutComplex;
pub use dg::{AssembledSystem, DgSpace};
pub use geometry::{ProblemVariant, TestCase};
pub use mesh::BackgroundMesh;
