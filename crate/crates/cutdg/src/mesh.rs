//! Structured tetrahedral background mesh of a box.
//!
//! Each cube of an `n x n x n` grid is split into six congruent
//! tetrahedra sharing the cube's main diagonal (Kuhn subdivision), which
//! is face-to-face conforming across neighboring cubes and trivially
//! quasi-uniform. Because every level is cheap to rebuild, a mesh is
//! described by its [`MeshSpec`] and no refinement hierarchy is stored.

use nalgebra::{Matrix3, Point3, Vector3};
use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::OnceLock;

/// Gradients of the four nodal P1 basis functions on a tetrahedron.
///
/// `g[i] . (p_j - p_i) = delta_ij - delta_i...`; concretely the returned
/// vectors satisfy `g[i] . (p_j - p_0) = delta_ij` for `j = 1..3` and sum
/// to zero.
pub fn p1_gradients(verts: &[Point3<f64>; 4]) -> [Vector3<f64>; 4] {
    let e = Matrix3::from_columns(&[
        verts[1] - verts[0],
        verts[2] - verts[0],
        verts[3] - verts[0],
    ]);
    let inv = e.try_inverse().expect("degenerate tetrahedron");
    let g1 = Vector3::new(inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]);
    let g2 = Vector3::new(inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]);
    let g3 = Vector3::new(inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]);
    [-(g1 + g2 + g3), g1, g2, g3]
}

/// Local corner index is binary `x + 2y + 4z`; all six tets share the
/// 0-7 diagonal and are listed with positive orientation.
pub const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 5, 1, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 6, 4, 7],
];

/// Constructive description of one mesh level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSpec {
    pub center: Point3<f64>,
    pub halfwidth: f64,
    pub n_cells: usize,
}

impl MeshSpec {
    pub fn new(center: Point3<f64>, halfwidth: f64, n_cells: usize) -> Self {
        assert!(n_cells >= 1, "n_cells must be at least 1");
        assert!(halfwidth > 0.0, "halfwidth must be positive");
        Self {
            center,
            halfwidth,
            n_cells,
        }
    }

    /// Mesh parameter: the cube edge length.
    pub fn h(&self) -> f64 {
        2.0 * self.halfwidth / self.n_cells as f64
    }

    /// Uniform refinement: doubles the cell count, halving `h` exactly.
    pub fn refine(&self) -> MeshSpec {
        MeshSpec {
            n_cells: 2 * self.n_cells,
            ..*self
        }
    }

    pub fn build(&self) -> BackgroundMesh {
        BackgroundMesh::build_box_mesh(self.center, self.halfwidth, self.n_cells)
    }
}

/// One triangular face of the tet mesh with its adjacent tets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    /// Sorted global vertex indices.
    pub vertices: [u32; 3],
    pub tet_plus: u32,
    /// `None` on the box boundary.
    pub tet_minus: Option<u32>,
}

/// Face list and per-tet face pointers, built on first use.
#[derive(Debug, Clone)]
pub struct FaceTopology {
    pub faces: Vec<Face>,
    /// `tet_faces[t][i]` is the face opposite local vertex `i` of tet `t`.
    pub tet_faces: Vec<[u32; 4]>,
}

pub struct BackgroundMesh {
    spec: MeshSpec,
    h: f64,
    vertices: Vec<Point3<f64>>,
    tets: Vec<[u32; 4]>,
    topology: OnceLock<FaceTopology>,
}

impl BackgroundMesh {
    /// Meshes `[center - halfwidth, center + halfwidth]^3` with
    /// `n_cells` cubes per axis, six tets per cube.
    pub fn build_box_mesh(center: Point3<f64>, halfwidth: f64, n_cells: usize) -> Self {
        let spec = MeshSpec::new(center, halfwidth, n_cells);
        let n = n_cells;
        let np = n + 1;
        let h = spec.h();
        let origin = center - nalgebra::Vector3::repeat(halfwidth);

        let mut vertices = Vec::with_capacity(np * np * np);
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    vertices.push(Point3::new(
                        origin.x + i as f64 * h,
                        origin.y + j as f64 * h,
                        origin.z + k as f64 * h,
                    ));
                }
            }
        }

        let vid = |i: usize, j: usize, k: usize| (i + np * (j + np * k)) as u32;
        let mut tets = Vec::with_capacity(6 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let corner = |b: usize| {
                        vid(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1))
                    };
                    for local in KUHN_TETS {
                        tets.push([
                            corner(local[0]),
                            corner(local[1]),
                            corner(local[2]),
                            corner(local[3]),
                        ]);
                    }
                }
            }
        }

        Self {
            spec,
            h,
            vertices,
            tets,
            topology: OnceLock::new(),
        }
    }

    pub fn spec(&self) -> &MeshSpec {
        &self.spec
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_cells(&self) -> usize {
        self.spec.n_cells
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[u32; 4]] {
        &self.tets
    }

    pub fn vertex(&self, v: u32) -> Point3<f64> {
        self.vertices[v as usize]
    }

    pub fn tet_vertices(&self, t: u32) -> [Point3<f64>; 4] {
        let tet = self.tets[t as usize];
        [
            self.vertices[tet[0] as usize],
            self.vertices[tet[1] as usize],
            self.vertices[tet[2] as usize],
            self.vertices[tet[3] as usize],
        ]
    }

    /// Global tet index of `(cube i, j, k, local)`.
    pub fn tet_index(&self, i: usize, j: usize, k: usize, local: usize) -> u32 {
        let n = self.spec.n_cells;
        (6 * (i + n * (j + n * k)) + local) as u32
    }

    /// Inverse of [`Self::tet_index`]: `(i, j, k, local)` of tet `t`.
    pub fn tet_cube(&self, t: u32) -> (usize, usize, usize, usize) {
        let n = self.spec.n_cells;
        let cube = t as usize / 6;
        let local = t as usize % 6;
        (cube % n, (cube / n) % n, cube / (n * n), local)
    }

    pub fn signed_volume(&self, t: u32) -> f64 {
        let [a, b, c, d] = self.tet_vertices(t);
        (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
    }

    /// Face list and tet-face pointers; built lazily because the studies
    /// only ever need face topology on the active band, which the cut
    /// extraction derives itself.
    pub fn topology(&self) -> &FaceTopology {
        self.topology.get_or_init(|| {
            let mut key_to_face: HashMap<[u32; 3], u32> = HashMap::new();
            let mut faces: Vec<Face> = Vec::new();
            let mut tet_faces = vec![[u32::MAX; 4]; self.tets.len()];
            for (t, tet) in self.tets.iter().enumerate() {
                for omit in 0..4 {
                    let mut key = [0u32; 3];
                    let mut w = 0;
                    for (r, &v) in tet.iter().enumerate() {
                        if r != omit {
                            key[w] = v;
                            w += 1;
                        }
                    }
                    key.sort_unstable();
                    let fid = *key_to_face.entry(key).or_insert_with(|| {
                        faces.push(Face {
                            vertices: key,
                            tet_plus: t as u32,
                            tet_minus: None,
                        });
                        (faces.len() - 1) as u32
                    });
                    let face = &mut faces[fid as usize];
                    if face.tet_plus != t as u32 {
                        debug_assert!(face.tet_minus.is_none());
                        face.tet_minus = Some(t as u32);
                    }
                    tet_faces[t][omit] = fid;
                }
            }
            FaceTopology { faces, tet_faces }
        })
    }

    /// Plain-text legacy unstructured-grid dump (points + tet cells).
    pub fn dump_vtk(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "background mesh h={:.6e}", self.h)?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(out, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z)?;
        }
        writeln!(out, "CELLS {} {}", self.tets.len(), 5 * self.tets.len())?;
        for t in &self.tets {
            writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
        }
        writeln!(out, "CELL_TYPES {}", self.tets.len())?;
        for _ in &self.tets {
            writeln!(out, "10")?;
        }
        Ok(())
    }
}
