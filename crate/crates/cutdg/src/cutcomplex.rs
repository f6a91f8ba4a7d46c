//! Extraction of the discrete surface and all cut-geometry entities.
//!
//! The nodal level-set values induce a piecewise linear function on the
//! background mesh whose zero set is a polygonal surface. Marching
//! tetrahedra produces per tet either one triangle (3-1 sign split) or a
//! planar quad split into two triangles along its shorter diagonal (2-2
//! split). The complex records the active tets, the surface elements,
//! the cut edges shared between elements in neighboring tets (with one
//! outward co-normal per side) and the full interior faces of the active
//! mesh that carry the ghost-penalty terms.

use crate::geometry::LevelSet;
use crate::mesh::{p1_gradients, BackgroundMesh};
use nalgebra::{Point3, Vector3};
use std::collections::HashMap;
use std::io::{self, Write};

/// Nodal values with magnitude below `SNAP_FACTOR * h` are replaced by
/// `+SNAP_FACTOR * h` so no vertex lies exactly on the surface.
const SNAP_FACTOR: f64 = 1e-12;
/// Surface elements with area below `SLIVER_FACTOR * h^2` are discarded.
const SLIVER_FACTOR: f64 = 1e-14;
/// Cut edges shorter than `SLIVER_FACTOR * h` are discarded.
const EDGE_FACTOR: f64 = 1e-14;

/// One triangle of the discrete surface inside a background tet.
#[derive(Debug, Clone)]
pub struct SurfaceElement {
    pub parent_tet: u32,
    /// Vertices on the zero set, wound counterclockwise around the normal.
    pub vertices: [Point3<f64>; 3],
    pub area: f64,
    /// Unit element-plane normal, oriented along the level-set gradient.
    pub tangent_normal: Vector3<f64>,
}

impl SurfaceElement {
    pub fn centroid(&self) -> Point3<f64> {
        Point3::from(
            (self.vertices[0].coords + self.vertices[1].coords + self.vertices[2].coords) / 3.0,
        )
    }
}

/// Segment shared by two surface elements in distinct tets.
#[derive(Debug, Clone)]
pub struct CutEdge {
    pub endpoints: [Point3<f64>; 2],
    pub plus_element: u32,
    pub minus_element: u32,
    /// In the plus element's plane, perpendicular to the edge, outward.
    pub conormal_plus: Vector3<f64>,
    pub conormal_minus: Vector3<f64>,
    pub length: f64,
    /// Sorted vertex triple of the background face hosting the segment.
    pub parent_face: [u32; 3],
}

impl CutEdge {
    pub fn midpoint(&self) -> Point3<f64> {
        nalgebra::center(&self.endpoints[0], &self.endpoints[1])
    }
}

/// Full background face between two active tets (ghost-penalty support).
#[derive(Debug, Clone)]
pub struct InteriorFace {
    /// Sorted global vertex indices identifying the face.
    pub key: [u32; 3],
    pub vertices: [Point3<f64>; 3],
    pub tet_plus: u32,
    pub tet_minus: u32,
    /// Unit normal pointing from the plus tet into the minus tet.
    pub normal: Vector3<f64>,
    pub area: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CutComplex {
    pub h: f64,
    /// Tets hosting at least one surface element, ascending.
    pub active_tets: Vec<u32>,
    pub surface_elements: Vec<SurfaceElement>,
    pub cut_edges: Vec<CutEdge>,
    pub interior_faces: Vec<InteriorFace>,
    /// Snapped per-vertex level-set values.
    pub nodal_levelset: Vec<f64>,
    /// Boundary segments with no partner (nonzero only when the surface
    /// leaves the box or a partner element was dropped as a sliver).
    pub unmatched_segments: usize,
    /// Length of the longest unmatched segment; sliver-induced orphans
    /// are at the snapping scale, box clipping leaves O(h) segments.
    pub unmatched_max_length: f64,
    pub dropped_slivers: usize,
    pub dropped_edges: usize,
}

/// Vertex interpolation of the level set, with exact zeros (and values
/// indistinguishable from zero) snapped to a positive epsilon.
pub fn interpolate_levelset(mesh: &BackgroundMesh, ls: &dyn LevelSet) -> Vec<f64> {
    let eps = SNAP_FACTOR * mesh.h();
    mesh.vertices()
        .iter()
        .map(|v| {
            let val = ls.value(v);
            if val.abs() < eps {
                eps
            } else {
                val
            }
        })
        .collect()
}

/// One or two triangles produced by cutting a single tet, with the
/// boundary segments each triangle contributes on the tet's faces.
#[derive(Debug)]
pub(crate) struct CutTriangle {
    pub vertices: [Point3<f64>; 3],
    pub segments: Vec<([Point3<f64>; 2], [u32; 3])>,
}

/// Marching-tetrahedra kernel for one tet. `None` when uncut.
///
/// Edge crossings are computed from the globally sorted vertex pair so
/// that the two tets sharing an edge produce bit-identical points.
pub(crate) fn cut_tet(
    verts: &[Point3<f64>; 4],
    global: &[u32; 4],
    values: &[f64; 4],
) -> Option<Vec<CutTriangle>> {
    let crossing = |i: usize, j: usize| -> Point3<f64> {
        let (a, b) = if global[i] < global[j] { (i, j) } else { (j, i) };
        let t = values[a] / (values[a] - values[b]);
        verts[a] + t * (verts[b] - verts[a])
    };
    let face_key = |omit: usize| -> [u32; 3] {
        let mut key = [0u32; 3];
        let mut w = 0;
        for (i, &g) in global.iter().enumerate() {
            if i != omit {
                key[w] = g;
                w += 1;
            }
        }
        key.sort_unstable();
        key
    };

    let negatives: Vec<usize> = (0..4).filter(|&i| values[i] < 0.0).collect();
    match negatives.len() {
        0 | 4 => None,
        1 | 3 => {
            // Lone vertex against the other three: one triangle.
            let lone = if negatives.len() == 1 {
                negatives[0]
            } else {
                (0..4).find(|i| !negatives.contains(i)).unwrap()
            };
            let others: Vec<usize> = (0..4).filter(|&i| i != lone).collect();
            let x: Vec<Point3<f64>> = others.iter().map(|&m| crossing(lone, m)).collect();
            // Segment (x_i, x_j) lies on the face spanned by lone vertex
            // and the two crossed edges, i.e. omitting the third vertex.
            let segments = vec![
                ([x[0], x[1]], face_key(others[2])),
                ([x[1], x[2]], face_key(others[0])),
                ([x[0], x[2]], face_key(others[1])),
            ];
            Some(vec![CutTriangle {
                vertices: [x[0], x[1], x[2]],
                segments,
            }])
        }
        2 => {
            // Planar quad; cycle order keeps consecutive crossings on a
            // common tet face.
            let (a, b) = (negatives[0], negatives[1]);
            let positives: Vec<usize> = (0..4).filter(|i| !negatives.contains(i)).collect();
            let (c, d) = (positives[0], positives[1]);
            let e1 = crossing(a, c);
            let e2 = crossing(a, d);
            let e3 = crossing(b, d);
            let e4 = crossing(b, c);
            let s12 = ([e1, e2], face_key(b));
            let s23 = ([e2, e3], face_key(c));
            let s34 = ([e3, e4], face_key(a));
            let s41 = ([e4, e1], face_key(d));
            // Split along the shorter diagonal for bounded aspect ratio.
            if (e1 - e3).norm() <= (e2 - e4).norm() {
                Some(vec![
                    CutTriangle {
                        vertices: [e1, e2, e3],
                        segments: vec![s12, s23],
                    },
                    CutTriangle {
                        vertices: [e1, e3, e4],
                        segments: vec![s34, s41],
                    },
                ])
            } else {
                Some(vec![
                    CutTriangle {
                        vertices: [e2, e3, e4],
                        segments: vec![s23, s34],
                    },
                    CutTriangle {
                        vertices: [e2, e4, e1],
                        segments: vec![s41, s12],
                    },
                ])
            }
        }
        _ => unreachable!(),
    }
}

/// Extract the cut complex from nodal level-set values.
///
/// Entity ordering is a pure function of tet index order. Co-normals are
/// left zeroed; [`compute_conormals`] fills them.
pub fn extract(mesh: &BackgroundMesh, nodal_levelset: Vec<f64>) -> CutComplex {
    let h = mesh.h();
    let sliver_area = SLIVER_FACTOR * h * h;

    let mut complex = CutComplex {
        h,
        nodal_levelset,
        ..Default::default()
    };
    // (face key, element, endpoints): per-element boundary segments in
    // deterministic emission order.
    let mut segment_records: Vec<([u32; 3], u32, [Point3<f64>; 2])> = Vec::new();

    for (t, tet) in mesh.tets().iter().enumerate() {
        let values = [
            complex.nodal_levelset[tet[0] as usize],
            complex.nodal_levelset[tet[1] as usize],
            complex.nodal_levelset[tet[2] as usize],
            complex.nodal_levelset[tet[3] as usize],
        ];
        let mixed = (values[0] < 0.0 || values[1] < 0.0 || values[2] < 0.0 || values[3] < 0.0)
            && (values[0] > 0.0 || values[1] > 0.0 || values[2] > 0.0 || values[3] > 0.0);
        if !mixed {
            continue;
        }
        let verts = mesh.tet_vertices(t as u32);
        let Some(triangles) = cut_tet(&verts, tet, &values) else {
            continue;
        };

        // Interpolant gradient orients the element normals.
        let grads = p1_gradients(&verts);
        let gdir: Vector3<f64> = (0..4).map(|i| values[i] * grads[i]).sum();

        let first_element = complex.surface_elements.len();
        for tri in triangles {
            let mut v = tri.vertices;
            let cross = (v[1] - v[0]).cross(&(v[2] - v[0]));
            let area = 0.5 * cross.norm();
            if area < sliver_area {
                complex.dropped_slivers += 1;
                continue;
            }
            let mut normal = cross / cross.norm();
            if normal.dot(&gdir) < 0.0 {
                v.swap(1, 2);
                normal = -normal;
            }
            let elem = complex.surface_elements.len() as u32;
            complex.surface_elements.push(SurfaceElement {
                parent_tet: t as u32,
                vertices: v,
                area,
                tangent_normal: normal,
            });
            for (pts, key) in tri.segments {
                segment_records.push((key, elem, pts));
            }
        }
        if complex.surface_elements.len() > first_element {
            complex.active_tets.push(t as u32);
        }
    }

    // Pair boundary segments through their host face; emission order is
    // the order in which the second partner appears.
    let mut pending: HashMap<[u32; 3], (u32, [Point3<f64>; 2])> = HashMap::new();
    for (key, elem, pts) in segment_records {
        if let Some((other_elem, other_pts)) = pending.remove(&key) {
            let (plus, plus_pts, minus) = if other_elem < elem {
                (other_elem, other_pts, elem)
            } else {
                (elem, pts, other_elem)
            };
            let mut endpoints = plus_pts;
            if (endpoints[1].coords.as_slice()) < (endpoints[0].coords.as_slice()) {
                endpoints.swap(0, 1);
            }
            let length = (endpoints[1] - endpoints[0]).norm();
            complex.cut_edges.push(CutEdge {
                endpoints,
                plus_element: plus,
                minus_element: minus,
                conormal_plus: Vector3::zeros(),
                conormal_minus: Vector3::zeros(),
                length,
                parent_face: key,
            });
        } else {
            pending.insert(key, (elem, pts));
        }
    }
    complex.unmatched_segments = pending.len();
    complex.unmatched_max_length = pending
        .values()
        .map(|(_, pts)| (pts[1] - pts[0]).norm())
        .fold(0.0, f64::max);

    // Interior faces of the active mesh: faces shared by two active tets.
    let mut pending_faces: HashMap<[u32; 3], u32> = HashMap::new();
    for &t in &complex.active_tets {
        let tet = mesh.tets()[t as usize];
        for omit in 0..4 {
            let mut key = [0u32; 3];
            let mut w = 0;
            for (i, &g) in tet.iter().enumerate() {
                if i != omit {
                    key[w] = g;
                    w += 1;
                }
            }
            key.sort_unstable();
            if let Some(t_plus) = pending_faces.remove(&key) {
                let a = mesh.vertex(key[0]);
                let b = mesh.vertex(key[1]);
                let c = mesh.vertex(key[2]);
                let cross = (b - a).cross(&(c - a));
                let area = 0.5 * cross.norm();
                let mut normal = cross / cross.norm();
                // Orient away from the plus tet's opposite vertex.
                let plus_tet = mesh.tets()[t_plus as usize];
                let opp = plus_tet
                    .iter()
                    .copied()
                    .find(|v| !key.contains(v))
                    .expect("face vertices subset of tet");
                if normal.dot(&(mesh.vertex(opp) - a)) > 0.0 {
                    normal = -normal;
                }
                complex.interior_faces.push(InteriorFace {
                    key,
                    vertices: [a, b, c],
                    tet_plus: t_plus,
                    tet_minus: t,
                    normal,
                    area,
                });
            } else {
                pending_faces.insert(key, t);
            }
        }
    }

    complex
}

/// Populate the two outward co-normals of every cut edge; edges shorter
/// than the degeneracy threshold are dropped and counted.
pub fn compute_conormals(complex: &mut CutComplex) {
    let min_len = EDGE_FACTOR * complex.h;
    let elements = std::mem::take(&mut complex.surface_elements);
    let mut dropped = 0usize;
    complex.cut_edges.retain_mut(|edge| {
        if edge.length < min_len {
            dropped += 1;
            return false;
        }
        let tangent = (edge.endpoints[1] - edge.endpoints[0]) / edge.length;
        let mid = edge.midpoint();
        let conormal_of = |elem: &SurfaceElement| -> Vector3<f64> {
            let mut q = tangent.cross(&elem.tangent_normal);
            q /= q.norm();
            if q.dot(&(mid - elem.centroid())) < 0.0 {
                q = -q;
            }
            q
        };
        edge.conormal_plus = conormal_of(&elements[edge.plus_element as usize]);
        edge.conormal_minus = conormal_of(&elements[edge.minus_element as usize]);
        true
    });
    complex.dropped_edges += dropped;
    complex.surface_elements = elements;
}

impl CutComplex {
    /// Full pipeline: interpolate, extract, compute co-normals.
    pub fn build(mesh: &BackgroundMesh, ls: &dyn LevelSet) -> CutComplex {
        let nodal = interpolate_levelset(mesh, ls);
        let mut complex = extract(mesh, nodal);
        compute_conormals(&mut complex);
        complex
    }

    /// Total area of the discrete surface.
    pub fn surface_area(&self) -> f64 {
        self.surface_elements.iter().map(|e| e.area).sum()
    }

    /// Triangle-soup dump: nine coordinates per line.
    pub fn dump_surface(&self, out: &mut impl Write) -> io::Result<()> {
        for e in &self.surface_elements {
            let v = &e.vertices;
            writeln!(
                out,
                "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                v[0].x, v[0].y, v[0].z, v[1].x, v[1].y, v[1].z, v[2].x, v[2].y, v[2].z
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PlaneLevelSet, SphereLevelSet};
    use crate::mesh::MeshSpec;
    use nalgebra::Point3;

    fn reference_tet() -> ([Point3<f64>; 4], [u32; 4]) {
        (
            [
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            [0, 1, 2, 3],
        )
    }

    #[test]
    fn reference_tet_single_triangle() {
        let (verts, global) = reference_tet();
        let tris = cut_tet(&verts, &global, &[-1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tris.len(), 1);
        let t = &tris[0];
        let expect = [
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(0.0, 0.5, 0.0),
            Point3::new(0.0, 0.0, 0.5),
        ];
        for (got, want) in t.vertices.iter().zip(&expect) {
            assert!((got - want).norm() < 1e-15);
        }
        let cross = (t.vertices[1] - t.vertices[0]).cross(&(t.vertices[2] - t.vertices[0]));
        assert!((0.5 * cross.norm() - 3.0_f64.sqrt() / 8.0).abs() < 1e-15);
        assert_eq!(t.segments.len(), 3);
    }

    #[test]
    fn reference_tet_quad_split() {
        let (verts, global) = reference_tet();
        let tris = cut_tet(&verts, &global, &[-1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tris.len(), 2);
        // Quad area by the cross-diagonal formula equals the two-triangle sum.
        let area = tris
            .iter()
            .map(|t| {
                0.5 * (t.vertices[1] - t.vertices[0])
                    .cross(&(t.vertices[2] - t.vertices[0]))
                    .norm()
            })
            .sum::<f64>();
        // Crossings: (0,2)->(0,.5,0), (0,3)->(0,0,.5), (1,3)->(.5,0,.5), (1,2)->(.5,.5,0).
        let e1: Point3<f64> = Point3::new(0.0, 0.5, 0.0);
        let e2 = Point3::new(0.0, 0.0, 0.5);
        let e3 = Point3::new(0.5, 0.0, 0.5);
        let e4 = Point3::new(0.5, 0.5, 0.0);
        let quad_area = 0.5 * (e3 - e1).cross(&(e4 - e2)).norm();
        assert!((area - quad_area).abs() < 1e-14);
        // Each triangle contributes exactly two boundary segments (the
        // diagonal is interior to the tet and never a cut edge).
        assert!(tris.iter().all(|t| t.segments.len() == 2));
    }

    #[test]
    fn uncut_tet_yields_nothing() {
        let (verts, global) = reference_tet();
        assert!(cut_tet(&verts, &global, &[1.0, 1.0, 1.0, 1.0]).is_none());
        assert!(cut_tet(&verts, &global, &[-2.0, -1.0, -1.0, -0.5]).is_none());
    }

    #[test]
    fn snapping_perturbs_exact_zeros() {
        let mesh = MeshSpec::new(Point3::origin(), 0.5, 2).build();
        let plane = PlaneLevelSet {
            normal: nalgebra::Vector3::z(),
            offset: 0.0,
        };
        let nodal = interpolate_levelset(&mesh, &plane);
        let eps = 1e-12 * mesh.h();
        for (v, &val) in mesh.vertices().iter().zip(&nodal) {
            if v.z.abs() < 1e-15 {
                assert_eq!(val, eps);
            } else {
                assert!(val != 0.0);
            }
        }
    }

    #[test]
    fn interpolate_matches_levelset_values() {
        let mesh = MeshSpec::new(Point3::origin(), 1.6, 2).build();
        let nodal = interpolate_levelset(&mesh, &SphereLevelSet);
        // Vertex (1.6, 0, 0) carries 1.6^2 - 1 = 1.56.
        let idx = mesh
            .vertices()
            .iter()
            .position(|v| (v - Point3::new(1.6, 0.0, 0.0)).norm() < 1e-14)
            .unwrap();
        assert!((nodal[idx] - 1.56).abs() < 1e-14);
    }

    #[test]
    fn constant_levelset_gives_empty_complex() {
        let mesh = MeshSpec::new(Point3::origin(), 0.5, 2).build();
        let nodal = vec![1.0; mesh.vertices().len()];
        let complex = extract(&mesh, nodal);
        assert!(complex.active_tets.is_empty());
        assert!(complex.surface_elements.is_empty());
        assert_eq!(complex.surface_area(), 0.0);
    }

    #[test]
    fn plane_slice_area_is_exact() {
        // z = 0.3 slice of the unit box: cross-section area 1.
        let mesh = MeshSpec::new(Point3::origin(), 0.5, 4).build();
        let plane = PlaneLevelSet {
            normal: nalgebra::Vector3::z(),
            offset: 0.3,
        };
        let complex = CutComplex::build(&mesh, &plane);
        assert!((complex.surface_area() - 1.0).abs() < 1e-12);
        // The slice is open at the box walls: its rim segments have no
        // partner, and only those stay unmatched (4n per side pattern).
        assert_eq!(complex.unmatched_segments, 32);
        // Globally flat surface: co-normal pairs are anti-parallel.
        for e in &complex.cut_edges {
            assert!(
                (e.conormal_plus + e.conormal_minus).norm() < 1e-12,
                "co-normals not anti-parallel on a flat surface"
            );
        }
    }

    #[test]
    fn single_triangle_outward_conormal() {
        // In-plane perpendicular pointing away from the centroid.
        let elem = SurfaceElement {
            parent_tet: 0,
            vertices: [
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.5, 1.0, 0.0),
            ],
            area: 0.5,
            tangent_normal: nalgebra::Vector3::z(),
        };
        let tangent = nalgebra::Vector3::x();
        let mid = Point3::new(0.5, 0.0, 0.0);
        let mut q = tangent.cross(&elem.tangent_normal);
        q /= q.norm();
        if q.dot(&(mid - elem.centroid())) < 0.0 {
            q = -q;
        }
        assert!((q - nalgebra::Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn snapped_lattice_vertices_shed_slivers() {
        // At n = 16 the 0.2-grid has 30 lattice points exactly on the unit
        // sphere (a^2 + b^2 + c^2 = 25). Their values snap to +eps, the
        // resulting micro-triangles are dropped, and the only unmatched
        // segments left behind are at the snapping scale.
        let mesh = MeshSpec::new(Point3::origin(), 1.6, 16).build();
        let complex = CutComplex::build(&mesh, &SphereLevelSet);
        assert!(complex.dropped_slivers > 0);
        assert!(complex.unmatched_segments > 0);
        assert!(
            complex.unmatched_max_length < 1e-10 * mesh.h(),
            "orphan segments must be degenerate, longest {:.3e}",
            complex.unmatched_max_length
        );
        // The surface is still well formed at the quadrature scale; the
        // empirical area constant for the sphere is about 5.2 h^2.
        let four_pi = 4.0 * std::f64::consts::PI;
        assert!((complex.surface_area() - four_pi).abs() < 6.0 * mesh.h() * mesh.h());
    }

    #[test]
    fn sphere_complex_invariants() {
        for n in [8usize, 10] {
            let mesh = MeshSpec::new(Point3::origin(), 1.6, n).build();
            let complex = CutComplex::build(&mesh, &SphereLevelSet);
            assert_eq!(complex.unmatched_segments, 0, "watertight at n={n}");
            assert_eq!(complex.dropped_slivers, 0);

            // 1 or 2 elements per active tet.
            let mut per_tet: HashMap<u32, usize> = HashMap::new();
            for e in &complex.surface_elements {
                *per_tet.entry(e.parent_tet).or_default() += 1;
            }
            assert_eq!(per_tet.len(), complex.active_tets.len());
            assert!(per_tet.values().all(|&c| c == 1 || c == 2));

            for edge in &complex.cut_edges {
                let ep = &complex.surface_elements[edge.plus_element as usize];
                let em = &complex.surface_elements[edge.minus_element as usize];
                assert_ne!(ep.parent_tet, em.parent_tet, "cut edge within one tet");
                assert!(edge.plus_element < edge.minus_element);
                // Unit, orthogonal to edge and element normal, outward.
                let tangent = (edge.endpoints[1] - edge.endpoints[0]) / edge.length;
                for (q, elem) in [(edge.conormal_plus, ep), (edge.conormal_minus, em)] {
                    assert!((q.norm() - 1.0).abs() < 1e-12);
                    assert!(q.dot(&tangent).abs() < 1e-12);
                    assert!(q.dot(&elem.tangent_normal).abs() < 1e-12);
                    assert!(q.dot(&(edge.midpoint() - elem.centroid())) > 0.0);
                }
            }

            // Interior faces join two distinct active tets.
            for f in &complex.interior_faces {
                assert!(f.tet_plus < f.tet_minus);
                assert!(complex.active_tets.binary_search(&f.tet_plus).is_ok());
                assert!(complex.active_tets.binary_search(&f.tet_minus).is_ok());
                assert!((f.normal.norm() - 1.0).abs() < 1e-12);
            }

            // Element-local divergence theorem: length-weighted outward
            // in-plane perpendiculars of the three sides sum to zero.
            for e in &complex.surface_elements {
                let mut sum = Vector3::zeros();
                let c = e.centroid();
                for i in 0..3 {
                    let a = e.vertices[i];
                    let b = e.vertices[(i + 1) % 3];
                    let len = (b - a).norm();
                    let mut q = (b - a).cross(&e.tangent_normal);
                    q /= q.norm();
                    let mid = nalgebra::center(&a, &b);
                    if q.dot(&(mid - c)) < 0.0 {
                        q = -q;
                    }
                    sum += len * q;
                }
                assert!(sum.norm() < 1e-12, "boundary closure violated: {sum:?}");
            }

            // Surface vertices are roots of the nodal interpolant.
            // Vertices are exact roots of the interpolant, so |phi| there
            // is bounded by the P1 interpolation error of phi.
            let max_phi = complex
                .surface_elements
                .iter()
                .flat_map(|e| e.vertices.iter())
                .map(|v| (v.coords.norm_squared() - 1.0).abs())
                .fold(0.0, f64::max);
            assert!(max_phi < 2.0 * mesh.h() * mesh.h());
        }
    }

    #[test]
    fn sphere_area_and_geometric_convergence() {
        let four_pi = 4.0 * std::f64::consts::PI;
        let mut area_errs = Vec::new();
        let mut vertex_residuals = Vec::new();
        let mut normal_errors = Vec::new();
        let mut hs = Vec::new();
        for k in 0..3 {
            let mesh = MeshSpec::new(Point3::origin(), 1.6, 8 << k).build();
            let complex = CutComplex::build(&mesh, &SphereLevelSet);
            hs.push(mesh.h());
            area_errs.push((complex.surface_area() - four_pi).abs());
            // max |phi| / |grad phi| over element vertices.
            let resid = complex
                .surface_elements
                .iter()
                .flat_map(|e| e.vertices.iter())
                .map(|v| (v.coords.norm_squared() - 1.0).abs() / (2.0 * v.coords.norm()))
                .fold(0.0, f64::max);
            vertex_residuals.push(resid);
            // max angle between element normal and exact normal at centroid.
            let angle = complex
                .surface_elements
                .iter()
                .map(|e| {
                    let c = e.centroid();
                    let exact = c.coords / c.coords.norm();
                    e.tangent_normal.dot(&exact).clamp(-1.0, 1.0).acos()
                })
                .fold(0.0, f64::max);
            normal_errors.push(angle);
        }
        // Area converges at second order; constant fit at the coarsest level.
        let c_fit = area_errs[0] / (hs[0] * hs[0]);
        for k in 1..3 {
            assert!(
                area_errs[k] <= 2.0 * c_fit * hs[k] * hs[k],
                "area error {} at h={} exceeds twice the coarse-level fit",
                area_errs[k],
                hs[k]
            );
        }
        // O(h^2) vertex residual and O(h) normal error: successive ratios.
        for k in 1..3 {
            assert!(
                vertex_residuals[k - 1] / vertex_residuals[k] >= 1.7,
                "vertex residual ratio too small: {:?}",
                vertex_residuals
            );
            assert!(
                normal_errors[k - 1] / normal_errors[k] >= 1.7,
                "normal angle ratio too small: {:?}",
                normal_errors
            );
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let mesh = MeshSpec::new(Point3::origin(), 1.6, 6).build();
        let a = CutComplex::build(&mesh, &SphereLevelSet);
        let b = CutComplex::build(&mesh, &SphereLevelSet);
        assert_eq!(a.active_tets, b.active_tets);
        assert_eq!(a.surface_elements.len(), b.surface_elements.len());
        assert_eq!(a.cut_edges.len(), b.cut_edges.len());
        assert_eq!(a.interior_faces.len(), b.interior_faces.len());
        for (x, y) in a.surface_elements.iter().zip(&b.surface_elements) {
            assert_eq!(x.parent_tet, y.parent_tet);
            assert_eq!(x.vertices, y.vertices);
            assert_eq!(x.area.to_bits(), y.area.to_bits());
        }
        for (x, y) in a.cut_edges.iter().zip(&b.cut_edges) {
            assert_eq!(x.endpoints, y.endpoints);
            assert_eq!((x.plus_element, x.minus_element), (y.plus_element, y.minus_element));
        }
        for (x, y) in a.interior_faces.iter().zip(&b.interior_faces) {
            assert_eq!(x.key, y.key);
            assert_eq!((x.tet_plus, x.tet_minus), (y.tet_plus, y.tet_minus));
        }
    }
}
