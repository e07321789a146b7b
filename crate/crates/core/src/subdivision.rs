//! Catmull-Clark solid subdivision.
//!
//! Interior entities use the volumetric rules
//!
//! ```text
//! cell   C = average of the 8 corners
//! face   F = (C₁ + C₂ + 2A) / 4                  A: face centroid
//! edge   E = (C_avg + 2F_avg + M) / 4            F_avg: incident face centroids, M: midpoint
//! vertex V = (C_avg + 3F_avg + 3E_avg + V) / 8   F_avg: face centroids, E_avg: edge midpoints
//! ```
//!
//! Boundary faces, edges and vertices (those touching a boundary face) are
//! refined with the Catmull-Clark surface rules applied to the boundary quad
//! mesh, so the boundary of the solid is itself a Catmull-Clark surface.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::geometry::{mean, Affine, Point3};
use crate::hexmesh::{
    corner_at, local_edge, local_face, validate, Finding, HexMesh, MeshError, VertexStar,
    HEX_CORNERS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubdivisionError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("mesh is not conforming: {0:?}")]
    NonConforming(Finding),
    #[error("vertex {0} does not have a simple interior star")]
    NonSimpleStar(usize),
    #[error("boundary vertex {0} has a non-manifold boundary neighbourhood")]
    NonManifoldBoundary(usize),
}

/// Where a vertex of a subdivided mesh came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Vertex(usize),
    Edge(usize),
    Face(usize),
    Cell(usize),
}

/// Origin of every vertex of a subdivided mesh. New vertices are numbered
/// vertex points first, then edge, face and cell points, each in the order of
/// the entities they came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub origins: Vec<Origin>,
    pub counts: [usize; 4],
}

impl Provenance {
    fn new(mesh: &HexMesh) -> Self {
        let counts = [
            mesh.num_vertices(),
            mesh.num_edges(),
            mesh.num_faces(),
            mesh.num_cells(),
        ];
        let mut origins = Vec::with_capacity(counts.iter().sum());
        origins.extend((0..counts[0]).map(Origin::Vertex));
        origins.extend((0..counts[1]).map(Origin::Edge));
        origins.extend((0..counts[2]).map(Origin::Face));
        origins.extend((0..counts[3]).map(Origin::Cell));
        Self { origins, counts }
    }

    /// Index of the new vertex produced by `origin`.
    pub fn index_of(&self, origin: Origin) -> usize {
        let [nv, ne, nf, _] = self.counts;
        match origin {
            Origin::Vertex(v) => v,
            Origin::Edge(e) => nv + e,
            Origin::Face(f) => nv + ne + f,
            Origin::Cell(c) => nv + ne + nf + c,
        }
    }
}

/// The subdivision rules evaluated lazily over an arbitrary per-vertex field.
///
/// With `T = Point3` this computes refined positions; with `T = f64` and an
/// indicator field it yields the weight a rule puts on a given old vertex.
pub struct Rules<'a, T, F> {
    mesh: &'a HexMesh,
    value: F,
    _marker: core::marker::PhantomData<T>,
}

impl<'a, T: Affine, F: Fn(usize) -> T> Rules<'a, T, F> {
    pub fn new(mesh: &'a HexMesh, value: F) -> Self {
        Self {
            mesh,
            value,
            _marker: core::marker::PhantomData,
        }
    }

    fn at(&self, v: usize) -> T {
        (self.value)(v)
    }

    pub fn cell_point(&self, c: usize) -> T {
        mean(self.mesh.cell(c).iter().map(|&v| self.at(v)))
    }

    pub fn face_centroid(&self, f: usize) -> T {
        mean(self.mesh.face(f).iter().map(|&v| self.at(v)))
    }

    pub fn edge_midpoint(&self, e: usize) -> T {
        let [a, b] = self.mesh.edge(e);
        (self.at(a) + self.at(b)) * 0.5
    }

    pub fn face_point(&self, f: usize) -> T {
        let cells = self.mesh.face_cells(f);
        let a = self.face_centroid(f);
        if cells.len() == 1 {
            return a;
        }
        let c = mean(cells.iter().map(|&c| self.cell_point(c)));
        (c * 2.0 + a * 2.0) * 0.25
    }

    pub fn edge_point(&self, e: usize) -> T {
        let m = self.edge_midpoint(e);
        if self.mesh.is_boundary_edge(e) {
            let f = mean(
                self.mesh
                    .edge_faces(e)
                    .iter()
                    .filter(|&&f| self.mesh.is_boundary_face(f))
                    .map(|&f| self.face_centroid(f)),
            );
            return (m + f) * 0.5;
        }
        let c = mean(self.mesh.edge_cells(e).iter().map(|&c| self.cell_point(c)));
        let f = mean(self.mesh.edge_faces(e).iter().map(|&f| self.face_centroid(f)));
        (c + f * 2.0 + m) * 0.25
    }

    pub fn vertex_point(&self, v: usize) -> T {
        let old = self.at(v);
        if self.mesh.is_boundary_vertex(v) {
            let q = mean(
                self.mesh
                    .vertex_faces(v)
                    .iter()
                    .filter(|&&f| self.mesh.is_boundary_face(f))
                    .map(|&f| self.face_centroid(f)),
            );
            let bedges: Vec<usize> = self
                .mesh
                .vertex_edges(v)
                .iter()
                .copied()
                .filter(|&e| self.mesh.is_boundary_edge(e))
                .collect();
            let r = mean(bedges.iter().map(|&e| self.edge_midpoint(e)));
            let n = bedges.len() as f64;
            return (q + r * 2.0 + old * (n - 3.0)) * (1.0 / n);
        }
        let c = mean(self.mesh.vertex_cells(v).iter().map(|&c| self.cell_point(c)));
        let f = mean(self.mesh.vertex_faces(v).iter().map(|&f| self.face_centroid(f)));
        let e = mean(self.mesh.vertex_edges(v).iter().map(|&e| self.edge_midpoint(e)));
        (c + f * 3.0 + e * 3.0 + old) * 0.125
    }

    pub fn point(&self, origin: Origin) -> T {
        match origin {
            Origin::Vertex(v) => self.vertex_point(v),
            Origin::Edge(e) => self.edge_point(e),
            Origin::Face(f) => self.face_point(f),
            Origin::Cell(c) => self.cell_point(c),
        }
    }
}

fn positions(mesh: &HexMesh) -> Rules<'_, Point3, impl Fn(usize) -> Point3 + '_> {
    Rules::new(mesh, move |v| mesh.vertex(v))
}

/// Entity of `cell` sitting at doubled parametric lattice position
/// `p ∈ {0,1,2}³` (1 = midway).
pub fn lattice_origin(mesh: &HexMesh, cell: usize, p: [usize; 3]) -> Origin {
    let mids: Vec<usize> = (0..3).filter(|&d| p[d] == 1).collect();
    let lo = p.map(|x| x / 2);
    match mids.len() {
        0 => Origin::Vertex(mesh.cell(cell)[corner_at(lo)]),
        1 => {
            let d = mids[0];
            let mut hi = lo;
            hi[d] = 1;
            let le = local_edge(corner_at(lo), corner_at(hi)).expect("adjacent corners");
            Origin::Edge(mesh.cell_edges(cell)[le])
        }
        2 => {
            let axis = (0..3).find(|d| !mids.contains(d)).unwrap();
            Origin::Face(mesh.cell_faces(cell)[local_face(axis, p[axis] / 2)])
        }
        _ => Origin::Cell(cell),
    }
}

fn check_structure(mesh: &HexMesh) -> Result<(), SubdivisionError> {
    match validate(mesh).structural().next() {
        Some(f) => Err(SubdivisionError::NonConforming(f.clone())),
        None => Ok(()),
    }
}

/// One step of solid subdivision. Child `8c + k` of cell `c` occupies the
/// parametric octant of corner `k` and keeps the parent's orientation.
pub fn subdivide(mesh: &HexMesh) -> Result<(HexMesh, Provenance), SubdivisionError> {
    check_structure(mesh)?;
    let prov = Provenance::new(mesh);
    let rules = positions(mesh);
    let vertices: Vec<Point3> = prov.origins.iter().map(|&o| rules.point(o)).collect();

    let mut cells = Vec::with_capacity(8 * mesh.num_cells());
    for c in 0..mesh.num_cells() {
        for child in HEX_CORNERS {
            let hex = HEX_CORNERS.map(|corner| {
                let p = [
                    child[0] + corner[0],
                    child[1] + corner[1],
                    child[2] + corner[2],
                ];
                prov.index_of(lattice_origin(mesh, c, p))
            });
            cells.push(hex);
        }
    }
    let fine = HexMesh::new(vertices, cells)?;
    Ok((fine, prov))
}

/// Subdivide `levels` times.
pub fn subdivide_n(mesh: &HexMesh, levels: usize) -> Result<HexMesh, SubdivisionError> {
    let mut m = mesh.clone();
    for _ in 0..levels {
        m = subdivide(&m)?.0;
    }
    Ok(m)
}

/// Normalized limit stencil of a simple interior star, in star order
/// (vertex, edge points, face points, cell points).
#[derive(Clone, Debug, PartialEq)]
pub struct LimitWeights {
    pub weights: Vec<f64>,
}

impl LimitWeights {
    pub fn apply<T: Affine>(&self, points: &[T]) -> T {
        debug_assert_eq!(points.len(), self.weights.len());
        self.weights
            .iter()
            .zip(points)
            .fold(T::zero(), |acc, (&w, &p)| acc + p * w)
    }
}

/// `(16(n−2), 4m₁…4mₙ, 4…4, 1…1) / (30(n−2) + 4Σm)`.
pub fn limit_weights(star: &VertexStar) -> LimitWeights {
    let n = star.valence() as f64;
    let msum = star.degree_sum() as f64;
    let denom = 30.0 * (n - 2.0) + 4.0 * msum;
    let mut weights = Vec::with_capacity(star.size());
    weights.push(16.0 * (n - 2.0) / denom);
    weights.extend(star.edges.iter().map(|e| 4.0 * e.degree as f64 / denom));
    weights.extend(star.faces.iter().map(|_| 4.0 / denom));
    weights.extend(star.cells.iter().map(|_| 1.0 / denom));
    LimitWeights { weights }
}

/// How a limit point was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitKind {
    Interior,
    /// Boundary vertex: Catmull-Clark surface limit mask on the boundary quads.
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitPoint {
    pub point: Point3,
    pub kind: LimitKind,
}

/// Level-one star points `(v¹, e¹…, f¹…, c¹…)` of a vertex, computed locally.
fn level_one_star<T: Affine, F: Fn(usize) -> T>(rules: &Rules<'_, T, F>, star: &VertexStar) -> Vec<T> {
    let mut pts = Vec::with_capacity(star.size());
    pts.push(rules.vertex_point(star.center));
    pts.extend(star.edges.iter().map(|e| rules.edge_point(e.edge)));
    pts.extend(star.faces.iter().map(|&f| rules.face_point(f)));
    pts.extend(star.cells.iter().map(|&c| rules.cell_point(c)));
    pts
}

/// Position of vertex `v` on the limit solid.
pub fn limit_point(mesh: &HexMesh, v: usize) -> Result<LimitPoint, SubdivisionError> {
    let star = mesh.vertex_star(v)?;
    if star.interior {
        if !star.simple {
            return Err(SubdivisionError::NonSimpleStar(v));
        }
        let pts = level_one_star(&positions(mesh), &star);
        return Ok(LimitPoint {
            point: limit_weights(&star).apply(&pts),
            kind: LimitKind::Interior,
        });
    }
    boundary_limit_point(mesh, v).map(|point| LimitPoint {
        point,
        kind: LimitKind::Boundary,
    })
}

/// Surface limit mask `(n²v + 4Σeⱼ + Σfⱼ) / (n(n+5))` over the boundary quad
/// mesh: `eⱼ` the far ends of the boundary edges at `v`, `fⱼ` the boundary
/// face vertices diagonally opposite `v`.
fn boundary_limit_point(mesh: &HexMesh, v: usize) -> Result<Point3, SubdivisionError> {
    let edges: Vec<usize> = mesh
        .vertex_edges(v)
        .iter()
        .copied()
        .filter(|&e| mesh.is_boundary_edge(e))
        .collect();
    let faces: Vec<usize> = mesh
        .vertex_faces(v)
        .iter()
        .copied()
        .filter(|&f| mesh.is_boundary_face(f))
        .collect();
    let n = edges.len();
    if n < 3 || faces.len() != n {
        return Err(SubdivisionError::NonManifoldBoundary(v));
    }
    let nf = n as f64;
    let mut acc = mesh.vertex(v) * (nf * nf);
    for &e in &edges {
        acc += mesh.vertex(mesh.other_end(e, v)) * 4.0;
    }
    for &f in &faces {
        acc += mesh.vertex(mesh.face_opposite(f, v).unwrap());
    }
    Ok(acc / (nf * (nf + 5.0)))
}

/// Square matrix mapping a star to the star of the same vertex after one
/// subdivision step, rows and columns ordered (vertex, edges, faces, cells).
#[derive(Clone, Debug)]
pub struct LocalSubdivMatrix {
    pub star: VertexStar,
    pub matrix: DMatrix<f64>,
}

impl LocalSubdivMatrix {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    /// Applies the matrix `times` times to star positions.
    pub fn apply_n(&self, star_points: &[Point3], times: usize) -> Vec<Point3> {
        let n = self.size();
        let mut cur = star_points.to_vec();
        let mut next = vec![Point3::zeros(); n];
        for _ in 0..times {
            for (i, out) in next.iter_mut().enumerate() {
                let mut acc = Point3::zeros();
                for (j, p) in cur.iter().enumerate() {
                    let w = self.matrix[(i, j)];
                    if w != 0.0 {
                        acc += p * w;
                    }
                }
                *out = acc;
            }
            core::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// All eigenvalues sorted by decreasing modulus, or `None` if the Schur
    /// iteration does not converge.
    pub fn eigenvalues(&self) -> Option<Vec<Complex<f64>>> {
        let schur = Schur::try_new(self.matrix.clone(), 1e-15, 10_000)
            .or_else(|| Schur::try_new(self.matrix.clone(), 1e-13, 100_000))?;
        let mut ev: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| libm::hypot(b.re, b.im).total_cmp(&libm::hypot(a.re, a.im)));
        Some(ev)
    }

    /// Left eigenvector for eigenvalue 1 normalized to unit sum, solved
    /// directly from `(Sᵀ − I) l = 0, Σl = 1`.
    pub fn dominant_left_eigenvector(&self) -> Option<Vec<f64>> {
        let n = self.size();
        let mut a = self.matrix.transpose() - DMatrix::identity(n, n);
        a.row_mut(n - 1).fill(1.0);
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        a.lu().solve(&b).map(|l| l.iter().copied().collect())
    }

    /// Spectral radius of `S` with the eigenvalue-1 component removed,
    /// estimated from `‖(S − 1 lᵀ)^(2^k)‖^(1/2^k)`. A value below one means
    /// 1 is a simple eigenvalue and strictly dominant.
    pub fn subdominant_radius(&self) -> Option<f64> {
        let l = self.dominant_left_eigenvector()?;
        let n = self.size();
        let mut d = self.matrix.clone();
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] -= l[j];
            }
        }
        let mut log_scale = 0.0;
        let mut power = 1.0;
        for _ in 0..12 {
            let norm = d.norm();
            if norm == 0.0 {
                return Some(0.0);
            }
            d /= norm;
            log_scale += libm::log(norm) / power;
            d = &d * &d;
            power *= 2.0;
        }
        Some(libm::exp(log_scale + libm::log(d.norm().max(f64::MIN_POSITIVE)) / power))
    }

    /// `‖lᵀS − lᵀ‖∞`.
    pub fn left_residual(&self, l: &[f64]) -> f64 {
        let n = self.size();
        (0..n)
            .map(|j| {
                let s: f64 = (0..n).map(|i| l[i] * self.matrix[(i, j)]).sum();
                (s - l[j]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Builds the local subdivision matrix of a simple interior vertex by probing
/// the rules with indicator fields over the old star.
pub fn local_subdivision_matrix(
    mesh: &HexMesh,
    v: usize,
) -> Result<LocalSubdivMatrix, SubdivisionError> {
    let star = mesh.vertex_star(v)?;
    if !star.simple {
        return Err(SubdivisionError::NonSimpleStar(v));
    }
    let columns = star.ordered_vertices(mesh).expect("simple star");
    let n = columns.len();
    let mut matrix = DMatrix::zeros(n, n);
    for (j, &col_vertex) in columns.iter().enumerate() {
        let rules = Rules::new(mesh, |x| if x == col_vertex { 1.0 } else { 0.0 });
        for (i, w) in level_one_star(&rules, &star).into_iter().enumerate() {
            matrix[(i, j)] = w;
        }
    }
    Ok(LocalSubdivMatrix { star, matrix })
}

/// Old star positions in matrix order.
pub fn star_positions(mesh: &HexMesh, star: &VertexStar) -> Option<Vec<Point3>> {
    star.ordered_vertices(mesh)
        .map(|vs| vs.into_iter().map(|v| mesh.vertex(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexmesh::{lattice, tests_support};

    #[test]
    fn cube_subdivides_into_eight() {
        let m = lattice(1, 1, 1, [1.0; 3]);
        let (fine, prov) = subdivide(&m).unwrap();
        assert_eq!(fine.num_cells(), 8);
        assert_eq!(fine.num_vertices(), 27);
        assert_eq!(prov.counts, [8, 12, 6, 1]);
        let c = fine.vertex(prov.index_of(Origin::Cell(0)));
        assert!((c - Point3::new(0.5, 0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn stacked_cubes_shared_face_point() {
        let m = lattice(1, 1, 2, [1.0; 3]);
        let f = m.find_face([4, 5, 6, 7]).unwrap();
        let (fine, prov) = subdivide(&m).unwrap();
        let p = fine.vertex(prov.index_of(Origin::Face(f)));
        assert!((p - Point3::new(0.5, 0.5, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn interior_edge_rule_substitution() {
        // C_avg = F_avg = 0, M = (4,0,0) -> E = (1,0,0)
        let c = Point3::zeros();
        let f = Point3::zeros();
        let m = Point3::new(4.0, 0.0, 0.0);
        let e = (c + f * 2.0 + m) * 0.25;
        assert_eq!(e, Point3::new(1.0, 0.0, 0.0));
        // and the same rule through the mesh: interior edge of a 2x2x2 lattice
        let mesh = lattice(2, 2, 2, [1.0; 3]);
        let e = mesh.find_edge(13, 14).unwrap();
        assert!(!mesh.is_boundary_edge(e));
        let p = positions(&mesh).edge_point(e);
        assert!((p - Point3::new(1.5, 1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn regular_limit_weights() {
        let m = lattice(2, 2, 2, [1.0; 3]);
        let w = limit_weights(&m.vertex_star(13).unwrap()).weights;
        assert_eq!(w.len(), 27);
        assert!((w[0] - 64.0 / 216.0).abs() < 1e-16);
        assert!(w[1..7].iter().all(|x| (x - 16.0 / 216.0).abs() < 1e-16));
        assert!(w[7..19].iter().all(|x| (x - 4.0 / 216.0).abs() < 1e-16));
        assert!(w[19..].iter().all(|x| (x - 1.0 / 216.0).abs() < 1e-16));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_center_is_fixed() {
        let m = lattice(2, 2, 2, [1.0; 3]);
        let lp = limit_point(&m, 13).unwrap();
        assert_eq!(lp.kind, LimitKind::Interior);
        assert!((lp.point - Point3::new(1.0, 1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn regular_matrix_first_row() {
        let m = lattice(2, 2, 2, [1.0; 3]);
        let s = local_subdivision_matrix(&m, 13).unwrap();
        assert_eq!(s.size(), 27);
        let r = s.matrix.row(0);
        assert_eq!(r[0], 27.0 / 64.0);
        assert!((1..7).all(|j| r[j] == 9.0 / 128.0));
        assert!((7..19).all(|j| r[j] == 3.0 / 256.0));
        assert!((19..27).all(|j| r[j] == 1.0 / 512.0));
    }

    #[test]
    fn non_simple_vertices_are_rejected() {
        let m = lattice(1, 1, 1, [1.0; 3]);
        assert_eq!(
            local_subdivision_matrix(&m, 0).unwrap_err(),
            SubdivisionError::NonSimpleStar(0)
        );
        // boundary vertices fall back to the surface mask
        let lp = limit_point(&m, 0).unwrap();
        assert_eq!(lp.kind, LimitKind::Boundary);
    }

    #[test]
    fn extraordinary_star_sizes() {
        for k in [3usize, 5, 6] {
            let m = tests_support::fan_prism(k, 2);
            let s = local_subdivision_matrix(&m, 1).unwrap();
            let n = k + 2;
            assert_eq!(s.size(), 6 * n - 9);
            for rs in s.row_sums() {
                assert!((rs - 1.0).abs() < 1e-14);
            }
        }
        let t = tests_support::split_tetrahedron();
        assert_eq!(local_subdivision_matrix(&t, 14).unwrap().size(), 15);
        let ico = tests_support::icosahedral_star();
        assert_eq!(local_subdivision_matrix(&ico, 0).unwrap().size(), 63);
    }

    #[test]
    fn regular_spectrum_is_tensor_cubic() {
        let m = lattice(2, 2, 2, [1.0; 3]);
        let ev = local_subdivision_matrix(&m, 13).unwrap().eigenvalues().unwrap();
        let mut expected = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    expected.push(0.5f64.powi(a + b + c));
                }
            }
        }
        expected.sort_by(|a, b| b.total_cmp(a));
        for (e, x) in ev.iter().zip(&expected) {
            assert!((e.re - x).abs() < 1e-10 && e.im.abs() < 1e-10);
        }
    }

    #[test]
    fn limit_weights_are_left_eigenvectors_for_uniform_degrees() {
        let cases = [
            (lattice(2, 2, 2, [1.0; 3]), 13),
            (tests_support::split_tetrahedron(), 14),
            (tests_support::icosahedral_star(), 0),
        ];
        for (m, v) in cases {
            let s = local_subdivision_matrix(&m, v).unwrap();
            let l = limit_weights(&s.star).weights;
            assert!(s.left_residual(&l) <= 1e-12);
            assert!(s.subdominant_radius().unwrap() < 0.9);
        }
    }

    #[test]
    fn limit_weights_approximate_for_mixed_degrees() {
        let m = tests_support::fan_prism(3, 2);
        let s = local_subdivision_matrix(&m, 1).unwrap();
        let formula = limit_weights(&s.star).weights;
        let exact = s.dominant_left_eigenvector().unwrap();
        assert!(s.left_residual(&exact) < 1e-13);
        let r = s.left_residual(&formula);
        assert!(r > 1e-4 && r < 1e-2, "{r}");
        assert!((exact[0] - formula[0]).abs() < 1e-12);
    }

    #[test]
    fn limit_point_is_stationary_under_subdivision() {
        let mut m = tests_support::icosahedral_star();
        let moved: Vec<Point3> = (0..m.num_vertices())
            .map(|i| {
                let t = i as f64;
                m.vertex(i) + Point3::new(libm::sin(t), libm::cos(3.0 * t), libm::sin(7.0 * t)) * 0.05
            })
            .collect();
        m = m.with_vertices(moved);
        let (fine, _) = subdivide(&m).unwrap();
        let a = limit_point(&m, 0).unwrap().point;
        let b = limit_point(&fine, 0).unwrap().point;
        assert!((a - b).norm() < 1e-10);
    }
}
