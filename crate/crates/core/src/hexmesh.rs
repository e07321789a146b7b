//! Hexahedral meshes with derived edge/face incidence.
//!
//! Cell corners follow the usual visualization ordering: the bottom quad
//! `0 1 2 3` counterclockwise when viewed from outside (i.e. from below is
//! clockwise), then the top quad `4 5 6 7` with corner `k + 4` directly above
//! corner `k`. Every cell therefore carries a local parametric frame
//! `(u, v, w)` with `u` along `0 → 1`, `v` along `0 → 3` and `w` along `0 → 4`;
//! [`HEX_CORNERS`] lists the parametric position of each corner.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{mean, Aabb, Point3};

/// Parametric position `(u, v, w) ∈ {0,1}³` of each corner.
pub const HEX_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const CORNER_OF_BITS: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];

/// Corner index of the parametric position `bits ∈ {0,1}³`.
#[inline]
pub fn corner_at(bits: [usize; 3]) -> usize {
    CORNER_OF_BITS[bits[0] | (bits[1] << 1) | (bits[2] << 2)]
}

/// Corner reached from `corner` by flipping the parametric axes in `mask`
/// (bit 0 = u, bit 1 = v, bit 2 = w).
#[inline]
pub fn flip_corner(corner: usize, mask: usize) -> usize {
    let b = HEX_CORNERS[corner];
    corner_at([b[0] ^ (mask & 1), b[1] ^ ((mask >> 1) & 1), b[2] ^ ((mask >> 2) & 1)])
}

/// The twelve cell edges, grouped by parametric direction (u, v, w).
pub const HEX_EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [3, 2],
    [4, 5],
    [7, 6],
    [0, 3],
    [1, 2],
    [4, 7],
    [5, 6],
    [0, 4],
    [1, 5],
    [3, 7],
    [2, 6],
];

/// The six cell faces, outward oriented, indexed `2 * axis + side`.
pub const HEX_FACES: [[usize; 4]; 6] = [
    [3, 0, 4, 7],
    [1, 2, 6, 5],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [0, 3, 2, 1],
    [4, 5, 6, 7],
];

/// Local edge joining two corners, if they are edge-adjacent.
pub fn local_edge(a: usize, b: usize) -> Option<usize> {
    HEX_EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
}

/// Local face with parametric coordinate `axis` fixed at `side`.
#[inline]
pub fn local_face(axis: usize, side: usize) -> usize {
    2 * axis + side
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MeshError {
    #[error("cell {cell} references vertex {index}, but the mesh has {count} vertices")]
    VertexOutOfRange {
        cell: usize,
        index: usize,
        count: usize,
    },
    #[error("cell {cell} lists vertex {vertex} more than once")]
    DuplicateVertex { cell: usize, vertex: usize },
    #[error("vertex {0} does not exist")]
    InvalidVertex(usize),
    #[error("cell {0} does not exist")]
    InvalidCell(usize),
}

/// Compressed one-to-many map with sorted rows.
#[derive(Clone, Debug, Default)]
pub struct Incidence {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Incidence {
    fn from_pairs(rows: usize, pairs: &[(usize, usize)]) -> Self {
        let mut offsets = vec![0usize; rows + 1];
        for &(r, _) in pairs {
            offsets[r + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let mut fill = offsets.clone();
        let mut items = vec![0usize; pairs.len()];
        for &(r, x) in pairs {
            items[fill[r]] = x;
            fill[r] += 1;
        }
        for r in 0..rows {
            items[offsets[r]..offsets[r + 1]].sort_unstable();
        }
        Self { offsets, items }
    }

    #[inline]
    pub fn get(&self, row: usize) -> &[usize] {
        &self.items[self.offsets[row]..self.offsets[row + 1]]
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// An immutable hexahedral mesh together with all derived incidence maps.
#[derive(Clone, Debug)]
pub struct HexMesh {
    vertices: Vec<Point3>,
    cells: Vec<[usize; 8]>,
    edges: Vec<[usize; 2]>,
    faces: Vec<[usize; 4]>,
    cell_edges: Vec<[usize; 12]>,
    cell_faces: Vec<[usize; 6]>,
    edge_lookup: BTreeMap<(usize, usize), usize>,
    face_lookup: BTreeMap<[usize; 4], usize>,
    vertex_edges: Incidence,
    vertex_faces: Incidence,
    vertex_cells: Incidence,
    edge_faces: Incidence,
    edge_cells: Incidence,
    face_cells: Incidence,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn face_key(f: [usize; 4]) -> [usize; 4] {
    let mut k = f;
    k.sort_unstable();
    k
}

impl HexMesh {
    pub fn new(vertices: Vec<Point3>, cells: Vec<[usize; 8]>) -> Result<Self, MeshError> {
        let nv = vertices.len();
        for (c, cell) in cells.iter().enumerate() {
            for (k, &i) in cell.iter().enumerate() {
                if i >= nv {
                    return Err(MeshError::VertexOutOfRange {
                        cell: c,
                        index: i,
                        count: nv,
                    });
                }
                if cell[..k].contains(&i) {
                    return Err(MeshError::DuplicateVertex { cell: c, vertex: i });
                }
            }
        }

        let mut edges = Vec::new();
        let mut faces = Vec::new();
        let mut edge_lookup = BTreeMap::new();
        let mut face_lookup = BTreeMap::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        let mut cell_faces = Vec::with_capacity(cells.len());
        for cell in &cells {
            let mut ce = [0usize; 12];
            for (le, pair) in HEX_EDGES.iter().enumerate() {
                let key = edge_key(cell[pair[0]], cell[pair[1]]);
                ce[le] = *edge_lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
            }
            let mut cf = [0usize; 6];
            for (lf, quad) in HEX_FACES.iter().enumerate() {
                let cycle = quad.map(|k| cell[k]);
                cf[lf] = *face_lookup.entry(face_key(cycle)).or_insert_with(|| {
                    faces.push(cycle);
                    faces.len() - 1
                });
            }
            cell_edges.push(ce);
            cell_faces.push(cf);
        }

        let mut pairs = Vec::new();
        for (e, ab) in edges.iter().enumerate() {
            pairs.push((ab[0], e));
            pairs.push((ab[1], e));
        }
        let vertex_edges = Incidence::from_pairs(nv, &pairs);

        pairs.clear();
        for (f, q) in faces.iter().enumerate() {
            pairs.extend(q.iter().map(|&v| (v, f)));
        }
        let vertex_faces = Incidence::from_pairs(nv, &pairs);

        pairs.clear();
        for (c, cell) in cells.iter().enumerate() {
            pairs.extend(cell.iter().map(|&v| (v, c)));
        }
        let vertex_cells = Incidence::from_pairs(nv, &pairs);

        pairs.clear();
        for (f, q) in faces.iter().enumerate() {
            for i in 0..4 {
                let e = edge_lookup[&edge_key(q[i], q[(i + 1) % 4])];
                pairs.push((e, f));
            }
        }
        let edge_faces = Incidence::from_pairs(edges.len(), &pairs);

        pairs.clear();
        for (c, ce) in cell_edges.iter().enumerate() {
            pairs.extend(ce.iter().map(|&e| (e, c)));
        }
        let edge_cells = Incidence::from_pairs(edges.len(), &pairs);

        pairs.clear();
        for (c, cf) in cell_faces.iter().enumerate() {
            pairs.extend(cf.iter().map(|&f| (f, c)));
        }
        let face_cells = Incidence::from_pairs(faces.len(), &pairs);

        Ok(Self {
            vertices,
            cells,
            edges,
            faces,
            cell_edges,
            cell_faces,
            edge_lookup,
            face_lookup,
            vertex_edges,
            vertex_faces,
            vertex_cells,
            edge_faces,
            edge_cells,
            face_cells,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }
    pub fn cells(&self) -> &[[usize; 8]] {
        &self.cells
    }
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }
    /// Face vertex cycles, oriented as seen from the first incident cell.
    pub fn faces(&self) -> &[[usize; 4]] {
        &self.faces
    }

    #[inline]
    pub fn vertex(&self, v: usize) -> Point3 {
        self.vertices[v]
    }
    #[inline]
    pub fn cell(&self, c: usize) -> &[usize; 8] {
        &self.cells[c]
    }
    #[inline]
    pub fn edge(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }
    #[inline]
    pub fn face(&self, f: usize) -> [usize; 4] {
        self.faces[f]
    }
    #[inline]
    pub fn cell_edges(&self, c: usize) -> &[usize; 12] {
        &self.cell_edges[c]
    }
    #[inline]
    pub fn cell_faces(&self, c: usize) -> &[usize; 6] {
        &self.cell_faces[c]
    }

    pub fn vertex_edges(&self, v: usize) -> &[usize] {
        self.vertex_edges.get(v)
    }
    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        self.vertex_faces.get(v)
    }
    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        self.vertex_cells.get(v)
    }
    pub fn edge_faces(&self, e: usize) -> &[usize] {
        self.edge_faces.get(e)
    }
    pub fn edge_cells(&self, e: usize) -> &[usize] {
        self.edge_cells.get(e)
    }
    pub fn face_cells(&self, f: usize) -> &[usize] {
        self.face_cells.get(f)
    }

    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&edge_key(a, b)).copied()
    }

    pub fn find_face(&self, quad: [usize; 4]) -> Option<usize> {
        self.face_lookup.get(&face_key(quad)).copied()
    }

    /// Number of incident edges.
    pub fn valence(&self, v: usize) -> usize {
        self.vertex_edges(v).len()
    }

    /// Number of faces incident to the edge (4 in a regular lattice).
    pub fn edge_degree(&self, e: usize) -> usize {
        self.edge_faces(e).len()
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.face_cells(f).len() == 1
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.edge_faces(e).iter().any(|&f| self.is_boundary_face(f))
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.vertex_faces(v).iter().any(|&f| self.is_boundary_face(f))
    }

    pub fn other_end(&self, e: usize, v: usize) -> usize {
        let [a, b] = self.edges[e];
        if a == v {
            b
        } else {
            a
        }
    }

    /// Corner slot of `v` inside cell `c`.
    pub fn local_corner(&self, c: usize, v: usize) -> Option<usize> {
        self.cells[c].iter().position(|&x| x == v)
    }

    /// Vertex of face `f` diagonally opposite `v`.
    pub fn face_opposite(&self, f: usize, v: usize) -> Option<usize> {
        let q = self.faces[f];
        q.iter().position(|&x| x == v).map(|i| q[(i + 2) % 4])
    }

    /// Vertex of cell `c` diagonally opposite `v`.
    pub fn cell_opposite(&self, c: usize, v: usize) -> Option<usize> {
        self.local_corner(c, v)
            .map(|k| self.cells[c][flip_corner(k, 0b111)])
    }

    pub fn cell_centroid(&self, c: usize) -> Point3 {
        mean(self.cells[c].iter().map(|&v| self.vertices[v]))
    }

    pub fn face_centroid(&self, f: usize) -> Point3 {
        mean(self.faces[f].iter().map(|&v| self.vertices[v]))
    }

    pub fn edge_midpoint(&self, e: usize) -> Point3 {
        let [a, b] = self.edges[e];
        (self.vertices[a] + self.vertices[b]) * 0.5
    }

    pub fn bounding_box(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    /// Same connectivity, vertices replaced.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            ..self.clone()
        }
    }

    pub fn vertex_star(&self, v: usize) -> Result<VertexStar, MeshError> {
        if v >= self.vertices.len() {
            return Err(MeshError::InvalidVertex(v));
        }
        let edges: Vec<StarEdge> = self
            .vertex_edges(v)
            .iter()
            .map(|&e| StarEdge {
                edge: e,
                neighbor: self.other_end(e, v),
                degree: self.edge_degree(e),
            })
            .collect();
        let faces = self.vertex_faces(v).to_vec();
        let cells = self.vertex_cells(v).to_vec();
        let interior = !self.is_boundary_vertex(v);

        let n = edges.len();
        let counts_ok = n >= 3 && faces.len() == 3 * (n - 2) && cells.len() == 2 * (n - 2);
        let mut star = VertexStar {
            center: v,
            edges,
            faces,
            cells,
            interior,
            simple: false,
        };
        star.simple = interior
            && counts_ok
            && star.faces.iter().all(|&f| self.face_cells(f).len() == 2)
            && star.ordered_vertices(self).is_some();
        Ok(star)
    }

    /// Interior vertex whose star has the Lemma-1 shape (sphere-like link).
    pub fn is_simple_interior(&self, v: usize) -> bool {
        self.vertex_star(v).map(|s| s.simple).unwrap_or(false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StarEdge {
    pub edge: usize,
    pub neighbor: usize,
    /// Faces incident to the edge.
    pub degree: usize,
}

/// One-ring of a vertex: incident edges (with their degrees), faces and cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexStar {
    pub center: usize,
    pub edges: Vec<StarEdge>,
    pub faces: Vec<usize>,
    pub cells: Vec<usize>,
    /// No incident boundary face.
    pub interior: bool,
    /// Interior, Lemma-1 counts hold, every face has two cells and all
    /// `6n − 9` star vertices are distinct.
    pub simple: bool,
}

impl VertexStar {
    pub fn valence(&self) -> usize {
        self.edges.len()
    }

    /// `1 + n + N_face + N_cell`; equals `6n − 9` for simple stars.
    pub fn size(&self) -> usize {
        1 + self.edges.len() + self.faces.len() + self.cells.len()
    }

    pub fn degree_sum(&self) -> usize {
        self.edges.iter().map(|e| e.degree).sum()
    }

    /// Star vertices in the order (center, edge neighbours, face-opposite
    /// vertices, cell-opposite vertices). `None` if any repeats.
    pub fn ordered_vertices(&self, mesh: &HexMesh) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.size());
        out.push(self.center);
        out.extend(self.edges.iter().map(|e| e.neighbor));
        for &f in &self.faces {
            out.push(mesh.face_opposite(f, self.center)?);
        }
        for &c in &self.cells {
            out.push(mesh.cell_opposite(c, self.center)?);
        }
        let mut sorted = out.clone();
        sorted.sort_unstable();
        sorted.dedup();
        (sorted.len() == out.len()).then_some(out)
    }
}

/// A single validation problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Finding {
    /// Face shared by more than two cells.
    NonManifoldFace { face: usize, cells: usize },
    /// Two cells share three or more vertices without sharing a whole face.
    NonConforming { cells: [usize; 2], shared: usize },
    /// Boundary edge not bordered by exactly two boundary faces.
    NonManifoldBoundaryEdge { edge: usize, boundary_faces: usize },
    /// Cells around the vertex split into several face-connected groups.
    NonManifoldVertex { vertex: usize, groups: usize },
    /// Interior vertex violating `N_face = 3(n−2)`, `N_cell = 2(n−2)`.
    StarCounts {
        vertex: usize,
        valence: usize,
        faces: usize,
        cells: usize,
    },
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub interior_vertices: usize,
    pub ok: bool,
}

impl ValidationReport {
    /// Findings that make the mesh unusable for subdivision.
    pub fn structural(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| {
            matches!(
                f,
                Finding::NonManifoldFace { .. } | Finding::NonConforming { .. }
            )
        })
    }
}

pub fn validate(mesh: &HexMesh) -> ValidationReport {
    let mut findings = Vec::new();

    for f in 0..mesh.num_faces() {
        let n = mesh.face_cells(f).len();
        if n > 2 {
            findings.push(Finding::NonManifoldFace { face: f, cells: n });
        }
    }

    // cell pairs sharing >= 3 vertices must share exactly one whole face
    let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
    for c in 0..mesh.num_cells() {
        shared.clear();
        for &v in mesh.cell(c) {
            for &d in mesh.vertex_cells(v) {
                if d > c {
                    *shared.entry(d).or_insert(0) += 1;
                }
            }
        }
        for (&d, &count) in &shared {
            if count < 3 {
                continue;
            }
            let common_face = mesh
                .cell_faces(c)
                .iter()
                .any(|f| mesh.cell_faces(d).contains(f));
            if count != 4 || !common_face {
                findings.push(Finding::NonConforming {
                    cells: [c, d],
                    shared: count,
                });
            }
        }
    }

    for e in 0..mesh.num_edges() {
        let bf = mesh
            .edge_faces(e)
            .iter()
            .filter(|&&f| mesh.is_boundary_face(f))
            .count();
        if bf != 0 && bf != 2 {
            findings.push(Finding::NonManifoldBoundaryEdge {
                edge: e,
                boundary_faces: bf,
            });
        }
    }

    let mut interior_vertices = 0;
    for v in 0..mesh.num_vertices() {
        let cells = mesh.vertex_cells(v);
        if cells.is_empty() {
            continue;
        }
        let groups = cell_groups_around(mesh, v);
        if groups > 1 {
            findings.push(Finding::NonManifoldVertex { vertex: v, groups });
        }
        if mesh.is_boundary_vertex(v) {
            continue;
        }
        interior_vertices += 1;
        let n = mesh.valence(v);
        let nf = mesh.vertex_faces(v).len();
        let nc = cells.len();
        if n < 3 || nf != 3 * (n - 2) || nc != 2 * (n - 2) {
            findings.push(Finding::StarCounts {
                vertex: v,
                valence: n,
                faces: nf,
                cells: nc,
            });
        }
    }

    let ok = findings.is_empty();
    ValidationReport {
        findings,
        interior_vertices,
        ok,
    }
}

/// Number of connected components of the cells around `v`, connected through
/// faces that contain `v`.
fn cell_groups_around(mesh: &HexMesh, v: usize) -> usize {
    let cells = mesh.vertex_cells(v);
    let mut label: Vec<usize> = (0..cells.len()).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for &f in mesh.vertex_faces(v) {
        let fc = mesh.face_cells(f);
        for w in fc.windows(2) {
            let a = cells.binary_search(&w[0]).unwrap();
            let b = cells.binary_search(&w[1]).unwrap();
            let (ra, rb) = (root(&mut label, a), root(&mut label, b));
            if ra != rb {
                label[ra] = rb;
            }
        }
    }
    (0..cells.len()).filter(|&i| root(&mut label, i) == i).count()
}

/// Structured `nx × ny × nz` block of unit-spaced cells starting at the origin.
/// Vertex `(i, j, k)` has index `i + (nx+1)(j + (ny+1)k)`.
pub fn lattice(nx: usize, ny: usize, nz: usize, spacing: [f64; 3]) -> HexMesh {
    let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Point3::new(
                    i as f64 * spacing[0],
                    j as f64 * spacing[1],
                    k as f64 * spacing[2],
                ));
            }
        }
    }
    let mut cells = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                cells.push(HEX_CORNERS.map(|b| id(i + b[0], j + b[1], k + b[2])));
            }
        }
    }
    HexMesh::new(vertices, cells).expect("lattice connectivity is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> HexMesh {
        lattice(1, 1, 1, [1.0; 3])
    }

    #[test]
    fn corner_tables_are_consistent() {
        for k in 0..8 {
            assert_eq!(corner_at(HEX_CORNERS[k]), k);
            assert_eq!(flip_corner(flip_corner(k, 0b101), 0b101), k);
        }
        for (i, e) in HEX_EDGES.iter().enumerate() {
            let (a, b) = (HEX_CORNERS[e[0]], HEX_CORNERS[e[1]]);
            let diff: usize = (0..3).map(|d| a[d].abs_diff(b[d])).sum();
            assert_eq!(diff, 1);
            assert_eq!(local_edge(e[1], e[0]), Some(i));
        }
        for axis in 0..3 {
            for side in 0..2 {
                let f = HEX_FACES[local_face(axis, side)];
                assert!(f.iter().all(|&k| HEX_CORNERS[k][axis] == side));
            }
        }
    }

    #[test]
    fn unit_cube_counts() {
        let m = cube();
        assert_eq!(
            (m.num_vertices(), m.num_edges(), m.num_faces(), m.num_cells()),
            (8, 12, 6, 1)
        );
        assert!((0..6).all(|f| m.is_boundary_face(f)));
    }

    #[test]
    fn lattice_2x2x2_counts() {
        let m = lattice(2, 2, 2, [1.0; 3]);
        assert_eq!(m.num_vertices(), 27);
        assert_eq!(m.num_cells(), 8);
        assert_eq!(m.num_edges(), 54);
        assert_eq!(m.num_faces(), 36);
    }

    #[test]
    fn out_of_range_and_duplicates_rejected() {
        let verts = vec![Point3::zeros(); 8];
        let err = HexMesh::new(verts.clone(), vec![[0, 1, 2, 3, 4, 5, 6, 99]]).unwrap_err();
        assert_eq!(
            err,
            MeshError::VertexOutOfRange {
                cell: 0,
                index: 99,
                count: 8
            }
        );
        let err = HexMesh::new(verts, vec![[0, 1, 2, 3, 4, 5, 6, 0]]).unwrap_err();
        assert_eq!(err, MeshError::DuplicateVertex { cell: 0, vertex: 0 });
    }

    #[test]
    fn center_of_lattice_satisfies_vertex_counts() {
        let m = lattice(2, 2, 2, [1.0; 3]);
        let r = validate(&m);
        assert!(r.ok, "{:?}", r.findings);
        assert_eq!(r.interior_vertices, 1);
        let s = m.vertex_star(13).unwrap();
        assert_eq!(s.valence(), 6);
        assert_eq!(s.faces.len(), 12);
        assert_eq!(s.cells.len(), 8);
        assert!(s.edges.iter().all(|e| e.degree == 4));
        assert_eq!(s.size(), 27);
        assert!(s.interior && s.simple);
    }

    #[test]
    fn single_cube_validates_vacuously() {
        let r = validate(&cube());
        assert!(r.ok);
        assert_eq!(r.interior_vertices, 0);
        let s = cube().vertex_star(0).unwrap();
        assert_eq!(s.valence(), 3);
        assert!(!s.interior && !s.simple);
    }

    #[test]
    fn cubes_sharing_an_edge_are_flagged() {
        // second cube shares the edge (1,5) of the first, diagonally offset
        let mut verts: Vec<Point3> = cube().vertices().to_vec();
        let extra = [
            Point3::new(2.0, -1.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(1.0, -1.0, 0.0),
            Point3::new(2.0, -1.0, 1.0),
            Point3::new(2.0, 0.0, 1.0),
            Point3::new(1.0, -1.0, 1.0),
        ];
        verts.extend_from_slice(&extra);
        let cells = vec![[0, 1, 2, 3, 4, 5, 6, 7], [10, 8, 9, 1, 13, 11, 12, 5]];
        let m = HexMesh::new(verts, cells).unwrap();
        let r = validate(&m);
        assert!(!r.ok);
        assert!(r
            .findings
            .iter()
            .any(|f| matches!(f, Finding::NonManifoldBoundaryEdge { .. })));
        assert!(r
            .findings
            .iter()
            .any(|f| matches!(f, Finding::NonManifoldVertex { vertex: 1, .. })));
    }

    #[test]
    fn extraordinary_edge_degree() {
        // three cells around a vertical axis edge: a triangle split into three quads, extruded
        let m = crate::hexmesh::tests_support::fan_prism(3, 1);
        let axis = m.find_edge(0, 1).unwrap();
        assert_eq!(m.edge_degree(axis), 3);
        let s = m.vertex_star(0).unwrap();
        assert!(s.edges.iter().any(|e| e.edge == axis && e.degree == 3));
    }

    #[test]
    fn edges_independent_of_cell_order() {
        let m = lattice(3, 2, 2, [1.0; 3]);
        let mut cells = m.cells().to_vec();
        cells.reverse();
        cells.swap(0, 5);
        let p = HexMesh::new(m.vertices().to_vec(), cells).unwrap();
        let mut a = m.edges().to_vec();
        let mut b = p.edges().to_vec();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let mut fa: Vec<_> = m.faces().iter().map(|f| face_key(*f)).collect();
        let mut fb: Vec<_> = p.faces().iter().map(|f| face_key(*f)).collect();
        fa.sort();
        fb.sort();
        assert_eq!(fa, fb);
    }
}

/// Small extraordinary meshes used across the test suites.
#[doc(hidden)]
pub mod tests_support {
    use super::*;
    use core::f64::consts::PI;

    /// A regular `k`-gon split into `k` quads around its centre, extruded into
    /// `layers` layers of hexahedra along z. With `layers = 2` the centre of
    /// the middle layer is an interior vertex of valence `k + 2` whose axis
    /// edges have degree `k`.
    ///
    /// Vertex 0 is the centre of layer 0 (z = 0), vertex 1 the centre of
    /// layer 1, and so on; ring vertices follow.
    pub fn fan_prism(k: usize, layers: usize) -> HexMesh {
        assert!(k >= 3);
        // per layer: centre, k corner points, k edge midpoints
        let per = 1 + 2 * k;
        let mut vertices = vec![Point3::zeros(); per * (layers + 1)];
        for l in 0..=layers {
            let z = l as f64;
            vertices[l] = Point3::new(0.0, 0.0, z);
            for i in 0..k {
                let a = 2.0 * PI * i as f64 / k as f64;
                let b = 2.0 * PI * (i as f64 + 0.5) / k as f64;
                let corner = Point3::new(libm::cos(a), libm::sin(a), z);
                let mid = Point3::new(libm::cos(b), libm::sin(b), z) * libm::cos(PI / k as f64);
                vertices[ring(k, layers, l, 2 * i)] = corner;
                vertices[ring(k, layers, l, 2 * i + 1)] = mid;
            }
        }
        let mut cells = Vec::new();
        for l in 0..layers {
            for i in 0..k {
                // quad: centre, mid(i-1), corner(i), mid(i)  (counterclockwise)
                let prev_mid = (2 * i + 2 * k - 1) % (2 * k);
                let q = |l: usize| {
                    [
                        l,
                        ring(k, layers, l, prev_mid),
                        ring(k, layers, l, 2 * i),
                        ring(k, layers, l, 2 * i + 1),
                    ]
                };
                let (b, t) = (q(l), q(l + 1));
                cells.push([b[0], b[1], b[2], b[3], t[0], t[1], t[2], t[3]]);
            }
        }
        HexMesh::new(vertices, cells).unwrap()
    }

    fn ring(k: usize, layers: usize, layer: usize, i: usize) -> usize {
        (layers + 1) + layer * 2 * k + i
    }

    /// A tetrahedron split into four hexahedra; the centroid (vertex 14) is an
    /// interior vertex of valence 4 whose edges all have degree 3.
    pub fn split_tetrahedron() -> HexMesh {
        let c = [
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(1.0, -1.0, -1.0),
            Point3::new(-1.0, 1.0, -1.0),
            Point3::new(-1.0, -1.0, 1.0),
        ];
        let mut vertices: Vec<Point3> = c.to_vec();
        // edge midpoints 4..10
        let mut emid = BTreeMap::new();
        for a in 0..4 {
            for b in a + 1..4 {
                emid.insert((a, b), vertices.len());
                vertices.push((c[a] + c[b]) * 0.5);
            }
        }
        // face centres 10..14, face i opposite corner i
        let mut fc = [0usize; 4];
        for i in 0..4 {
            let others: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            fc[i] = vertices.len();
            vertices.push(mean(others.iter().map(|&j| c[j])));
        }
        let centroid = vertices.len();
        vertices.push(mean(c.iter().copied()));
        let em = |a: usize, b: usize| emid[&(a.min(b), a.max(b))];
        let mut cells = Vec::new();
        for i in 0..4 {
            let o: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            let (a, b, d) = (o[0], o[1], o[2]);
            // hex at corner i: corner, midpoints towards a,b,d, face centres, centroid
            // bottom: i, m(ia), f(opp d), m(ib); top: m(id), f(opp b), centroid, f(opp a)
            let mut h = [
                i,
                em(i, a),
                fc[d],
                em(i, b),
                em(i, d),
                fc[b],
                centroid,
                fc[a],
            ];
            // orient for positive volume
            let p = |k: usize| vertices[h[k]];
            let vol = (p(1) - p(0)).cross(&(p(3) - p(0))).dot(&(p(4) - p(0)));
            if vol < 0.0 {
                h = [h[0], h[3], h[2], h[1], h[4], h[7], h[6], h[5]];
            }
            cells.push(h);
        }
        HexMesh::new(vertices, cells).unwrap()
    }

    /// Star of vertex 0 over a closed triangulated sphere: every triangle
    /// `(s, t, u)` of directions becomes the parallelepiped spanned by
    /// `s, t, u`. The link of vertex 0 is the given triangulation, so the
    /// valence is the number of directions and each edge degree is the
    /// number of triangles at that direction.
    pub fn cone_star(directions: &[Point3], triangles: &[[usize; 3]]) -> HexMesh {
        let mut vertices = vec![Point3::zeros()];
        vertices.extend_from_slice(directions);
        let mut pair = BTreeMap::new();
        let mut pair_point = |vertices: &mut Vec<Point3>, s: usize, t: usize| {
            *pair.entry((s.min(t), s.max(t))).or_insert_with(|| {
                vertices.push(directions[s] + directions[t]);
                vertices.len() - 1
            })
        };
        let mut cells = Vec::new();
        for &[s, t, u] in triangles {
            let st = pair_point(&mut vertices, s, t);
            let su = pair_point(&mut vertices, s, u);
            let tu = pair_point(&mut vertices, t, u);
            vertices.push(directions[s] + directions[t] + directions[u]);
            let r = vertices.len() - 1;
            let mut h = [0, 1 + s, st, 1 + t, 1 + u, su, r, tu];
            if directions[s].cross(&directions[t]).dot(&directions[u]) < 0.0 {
                h = [h[0], h[3], h[2], h[1], h[4], h[7], h[6], h[5]];
            }
            cells.push(h);
        }
        HexMesh::new(vertices, cells).unwrap()
    }

    /// Icosahedral star: vertex 0 has valence 12 and every edge has degree 5.
    pub fn icosahedral_star() -> HexMesh {
        let phi = (1.0 + libm::sqrt(5.0)) / 2.0;
        let mut dirs = Vec::new();
        for a in [-1.0, 1.0] {
            for b in [-phi, phi] {
                dirs.push(Point3::new(0.0, a, b));
                dirs.push(Point3::new(a, b, 0.0));
                dirs.push(Point3::new(b, 0.0, a));
            }
        }
        let adjacent = |i: usize, j: usize| libm::fabs((dirs[i] - dirs[j]).norm() - 2.0) < 1e-9;
        let mut tris = Vec::new();
        for i in 0..12 {
            for j in i + 1..12 {
                for k in j + 1..12 {
                    if adjacent(i, j) && adjacent(j, k) && adjacent(i, k) {
                        tris.push([i, j, k]);
                    }
                }
            }
        }
        cone_star(&dirs, &tris)
    }

    /// Octahedral star: the eight unit cubes around the origin.
    pub fn octahedral_star() -> HexMesh {
        let dirs = [
            Point3::x(),
            -Point3::x(),
            Point3::y(),
            -Point3::y(),
            Point3::z(),
            -Point3::z(),
        ];
        let mut tris = Vec::new();
        for a in [0, 1] {
            for b in [2, 3] {
                for c in [4, 5] {
                    tris.push([a, b, c]);
                }
            }
        }
        cone_star(&dirs, &tris)
    }
}
