//! Tricubic Bézier approximation of the Catmull-Clark solid.
//!
//! Every cell carries a 4×4×4 net. Slot `(a, b, c)` is stored at
//! `16a + 4b + c`; `a` runs along the cell's u axis (corner 0 → 1), `b` along
//! v (0 → 3) and `c` along w (0 → 4). Indices 0 and 3 are end slots, 1 and 2
//! inner slots; the corner a slot belongs to is `(a ≥ 2, b ≥ 2, c ≥ 2)`.
//!
//! Interior slots hold the per-corner interior points of the mask; face, edge
//! and corner slots are averages of the interior points of all cells sharing
//! the face, edge or vertex, and are stored once in a global table.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Matrix3;

use crate::geometry::Point3;
use crate::hexmesh::{corner_at, flip_corner, local_edge, local_face, HexMesh, MeshError, HEX_CORNERS};
use crate::subdivision::{limit_point, subdivide, LimitKind, SubdivisionError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplineError {
    #[error("parameter ({0}, {1}, {2}) outside [0,1]³")]
    ParameterOutOfRange(f64, f64, f64),
    #[error("cell {0} out of range")]
    InvalidCell(usize),
    #[error("corner {0} out of range")]
    InvalidCorner(usize),
    #[error("sampling depth {depth} needs {cells} cells, above the limit of {limit}")]
    DepthTooLarge { depth: usize, cells: u64, limit: u64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Subdivision(#[from] SubdivisionError),
}

/// Largest number of fine cells `approximation_error` will build.
pub const MAX_SAMPLE_CELLS: u64 = 10_000_000;

#[inline]
pub const fn slot(a: usize, b: usize, c: usize) -> usize {
    16 * a + 4 * b + c
}

#[inline]
pub const fn slot_coords(s: usize) -> [usize; 3] {
    [s / 16, (s / 4) % 4, s % 4]
}

/// Cubic Bernstein polynomials at `t`.
#[inline]
pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * t * s * s, 3.0 * t * t * s, t * t * t]
}

/// Derivatives of the cubic Bernstein polynomials at `t`.
#[inline]
pub fn bernstein_derivative(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [-3.0 * s * s, 3.0 * s * (s - 2.0 * t), 3.0 * t * (2.0 * s - t), 3.0 * t * t]
}

/// Tensor-product basis values and parametric gradients at `(u, v, w)`,
/// indexed by slot.
pub fn tensor_basis(u: f64, v: f64, w: f64) -> ([f64; 64], [[f64; 3]; 64]) {
    let (bu, bv, bw) = (bernstein(u), bernstein(v), bernstein(w));
    let (du, dv, dw) = (
        bernstein_derivative(u),
        bernstein_derivative(v),
        bernstein_derivative(w),
    );
    let mut n = [0.0; 64];
    let mut g = [[0.0; 3]; 64];
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let s = slot(a, b, c);
                n[s] = bu[a] * bv[b] * bw[c];
                g[s] = [du[a] * bv[b] * bw[c], bu[a] * dv[b] * bw[c], bu[a] * bv[b] * dw[c]];
            }
        }
    }
    (n, g)
}

fn check_range(u: f64, v: f64, w: f64) -> Result<(), SplineError> {
    let ok = |t: f64| (0.0..=1.0).contains(&t);
    if ok(u) && ok(v) && ok(w) {
        Ok(())
    } else {
        Err(SplineError::ParameterOutOfRange(u, v, w))
    }
}

/// One tricubic Bézier volume.
#[derive(Clone, Debug, PartialEq)]
pub struct BezierVolume {
    pub points: [Point3; 64],
}

impl BezierVolume {
    pub fn new(points: [Point3; 64]) -> Self {
        Self { points }
    }

    /// Net of the affine map `x = origin + A·(u,v,w)`: points at the Greville
    /// abscissae `(a/3, b/3, c/3)`.
    pub fn affine(origin: Point3, a: Matrix3<f64>) -> Self {
        let mut points = [Point3::zeros(); 64];
        for (s, p) in points.iter_mut().enumerate() {
            let [i, j, k] = slot_coords(s);
            *p = origin + a * Point3::new(i as f64, j as f64, k as f64) / 3.0;
        }
        Self { points }
    }

    pub fn point(&self, a: usize, b: usize, c: usize) -> Point3 {
        self.points[slot(a, b, c)]
    }

    pub fn evaluate(&self, u: f64, v: f64, w: f64) -> Result<Point3, SplineError> {
        check_range(u, v, w)?;
        let (n, _) = tensor_basis(u, v, w);
        Ok(self.points.iter().zip(n).map(|(p, b)| p * b).sum())
    }

    /// `∂x/∂(u,v,w)`, one column per parameter.
    pub fn jacobian(&self, u: f64, v: f64, w: f64) -> Result<Matrix3<f64>, SplineError> {
        check_range(u, v, w)?;
        let (_, g) = tensor_basis(u, v, w);
        let mut j = Matrix3::zeros();
        for (p, d) in self.points.iter().zip(g) {
            for col in 0..3 {
                j.column_mut(col).axpy(d[col], p, 1.0);
            }
        }
        Ok(j)
    }
}

/// Point of the interior mask at `corner` of `cell`:
/// `[2(n−2)v₁ + m₂v₂ + m₃v₃ + m₅v₅ + 2(v₄+v₆+v₇) + v₈] / [2(n−2) + m₂+m₃+m₅ + 7]`.
pub fn interior_bezier_point(mesh: &HexMesh, cell: usize, corner: usize) -> Result<Point3, SplineError> {
    if cell >= mesh.num_cells() {
        return Err(SplineError::InvalidCell(cell));
    }
    if corner >= 8 {
        return Err(SplineError::InvalidCorner(corner));
    }
    Ok(interior_point(mesh, cell, corner))
}

fn interior_point(mesh: &HexMesh, cell: usize, corner: usize) -> Point3 {
    let hex = mesh.cell(cell);
    let v1 = hex[corner];
    let n = mesh.valence(v1) as f64;
    let mut num = mesh.vertex(v1) * (2.0 * (n - 2.0));
    let mut den = 2.0 * (n - 2.0) + 7.0;
    for mask in [1, 2, 4] {
        let other = flip_corner(corner, mask);
        let e = mesh.cell_edges(cell)[local_edge(corner, other).expect("adjacent corners")];
        let m = mesh.edge_degree(e) as f64;
        num += mesh.vertex(hex[other]) * m;
        den += m;
    }
    for mask in [3, 5, 6] {
        num += mesh.vertex(hex[flip_corner(corner, mask)]) * 2.0;
    }
    num += mesh.vertex(hex[flip_corner(corner, 7)]);
    num / den
}

/// Mesh entity a slot of `cell` is shared through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotEntity {
    Vertex(usize),
    /// edge, endpoint (0 or 1 in the edge's sorted vertex pair)
    Edge(usize, usize),
    /// face, position of the corner vertex in the face cycle
    Face(usize, usize),
    /// cell, local corner
    Cell(usize, usize),
}

pub fn slot_entity(mesh: &HexMesh, cell: usize, s: usize) -> SlotEntity {
    let abc = slot_coords(s);
    let bits = abc.map(|x| x / 2);
    let corner = corner_at(bits);
    let vertex = mesh.cell(cell)[corner];
    let inner: Vec<usize> = (0..3).filter(|&d| abc[d] == 1 || abc[d] == 2).collect();
    match inner.len() {
        0 => SlotEntity::Vertex(vertex),
        1 => {
            let other = flip_corner(corner, 1 << inner[0]);
            let e = mesh.cell_edges(cell)[local_edge(corner, other).expect("adjacent corners")];
            let end = if mesh.edge(e)[0] == vertex { 0 } else { 1 };
            SlotEntity::Edge(e, end)
        }
        2 => {
            let axis = (0..3).find(|d| !inner.contains(d)).unwrap();
            let f = mesh.cell_faces(cell)[local_face(axis, bits[axis])];
            let pos = mesh.face(f).iter().position(|&x| x == vertex).unwrap();
            SlotEntity::Face(f, pos)
        }
        _ => SlotEntity::Cell(cell, corner),
    }
}

/// Global control-point table plus per-cell slot maps.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineModel {
    pub points: Vec<Point3>,
    pub cells: Vec<[usize; 64]>,
}

/// Sizes of the entity blocks of the global table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableLayout {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub cells: usize,
}

impl TableLayout {
    pub fn of(mesh: &HexMesh) -> Self {
        Self {
            vertices: mesh.num_vertices(),
            edges: mesh.num_edges(),
            faces: mesh.num_faces(),
            cells: mesh.num_cells(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices + 2 * self.edges + 4 * self.faces + 8 * self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, e: SlotEntity) -> usize {
        let nv = self.vertices;
        let ne = 2 * self.edges;
        let nf = 4 * self.faces;
        match e {
            SlotEntity::Vertex(v) => v,
            SlotEntity::Edge(e, s) => nv + 2 * e + s,
            SlotEntity::Face(f, i) => nv + ne + 4 * f + i,
            SlotEntity::Cell(c, k) => nv + ne + nf + 8 * c + k,
        }
    }
}

impl SplineModel {
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_control_points(&self) -> usize {
        self.points.len()
    }

    pub fn volume(&self, cell: usize) -> BezierVolume {
        BezierVolume::new(self.cells[cell].map(|i| self.points[i]))
    }

    pub fn evaluate(&self, cell: usize, u: f64, v: f64, w: f64) -> Result<Point3, SplineError> {
        if cell >= self.cells.len() {
            return Err(SplineError::InvalidCell(cell));
        }
        self.volume(cell).evaluate(u, v, w)
    }

    /// Control points lying in a boundary face layer of some cell.
    pub fn boundary_points(&self, mesh: &HexMesh) -> Vec<bool> {
        let mut flags = vec![false; self.points.len()];
        for (c, map) in self.cells.iter().enumerate() {
            for axis in 0..3 {
                for side in 0..2 {
                    let f = mesh.cell_faces(c)[local_face(axis, side)];
                    if !mesh.is_boundary_face(f) {
                        continue;
                    }
                    for (s, &g) in map.iter().enumerate() {
                        if slot_coords(s)[axis] == 3 * side {
                            flags[g] = true;
                        }
                    }
                }
            }
        }
        flags
    }

    /// Same connectivity with every control point transformed.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            cells: self.cells.clone(),
        }
    }
}

/// Builds the global Bézier control table of `mesh`.
pub fn build_spline_model(mesh: &HexMesh) -> Result<SplineModel, SplineError> {
    let report = crate::hexmesh::validate(mesh);
    if let Some(f) = report.structural().next() {
        return Err(SubdivisionError::NonConforming(f.clone()).into());
    }
    let layout = TableLayout::of(mesh);
    let interior: Vec<[Point3; 8]> = (0..mesh.num_cells())
        .map(|c| core::array::from_fn(|k| interior_point(mesh, c, k)))
        .collect();

    let mut sums = vec![Point3::zeros(); layout.len()];
    let mut counts = vec![0u32; layout.len()];
    let mut cells = Vec::with_capacity(mesh.num_cells());
    for c in 0..mesh.num_cells() {
        let mut map = [0usize; 64];
        for (s, g) in map.iter_mut().enumerate() {
            *g = layout.index(slot_entity(mesh, c, s));
        }
        cells.push(map);
    }
    // each distinct (global point, cell) pair contributes that cell's
    // interior point at the slot's corner once
    for (c, map) in cells.iter().enumerate() {
        let mut seen: Vec<usize> = Vec::with_capacity(27);
        for (s, &g) in map.iter().enumerate() {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            let corner = corner_at(slot_coords(s).map(|x| x / 2));
            sums[g] += interior[c][corner];
            counts[g] += 1;
        }
    }
    let points = sums
        .iter()
        .zip(&counts)
        .map(|(p, &n)| p / n as f64)
        .collect();
    Ok(SplineModel { points, cells })
}

/// A cell whose eight vertices are interior with valence 6 and whose
/// vertices' edges all have degree 4.
pub fn is_regular_cell(mesh: &HexMesh, cell: usize) -> bool {
    mesh.cell(cell).iter().all(|&v| {
        !mesh.is_boundary_vertex(v)
            && mesh.valence(v) == 6
            && mesh.vertex_edges(v).iter().all(|&e| mesh.edge_degree(e) == 4)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSample {
    /// Vertex of the subdivided mesh.
    pub vertex: usize,
    /// Cell of the input mesh the sample lies in.
    pub cell: usize,
    pub param: [f64; 3],
    pub distance: f64,
    pub kind: LimitKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats {
    pub depth: usize,
    pub max: f64,
    pub mean: f64,
    pub samples: Vec<ErrorSample>,
    /// Fine vertices whose limit point is undefined (non-simple stars).
    pub skipped: usize,
}

impl ErrorStats {
    fn from_samples(depth: usize, samples: Vec<ErrorSample>, skipped: usize) -> Self {
        let max = samples.iter().map(|s| s.distance).fold(0.0, f64::max);
        let mean = if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(|s| s.distance).sum::<f64>() / samples.len() as f64
        };
        Self {
            depth,
            max,
            mean,
            samples,
            skipped,
        }
    }

    /// Statistics over the samples accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&ErrorSample) -> bool) -> Self {
        let samples = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Self::from_samples(self.depth, samples, self.skipped)
    }
}

/// Distances between limit points of the `depth`-times subdivided mesh and
/// the Bézier volumes evaluated at the matching dyadic parameters.
pub fn approximation_error(
    mesh: &HexMesh,
    model: &SplineModel,
    depth: usize,
) -> Result<ErrorStats, SplineError> {
    let fine_cells = 8u64
        .checked_pow(depth as u32)
        .and_then(|x| x.checked_mul(mesh.num_cells() as u64))
        .unwrap_or(u64::MAX);
    if fine_cells > MAX_SAMPLE_CELLS {
        return Err(SplineError::DepthTooLarge {
            depth,
            cells: fine_cells,
            limit: MAX_SAMPLE_CELLS,
        });
    }
    let mut fine = mesh.clone();
    for _ in 0..depth {
        fine = subdivide(&fine)?.0;
    }
    let per = 1usize << (3 * depth);
    let scale = 1.0 / (1u64 << depth) as f64;
    let mut owner: Vec<Option<(usize, [f64; 3])>> = vec![None; fine.num_vertices()];
    for fc in 0..fine.num_cells() {
        let ancestor = fc / per;
        let digits = child_digits(fc % per, depth);
        let mut o = [0.0f64; 3];
        let mut h = 1.0;
        for k in digits {
            h *= 0.5;
            for d in 0..3 {
                o[d] += h * HEX_CORNERS[k][d] as f64;
            }
        }
        for (corner, &v) in fine.cell(fc).iter().enumerate() {
            if owner[v].is_none() {
                let bits = HEX_CORNERS[corner];
                let p = core::array::from_fn(|d| o[d] + scale * bits[d] as f64);
                owner[v] = Some((ancestor, p));
            }
        }
    }
    let mut samples = Vec::with_capacity(fine.num_vertices());
    let mut skipped = 0;
    for (v, own) in owner.iter().enumerate() {
        let Some((cell, param)) = *own else { continue };
        let lp = match limit_point(&fine, v) {
            Ok(lp) => lp,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let x = model.volume(cell).evaluate(param[0], param[1], param[2])?;
        samples.push(ErrorSample {
            vertex: v,
            cell,
            param,
            distance: (x - lp.point).norm(),
            kind: lp.kind,
        });
    }
    Ok(ErrorStats::from_samples(depth, samples, skipped))
}

/// Corner indices of the successive subdivision steps leading from an input
/// cell to its descendant `index` (children of `c` are `8c + k`).
fn child_digits(index: usize, depth: usize) -> Vec<usize> {
    (0..depth).rev().map(|level| (index >> (3 * level)) & 7).collect()
}
