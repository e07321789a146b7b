//! Legacy ASCII VTK 3.0 unstructured grids.

use std::fmt::Write;
use std::path::Path;

use ccsolid::hexmesh::HEX_CORNERS;
use ccsolid::iga::sub_index;
use ccsolid::spline::tensor_basis;
use ccsolid::{HexMesh, Point3, SplineModel};

use crate::text::push_floats;

pub const VTK_VERTEX: u8 = 1;
pub const VTK_HEXAHEDRON: u8 = 12;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Vertex(usize),
    Hexahedron([usize; 8]),
}

impl Cell {
    fn indices(&self) -> &[usize] {
        match self {
            Cell::Vertex(i) => core::slice::from_ref(i),
            Cell::Hexahedron(h) => h,
        }
    }

    fn type_id(&self) -> u8 {
        match self {
            Cell::Vertex(_) => VTK_VERTEX,
            Cell::Hexahedron(_) => VTK_HEXAHEDRON,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Attribute {
    Scalars(Vec<f64>),
    Vectors(Vec<Point3>),
}

impl Attribute {
    fn len(&self) -> usize {
        match self {
            Attribute::Scalars(v) => v.len(),
            Attribute::Vectors(v) => v.len(),
        }
    }

    fn select(&self, keep: &[usize]) -> Self {
        match self {
            Attribute::Scalars(v) => Attribute::Scalars(keep.iter().map(|&i| v[i]).collect()),
            Attribute::Vectors(v) => Attribute::Vectors(keep.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VtkError {
    #[error("field `{name}` has {got} values, expected {expected}")]
    FieldSize { name: String, expected: usize, got: usize },
    #[error("field name `{0}` must be a non-empty word without whitespace")]
    FieldName(String),
    #[error("cell {cell} references point {index}, but there are {count} points")]
    PointIndex { cell: usize, index: usize, count: usize },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnstructuredGrid {
    pub points: Vec<Point3>,
    pub cells: Vec<Cell>,
    pub cell_data: Vec<(String, Attribute)>,
    pub point_data: Vec<(String, Attribute)>,
}

impl UnstructuredGrid {
    pub fn from_mesh(mesh: &HexMesh) -> Self {
        Self {
            points: mesh.vertices().to_vec(),
            cells: mesh.cells().iter().map(|c| Cell::Hexahedron(*c)).collect(),
            ..Self::default()
        }
    }

    /// One vertex cell per point.
    pub fn point_cloud(points: Vec<Point3>) -> Self {
        Self {
            cells: (0..points.len()).map(Cell::Vertex).collect(),
            points,
            ..Self::default()
        }
    }

    pub fn with_cell_scalars(mut self, name: &str, values: Vec<f64>) -> Self {
        self.cell_data.push((name.into(), Attribute::Scalars(values)));
        self
    }

    pub fn with_point_scalars(mut self, name: &str, values: Vec<f64>) -> Self {
        self.point_data.push((name.into(), Attribute::Scalars(values)));
        self
    }

    pub fn with_point_vectors(mut self, name: &str, values: Vec<Point3>) -> Self {
        self.point_data.push((name.into(), Attribute::Vectors(values)));
        self
    }

    /// Keeps the cells accepted by `keep` and the points they use.
    pub fn retain_cells(&self, keep: impl Fn(usize) -> bool) -> Self {
        let kept: Vec<usize> = (0..self.cells.len()).filter(|&c| keep(c)).collect();
        let mut map = vec![usize::MAX; self.points.len()];
        let mut used = Vec::new();
        let cells = kept
            .iter()
            .map(|&c| {
                let mut remap = |i: usize| {
                    if map[i] == usize::MAX {
                        map[i] = used.len();
                        used.push(i);
                    }
                    map[i]
                };
                match &self.cells[c] {
                    Cell::Vertex(i) => Cell::Vertex(remap(*i)),
                    Cell::Hexahedron(h) => Cell::Hexahedron(h.map(remap)),
                }
            })
            .collect();
        Self {
            points: used.iter().map(|&i| self.points[i]).collect(),
            cells,
            cell_data: self.cell_data.iter().map(|(n, a)| (n.clone(), a.select(&kept))).collect(),
            point_data: self.point_data.iter().map(|(n, a)| (n.clone(), a.select(&used))).collect(),
        }
    }

    fn check(&self) -> Result<(), VtkError> {
        let np = self.points.len();
        for (cell, c) in self.cells.iter().enumerate() {
            if let Some(&index) = c.indices().iter().find(|&&i| i >= np) {
                return Err(VtkError::PointIndex { cell, index, count: np });
            }
        }
        let groups = [(&self.cell_data, self.cells.len()), (&self.point_data, np)];
        for (data, expected) in groups {
            for (name, a) in data {
                if name.is_empty() || name.chars().any(char::is_whitespace) {
                    return Err(VtkError::FieldName(name.clone()));
                }
                if a.len() != expected {
                    return Err(VtkError::FieldSize {
                        name: name.clone(),
                        expected,
                        got: a.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_vtk(&self, title: &str) -> Result<String, VtkError> {
        self.check()?;
        let title: String = title.chars().filter(|&c| c != '\n' && c != '\r').take(255).collect();
        let mut s = format!("# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n");
        let _ = writeln!(s, "POINTS {} double", self.points.len());
        for p in &self.points {
            push_floats(&mut s, &[p.x, p.y, p.z]);
        }
        let size: usize = self.cells.iter().map(|c| 1 + c.indices().len()).sum();
        let _ = writeln!(s, "CELLS {} {size}", self.cells.len());
        for c in &self.cells {
            let idx = c.indices();
            s.push_str(&idx.len().to_string());
            for i in idx {
                let _ = write!(s, " {i}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.cells.len());
        for c in &self.cells {
            let _ = writeln!(s, "{}", c.type_id());
        }
        write_data(&mut s, "CELL_DATA", self.cells.len(), &self.cell_data);
        write_data(&mut s, "POINT_DATA", self.points.len(), &self.point_data);
        Ok(s)
    }

    pub fn write(&self, path: &Path, title: &str) -> Result<(), VtkError> {
        let text = self.to_vtk(title)?;
        std::fs::write(path, text).map_err(|source| VtkError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn write_data(s: &mut String, header: &str, n: usize, data: &[(String, Attribute)]) {
    if data.is_empty() {
        return;
    }
    let _ = writeln!(s, "{header} {n}");
    for (name, a) in data {
        match a {
            Attribute::Scalars(v) => {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    push_floats(s, &[*x]);
                }
            }
            Attribute::Vectors(v) => {
                let _ = writeln!(s, "VECTORS {name} double");
                for p in v {
                    push_floats(s, &[p.x, p.y, p.z]);
                }
            }
        }
    }
}

/// Every cell of a spline model sampled on an `n×n×n` grid of
/// sub-hexahedra. Sub-hexahedron `(i, j, k)` of cell `c` is cell
/// `c·n³ + i + n(j + nk)` of the grid.
pub struct SampledModel {
    pub grid: UnstructuredGrid,
    pub n: usize,
    /// `(cell, (u, v, w))` of every grid point.
    pub sites: Vec<(usize, [f64; 3])>,
}

impl SampledModel {
    pub fn new(model: &SplineModel, n: usize) -> Self {
        let n = n.max(1);
        let m = n + 1;
        let per = m * m * m;
        let mut points = Vec::with_capacity(model.num_cells() * per);
        let mut sites = Vec::with_capacity(model.num_cells() * per);
        let mut cells = Vec::with_capacity(model.num_cells() * n * n * n);
        let t = |i: usize| i as f64 / n as f64;
        for c in 0..model.num_cells() {
            let vol = model.volume(c);
            let base = points.len();
            for a in 0..m {
                for b in 0..m {
                    for k in 0..m {
                        let uvw = [t(a), t(b), t(k)];
                        points.push(vol.evaluate(uvw[0], uvw[1], uvw[2]).expect("grid parameters lie in [0, 1]"));
                        sites.push((c, uvw));
                    }
                }
            }
            let at = |a: usize, b: usize, k: usize| base + (a * m + b) * m + k;
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        cells.push(Cell::Hexahedron(
                            HEX_CORNERS.map(|[da, db, dc]| at(i + da, j + db, k + dc)),
                        ));
                    }
                }
            }
        }
        Self {
            grid: UnstructuredGrid {
                points,
                cells,
                ..UnstructuredGrid::default()
            },
            n,
            sites,
        }
    }

    /// Field with `dpp` coefficients per control point evaluated at every
    /// grid point.
    pub fn interpolate(&self, model: &SplineModel, coeffs: &[f64], dpp: usize) -> Vec<Vec<f64>> {
        self.sites
            .iter()
            .map(|&(c, [u, v, w])| {
                let (n, _) = tensor_basis(u, v, w);
                let mut out = vec![0.0; dpp];
                for (s, &g) in model.cells[c].iter().enumerate() {
                    for (q, o) in out.iter_mut().enumerate() {
                        *o += n[s] * coeffs[dpp * g + q];
                    }
                }
                out
            })
            .collect()
    }

    /// Density element of every grid cell for densities at `level`, where
    /// `n` must be a multiple of `2^level`.
    pub fn density_elements(&self, num_cells: usize, level: u32) -> Vec<usize> {
        let side = 1usize << level;
        let n = self.n;
        debug_assert_eq!(n % side, 0);
        let m = n / side;
        let per = side * side * side;
        let mut out = Vec::with_capacity(num_cells * n * n * n);
        for c in 0..num_cells {
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        out.push(c * per + sub_index(level, [i / m, j / m, k / m]));
                    }
                }
            }
        }
        out
    }
}
