//! Mesh files: `nv nc`, then `nv` lines `x y z`, then `nc` lines of eight
//! 0-based vertex indices in corner order. Lines starting with `#` are
//! ignored.

use ccsolid::{HexMesh, Point3};

use crate::text::{content_lines, fields, push_floats, FormatError};

pub fn parse_mesh(text: &str) -> Result<HexMesh, FormatError> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or(FormatError::Truncated("header `nv nc`"))?;
    let [nv, nc] = fields::<usize, 2>(hl, header, "header `nv nc`")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, t) = lines.next().ok_or(FormatError::Truncated("vertex line"))?;
        let [x, y, z] = fields::<f64, 3>(l, t, "vertex")?;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(FormatError::at(l, "vertex coordinates must be finite"));
        }
        vertices.push(Point3::new(x, y, z));
    }
    let mut cells = Vec::with_capacity(nc);
    for c in 0..nc {
        let (l, t) = lines.next().ok_or(FormatError::Truncated("cell line"))?;
        let idx = fields::<usize, 8>(l, t, "cell")?;
        for (k, &i) in idx.iter().enumerate() {
            if i >= nv {
                return Err(FormatError::at(
                    l,
                    format!("cell {c} references vertex {i}, but the mesh has {nv} vertices"),
                ));
            }
            if idx[..k].contains(&i) {
                return Err(FormatError::at(l, format!("cell {c} lists vertex {i} more than once")));
            }
        }
        cells.push(idx);
    }
    if let Some((l, _)) = lines.next() {
        return Err(FormatError::at(
            l,
            format!("unexpected data after {nv} vertices and {nc} cells"),
        ));
    }
    HexMesh::new(vertices, cells).map_err(|e| FormatError::at(hl, e.to_string()))
}

pub fn write_mesh(mesh: &HexMesh) -> String {
    let mut out = format!("{} {}\n", mesh.num_vertices(), mesh.num_cells());
    for p in mesh.vertices() {
        push_floats(&mut out, &[p.x, p.y, p.z]);
    }
    for c in mesh.cells() {
        let line: Vec<String> = c.iter().map(|i| i.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
