//! Spline model files: `ncp ncell`, then `ncp` lines `x y z`, then per cell
//! one line of 64 global control point indices in slot order `16a + 4b + c`.

use ccsolid::{Point3, SplineModel};

use crate::text::{content_lines, fields, push_floats, FormatError};

pub fn parse_model(text: &str) -> Result<SplineModel, FormatError> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or(FormatError::Truncated("header `ncp ncell`"))?;
    let [ncp, ncell] = fields::<usize, 2>(hl, header, "header `ncp ncell`")?;
    let mut points = Vec::with_capacity(ncp);
    for _ in 0..ncp {
        let (l, t) = lines.next().ok_or(FormatError::Truncated("control point line"))?;
        let [x, y, z] = fields::<f64, 3>(l, t, "control point")?;
        points.push(Point3::new(x, y, z));
    }
    let mut cells = Vec::with_capacity(ncell);
    for c in 0..ncell {
        let (l, t) = lines.next().ok_or(FormatError::Truncated("cell line"))?;
        let idx = fields::<usize, 64>(l, t, "cell")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= ncp) {
            return Err(FormatError::at(
                l,
                format!("cell {c} references control point {bad}, but there are {ncp}"),
            ));
        }
        cells.push(idx);
    }
    if let Some((l, _)) = lines.next() {
        return Err(FormatError::at(l, "unexpected data after the last cell"));
    }
    Ok(SplineModel { points, cells })
}

pub fn write_model(model: &SplineModel) -> String {
    let mut out = format!("{} {}\n", model.points.len(), model.cells.len());
    for p in &model.points {
        push_floats(&mut out, &[p.x, p.y, p.z]);
    }
    for c in &model.cells {
        let line: Vec<String> = c.iter().map(|i| i.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
