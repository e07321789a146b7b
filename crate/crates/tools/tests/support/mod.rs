//! Strict reader for the subset of the legacy VTK grammar the writer emits.
#![allow(dead_code)]

use std::collections::HashMap;

#[derive(Debug)]
pub struct Legacy {
    pub title: String,
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub types: Vec<u8>,
    /// name → (components, values)
    pub cell_data: HashMap<String, (usize, Vec<f64>)>,
    pub point_data: HashMap<String, (usize, Vec<f64>)>,
}

struct Tokens<'a> {
    it: std::iter::Peekable<std::str::SplitAsciiWhitespace<'a>>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str, String> {
        self.it.next().ok_or_else(|| "unexpected end of file".to_string())
    }

    fn expect(&mut self, word: &str) -> Result<(), String> {
        let t = self.next()?;
        if t == word {
            Ok(())
        } else {
            Err(format!("expected `{word}`, found `{t}`"))
        }
    }

    fn int(&mut self) -> Result<usize, String> {
        let t = self.next()?;
        t.parse().map_err(|_| format!("expected an integer, found `{t}`"))
    }

    fn float(&mut self) -> Result<f64, String> {
        let t = self.next()?;
        let v: f64 = t.parse().map_err(|_| format!("expected a number, found `{t}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite value `{t}`"))
        }
    }
}

fn attributes(tok: &mut Tokens, n: usize, out: &mut HashMap<String, (usize, Vec<f64>)>) -> Result<(), String> {
    while let Some(&kw) = tok.it.peek() {
        let comps = match kw {
            "SCALARS" => {
                tok.next()?;
                let name = tok.next()?.to_string();
                tok.expect("double")?;
                let c = tok.int()?;
                if !(1..=4).contains(&c) {
                    return Err(format!("bad component count {c}"));
                }
                tok.expect("LOOKUP_TABLE")?;
                tok.expect("default")?;
                (name, c)
            }
            "VECTORS" => {
                tok.next()?;
                let name = tok.next()?.to_string();
                tok.expect("double")?;
                (name, 3)
            }
            _ => return Ok(()),
        };
        let values = (0..n * comps.1).map(|_| tok.float()).collect::<Result<Vec<_>, _>>()?;
        if out.insert(comps.0.clone(), (comps.1, values)).is_some() {
            return Err(format!("attribute `{}` repeated", comps.0));
        }
    }
    Ok(())
}

pub fn read_legacy(text: &str) -> Result<Legacy, String> {
    let mut lines = text.splitn(5, '\n');
    if lines.next() != Some("# vtk DataFile Version 3.0") {
        return Err("bad version line".into());
    }
    let title = lines.next().ok_or("missing title")?.to_string();
    if title.len() > 256 {
        return Err("title too long".into());
    }
    if lines.next() != Some("ASCII") {
        return Err("expected ASCII".into());
    }
    if lines.next() != Some("DATASET UNSTRUCTURED_GRID") {
        return Err("expected DATASET UNSTRUCTURED_GRID".into());
    }
    let mut tok = Tokens {
        it: lines.next().unwrap_or("").split_ascii_whitespace().peekable(),
    };
    tok.expect("POINTS")?;
    let np = tok.int()?;
    tok.expect("double")?;
    let points = (0..np)
        .map(|_| Ok([tok.float()?, tok.float()?, tok.float()?]))
        .collect::<Result<Vec<_>, String>>()?;
    tok.expect("CELLS")?;
    let nc = tok.int()?;
    let size = tok.int()?;
    let mut cells = Vec::with_capacity(nc);
    let mut used = 0;
    for _ in 0..nc {
        let k = tok.int()?;
        let ids = (0..k).map(|_| tok.int()).collect::<Result<Vec<_>, _>>()?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= np) {
            return Err(format!("point index {bad} out of range"));
        }
        used += k + 1;
        cells.push(ids);
    }
    if used != size {
        return Err(format!("CELLS size {size} but {used} integers listed"));
    }
    tok.expect("CELL_TYPES")?;
    if tok.int()? != nc {
        return Err("CELL_TYPES count differs from CELLS".into());
    }
    let mut types = Vec::with_capacity(nc);
    for c in &cells {
        let t = tok.int()? as u8;
        let want = match t {
            1 => 1,
            12 => 8,
            _ => return Err(format!("unsupported cell type {t}")),
        };
        if c.len() != want {
            return Err(format!("cell type {t} with {} points", c.len()));
        }
        types.push(t);
    }
    let mut cell_data = HashMap::new();
    let mut point_data = HashMap::new();
    let mut seen = (false, false);
    while let Some(kw) = tok.it.next() {
        match kw {
            "CELL_DATA" if !seen.0 && !seen.1 => {
                seen.0 = true;
                if tok.int()? != nc {
                    return Err("CELL_DATA count differs from CELLS".into());
                }
                attributes(&mut tok, nc, &mut cell_data)?;
            }
            "POINT_DATA" if !seen.1 => {
                seen.1 = true;
                if tok.int()? != np {
                    return Err("POINT_DATA count differs from POINTS".into());
                }
                attributes(&mut tok, np, &mut point_data)?;
            }
            other => return Err(format!("unexpected token `{other}`")),
        }
    }
    Ok(Legacy {
        title,
        points,
        cells,
        types,
        cell_data,
        point_data,
    })
}

/// `(p1 − p0) × (p3 − p0) · (p4 − p0)` of a hexahedron in VTK order.
pub fn corner_volume(points: &[[f64; 3]], hex: &[usize]) -> f64 {
    let d = |a: usize, b: usize| {
        let (p, q) = (points[hex[a]], points[hex[b]]);
        [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
    };
    let (a, b, c) = (d(0, 1), d(0, 3), d(0, 4));
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    cross[0] * c[0] + cross[1] * c[1] + cross[2] * c[2]
}
