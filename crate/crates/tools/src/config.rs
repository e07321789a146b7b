//! Run configuration: `key = value` lines grouped under `[section]` headers.
//! `[dirichlet]` and `[load]` may repeat; every other section appears at
//! most once and may be omitted to keep its defaults.
//!
//! ```text
//! [problem]
//! type = elasticity
//! [material]
//! E0 = 1
//! nu = 0.3
//! [dirichlet]
//! box = -1 -1 -1 0.05 3 3
//! dofs = xyz
//! value = 0
//! [load]
//! relative_box = 0.9869 -1 -1 2 2 0.1663
//! vector = 0 0 -1
//! ```
//!
//! Conditions select control points with `box` (absolute coordinates),
//! `relative_box` (fractions of the model bounding box) or
//! `boundary = true`.

use std::collections::BTreeMap;
use std::fmt::Write;

use ccsolid::iga::{
    AnalysisConfig, BoundaryConditions, Dirichlet, Load, LoadKind, Problem, Selection, SolverMethod,
};
use ccsolid::topopt::BesoConfig;
use ccsolid::{Aabb, Point3};

use crate::text::{fields, fmt_f64, FormatError};

/// Deepest subdivision the driver accepts.
pub const MAX_SUBDIVIDE: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub analysis: AnalysisConfig,
    /// Subdivision steps applied to the input mesh before analysis.
    pub subdivide: usize,
    /// `level` is the density level; `solver_tolerance` mirrors
    /// `analysis.solver.tolerance`.
    pub beso: BesoConfig,
    pub bcs: BoundaryConditions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let analysis = AnalysisConfig::default();
        Self {
            beso: BesoConfig {
                solver_tolerance: analysis.solver.tolerance,
                ..BesoConfig::default()
            },
            analysis,
            subdivide: 2,
            bcs: BoundaryConditions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Invalid(String),
}

struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str, out: &mut T) -> Result<(), FormatError> {
        if let Some((l, v)) = self.take(key) {
            *out = v
                .parse()
                .map_err(|_| FormatError::at(l, format!("invalid value `{v}` for `{key}`")))?;
        }
        Ok(())
    }

    fn flag(&mut self, key: &str, out: &mut bool) -> Result<(), FormatError> {
        if let Some((l, v)) = self.take(key) {
            *out = parse_bool(l, &v)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), FormatError> {
        match self.entries.into_iter().next() {
            Some((k, (l, _))) => Err(FormatError::at(l, format!("unknown key `{k}` in [{}]", self.name))),
            None => Ok(()),
        }
    }
}

fn parse_bool(line: usize, v: &str) -> Result<bool, FormatError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(FormatError::at(line, format!("expected true or false, found `{v}`"))),
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>, FormatError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(name) = t.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| FormatError::at(line, "unterminated section header"))?
                .trim();
            sections.push(Section {
                name: name.to_string(),
                line,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| FormatError::at(line, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(FormatError::at(line, "empty key"));
        }
        let sec = sections
            .last_mut()
            .ok_or_else(|| FormatError::at(line, "key outside of any section"))?;
        if sec.entries.insert(k.to_string(), (line, v.to_string())).is_some() {
            return Err(FormatError::at(line, format!("duplicate key `{k}` in [{}]", sec.name)));
        }
    }
    Ok(sections)
}

fn parse_components(line: usize, v: &str) -> Result<Vec<usize>, FormatError> {
    if v == "t" {
        return Ok(vec![0]);
    }
    let mut out = Vec::new();
    for ch in v.chars() {
        let c = match ch {
            'x' => 0,
            'y' => 1,
            'z' => 2,
            _ => return Err(FormatError::at(line, format!("dofs must be a subset of xyz or t, found `{v}`"))),
        };
        if out.contains(&c) {
            return Err(FormatError::at(line, format!("dof `{ch}` listed twice")));
        }
        out.push(c);
    }
    if out.is_empty() {
        return Err(FormatError::at(line, "empty dofs"));
    }
    out.sort_unstable();
    Ok(out)
}

fn parse_point(line: usize, v: &str, what: &str) -> Result<Point3, FormatError> {
    let [x, y, z] = fields::<f64, 3>(line, v, what)?;
    Ok(Point3::new(x, y, z))
}

fn parse_box(line: usize, v: &str, what: &str) -> Result<Aabb, FormatError> {
    let [x0, y0, z0, x1, y1, z1] = fields::<f64, 6>(line, v, what)?;
    if !(x0 <= x1 && y0 <= y1 && z0 <= z1) {
        return Err(FormatError::at(line, format!("{what} minimum exceeds its maximum")));
    }
    Ok(Aabb::new(Point3::new(x0, y0, z0), Point3::new(x1, y1, z1)))
}

fn selection(sec: &mut Section) -> Result<Selection, FormatError> {
    let mut found = Vec::new();
    if let Some((l, v)) = sec.take("box") {
        found.push((l, Selection::Box(parse_box(l, &v, "box")?)));
    }
    if let Some((l, v)) = sec.take("relative_box") {
        found.push((l, Selection::RelativeBox(parse_box(l, &v, "relative_box")?)));
    }
    if let Some((l, v)) = sec.take("boundary") {
        if parse_bool(l, &v)? {
            found.push((l, Selection::Boundary));
        }
    }
    match found.len() {
        1 => Ok(found.pop().expect("one entry").1),
        0 => Err(FormatError::at(
            sec.line,
            format!("[{}] needs one of `box`, `relative_box` or `boundary = true`", sec.name),
        )),
        _ => Err(FormatError::at(
            found[1].0,
            "`box`, `relative_box` and `boundary = true` are mutually exclusive",
        )),
    }
}

fn problem_name(p: Problem) -> &'static str {
    match p {
        Problem::Heat => "heat",
        Problem::Elasticity => "elasticity",
    }
}

fn method_name(m: SolverMethod) -> &'static str {
    match m {
        SolverMethod::Auto => "auto",
        SolverMethod::Jacobi => "jacobi",
        SolverMethod::Multigrid => "multigrid",
        SolverMethod::Direct => "direct",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut dof_kinds: Vec<(usize, bool)> = Vec::new();
        for mut sec in split_sections(text)? {
            let repeatable = matches!(sec.name.as_str(), "dirichlet" | "load");
            if !repeatable {
                if seen.contains(&sec.name) {
                    return Err(FormatError::at(sec.line, format!("section [{}] appears twice", sec.name)).into());
                }
                seen.push(sec.name.clone());
            }
            match sec.name.as_str() {
                "problem" => {
                    if let Some((l, v)) = sec.take("type") {
                        cfg.analysis.problem = match v.as_str() {
                            "heat" => Problem::Heat,
                            "elasticity" => Problem::Elasticity,
                            _ => return Err(FormatError::at(l, format!("unknown problem type `{v}`")).into()),
                        };
                    }
                    if let Some((l, v)) = sec.take("heat_source") {
                        let q = v
                            .parse()
                            .map_err(|_| FormatError::at(l, format!("invalid value `{v}` for `heat_source`")))?;
                        cfg.bcs.heat_source = Some(q);
                    }
                    sec.number("quad_order", &mut cfg.analysis.quad_order)?;
                }
                "material" => {
                    let m = &mut cfg.analysis.material;
                    sec.number("E0", &mut m.e0)?;
                    sec.number("nu", &mut m.nu)?;
                    sec.number("p", &mut m.p)?;
                    sec.number("mu_min", &mut m.mu_min)?;
                }
                "mesh" => {
                    sec.number("subdivide", &mut cfg.subdivide)?;
                    sec.number("density_level", &mut cfg.beso.level)?;
                }
                "beso" => {
                    let b = &mut cfg.beso;
                    sec.number("v_star", &mut b.v_star)?;
                    sec.number("er", &mut b.er)?;
                    sec.number("rho_min", &mut b.rho_min)?;
                    sec.flag("filter", &mut b.filter)?;
                    sec.number("max_iters", &mut b.max_iters)?;
                    sec.flag("paper_exact_sensitivity", &mut b.paper_exact_sensitivity)?;
                }
                "solver" => {
                    let s = &mut cfg.analysis.solver;
                    if let Some((l, v)) = sec.take("method") {
                        s.method = match v.as_str() {
                            "auto" => SolverMethod::Auto,
                            "jacobi" => SolverMethod::Jacobi,
                            "multigrid" => SolverMethod::Multigrid,
                            "direct" => SolverMethod::Direct,
                            _ => return Err(FormatError::at(l, format!("unknown solver method `{v}`")).into()),
                        };
                    }
                    sec.number("tolerance", &mut s.tolerance)?;
                    if let Some((l, v)) = sec.take("max_iterations") {
                        s.max_iterations = Some(
                            v.parse()
                                .map_err(|_| FormatError::at(l, format!("invalid value `{v}` for `max_iterations`")))?,
                        );
                    }
                }
                "dirichlet" => {
                    let selection = selection(&mut sec)?;
                    let (l, v) = sec
                        .take("dofs")
                        .ok_or_else(|| FormatError::at(sec.line, "[dirichlet] needs `dofs`"))?;
                    let components = parse_components(l, &v)?;
                    dof_kinds.push((l, v == "t"));
                    let mut value = 0.0;
                    sec.number("value", &mut value)?;
                    let gradient = match sec.take("gradient") {
                        Some((l, v)) => Some(parse_point(l, &v, "gradient")?),
                        None => None,
                    };
                    cfg.bcs.dirichlet.push(Dirichlet {
                        selection,
                        components,
                        value,
                        gradient,
                    });
                }
                "load" => {
                    let selection = selection(&mut sec)?;
                    let kind = match (sec.take("vector"), sec.take("source")) {
                        (Some((l, v)), None) => LoadKind::Force(parse_point(l, &v, "vector")?),
                        (None, Some((l, v))) => LoadKind::Source(
                            v.parse()
                                .map_err(|_| FormatError::at(l, format!("invalid value `{v}` for `source`")))?,
                        ),
                        _ => {
                            return Err(FormatError::at(sec.line, "[load] needs exactly one of `vector` or `source`").into())
                        }
                    };
                    cfg.bcs.loads.push(Load { selection, kind });
                }
                other => return Err(FormatError::at(sec.line, format!("unknown section [{other}]")).into()),
            }
            sec.finish()?;
        }
        cfg.beso.solver_tolerance = cfg.analysis.solver.tolerance;
        let heat = cfg.analysis.problem == Problem::Heat;
        if let Some(&(l, _)) = dof_kinds.iter().find(|&&(_, t)| t != heat) {
            return Err(ConfigError::Invalid(format!(
                "line {l}: dofs must be `t` for heat and a subset of xyz for elasticity"
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks of every parameter and consistency of the conditions
    /// with the problem type.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.analysis.material.validate().map_err(|e| invalid(&e))?;
        self.beso.validate().map_err(|e| invalid(&e))?;
        if self.subdivide > MAX_SUBDIVIDE {
            return Err(ConfigError::Invalid(format!("subdivide must be at most {MAX_SUBDIVIDE}")));
        }
        if !(1..=10).contains(&self.analysis.quad_order) {
            return Err(ConfigError::Invalid("quad_order must lie in 1..=10".into()));
        }
        let dpp = self.analysis.problem.dofs_per_point();
        for d in &self.bcs.dirichlet {
            if d.components.iter().any(|&c| c >= dpp) {
                return Err(ConfigError::Invalid(format!(
                    "dirichlet dofs do not match a {} problem",
                    problem_name(self.analysis.problem)
                )));
            }
        }
        for l in &self.bcs.loads {
            let ok = matches!(
                (&l.kind, self.analysis.problem),
                (LoadKind::Force(_), Problem::Elasticity) | (LoadKind::Source(_), Problem::Heat)
            );
            if !ok {
                return Err(ConfigError::Invalid(format!(
                    "load kind does not match a {} problem",
                    problem_name(self.analysis.problem)
                )));
            }
        }
        if self.bcs.heat_source.is_some() && self.analysis.problem != Problem::Heat {
            return Err(ConfigError::Invalid("heat_source requires a heat problem".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.analysis;
        let _ = writeln!(s, "[problem]\ntype = {}", problem_name(a.problem));
        if let Some(q) = self.bcs.heat_source {
            let _ = writeln!(s, "heat_source = {}", fmt_f64(q));
        }
        let _ = writeln!(s, "quad_order = {}", a.quad_order);
        let m = &a.material;
        let _ = writeln!(
            s,
            "\n[material]\nE0 = {}\nnu = {}\np = {}\nmu_min = {}",
            fmt_f64(m.e0),
            fmt_f64(m.nu),
            fmt_f64(m.p),
            fmt_f64(m.mu_min)
        );
        let _ = writeln!(
            s,
            "\n[mesh]\nsubdivide = {}\ndensity_level = {}",
            self.subdivide, self.beso.level
        );
        let b = &self.beso;
        let _ = writeln!(
            s,
            "\n[beso]\nv_star = {}\ner = {}\nrho_min = {}\nfilter = {}\nmax_iters = {}\npaper_exact_sensitivity = {}",
            fmt_f64(b.v_star),
            fmt_f64(b.er),
            fmt_f64(b.rho_min),
            b.filter,
            b.max_iters,
            b.paper_exact_sensitivity
        );
        let _ = writeln!(
            s,
            "\n[solver]\nmethod = {}\ntolerance = {}",
            method_name(a.solver.method),
            fmt_f64(a.solver.tolerance)
        );
        if let Some(n) = a.solver.max_iterations {
            let _ = writeln!(s, "max_iterations = {n}");
        }
        for d in &self.bcs.dirichlet {
            s.push_str("\n[dirichlet]\n");
            write_selection(&mut s, &d.selection);
            let dofs: String = if a.problem == Problem::Heat {
                "t".into()
            } else {
                d.components.iter().map(|&c| ['x', 'y', 'z'][c]).collect()
            };
            let _ = writeln!(s, "dofs = {dofs}\nvalue = {}", fmt_f64(d.value));
            if let Some(g) = d.gradient {
                let _ = writeln!(s, "gradient = {} {} {}", fmt_f64(g.x), fmt_f64(g.y), fmt_f64(g.z));
            }
        }
        for l in &self.bcs.loads {
            s.push_str("\n[load]\n");
            write_selection(&mut s, &l.selection);
            match l.kind {
                LoadKind::Force(f) => {
                    let _ = writeln!(s, "vector = {} {} {}", fmt_f64(f.x), fmt_f64(f.y), fmt_f64(f.z));
                }
                LoadKind::Source(q) => {
                    let _ = writeln!(s, "source = {}", fmt_f64(q));
                }
            }
        }
        s
    }
}

fn write_selection(s: &mut String, sel: &Selection) {
    match sel {
        Selection::Box(b) | Selection::RelativeBox(b) => {
            let key = if matches!(sel, Selection::Box(_)) { "box" } else { "relative_box" };
            let v = [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z].map(fmt_f64);
            let _ = writeln!(s, "{key} = {}", v.join(" "));
        }
        Selection::Boundary => s.push_str("boundary = true\n"),
    }
}
