//! The `ccsolid` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ccsolid::hexmesh::validate;
use ccsolid::iga::{resolve_bcs, subdivision_links, CellFactors, Problem, System};
use ccsolid::spline::{approximation_error, build_spline_model};
use ccsolid::subdivision::{limit_point, subdivide_n, LimitKind};
use ccsolid::topopt::{optimize_setup, Setup, TopoptError};
use ccsolid::{HexMesh, Point3, SplineModel};

use crate::config::RunConfig;
use crate::meshfile::{parse_mesh, write_mesh};
use crate::modelfile::write_model;
use crate::text::fmt_f64;
use crate::vtk::{SampledModel, UnstructuredGrid};

#[derive(Parser, Debug)]
#[command(name = "ccsolid", version, about = "Catmull-Clark solids, Bézier volumes and BESO topology optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check mesh conformity and vertex star counts.
    Validate { mesh: PathBuf },
    /// Apply Catmull-Clark solid subdivision.
    Subdivide {
        mesh: PathBuf,
        #[arg(short = 'n', long, default_value_t = 1)]
        levels: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Export the limit points of the mesh vertices as a VTK point cloud.
    Limit {
        mesh: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Include boundary vertices.
        #[arg(long)]
        boundary: bool,
    },
    /// Build the tricubic Bézier model.
    Bezier {
        mesh: PathBuf,
        /// Model file.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the sampled volumes as VTK.
        #[arg(long)]
        vtk: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        sample: usize,
    },
    /// Distance between subdivision limit points and the Bézier model.
    Error {
        mesh: PathBuf,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// VTK point cloud of the samples with their distances.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve heat conduction or linear elasticity on the full domain.
    Solve {
        mesh: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        sample: usize,
    },
    /// Run BESO topology optimization.
    Optimize {
        mesh: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Run directory.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        sample: usize,
    },
}

/// Runs one command line and returns the process exit code: 0 on success,
/// 1 on failure or a mesh with findings, 2 on usage errors.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Validate { mesh } => cmd_validate(&mesh),
        Command::Subdivide { mesh, levels, output } => {
            let m = read_mesh(&mesh)?;
            let fine = subdivide_n(&m, levels).context("subdividing")?;
            write_file(&output, &write_mesh(&fine))?;
            println!("{} cells, {} vertices", fine.num_cells(), fine.num_vertices());
            Ok(0)
        }
        Command::Limit { mesh, output, boundary } => cmd_limit(&mesh, &output, boundary),
        Command::Bezier {
            mesh,
            output,
            vtk,
            sample,
        } => {
            let m = read_mesh(&mesh)?;
            let model = build_spline_model(&m).context("building the Bézier model")?;
            write_file(&output, &write_model(&model))?;
            if let Some(path) = vtk {
                let s = SampledModel::new(&model, sample);
                let ids = cell_ids(&model, s.n);
                s.grid.with_cell_scalars("cell", ids).write(&path, "bezier model")?;
            }
            println!("{} cells, {} control points", model.num_cells(), model.num_control_points());
            Ok(0)
        }
        Command::Error { mesh, depth, output } => cmd_error(&mesh, depth, output.as_deref()),
        Command::Solve {
            mesh,
            config,
            output,
            sample,
        } => cmd_solve(&mesh, &config, &output, sample),
        Command::Optimize {
            mesh,
            config,
            output,
            sample,
        } => cmd_optimize(&mesh, &config, &output, sample),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_mesh(path: &Path) -> Result<HexMesh> {
    parse_mesh(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    RunConfig::parse(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn cell_ids(model: &SplineModel, n: usize) -> Vec<f64> {
    (0..model.num_cells())
        .flat_map(|c| std::iter::repeat_n(c as f64, n * n * n))
        .collect()
}

fn cmd_validate(path: &Path) -> Result<i32> {
    let m = read_mesh(path)?;
    let report = validate(&m);
    println!(
        "{} vertices, {} edges, {} faces, {} cells, {} interior vertices",
        m.num_vertices(),
        m.num_edges(),
        m.num_faces(),
        m.num_cells(),
        report.interior_vertices
    );
    for f in &report.findings {
        println!("{f:?}");
    }
    println!("{}", if report.ok { "ok" } else { "invalid" });
    Ok(if report.ok { 0 } else { 1 })
}

fn cmd_limit(path: &Path, output: &Path, boundary: bool) -> Result<i32> {
    let m = read_mesh(path)?;
    let mut points = Vec::new();
    let mut valence = Vec::new();
    let mut skipped = 0;
    for v in 0..m.num_vertices() {
        match limit_point(&m, v) {
            Ok(lp) if lp.kind == LimitKind::Interior || boundary => {
                points.push(lp.point);
                valence.push(m.valence(v) as f64);
            }
            Ok(_) => {}
            Err(_) => skipped += 1,
        }
    }
    let n = points.len();
    UnstructuredGrid::point_cloud(points)
        .with_point_scalars("valence", valence)
        .write(output, "limit points")?;
    println!("{n} limit points, {skipped} vertices without a limit point");
    Ok(0)
}

fn cmd_error(path: &Path, depth: usize, output: Option<&Path>) -> Result<i32> {
    let m = read_mesh(path)?;
    let model = build_spline_model(&m).context("building the Bézier model")?;
    let stats = approximation_error(&m, &model, depth).context("measuring the approximation error")?;
    let interior = stats.filtered(|s| s.kind == LimitKind::Interior);
    println!("depth = {depth}");
    println!("samples = {}", stats.samples.len());
    println!("skipped = {}", stats.skipped);
    println!("max = {}", fmt_f64(stats.max));
    println!("mean = {}", fmt_f64(stats.mean));
    println!("interior_max = {}", fmt_f64(interior.max));
    if let Some(out) = output {
        let pts = stats
            .samples
            .iter()
            .map(|s| model.evaluate(s.cell, s.param[0], s.param[1], s.param[2]))
            .collect::<Result<Vec<Point3>, _>>()?;
        let dist = stats.samples.iter().map(|s| s.distance).collect();
        UnstructuredGrid::point_cloud(pts)
            .with_point_scalars("distance", dist)
            .write(out, "approximation error")?;
    }
    Ok(0)
}

fn cmd_solve(path: &Path, config: &Path, dir: &Path, sample: usize) -> Result<i32> {
    let m = read_mesh(path)?;
    let cfg = read_config(config)?;
    let setup = Setup::new(&m, cfg.subdivide).context("subdividing")?;
    let model = &setup.model;
    let a = &cfg.analysis;
    let bcs = resolve_bcs(model, a.problem, &cfg.bcs, &|| model.boundary_points(setup.mesh()), a.quad_order)
        .context("resolving boundary conditions")?;
    let links = subdivision_links(&setup.meshes, a.problem);
    let factors = CellFactors::uniform(model.num_cells(), 0, 1.0);
    let mut system = System::new(model, factors, a, bcs, links).context("assembling")?;
    let sol = system.solve().context("solving")?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let s = SampledModel::new(model, sample);
    let dpp = a.problem.dofs_per_point();
    let values = s.interpolate(model, &sol.u, dpp);
    let ids = cell_ids(model, s.n);
    let grid = s.grid.with_cell_scalars("cell", ids);
    let grid = match a.problem {
        Problem::Elasticity => grid.with_point_vectors(
            "displacement",
            values.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect(),
        ),
        Problem::Heat => grid.with_point_scalars("temperature", values.iter().map(|v| v[0]).collect()),
    };
    grid.write(&dir.join("solution.vtk"), "solution")?;
    println!("compliance = {}", fmt_f64(sol.compliance));
    println!("iterations = {}", sol.iterations);
    println!("residual = {}", fmt_f64(sol.residual));
    Ok(0)
}

fn cmd_optimize(path: &Path, config: &Path, dir: &Path, sample: usize) -> Result<i32> {
    let m = read_mesh(path)?;
    let cfg = read_config(config)?;
    let setup = Setup::new(&m, cfg.subdivide).context("subdividing")?;
    let model = &setup.model;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let level = cfg.beso.level;
    let side = 1usize << level;
    let coarse = SampledModel::new(model, side);
    let owners = coarse.density_elements(model.num_cells(), level);
    let mut grid = coarse.grid;
    let history_path = dir.join("history.csv");
    let mut history = BufWriter::new(
        File::create(&history_path).with_context(|| format!("creating {}", history_path.display()))?,
    );
    writeln!(history, "iter,compliance,volume_fraction,killed_count")?;
    history.flush()?;
    let mut failure: Option<anyhow::Error> = None;
    let mut observe = |rec: &ccsolid::topopt::IterationRecord, density: &ccsolid::topopt::DensityField| {
        if failure.is_some() {
            return;
        }
        let mut step = || -> Result<()> {
            grid.cell_data = vec![(
                "density".into(),
                crate::vtk::Attribute::Scalars(owners.iter().map(|&e| density.rho[e]).collect()),
            )];
            grid.write(&dir.join(format!("iter_{:04}.vtk", rec.iter)), "densities")?;
            writeln!(
                history,
                "{},{},{},{}",
                rec.iter,
                fmt_f64(rec.compliance),
                fmt_f64(rec.volume_fraction),
                rec.killed_count
            )?;
            history.flush()?;
            Ok(())
        };
        match step() {
            Ok(()) => println!(
                "iter {:4}  compliance {}  volume {:.6}  killed {}",
                rec.iter,
                fmt_f64(rec.compliance),
                rec.volume_fraction,
                rec.killed_count
            ),
            Err(e) => failure = Some(e),
        }
    };
    let result = optimize_setup(&setup, &cfg.analysis, &cfg.bcs, &cfg.beso, &mut observe);
    if let Some(e) = failure {
        return Err(e.context("writing iteration output"));
    }
    let result = match result {
        Ok(r) => r,
        Err(TopoptError::Aborted {
            iteration, source, ..
        }) => bail!("optimization aborted at iteration {iteration}: {source}"),
        Err(e) => return Err(e).context("optimizing"),
    };
    let per = side.max(sample.div_ceil(side) * side);
    let fine = SampledModel::new(model, per);
    let owners = fine.density_elements(model.num_cells(), level);
    let dpp = cfg.analysis.problem.dofs_per_point();
    let mut solid = fine
        .grid
        .clone()
        .with_cell_scalars("density", owners.iter().map(|&e| result.density.rho[e]).collect());
    if let Some(sol) = &result.solution {
        let values = fine.interpolate(model, &sol.u, dpp);
        solid = match cfg.analysis.problem {
            Problem::Elasticity => solid.with_point_vectors(
                "displacement",
                values.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect(),
            ),
            Problem::Heat => solid.with_point_scalars("temperature", values.iter().map(|v| v[0]).collect()),
        };
    }
    solid
        .retain_cells(|c| result.density.is_solid(owners[c]))
        .write(&dir.join("solid.vtk"), "optimized solid")?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let last = result.history.last();
    println!(
        "{} after {} iterations, final compliance {}, volume fraction {}",
        if result.converged { "converged" } else { "stopped" },
        result.history.len(),
        last.map_or("n/a".into(), |r| fmt_f64(r.compliance)),
        last.map_or("n/a".into(), |r| fmt_f64(r.volume_fraction)),
    );
    Ok(0)
}
