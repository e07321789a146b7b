mod support;

use std::fs;
use std::path::{Path, PathBuf};

use ccsolid::hexmesh::lattice;
use ccsolid::HexMesh;
use ccsolid_tools::{parse_mesh, parse_model, run_command, write_mesh};
use support::{corner_volume, read_legacy};

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("ccsolid").chain(args.iter().copied()))
}

fn write_mesh_file(dir: &Path, name: &str, m: &HexMesh) -> String {
    let p = dir.join(name);
    fs::write(&p, write_mesh(m)).unwrap();
    p.to_str().unwrap().to_string()
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[test]
fn subdivide_cube_once() {
    let t = tempfile::tempdir().unwrap();
    let out = path(t.path(), "out.mesh");
    assert_eq!(run(&["subdivide", &data("cube.mesh"), "-n", "1", "-o", out.to_str().unwrap()]), 0);
    let m = parse_mesh(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!((m.num_cells(), m.num_vertices()), (8, 27));
}

#[test]
fn limit_writes_interior_point_cloud() {
    let t = tempfile::tempdir().unwrap();
    let out = path(t.path(), "limits.vtk");
    assert_eq!(run(&["limit", &data("lattice.mesh"), "-o", out.to_str().unwrap()]), 0);
    let v = read_legacy(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v.types, vec![1]);
    for k in 0..3 {
        assert!((v.points[0][k] - 1.0).abs() < 1e-14);
    }
    assert_eq!(v.point_data["valence"].1, vec![6.0]);
    assert_eq!(run(&["limit", &data("lattice.mesh"), "-o", out.to_str().unwrap(), "--boundary"]), 0);
    assert_eq!(read_legacy(&fs::read_to_string(&out).unwrap()).unwrap().points.len(), 27);
}

#[test]
fn bezier_writes_model_and_samples() {
    let t = tempfile::tempdir().unwrap();
    let model = path(t.path(), "m.txt");
    let vtk = path(t.path(), "m.vtk");
    let args = [
        "bezier",
        &data("lattice.mesh"),
        "-o",
        model.to_str().unwrap(),
        "--vtk",
        vtk.to_str().unwrap(),
        "--sample",
        "2",
    ];
    assert_eq!(run(&args), 0);
    let m = parse_model(&fs::read_to_string(model).unwrap()).unwrap();
    assert_eq!(m.num_cells(), 8);
    let v = read_legacy(&fs::read_to_string(vtk).unwrap()).unwrap();
    assert_eq!(v.cells.len(), 64);
    assert!(v.cells.iter().all(|h| corner_volume(&v.points, h) > 0.0));
}

#[test]
fn error_reports_and_exports_samples() {
    let t = tempfile::tempdir().unwrap();
    let out = path(t.path(), "err.vtk");
    assert_eq!(run(&["error", &data("lattice.mesh"), "--depth", "1", "-o", out.to_str().unwrap()]), 0);
    let v = read_legacy(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v.points.len(), 125);
    assert!(v.point_data["distance"].1.iter().all(|d| *d >= 0.0));
}

#[test]
fn validate_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate", &data("cantilever.mesh")]), 0);
    // two cubes sharing one edge, welded by position
    let a = lattice(1, 1, 1, [1.0; 3]);
    let offset = ccsolid::Point3::new(1.0, 1.0, 0.0);
    let mut verts = a.vertices().to_vec();
    let mut weld = |p: ccsolid::Point3| match verts.iter().position(|q| (q - p).norm() < 1e-12) {
        Some(i) => i,
        None => {
            verts.push(p);
            verts.len() - 1
        }
    };
    let second = a.cells()[0].map(|i| weld(a.vertex(i) + offset));
    let m = HexMesh::new(verts, vec![a.cells()[0], second]).unwrap();
    assert_eq!(m.num_vertices(), 14);
    let file = write_mesh_file(t.path(), "edge.mesh", &m);
    assert_eq!(run(&["validate", &file]), 1);
}

#[test]
fn solve_heat_writes_temperature() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("solve");
    let args = ["solve", &data("cube.mesh"), "--config", &data("heat.cfg"), "-o", dir.to_str().unwrap(), "--sample", "2"];
    assert_eq!(run(&args), 0);
    let v = read_legacy(&fs::read_to_string(dir.join("solution.vtk")).unwrap()).unwrap();
    assert_eq!(v.cells.len(), 8 * 8);
    let temps = &v.point_data["temperature"].1;
    assert!(temps.iter().all(|x| x.is_finite() && *x > -1e-9));
    assert!(temps.iter().any(|x| *x > 1e-3));
}

#[test]
fn optimize_writes_run_directory() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("run1");
    let args = ["optimize", &data("cube.mesh"), "--config", &data("heat.cfg"), "-o", dir.to_str().unwrap()];
    assert_eq!(run(&args), 0);
    let history = fs::read_to_string(dir.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("iter,compliance,volume_fraction,killed_count"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(!rows.is_empty());
    let mut last_killed = 0;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 4);
        assert_eq!(r[0].parse::<usize>().unwrap(), i + 1);
        assert!(r[1].parse::<f64>().unwrap().is_finite());
        let killed: usize = r[3].parse().unwrap();
        assert!(killed >= last_killed);
        last_killed = killed;
        let f = dir.join(format!("iter_{:04}.vtk", i + 1));
        let v = read_legacy(&fs::read_to_string(f).unwrap()).unwrap();
        let rho = &v.cell_data["density"].1;
        assert_eq!(rho.len(), 8 * 8);
        assert_eq!(rho.iter().filter(|&&x| x < 1.0).count(), killed);
    }
    let solid = read_legacy(&fs::read_to_string(dir.join("solid.vtk")).unwrap()).unwrap();
    assert!(solid.cell_data["density"].1.iter().all(|&x| x == 1.0));
    assert!(solid.point_data.contains_key("temperature"));
}

#[test]
fn usage_and_input_errors() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["subdivide", &data("cube.mesh")]), 2);
    assert_eq!(run(&["subdivide", &data("cube.mesh"), "-n", "two", "-o", "x"]), 2);
    assert_eq!(run(&["--help"]), 0);
    let missing = t.path().join("missing.mesh");
    assert_eq!(run(&["validate", missing.to_str().unwrap()]), 1);
    let bad = t.path().join("bad.cfg");
    fs::write(&bad, "[material]\nnu = 0.7\n").unwrap();
    let out = t.path().join("o");
    assert_eq!(
        run(&["solve", &data("cube.mesh"), "--config", bad.to_str().unwrap(), "-o", out.to_str().unwrap()]),
        1
    );
    let broken = write_mesh_file(t.path(), "b.mesh", &lattice(1, 1, 1, [1.0; 3]));
    let text = fs::read_to_string(&broken).unwrap().replace("0 1", "0 0");
    fs::write(&broken, text).unwrap();
    assert_eq!(run(&["validate", &broken]), 1);
}
