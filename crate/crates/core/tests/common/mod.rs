//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ccsolid::hexmesh::{lattice, HexMesh};
use ccsolid::iga::*;
use ccsolid::spline::{build_spline_model, BezierVolume};
use ccsolid::topopt::{
    average_history, next_volume, select_removals, sensitivities, BesoConfig, DensityField, DensitySolution, Setup,
};
use ccsolid::{Aabb, Point3, SplineModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lattice with every vertex moved by up to `amp` in each coordinate.
pub fn perturbed_lattice(n: [usize; 3], amp: f64, seed: u64) -> HexMesh {
    let m = lattice(n[0], n[1], n[2], [1.0; 3]);
    perturb(&m, amp, seed)
}

pub fn perturb(m: &HexMesh, amp: f64, seed: u64) -> HexMesh {
    let mut r = rng(seed);
    let moved = (0..m.num_vertices())
        .map(|i| {
            m.vertex(i)
                + Point3::new(
                    r.random_range(-amp..=amp),
                    r.random_range(-amp..=amp),
                    r.random_range(-amp..=amp),
                )
        })
        .collect();
    m.with_vertices(moved)
}

/// Uniform cubic B-spline to Bézier conversion, one direction.
const TO_BEZIER: [[f64; 4]; 4] = [
    [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0, 0.0],
    [0.0, 4.0 / 6.0, 2.0 / 6.0, 0.0],
    [0.0, 2.0 / 6.0, 4.0 / 6.0, 0.0],
    [0.0, 1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0],
];

/// Bézier net of the tricubic uniform B-spline patch over lattice cell
/// `(i, j, k)`, from the 4×4×4 block of lattice vertices around it.
pub fn bspline_patch_net(
    vertex: impl Fn(usize, usize, usize) -> Point3,
    i: usize,
    j: usize,
    k: usize,
) -> Vec<Point3> {
    let mut net = vec![Point3::zeros(); 64];
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let mut p = Point3::zeros();
                for (x, wa) in TO_BEZIER[a].iter().enumerate() {
                    for (y, wb) in TO_BEZIER[b].iter().enumerate() {
                        for (z, wc) in TO_BEZIER[c].iter().enumerate() {
                            let w = wa * wb * wc;
                            if w != 0.0 {
                                p += vertex(i + x - 1, j + y - 1, k + z - 1) * w;
                            }
                        }
                    }
                }
                net[16 * a + 4 * b + c] = p;
            }
        }
    }
    net
}

fn casteljau_1d(mut p: [Point3; 4], t: f64) -> Point3 {
    for r in 1..4 {
        for i in 0..4 - r {
            p[i] = p[i] * (1.0 - t) + p[i + 1] * t;
        }
    }
    p[0]
}

/// Tensor de Casteljau evaluation of a 64-point net.
pub fn de_casteljau(net: &[Point3], u: f64, v: f64, w: f64) -> Point3 {
    let mut plane = [Point3::zeros(); 4];
    for (a, out) in plane.iter_mut().enumerate() {
        let mut line = [Point3::zeros(); 4];
        for (b, l) in line.iter_mut().enumerate() {
            let s = 16 * a + 4 * b;
            *l = casteljau_1d([net[s], net[s + 1], net[s + 2], net[s + 3]], w);
        }
        *out = casteljau_1d(line, v);
    }
    casteljau_1d(plane, u)
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn additivity_gap(vol: &BezierVolume, order: usize) -> f64 {
    let mat = Material::default();
    let parent = element_stiffness_elastic(vol, &mat, order).unwrap();
    let mut sum = DMatrix::zeros(192, 192);
    for i in 0..8 {
        let sub = [i & 1, (i >> 1) & 1, i >> 2];
        sum += subelement_stiffness(vol, 1, sub, Problem::Elasticity, &mat, order).unwrap();
    }
    rel_frobenius(&sum, &parent)
}

/// Max deviation from the prescribed linear field when its boundary values
/// are imposed on every boundary control point.
pub fn linear_patch(mesh: &ccsolid::HexMesh, problem: Problem, order: usize) -> f64 {
    let model = build_spline_model(mesh).unwrap();
    let mut cfg = AnalysisConfig {
        problem,
        quad_order: order,
        ..AnalysisConfig::default()
    };
    cfg.solver.tolerance = 1e-14;
    let (first, rest) = match problem {
        Problem::Heat => (1.0, vec![]),
        Problem::Elasticity => (0.1, vec![1, 2]),
    };
    let mut dirichlet = vec![Dirichlet {
        selection: Selection::Boundary,
        components: vec![0],
        value: 0.0,
        gradient: Some(Point3::new(first, 0.0, 0.0)),
    }];
    if !rest.is_empty() {
        dirichlet.push(Dirichlet {
            selection: Selection::Boundary,
            components: rest,
            value: 0.0,
            gradient: None,
        });
    }
    let bcs = BoundaryConditions {
        dirichlet,
        ..BoundaryConditions::default()
    };
    let r = resolve_bcs(&model, cfg.problem, &bcs, &|| model.boundary_points(mesh), order).unwrap();
    assert!(r.num_fixed() < r.fixed.len());
    let (_, sol) = assemble_and_solve(&model, &CellFactors::uniform(model.num_cells(), 0, 1.0), &cfg, &r).unwrap();
    let dpp = problem.dofs_per_point();
    let mut err = 0.0f64;
    for (i, p) in model.points.iter().enumerate() {
        let u = &sol.u[dpp * i..dpp * (i + 1)];
        err = err.max((u[0] - first * p.x).abs());
        for v in &u[1..] {
            err = err.max(v.abs());
        }
    }
    err
}

pub fn clamp_bcs(model: &SplineModel) -> BoundaryConditions {
    let bb = Aabb::from_points(model.points.iter()).unwrap();
    let tip = (0..model.num_control_points())
        .max_by(|&a, &b| {
            let key = |i: usize| model.points[i].x - 1e-3 * model.points[i].z;
            key(a).total_cmp(&key(b)).then(b.cmp(&a))
        })
        .unwrap();
    BoundaryConditions {
        dirichlet: vec![Dirichlet {
            selection: Selection::Box(Aabb::new(
                bb.min - Point3::repeat(1.0),
                Point3::new(bb.min.x + 1e-9, bb.max.y + 1.0, bb.max.z + 1.0),
            )),
            components: vec![0, 1, 2],
            value: 0.0,
            gradient: None,
        }],
        loads: vec![Load {
            selection: Selection::Box(Aabb::new(model.points[tip], model.points[tip])),
            kind: LoadKind::Force(Point3::new(0.0, 0.3, -1.0)),
        }],
        heat_source: None,
    }
}

/// Compliance `½Fᵀu` from a dense direct solve.
pub fn dense_compliance(model: &SplineModel, cfg: &AnalysisConfig, rho: &[f64], bcs: &ResolvedBcs) -> (f64, Vec<f64>) {
    let quad = Quadrature::gauss_legendre(cfg.quad_order);
    let per = 8;
    let n = 3 * model.num_control_points();
    let mut k = nalgebra::DMatrix::zeros(n, n);
    for c in 0..model.num_cells() {
        let f: Vec<f64> = rho[c * per..(c + 1) * per].iter().map(|&r| cfg.material.modulus_factor(r)).collect();
        let ke = cell_matrix(&model.volume(c), cfg, &quad, 1, &f, c).unwrap();
        let dofs: Vec<usize> = model.cells[c].iter().flat_map(|&g| [3 * g, 3 * g + 1, 3 * g + 2]).collect();
        for (a, &i) in dofs.iter().enumerate() {
            for (b, &j) in dofs.iter().enumerate() {
                k[(i, j)] += ke[(a, b)];
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| bcs.fixed[i].is_none()).collect();
    let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| k[(i, j)]).collect()).collect();
    let f: Vec<f64> = free.iter().map(|&i| bcs.load[i]).collect();
    let uf = dense_solve(a, f.clone());
    let mut u = vec![0.0; n];
    for (&i, v) in free.iter().zip(&uf) {
        u[i] = *v;
    }
    (0.5 * f.iter().zip(&uf).map(|(a, b)| a * b).sum::<f64>(), u)
}

pub fn fd_errors(mu_min: f64, paper_exact: bool) -> f64 {
    let model = build_spline_model(&lattice(1, 1, 1, [1.0; 3])).unwrap();
    let mut cfg = AnalysisConfig::default();
    cfg.material.mu_min = mu_min;
    let quad = Quadrature::gauss_legendre(cfg.quad_order);
    let bcs = clamp_bcs(&model);
    let resolved = resolve_bcs(&model, cfg.problem, &bcs, &|| Vec::new(), 4).unwrap();
    let mut density = DensityField::new(&model, 1, &quad).unwrap();
    assert_eq!(density.len(), 8);
    let rho = [1.0, 0.8, 0.9, 0.6, 1.0, 0.7, 0.95, 0.85];
    for (i, &r) in rho.iter().enumerate() {
        density.set(i, r);
    }
    let (c0, u) = dense_compliance(&model, &cfg, &rho, &resolved);
    let solved = DensitySolution {
        solution: Solution {
            u,
            compliance: c0,
            iterations: 0,
            residual: 0.0,
        },
        generation: density.generation(),
    };
    let kernel = EnergyKernel::new(1, &quad);
    let alpha = sensitivities(&model, &density, &solved, &cfg, &kernel, paper_exact).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..8 {
        let mut plus = rho;
        let mut minus = rho;
        plus[i] += h;
        minus[i] -= h;
        let fd = -(dense_compliance(&model, &cfg, &plus, &resolved).0 - dense_compliance(&model, &cfg, &minus, &resolved).0) / (2.0 * h);
        assert!(fd > 0.0);
        worst = worst.max((alpha[i] - fd).abs() / fd);
    }
    worst
}

pub fn brute_force_filter(centroids: &[Point3], adjacency: &[Vec<usize>], alpha: &[f64]) -> Vec<f64> {
    (0..centroids.len())
        .map(|i| {
            let nb = &adjacency[i];
            let r = 2.0 * nb.iter().map(|&j| (centroids[j] - centroids[i]).norm()).sum::<f64>() / nb.len() as f64;
            let (mut num, mut den) = (r * alpha[i], r);
            for j in 0..centroids.len() {
                let d = (centroids[j] - centroids[i]).norm();
                if j != i && d < r {
                    num += (r - d) * alpha[j];
                    den += r - d;
                }
            }
            num / den
        })
        .collect()
}

pub fn lattice_vertex(n: usize) -> impl Fn(usize, usize, usize) -> usize {
    move |i, j, k| i + (n + 1) * (j + (n + 1) * k)
}

pub fn small_cantilever() -> (ccsolid::HexMesh, BoundaryConditions) {
    let mesh = lattice(2, 1, 1, [1.0; 3]);
    let model = Setup::new(&mesh, 1).unwrap().model;
    (mesh, clamp_bcs(&model))
}

pub fn single_resolution(mesh: &ccsolid::HexMesh, bcs: &BoundaryConditions, cfg: &AnalysisConfig, beso: &BesoConfig) -> Vec<Vec<usize>> {
    let setup = Setup::new(mesh, 1).unwrap();
    let model = &setup.model;
    let quad = Quadrature::gauss_legendre(cfg.quad_order);
    let r = resolve_bcs(model, cfg.problem, bcs, &|| Vec::new(), cfg.quad_order).unwrap();
    let ke: Vec<_> = (0..model.num_cells())
        .map(|c| element_stiffness_elastic(&model.volume(c), &cfg.material, cfg.quad_order).unwrap())
        .collect();
    let volumes: Vec<f64> = (0..model.num_cells())
        .map(|c| box_volume(&model.volume(c), &quad, &ParamBox::UNIT, c).unwrap())
        .collect();
    let total: f64 = volumes.iter().sum();
    let mut solid = vec![true; model.num_cells()];
    let mut volume = total;
    let mut prev: Option<Vec<f64>> = None;
    let mut kills = Vec::new();
    for _ in 0..beso.max_iters {
        let mut op = ElementOperator::new(DofMap::new(model, cfg.problem));
        for (c, k) in ke.iter().enumerate() {
            let f = cfg.material.modulus_factor(if solid[c] { 1.0 } else { beso.rho_min });
            op.set_element(c, &(k * f));
        }
        let sol = solve_constrained(&op, &r, None, None, &cfg.solver).unwrap();
        let alpha: Vec<f64> = (0..model.num_cells())
            .map(|c| {
                let u = nalgebra::DVector::from_iterator(192, model.cells[c].iter().flat_map(|&g| sol.u[3 * g..3 * g + 3].to_vec()));
                let rho: f64 = if solid[c] { 1.0 } else { beso.rho_min };
                0.5 * cfg.material.p * (1.0 - cfg.material.mu_min) * rho.powf(cfg.material.p - 1.0) * (u.transpose() * &ke[c] * &u)[0]
            })
            .collect();
        let avg = average_history(prev.as_deref(), &alpha).unwrap();
        volume = next_volume(volume, beso.v_star * total, beso.er);
        let removed = select_removals(&avg, &volumes, &solid, volume);
        for &i in &removed {
            solid[i] = false;
        }
        prev = Some(avg);
        let stop = removed.is_empty() && volume <= beso.v_star * total;
        kills.push(removed);
        if stop {
            break;
        }
    }
    kills
}
