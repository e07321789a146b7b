mod common;

use ccsolid::hexmesh::lattice;
use ccsolid::iga::*;
use ccsolid::spline::build_spline_model;
use ccsolid::topopt::*;
use ccsolid::Point3;
use common::*;
use rand::Rng;

#[test]
fn sensitivities_match_finite_differences() {
    assert!(fd_errors(1e-9, false) <= 1e-5);
    assert!(fd_errors(1e-3, false) <= 1e-5);
}

#[test]
fn paper_exact_sensitivities_drift_by_mu_min() {
    let drift = fd_errors(1e-3, true);
    assert!((drift - 1e-3).abs() < 2e-5, "{drift:e}");
}

#[test]
fn sensitivities_follow_power_law() {
    let model = build_spline_model(&lattice(1, 1, 1, [1.0; 3])).unwrap();
    let cfg = AnalysisConfig::default();
    let quad = Quadrature::gauss_legendre(4);
    let mut density = DensityField::new(&model, 1, &quad).unwrap();
    let mut r = rng(8);
    let u: Vec<f64> = (0..3 * model.num_control_points()).map(|_| r.random_range(-1.0..1.0)).collect();
    let sol = |d: &DensityField| DensitySolution {
        solution: Solution {
            u: u.clone(),
            compliance: 0.0,
            iterations: 0,
            residual: 0.0,
        },
        generation: d.generation(),
    };
    let kernel = EnergyKernel::new(1, &quad);
    let full = sensitivities(&model, &density, &sol(&density), &cfg, &kernel, false).unwrap();
    let stale = sol(&density);
    density.set(3, 1e-4);
    assert!(matches!(
        sensitivities(&model, &density, &stale, &cfg, &kernel, false),
        Err(TopoptError::StaleSolution)
    ));
    let low = sensitivities(&model, &density, &sol(&density), &cfg, &kernel, false).unwrap();
    assert!((low[3] / full[3] - 1e-8).abs() < 1e-20);
    let vol = model.volume(0);
    let bx = ParamBox::sub(1, sub_coords(1, 3)).unwrap();
    let ue: Vec<f64> = model.cells[0].iter().flat_map(|&g| [u[3 * g], u[3 * g + 1], u[3 * g + 2]]).collect();
    let e = box_energy(&vol, cfg.problem, &cfg.material, &quad, &bx, &ue, 0).unwrap();
    assert!((full[3] - 1.5 * (1.0 - 1e-9) * e).abs() <= 1e-12 * e);
}

fn line_filter() -> Filter {
    let centroids = [0.5, 1.5, 2.5].map(|x| Point3::new(x, 0.0, 0.0));
    Filter::new(&centroids, &[vec![1], vec![0, 2], vec![1]]).unwrap()
}

#[test]
fn filter_three_cubes() {
    let f = line_filter();
    assert_eq!(f.weights(1), &[(1, 2.0), (0, 1.0), (2, 1.0)]);
    let out = f.apply(&[0.0, 1.0, 0.0]).unwrap();
    assert_eq!(out[1], 0.5);
    assert_eq!(out[0], 1.0 / 3.0);
    assert_eq!(f.apply(&[0.25; 3]).unwrap(), vec![0.25; 3]);
    let lone = Filter::new(&[Point3::zeros()], &[vec![]]).unwrap();
    assert_eq!(lone.apply(&[7.0]).unwrap(), vec![7.0]);
    assert!(f.apply(&[1.0]).is_err());
}

#[test]
fn isolated_element_keeps_its_value() {
    let centroids = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(50.0, 0.0, 0.0)];
    let f = Filter::new(&centroids, &[vec![1], vec![0], vec![]]).unwrap();
    assert_eq!(f.weights(2).len(), 1);
    assert_eq!(f.apply(&[0.0, 1.0, 3.0]).unwrap()[2], 3.0);
}

#[test]
fn filter_properties_on_random_sensitivities() {
    let mesh = perturbed_lattice([3, 2, 2], 0.1, 2);
    let model = build_spline_model(&mesh).unwrap();
    let density = DensityField::new(&model, 1, &Quadrature::gauss_legendre(4)).unwrap();
    let adjacency = density_adjacency(&mesh, 1).unwrap();
    let filter = Filter::new(&density.centroids, &adjacency).unwrap();
    let solid = vec![true; density.len()];
    let target = 0.6 * density.total_volume();
    let mut r = rng(1000);
    for trial in 0..1000 {
        let alpha: Vec<f64> = (0..density.len()).map(|_| r.random_range(0.0..10.0)).collect();
        let out = filter.apply(&alpha).unwrap();
        let (lo, hi) = alpha.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(out.iter().all(|&v| v >= lo && v <= hi));
        if trial < 5 {
            let oracle = brute_force_filter(&density.centroids, &adjacency, &alpha);
            for (a, b) in out.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }
        let scale = r.random_range(1e-3..1e3);
        let scaled: Vec<f64> = alpha.iter().map(|a| a * scale).collect();
        let a = select_removals(&out, &density.volumes, &solid, target);
        let b = select_removals(&filter.apply(&scaled).unwrap(), &density.volumes, &solid, target);
        assert_eq!(a, b);
    }
}

#[test]
fn density_adjacency_counts_face_neighbours() {
    let mesh = lattice(2, 2, 2, [1.0; 3]);
    let adjacency = density_adjacency(&mesh, 1).unwrap();
    assert_eq!(adjacency.len(), 64);
    let counts: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    assert_eq!(counts.iter().filter(|&&n| n == 6).count(), 8);
    assert_eq!(counts.iter().filter(|&&n| n == 3).count(), 8);
    for (i, nb) in adjacency.iter().enumerate() {
        for &j in nb {
            assert!(adjacency[j].contains(&i));
        }
    }
}

#[test]
fn history_average() {
    assert_eq!(average_history(Some(&[0.5]), &[0.3]).unwrap(), vec![0.4]);
    assert_eq!(average_history(None, &[2.0, 3.0]).unwrap(), vec![2.0, 3.0]);
    assert_eq!(average_history(Some(&[1.5, 1.5]), &[1.5, 1.5]).unwrap(), vec![1.5, 1.5]);
    assert!(average_history(Some(&[1.0]), &[1.0, 2.0]).is_err());
    let inherited = inherit_history(&(0..8).map(f64::from).collect::<Vec<_>>(), 1);
    assert_eq!(inherited.len(), 64);
    assert_eq!(inherited[sub_index(2, [3, 0, 2])], 5.0);
}

#[test]
fn volume_schedule() {
    let v1 = next_volume(1.0, 0.96, 0.02);
    let v2 = next_volume(v1, 0.96, 0.02);
    let v3 = next_volume(v2, 0.96, 0.02);
    assert_eq!(v1, 0.98);
    assert!((v2 - 0.9604).abs() < 1e-15);
    assert_eq!(v3, 0.96);
    assert_eq!(next_volume(v3, 0.96, 0.02), 0.96);
}

#[test]
fn removal_order() {
    let vols = [1.0; 4];
    let solid = [true; 4];
    assert_eq!(select_removals(&[5.0, 1.0, 3.0, 2.0], &vols, &solid, 3.0), vec![1]);
    assert_eq!(select_removals(&[5.0, 1.0, 3.0, 2.0], &vols, &solid, 2.0), vec![1, 3]);
    assert_eq!(select_removals(&[1.0; 4], &vols, &solid, 2.5), vec![0, 1]);
    assert_eq!(select_removals(&[0.0, 1.0, 3.0, 2.0], &vols, &[false, true, true, true], 2.0), vec![1]);
    assert!(select_removals(&[1.0; 4], &vols, &solid, 4.0).is_empty());
}

#[test]
fn run_tracks_schedule_and_kills_monotonically() {
    let (mesh, bcs) = small_cantilever();
    let beso = BesoConfig {
        v_star: 0.6,
        er: 0.05,
        ..BesoConfig::default()
    };
    let mut killed_sets: Vec<Vec<bool>> = Vec::new();
    let mut max_vol = 0.0f64;
    let mut checks = Vec::new();
    let res = optimize(&mesh, 1, &AnalysisConfig::default(), &bcs, &beso, &mut |rec, d| {
        max_vol = d.volumes.iter().fold(max_vol, |m, &v| m.max(v));
        let total = d.total_volume();
        checks.push((rec.volume_fraction * total, rec.target_fraction * total));
        killed_sets.push((0..d.len()).map(|i| !d.is_solid(i)).collect());
    })
    .unwrap();
    assert!(res.converged);
    for (retained, target) in checks {
        assert!(retained <= target + 1e-12 && retained > target - max_vol);
    }
    for w in killed_sets.windows(2) {
        assert!(w[0].iter().zip(&w[1]).all(|(a, b)| !a || *b));
    }
    let last = res.history.last().unwrap();
    assert!(last.compliance.is_finite() && last.compliance > res.history[0].compliance);
    assert!((last.target_fraction - 0.6).abs() < 1e-12);
    let total = res.density.total_volume();
    assert!((res.density.retained_volume() / total - last.volume_fraction).abs() < 1e-12);
}

#[test]
fn first_compliance_equals_plain_solve() {
    let (mesh, bcs) = small_cantilever();
    let mut cfg = AnalysisConfig::default();
    cfg.solver.tolerance = 1e-12;
    let setup = Setup::new(&mesh, 1).unwrap();
    let r = resolve_bcs(&setup.model, cfg.problem, &bcs, &|| Vec::new(), 4).unwrap();
    for level in [0, 1] {
        let beso = BesoConfig {
            max_iters: 1,
            level,
            solver_tolerance: 1e-12,
            ..BesoConfig::default()
        };
        let res = optimize(&mesh, 1, &cfg, &bcs, &beso, &mut |_, _| {}).unwrap();
        let factors = CellFactors::uniform(setup.model.num_cells(), level, 1.0);
        let (_, sol) = assemble_and_solve(&setup.model, &factors, &cfg, &r).unwrap();
        assert!((res.history[0].compliance - sol.compliance).abs() <= 1e-10 * sol.compliance);
    }
}

/// BESO on the parent elements with plain element stiffness matrices.
#[test]
fn level_zero_reproduces_single_resolution() {
    let (mesh, bcs) = small_cantilever();
    let mut cfg = AnalysisConfig::default();
    cfg.solver.tolerance = 1e-12;
    let beso = BesoConfig {
        level: 0,
        filter: false,
        v_star: 0.7,
        er: 0.1,
        solver_tolerance: 1e-12,
        ..BesoConfig::default()
    };
    let model = Setup::new(&mesh, 1).unwrap().model;
    let quad = Quadrature::gauss_legendre(4);
    for c in [0, 5] {
        let vol = model.volume(c);
        let k = element_stiffness_elastic(&vol, &cfg.material, 4).unwrap();
        let f = cfg.material.modulus_factor(1e-4);
        assert_eq!(cell_matrix(&vol, &cfg, &quad, 0, &[f], c).unwrap(), &k * f);
    }
    let mut kills: Vec<Vec<usize>> = Vec::new();
    let mut dead = vec![false; model.num_cells()];
    optimize(&mesh, 1, &cfg, &bcs, &beso, &mut |_, d| {
        let now: Vec<bool> = (0..d.len()).map(|i| !d.is_solid(i)).collect();
        let mut added: Vec<usize> = (0..d.len()).filter(|&i| now[i] && !dead[i]).collect();
        added.sort_unstable();
        kills.push(added);
        dead = now;
    })
    .unwrap();
    let mut reference = single_resolution(&mesh, &bcs, &cfg, &beso);
    for k in &mut reference {
        k.sort_unstable();
    }
    assert_eq!(kills, reference);
    assert!(kills.iter().map(Vec::len).sum::<usize>() > 0);
}

#[test]
fn invalid_configs_are_rejected() {
    for beso in [
        BesoConfig { v_star: 1.0, ..BesoConfig::default() },
        BesoConfig { er: 0.0, ..BesoConfig::default() },
        BesoConfig { rho_min: 0.0, ..BesoConfig::default() },
        BesoConfig { solver_tolerance: 0.0, ..BesoConfig::default() },
    ] {
        assert!(matches!(beso.validate(), Err(TopoptError::InvalidConfig(_))));
    }
}
