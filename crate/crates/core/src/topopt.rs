//! Multi-resolution BESO: densities live on sub-elements of the analysis
//! cells, sensitivities are filtered and averaged with their history, and the
//! least useful material is switched to `ρ_min` following a geometric volume
//! schedule. Removal is final.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::geometry::Point3;
use crate::hexmesh::{corner_at, HexMesh};
use crate::iga::{
    box_volume, resolve_bcs, sub_coords, subdivision_links, AnalysisConfig, BoundaryConditions, CellFactors,
    EnergyKernel, IgaError, Material, ParamBox, Quadrature, Solution, System,
};
use crate::spline::{build_spline_model, SplineError, SplineModel};
use crate::subdivision::{subdivide, SubdivisionError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum TopoptError {
    #[error(transparent)]
    Analysis(#[from] IgaError),
    #[error(transparent)]
    Subdivision(#[from] SubdivisionError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("invalid optimization parameter: {0}")]
    InvalidConfig(&'static str),
    #[error("length mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("solution is stale: densities changed since the solve")]
    StaleSolution,
    #[error("iteration {iteration}: {source}")]
    Aborted {
        iteration: usize,
        source: IgaError,
        /// Run state when the failure happened.
        partial: Box<OptResult>,
    },
}

/// Optimizer parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesoConfig {
    /// Target fraction of the total volume.
    pub v_star: f64,
    /// Evolutionary ratio.
    pub er: f64,
    pub rho_min: f64,
    /// Density grid level below each analysis cell.
    pub level: u32,
    pub filter: bool,
    pub max_iters: usize,
    /// Relative residual of each equilibrium solve.
    pub solver_tolerance: f64,
    /// Omit the `(1 − μ_min)` factor from the sensitivities.
    pub paper_exact_sensitivity: bool,
}

impl Default for BesoConfig {
    fn default() -> Self {
        Self {
            v_star: 0.5,
            er: 0.02,
            rho_min: 1e-4,
            level: 1,
            filter: true,
            max_iters: 200,
            solver_tolerance: 1e-8,
            paper_exact_sensitivity: false,
        }
    }
}

impl BesoConfig {
    pub fn validate(&self) -> Result<(), TopoptError> {
        if !(self.v_star > 0.0 && self.v_star < 1.0) {
            return Err(TopoptError::InvalidConfig("v_star must lie in (0, 1)"));
        }
        if !(self.er > 0.0 && self.er < 1.0) {
            return Err(TopoptError::InvalidConfig("er must lie in (0, 1)"));
        }
        if !(self.rho_min > 0.0 && self.rho_min < 1.0) {
            return Err(TopoptError::InvalidConfig("rho_min must lie in (0, 1)"));
        }
        if !(self.solver_tolerance > 0.0 && self.solver_tolerance < 1.0) {
            return Err(TopoptError::InvalidConfig("solver_tolerance must lie in (0, 1)"));
        }
        if self.level > 4 {
            return Err(TopoptError::InvalidConfig("density level above 4"));
        }
        Ok(())
    }
}

/// Densities on the level-`s` sub-elements of every cell. Element
/// `cell·8ˢ + sub_index` is sub-cube `sub_coords(s, sub_index)` of `cell`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub level: u32,
    pub rho: Vec<f64>,
    pub volumes: Vec<f64>,
    pub centroids: Vec<Point3>,
    generation: u64,
}

impl DensityField {
    /// Full material everywhere.
    pub fn new(model: &SplineModel, level: u32, quad: &Quadrature) -> Result<Self, TopoptError> {
        let per = 1usize << (3 * level);
        let n = model.num_cells() * per;
        let mut volumes = Vec::with_capacity(n);
        let mut centroids = Vec::with_capacity(n);
        for c in 0..model.num_cells() {
            let vol = model.volume(c);
            for i in 0..per {
                let bx = ParamBox::sub(level, sub_coords(level, i))?;
                volumes.push(box_volume(&vol, quad, &bx, c)?);
                let m = bx.center();
                centroids.push(vol.evaluate(m[0], m[1], m[2])?);
            }
        }
        Ok(Self {
            level,
            rho: vec![1.0; n],
            volumes,
            centroids,
            generation: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn per_cell(&self) -> usize {
        1 << (3 * self.level)
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Volume of the elements at full density.
    pub fn retained_volume(&self) -> f64 {
        self.rho
            .iter()
            .zip(&self.volumes)
            .filter(|(r, _)| **r >= 1.0)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn is_solid(&self, i: usize) -> bool {
        self.rho[i] >= 1.0
    }

    /// Counter bumped by every density change.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn set(&mut self, i: usize, rho: f64) {
        if self.rho[i] != rho {
            self.rho[i] = rho;
            self.generation += 1;
        }
    }

    /// Stiffness factors `μ_min + (1 − μ_min) ρᵖ`.
    pub fn factors(&self, mat: &Material) -> CellFactors {
        CellFactors {
            level: self.level,
            factors: self.rho.iter().map(|&r| mat.modulus_factor(r)).collect(),
        }
    }
}

/// Index of a density element in the mesh refined `level` more times.
pub fn refined_cell(level: u32, index: usize) -> usize {
    let per = 1usize << (3 * level);
    let (cell, sub) = (index / per, index % per);
    let s = sub_coords(level, sub);
    let mut r = cell;
    for t in (0..level).rev() {
        r = 8 * r + corner_at(s.map(|x| (x >> t) & 1));
    }
    r
}

/// Face neighbours of every density element, from the topology of the mesh
/// refined `level` more times.
pub fn density_adjacency(mesh: &HexMesh, level: u32) -> Result<Vec<Vec<usize>>, TopoptError> {
    let mut refined = mesh.clone();
    for _ in 0..level {
        refined = subdivide(&refined)?.0;
    }
    let n = refined.num_cells();
    let mut density_of = vec![0; n];
    for (d, slot) in (0..n).map(|d| (d, refined_cell(level, d))) {
        density_of[slot] = d;
    }
    Ok((0..n)
        .map(|d| {
            let r = refined_cell(level, d);
            let mut nb: Vec<usize> = refined
                .cell_faces(r)
                .iter()
                .flat_map(|&f| refined.face_cells(f).iter().copied())
                .filter(|&c| c != r)
                .map(|c| density_of[c])
                .collect();
            nb.sort_unstable();
            nb
        })
        .collect())
}

/// Solution tagged with the density generation it was computed for.
#[derive(Clone, Debug)]
pub struct DensitySolution {
    pub solution: Solution,
    pub generation: u64,
}

/// `α_i = (p/2)(1 − μ_min) ρ_iᵖ⁻¹ uᵀK_i⁰u`; `paper_exact` drops `(1 − μ_min)`.
pub fn sensitivities(
    model: &SplineModel,
    density: &DensityField,
    solved: &DensitySolution,
    cfg: &AnalysisConfig,
    kernel: &EnergyKernel,
    paper_exact: bool,
) -> Result<Vec<f64>, TopoptError> {
    if solved.generation != density.generation {
        return Err(TopoptError::StaleSolution);
    }
    if kernel.level() != density.level {
        return Err(TopoptError::InvalidConfig("energy kernel level differs from the density level"));
    }
    let mat = &cfg.material;
    let dpp = cfg.problem.dofs_per_point();
    let u = &solved.solution.u;
    if u.len() != dpp * model.num_control_points() {
        return Err(TopoptError::SizeMismatch {
            expected: dpp * model.num_control_points(),
            got: u.len(),
        });
    }
    let per = density.per_cell();
    let scale = 0.5 * mat.p * if paper_exact { 1.0 } else { 1.0 - mat.mu_min };
    let mut alpha = vec![0.0; density.len()];
    let mut ue = vec![0.0; 64 * dpp];
    for (c, map) in model.cells.iter().enumerate() {
        for (a, &g) in map.iter().enumerate() {
            ue[a * dpp..(a + 1) * dpp].copy_from_slice(&u[g * dpp..(g + 1) * dpp]);
        }
        let out = &mut alpha[c * per..(c + 1) * per];
        kernel.energies(&model.volume(c), cfg.problem, mat, &ue, c, out)?;
        for (a, &r) in out.iter_mut().zip(&density.rho[c * per..(c + 1) * per]) {
            *a *= scale * libm::pow(r, mat.p - 1.0);
        }
    }
    Ok(alpha)
}

/// Distance-weighted sensitivity filter. Element `i` averages over every
/// element closer than `r_i`, twice its mean face-neighbour distance, with
/// weights `r_i − r_ij` (the element itself weighs `r_i`).
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl Filter {
    pub fn new(centroids: &[Point3], adjacency: &[Vec<usize>]) -> Result<Self, TopoptError> {
        let n = centroids.len();
        if adjacency.len() != n {
            return Err(TopoptError::SizeMismatch {
                expected: n,
                got: adjacency.len(),
            });
        }
        let radius: Vec<f64> = (0..n)
            .map(|i| {
                let nb = &adjacency[i];
                if nb.is_empty() {
                    0.0
                } else {
                    2.0 * nb.iter().map(|&j| (centroids[j] - centroids[i]).norm()).sum::<f64>() / nb.len() as f64
                }
            })
            .collect();
        // sweep along x: candidates lie within r_i in every coordinate
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| centroids[a].x.total_cmp(&centroids[b].x).then(a.cmp(&b)));
        let xs: Vec<f64> = order.iter().map(|&i| centroids[i].x).collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        let mut row: Vec<(u32, f64)> = Vec::new();
        for i in 0..n {
            row.clear();
            let r = radius[i];
            row.push((i as u32, r));
            if r > 0.0 {
                let x = centroids[i].x;
                let lo = xs.partition_point(|&v| v < x - r);
                for &j in order[lo..].iter().take_while(|&&j| centroids[j].x <= x + r) {
                    if j == i {
                        continue;
                    }
                    let d = (centroids[j] - centroids[i]).norm();
                    if d < r {
                        row.push((j as u32, r - d));
                    }
                }
            }
            row[1..].sort_unstable_by_key(|e| e.0);
            entries.extend_from_slice(&row);
            offsets.push(entries.len());
        }
        Ok(Self { offsets, entries })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(j, ω_ij)` pairs of element `i`, itself first.
    pub fn weights(&self, i: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn apply(&self, alpha: &[f64]) -> Result<Vec<f64>, TopoptError> {
        if alpha.len() != self.len() {
            return Err(TopoptError::SizeMismatch {
                expected: self.len(),
                got: alpha.len(),
            });
        }
        Ok((0..self.len())
            .map(|i| {
                let w = self.weights(i);
                if w[0].1 <= 0.0 {
                    return alpha[i];
                }
                let (num, den) = w
                    .iter()
                    .fold((0.0, 0.0), |(n, d), &(j, wij)| (n + wij * alpha[j as usize], d + wij));
                num / den
            })
            .collect())
    }
}

/// `½(α̂_prev + α̂_curr)`, or `α̂_curr` on the first iteration.
pub fn average_history(prev: Option<&[f64]>, curr: &[f64]) -> Result<Vec<f64>, TopoptError> {
    match prev {
        None => Ok(curr.to_vec()),
        Some(p) if p.len() != curr.len() => Err(TopoptError::SizeMismatch {
            expected: p.len(),
            got: curr.len(),
        }),
        Some(p) => Ok(p.iter().zip(curr).map(|(a, b)| 0.5 * (a + b)).collect()),
    }
}

/// Children of a refined density grid take their parent's history.
pub fn inherit_history(prev: &[f64], from_level: u32) -> Vec<f64> {
    let per = 1usize << (3 * from_level);
    let cells = prev.len() / per;
    let to = from_level + 1;
    let per_to = per * 8;
    (0..cells * per_to)
        .map(|i| {
            let (c, s) = (i / per_to, sub_coords(to, i % per_to));
            let parent = crate::iga::sub_index(from_level, s.map(|x| x / 2));
            prev[c * per + parent]
        })
        .collect()
}

/// `V_k = max(V*, V_{k−1}(1 − ER))`, all as volumes.
pub fn next_volume(previous: f64, target: f64, er: f64) -> f64 {
    (previous * (1.0 - er)).max(target)
}

/// Solid elements to remove, smallest `α̃` first with ties by index, until
/// the retained volume first drops to `target` or below.
pub fn select_removals(alpha: &[f64], volumes: &[f64], solid: &[bool], target: f64) -> Vec<usize> {
    let mut retained: f64 = volumes.iter().zip(solid).filter(|(_, s)| **s).map(|(v, _)| v).sum();
    if retained <= target {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..alpha.len()).filter(|&i| solid[i]).collect();
    order.sort_unstable_by(|&a, &b| alpha[a].partial_cmp(&alpha[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut out = Vec::new();
    for i in order {
        if retained <= target {
            break;
        }
        retained -= volumes[i];
        out.push(i);
    }
    out
}

/// One row of the optimization history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Compliance of the design entering this iteration.
    pub compliance: f64,
    /// Retained volume over total volume after this iteration's removals.
    pub volume_fraction: f64,
    /// Elements at `ρ_min` after this iteration.
    pub killed_count: usize,
    /// `V_k` over total volume.
    pub target_fraction: f64,
    pub solver_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct OptResult {
    /// Analysis mesh after the pre-subdivision.
    pub mesh: HexMesh,
    pub model: SplineModel,
    pub density: DensityField,
    pub history: Vec<IterationRecord>,
    /// Displacements of the last solve.
    pub solution: Option<Solution>,
    pub converged: bool,
    pub warnings: Vec<&'static str>,
}

/// Analysis cells, density field and adjacency shared by every iteration.
pub struct Setup {
    pub meshes: Vec<HexMesh>,
    pub model: SplineModel,
}

impl Setup {
    /// Subdivides `mesh` `levels` times and builds the spline model.
    pub fn new(mesh: &HexMesh, levels: usize) -> Result<Self, TopoptError> {
        let mut meshes = vec![mesh.clone()];
        for _ in 0..levels {
            let next = subdivide(meshes.last().expect("non-empty"))?.0;
            meshes.push(next);
        }
        let model = build_spline_model(meshes.last().expect("non-empty"))?;
        Ok(Self { meshes, model })
    }

    pub fn mesh(&self) -> &HexMesh {
        self.meshes.last().expect("non-empty")
    }
}

/// Runs the BESO loop on `mesh` subdivided `subdivide` times. `observe` sees
/// every iteration record with the densities after its removals.
pub fn optimize(
    mesh: &HexMesh,
    subdivide: usize,
    analysis: &AnalysisConfig,
    bcs: &BoundaryConditions,
    beso: &BesoConfig,
    observe: &mut dyn FnMut(&IterationRecord, &DensityField),
) -> Result<OptResult, TopoptError> {
    beso.validate()?;
    analysis.material.validate()?;
    let setup = Setup::new(mesh, subdivide)?;
    optimize_setup(&setup, analysis, bcs, beso, observe)
}

/// [`optimize`] on an already subdivided hierarchy.
pub fn optimize_setup(
    setup: &Setup,
    analysis: &AnalysisConfig,
    bcs: &BoundaryConditions,
    beso: &BesoConfig,
    observe: &mut dyn FnMut(&IterationRecord, &DensityField),
) -> Result<OptResult, TopoptError> {
    beso.validate()?;
    analysis.material.validate()?;
    let mut analysis = analysis.clone();
    analysis.solver.tolerance = beso.solver_tolerance;
    let analysis = &analysis;
    let model = &setup.model;
    let quad = Quadrature::gauss_legendre(analysis.quad_order);
    let fine = setup.mesh();
    let resolved = resolve_bcs(model, analysis.problem, bcs, &|| model.boundary_points(fine), analysis.quad_order)?;
    let mut density = DensityField::new(model, beso.level, &quad)?;
    let filter = if beso.filter {
        Some(Filter::new(&density.centroids, &density_adjacency(fine, beso.level)?)?)
    } else {
        None
    };
    let kernel = EnergyKernel::new(beso.level, &quad);
    let links = subdivision_links(&setup.meshes, analysis.problem);
    let mut system = System::new(model, density.factors(&analysis.material), analysis, resolved, links)?;
    let total = density.total_volume();
    let target = beso.v_star * total;
    let mut volume = total;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut previous: Option<Vec<f64>> = None;
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut last_solution = None;
    let mut killed = 0;
    let fill = |history: Vec<IterationRecord>, density: DensityField, solution, converged, warnings| OptResult {
        mesh: fine.clone(),
        model: model.clone(),
        density,
        history,
        solution,
        converged,
        warnings,
    };
    for iter in 1..=beso.max_iters {
        let solution = match system.solve() {
            Ok(s) => s,
            Err(source) => {
                return Err(TopoptError::Aborted {
                    iteration: iter,
                    source,
                    partial: Box::new(fill(history, density, last_solution, false, warnings)),
                })
            }
        };
        let solved = DensitySolution {
            solution,
            generation: density.generation(),
        };
        let alpha = sensitivities(model, &density, &solved, analysis, &kernel, beso.paper_exact_sensitivity)?;
        let filtered = match &filter {
            Some(f) => f.apply(&alpha)?,
            None => alpha,
        };
        let averaged = average_history(previous.as_deref(), &filtered)?;
        volume = next_volume(volume, target, beso.er);
        let solid: Vec<bool> = (0..density.len()).map(|i| density.is_solid(i)).collect();
        let removals = select_removals(&averaged, &density.volumes, &solid, volume);
        if iter == 1 && target >= density.retained_volume() {
            warnings.push("target volume is not below the current volume; nothing to remove");
        }
        let mut changes = Vec::with_capacity(removals.len());
        for &i in &removals {
            density.set(i, beso.rho_min);
            changes.push((i, analysis.material.modulus_factor(beso.rho_min)));
        }
        killed += removals.len();
        let record = IterationRecord {
            iter,
            compliance: solved.solution.compliance,
            volume_fraction: density.retained_volume() / total,
            killed_count: killed,
            target_fraction: volume / total,
            solver_iterations: solved.solution.iterations,
        };
        observe(&record, &density);
        history.push(record);
        previous = Some(averaged);
        last_solution = Some(solved.solution);
        if removals.is_empty() && volume <= target {
            converged = true;
            break;
        }
        system.set_factors(&changes)?;
    }
    Ok(fill(history, density, last_solution, converged, warnings))
}
