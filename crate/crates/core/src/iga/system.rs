//! Stateful solves of `K(ρ) U = F` for a sequence of density fields.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{
    constrained_rhs, half_energy, pcg, sub_coords, AnalysisConfig, CellFactors, Constrained, DofMap,
    ElementOperator, IgaError, Jacobi, Link, LinearOperator, Multigrid, MultigridOptions, ParamBox,
    Problem, Quadrature, ResolvedBcs, Solution, SparseCholesky,
};
use crate::hexmesh::HexMesh;
use crate::spline::{build_spline_model, tensor_basis, BezierVolume, SplineModel};

/// Linear solver used by [`System`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolverMethod {
    /// Multigrid for large models with a subdivision hierarchy, Jacobi
    /// otherwise.
    #[default]
    Auto,
    /// Diagonally preconditioned CG.
    Jacobi,
    /// CG preconditioned by a multigrid V-cycle over the subdivision
    /// hierarchy.
    Multigrid,
    /// Supernodal sparse Cholesky, refactored after every change.
    Direct,
}

/// Models below this many dofs are solved without multigrid under
/// [`SolverMethod::Auto`].
pub const AUTO_MULTIGRID_DOFS: usize = 20_000;

/// Coarse levels are added until one has at most this many dofs; that level
/// is factored directly.
pub const COARSE_DIRECT_DOFS: usize = 15_000;

/// Coarse-space links for the model of `meshes.last()`, where each mesh is
/// one subdivision step of its predecessor.
pub fn subdivision_links(meshes: &[HexMesh], problem: Problem) -> Vec<Link> {
    let dpp = problem.dofs_per_point();
    let mut links = Vec::new();
    let Some(last) = meshes.last() else {
        return links;
    };
    let mut dofs = match build_spline_model(last) {
        Ok(m) => dpp * m.num_control_points(),
        Err(_) => return links,
    };
    for coarse in meshes[..meshes.len() - 1].iter().rev() {
        if dofs <= COARSE_DIRECT_DOFS {
            break;
        }
        let Ok(model) = build_spline_model(coarse) else {
            break;
        };
        dofs = dpp * model.num_control_points();
        links.push(Link::subdivision(&model));
    }
    links
}

/// Assembled system with per-sub-element modulus factors that can be changed
/// between solves. Solves start from the previous solution and rebuild the
/// preconditioner only for cells that changed.
pub struct System<'m> {
    model: &'m SplineModel,
    cfg: AnalysisConfig,
    quad: Quadrature,
    factors: CellFactors,
    op: ElementOperator,
    bcs: ResolvedBcs,
    fixed: Vec<bool>,
    links: Vec<Link>,
    method: SolverMethod,
    multigrid: Option<Multigrid>,
    direct: Option<SparseCholesky>,
    stale: bool,
    last: Option<Vec<f64>>,
}

impl<'m> System<'m> {
    pub fn new(
        model: &'m SplineModel,
        factors: CellFactors,
        cfg: &AnalysisConfig,
        bcs: ResolvedBcs,
        links: Vec<Link>,
    ) -> Result<Self, IgaError> {
        if factors.factors.len() != model.num_cells() * factors.per_cell() {
            return Err(IgaError::SizeMismatch {
                expected: model.num_cells() * factors.per_cell(),
                got: factors.factors.len(),
            });
        }
        let dofs = DofMap::new(model, cfg.problem);
        if bcs.fixed.len() != dofs.ndof() {
            return Err(IgaError::SizeMismatch {
                expected: dofs.ndof(),
                got: bcs.fixed.len(),
            });
        }
        let quad = Quadrature::gauss_legendre(cfg.quad_order);
        let mut op = ElementOperator::new(dofs);
        for c in 0..model.num_cells() {
            let k = super::cell_matrix(&model.volume(c), cfg, &quad, factors.level, factors.cell(c), c)?;
            op.set_element(c, &k);
        }
        let method = match cfg.solver.method {
            SolverMethod::Auto if !links.is_empty() && op.dim() > AUTO_MULTIGRID_DOFS => SolverMethod::Multigrid,
            SolverMethod::Auto => SolverMethod::Jacobi,
            m => m,
        };
        let fixed = bcs.fixed.iter().map(Option::is_some).collect();
        Ok(Self {
            model,
            cfg: cfg.clone(),
            quad,
            factors,
            op,
            bcs,
            fixed,
            links,
            method,
            multigrid: None,
            direct: None,
            stale: true,
            last: None,
        })
    }

    pub fn operator(&self) -> &ElementOperator {
        &self.op
    }

    pub fn factors(&self) -> &CellFactors {
        &self.factors
    }

    pub fn bcs(&self) -> &ResolvedBcs {
        &self.bcs
    }

    /// Method actually used after resolving [`SolverMethod::Auto`].
    pub fn method(&self) -> SolverMethod {
        self.method
    }

    /// Sets `factors[index] = value` for each pair; changed cells are
    /// reassembled from their sub-element matrices.
    pub fn set_factors(&mut self, changes: &[(usize, f64)]) -> Result<(), IgaError> {
        let per = self.factors.per_cell();
        let mut cells: Vec<usize> = Vec::with_capacity(changes.len());
        for &(i, v) in changes {
            if i >= self.factors.factors.len() {
                return Err(IgaError::SizeMismatch {
                    expected: self.factors.factors.len(),
                    got: i + 1,
                });
            }
            if self.factors.factors[i] != v {
                self.factors.factors[i] = v;
                cells.push(i / per);
            }
        }
        cells.sort_unstable();
        cells.dedup();
        for c in cells {
            let k = super::cell_matrix(
                &self.model.volume(c),
                &self.cfg,
                &self.quad,
                self.factors.level,
                self.factors.cell(c),
                c,
            )?;
            let delta = &k - self.op.element_matrix(c);
            self.op.set_element(c, &k);
            if let Some(mg) = self.multigrid.as_mut() {
                mg.update_fine_cell(&self.op, c, &delta);
            }
            self.stale = true;
        }
        Ok(())
    }

    /// Solves for the current factors.
    pub fn solve(&mut self) -> Result<Solution, IgaError> {
        let b = constrained_rhs(&self.op, &self.bcs);
        let mut u = match self.last.take() {
            Some(u) => u,
            None => vec![0.0; b.len()],
        };
        for (ui, f) in u.iter_mut().zip(&self.bcs.fixed) {
            if let Some(v) = f {
                *ui = *v;
            }
        }
        let opts = self.cfg.solver;
        let a = Constrained {
            inner: &self.op,
            fixed: &self.bcs.fixed,
        };
        let iterations = match self.method {
            SolverMethod::Jacobi | SolverMethod::Auto => pcg(&a, &Jacobi::new(&a), &b, &mut u, &opts)?.iterations,
            SolverMethod::Direct => {
                if self.direct.is_none() {
                    self.direct = Some(SparseCholesky::analyse(&self.op.dofs, &self.model.points, &self.fixed)?);
                }
                let d = self.direct.as_mut().expect("analysed above");
                if self.stale {
                    d.factor(&self.op)?;
                    self.stale = false;
                }
                pcg(&a, &*d, &b, &mut u, &opts)?.iterations
            }
            SolverMethod::Multigrid => {
                if self.multigrid.is_none() {
                    let links = core::mem::take(&mut self.links);
                    self.multigrid = Some(Multigrid::new(&self.op, &self.fixed, links, MultigridOptions::default())?);
                    self.stale = false;
                }
                let mg = self.multigrid.as_mut().expect("built above");
                if self.stale {
                    mg.refresh(&self.op, false)?;
                    self.stale = false;
                }
                pcg(&a, &*mg, &b, &mut u, &opts)?.iterations
            }
        };
        let mut r = vec![0.0; b.len()];
        a.apply(&u, &mut r);
        let rn: f64 = r.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let bn: f64 = b.iter().map(|x| x * x).sum();
        let residual = if bn > 0.0 { libm::sqrt(rn / bn) } else { 0.0 };
        let compliance = half_energy(&self.op, &u);
        self.last = Some(u.clone());
        Ok(Solution {
            u,
            compliance,
            iterations,
            residual,
        })
    }
}

/// Strain energies `uᵀK_i⁰u` of the sub-elements of one cell on a density
/// grid, evaluated pointwise from the displacement field with the same
/// quadrature as the stiffness matrices.
#[derive(Clone, Debug)]
pub struct EnergyKernel {
    level: u32,
    per_box: usize,
    weights: Vec<f64>,
    /// Reference gradients, one column per quadrature point and direction.
    table: DMatrix<f64>,
}

impl EnergyKernel {
    pub fn new(level: u32, quad: &Quadrature) -> Self {
        let n = quad.len();
        let per_box = n * n * n;
        let boxes = 1usize << (3 * level);
        let mut weights = Vec::with_capacity(boxes * per_box);
        let mut table = DMatrix::zeros(64, 3 * boxes * per_box);
        let mut col = 0;
        for b in 0..boxes {
            let bx = ParamBox::sub(level, sub_coords(level, b)).expect("index in range");
            let scale = bx.size * bx.size * bx.size;
            for q in 0..per_box {
                let (i, j, k) = (q / (n * n), (q / n) % n, q % n);
                let xi = [
                    bx.lo[0] + bx.size * quad.points[i],
                    bx.lo[1] + bx.size * quad.points[j],
                    bx.lo[2] + bx.size * quad.points[k],
                ];
                weights.push(scale * quad.weights[i] * quad.weights[j] * quad.weights[k]);
                let (_, g) = tensor_basis(xi[0], xi[1], xi[2]);
                for (a, d) in g.iter().enumerate() {
                    for r in 0..3 {
                        table[(a, col + r)] = d[r];
                    }
                }
                col += 3;
            }
        }
        Self {
            level,
            per_box,
            weights,
            table,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Writes one energy per sub-element of `cell` into `out`; `u` holds the
    /// cell's coefficients in element dof order.
    pub fn energies(
        &self,
        vol: &BezierVolume,
        problem: Problem,
        mat: &super::Material,
        u: &[f64],
        cell: usize,
        out: &mut [f64],
    ) -> Result<(), IgaError> {
        let dpp = problem.dofs_per_point();
        let rows = 3 + dpp;
        let mut x = DMatrix::zeros(rows, 64);
        for a in 0..64 {
            for r in 0..3 {
                x[(r, a)] = vol.points[a][r];
            }
            for c in 0..dpp {
                x[(3 + c, a)] = u[dpp * a + c];
            }
        }
        let prod = x * &self.table;
        let (lambda, mu) = (mat.lambda(), mat.mu());
        for (b, e) in out.iter_mut().enumerate().take(1 << (3 * self.level)) {
            let mut total = 0.0;
            for q in b * self.per_box..(b + 1) * self.per_box {
                let j = nalgebra::Matrix3::from_fn(|r, d| prod[(r, 3 * q + d)]);
                let det = j.determinant();
                if !(det > 0.0) {
                    let bx = ParamBox::sub(self.level, sub_coords(self.level, b)).expect("index in range");
                    return Err(IgaError::NonPositiveJacobian {
                        cell,
                        param: bx.center(),
                        det,
                    });
                }
                let ji = j.try_inverse().expect("positive determinant");
                let wd = self.weights[q] * det;
                // ∂u_i/∂x_j = Σ_d ∂u_i/∂ξ_d (J⁻¹)_dj
                let grad = |i: usize, jx: usize| (0..3).map(|d| prod[(3 + i, 3 * q + d)] * ji[(d, jx)]).sum::<f64>();
                match problem {
                    Problem::Heat => {
                        let g = [grad(0, 0), grad(0, 1), grad(0, 2)];
                        total += wd * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
                    }
                    Problem::Elasticity => {
                        let h = nalgebra::Matrix3::from_fn(grad);
                        let tr = h.trace();
                        let eps = (h + h.transpose()) * 0.5;
                        total += wd * (lambda * tr * tr + 2.0 * mu * eps.norm_squared());
                    }
                }
            }
            *e = total;
        }
        Ok(())
    }
}
