//! Isogeometric analysis on a [`SplineModel`]: Bernstein shape functions,
//! heat-conduction and linear-elasticity stiffness, multi-resolution
//! sub-element stiffness, boundary conditions and a preconditioned conjugate
//! gradient solve.
//!
//! Degrees of freedom are numbered point-major: component `c` of control
//! point `g` is dof `dpp·g + c`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};

use crate::geometry::{Aabb, Point3};
use crate::spline::{tensor_basis, BezierVolume, SplineModel};
use kernels::packed_symv;

mod cholesky;
mod kernels;
mod multigrid;
mod system;

pub use cholesky::SparseCholesky;
pub use multigrid::{Link, Multigrid, MultigridOptions, SmootherKind};
pub use system::{subdivision_links, EnergyKernel, SolverMethod, System, AUTO_MULTIGRID_DOFS, COARSE_DIRECT_DOFS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IgaError {
    #[error("cell {cell}: non-positive Jacobian {det:e} at parameter ({:.6}, {:.6}, {:.6})", param[0], param[1], param[2])]
    NonPositiveJacobian { cell: usize, param: [f64; 3], det: f64 },
    #[error("invalid material: {0}")]
    InvalidMaterial(&'static str),
    #[error("sub-element ({i}, {j}, {k}) outside level {level}", i = sub[0], j = sub[1], k = sub[2])]
    InvalidSubElement { level: u32, sub: [usize; 3] },
    #[error("no Dirichlet condition selects any control point; the system is singular")]
    Unconstrained,
    #[error("component {0} does not exist for this problem")]
    InvalidComponent(usize),
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("indefinite or singular system (curvature {0:e})")]
    Breakdown(f64),
    #[error("expected {expected} values, got {got}")]
    SizeMismatch { expected: usize, got: usize },
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1);
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = libm::cos(PI * (i as f64 + 0.75) / (nf + 0.5));
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let dp = legendre(n, x).1;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1,1] → [0,1]
            points[i] = 0.5 * (1.0 - x);
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `(P_n(x), P_n'(x))`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Isotropic linear-elastic material with SIMP-style penalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub e0: f64,
    pub nu: f64,
    pub p: f64,
    pub mu_min: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            e0: 1.0,
            nu: 0.3,
            p: 3.0,
            mu_min: 1e-9,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<(), IgaError> {
        if !(self.e0 > 0.0) {
            return Err(IgaError::InvalidMaterial("E0 must be positive"));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(IgaError::InvalidMaterial("Poisson ratio must lie in [0, 0.5)"));
        }
        if !(self.p >= 1.0) {
            return Err(IgaError::InvalidMaterial("penalization exponent must be at least 1"));
        }
        if !(self.mu_min > 0.0 && self.mu_min < 1.0) {
            return Err(IgaError::InvalidMaterial("mu_min must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.nu * self.e0 / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
    }

    pub fn mu(&self) -> f64 {
        self.e0 / (2.0 * (1.0 + self.nu))
    }

    /// `μ_min + (1 − μ_min) ρᵖ`.
    pub fn modulus_factor(&self, rho: f64) -> f64 {
        self.mu_min + (1.0 - self.mu_min) * libm::pow(rho, self.p)
    }

    /// 6×6 constitutive matrix for strains ordered `xx, yy, zz, yz, xz, xy`
    /// with engineering shear strains.
    pub fn d_matrix(&self) -> [[f64; 6]; 6] {
        let (l, m) = (self.lambda(), self.mu());
        let mut d = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = l;
            }
            d[i][i] = l + 2.0 * m;
            d[i + 3][i + 3] = m;
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Heat,
    Elasticity,
}

impl Problem {
    pub fn dofs_per_point(self) -> usize {
        match self {
            Problem::Heat => 1,
            Problem::Elasticity => 3,
        }
    }

    pub fn element_dofs(self) -> usize {
        64 * self.dofs_per_point()
    }
}

/// Parametric sub-cube `lo + [0, size]³` of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBox {
    pub lo: [f64; 3],
    pub size: f64,
}

impl ParamBox {
    pub const UNIT: ParamBox = ParamBox {
        lo: [0.0; 3],
        size: 1.0,
    };

    pub fn sub(level: u32, sub: [usize; 3]) -> Result<Self, IgaError> {
        let n = 1usize << level;
        if sub.iter().any(|&s| s >= n) {
            return Err(IgaError::InvalidSubElement { level, sub });
        }
        let h = 1.0 / n as f64;
        Ok(Self {
            lo: sub.map(|s| s as f64 * h),
            size: h,
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.lo.map(|x| x + 0.5 * self.size)
    }
}

/// Sub-element `(i, j, k)` of a level-`s` density grid has index
/// `i + n(j + nk)` with `n = 2^s`.
pub fn sub_index(level: u32, sub: [usize; 3]) -> usize {
    let n = 1usize << level;
    sub[0] + n * (sub[1] + n * sub[2])
}

pub fn sub_coords(level: u32, index: usize) -> [usize; 3] {
    let n = 1usize << level;
    [index % n, (index / n) % n, index / (n * n)]
}

/// Physical basis gradients and `|det J|` at one parameter.
pub struct PointData {
    pub values: [f64; 64],
    pub grads: [[f64; 3]; 64],
    pub det: f64,
}

/// Basis values and physical gradients at `xi`; fails if `det J ≤ 0`.
pub fn point_data(vol: &BezierVolume, xi: [f64; 3], cell: usize) -> Result<PointData, IgaError> {
    let (values, g) = tensor_basis(xi[0], xi[1], xi[2]);
    let mut j = Matrix3::zeros();
    for (p, d) in vol.points.iter().zip(&g) {
        for col in 0..3 {
            for row in 0..3 {
                j[(row, col)] += p[row] * d[col];
            }
        }
    }
    let det = j.determinant();
    if !(det > 0.0) {
        return Err(IgaError::NonPositiveJacobian {
            cell,
            param: xi,
            det,
        });
    }
    // ∇N = J⁻ᵀ ∇̂N
    let jit = j.try_inverse().expect("positive determinant").transpose();
    let mut grads = [[0.0; 3]; 64];
    for (out, d) in grads.iter_mut().zip(&g) {
        for r in 0..3 {
            out[r] = jit[(r, 0)] * d[0] + jit[(r, 1)] * d[1] + jit[(r, 2)] * d[2];
        }
    }
    Ok(PointData { values, grads, det })
}

/// Quadrature points of `bx`: parameter and weight including the box measure.
fn box_points<'a>(quad: &'a Quadrature, bx: &ParamBox) -> impl Iterator<Item = ([f64; 3], f64)> + 'a {
    let bx = *bx;
    let n = quad.len();
    let scale = bx.size * bx.size * bx.size;
    (0..n * n * n).map(move |q| {
        let (i, j, k) = (q / (n * n), (q / n) % n, q % n);
        let xi = [
            bx.lo[0] + bx.size * quad.points[i],
            bx.lo[1] + bx.size * quad.points[j],
            bx.lo[2] + bx.size * quad.points[k],
        ];
        (xi, scale * quad.weights[i] * quad.weights[j] * quad.weights[k])
    })
}

/// Gram matrices `M^{pq}_{ab} = ∫ ∂_pN_a ∂_qN_b` over a box; returns the six
/// blocks `pq ∈ {00, 11, 22, 01, 02, 12}`.
fn gram_blocks(
    vol: &BezierVolume,
    quad: &Quadrature,
    bx: &ParamBox,
    cell: usize,
    only_diagonal: bool,
) -> Result<[DMatrix<f64>; 6], IgaError> {
    let nq = quad.len().pow(3);
    let mut g = [
        DMatrix::<f64>::zeros(64, nq),
        DMatrix::<f64>::zeros(64, nq),
        DMatrix::<f64>::zeros(64, nq),
    ];
    let mut gw = g.clone();
    for (q, (xi, w)) in box_points(quad, bx).enumerate() {
        let pd = point_data(vol, xi, cell)?;
        let wd = w * pd.det;
        for a in 0..64 {
            for p in 0..3 {
                g[p][(a, q)] = pd.grads[a][p];
                gw[p][(a, q)] = pd.grads[a][p] * wd;
            }
        }
    }
    let prod = |p: usize, q: usize| &gw[p] * g[q].transpose();
    let empty = || DMatrix::zeros(0, 0);
    Ok(if only_diagonal {
        [prod(0, 0), prod(1, 1), prod(2, 2), empty(), empty(), empty()]
    } else {
        [prod(0, 0), prod(1, 1), prod(2, 2), prod(0, 1), prod(0, 2), prod(1, 2)]
    })
}

/// Stiffness of the parent basis integrated over `bx`.
pub fn box_stiffness(
    vol: &BezierVolume,
    problem: Problem,
    mat: &Material,
    quad: &Quadrature,
    bx: &ParamBox,
    cell: usize,
) -> Result<DMatrix<f64>, IgaError> {
    match problem {
        Problem::Heat => {
            let [m00, m11, m22, ..] = gram_blocks(vol, quad, bx, cell, true)?;
            Ok(m00 + m11 + m22)
        }
        Problem::Elasticity => {
            mat.validate()?;
            let m = gram_blocks(vol, quad, bx, cell, false)?;
            Ok(elastic_from_gram(&m, mat.lambda(), mat.mu()))
        }
    }
}

/// `K_{(a,p),(b,q)} = λM^{pq} + μM^{qp} + μδ_pq ΣM^{rr}`.
fn elastic_from_gram(m: &[DMatrix<f64>; 6], lambda: f64, mu: f64) -> DMatrix<f64> {
    let block = |p: usize, q: usize| -> (&DMatrix<f64>, bool) {
        match (p, q) {
            (0, 0) => (&m[0], false),
            (1, 1) => (&m[1], false),
            (2, 2) => (&m[2], false),
            (0, 1) => (&m[3], false),
            (0, 2) => (&m[4], false),
            (1, 2) => (&m[5], false),
            (1, 0) => (&m[3], true),
            (2, 0) => (&m[4], true),
            _ => (&m[5], true),
        }
    };
    // M^{pq}_{ab} with the transpose flag: M^{qp}_{ab} = M^{pq}_{ba}
    let at = |p: usize, q: usize, a: usize, b: usize| {
        let (mm, t) = block(p, q);
        if t {
            mm[(b, a)]
        } else {
            mm[(a, b)]
        }
    };
    let mut k = DMatrix::zeros(192, 192);
    for a in 0..64 {
        for b in 0..64 {
            let trace = m[0][(a, b)] + m[1][(a, b)] + m[2][(a, b)];
            for p in 0..3 {
                for q in 0..3 {
                    let mut v = lambda * at(p, q, a, b) + mu * at(q, p, a, b);
                    if p == q {
                        v += mu * trace;
                    }
                    k[(3 * a + p, 3 * b + q)] = v;
                }
            }
        }
    }
    k
}

/// 64×64 heat-conduction stiffness `∫ ∇Nᵀ∇N |det J|`.
pub fn element_stiffness_heat(vol: &BezierVolume, quad_order: usize) -> Result<DMatrix<f64>, IgaError> {
    box_stiffness(
        vol,
        Problem::Heat,
        &Material::default(),
        &Quadrature::gauss_legendre(quad_order),
        &ParamBox::UNIT,
        0,
    )
}

/// 192×192 elasticity stiffness `∫ BᵀDB |det J|`.
pub fn element_stiffness_elastic(
    vol: &BezierVolume,
    mat: &Material,
    quad_order: usize,
) -> Result<DMatrix<f64>, IgaError> {
    box_stiffness(
        vol,
        Problem::Elasticity,
        mat,
        &Quadrature::gauss_legendre(quad_order),
        &ParamBox::UNIT,
        0,
    )
}

/// Parent-basis stiffness over sub-cube `sub` of the level-`level` grid.
/// Level 0 is the element stiffness itself.
pub fn subelement_stiffness(
    vol: &BezierVolume,
    level: u32,
    sub: [usize; 3],
    problem: Problem,
    mat: &Material,
    quad_order: usize,
) -> Result<DMatrix<f64>, IgaError> {
    let bx = ParamBox::sub(level, sub)?;
    box_stiffness(vol, problem, mat, &Quadrature::gauss_legendre(quad_order), &bx, 0)
}

/// `uᵀK⁰u` over a box, computed pointwise from the strain field.
pub fn box_energy(
    vol: &BezierVolume,
    problem: Problem,
    mat: &Material,
    quad: &Quadrature,
    bx: &ParamBox,
    u: &[f64],
    cell: usize,
) -> Result<f64, IgaError> {
    let (lambda, mu) = (mat.lambda(), mat.mu());
    let mut total = 0.0;
    for (xi, w) in box_points(quad, bx) {
        let pd = point_data(vol, xi, cell)?;
        let wd = w * pd.det;
        match problem {
            Problem::Heat => {
                let mut g = [0.0; 3];
                for a in 0..64 {
                    for r in 0..3 {
                        g[r] += u[a] * pd.grads[a][r];
                    }
                }
                total += wd * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
            }
            Problem::Elasticity => {
                // displacement gradient H_ij = ∂u_i/∂x_j
                let mut h = [[0.0; 3]; 3];
                for a in 0..64 {
                    for i in 0..3 {
                        let ui = u[3 * a + i];
                        for j in 0..3 {
                            h[i][j] += ui * pd.grads[a][j];
                        }
                    }
                }
                let tr = h[0][0] + h[1][1] + h[2][2];
                let mut ee = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let e = 0.5 * (h[i][j] + h[j][i]);
                        ee += e * e;
                    }
                }
                total += wd * (lambda * tr * tr + 2.0 * mu * ee);
            }
        }
    }
    Ok(total)
}

/// `∫ N |det J|` over a box.
pub fn box_basis_integrals(
    vol: &BezierVolume,
    quad: &Quadrature,
    bx: &ParamBox,
    cell: usize,
) -> Result<[f64; 64], IgaError> {
    let mut out = [0.0; 64];
    for (xi, w) in box_points(quad, bx) {
        let pd = point_data(vol, xi, cell)?;
        for (o, v) in out.iter_mut().zip(pd.values) {
            *o += w * pd.det * v;
        }
    }
    Ok(out)
}

/// Physical volume of a box, `∫ |det J|`.
pub fn box_volume(vol: &BezierVolume, quad: &Quadrature, bx: &ParamBox, cell: usize) -> Result<f64, IgaError> {
    let mut v = 0.0;
    for (xi, w) in box_points(quad, bx) {
        v += w * point_data(vol, xi, cell)?.det;
    }
    Ok(v)
}

/// Cell → global dof tables.
#[derive(Clone, Debug)]
pub struct DofMap {
    /// Dofs per control point.
    pub dpp: usize,
    /// Dofs per cell.
    pub ne: usize,
    pub num_points: usize,
    /// `ne` entries per cell.
    pub cell_dofs: Vec<u32>,
}

impl DofMap {
    pub fn new(model: &SplineModel, problem: Problem) -> Self {
        Self::from_cells(problem.dofs_per_point(), model.num_control_points(), &model.cells)
    }

    /// Point-major numbering `dpp·g + c` over arbitrary cell node lists.
    pub fn from_cells<C: AsRef<[usize]>>(dpp: usize, num_points: usize, cells: &[C]) -> Self {
        let npc = cells.first().map_or(0, |c| c.as_ref().len());
        let mut cell_dofs = Vec::with_capacity(cells.len() * npc * dpp);
        for map in cells {
            for &g in map.as_ref() {
                for c in 0..dpp {
                    cell_dofs.push((dpp * g + c) as u32);
                }
            }
        }
        Self {
            dpp,
            ne: npc * dpp,
            num_points,
            cell_dofs,
        }
    }

    pub fn ndof(&self) -> usize {
        self.num_points * self.dpp
    }

    pub fn num_cells(&self) -> usize {
        if self.ne == 0 {
            0
        } else {
            self.cell_dofs.len() / self.ne
        }
    }

    pub fn cell(&self, c: usize) -> &[u32] {
        &self.cell_dofs[self.ne * c..self.ne * (c + 1)]
    }
}

/// Compressed sparse rows with 32-bit column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Sparsity pattern of the assembled operator, columns sorted.
    pub fn pattern(dofs: &DofMap) -> Self {
        let n = dofs.ndof();
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        for c in 0..dofs.num_cells() {
            let cd = dofs.cell(c);
            for &r in cd {
                rows[r as usize].extend_from_slice(cd);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        Self { n, row_ptr, cols, vals }
    }

    fn position(&self, row: usize, col: u32) -> usize {
        let r = &self.cols[self.row_ptr[row]..self.row_ptr[row + 1]];
        self.row_ptr[row] + r.binary_search(&col).expect("entry in pattern")
    }

    /// Adds element matrices in cell order; the result depends only on the
    /// inputs, never on scheduling.
    pub fn assemble<'a>(dofs: &DofMap, mats: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Self {
        let mut a = Self::pattern(dofs);
        for (c, k) in mats.into_iter().enumerate() {
            let cd = dofs.cell(c);
            for (i, &r) in cd.iter().enumerate() {
                for (j, &col) in cd.iter().enumerate() {
                    let pos = a.position(r as usize, col);
                    a.vals[pos] += k[(i, j)];
                }
            }
        }
        a
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let r = &self.cols[self.row_ptr[row]..self.row_ptr[row + 1]];
        match r.binary_search(&(col as u32)) {
            Ok(i) => self.vals[self.row_ptr[row] + i],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                d[(r, self.cols[k] as usize)] = self.vals[k];
            }
        }
        d
    }
}

/// A symmetric linear operator.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            *yr = s;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }
}

/// Number of stored entries of a packed symmetric `n × n` matrix.
pub const fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Offset of row `i` in packed upper storage; row `i` holds `K[i, i..n]`.
#[inline]
pub const fn packed_row(n: usize, i: usize) -> usize {
    i * (2 * n + 1 - i) / 2
}

/// Packs the upper triangle of a symmetric matrix.
pub fn pack_upper(k: &DMatrix<f64>, out: &mut [f64]) {
    let n = k.nrows();
    let mut o = 0;
    for i in 0..n {
        for j in i..n {
            out[o] = k[(i, j)];
            o += 1;
        }
    }
}

/// Expands packed upper storage into a full symmetric matrix.
pub fn unpack_upper(n: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    let mut o = 0;
    for i in 0..n {
        for j in i..n {
            k[(i, j)] = packed[o];
            k[(j, i)] = packed[o];
            o += 1;
        }
    }
    k
}

/// Unassembled operator `Σ_c R_cᵀ K_c R_c`. Element matrices are symmetric
/// and kept as packed upper triangles.
#[derive(Clone, Debug)]
pub struct ElementOperator {
    pub dofs: DofMap,
    /// `packed_len(ne)` values per cell.
    pub mats: Vec<f64>,
}

impl ElementOperator {
    pub fn new(dofs: DofMap) -> Self {
        let mats = vec![0.0; dofs.num_cells() * packed_len(dofs.ne)];
        Self { dofs, mats }
    }

    /// Packed upper triangle of cell `c`.
    pub fn element(&self, c: usize) -> &[f64] {
        let m = packed_len(self.dofs.ne);
        &self.mats[c * m..(c + 1) * m]
    }

    pub fn element_mut(&mut self, c: usize) -> &mut [f64] {
        let m = packed_len(self.dofs.ne);
        &mut self.mats[c * m..(c + 1) * m]
    }

    pub fn element_matrix(&self, c: usize) -> DMatrix<f64> {
        unpack_upper(self.dofs.ne, self.element(c))
    }

    pub fn set_element(&mut self, c: usize, k: &DMatrix<f64>) {
        pack_upper(k, self.element_mut(c));
    }

    /// `K_c += α ΔK`.
    pub fn add_to_element(&mut self, c: usize, alpha: f64, delta: &DMatrix<f64>) {
        let n = self.dofs.ne;
        let dst = self.element_mut(c);
        let mut o = 0;
        for i in 0..n {
            for j in i..n {
                dst[o] += alpha * delta[(i, j)];
                o += 1;
            }
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mats: Vec<DMatrix<f64>> = (0..self.dofs.num_cells()).map(|c| self.element_matrix(c)).collect();
        CsrMatrix::assemble(&self.dofs, &mats)
    }
}

/// Gathers, applies packed element matrices and scatters: `y = Σ R_cᵀ K_c R_c x`.
pub(crate) fn element_apply<T: kernels::Real>(dofs: &DofMap, mats: &[T], x: &[f64], y: &mut [f64]) {
    let ne = dofs.ne;
    let m = packed_len(ne);
    y.fill(0.0);
    let mut xc = vec![T::default(); ne];
    let mut yc = vec![T::default(); ne];
    for c in 0..dofs.num_cells() {
        let cd = dofs.cell(c);
        for (v, &d) in xc.iter_mut().zip(cd) {
            *v = T::from_f64(x[d as usize]);
        }
        yc.fill(T::default());
        packed_symv(ne, &mats[c * m..(c + 1) * m], &xc, &mut yc);
        for (&v, &d) in yc.iter().zip(cd) {
            y[d as usize] += v.to_f64();
        }
    }
}

impl LinearOperator for ElementOperator {
    fn dim(&self) -> usize {
        self.dofs.ndof()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        element_apply(&self.dofs, &self.mats, x, y);
    }

    fn diagonal(&self) -> Vec<f64> {
        let ne = self.dofs.ne;
        let mut d = vec![0.0; self.dim()];
        for c in 0..self.dofs.num_cells() {
            let k = self.element(c);
            for (i, &g) in self.dofs.cell(c).iter().enumerate() {
                d[g as usize] += k[packed_row(ne, i)];
            }
        }
        d
    }
}

/// Control points picked by a condition.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    /// Control points whose position lies in the box.
    Box(Aabb),
    /// Box given in fractions of the control point bounding box: 0 maps to
    /// its minimum and 1 to its maximum along each axis.
    RelativeBox(Aabb),
    /// Control points on the boundary face layers of the model.
    Boundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dirichlet {
    pub selection: Selection,
    /// Constrained components: `0..3` for elasticity, `0` for heat.
    pub components: Vec<usize>,
    pub value: f64,
    /// Optional linear variation: the prescribed value at control point `x`
    /// is `value + gradient·x`.
    pub gradient: Option<Point3>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadKind {
    /// Force vector added at every selected control point.
    Force(Point3),
    /// Heat source added at every selected control point.
    Source(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub selection: Selection,
    pub kind: LoadKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryConditions {
    pub dirichlet: Vec<Dirichlet>,
    pub loads: Vec<Load>,
    /// Uniform volumetric heat source density `f` (consistent load `f∫N`).
    pub heat_source: Option<f64>,
}

/// Boundary conditions resolved against a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedBcs {
    /// Prescribed value per dof, `None` for free dofs.
    pub fixed: Vec<Option<f64>>,
    /// External load vector.
    pub load: Vec<f64>,
}

impl ResolvedBcs {
    pub fn num_fixed(&self) -> usize {
        self.fixed.iter().filter(|f| f.is_some()).count()
    }
}

fn select(sel: &Selection, model: &SplineModel, boundary: &dyn Fn() -> Vec<bool>) -> Vec<usize> {
    match sel {
        Selection::Box(b) => (0..model.num_control_points())
            .filter(|&i| b.contains(&model.points[i]))
            .collect(),
        Selection::RelativeBox(f) => match Aabb::from_points(&model.points) {
            Some(bb) => {
                let ext = bb.max - bb.min;
                let b = Aabb::new(bb.min + ext.component_mul(&f.min), bb.min + ext.component_mul(&f.max));
                select(&Selection::Box(b), model, boundary)
            }
            None => Vec::new(),
        },
        Selection::Boundary => boundary()
            .into_iter()
            .enumerate()
            .filter_map(|(i, f)| f.then_some(i))
            .collect(),
    }
}

/// Resolves selections into per-dof constraints and the load vector.
/// `boundary` supplies the boundary-layer flags when a condition uses
/// [`Selection::Boundary`].
pub fn resolve_bcs(
    model: &SplineModel,
    problem: Problem,
    bcs: &BoundaryConditions,
    boundary: &dyn Fn() -> Vec<bool>,
    quad_order: usize,
) -> Result<ResolvedBcs, IgaError> {
    let dpp = problem.dofs_per_point();
    let ndof = dpp * model.num_control_points();
    let mut fixed = vec![None; ndof];
    for d in &bcs.dirichlet {
        if let Some(&c) = d.components.iter().find(|&&c| c >= dpp) {
            return Err(IgaError::InvalidComponent(c));
        }
        for g in select(&d.selection, model, boundary) {
            let x = model.points[g];
            let v = d.value + d.gradient.map_or(0.0, |gr| gr.dot(&x));
            for &c in &d.components {
                fixed[dpp * g + c] = Some(v);
            }
        }
    }
    if fixed.iter().all(|f| f.is_none()) {
        return Err(IgaError::Unconstrained);
    }
    let mut load = vec![0.0; ndof];
    for l in &bcs.loads {
        let pts = select(&l.selection, model, boundary);
        for g in pts {
            match (&l.kind, problem) {
                (LoadKind::Force(f), Problem::Elasticity) => {
                    for c in 0..3 {
                        load[3 * g + c] += f[c];
                    }
                }
                (LoadKind::Source(q), Problem::Heat) => load[g] += q,
                (LoadKind::Force(f), Problem::Heat) => load[g] += f[0],
                (LoadKind::Source(q), Problem::Elasticity) => load[3 * g] += q,
            }
        }
    }
    if let (Some(f), Problem::Heat) = (bcs.heat_source, problem) {
        let quad = Quadrature::gauss_legendre(quad_order);
        for (c, map) in model.cells.iter().enumerate() {
            let ints = box_basis_integrals(&model.volume(c), &quad, &ParamBox::UNIT, c)?;
            for (s, &g) in map.iter().enumerate() {
                load[g] += f * ints[s];
            }
        }
    }
    Ok(ResolvedBcs { fixed, load })
}

/// `A` restricted to free dofs, identity on fixed ones.
pub struct Constrained<'a, A: LinearOperator + ?Sized> {
    pub inner: &'a A,
    pub fixed: &'a [Option<f64>],
}

impl<A: LinearOperator + ?Sized> LinearOperator for Constrained<'_, A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut xf = x.to_vec();
        for (v, f) in xf.iter_mut().zip(self.fixed) {
            if f.is_some() {
                *v = 0.0;
            }
        }
        self.inner.apply(&xf, y);
        for ((yi, f), xi) in y.iter_mut().zip(self.fixed).zip(x) {
            if f.is_some() {
                *yi = *xi;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.inner.diagonal();
        for (v, f) in d.iter_mut().zip(self.fixed) {
            if f.is_some() {
                *v = 1.0;
            }
        }
        d
    }
}

/// Right-hand side after eliminating prescribed values: `b_f = F_f − A_fc g`,
/// `b_c = g`.
pub fn constrained_rhs<A: LinearOperator + ?Sized>(a: &A, bcs: &ResolvedBcs) -> Vec<f64> {
    let g: Vec<f64> = bcs.fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    let mut ag = vec![0.0; a.dim()];
    if g.iter().any(|&v| v != 0.0) {
        a.apply(&g, &mut ag);
    }
    bcs.load
        .iter()
        .zip(&ag)
        .zip(&bcs.fixed)
        .map(|((&f, &agi), fx)| match fx {
            Some(v) => *v,
            None => f - agi,
        })
        .collect()
}

/// Symmetric positive definite preconditioner `z = M⁻¹ r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Jacobi {
    inv: Vec<f64>,
}

impl Jacobi {
    pub fn new<A: LinearOperator + ?Sized>(a: &A) -> Self {
        Self {
            inv: a
                .diagonal()
                .into_iter()
                .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv) {
            *zi = ri * di;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target `‖b − Ax‖ ≤ tol·‖b‖`.
    pub tolerance: f64,
    /// `None` means `50·ndof`.
    pub max_iterations: Option<usize>,
    pub method: SolverMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: None,
            method: SolverMethod::Auto,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients from the initial guess in `x`.
pub fn pcg<A: LinearOperator + ?Sized, M: Preconditioner + ?Sized>(
    a: &A,
    m: &M,
    b: &[f64],
    x: &mut [f64],
    opts: &SolverOptions,
) -> Result<CgStats, IgaError> {
    let n = a.dim();
    let max_it = opts.max_iterations.unwrap_or(50 * n.max(1));
    let bnorm = libm::sqrt(dot(b, b));
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut res = libm::sqrt(dot(&r, &r)) / bnorm;
    let mut it = 0;
    while res > opts.tolerance {
        if it >= max_it {
            return Err(IgaError::NotConverged {
                iterations: it,
                residual: res,
            });
        }
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(IgaError::Breakdown(pq));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = libm::sqrt(dot(&r, &r)) / bnorm;
        it += 1;
    }
    Ok(CgStats {
        iterations: it,
        residual: res,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Control-point coefficients, `dpp` per point.
    pub u: Vec<f64>,
    /// `½ UᵀKU`.
    pub compliance: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// `½ uᵀ A u`.
pub fn half_energy<A: LinearOperator + ?Sized>(a: &A, u: &[f64]) -> f64 {
    let mut au = vec![0.0; u.len()];
    a.apply(u, &mut au);
    0.5 * dot(u, &au)
}

/// Solves `A u = F` with prescribed values, starting from `guess` if given.
pub fn solve_constrained<A: LinearOperator + ?Sized>(
    a: &A,
    bcs: &ResolvedBcs,
    precond: Option<&dyn Preconditioner>,
    guess: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<Solution, IgaError> {
    let op = Constrained {
        inner: a,
        fixed: &bcs.fixed,
    };
    let b = constrained_rhs(a, bcs);
    let mut u = match guess {
        Some(g) if g.len() == b.len() => g.to_vec(),
        _ => vec![0.0; b.len()],
    };
    for (ui, f) in u.iter_mut().zip(&bcs.fixed) {
        if let Some(v) = f {
            *ui = *v;
        }
    }
    let jacobi;
    let m: &dyn Preconditioner = match precond {
        Some(m) => m,
        None => {
            jacobi = Jacobi::new(&op);
            &jacobi
        }
    };
    let stats = pcg(&op, m, &b, &mut u, opts)?;
    let compliance = half_energy(a, &u);
    Ok(Solution {
        u,
        compliance,
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

/// Per-cell stiffness scale factors on a density grid of `level`:
/// `factors[cell][sub_index]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFactors {
    pub level: u32,
    pub factors: Vec<f64>,
}

impl CellFactors {
    pub fn uniform(num_cells: usize, level: u32, value: f64) -> Self {
        Self {
            level,
            factors: vec![value; num_cells << (3 * level)],
        }
    }

    pub fn per_cell(&self) -> usize {
        1 << (3 * self.level)
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let n = self.per_cell();
        &self.factors[c * n..(c + 1) * n]
    }
}

/// Analysis settings shared by the solve and the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub problem: Problem,
    pub material: Material,
    pub quad_order: usize,
    pub solver: SolverOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            problem: Problem::Elasticity,
            material: Material::default(),
            quad_order: 4,
            solver: SolverOptions::default(),
        }
    }
}

/// `Σ_i f_i K_i⁰` for one cell. Level 0 is `f·K⁰` with `K⁰` the element
/// stiffness, so single- and multi-resolution runs coincide there.
pub fn cell_matrix(
    vol: &BezierVolume,
    cfg: &AnalysisConfig,
    quad: &Quadrature,
    level: u32,
    factors: &[f64],
    cell: usize,
) -> Result<DMatrix<f64>, IgaError> {
    let ne = cfg.problem.element_dofs();
    let mut k = DMatrix::zeros(ne, ne);
    for (i, &f) in factors.iter().enumerate() {
        let bx = ParamBox::sub(level, sub_coords(level, i))?;
        let ks = box_stiffness(vol, cfg.problem, &cfg.material, quad, &bx, cell)?;
        k.zip_apply(&ks, |a, b| *a += f * b);
    }
    Ok(k)
}

/// Assembles `K(ρ)` as an element operator and solves.
pub fn assemble_and_solve(
    model: &SplineModel,
    factors: &CellFactors,
    cfg: &AnalysisConfig,
    bcs: &ResolvedBcs,
) -> Result<(ElementOperator, Solution), IgaError> {
    let dofs = DofMap::new(model, cfg.problem);
    let mut op = ElementOperator::new(dofs);
    let quad = Quadrature::gauss_legendre(cfg.quad_order);
    for c in 0..model.num_cells() {
        let k = cell_matrix(&model.volume(c), cfg, &quad, factors.level, factors.cell(c), c)?;
        op.set_element(c, &k);
    }
    let sol = solve_constrained(&op, bcs, None, None, &cfg.solver)?;
    Ok((op, sol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=8 {
            let q = Quadrature::gauss_legendre(n);
            assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for deg in 0..2 * n {
                let s: f64 = q
                    .points
                    .iter()
                    .zip(&q.weights)
                    .map(|(x, w)| w * libm::pow(*x, deg as f64))
                    .sum();
                assert!((s - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn lame_parameters() {
        let m = Material {
            e0: 1.0,
            nu: 0.3,
            ..Material::default()
        };
        assert!((m.lambda() - 0.576_923_076_923_077).abs() < 1e-15);
        assert!((m.mu() - 0.384_615_384_615_384_6).abs() < 1e-15);
        assert!(Material { nu: 0.5, ..m }.validate().is_err());
    }

    #[test]
    fn sub_index_roundtrip() {
        for level in 0..3 {
            for i in 0..1 << (3 * level) {
                assert_eq!(sub_index(level, sub_coords(level, i)), i);
            }
        }
        assert!(ParamBox::sub(1, [2, 0, 0]).is_err());
    }
}
