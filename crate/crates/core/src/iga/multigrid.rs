//! Geometric multigrid over the subdivision hierarchy.
//!
//! Child cell `8c + k` covers octant `k` of its parent in parameter space, so
//! a coarse cubic field restricted to a child is again a cubic whose Bézier
//! coefficients follow from de Casteljau splitting. The coarse spaces are
//! nested and every coarse operator is the Galerkin product `PᵀAP`, built
//! cell by cell from the finer element matrices. A trilinear space on the
//! coarsest mesh closes the hierarchy and is solved directly.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use super::cholesky::SparseCholesky;
use super::cholesky::partial_cholesky;
use super::kernels::packed_cholesky_solve;
use super::{
    element_apply, packed_len, packed_row, DofMap, ElementOperator, IgaError, LinearOperator, Preconditioner,
};
use crate::geometry::Point3;
use crate::hexmesh::{HexMesh, HEX_CORNERS};
use crate::spline::{slot_coords, SplineModel};

const HALF: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.5, 0.5, 0.0, 0.0],
    [0.25, 0.5, 0.25, 0.0],
    [0.125, 0.375, 0.375, 0.125],
];

/// Cubic coefficients on the half `side` of `[0, 1]` from those on `[0, 1]`.
fn half_split(side: usize, i: usize, j: usize) -> f64 {
    if side == 0 {
        HALF[i][j]
    } else {
        HALF[3 - i][3 - j]
    }
}

/// How the cells of one level map onto the next coarser level.
#[derive(Clone, Debug)]
pub struct Link {
    /// Node lists of the coarse cells.
    pub coarse_cells: Vec<Vec<usize>>,
    pub coarse_points: usize,
    /// Position of each coarse point, used to order the direct solve.
    pub coords: Vec<Point3>,
    /// Coarse cell and transfer kind of each fine cell.
    pub parent: Vec<(usize, usize)>,
    /// Scalar transfers, fine cell nodes × coarse cell nodes, per kind.
    pub kinds: Vec<DMatrix<f64>>,
}

impl Link {
    /// Fine level is the spline model of one subdivision step of `coarse`'s mesh.
    pub fn subdivision(coarse: &SplineModel) -> Self {
        let kinds = HEX_CORNERS
            .iter()
            .map(|bits| {
                DMatrix::from_fn(64, 64, |f, c| {
                    let (a, b) = (slot_coords(f), slot_coords(c));
                    (0..3).map(|d| half_split(bits[d], a[d], b[d])).product()
                })
            })
            .collect();
        let n = coarse.num_cells();
        Self {
            coarse_cells: coarse.cells.iter().map(|m| m.to_vec()).collect(),
            coarse_points: coarse.num_control_points(),
            coords: coarse.points.clone(),
            parent: (0..8 * n).map(|f| (f / 8, f % 8)).collect(),
            kinds,
        }
    }

    /// Trilinear fields on the mesh vertices, raised to cubic Bézier form.
    pub fn trilinear(mesh: &HexMesh) -> Self {
        let e = DMatrix::from_fn(64, 8, |s, k| {
            let a = slot_coords(s);
            (0..3)
                .map(|d| {
                    let t = a[d] as f64 / 3.0;
                    if HEX_CORNERS[k][d] == 1 {
                        t
                    } else {
                        1.0 - t
                    }
                })
                .product()
        });
        Self {
            coarse_cells: (0..mesh.num_cells()).map(|c| mesh.cell(c).to_vec()).collect(),
            coarse_points: mesh.num_vertices(),
            coords: (0..mesh.num_vertices()).map(|v| mesh.vertex(v)).collect(),
            parent: (0..mesh.num_cells()).map(|c| (c, 0)).collect(),
            kinds: vec![e],
        }
    }
}

/// Scalar prolongation rows, one per fine point.
#[derive(Clone, Debug)]
struct Prolongation {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Prolongation {
    fn new(fine: &DofMap, link: &Link) -> Self {
        let dpp = fine.dpp;
        let nodes = fine.ne / dpp;
        let mut owner = vec![None; fine.num_points];
        for c in 0..fine.num_cells() {
            for i in 0..nodes {
                let g = fine.cell(c)[i * dpp] as usize / dpp;
                owner[g].get_or_insert((c, i));
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for o in owner {
            if let Some((c, i)) = o {
                let (pc, kind) = link.parent[c];
                let t = &link.kinds[kind];
                for (j, &g) in link.coarse_cells[pc].iter().enumerate() {
                    let w = t[(i, j)];
                    if w != 0.0 {
                        cols.push(g as u32);
                        vals.push(w);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            row_ptr,
            cols,
            vals,
        }
    }

    /// `xf += P xc` on free fine dofs.
    fn prolong(&self, dpp: usize, free: &[bool], xc: &[f64], xf: &mut [f64]) {
        for i in 0..self.row_ptr.len() - 1 {
            for c in 0..dpp {
                let d = dpp * i + c;
                if !free[d] {
                    continue;
                }
                let mut s = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.vals[k] * xc[dpp * self.cols[k] as usize + c];
                }
                xf[d] += s;
            }
        }
    }

    /// `rc = Pᵀ r` over free fine dofs.
    fn restrict(&self, dpp: usize, free: &[bool], rf: &[f64], rc: &mut [f64]) {
        rc.fill(0.0);
        for i in 0..self.row_ptr.len() - 1 {
            for c in 0..dpp {
                let d = dpp * i + c;
                if !free[d] {
                    continue;
                }
                let r = rf[d];
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    rc[dpp * self.cols[k] as usize + c] += self.vals[k] * r;
                }
            }
        }
    }
}

/// Smoother and cycle parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultigridOptions {
    /// Chebyshev polynomial degree of each smoothing step.
    pub degree: usize,
    /// Ratio of the upper to the lower end of the smoothed spectrum.
    pub smoothing_range: f64,
    /// Lanczos steps for the largest eigenvalue of `M⁻¹A`.
    pub lanczos_steps: usize,
    pub smoother: SmootherKind,
}

/// Preconditioner `M` inside the Chebyshev smoother.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmootherKind {
    Jacobi,
    /// Additive Schwarz over the dofs of each cell.
    CellSchwarz,
}

impl Default for MultigridOptions {
    fn default() -> Self {
        Self {
            degree: 2,
            smoothing_range: 30.0,
            lanczos_steps: 12,
            smoother: SmootherKind::CellSchwarz,
        }
    }
}

#[derive(Clone, Debug)]
enum Smoother {
    Jacobi(Vec<f64>),
    /// Cholesky factors of the assembled operator restricted to each cell's
    /// dofs, packed lower columns.
    Schwarz(Vec<f32>),
}

impl Smoother {
    fn new<A: LinearOperator + ?Sized>(
        a: &A,
        op: &ElementOperator,
        fixed: &[bool],
        kind: SmootherKind,
    ) -> Result<Self, IgaError> {
        Ok(match kind {
            SmootherKind::Jacobi => Self::Jacobi(inverse_diagonal(a, fixed)),
            SmootherKind::CellSchwarz => {
                let mut builder = BlockBuilder::new(&op.dofs);
                let m = packed_len(op.dofs.ne);
                let mut out = vec![0.0f32; op.dofs.num_cells() * m];
                for (c, dst) in out.chunks_exact_mut(m).enumerate() {
                    builder.build(op, fixed, c, dst)?;
                }
                Self::Schwarz(out)
            }
        })
    }

    fn apply(&self, dofs: &DofMap, fixed: &[bool], r: &[f64], z: &mut [f64]) {
        match self {
            Self::Jacobi(d) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                    *zi = ri * di;
                }
            }
            Self::Schwarz(factors) => {
                let ne = dofs.ne;
                let m = packed_len(ne);
                z.fill(0.0);
                let mut y = vec![0.0f32; ne];
                for c in 0..dofs.num_cells() {
                    let cd = dofs.cell(c);
                    for (v, &d) in y.iter_mut().zip(cd) {
                        *v = r[d as usize] as f32;
                    }
                    packed_cholesky_solve(ne, &factors[c * m..(c + 1) * m], &mut y);
                    for (&v, &d) in y.iter().zip(cd) {
                        z[d as usize] += v as f64;
                    }
                }
                for ((zi, ri), &f) in z.iter_mut().zip(r).zip(fixed) {
                    if f {
                        *zi = *ri;
                    }
                }
            }
        }
    }
}

/// Factors the assembled constrained operator restricted to one cell's dofs.
#[derive(Clone, Debug)]
struct BlockBuilder {
    point_cells: Vec<Vec<u32>>,
    loc: Vec<u32>,
    seen: Vec<usize>,
    shared: Vec<(usize, usize)>,
    a: DMatrix<f64>,
}

impl BlockBuilder {
    fn new(dofs: &DofMap) -> Self {
        let (ne, dpp) = (dofs.ne, dofs.dpp);
        let nc = dofs.num_cells();
        let mut point_cells: Vec<Vec<u32>> = vec![Vec::new(); dofs.num_points];
        for c in 0..nc {
            for i in 0..ne / dpp {
                point_cells[dofs.cell(c)[i * dpp] as usize / dpp].push(c as u32);
            }
        }
        Self {
            point_cells,
            loc: vec![u32::MAX; dofs.ndof()],
            seen: vec![usize::MAX; nc],
            shared: Vec::with_capacity(ne),
            a: DMatrix::zeros(ne, ne),
        }
    }

    /// Cells sharing a control point with `c`, `c` included.
    fn neighbours(&self, dofs: &DofMap, c: usize, out: &mut Vec<usize>) {
        out.clear();
        for i in 0..dofs.ne / dofs.dpp {
            let p = dofs.cell(c)[i * dofs.dpp] as usize / dofs.dpp;
            out.extend(self.point_cells[p].iter().map(|&c2| c2 as usize));
        }
        out.sort_unstable();
        out.dedup();
    }

    /// Packed lower Cholesky columns of the block of cell `c`.
    fn build(&mut self, op: &ElementOperator, fixed: &[bool], c: usize, dst: &mut [f32]) -> Result<(), IgaError> {
        let dofs = &op.dofs;
        let (ne, dpp) = (dofs.ne, dofs.dpp);
        let cd = dofs.cell(c);
        for (i, &d) in cd.iter().enumerate() {
            self.loc[d as usize] = i as u32;
        }
        let a = &mut self.a;
        a.fill(0.0);
        for i in 0..ne / dpp {
            for &c2 in &self.point_cells[cd[i * dpp] as usize / dpp] {
                let c2 = c2 as usize;
                if self.seen[c2] == c {
                    continue;
                }
                self.seen[c2] = c;
                self.shared.clear();
                for (i2, &d) in dofs.cell(c2).iter().enumerate() {
                    if self.loc[d as usize] != u32::MAX {
                        self.shared.push((i2, self.loc[d as usize] as usize));
                    }
                }
                let k2 = op.element(c2);
                for (s, &(i2, li)) in self.shared.iter().enumerate() {
                    let row = &k2[packed_row(ne, i2) - i2..];
                    for &(j2, lj) in &self.shared[s..] {
                        let v = row[j2];
                        a[(li, lj)] += v;
                        if li != lj {
                            a[(lj, li)] += v;
                        }
                    }
                }
            }
        }
        for (i, &d) in cd.iter().enumerate() {
            self.loc[d as usize] = u32::MAX;
            if fixed[d as usize] {
                a.row_mut(i).fill(0.0);
                a.column_mut(i).fill(0.0);
                a[(i, i)] = 1.0;
            }
        }
        // the next call for the same cell must not skip its neighbours
        for v in self.seen.iter_mut().filter(|v| **v == c) {
            *v = usize::MAX;
        }
        partial_cholesky(a, ne)?;
        let mut o = 0;
        for j in 0..ne {
            for i in j..ne {
                dst[o] = a[(i, j)] as f32;
                o += 1;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Level {
    op: ElementOperator,
    link: Link,
    p: Prolongation,
    /// Free dofs of the next finer level.
    fine_free: Vec<bool>,
    fixed: Vec<bool>,
    smoother: Smoother,
    lmax: f64,
}

/// V-cycle preconditioner for a constrained element operator.
///
/// The fine level smooths with a single-precision copy of the operator; the
/// caller's operator is only read when the copy is refreshed.
#[derive(Clone, Debug)]
pub struct Multigrid {
    dofs: DofMap,
    fixed: Vec<bool>,
    fine32: Vec<f32>,
    smoother: Smoother,
    lmax: f64,
    levels: Vec<Level>,
    direct: Option<SparseCholesky>,
    opts: MultigridOptions,
    blocks: Option<BlockBuilder>,
    /// Fine cells changed since the last refresh.
    dirty: Vec<bool>,
}

fn masked<F: Fn(&[f64], &mut [f64])>(apply: F, fixed: &[bool], x: &[f64], y: &mut [f64]) {
    let mut xf = x.to_vec();
    for (v, &f) in xf.iter_mut().zip(fixed) {
        if f {
            *v = 0.0;
        }
    }
    apply(&xf, y);
    for ((yi, &f), xi) in y.iter_mut().zip(fixed).zip(x) {
        if f {
            *yi = *xi;
        }
    }
}

fn inverse_diagonal<A: LinearOperator + ?Sized>(a: &A, fixed: &[bool]) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .zip(fixed)
        .map(|(d, &f)| if f || !(d > 0.0) { 1.0 } else { 1.0 / d })
        .collect()
}

/// Largest eigenvalue of `M⁻¹A` from the Lanczos matrix of a short PCG run.
fn estimate_lmax(
    apply: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64], &mut [f64]),
    n: usize,
    steps: usize,
) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut r: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * libm::sin(i as f64 * 1.618)).collect();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    for _ in 0..steps.min(n) {
        apply(&p, &mut q);
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        if !(pq > 0.0) || !(rz > 0.0) {
            break;
        }
        let alpha = rz / pq;
        for i in 0..n {
            r[i] -= alpha * q[i];
        }
        precond(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        alphas.push(alpha);
        betas.push(beta);
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let m = alphas.len();
    if m == 0 {
        return 1.0;
    }
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0 / alphas[i] + if i > 0 { betas[i - 1] / alphas[i - 1] } else { 0.0 }
        } else if i + 1 == j {
            libm::sqrt(betas[i]) / alphas[i]
        } else if j + 1 == i {
            libm::sqrt(betas[j]) / alphas[j]
        } else {
            0.0
        }
    });
    let lmax = SymmetricEigen::try_new(t, 1e-14, 1000)
        .map(|e| e.eigenvalues.iter().copied().fold(f64::MIN, f64::max))
        .unwrap_or(2.0);
    // Lanczos approaches from below
    1.1 * lmax
}

/// Chebyshev iteration for `A x = b` on `M⁻¹A ∈ [lmax/range, lmax]`.
fn chebyshev(
    apply: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64], &mut [f64]),
    lmax: f64,
    opts: &MultigridOptions,
    b: &[f64],
    x: &mut [f64],
    zero_start: bool,
) {
    let n = b.len();
    let lmin = lmax / opts.smoothing_range;
    let theta = 0.5 * (lmax + lmin);
    let delta = 0.5 * (lmax - lmin);
    let sigma = theta / delta;
    let mut rho = 1.0 / sigma;
    let mut r = vec![0.0; n];
    if zero_start {
        r.copy_from_slice(b);
    } else {
        apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut d: Vec<f64> = z.iter().map(|v| v / theta).collect();
    let mut ad = vec![0.0; n];
    for k in 0..opts.degree.max(1) {
        for i in 0..n {
            x[i] += d[i];
        }
        if k + 1 >= opts.degree {
            break;
        }
        apply(&d, &mut ad);
        for i in 0..n {
            r[i] -= ad[i];
        }
        precond(&r, &mut z);
        let rho_new = 1.0 / (2.0 * sigma - rho);
        for i in 0..n {
            d[i] = rho_new * rho * d[i] + 2.0 * rho_new / delta * z[i];
        }
        rho = rho_new;
    }
}

/// `C += (T⊗I)ᵀ Z K Z (T⊗I)` with `Z` dropping constrained fine dofs;
/// `out` is packed.
fn galerkin_add(k: &DMatrix<f64>, dpp: usize, t: &DMatrix<f64>, free: &dyn Fn(usize) -> bool, out: &mut [f64]) {
    let ne = k.nrows();
    let nc = t.ncols() * dpp;
    let mut tf = DMatrix::zeros(ne, nc);
    for i in 0..t.nrows() {
        for c in 0..dpp {
            if !free(i * dpp + c) {
                continue;
            }
            for j in 0..t.ncols() {
                tf[(i * dpp + c, j * dpp + c)] = t[(i, j)];
            }
        }
    }
    let kt = k * &tf;
    let ck = tf.transpose() * kt;
    let mut o = 0;
    for i in 0..nc {
        for j in i..nc {
            out[o] += ck[(i, j)];
            o += 1;
        }
    }
}

fn add_child(op: &mut ElementOperator, fine_dofs: &DofMap, fine_free: &[bool], link: &Link, f: usize, k: &DMatrix<f64>) {
    let (pc, kind) = link.parent[f];
    let cd = fine_dofs.cell(f);
    let free = |i: usize| fine_free[cd[i] as usize];
    galerkin_add(k, fine_dofs.dpp, &link.kinds[kind], &free, op.element_mut(pc));
}

fn coarse_operator(fine: &ElementOperator, fine_free: &[bool], link: &Link) -> ElementOperator {
    let dofs = DofMap::from_cells(fine.dofs.dpp, link.coarse_points, &link.coarse_cells);
    let mut op = ElementOperator::new(dofs);
    for f in 0..fine.dofs.num_cells() {
        add_child(&mut op, &fine.dofs, fine_free, link, f, &fine.element_matrix(f));
    }
    op
}

fn coarse_fixed(p: &Prolongation, dpp: usize, fine_free: &[bool], n: usize) -> Vec<bool> {
    let ones: Vec<f64> = fine_free.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let mut rc = vec![0.0; n];
    p.restrict(dpp, fine_free, &ones, &mut rc);
    rc.iter().map(|&v| v == 0.0).collect()
}

impl Multigrid {
    /// `links` run from the fine level towards the coarsest; `fixed` marks
    /// the constrained fine dofs.
    pub fn new(
        fine: &ElementOperator,
        fixed: &[bool],
        links: Vec<Link>,
        opts: MultigridOptions,
    ) -> Result<Self, IgaError> {
        if fixed.len() != fine.dim() {
            return Err(IgaError::SizeMismatch {
                expected: fine.dim(),
                got: fixed.len(),
            });
        }
        let dpp = fine.dofs.dpp;
        let mut levels: Vec<Level> = Vec::with_capacity(links.len());
        for link in links {
            let (finer_op, finer_fixed) = match levels.last() {
                Some(l) => (&l.op, l.fixed.as_slice()),
                None => (fine, fixed),
            };
            let fine_free: Vec<bool> = finer_fixed.iter().map(|f| !f).collect();
            let p = Prolongation::new(&finer_op.dofs, &link);
            let op = coarse_operator(finer_op, &fine_free, &link);
            let fixed = coarse_fixed(&p, dpp, &fine_free, op.dim());
            levels.push(Level {
                op,
                link,
                p,
                fine_free,
                fixed,
                smoother: Smoother::Jacobi(Vec::new()),
                lmax: 0.0,
            });
        }
        let direct = match levels.last() {
            Some(l) => Some(SparseCholesky::analyse(&l.op.dofs, &l.link.coords, &l.fixed)?),
            None => None,
        };
        let mut mg = Self {
            dofs: fine.dofs.clone(),
            fixed: fixed.to_vec(),
            fine32: fine.mats.iter().map(|&v| v as f32).collect(),
            smoother: Smoother::Jacobi(Vec::new()),
            lmax: 0.0,
            levels,
            direct,
            opts,
            blocks: None,
            dirty: vec![false; fine.dofs.num_cells()],
        };
        mg.finish(fine, true)?;
        Ok(mg)
    }

    pub fn num_levels(&self) -> usize {
        1 + self.levels.len()
    }

    /// Dofs per level, finest first.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.fixed.len()];
        v.extend(self.levels.iter().map(|l| l.op.dim()));
        v
    }

    /// Records that fine element `cell` changed by `delta`; `fine` already
    /// holds the new matrix. Takes effect at the next [`Multigrid::refresh`].
    pub fn update_fine_cell(&mut self, fine: &ElementOperator, cell: usize, delta: &DMatrix<f64>) {
        let m = packed_len(self.dofs.ne);
        for (d, &s) in self.fine32[cell * m..(cell + 1) * m].iter_mut().zip(fine.element(cell)) {
            *d = s as f32;
        }
        self.dirty[cell] = true;
        if let Some(l) = self.levels.first_mut() {
            add_child(&mut l.op, &self.dofs, &l.fine_free, &l.link, cell, delta);
        }
    }

    /// Rebuilds the coarse levels below the first, the smoothers and the
    /// direct factorisation. The fine eigenvalue bound is re-estimated only
    /// when `estimate_fine` is set.
    pub fn refresh(&mut self, fine: &ElementOperator, estimate_fine: bool) -> Result<(), IgaError> {
        for i in 1..self.levels.len() {
            let (head, tail) = self.levels.split_at_mut(i);
            let l = &mut tail[0];
            l.op = coarse_operator(&head[i - 1].op, &l.fine_free, &l.link);
        }
        self.finish(fine, estimate_fine)
    }

    fn finish(&mut self, fine: &ElementOperator, estimate_fine: bool) -> Result<(), IgaError> {
        let kind = self.opts.smoother;
        self.refresh_fine_smoother(fine)?;
        if estimate_fine || self.lmax <= 0.0 {
            let (fixed, sm, dofs, k32) = (&self.fixed, &self.smoother, &self.dofs, &self.fine32);
            self.lmax = estimate_lmax(
                &|x, y| masked(|x, y| element_apply(dofs, k32, x, y), fixed, x, y),
                &|r, z| sm.apply(dofs, fixed, r, z),
                dofs.ndof(),
                self.opts.lanczos_steps,
            );
        }
        let n = self.levels.len();
        for l in self.levels.iter_mut().take(n.saturating_sub(1)) {
            l.smoother = Smoother::new(&l.op, &l.op, &l.fixed, kind)?;
            let (op, fixed, sm) = (&l.op, &l.fixed, &l.smoother);
            l.lmax = estimate_lmax(
                &|x, y| masked(|x, y| op.apply(x, y), fixed, x, y),
                &|r, z| sm.apply(&op.dofs, fixed, r, z),
                op.dim(),
                3 * self.opts.lanczos_steps,
            );
        }
        if let (Some(d), Some(l)) = (self.direct.as_mut(), self.levels.last()) {
            d.factor(&l.op)?;
        }
        Ok(())
    }

    fn refresh_fine_smoother(&mut self, fine: &ElementOperator) -> Result<(), IgaError> {
        let m = packed_len(self.dofs.ne);
        match (&mut self.smoother, self.opts.smoother) {
            (Smoother::Schwarz(factors), SmootherKind::CellSchwarz) if factors.len() == self.dofs.num_cells() * m => {
                let builder = self.blocks.get_or_insert_with(|| BlockBuilder::new(&self.dofs));
                let mut todo = vec![false; self.dirty.len()];
                let mut nb = Vec::new();
                for c in (0..self.dirty.len()).filter(|&c| self.dirty[c]) {
                    builder.neighbours(&self.dofs, c, &mut nb);
                    for &c2 in &nb {
                        todo[c2] = true;
                    }
                }
                for c in (0..todo.len()).filter(|&c| todo[c]) {
                    builder.build(fine, &self.fixed, c, &mut factors[c * m..(c + 1) * m])?;
                }
            }
            _ => self.smoother = Smoother::new(fine, fine, &self.fixed, self.opts.smoother)?,
        }
        self.dirty.fill(false);
        Ok(())
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        if level > 0 && level == self.levels.len() {
            if let Some(d) = &self.direct {
                d.solve(b, x);
            }
            return;
        }
        let (sm, lmax, fixed, dofs) = if level == 0 {
            (&self.smoother, self.lmax, &self.fixed, &self.dofs)
        } else {
            let l = &self.levels[level - 1];
            (&l.smoother, l.lmax, &l.fixed, &l.op.dofs)
        };
        let apply = |x: &[f64], y: &mut [f64]| {
            if level == 0 {
                masked(|x, y| element_apply(&self.dofs, &self.fine32, x, y), fixed, x, y)
            } else {
                masked(|x, y| self.levels[level - 1].op.apply(x, y), fixed, x, y)
            }
        };
        let precond = |r: &[f64], z: &mut [f64]| sm.apply(dofs, fixed, r, z);
        chebyshev(&apply, &precond, lmax, &self.opts, b, x, true);
        if let Some(next) = self.levels.get(level) {
            let mut r = vec![0.0; b.len()];
            apply(x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let nc = next.op.dim();
            let mut rc = vec![0.0; nc];
            next.p.restrict(self.dofs.dpp, &next.fine_free, &r, &mut rc);
            let mut xc = vec![0.0; nc];
            self.cycle(level + 1, &rc, &mut xc);
            next.p.prolong(self.dofs.dpp, &next.fine_free, &xc, x);
            chebyshev(&apply, &precond, lmax, &self.opts, b, x, false);
        }
    }
}

impl Preconditioner for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexmesh::lattice;
    use crate::iga::{cell_matrix, AnalysisConfig, Quadrature};
    use crate::spline::build_spline_model;
    use crate::subdivision::subdivide;

    fn operator(model: &SplineModel) -> ElementOperator {
        let cfg = AnalysisConfig::default();
        let quad = Quadrature::gauss_legendre(4);
        let mut op = ElementOperator::new(DofMap::new(model, cfg.problem));
        for c in 0..model.num_cells() {
            let k = cell_matrix(&model.volume(c), &cfg, &quad, 0, &[1.0], c).unwrap();
            op.set_element(c, &k);
        }
        op
    }

    fn check_galerkin(fine: &ElementOperator, link: &Link) {
        let free = vec![true; fine.dim()];
        let p = Prolongation::new(&fine.dofs, link);
        let coarse = coarse_operator(fine, &free, link);
        let nc = coarse.dim();
        let xc: Vec<f64> = (0..nc).map(|i| libm::sin(i as f64 * 0.7)).collect();
        let yc: Vec<f64> = (0..nc).map(|i| libm::cos(i as f64 * 1.3)).collect();
        let mut xf = vec![0.0; fine.dim()];
        let mut yf = vec![0.0; fine.dim()];
        p.prolong(3, &free, &xc, &mut xf);
        p.prolong(3, &free, &yc, &mut yf);
        let mut ay = vec![0.0; fine.dim()];
        fine.apply(&yf, &mut ay);
        let fine_form: f64 = xf.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let mut ayc = vec![0.0; nc];
        coarse.apply(&yc, &mut ayc);
        let coarse_form: f64 = xc.iter().zip(&ayc).map(|(a, b)| a * b).sum();
        assert!((fine_form - coarse_form).abs() < 1e-10 * fine_form.abs().max(1.0), "{fine_form} {coarse_form}");
    }

    #[test]
    fn galerkin_products_match_prolongated_forms() {
        let m0 = lattice(2, 1, 1, [1.0; 3]);
        let m1 = subdivide(&m0).unwrap().0;
        let fine = operator(&build_spline_model(&m1).unwrap());
        check_galerkin(&fine, &Link::subdivision(&build_spline_model(&m0).unwrap()));
        check_galerkin(&fine, &Link::trilinear(&m1));
    }

    #[test]
    fn prolongated_fields_are_continuous() {
        // every fine cell sees the coarse polynomial restricted to its octant
        let m0 = lattice(2, 1, 1, [1.0; 3]);
        let m1 = subdivide(&m0).unwrap().0;
        let coarse = build_spline_model(&m0).unwrap();
        let fine = build_spline_model(&m1).unwrap();
        let link = Link::subdivision(&coarse);
        let dofs = DofMap::new(&fine, crate::iga::Problem::Heat);
        let p = Prolongation::new(&dofs, &link);
        let xc: Vec<f64> = (0..coarse.num_control_points()).map(|i| libm::sin(i as f64)).collect();
        let mut xf = vec![0.0; fine.num_control_points()];
        p.prolong(1, &vec![true; xf.len()], &xc, &mut xf);
        for f in 0..fine.num_cells() {
            let (pc, k) = link.parent[f];
            for s in 0..64 {
                let want: f64 = (0..64).map(|j| link.kinds[k][(s, j)] * xc[coarse.cells[pc][j]]).sum();
                assert!((xf[fine.cells[f][s]] - want).abs() < 1e-12);
            }
        }
    }
}
