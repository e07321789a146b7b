//! Supernodal multifrontal Cholesky over element matrices.
//!
//! Points are ordered by geometric nested dissection; every separator and
//! every leaf becomes one dense front. Element matrices are assembled into
//! the front that eliminates their first free dof, and the partial
//! factorisation of each front runs on blocked dense kernels.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{DofMap, ElementOperator, IgaError, LinearOperator, Preconditioner};
use crate::geometry::Point3;

const LEAF_POINTS: usize = 96;
const BLOCK: usize = 64;
const NONE: u32 = u32::MAX;

#[derive(Clone, Debug)]
struct Node {
    /// Eliminated variables `first..end`.
    first: usize,
    end: usize,
    /// Later variables coupled to this subtree, ascending.
    boundary: Vec<u32>,
    children: Vec<usize>,
    elements: Vec<u32>,
}

impl Node {
    fn front(&self) -> usize {
        self.end - self.first + self.boundary.len()
    }
}

struct Dissector<'a> {
    adj: &'a [Vec<u32>],
    coords: &'a [Point3],
    side: Vec<u8>,
    order: Vec<u32>,
    parts: Vec<(usize, usize, Vec<usize>)>,
}

impl Dissector<'_> {
    /// Returns the index of the part created for `pts`; children first.
    fn dissect(&mut self, mut pts: Vec<u32>) -> usize {
        if pts.len() <= LEAF_POINTS {
            return self.push(pts, Vec::new());
        }
        let n = pts.len();
        let mut best: Option<(usize, Vec<u32>, Vec<u32>, Vec<u32>)> = None;
        for axis in 0..3 {
            pts.sort_by(|&a, &b| {
                self.coords[a as usize][axis]
                    .total_cmp(&self.coords[b as usize][axis])
                    .then(a.cmp(&b))
            });
            let key = |i: usize| self.coords[pts[i] as usize][axis];
            let mut cuts: Vec<usize> = (n * 3 / 10..=n * 7 / 10)
                .filter(|&i| i > 0 && i < n && key(i) > key(i - 1))
                .collect();
            if cuts.len() > 24 {
                let step = cuts.len() as f64 / 24.0;
                cuts = (0..24).map(|i| cuts[(i as f64 * step) as usize]).collect();
            }
            for &cut in &cuts {
                let (sep, a, b) = self.split(&pts, cut);
                let score = sep.len() * n + (a.len() as isize - b.len() as isize).unsigned_abs();
                if best.as_ref().map_or(true, |b| score < b.0) {
                    best = Some((score, sep, a, b));
                }
            }
        }
        let Some((_, sep, a, b)) = best else {
            return self.push(pts, Vec::new());
        };
        if a.is_empty() || b.is_empty() {
            return self.push(pts, Vec::new());
        }
        let ca = self.dissect(a);
        let cb = self.dissect(b);
        self.push(sep, vec![ca, cb])
    }

    /// Cut the sorted points at `cut`, keeping the smaller one-sided separator.
    fn split(&mut self, pts: &[u32], cut: usize) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        for (i, &p) in pts.iter().enumerate() {
            self.side[p as usize] = if i < cut { 1 } else { 2 };
        }
        let touches = |p: u32, other: u8, side: &[u8]| self.adj[p as usize].iter().any(|&q| side[q as usize] == other);
        let s_low: Vec<u32> = pts[..cut].iter().copied().filter(|&p| touches(p, 2, &self.side)).collect();
        let s_high: Vec<u32> = pts[cut..].iter().copied().filter(|&p| touches(p, 1, &self.side)).collect();
        let sep = if s_high.len() <= s_low.len() { s_high } else { s_low };
        for &p in &sep {
            self.side[p as usize] = 3;
        }
        let a = pts[..cut].iter().copied().filter(|&p| self.side[p as usize] == 1).collect();
        let b = pts[cut..].iter().copied().filter(|&p| self.side[p as usize] == 2).collect();
        let result = (sep, a, b);
        for &p in pts {
            self.side[p as usize] = 0;
        }
        result
    }

    fn push(&mut self, pts: Vec<u32>, children: Vec<usize>) -> usize {
        let first = self.order.len();
        self.order.extend_from_slice(&pts);
        self.parts.push((first, self.order.len(), children));
        self.parts.len() - 1
    }
}

/// Sparse `LLᵀ` of the free-free block of an element operator.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    ndof: usize,
    /// Elimination index of each dof, `NONE` for constrained dofs.
    var_of_dof: Vec<u32>,
    dof_of_var: Vec<u32>,
    nodes: Vec<Node>,
    /// Per node, `front × (end − first)` column-major `[L11; L21]`.
    panels: Vec<Vec<f64>>,
    factored: bool,
}

impl SparseCholesky {
    /// Symbolic analysis. `coords` gives a position per control point and
    /// `fixed` marks dofs that are eliminated by prescribed values.
    pub fn analyse(dofs: &DofMap, coords: &[Point3], fixed: &[bool]) -> Result<Self, IgaError> {
        let dpp = dofs.dpp;
        let np = dofs.num_points;
        if coords.len() != np {
            return Err(IgaError::SizeMismatch {
                expected: np,
                got: coords.len(),
            });
        }
        if fixed.len() != dofs.ndof() {
            return Err(IgaError::SizeMismatch {
                expected: dofs.ndof(),
                got: fixed.len(),
            });
        }
        let nodes_per_cell = dofs.ne / dpp.max(1);
        let cell_points = |c: usize| (0..nodes_per_cell).map(move |i| dofs.cell(c)[i * dpp] / dpp as u32);
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); np];
        for c in 0..dofs.num_cells() {
            for p in cell_points(c) {
                adj[p as usize].extend(cell_points(c).filter(|&q| q != p));
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let mut dis = Dissector {
            adj: &adj,
            coords,
            side: vec![0; np],
            order: Vec::with_capacity(np),
            parts: Vec::new(),
        };
        let used: Vec<u32> = (0..np as u32).filter(|&p| !adj[p as usize].is_empty()).collect();
        if !used.is_empty() {
            dis.dissect(used);
        }
        let Dissector { order, parts, .. } = dis;

        // number free dofs point by point in dissection order
        let mut var_of_dof = vec![NONE; dofs.ndof()];
        let mut dof_of_var = Vec::new();
        let mut point_range = Vec::with_capacity(order.len() + 1);
        point_range.push(0usize);
        for &p in &order {
            for c in 0..dpp {
                let d = p as usize * dpp + c;
                if !fixed[d] {
                    var_of_dof[d] = dof_of_var.len() as u32;
                    dof_of_var.push(d as u32);
                }
            }
            point_range.push(dof_of_var.len());
        }
        let nvar = dof_of_var.len();

        let mut nodes: Vec<Node> = parts
            .iter()
            .map(|(a, b, ch)| Node {
                first: point_range[*a],
                end: point_range[*b],
                boundary: Vec::new(),
                children: ch.clone(),
                elements: Vec::new(),
            })
            .collect();
        let mut node_of_var = vec![0u32; nvar];
        for (t, n) in nodes.iter().enumerate() {
            for v in n.first..n.end {
                node_of_var[v] = t as u32;
            }
        }
        let mut mark = vec![NONE; nvar];
        for t in 0..nodes.len() {
            let end = nodes[t].end;
            let mut b: Vec<u32> = Vec::new();
            let (pa, pb, _) = &parts[t];
            for &p in &order[*pa..*pb] {
                for &q in adj[p as usize].iter() {
                    for c in 0..dpp {
                        let v = var_of_dof[q as usize * dpp + c];
                        if v != NONE && v as usize >= end && mark[v as usize] != t as u32 {
                            mark[v as usize] = t as u32;
                            b.push(v);
                        }
                    }
                }
            }
            for ci in 0..nodes[t].children.len() {
                let ch = nodes[t].children[ci];
                for &v in &nodes[ch].boundary {
                    if v as usize >= end && mark[v as usize] != t as u32 {
                        mark[v as usize] = t as u32;
                        b.push(v);
                    }
                }
            }
            b.sort_unstable();
            nodes[t].boundary = b;
        }
        for c in 0..dofs.num_cells() {
            let first = dofs
                .cell(c)
                .iter()
                .map(|&d| var_of_dof[d as usize])
                .filter(|&v| v != NONE)
                .min();
            if let Some(v) = first {
                nodes[node_of_var[v as usize] as usize].elements.push(c as u32);
            }
        }
        Ok(Self {
            ndof: dofs.ndof(),
            var_of_dof,
            dof_of_var,
            panels: vec![Vec::new(); nodes.len()],
            nodes,
            factored: false,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.dof_of_var.len()
    }

    /// Stored factor entries.
    pub fn factor_size(&self) -> usize {
        self.nodes.iter().map(|n| n.front() * (n.end - n.first)).sum()
    }

    #[doc(hidden)]
    pub fn front_stats(&self) -> Vec<(usize, usize)> {
        self.nodes.iter().map(|n| (n.end - n.first, n.boundary.len())).collect()
    }

    /// Dense work estimate of one factorisation.
    pub fn flop_estimate(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| {
                let k = (n.end - n.first) as f64;
                let b = n.boundary.len() as f64;
                k * k * k / 3.0 + k * k * b + k * b * b
            })
            .sum()
    }

    /// Numeric factorisation of the free-free block of `op`.
    pub fn factor(&mut self, op: &ElementOperator) -> Result<(), IgaError> {
        if op.dim() != self.ndof {
            return Err(IgaError::SizeMismatch {
                expected: self.ndof,
                got: op.dim(),
            });
        }
        self.factored = false;
        let ne = op.dofs.ne;
        let mut pos = vec![NONE; self.num_vars()];
        let mut updates: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        let mut local = vec![NONE; ne];
        for t in 0..self.nodes.len() {
            let node = &self.nodes[t];
            let k = node.end - node.first;
            let f = node.front();
            for v in node.first..node.end {
                pos[v] = (v - node.first) as u32;
            }
            for (i, &v) in node.boundary.iter().enumerate() {
                pos[v as usize] = (k + i) as u32;
            }
            let mut front = DMatrix::<f64>::zeros(f, f);
            for &e in &node.elements {
                let cd = op.dofs.cell(e as usize);
                for (l, &d) in local.iter_mut().zip(cd) {
                    let v = self.var_of_dof[d as usize];
                    *l = if v == NONE { NONE } else { pos[v as usize] };
                }
                let km = op.element(e as usize);
                let mut o = 0;
                for i in 0..ne {
                    let li = local[i];
                    let row = &km[o..o + ne - i];
                    o += ne - i;
                    if li == NONE {
                        continue;
                    }
                    for (jj, &kv) in row.iter().enumerate() {
                        let lj = local[i + jj];
                        if lj == NONE {
                            continue;
                        }
                        let (r, c) = if li >= lj { (li, lj) } else { (lj, li) };
                        front[(r as usize, c as usize)] += kv;
                    }
                }
            }
            for &ch in &node.children {
                if let Some(u) = updates[ch].take() {
                    let rows: Vec<usize> = self.nodes[ch].boundary.iter().map(|&v| pos[v as usize] as usize).collect();
                    for (j, &pj) in rows.iter().enumerate() {
                        let col = &mut front.as_mut_slice()[pj * f..(pj + 1) * f];
                        for i in j..rows.len() {
                            col[rows[i]] += u[(i, j)];
                        }
                    }
                }
            }
            partial_cholesky(&mut front, k)?;
            self.panels[t] = front.columns(0, k).iter().copied().collect();
            if f > k {
                updates[t] = Some(front.view((k, k), (f - k, f - k)).clone_owned());
            }
            for v in node.first..node.end {
                pos[v] = NONE;
            }
            for &v in &node.boundary {
                pos[v as usize] = NONE;
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A_ff x_f = b_f`; constrained dofs are copied from `b`.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let mut y: Vec<f64> = self.dof_of_var.iter().map(|&d| b[d as usize]).collect();
        for (t, node) in self.nodes.iter().enumerate() {
            let k = node.end - node.first;
            let f = node.front();
            let l = &self.panels[t];
            for j in 0..k {
                let col = &l[j * f..(j + 1) * f];
                let yj = y[node.first + j] / col[j];
                y[node.first + j] = yj;
                for i in j + 1..k {
                    y[node.first + i] -= col[i] * yj;
                }
                for (i, &v) in node.boundary.iter().enumerate() {
                    y[v as usize] -= col[k + i] * yj;
                }
            }
        }
        for (t, node) in self.nodes.iter().enumerate().rev() {
            let k = node.end - node.first;
            let f = node.front();
            let l = &self.panels[t];
            for j in (0..k).rev() {
                let col = &l[j * f..(j + 1) * f];
                let mut s = y[node.first + j];
                for i in j + 1..k {
                    s -= col[i] * y[node.first + i];
                }
                for (i, &v) in node.boundary.iter().enumerate() {
                    s -= col[k + i] * y[v as usize];
                }
                y[node.first + j] = s / col[j];
            }
        }
        x.copy_from_slice(b);
        for (&d, &v) in self.dof_of_var.iter().zip(&y) {
            x[d as usize] = v;
        }
    }
}

impl Preconditioner for SparseCholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve(r, z);
    }
}

/// Eliminates the first `k` columns of the lower triangle of `a` in place,
/// leaving the Schur complement in the trailing block.
pub(crate) fn partial_cholesky(a: &mut DMatrix<f64>, k: usize) -> Result<(), IgaError> {
    let n = a.nrows();
    let mut jb = 0;
    while jb < k {
        let b = BLOCK.min(k - jb);
        for j in jb..jb + b {
            let mut d = a[(j, j)];
            for m in jb..j {
                d -= a[(j, m)] * a[(j, m)];
            }
            if !(d > 0.0) {
                return Err(IgaError::Breakdown(d));
            }
            let d = libm::sqrt(d);
            a[(j, j)] = d;
            for i in j + 1..jb + b {
                let mut s = a[(i, j)];
                for m in jb..j {
                    s -= a[(i, m)] * a[(j, m)];
                }
                a[(i, j)] = s / d;
            }
        }
        let r0 = jb + b;
        if r0 < n {
            let linv = lower_inverse(&a.view((jb, jb), (b, b)).clone_owned());
            let panel = a.view((r0, jb), (n - r0, b)).clone_owned();
            let x = panel * linv.transpose();
            a.view_mut((r0, jb), (n - r0, b)).copy_from(&x);
            let mut cb = r0;
            while cb < n {
                let w = BLOCK.min(n - cb);
                let xr = x.rows(cb - r0, n - cb);
                let xc = x.rows(cb - r0, w).transpose();
                a.view_mut((cb, cb), (n - cb, w)).gemm(-1.0, &xr, &xc, 1.0);
                cb += w;
            }
        }
        jb += b;
    }
    Ok(())
}

fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in j + 1..n {
            let mut s = 0.0;
            for m in j..i {
                s -= l[(i, m)] * inv[(m, j)];
            }
            inv[(i, j)] = s / l[(i, i)];
        }
    }
    inv
}
