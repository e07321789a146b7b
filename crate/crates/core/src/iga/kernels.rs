//! Dense kernels on packed triangular storage. Rows (or columns) are handled
//! four at a time so every load of `x` and `y` serves four matrix rows.

use core::ops::{Add, AddAssign, Div, DivAssign, Mul, Sub, SubAssign};

/// Rows handled together.
const PANEL: usize = 4;

/// Storage and arithmetic type of the kernels.
pub(crate) trait Real:
    Copy
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + AddAssign
    + SubAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// `y += Kx` for a symmetric `K` stored as packed upper rows.
pub(crate) fn packed_symv<T: Real>(n: usize, k: &[T], x: &[T], y: &mut [T]) {
    let row = |j: usize| j * (2 * n + 1 - j) / 2;
    let mut j = 0;
    while j + PANEL <= n {
        let o = [row(j), row(j + 1), row(j + 2), row(j + 3)];
        for a in 0..PANEL {
            let ja = j + a;
            let ra = &k[o[a]..];
            y[ja] += ra[0] * x[ja];
            for b in a + 1..PANEL {
                let v = ra[b - a];
                y[ja] += v * x[j + b];
                y[j + b] += v * x[ja];
            }
        }
        let xs = [x[j], x[j + 1], x[j + 2], x[j + 3]];
        let len = n - j - PANEL;
        let r0 = &k[o[0] + 4..o[0] + 4 + len];
        let r1 = &k[o[1] + 3..o[1] + 3 + len];
        let r2 = &k[o[2] + 2..o[2] + 2 + len];
        let r3 = &k[o[3] + 1..o[3] + 1 + len];
        let xt = &x[j + PANEL..n];
        let yt = &mut y[j + PANEL..n];
        let mut acc = [[T::default(); 4]; 4];
        let mut i = 0;
        while i + 4 <= len {
            for l in 0..4 {
                let (a0, a1, a2, a3) = (r0[i + l], r1[i + l], r2[i + l], r3[i + l]);
                let xi = xt[i + l];
                acc[0][l] += a0 * xi;
                acc[1][l] += a1 * xi;
                acc[2][l] += a2 * xi;
                acc[3][l] += a3 * xi;
                yt[i + l] += a0 * xs[0] + a1 * xs[1] + a2 * xs[2] + a3 * xs[3];
            }
            i += 4;
        }
        let mut s = acc.map(|q| (q[0] + q[1]) + (q[2] + q[3]));
        while i < len {
            let (a0, a1, a2, a3) = (r0[i], r1[i], r2[i], r3[i]);
            let xi = xt[i];
            s[0] += a0 * xi;
            s[1] += a1 * xi;
            s[2] += a2 * xi;
            s[3] += a3 * xi;
            yt[i] += a0 * xs[0] + a1 * xs[1] + a2 * xs[2] + a3 * xs[3];
            i += 1;
        }
        for (q, v) in s.iter().enumerate() {
            y[j + q] += *v;
        }
        j += PANEL;
    }
    while j < n {
        let r = &k[row(j)..row(j) + n - j];
        let xj = x[j];
        let mut s = r[0] * xj;
        for i in 1..n - j {
            let v = r[i];
            s += v * x[j + i];
            y[j + i] += v * xj;
        }
        y[j] += s;
        j += 1;
    }
}

/// Solves `LLᵀ y = b` in place for `L` stored as packed lower columns.
pub(crate) fn packed_cholesky_solve<T: Real>(n: usize, l: &[T], y: &mut [T]) {
    let col = |j: usize| j * (2 * n + 1 - j) / 2;
    let full = n - n % PANEL;
    // forward: L z = b
    let mut j = 0;
    while j < full {
        let o = [col(j), col(j + 1), col(j + 2), col(j + 3)];
        for a in 0..PANEL {
            let ca = &l[o[a]..];
            y[j + a] /= ca[0];
            let ya = y[j + a];
            for b in a + 1..PANEL {
                y[j + b] -= ya * ca[b - a];
            }
        }
        let ys = [y[j], y[j + 1], y[j + 2], y[j + 3]];
        let len = n - j - PANEL;
        let c0 = &l[o[0] + 4..o[0] + 4 + len];
        let c1 = &l[o[1] + 3..o[1] + 3 + len];
        let c2 = &l[o[2] + 2..o[2] + 2 + len];
        let c3 = &l[o[3] + 1..o[3] + 1 + len];
        for (i, yi) in y[j + PANEL..n].iter_mut().enumerate() {
            *yi -= c0[i] * ys[0] + c1[i] * ys[1] + c2[i] * ys[2] + c3[i] * ys[3];
        }
        j += PANEL;
    }
    for j in full..n {
        let c = &l[col(j)..col(j) + n - j];
        y[j] /= c[0];
        let yj = y[j];
        for i in 1..n - j {
            y[j + i] -= yj * c[i];
        }
    }
    // backward: Lᵀ y = z
    for j in (full..n).rev() {
        let c = &l[col(j)..col(j) + n - j];
        let mut s = y[j];
        for i in 1..n - j {
            s -= c[i] * y[j + i];
        }
        y[j] = s / c[0];
    }
    let mut j = full;
    while j >= PANEL {
        j -= PANEL;
        let o = [col(j), col(j + 1), col(j + 2), col(j + 3)];
        let len = n - j - PANEL;
        let c0 = &l[o[0] + 4..o[0] + 4 + len];
        let c1 = &l[o[1] + 3..o[1] + 3 + len];
        let c2 = &l[o[2] + 2..o[2] + 2 + len];
        let c3 = &l[o[3] + 1..o[3] + 1 + len];
        let yt = &y[j + PANEL..n];
        let mut acc = [[T::default(); 4]; 4];
        let mut i = 0;
        while i + 4 <= len {
            for q in 0..4 {
                let yi = yt[i + q];
                acc[0][q] += c0[i + q] * yi;
                acc[1][q] += c1[i + q] * yi;
                acc[2][q] += c2[i + q] * yi;
                acc[3][q] += c3[i + q] * yi;
            }
            i += 4;
        }
        let mut s = acc.map(|q| (q[0] + q[1]) + (q[2] + q[3]));
        while i < len {
            let yi = yt[i];
            s[0] += c0[i] * yi;
            s[1] += c1[i] * yi;
            s[2] += c2[i] * yi;
            s[3] += c3[i] * yi;
            i += 1;
        }
        for a in (0..PANEL).rev() {
            let ca = &l[o[a]..];
            let mut v = y[j + a] - s[a];
            for b in a + 1..PANEL {
                v -= ca[b - a] * y[j + b];
            }
            y[j + a] = v / ca[0];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn spd(n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |i, j| libm::sin((3 * i + 7 * j) as f64 + 0.5));
        &b * b.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn packed_symv_matches_dense() {
        for n in [1, 3, 4, 7, 12, 13] {
            let k = spd(n);
            let mut p = alloc::vec![0.0; n * (n + 1) / 2];
            crate::iga::pack_upper(&k, &mut p);
            let x: alloc::vec::Vec<f64> = (0..n).map(|i| libm::cos(i as f64)).collect();
            let mut y = alloc::vec![0.0; n];
            packed_symv(n, &p, &x, &mut y);
            let want = &k * nalgebra::DVector::from_column_slice(&x);
            for i in 0..n {
                assert!((y[i] - want[i]).abs() < 1e-10 * want.amax(), "n={n}");
            }
        }
    }

    #[test]
    fn packed_cholesky_solve_inverts() {
        for n in [1, 3, 4, 7, 12, 13] {
            let k = spd(n);
            let l = k.clone().cholesky().expect("spd").l();
            let mut p = alloc::vec::Vec::new();
            for j in 0..n {
                for i in j..n {
                    p.push(l[(i, j)]);
                }
            }
            let b: alloc::vec::Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let mut y = b.clone();
            packed_cholesky_solve(n, &p, &mut y);
            let r = &k * nalgebra::DVector::from_column_slice(&y);
            for i in 0..n {
                assert!((r[i] - b[i]).abs() < 1e-10 * n as f64, "n={n}");
            }
        }
    }
}
