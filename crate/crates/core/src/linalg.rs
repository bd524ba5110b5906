//! Dense complex linear algebra: row-major matrices and an LU factorization
//! with partial pivoting whose trailing update runs data-parallel.

use crate::par;
use crate::C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (zero pivot at column {0})")]
    Singular(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from complete rows computed independently (in parallel).
    pub fn from_rows_par(rows: usize, cols: usize, f: impl Fn(usize) -> Vec<C64> + Sync + Send) -> Self {
        let chunks = par::map_range(rows, |i| {
            let r = f(i);
            assert_eq!(r.len(), cols, "row length");
            r
        });
        Self { rows, cols, data: chunks.into_iter().flatten().collect() }
    }

    /// Builds a matrix from groups of `group` consecutive rows computed
    /// independently (in parallel); `f(g)` returns the rows of group `g`
    /// concatenated.
    pub fn from_row_groups(rows: usize, cols: usize, group: usize, f: impl Fn(usize) -> Vec<C64> + Sync + Send) -> Self {
        assert_eq!(rows % group, 0);
        let chunks = par::map_range(rows / group, |g| {
            let r = f(g);
            assert_eq!(r.len(), group * cols, "row group length");
            r
        });
        Self { rows, cols, data: chunks.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }
    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols);
        par::map_range(self.rows, |i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows);
        let n = other.cols;
        CMatrix::from_rows_par(self.rows, n, |i| {
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (k, a) in self.row(i).iter().enumerate() {
                if *a == C64::new(0.0, 0.0) {
                    continue;
                }
                for (o, b) in out.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
            out
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, z) in sums.iter_mut().zip(self.row(i)) {
                *s += z.norm();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    /// LU factorization with partial pivoting.
    pub fn lu(self) -> Result<Lu, LinalgError> {
        Lu::factor(self)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `P A = L U` with unit lower-triangular `L`, stored in place.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
    norm1: f64,
}

impl Lu {
    pub fn factor(a: CMatrix) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::Dimension { expected: a.rows, got: a.cols });
        }
        let n = a.rows;
        let norm1 = a.norm1();
        // row i is stored as [re(0..n) | im(0..n)] so the trailing update is
        // plain f64 arithmetic and each row is still one contiguous chunk
        let w = 2 * n;
        let mut m = vec![0.0; w * n];
        for i in 0..n {
            for j in 0..n {
                let z = a.data[i * n + j];
                m[i * w + j] = z.re;
                m[i * w + n + j] = z.im;
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n).map(|i| (i, C64::new(m[i * w + k], m[i * w + n + k]).norm())).fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(LinalgError::Singular(k));
            }
            if p != k {
                for j in 0..w {
                    m.swap(k * w + j, p * w + j);
                }
                perm.swap(k, p);
            }
            let (head, tail) = m.split_at_mut((k + 1) * w);
            let (pr, pi) = head[k * w..(k + 1) * w].split_at(n);
            let inv = C64::new(1.0, 0.0) / C64::new(pr[k], pi[k]);
            par::for_each_chunk_mut(tail, w, |_, row| {
                let (rr, ri) = row.split_at_mut(n);
                let l = C64::new(rr[k], ri[k]) * inv;
                rr[k] = l.re;
                ri[k] = l.im;
                if l != C64::new(0.0, 0.0) {
                    for (((xr, xi), ur), ui) in rr[k + 1..].iter_mut().zip(ri[k + 1..].iter_mut()).zip(&pr[k + 1..]).zip(&pi[k + 1..]) {
                        *xr -= l.re * ur - l.im * ui;
                        *xi -= l.re * ui + l.im * ur;
                    }
                }
            });
        }
        let lu = (0..n * n).map(|idx| C64::new(m[(idx / n) * w + idx % n], m[(idx / n) * w + n + idx % n])).collect();
        Ok(Self { n, lu, perm, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> C64 {
        self.lu[i * self.n + j]
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: C64 = row.iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: C64 = row.iter().zip(&x[i + 1..]).map(|(u, v)| u * v).sum();
            x[i] = (x[i] - s) / self.at(i, i);
        }
        x
    }

    /// Solves `A^T x = b` (plain transpose, no conjugation).
    pub fn solve_transpose(&self, b: &[C64]) -> Vec<C64> {
        self.solve_t_impl(b, false)
    }

    /// Solves `A^H x = b`.
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        self.solve_t_impl(b, true)
    }

    fn solve_t_impl(&self, b: &[C64], conj: bool) -> Vec<C64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let c = |z: C64| if conj { z.conj() } else { z };
        // A^T = U^T L^T P: solve U^T w = b, then L^T v = w, then x = P^T v.
        let mut w = b.to_vec();
        for i in 0..n {
            let d = c(self.at(i, i));
            w[i] /= d;
            let wi = w[i];
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            for (wj, u) in w[i + 1..].iter_mut().zip(row) {
                *wj -= c(*u) * wi;
            }
        }
        for i in (0..n).rev() {
            let wi = w[i];
            let row = &self.lu[i * n..i * n + i];
            for (wj, l) in w[..i].iter_mut().zip(row) {
                *wj -= c(*l) * wi;
            }
        }
        let mut x = vec![C64::new(0.0, 0.0); n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = w[k];
        }
        x
    }

    /// Solves `A X = B` for a block of right-hand sides. Rows of `B` are
    /// swept as contiguous vectors, and column blocks are solved in parallel.
    pub fn solve_block(&self, b: &CMatrix) -> CMatrix {
        self.block_impl(b, false)
    }

    /// Solves `A^T X = B` for a block of right-hand sides.
    pub fn solve_transpose_block(&self, b: &CMatrix) -> CMatrix {
        self.block_impl(b, true)
    }

    fn block_impl(&self, b: &CMatrix, transpose: bool) -> CMatrix {
        const WIDTH: usize = 64;
        let (n, k) = (self.n, b.cols);
        assert_eq!(b.rows, n);
        // A = P^T L U and A^T = U^T L^T P: the transposed factors swap which
        // triangle carries the diagonal
        let factors = if transpose { Split::transposed(&self.lu, n) } else { Split::new(&self.lu) };
        let blocks = k.div_ceil(WIDTH);
        let solved = par::map_range(blocks, |bi| {
            let (c0, c1) = (bi * WIDTH, ((bi + 1) * WIDTH).min(k));
            let w = c1 - c0;
            let mut x = Split::zeros(n * w);
            for i in 0..n {
                let src = if transpose { i } else { self.perm[i] };
                for (c, z) in b.data[src * k + c0..src * k + c1].iter().enumerate() {
                    x.re[i * w + c] = z.re;
                    x.im[i * w + c] = z.im;
                }
            }
            factors.sweep(n, &mut x, w, !transpose);
            x
        });
        let mut out = CMatrix::zeros(n, k);
        for (bi, x) in solved.iter().enumerate() {
            let c0 = bi * WIDTH;
            let w = x.re.len() / n.max(1);
            for i in 0..n {
                let dst = if transpose { self.perm[i] } else { i };
                for c in 0..w {
                    out.data[dst * k + c0 + c] = C64::new(x.re[i * w + c], x.im[i * w + c]);
                }
            }
        }
        out
    }

    /// Solves for many right-hand sides (columns given as separate vectors).
    pub fn solve_many(&self, rhs: &[Vec<C64>]) -> Vec<Vec<C64>> {
        par::map_range(rhs.len(), |i| self.solve(&rhs[i]))
    }

    /// Explicit inverse.
    pub fn inverse(&self) -> CMatrix {
        let n = self.n;
        let cols = par::map_range(n, |j| {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            self.solve(&e)
        });
        CMatrix::from_fn(n, n, |i, j| cols[j][i])
    }

    /// Estimated 1-norm condition number (Hager/Higham estimator).
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let ny: f64 = y.iter().map(|z| z.norm()).sum();
            if ny <= est {
                break;
            }
            est = ny;
            let xi: Vec<C64> = y.iter().map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) }).collect();
            let zv = self.solve_adjoint(&xi);
            let (jmax, zmax) = zv.iter().enumerate().map(|(j, z)| (j, z.norm())).fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            let ztx: f64 = zv.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![C64::new(0.0, 0.0); n];
            x[jmax] = C64::new(1.0, 0.0);
        }
        // Higham's alternating-sign safeguard.
        let alt: Vec<C64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                C64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
            })
            .collect();
        let y = self.solve(&alt);
        let alt_est = 2.0 * y.iter().map(|z| z.norm()).sum::<f64>() / (3.0 * n as f64);
        est.max(alt_est) * self.norm1
    }
}

/// Complex data as separate real and imaginary parts, so the substitution
/// kernels are plain vectorisable `f64` arithmetic.
struct Split {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Split {
    fn zeros(len: usize) -> Self {
        Self { re: vec![0.0; len], im: vec![0.0; len] }
    }

    fn new(m: &[C64]) -> Self {
        Self { re: m.iter().map(|z| z.re).collect(), im: m.iter().map(|z| z.im).collect() }
    }

    fn transposed(m: &[C64], n: usize) -> Self {
        let mut t = Self::zeros(n * n);
        for i in 0..n {
            for j in 0..n {
                t.re[j * n + i] = m[i * n + j].re;
                t.im[j * n + i] = m[i * n + j].im;
            }
        }
        t
    }

    /// Forward then backward substitution with the triangles of this `n × n`
    /// matrix on an `n × w` row-major block `x`, in place. With
    /// `unit_lower` the lower triangle has an implicit unit diagonal and the
    /// stored diagonal belongs to the upper one; otherwise the reverse.
    fn sweep(&self, n: usize, x: &mut Split, w: usize, unit_lower: bool) {
        let (mut ar, mut ai) = (vec![0.0; w], vec![0.0; w]);
        let mut row = |x: &mut Split, i: usize, js: std::ops::Range<usize>, divide: bool| {
            ar.copy_from_slice(&x.re[i * w..(i + 1) * w]);
            ai.copy_from_slice(&x.im[i * w..(i + 1) * w]);
            for j in js {
                let (mr, mi) = (self.re[i * n + j], self.im[i * n + j]);
                if mr == 0.0 && mi == 0.0 {
                    continue;
                }
                let (sr, si) = (&x.re[j * w..(j + 1) * w], &x.im[j * w..(j + 1) * w]);
                for (((r, m), vr), vi) in ar.iter_mut().zip(ai.iter_mut()).zip(sr).zip(si) {
                    *r -= mr * vr - mi * vi;
                    *m -= mr * vi + mi * vr;
                }
            }
            let inv = if divide { C64::new(1.0, 0.0) / C64::new(self.re[i * n + i], self.im[i * n + i]) } else { C64::new(1.0, 0.0) };
            for c in 0..w {
                let z = C64::new(ar[c], ai[c]) * inv;
                x.re[i * w + c] = z.re;
                x.im[i * w + c] = z.im;
            }
        };
        for i in 0..n {
            row(x, i, 0..i, !unit_lower);
        }
        for i in (0..n).rev() {
            row(x, i, i + 1..n, unit_lower);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_solves_match_vector_solves() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 37;
        let a = CMatrix::from_fn(n, n, |i, j| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) + if i == j { C64::new(0.5, 0.0) } else { C64::new(0.0, 0.0) });
        let b = CMatrix::from_fn(n, 70, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let lu = a.lu().unwrap();
        let (x, xt) = (lu.solve_block(&b), lu.solve_transpose_block(&b));
        for c in 0..70 {
            let col: Vec<C64> = (0..n).map(|r| b[(r, c)]).collect();
            let (v, vt) = (lu.solve(&col), lu.solve_transpose(&col));
            for r in 0..n {
                assert!((x[(r, c)] - v[r]).norm() < 1e-10);
                assert!((xt[(r, c)] - vt[r]).norm() < 1e-10);
            }
        }
    }

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn resid(a: &CMatrix, x: &[C64], b: &[C64]) -> f64 {
        a.matvec(x).iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn solves_against_matvec() {
        let a = random(40, 1);
        let b: Vec<C64> = (0..40).map(|i| C64::new(i as f64, 1.0)).collect();
        let lu = a.clone().lu().unwrap();
        assert!(resid(&a, &lu.solve(&b), &b) < 1e-10);
        let at = a.transpose();
        assert!(resid(&at, &lu.solve_transpose(&b), &b) < 1e-10);
        let ah = CMatrix::from_fn(40, 40, |i, j| a[(j, i)].conj());
        assert!(resid(&ah, &lu.solve_adjoint(&b), &b) < 1e-10);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = random(25, 7);
        let inv = a.clone().lu().unwrap().inverse();
        let e = a.matmul(&inv).sub(&CMatrix::identity(25)).frobenius();
        assert!(e < 1e-11, "{e}");
    }

    #[test]
    fn condition_of_diagonal_matrix() {
        let a = CMatrix::from_fn(6, 6, |i, j| if i == j { C64::new(10f64.powi(i as i32), 0.0) } else { C64::new(0.0, 0.0) });
        let k = a.lu().unwrap().condition_estimate();
        assert!((k / 1e5 - 1.0).abs() < 1e-12, "{k}");
    }

    #[test]
    fn condition_estimate_bounds_true_value() {
        let a = random(30, 3);
        let inv = a.clone().lu().unwrap().inverse();
        let exact = a.norm1() * inv.norm1();
        let est = a.lu().unwrap().condition_estimate();
        assert!(est <= exact * (1.0 + 1e-10) && est >= exact / 10.0, "{est} {exact}");
    }

    #[test]
    fn singular_is_reported() {
        let a = CMatrix::zeros(3, 3);
        assert!(matches!(a.lu(), Err(LinalgError::Singular(0))));
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let a = random(60, 11);
        let b: Vec<C64> = (0..60).map(|i| C64::new(1.0, i as f64)).collect();
        let x1 = a.clone().lu().unwrap().solve(&b);
        par::force_sequential(true);
        let x2 = a.lu().unwrap().solve(&b);
        par::force_sequential(false);
        assert_eq!(x1, x2);
    }
}
