//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in descending order.
/// Equal eigenvalues keep the solver's index order (stable sort).
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Real symmetric eigen-decomposition, descending.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Principal square root of a positive semidefinite Hermitian matrix
/// (negative round-off eigenvalues are clipped).
pub fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = hermitian_eigen(m);
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (c, v) in vals.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        for r in 0..n {
            scaled[(r, c)] *= s;
        }
    }
    &scaled * vecs.adjoint()
}

/// Factor a PSD Hermitian matrix as `F F†`, dropping non-positive eigenvalues.
pub fn psd_factor(m: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = hermitian_eigen(m);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| {
        vecs[(r, keep[c])] * vals[keep[c]].sqrt()
    })
}

/// Column-major stacking of `c` followed by the realification `[Re; Im]`.
pub fn realify(c: &DMatrix<C64>) -> DVector<f64> {
    let n = c.len();
    let mut out = DVector::zeros(2 * n);
    for (i, z) in c.iter().enumerate() {
        out[i] = z.re;
        out[n + i] = z.im;
    }
    out
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max |U†U − I|`.
pub fn unitarity_error(u: &DMatrix<C64>) -> f64 {
    let n = u.ncols();
    max_abs(&(u.adjoint() * u - DMatrix::<C64>::identity(n, n)))
}

/// `max |B†B − I|` for a matrix whose columns should be orthonormal.
pub fn orthonormality_error(b: &DMatrix<C64>) -> f64 {
    unitarity_error(b)
}

pub fn trace(m: &DMatrix<C64>) -> C64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

/// Real matrix times complex matrix, via two real products.
pub fn real_times_complex(a: &DMatrix<f64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let re = b.map(|z| z.re);
    let im = b.map(|z| z.im);
    let pr = a * re;
    let pi = a * im;
    DMatrix::from_fn(pr.nrows(), pr.ncols(), |r, c| {
        C64::new(pr[(r, c)], pi[(r, c)])
    })
}

pub fn frobenius_sq(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Sparse generator stored by diagonals: `(offset, values)` where entry
/// `(i + offset, i)` (for offset ≥ 0) or `(i, i − offset)` holds `values[i]`.
#[derive(Clone, Debug)]
pub struct Banded {
    dim: usize,
    diagonals: Vec<(isize, Vec<C64>)>,
}

impl Banded {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            diagonals: Vec::new(),
        }
    }

    /// Add a diagonal; `values[j]` is placed at `(j + offset, j)` for offset ≥ 0,
    /// and at `(j, j − offset)` for offset < 0.
    pub fn with_diagonal(mut self, offset: isize, values: Vec<C64>) -> Self {
        self.diagonals.push((offset, values));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (off, vals) in &self.diagonals {
            for (j, v) in vals.iter().enumerate() {
                let (r, c) = if *off >= 0 {
                    (j + *off as usize, j)
                } else {
                    (j, j + (-*off) as usize)
                };
                m[(r, c)] += *v;
            }
        }
        m
    }

    fn apply(&self, v: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for col in 0..v.ncols() {
            for (off, vals) in &self.diagonals {
                for (j, a) in vals.iter().enumerate() {
                    let (r, c) = if *off >= 0 {
                        (j + *off as usize, j)
                    } else {
                        (j, j + (-*off) as usize)
                    };
                    out[(r, col)] += *a * v[(c, col)];
                }
            }
        }
        out
    }

    /// Max column-sum norm bound.
    fn norm1(&self) -> f64 {
        let mut cols = vec![0.0; self.dim];
        for (off, vals) in &self.diagonals {
            for (j, a) in vals.iter().enumerate() {
                let c = if *off >= 0 { j } else { j + (-*off) as usize };
                cols[c] += a.norm();
            }
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    /// `exp(G) V` by Taylor stepping with per-step norm at most one.
    pub fn exp_action(&self, v: &DMatrix<C64>) -> DMatrix<C64> {
        let steps = self.norm1().ceil().max(1.0) as usize;
        let scale = C64::new(1.0 / steps as f64, 0.0);
        let mut acc = v.clone();
        for _ in 0..steps {
            let mut term = acc.clone();
            let mut sum = acc.clone();
            for k in 1..60 {
                term = self.apply(&term) * (scale / k as f64);
                sum += &term;
                let tn = max_abs(&term);
                if tn <= 1e-18 * max_abs(&sum).max(1e-300) {
                    break;
                }
            }
            acc = sum;
        }
        acc
    }
}

/// Kronecker product with the left factor's index varying slowest.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}
