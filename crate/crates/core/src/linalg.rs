//! Small dense linear algebra: symmetric eigendecomposition, spectral
//! pseudo-inverse solves and thin QR.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Relative cutoff below which eigenvalues are treated as zero by
/// [`pseudo_solve`].
pub const PINV_RTOL: f64 = 1e-12;

const MAX_QL_SWEEPS: usize = 60;

/// Eigendecomposition `A = Q diag(values) Q^T` of a symmetric matrix.
/// Eigenvalues are sorted in decreasing order; each eigenvector's first
/// nonzero component is positive.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::NotSquare {
                rows: n,
                cols: a.cols(),
            });
        }
        if n == 0 {
            return Err(Error::Empty("eigendecomposition input"));
        }
        if a.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("eigendecomposition input"));
        }
        // symmetrize, row-major working copy
        let mut v: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (a.get(i, j) + a.get(j, i))).collect())
            .collect();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        tred2(&mut v, &mut d, &mut e);
        tql2(&mut v, &mut d, &mut e)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
        let values: Vec<f64> = order.iter().map(|&k| d[k]).collect();
        let mut vectors = Matrix::from_fn(n, n, |i, j| v[i][order[j]]);
        for j in 0..n {
            let col = vectors.col_mut(j);
            let first = col.iter().copied().find(|x| x.abs() > 1e-14).unwrap_or(1.0);
            if first < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
        }
        Ok(Self { values, vectors })
    }

    /// The leading `k` eigenvectors as a `P x k` matrix.
    pub fn leading(&self, k: usize) -> Matrix {
        let n = self.vectors.rows();
        Matrix::from_fn(n, k, |i, j| self.vectors.get(i, j))
    }
}

// Householder reduction to tridiagonal form (after the EISPACK/JAMA routine).
fn tred2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[n - 1][j];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = libm::sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k][i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

// Implicit QL iterations on the tridiagonal matrix.
fn tql2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(Error::NonConvergence {
                        iterations: sweeps - 1,
                        sigma: e[l].abs(),
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = libm::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = libm::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Minimum-norm solution of `A x = b` for symmetric positive semidefinite
/// `A`, discarding eigenvalues at or below `PINV_RTOL * lambda_max`.
pub fn pseudo_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::new(a)?;
    let lmax = eig.values.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    Ok(pseudo_solve_with(&eig, b, PINV_RTOL * lmax))
}

/// Pseudo-inverse solve against a precomputed decomposition with an absolute
/// eigenvalue cutoff.
pub fn pseudo_solve_with(eig: &SymmetricEigen, b: &[f64], cutoff: f64) -> Vec<f64> {
    let n = eig.values.len();
    let mut x = vec![0.0; n];
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda <= cutoff || lambda <= 0.0 {
            continue;
        }
        let q = eig.vectors.col(k);
        let coef = q.iter().zip(b).map(|(a, b)| a * b).sum::<f64>() / lambda;
        for (xi, &qi) in x.iter_mut().zip(q) {
            *xi += coef * qi;
        }
    }
    x
}

/// Solves `A x = b` for symmetric positive semidefinite `A`. Uses a Cholesky
/// factorization when every pivot exceeds `1e-8` times the largest diagonal
/// entry (the inverse then coincides with the truncated pseudo-inverse) and
/// falls back to [`pseudo_solve`] otherwise.
pub fn solve_psd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::NotSquare {
            rows: n,
            cols: a.cols(),
        });
    }
    let dmax = (0..n).map(|i| a.get(i, i)).fold(0.0f64, f64::max);
    if dmax > 0.0 {
        if let Some(l) = cholesky(a, 1e-8 * dmax) {
            let mut y = b.to_vec();
            for i in 0..n {
                let mut s = y[i];
                for k in 0..i {
                    s -= l[i * n + k] * y[k];
                }
                y[i] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= l[k * n + i] * y[k];
                }
                y[i] = s / l[i * n + i];
            }
            return Ok(y);
        }
    }
    pseudo_solve(a, b)
}

// Row-major lower factor, or None when a pivot falls below `min_pivot`.
fn cholesky(a: &Matrix, min_pivot: f64) -> Option<Vec<f64>> {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.5 * (a.get(i, j) + a.get(j, i));
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > min_pivot) {
                    return None;
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Thin Householder QR of a tall matrix (`rows >= cols`). `R` has a
/// nonnegative diagonal so the factorization is unique for full-rank input.
pub fn thin_qr(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::ShapeMismatch {
            expected: vec![n, n],
            found: vec![m, n],
        });
    }
    let mut r = a.clone();
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut x: Vec<f64> = (k..m).map(|i| r.get(i, k)).collect();
        let norm = libm::sqrt(x.iter().map(|v| v * v).sum());
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        x[0] -= alpha;
        let vnorm = libm::sqrt(x.iter().map(|v| v * v).sum());
        if vnorm > 0.0 {
            x.iter_mut().for_each(|v| *v /= vnorm);
            for j in k..n {
                let s: f64 = (k..m).map(|i| x[i - k] * r.get(i, j)).sum();
                for i in k..m {
                    let val = r.get(i, j) - 2.0 * s * x[i - k];
                    r.set(i, j, val);
                }
            }
        }
        hs.push(x);
    }
    // accumulate Q = H_0 ... H_{n-1} applied to the first n unit vectors
    let mut q = Matrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 });
    for k in (0..n).rev() {
        let x = &hs[k];
        for j in 0..n {
            let s: f64 = (k..m).map(|i| x[i - k] * q.get(i, j)).sum();
            if s != 0.0 {
                for i in k..m {
                    let val = q.get(i, j) - 2.0 * s * x[i - k];
                    q.set(i, j, val);
                }
            }
        }
    }
    let mut rr = Matrix::from_fn(n, n, |i, j| if i <= j { r.get(i, j) } else { 0.0 });
    for i in 0..n {
        if rr.get(i, i) < 0.0 {
            for j in 0..n {
                rr.set(i, j, -rr.get(i, j));
            }
            for row in 0..m {
                q.set(row, i, -q.get(row, i));
            }
        }
    }
    Ok((q, rr))
}

/// Largest absolute entry of `V^T V - I`.
pub fn orthonormality_error(v: &Matrix) -> f64 {
    let g = v.t_matmul(v).expect("square gram");
    let mut worst: f64 = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst
}
