//! Dense tensors and the multilinear primitives used throughout the crate.
//!
//! Storage is colexicographic: the first index varies fastest, so a tensor of
//! shape `(P1, ..., PL)` stores element `(p1, ..., pL)` at
//! `p1 + P1 * (p2 + P2 * (p3 + ...))`. Matrices are column-major, which makes
//! `vec(A)` the raw data buffer. The mode-`l` unfolding enumerates the
//! remaining indices with the smallest remaining mode varying fastest, so that
//!
//! ```text
//! vec(B x {V})  = (V_L ⊗ ... ⊗ V_1) vec(B)
//! A_(l)         = V_l B_(l) (V_L ⊗ ... ⊗ V_{l+1} ⊗ V_{l-1} ⊗ ... ⊗ V_1)^T
//! ```
//!
//! hold verbatim. Modes are zero-based in this API.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + n * i] = 1.0;
        }
        m
    }

    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                len: data.len(),
                volume: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major data (convenient for literals in tests).
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                len: data.len(),
                volume: rows * cols,
            });
        }
        Ok(Self::from_fn(rows, cols, |i, j| data[i * cols + j]))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major buffer, i.e. `vec(self)`.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.rows * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + self.rows * j] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[self.rows * j..self.rows * (j + 1)]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[r * j..r * (j + 1)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols],
                found: vec![other.rows],
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let oc = other.col(j);
            let dst = &mut out.data[self.rows * j..self.rows * (j + 1)];
            for (k, &b) in oc.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let a = &self.data[self.rows * k..self.rows * (k + 1)];
                for (d, &x) in dst.iter_mut().zip(a) {
                    *d += x * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                expected: vec![self.rows],
                found: vec![other.rows],
            });
        }
        Ok(Matrix::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols],
                found: vec![x.len()],
            });
        }
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.col(j)) {
                *o += a * xj;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(dot(&self.data, &self.data))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

/// Kronecker product `a ⊗ b`, laid out so that `vec(B X A^T) = (A ⊗ B) vec(X)`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    Matrix::from_fn(rows, cols, |i, j| {
        a.get(i / b.rows, j / b.cols) * b.get(i % b.rows, j % b.cols)
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Dense real tensor of order `L >= 1` in colexicographic layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&p| p == 0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let volume = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; volume],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let volume = check_shape(shape)?;
        if data.len() != volume {
            return Err(Error::LengthMismatch {
                len: data.len(),
                volume,
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let volume = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(volume);
        for _ in 0..volume {
            data.push(f(&idx));
            increment_index(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A shape-`(1)` tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &p) in idx.iter().zip(&self.shape) {
            debug_assert!(i < p);
            lin += i * stride;
            stride *= p;
        }
        lin
    }

    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&p| {
                let i = lin % p;
                lin /= p;
                i
            })
            .collect()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let lin = self.linear_index(idx);
        self.data[lin] = value;
    }

    /// `vec(self)`: the buffer itself, first index fastest.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &DenseTensor, f: impl Fn(f64, f64) -> f64) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        self.map(|x| x * s)
    }

    pub fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Sizes of the index blocks before and after `mode`.
    #[inline]
    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let left: usize = self.shape[..mode].iter().product();
        let right: usize = self.shape[mode + 1..].iter().product();
        (left, self.shape[mode], right)
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

pub(crate) fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for (i, &p) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < p {
            return;
        }
        *i = 0;
    }
}

/// Mode-`mode` unfolding: a `P_mode x prod(other dims)` matrix whose columns
/// are the mode fibers.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    let (left, p, right) = t.split(mode);
    let cols = left * right;
    let mut out = Matrix::zeros(p, cols);
    for r in 0..right {
        for l in 0..left {
            let col = l + left * r;
            for i in 0..p {
                out.data[i + p * col] = t.data[l + left * i + left * p * r];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    let volume = check_shape(shape)?;
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    let p = shape[mode];
    if m.rows != p || m.rows * m.cols != volume {
        return Err(Error::ShapeMismatch {
            expected: vec![p, volume / p],
            found: vec![m.rows, m.cols],
        });
    }
    let left: usize = shape[..mode].iter().product();
    let right: usize = shape[mode + 1..].iter().product();
    let mut data = vec![0.0; volume];
    for r in 0..right {
        for l in 0..left {
            let col = l + left * r;
            for i in 0..p {
                data[l + left * i + left * p * r] = m.data[i + p * col];
            }
        }
    }
    DenseTensor::from_vec(shape, data)
}

/// `vec(t)` with the first index varying fastest.
pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.vectorize()
}

#[derive(Clone, Copy)]
enum Contract {
    /// `out[.., k, ..] = sum_p t[.., p, ..] m[p, k]`
    Rows,
    /// `out[.., p, ..] = sum_k t[.., k, ..] m[p, k]`
    Cols,
}

fn contract_mode(t: &DenseTensor, m: &Matrix, mode: usize, how: Contract) -> Result<DenseTensor> {
    t.check_mode(mode)?;
    let (left, p, right) = t.split(mode);
    let (inner, outer) = match how {
        Contract::Rows => (m.rows, m.cols),
        Contract::Cols => (m.cols, m.rows),
    };
    if inner != p {
        return Err(Error::ShapeMismatch {
            expected: vec![p],
            found: vec![inner],
        });
    }
    let mut shape = t.shape.clone();
    shape[mode] = outer;
    let mut data = vec![0.0; left * outer * right];
    for r in 0..right {
        let src = &t.data[left * p * r..left * p * (r + 1)];
        let dst = &mut data[left * outer * r..left * outer * (r + 1)];
        for i in 0..p {
            let src_fiber = &src[left * i..left * (i + 1)];
            for k in 0..outer {
                let coef = match how {
                    Contract::Rows => m.data[i + m.rows * k],
                    Contract::Cols => m.data[k + m.rows * i],
                };
                if coef == 0.0 {
                    continue;
                }
                let dst_fiber = &mut dst[left * k..left * (k + 1)];
                for (d, &s) in dst_fiber.iter_mut().zip(src_fiber) {
                    *d += coef * s;
                }
            }
        }
    }
    DenseTensor::from_vec(&shape, data)
}

/// Mode product contracting the tensor's `mode` index against the rows of
/// `v` (`P_mode x K`): `b[.., k, ..] = sum_p a[.., p, ..] v[p, k]`.
/// This is the projection `A x_mode V^T`.
pub fn mode_product(t: &DenseTensor, v: &Matrix, mode: usize) -> Result<DenseTensor> {
    contract_mode(t, v, mode, Contract::Rows)
}

/// Expansion along `mode` with `v` (`P x K_mode`): `b[.., p, ..] = sum_k a[.., k, ..] v[p, k]`.
/// This is `A x_mode V`.
pub fn mode_expand(t: &DenseTensor, v: &Matrix, mode: usize) -> Result<DenseTensor> {
    contract_mode(t, v, mode, Contract::Cols)
}

/// Sequential [`mode_product`] over every mode except `skip`
/// (the projection `A x {V^T}`, or `A x_{-l} {V^T}` when skipping).
pub fn multi_mode_product(
    t: &DenseTensor,
    factors: &[Matrix],
    skip: Option<usize>,
) -> Result<DenseTensor> {
    multi_contract(t, factors, skip, Contract::Rows)
}

/// Sequential [`mode_expand`] over every mode except `skip` (`U x {V}`).
pub fn multi_mode_expand(
    t: &DenseTensor,
    factors: &[Matrix],
    skip: Option<usize>,
) -> Result<DenseTensor> {
    multi_contract(t, factors, skip, Contract::Cols)
}

fn multi_contract(
    t: &DenseTensor,
    factors: &[Matrix],
    skip: Option<usize>,
    how: Contract,
) -> Result<DenseTensor> {
    if factors.len() != t.order() {
        return Err(Error::ShapeMismatch {
            expected: vec![t.order()],
            found: vec![factors.len()],
        });
    }
    // Contract the modes that shrink the tensor first.
    let mut modes: Vec<usize> = (0..t.order()).filter(|&m| Some(m) != skip).collect();
    modes.sort_by(|&a, &b| {
        let ratio = |m: usize| {
            let f = &factors[m];
            let (i, o) = match how {
                Contract::Rows => (f.rows, f.cols),
                Contract::Cols => (f.cols, f.rows),
            };
            o as f64 / i as f64
        };
        ratio(a).total_cmp(&ratio(b)).then(a.cmp(&b))
    });
    let mut cur = t.clone();
    for m in modes {
        cur = contract_mode(&cur, &factors[m], m, how)?;
    }
    Ok(cur)
}

/// Contracted product over the leading `n_contract` modes of `a` and `b`.
/// The result has the remaining modes of `a` followed by those of `b`; when
/// nothing remains it is a shape-`(1)` scalar tensor.
pub fn contracted_product(
    a: &DenseTensor,
    b: &DenseTensor,
    n_contract: usize,
) -> Result<DenseTensor> {
    if n_contract > a.order()
        || n_contract > b.order()
        || a.shape[..n_contract] != b.shape[..n_contract]
    {
        return Err(Error::ShapeMismatch {
            expected: a.shape[..n_contract.min(a.order())].to_vec(),
            found: b.shape[..n_contract.min(b.order())].to_vec(),
        });
    }
    let inner: usize = a.shape[..n_contract].iter().product();
    let ja = a.len() / inner;
    let kb = b.len() / inner;
    let mut shape: Vec<usize> = a.shape[n_contract..]
        .iter()
        .chain(&b.shape[n_contract..])
        .copied()
        .collect();
    if shape.is_empty() {
        shape.push(1);
    }
    let mut data = vec![0.0; ja * kb];
    for k in 0..kb {
        let bc = &b.data[inner * k..inner * (k + 1)];
        for j in 0..ja {
            data[j + ja * k] = dot(&a.data[inner * j..inner * (j + 1)], bc);
        }
    }
    DenseTensor::from_vec(&shape, data)
}

pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(dot(&a.data, &b.data))
}

pub fn frobenius_norm(a: &DenseTensor) -> f64 {
    libm::sqrt(dot(&a.data, &a.data))
}

/// Squared Frobenius norm.
pub fn sq_norm(a: &DenseTensor) -> f64 {
    dot(&a.data, &a.data)
}

pub fn hadamard(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    a.zip_map(b, |x, y| x * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // Direct evaluation of b[k1,k2,k3] = sum a[p1,p2,p3] v[p_mode, k_mode].
    fn brute_mode_product(t: &DenseTensor, v: &Matrix, mode: usize) -> DenseTensor {
        let mut shape = t.shape().to_vec();
        shape[mode] = v.cols();
        DenseTensor::from_fn(&shape, |idx| {
            let mut s = 0.0;
            for p in 0..t.shape()[mode] {
                let mut src = idx.to_vec();
                src[mode] = p;
                s += t.get(&src) * v.get(p, idx[mode]);
            }
            s
        })
        .unwrap()
    }

    #[test]
    fn unfold_degenerate_shape() {
        let t = DenseTensor::from_vec(&[2, 1, 1], vec![3.0, -4.0]).unwrap();
        let m = unfold(&t, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 1));
        assert_eq!(m.as_slice(), &[3.0, -4.0]);
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let t = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(unfold(&t, 2), Err(Error::ModeOutOfRange { .. })));
    }

    #[test]
    fn fold_roundtrip_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, &[3, 4, 2]);
        for mode in 0..3 {
            let back = fold(&unfold(&t, mode).unwrap(), mode, t.shape()).unwrap();
            assert_eq!(back, t);
        }
        let s = fold(&Matrix::from_col_major(1, 1, vec![2.5]).unwrap(), 0, &[1]).unwrap();
        assert_eq!(s, DenseTensor::scalar(2.5));
        assert!(fold(&Matrix::zeros(3, 3), 0, &[3, 4]).is_err());
    }

    #[test]
    fn unfold_matches_kronecker_formulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_tensor(&mut rng, &[2, 2, 2]);
        let vs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 3, 2)).collect();
        // elementwise oracle for B x {V}
        let a = DenseTensor::from_fn(&[3, 3, 3], |p| {
            let mut s = 0.0;
            for k1 in 0..2 {
                for k2 in 0..2 {
                    for k3 in 0..2 {
                        s += b.get(&[k1, k2, k3])
                            * vs[0].get(p[0], k1)
                            * vs[1].get(p[1], k2)
                            * vs[2].get(p[2], k3);
                    }
                }
            }
            s
        })
        .unwrap();
        let a1 = unfold(&a, 0).unwrap();
        let rhs = vs[0]
            .matmul(&unfold(&b, 0).unwrap())
            .unwrap()
            .matmul(&kronecker(&vs[2], &vs[1]).transpose())
            .unwrap();
        assert!(a1.max_abs_diff(&rhs) <= 1e-12);
        // fold of the matrix formulation is the elementwise product
        let folded = fold(&rhs, 0, &[3, 3, 3]).unwrap();
        assert!(folded.max_abs_diff(&a) <= 1e-12);
        // vec identity
        let kr = kronecker(&kronecker(&vs[2], &vs[1]), &vs[0]);
        let v = kr.matvec(b.as_slice()).unwrap();
        assert!(max_abs_diff(&v, &vectorize(&a)) <= 1e-12);
        assert!(multi_mode_expand(&b, &vs, None).unwrap().max_abs_diff(&a) <= 1e-12);
    }

    #[test]
    fn mode_product_identity_zero_and_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, &[3, 3, 3]);
        for mode in 0..3 {
            assert_eq!(mode_product(&t, &Matrix::identity(3), mode).unwrap(), t);
            let z = mode_product(&t, &Matrix::zeros(3, 2), mode).unwrap();
            assert!(z.as_slice().iter().all(|&x| x == 0.0));
            let v = random_matrix(&mut rng, 3, 4);
            let fast = mode_product(&t, &v, mode).unwrap();
            assert!(fast.max_abs_diff(&brute_mode_product(&t, &v, mode)) <= 1e-13);
        }
        assert!(mode_product(&t, &Matrix::zeros(2, 2), 0).is_err());
    }

    #[test]
    fn multi_mode_product_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&mut rng, &[3, 4, 2]);
        let vs = vec![
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 4, 3),
            random_matrix(&mut rng, 2, 2),
        ];
        let a = multi_mode_product(&t, &vs, None).unwrap();
        let mut b = t.clone();
        for m in [2, 0, 1] {
            b = mode_product(&b, &vs[m], m).unwrap();
        }
        assert!(a.max_abs_diff(&b) <= 1e-12);
        let ids: Vec<Matrix> = t.shape().iter().map(|&p| Matrix::identity(p)).collect();
        assert_eq!(multi_mode_product(&t, &ids, None).unwrap(), t);
        let skipped = multi_mode_product(&t, &vs, Some(1)).unwrap();
        assert_eq!(skipped.shape(), &[2, 4, 2]);
    }

    #[test]
    fn contracted_product_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&mut rng, &[2, 3, 2]);
        let s = contracted_product(&t, &t, 3).unwrap();
        assert_eq!(s.shape(), &[1]);
        assert!((s.as_slice()[0] - frobenius_norm(&t).powi(2)).abs() < 1e-12);
        let z = DenseTensor::zeros(&[2, 3, 2]).unwrap();
        let zc = contracted_product(&t, &z, 2).unwrap();
        assert_eq!(zc.shape(), &[2, 2]);
        assert!(zc.as_slice().iter().all(|&x| x == 0.0));

        let a = random_tensor(&mut rng, &[2, 3]);
        let b = random_tensor(&mut rng, &[2, 4]);
        let d = contracted_product(&a, &b, 1).unwrap();
        assert_eq!(d.shape(), &[3, 4]);
        for j in 0..3 {
            for k in 0..4 {
                let mut s = 0.0;
                for p in 0..2 {
                    s += a.get(&[p, j]) * b.get(&[p, k]);
                }
                assert!((d.get(&[j, k]) - s).abs() <= 1e-13);
            }
        }
        assert!(contracted_product(&a, &random_tensor(&mut rng, &[3, 2]), 1).is_err());
    }

    #[test]
    fn norms_and_products() {
        let z = DenseTensor::zeros(&[3, 2]).unwrap();
        assert_eq!(frobenius_norm(&z), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let a = random_tensor(&mut rng, &[3, 2]);
            let b = random_tensor(&mut rng, &[3, 2]);
            let aa = inner(&a, &a).unwrap();
            assert!(aa >= 0.0);
            assert!((aa - a.as_slice().iter().map(|x| x * x).sum::<f64>()).abs() < 1e-14);
            let ab = inner(&a, &b).unwrap();
            assert!(ab.abs() <= frobenius_norm(&a) * frobenius_norm(&b) + 1e-14);
        }
        let h = hadamard(
            &DenseTensor::from_vec(&[2], vec![2.0, 3.0]).unwrap(),
            &DenseTensor::from_vec(&[2], vec![4.0, -1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(h.as_slice(), &[8.0, -3.0]);
        assert!(inner(&z, &DenseTensor::zeros(&[2, 3]).unwrap()).is_err());
    }

    #[test]
    fn kronecker_cases() {
        assert_eq!(
            kronecker(&Matrix::identity(2), &Matrix::identity(3)),
            Matrix::identity(6)
        );
        let a = Matrix::from_col_major(1, 1, vec![3.0]).unwrap();
        let b = Matrix::from_col_major(1, 1, vec![-2.0]).unwrap();
        assert_eq!(kronecker(&a, &b).as_slice(), &[-6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, b, c, d) = (
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
        );
        let lhs = kronecker(&a, &b).matmul(&kronecker(&c, &d)).unwrap();
        let rhs = kronecker(&a.matmul(&c).unwrap(), &b.matmul(&d).unwrap());
        assert!(lhs.max_abs_diff(&rhs) <= 1e-13);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(DenseTensor::zeros(&[]).is_err());
        assert!(DenseTensor::zeros(&[2, 0]).is_err());
        assert!(DenseTensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }
}
