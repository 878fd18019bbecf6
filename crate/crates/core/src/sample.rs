//! Observed tensors with missingness masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix};

/// One observation: a data tensor and its 0/1 observation mask.
///
/// Data at unobserved cells is stored as `0.0` and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSample {
    data: DenseTensor,
    mask: DenseTensor,
    observed: usize,
}

impl TensorSample {
    pub fn new(data: DenseTensor, mask: DenseTensor) -> Result<Self> {
        data.check_same_shape(&mask)?;
        let mut data = data;
        let mut observed = 0;
        for (x, &m) in data.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            if m == 1.0 {
                if !x.is_finite() {
                    return Err(Error::NonFinite("observed cell"));
                }
                observed += 1;
            } else if m == 0.0 {
                *x = 0.0;
            } else {
                return Err(Error::InvalidConfig(alloc::format!(
                    "mask entries must be 0 or 1, found {m}"
                )));
            }
        }
        Ok(Self {
            data,
            mask,
            observed,
        })
    }

    /// A fully observed sample.
    pub fn complete(data: DenseTensor) -> Self {
        let mask = data.map(|_| 1.0);
        let observed = data.len();
        Self {
            data,
            mask,
            observed,
        }
    }

    /// Treats NaN cells as missing.
    pub fn from_nan(data: DenseTensor) -> Result<Self> {
        let mask = data.map(|x| if x.is_nan() { 0.0 } else { 1.0 });
        Self::new(data, mask)
    }

    #[inline]
    pub fn data(&self) -> &DenseTensor {
        &self.data
    }

    #[inline]
    pub fn mask(&self) -> &DenseTensor {
        &self.mask
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    /// Number of observed cells `m_n`.
    #[inline]
    pub fn observed(&self) -> usize {
        self.observed
    }

    #[inline]
    pub fn is_observed(&self, cell: usize) -> bool {
        self.mask.as_slice()[cell] == 1.0
    }

    /// Data with NaN at unobserved cells.
    pub fn to_nan_tensor(&self) -> DenseTensor {
        self.data
            .zip_map(&self.mask, |x, m| if m == 1.0 { x } else { f64::NAN })
            .expect("same shape")
    }
}

/// Checks that samples share a shape, each has an observed cell and every
/// cell position is observed somewhere. Returns the common shape.
pub fn validate_samples(samples: &[TensorSample]) -> Result<Vec<usize>> {
    let first = samples.first().ok_or(Error::Empty("sample list"))?;
    let shape = first.shape().to_vec();
    let mut seen = vec![false; first.data.len()];
    for (n, s) in samples.iter().enumerate() {
        if s.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: shape.clone(),
                found: s.shape().to_vec(),
            });
        }
        if s.observed == 0 {
            return Err(Error::EmptySample(n));
        }
        for (flag, &m) in seen.iter_mut().zip(s.mask.as_slice()) {
            *flag |= m == 1.0;
        }
    }
    if let Some(cell) = seen.iter().position(|&f| !f) {
        return Err(Error::UnobservedCell(cell));
    }
    Ok(shape)
}

/// Stacks `vec(X_n)` as rows of an `N x D` matrix, NaN where unobserved.
pub fn stack_samples(samples: &[TensorSample]) -> Matrix {
    let n = samples.len();
    let d = samples.first().map_or(0, |s| s.data.len());
    Matrix::from_fn(n, d, |i, j| {
        let s = &samples[i];
        if s.mask.as_slice()[j] == 1.0 {
            s.data.as_slice()[j]
        } else {
            f64::NAN
        }
    })
}

/// Row `i` of an `N x D` matrix as a tensor of the given shape.
pub fn row_to_tensor(m: &Matrix, i: usize, shape: &[usize]) -> Result<DenseTensor> {
    DenseTensor::from_vec(shape, m.row(i))
}
