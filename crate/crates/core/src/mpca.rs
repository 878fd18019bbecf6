//! Classical multilinear PCA by alternating eigen-updates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::SymmetricEigen;
use crate::tensor::{multi_mode_expand, multi_mode_product, sq_norm, unfold, DenseTensor, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcaConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MpcaConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpcaModel {
    pub factors: Vec<Matrix>,
    pub center: DenseTensor,
    pub cores: Vec<DenseTensor>,
    /// Fraction of the total centered variation captured by the cores.
    pub explained_variation: f64,
    /// Captured variation `sum_n ||U_n||^2` after initialization and after each sweep.
    pub captured_trace: Vec<f64>,
    pub iterations: usize,
}

/// Checks `1 <= K_l <= P_l` for every mode.
pub fn validate_ranks(shape: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() != shape.len() {
        return Err(Error::ShapeMismatch {
            expected: shape.to_vec(),
            found: ranks.to_vec(),
        });
    }
    for (mode, (&k, &p)) in ranks.iter().zip(shape).enumerate() {
        if k == 0 || k > p {
            return Err(Error::RankOutOfRange {
                mode,
                rank: k,
                dim: p,
            });
        }
    }
    Ok(())
}

/// Elementwise mean of equally shaped tensors.
pub fn mean_tensor(samples: &[DenseTensor]) -> Result<DenseTensor> {
    let first = samples.first().ok_or(Error::Empty("sample list"))?;
    let mut acc = vec![0.0; first.len()];
    for s in samples {
        first.check_same_shape(s)?;
        for (a, &x) in acc.iter_mut().zip(s.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    DenseTensor::from_vec(first.shape(), acc)
}

/// `M M^T` for a matrix given by its columns.
pub(crate) fn row_gram(m: &Matrix) -> Matrix {
    let p = m.rows();
    let mut g = Matrix::zeros(p, p);
    for j in 0..m.cols() {
        let c = m.col(j);
        for b in 0..p {
            let cb = c[b];
            if cb == 0.0 {
                continue;
            }
            let dst = g.col_mut(b);
            for (a, &ca) in c.iter().enumerate() {
                dst[a] += ca * cb;
            }
        }
    }
    g
}

/// Mode-`mode` scatter `sum_n Y_n(mode) Y_n(mode)^T` of already centered tensors.
pub fn mode_scatter(centered: &[DenseTensor], mode: usize) -> Result<Matrix> {
    let first = centered.first().ok_or(Error::Empty("sample list"))?;
    let p = first
        .shape()
        .get(mode)
        .copied()
        .ok_or(Error::ModeOutOfRange {
            mode,
            order: first.order(),
        })?;
    let mut phi = Matrix::zeros(p, p);
    for y in centered {
        let g = row_gram(&unfold(y, mode)?);
        for (a, b) in phi.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a += b;
        }
    }
    Ok(phi)
}

fn leading_eigvecs(phi: &Matrix, k: usize) -> Result<Matrix> {
    Ok(SymmetricEigen::new(phi)?.leading(k))
}

fn captured(cores: &[DenseTensor]) -> f64 {
    cores.iter().map(|u| sq_norm(u)).sum()
}

/// Fits MPCA to complete data.
pub fn mpca_fit(
    samples: &[DenseTensor],
    ranks: &[usize],
    config: &MpcaConfig,
) -> Result<MpcaModel> {
    let center = mean_tensor(samples)?;
    validate_ranks(center.shape(), ranks)?;
    if samples
        .iter()
        .any(|s| s.as_slice().iter().any(|x| !x.is_finite()))
    {
        return Err(Error::NonFinite("mpca input"));
    }
    let order = center.order();
    let centered: Vec<DenseTensor> = samples
        .iter()
        .map(|s| s.sub(&center))
        .collect::<Result<_>>()?;
    let total: f64 = centered.iter().map(|y| sq_norm(y)).sum();

    let mut factors = (0..order)
        .map(|m| leading_eigvecs(&mode_scatter(&centered, m)?, ranks[m]))
        .collect::<Result<Vec<_>>>()?;
    let project = |factors: &[Matrix]| -> Result<Vec<DenseTensor>> {
        centered
            .iter()
            .map(|y| multi_mode_product(y, factors, None))
            .collect()
    };
    let mut cores = project(&factors)?;
    let mut trace = vec![captured(&cores)];
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        for m in 0..order {
            let partial: Vec<DenseTensor> = centered
                .iter()
                .map(|y| multi_mode_product(y, &factors, Some(m)))
                .collect::<Result<_>>()?;
            factors[m] = leading_eigvecs(&mode_scatter(&partial, m)?, ranks[m])?;
        }
        cores = project(&factors)?;
        let cur = captured(&cores);
        let prev = *trace.last().unwrap();
        trace.push(cur);
        if (cur - prev).abs() <= config.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let explained_variation = if total > 0.0 {
        trace.last().unwrap() / total
    } else {
        1.0
    };
    Ok(MpcaModel {
        factors,
        center,
        cores,
        explained_variation,
        captured_trace: trace,
        iterations,
    })
}

/// `C + U_n x {V}`.
pub fn mpca_reconstruct(model: &MpcaModel, n: usize) -> Result<DenseTensor> {
    let core = model.cores.get(n).ok_or(Error::IndexOutOfRange {
        index: n,
        len: model.cores.len(),
    })?;
    model
        .center
        .add(&multi_mode_expand(core, &model.factors, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;
    use crate::tensor::frobenius_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| StandardNormal.sample(rng)).unwrap()
    }

    #[test]
    fn full_rank_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let xs: Vec<_> = (0..6).map(|_| gaussian(&mut rng, &[3, 2, 2])).collect();
        let m = mpca_fit(&xs, &[3, 2, 2], &MpcaConfig::default()).unwrap();
        for (n, x) in xs.iter().enumerate() {
            assert!(mpca_reconstruct(&m, n).unwrap().max_abs_diff(x) <= 1e-10);
        }
        for v in &m.factors {
            assert!(orthonormality_error(v) <= 1e-10);
        }
    }

    #[test]
    fn identical_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = gaussian(&mut rng, &[3, 3]);
        let xs = vec![x.clone(); 5];
        let m = mpca_fit(&xs, &[1, 2], &MpcaConfig::default()).unwrap();
        assert!(m.center.max_abs_diff(&x) <= 1e-14);
        for u in &m.cores {
            assert!(frobenius_norm(u) <= 1e-12);
        }
    }

    #[test]
    fn monotone_and_pythagoras() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let xs: Vec<_> = (0..20).map(|_| gaussian(&mut rng, &[5, 4, 3])).collect();
        let m = mpca_fit(&xs, &[2, 2, 2], &MpcaConfig::default()).unwrap();
        for w in m.captured_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0]);
        }
        let mut sse = 0.0;
        let mut tot = 0.0;
        for (n, x) in xs.iter().enumerate() {
            sse += frobenius_norm(&x.sub(&mpca_reconstruct(&m, n).unwrap()).unwrap()).powi(2);
            tot += frobenius_norm(&x.sub(&m.center).unwrap()).powi(2);
        }
        let cap = captured(&m.cores);
        assert!((sse - (tot - cap)).abs() <= 1e-8 * tot);
        for v in &m.factors {
            assert!(orthonormality_error(v) <= 1e-10);
        }
    }

    #[test]
    fn order_one_is_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let xs: Vec<_> = (0..40).map(|_| gaussian(&mut rng, &[6])).collect();
        let m = mpca_fit(&xs, &[2], &MpcaConfig::default()).unwrap();
        // oracle: nalgebra eigenvectors of the centered scatter
        let mean = mean_tensor(&xs).unwrap();
        let mut s = nalgebra::DMatrix::<f64>::zeros(6, 6);
        for x in &xs {
            let y = nalgebra::DVector::from_iterator(
                6,
                x.as_slice().iter().zip(mean.as_slice()).map(|(a, b)| a - b),
            );
            s += &y * y.transpose();
        }
        let eig = nalgebra::SymmetricEigen::new(s);
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let q = nalgebra::DMatrix::from_fn(6, 2, |i, j| eig.eigenvectors[(i, idx[j])]);
        let v = nalgebra::DMatrix::from_column_slice(6, 2, m.factors[0].as_slice());
        // cosines of principal angles are the singular values of Q^T V
        let sv = (q.transpose() * v).singular_values();
        for s in sv.iter() {
            assert!(libm::acos(s.min(1.0)) <= 1e-6);
        }
    }

    #[test]
    fn exact_low_rank_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let vs: Vec<Matrix> = [(5, 2), (4, 2), (3, 1)]
            .iter()
            .map(|&(p, k)| {
                let a = Matrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));
                crate::linalg::thin_qr(&a).unwrap().0
            })
            .collect();
        let c = gaussian(&mut rng, &[5, 4, 3]);
        let xs: Vec<_> = (0..15)
            .map(|_| {
                let u = gaussian(&mut rng, &[2, 2, 1]);
                c.add(&multi_mode_expand(&u, &vs, None).unwrap()).unwrap()
            })
            .collect();
        let m = mpca_fit(&xs, &[2, 2, 1], &MpcaConfig::default()).unwrap();
        let mut mse = 0.0;
        for (n, x) in xs.iter().enumerate() {
            mse += frobenius_norm(&x.sub(&mpca_reconstruct(&m, n).unwrap()).unwrap()).powi(2);
        }
        assert!(mse / (15.0 * 60.0) <= 1e-10);
    }

    #[test]
    fn reconstruct_zero_core_is_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let xs: Vec<_> = (0..4).map(|_| gaussian(&mut rng, &[3, 2])).collect();
        let mut m = mpca_fit(&xs, &[1, 1], &MpcaConfig::default()).unwrap();
        m.cores[0] = DenseTensor::zeros(&[1, 1]).unwrap();
        assert_eq!(mpca_reconstruct(&m, 0).unwrap(), m.center);
        assert!(mpca_reconstruct(&m, 9).is_err());
    }

    #[test]
    fn errors() {
        let xs = vec![DenseTensor::zeros(&[3, 2]).unwrap(); 3];
        assert!(matches!(
            mpca_fit(&xs, &[4, 1], &MpcaConfig::default()),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(mpca_fit(&xs, &[0, 1], &MpcaConfig::default()).is_err());
        assert!(mpca_fit(&[], &[1], &MpcaConfig::default()).is_err());
    }
}
