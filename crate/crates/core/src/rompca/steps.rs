//! Residuals, objective, weights and the weighted least-squares block updates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{pseudo_solve_with, solve_psd, SymmetricEigen, PINV_RTOL};
use crate::robust::RhoSpec;
use crate::sample::TensorSample;
use crate::tensor::{multi_mode_expand, multi_mode_product, DenseTensor, Matrix};

/// Cellwise and casewise IRLS weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `W~_n = W_n^cell ⊙ M_n`.
    pub cell: Vec<DenseTensor>,
    /// `w_n^case`, one per sample.
    pub case: Vec<f64>,
}

impl Weights {
    /// `W_n = W_n^cell ⊙ W_n^case ⊙ M_n`.
    pub fn combined(&self, n: usize) -> DenseTensor {
        self.cell[n].scale(self.case[n])
    }

    pub fn all_combined(&self) -> Vec<DenseTensor> {
        (0..self.case.len()).map(|n| self.combined(n)).collect()
    }
}

/// `C + U x {V}`.
pub fn fitted_tensor(
    factors: &[Matrix],
    core: &DenseTensor,
    center: &DenseTensor,
) -> Result<DenseTensor> {
    center.add(&multi_mode_expand(core, factors, None)?)
}

/// Cellwise residuals `X_n - C - U_n x {V}`, set to zero at unobserved cells.
pub fn cell_residuals(
    samples: &[TensorSample],
    factors: &[Matrix],
    cores: &[DenseTensor],
    center: &DenseTensor,
) -> Result<Vec<DenseTensor>> {
    if samples.len() != cores.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![samples.len()],
            found: vec![cores.len()],
        });
    }
    samples
        .iter()
        .zip(cores)
        .map(|(s, u)| {
            let xhat = fitted_tensor(factors, u, center)?;
            s.data().check_same_shape(&xhat)?;
            let mut r = s.data().sub(&xhat)?;
            for (v, &m) in r.as_mut_slice().iter_mut().zip(s.mask().as_slice()) {
                if m == 0.0 {
                    *v = 0.0;
                }
            }
            Ok(r)
        })
        .collect()
}

fn case_deviation_at(
    n: usize,
    residual: &DenseTensor,
    mask: &DenseTensor,
    sigma1: &DenseTensor,
    rho1: &RhoSpec,
) -> Result<f64> {
    residual.check_same_shape(mask)?;
    residual.check_same_shape(sigma1)?;
    let (mut acc, mut m) = (0.0, 0usize);
    for ((&r, &w), &s) in residual
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .zip(sigma1.as_slice())
    {
        if w == 1.0 {
            acc += s * s * rho1.rho(r / s);
            m += 1;
        }
    }
    if m == 0 {
        return Err(Error::EmptySample(n));
    }
    Ok(libm::sqrt(acc / m as f64))
}

/// Standardized casewise deviation `t_n`.
pub fn case_deviation(
    residual: &DenseTensor,
    mask: &DenseTensor,
    sigma1: &DenseTensor,
    rho1: &RhoSpec,
) -> Result<f64> {
    case_deviation_at(0, residual, mask, sigma1, rho1)
}

/// All `t_n`.
pub fn case_deviations(
    samples: &[TensorSample],
    residuals: &[DenseTensor],
    sigma1: &DenseTensor,
    rho1: &RhoSpec,
) -> Result<Vec<f64>> {
    samples
        .iter()
        .zip(residuals)
        .enumerate()
        .map(|(n, (s, r))| case_deviation_at(n, r, s.mask(), sigma1, rho1))
        .collect()
}

/// Objective value computed from residuals, with the `t_n` it used.
pub fn objective_from_residuals(
    samples: &[TensorSample],
    residuals: &[DenseTensor],
    sigma1: &DenseTensor,
    sigma2: f64,
    rho1: &RhoSpec,
    rho2: &RhoSpec,
) -> Result<(f64, Vec<f64>)> {
    let t = case_deviations(samples, residuals, sigma1, rho1)?;
    let m: usize = samples.iter().map(|s| s.observed()).sum();
    let total: f64 = samples
        .iter()
        .zip(&t)
        .map(|(s, &tn)| s.observed() as f64 * rho2.rho(tn / sigma2))
        .sum();
    Ok((sigma2 * sigma2 * total / m as f64, t))
}

/// The robust objective.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    samples: &[TensorSample],
    factors: &[Matrix],
    cores: &[DenseTensor],
    center: &DenseTensor,
    sigma1: &DenseTensor,
    sigma2: f64,
    rho1: &RhoSpec,
    rho2: &RhoSpec,
) -> Result<f64> {
    let r = cell_residuals(samples, factors, cores, center)?;
    Ok(objective_from_residuals(samples, &r, sigma1, sigma2, rho1, rho2)?.0)
}

/// IRLS weights from residuals.
pub fn compute_weights(
    samples: &[TensorSample],
    residuals: &[DenseTensor],
    sigma1: &DenseTensor,
    sigma2: f64,
    rho1: &RhoSpec,
    rho2: &RhoSpec,
) -> Result<Weights> {
    let t = case_deviations(samples, residuals, sigma1, rho1)?;
    weights_with_t(samples, residuals, &t, sigma1, sigma2, rho1, rho2)
}

pub(crate) fn weights_with_t(
    samples: &[TensorSample],
    residuals: &[DenseTensor],
    t: &[f64],
    sigma1: &DenseTensor,
    sigma2: f64,
    rho1: &RhoSpec,
    rho2: &RhoSpec,
) -> Result<Weights> {
    let mut cell = Vec::with_capacity(samples.len());
    for (s, r) in samples.iter().zip(residuals) {
        let mut w = r.clone();
        for ((v, &m), &sg) in w
            .as_mut_slice()
            .iter_mut()
            .zip(s.mask().as_slice())
            .zip(sigma1.as_slice())
        {
            *v = if m == 1.0 { rho1.weight(*v / sg) } else { 0.0 };
        }
        cell.push(w);
    }
    let case = t.iter().map(|&tn| rho2.weight(tn / sigma2)).collect();
    Ok(Weights { cell, case })
}

/// Updates `V^(mode)` by weighted least squares with the other blocks fixed.
///
/// The normal equations decouple over the rows of `V^(mode)`; every row gets
/// a `K x K` system, and all systems share the eigenvalue cutoff of the full
/// block-diagonal Gram matrix.
pub fn update_factor(
    samples: &[TensorSample],
    factors: &[Matrix],
    cores: &[DenseTensor],
    center: &DenseTensor,
    weights: &[DenseTensor],
    mode: usize,
) -> Result<Matrix> {
    let shape = center.shape();
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    let p = shape[mode];
    let k = factors[mode].cols();
    let left: usize = shape[..mode].iter().product();
    let right: usize = shape[mode + 1..].iter().product();
    let mut grams = vec![0.0; p * k * k];
    let mut rhs = vec![0.0; p * k];
    let mut a = vec![0.0; k];
    for ((s, u), w) in samples.iter().zip(cores).zip(weights) {
        let w = w.as_slice();
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let partial = multi_mode_expand(u, factors, Some(mode))?;
        let ad = partial.as_slice();
        let x = s.data().as_slice();
        let c = center.as_slice();
        for r in 0..right {
            for l in 0..left {
                for (kk, av) in a.iter_mut().enumerate() {
                    *av = ad[l + left * kk + left * k * r];
                }
                for i in 0..p {
                    let lin = l + left * i + left * p * r;
                    let wv = w[lin];
                    if wv == 0.0 {
                        continue;
                    }
                    let y = wv * (x[lin] - c[lin]);
                    let g = &mut grams[i * k * k..(i + 1) * k * k];
                    for b in 0..k {
                        let wb = wv * a[b];
                        for (aa, &av) in a.iter().enumerate() {
                            g[aa + k * b] += wb * av;
                        }
                    }
                    for (rv, &av) in rhs[i * k..(i + 1) * k].iter_mut().zip(&a) {
                        *rv += y * av;
                    }
                }
            }
        }
    }
    let eigs = (0..p)
        .map(|i| {
            let g = Matrix::from_col_major(k, k, grams[i * k * k..(i + 1) * k * k].to_vec())?;
            SymmetricEigen::new(&g)
        })
        .collect::<Result<Vec<_>>>()?;
    let lmax = eigs
        .iter()
        .flat_map(|e| e.values.iter())
        .fold(0.0f64, |m, &x| m.max(x.abs()));
    let cutoff = PINV_RTOL * lmax;
    // Solve for the step from the current rows so that directions dropped by
    // the cutoff keep their value instead of snapping to zero.
    let current = &factors[mode];
    let mut v = current.clone();
    for (i, e) in eigs.iter().enumerate() {
        if e.values.iter().any(|&x| x <= cutoff) {
            log::debug!("factor update mode {mode}: row {i} Gram truncated");
        }
        let g = &grams[i * k * k..(i + 1) * k * k];
        let row = current.row(i);
        let r: Vec<f64> = (0..k)
            .map(|a| rhs[i * k + a] - (0..k).map(|b| g[a + k * b] * row[b]).sum::<f64>())
            .collect();
        for (kk, step) in pseudo_solve_with(e, &r, cutoff).into_iter().enumerate() {
            v.set(i, kk, row[kk] + step);
        }
    }
    Ok(v)
}

/// `(⊗V)^T diag(vec w) (⊗V)`, accumulated one mode at a time.
pub(crate) fn weighted_kron_gram(w: &DenseTensor, factors: &[Matrix]) -> Matrix {
    let shape = w.shape();
    let mut kin = 1usize;
    let mut nb = w.len();
    let mut blocks = w.as_slice().to_vec();
    for (l, v) in factors.iter().enumerate() {
        let p = shape[l];
        let k = v.cols();
        let kout = kin * k;
        let nb_out = nb / p;
        let (bs_in, bs_out) = (kin * kin, kout * kout);
        let mut out = vec![0.0; nb_out * bs_out];
        for rest in 0..nb_out {
            let dst = &mut out[rest * bs_out..(rest + 1) * bs_out];
            for pl in 0..p {
                let start = (pl + p * rest) * bs_in;
                let src = &blocks[start..start + bs_in];
                if l == 0 && src[0] == 0.0 {
                    continue;
                }
                for c in 0..k {
                    let vc = v.get(pl, c);
                    if vc == 0.0 {
                        continue;
                    }
                    for a in 0..k {
                        let coef = v.get(pl, a) * vc;
                        if coef == 0.0 {
                            continue;
                        }
                        for d in 0..kin {
                            let col = kout * (c * kin + d) + a * kin;
                            let s = &src[kin * d..kin * (d + 1)];
                            for (o, &x) in dst[col..col + kin].iter_mut().zip(s) {
                                *o += coef * x;
                            }
                        }
                    }
                }
            }
        }
        blocks = out;
        nb = nb_out;
        kin = kout;
    }
    Matrix::from_col_major(kin, kin, blocks).expect("square gram")
}

/// Updates one core tensor by weighted least squares with weights `W~_n`
/// (cellwise weights times mask; the case weight is a common factor and is
/// left out). Returns the core and whether all weights were zero.
pub fn update_core(
    sample: &TensorSample,
    factors: &[Matrix],
    center: &DenseTensor,
    wtilde: &DenseTensor,
) -> Result<(DenseTensor, bool)> {
    let kshape: Vec<usize> = factors.iter().map(|v| v.cols()).collect();
    update_core_from(
        sample,
        factors,
        center,
        wtilde,
        &DenseTensor::zeros(&kshape)?,
    )
}

/// [`update_core`] as a step from `previous`: where the weighted Gram matrix
/// is singular the previous core's component is kept, and with all weights
/// zero the previous core is returned unchanged.
pub fn update_core_from(
    sample: &TensorSample,
    factors: &[Matrix],
    center: &DenseTensor,
    wtilde: &DenseTensor,
    previous: &DenseTensor,
) -> Result<(DenseTensor, bool)> {
    if wtilde.as_slice().iter().all(|&x| x == 0.0) {
        return Ok((previous.clone(), true));
    }
    let g = weighted_kron_gram(wtilde, factors);
    let y = sample.data().sub(center)?.zip_map(wtilde, |a, b| a * b)?;
    let rhs = multi_mode_product(&y, factors, None)?;
    let gu = g.matvec(previous.as_slice())?;
    let r: Vec<f64> = rhs.as_slice().iter().zip(&gu).map(|(a, b)| a - b).collect();
    let step = solve_psd(&g, &r)?;
    let data = previous
        .as_slice()
        .iter()
        .zip(step)
        .map(|(u, d)| u + d)
        .collect();
    Ok((DenseTensor::from_vec(previous.shape(), data)?, false))
}

/// Weighted per-cell center update. Cells whose weights sum to zero keep
/// their previous value; their count is returned.
pub fn update_center(
    samples: &[TensorSample],
    factors: &[Matrix],
    cores: &[DenseTensor],
    weights: &[DenseTensor],
    previous: &DenseTensor,
) -> Result<(DenseTensor, usize)> {
    let len = previous.len();
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; len];
    for ((s, u), w) in samples.iter().zip(cores).zip(weights) {
        let w = w.as_slice();
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let e = multi_mode_expand(u, factors, None)?;
        for i in 0..len {
            let wi = w[i];
            if wi != 0.0 {
                num[i] += wi * (s.data().as_slice()[i] - e.as_slice()[i]);
                den[i] += wi;
            }
        }
    }
    let mut zero = 0;
    let data = (0..len)
        .map(|i| {
            if den[i] > 0.0 {
                num[i] / den[i]
            } else {
                zero += 1;
                previous.as_slice()[i]
            }
        })
        .collect();
    if zero > 0 {
        log::warn!("{zero} cells have zero total weight; keeping their previous center");
    }
    Ok((DenseTensor::from_vec(previous.shape(), data)?, zero))
}
