//! Post-processing of a fit: orthonormal factors, center re-estimation,
//! imputation, and first-order diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use super::steps::{cell_residuals, compute_weights, objective_from_residuals};
use super::{Fit, RompcaModel, Scales};
use crate::error::{Error, Result};
use crate::linalg::thin_qr;
use crate::robust::RhoSpec;
use crate::sample::TensorSample;
use crate::tensor::{
    frobenius_norm, mode_expand, multi_mode_expand, multi_mode_product, unfold, DenseTensor, Matrix,
};

/// Replaces every `V^(l)` by the `Q` of its thin QR factorization and moves
/// `R` into the cores, leaving all fitted tensors unchanged.
pub fn orthonormalize(fit: &Fit) -> Result<Fit> {
    let mut factors = Vec::with_capacity(fit.factors.len());
    let mut cores = fit.cores.clone();
    for (mode, v) in fit.factors.iter().enumerate() {
        let (q, r) = thin_qr(v)?;
        for u in cores.iter_mut() {
            *u = mode_expand(u, &r, mode)?;
        }
        factors.push(q);
    }
    Ok(Fit {
        factors,
        cores,
        center: fit.center.clone(),
    })
}

/// Moves the center to the projection of the weighted mean onto the affine
/// fit, adjusting cores so that reconstructions stay the same. Requires
/// orthonormal factors.
pub fn reestimate_center(model: &mut RompcaModel, samples: &[TensorSample]) -> Result<()> {
    if samples.len() != model.n_samples() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.n_samples()],
            found: vec![samples.len()],
        });
    }
    let len = model.center.len();
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; len];
    for (n, s) in samples.iter().enumerate() {
        s.data().check_same_shape(&model.center)?;
        let w = model.weights(n);
        for i in 0..len {
            let wi = w.as_slice()[i];
            if wi != 0.0 {
                num[i] += wi * s.data().as_slice()[i];
                den[i] += wi;
            }
        }
    }
    let mut zero = 0;
    let shift: Vec<f64> = (0..len)
        .map(|i| {
            if den[i] > 0.0 {
                num[i] / den[i] - model.center.as_slice()[i]
            } else {
                zero += 1;
                0.0
            }
        })
        .collect();
    if zero > 0 {
        log::warn!("{zero} cells have zero total weight; their weighted mean uses the old center");
    }
    let shift = DenseTensor::from_vec(model.center.shape(), shift)?;
    let u0 = multi_mode_product(&shift, &model.factors, None)?;
    model.center = model
        .center
        .add(&multi_mode_expand(&u0, &model.factors, None)?)?;
    for u in model.cores.iter_mut() {
        *u = u.sub(&u0)?;
    }
    Ok(())
}

/// `X^_n + W~_n ⊙ (X_n - X^_n)`: cells with weight 1 keep their observed
/// value, missing and zero-weight cells take the fitted value.
pub fn impute(model: &RompcaModel, samples: &[TensorSample], n: usize) -> Result<DenseTensor> {
    let s = samples.get(n).ok_or(Error::IndexOutOfRange {
        index: n,
        len: samples.len(),
    })?;
    let xhat = model.reconstruct(n)?;
    let w = &model.cell_weights[n];
    let data = xhat
        .as_slice()
        .iter()
        .zip(s.data().as_slice())
        .zip(w.as_slice())
        .map(|((&f, &x), &wi)| {
            if wi == 1.0 {
                x
            } else if wi == 0.0 {
                f
            } else {
                f + wi * (x - f)
            }
        })
        .collect();
    DenseTensor::from_vec(xhat.shape(), data)
}

/// Gradient of the objective with respect to every parameter block.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub factors: Vec<Matrix>,
    pub cores: Vec<DenseTensor>,
    pub center: DenseTensor,
}

/// Analytic gradient of the objective at fixed scales.
pub fn objective_gradient(
    samples: &[TensorSample],
    fit: &Fit,
    scales: &Scales,
    rho1: &RhoSpec,
    rho2: &RhoSpec,
) -> Result<Gradient> {
    let res = cell_residuals(samples, &fit.factors, &fit.cores, &fit.center)?;
    let (_, t) =
        objective_from_residuals(samples, &res, &scales.sigma1, scales.sigma2, rho1, rho2)?;
    let m: usize = samples.iter().map(|s| s.observed()).sum();
    let coef = -0.5 / m as f64;
    let weighted: Vec<DenseTensor> = res
        .iter()
        .zip(samples)
        .zip(&t)
        .map(|((r, s), &tn)| {
            let case = rho2.psi_ratio(tn / scales.sigma2);
            let mut g = r.clone();
            for ((v, &mk), &sg) in g
                .as_mut_slice()
                .iter_mut()
                .zip(s.mask().as_slice())
                .zip(scales.sigma1.as_slice())
            {
                *v = if mk == 1.0 {
                    coef * case * rho1.psi_ratio(*v / sg) * *v
                } else {
                    0.0
                };
            }
            g
        })
        .collect();
    let mut center = DenseTensor::zeros(fit.center.shape())?;
    for g in &weighted {
        center = center.add(g)?;
    }
    let cores = weighted
        .iter()
        .map(|g| multi_mode_product(g, &fit.factors, None))
        .collect::<Result<Vec<_>>>()?;
    let factors = (0..fit.factors.len())
        .map(|mode| factor_contraction(&weighted, fit, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(Gradient {
        factors,
        cores,
        center,
    })
}

// sum_n G_n(mode) A_n(mode)^T with A_n = U_n x_{-mode} {V}
fn factor_contraction(g: &[DenseTensor], fit: &Fit, mode: usize) -> Result<Matrix> {
    let v = &fit.factors[mode];
    let mut acc = Matrix::zeros(v.rows(), v.cols());
    for (gn, u) in g.iter().zip(&fit.cores) {
        let a = unfold(&multi_mode_expand(u, &fit.factors, Some(mode))?, mode)?;
        let prod = unfold(gn, mode)?.matmul(&a.transpose())?;
        for (x, y) in acc.as_mut_slice().iter_mut().zip(prod.as_slice()) {
            *x += y;
        }
    }
    Ok(acc)
}

/// Scaled norms of the first-order conditions at the model's current fit.
#[derive(Debug, Clone)]
pub struct FirstOrderResiduals {
    /// One entry per mode.
    pub factors: Vec<f64>,
    /// Largest over samples (core condition uses `W~_n`).
    pub cores: f64,
    pub center: f64,
}

impl FirstOrderResiduals {
    pub fn max(&self) -> f64 {
        self.factors
            .iter()
            .copied()
            .fold(self.cores.max(self.center), f64::max)
    }
}

/// Evaluates the first-order conditions with weights recomputed from the
/// model's residuals. Each condition is divided by the norm of the same
/// expression with the residual replaced by `X_n - C`.
pub fn first_order_residuals(
    model: &RompcaModel,
    samples: &[TensorSample],
) -> Result<FirstOrderResiduals> {
    let fit = model.fit();
    let res = cell_residuals(samples, &fit.factors, &fit.cores, &fit.center)?;
    let w = compute_weights(
        samples,
        &res,
        &model.sigma1,
        model.sigma2,
        &model.rho1,
        &model.rho2,
    )?;
    let floor = f64::MIN_POSITIVE;
    let mut centered_w = Vec::with_capacity(samples.len());
    let mut res_w = Vec::with_capacity(samples.len());
    for (n, s) in samples.iter().enumerate() {
        let wn = w.combined(n);
        let y = s.data().sub(&fit.center)?;
        centered_w.push(y.zip_map(&wn, |a, b| a * b)?);
        res_w.push(res[n].zip_map(&wn, |a, b| a * b)?);
    }

    let mut center = DenseTensor::zeros(fit.center.shape())?;
    let mut center_scale = 0.0;
    for (r, y) in res_w.iter().zip(&centered_w) {
        center = center.add(r)?;
        center_scale += frobenius_norm(y);
    }
    let center_res = frobenius_norm(&center) / center_scale.max(floor);

    let mut factors = Vec::with_capacity(fit.factors.len());
    for mode in 0..fit.factors.len() {
        let mut acc = Matrix::zeros(fit.factors[mode].rows(), fit.factors[mode].cols());
        let mut scale = 0.0;
        for ((r, y), u) in res_w.iter().zip(&centered_w).zip(&fit.cores) {
            let a = multi_mode_expand(u, &fit.factors, Some(mode))?;
            let prod = unfold(r, mode)?.matmul(&unfold(&a, mode)?.transpose())?;
            for (x, p) in acc.as_mut_slice().iter_mut().zip(prod.as_slice()) {
                *x += p;
            }
            scale += frobenius_norm(y) * frobenius_norm(&a);
        }
        factors.push(acc.frobenius_norm() / scale.max(floor));
    }

    let vnorm: f64 = fit.factors.iter().map(|v| v.frobenius_norm()).product();
    let mut cores = 0.0f64;
    for (n, s) in samples.iter().enumerate() {
        let wt = &w.cell[n];
        let r = res[n].zip_map(wt, |a, b| a * b)?;
        let y = s.data().sub(&fit.center)?.zip_map(wt, |a, b| a * b)?;
        let e = frobenius_norm(&multi_mode_product(&r, &fit.factors, None)?);
        let scale = frobenius_norm(&y) * vnorm;
        if scale > 0.0 {
            cores = cores.max(e / scale);
        }
    }
    Ok(FirstOrderResiduals {
        factors,
        cores,
        center: center_res,
    })
}
