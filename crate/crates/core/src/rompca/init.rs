//! Two-candidate initialization and the M-scale estimates of the fixed scales.

use alloc::vec::Vec;

use super::steps::{case_deviations, cell_residuals, update_core};
use super::{irls, Fit, RompcaConfig, Scales};
use crate::error::{Error, Result};
use crate::mpca::mpca_fit;
use crate::robust::{median, mscale, MScaleSpec, RhoSpec};
use crate::sample::{row_to_tensor, stack_samples, validate_samples, TensorSample};
use crate::screen::{screen, select_clean_subset, ScreenResult};
use crate::tensor::DenseTensor;

/// Both initialization candidates with their cellwise scales. Independent of
/// the variant, so one set can serve several fits.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub screen: ScreenResult,
    pub subset: Vec<usize>,
    pub fits: [Fit; 2],
    pub residuals: [Vec<DenseTensor>; 2],
    pub sigma1: [DenseTensor; 2],
    pub candidate2_iterations: usize,
    pub candidate2_converged: bool,
}

/// The chosen starting point for IRLS.
#[derive(Debug, Clone)]
pub struct Initial {
    pub fit: Fit,
    pub scales: Scales,
    pub chosen: u8,
    pub candidate_sigma2: [f64; 2],
}

fn scale_or_none(values: &[f64], spec: &MScaleSpec) -> Result<Option<f64>> {
    match mscale(values, spec) {
        Ok(s) => Ok(Some(s)),
        Err(Error::AllZero) => Ok(None),
        Err(Error::NonConvergence { sigma, .. }) if sigma.is_finite() && sigma > 0.0 => {
            log::warn!("M-scale iteration hit its cap; using last iterate {sigma:e}");
            Ok(Some(sigma))
        }
        Err(e) => Err(e),
    }
}

fn floor_from(positive: &[f64]) -> f64 {
    if positive.is_empty() {
        1.0
    } else {
        1e-3 * median(positive)
    }
}

/// Per-cell M-scales of the residuals across samples (observed cells only).
/// Degenerate cells are floored at `1e-3` times the median positive scale
/// (1 when there is none). Returns the scales and the number of floored cells.
pub fn cell_scales(
    samples: &[TensorSample],
    residuals: &[DenseTensor],
    spec: &MScaleSpec,
) -> Result<(DenseTensor, usize)> {
    let first = residuals.first().ok_or(Error::Empty("residual list"))?;
    let len = first.len();
    let mut raw: Vec<Option<f64>> = Vec::with_capacity(len);
    let mut buf = Vec::with_capacity(samples.len());
    for c in 0..len {
        buf.clear();
        for (s, r) in samples.iter().zip(residuals) {
            if s.is_observed(c) {
                buf.push(r.as_slice()[c]);
            }
        }
        raw.push(if buf.is_empty() {
            None
        } else {
            scale_or_none(&buf, spec)?
        });
    }
    let positive: Vec<f64> = raw.iter().flatten().copied().collect();
    let floor = floor_from(&positive);
    let degenerate = raw.iter().filter(|s| s.is_none()).count();
    if degenerate > 0 {
        log::warn!("{degenerate} cells have degenerate residual scale; floored at {floor:e}");
    }
    let data = raw.into_iter().map(|s| s.unwrap_or(floor)).collect();
    Ok((DenseTensor::from_vec(first.shape(), data)?, degenerate))
}

/// M-scale of the casewise deviations, floored like [`cell_scales`].
pub(crate) fn case_scale(t: &[f64], spec: &MScaleSpec) -> Result<f64> {
    match scale_or_none(t, spec)? {
        Some(s) => Ok(s),
        None => {
            let positive: Vec<f64> = t.iter().copied().filter(|&x| x > 0.0).collect();
            let floor = floor_from(&positive);
            log::warn!("casewise deviations have degenerate scale; floored at {floor:e}");
            Ok(floor)
        }
    }
}

/// Screens the data, fits MPCA on the cleanest imputed tensors (candidate 1)
/// and refines it with an L1-type IRLS (candidate 2).
pub fn prepare_candidates(samples: &[TensorSample], config: &RompcaConfig) -> Result<Candidates> {
    let shape = validate_samples(samples)?;
    config.validate(&shape)?;
    let n = samples.len();
    let x = stack_samples(samples);
    let scr = screen(&x, &config.screen)?;
    let subset = select_clean_subset(&scr, n);
    if subset.is_empty() {
        return Err(Error::Screening("every case was flagged".into()));
    }
    let imputed = subset
        .iter()
        .map(|&i| row_to_tensor(&scr.imputed, i, &shape))
        .collect::<Result<Vec<_>>>()?;
    let mp = mpca_fit(&imputed, &config.ranks, &config.mpca)?;

    let mut cores = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        let mut w = s.mask().clone();
        for (c, v) in w.as_mut_slice().iter_mut().enumerate() {
            if scr.is_flagged(i, c) {
                *v = 0.0;
            }
        }
        let (u, empty) = update_core(s, &mp.factors, &mp.center, &w)?;
        if empty {
            log::warn!("sample {i} has no unflagged observed cells; its initial core is zero");
        }
        cores.push(u);
    }
    let fit1 = Fit {
        factors: mp.factors,
        cores,
        center: mp.center,
    };
    let res1 = cell_residuals(samples, &fit1.factors, &fit1.cores, &fit1.center)?;
    let (s1, _) = cell_scales(samples, &res1, &config.mscale)?;

    let out = irls(
        samples,
        fit1.clone(),
        &Scales {
            sigma1: s1.clone(),
            sigma2: 1.0,
        },
        &RhoSpec::Abs,
        &RhoSpec::Square,
        config.irls_rel_tol,
        config.init_max_iter,
        false,
    )?;
    let fit2 = out.fit;
    let res2 = cell_residuals(samples, &fit2.factors, &fit2.cores, &fit2.center)?;
    let (s2, _) = cell_scales(samples, &res2, &config.mscale)?;
    Ok(Candidates {
        screen: scr,
        subset,
        fits: [fit1, fit2],
        residuals: [res1, res2],
        sigma1: [s1, s2],
        candidate2_iterations: out.iterations,
        candidate2_converged: out.converged,
    })
}

/// Picks the candidate whose casewise deviations have the smaller M-scale
/// under the configured `rho_1`; near-ties go to candidate 2.
pub fn choose_candidate(
    samples: &[TensorSample],
    candidates: &Candidates,
    config: &RompcaConfig,
) -> Result<Initial> {
    let (rho1, _) = config.effective_rhos();
    let mut s2 = [0.0; 2];
    for (c, slot) in s2.iter_mut().enumerate() {
        let t = case_deviations(
            samples,
            &candidates.residuals[c],
            &candidates.sigma1[c],
            &rho1,
        )?;
        *slot = case_scale(&t, &config.mscale)?;
    }
    let first = s2[0] < s2[1] && (s2[1] - s2[0]) > 1e-12 * s2[1];
    let c = if first { 0 } else { 1 };
    Ok(Initial {
        fit: candidates.fits[c].clone(),
        scales: Scales {
            sigma1: candidates.sigma1[c].clone(),
            sigma2: s2[c],
        },
        chosen: c as u8 + 1,
        candidate_sigma2: s2,
    })
}

pub fn initialize(samples: &[TensorSample], config: &RompcaConfig) -> Result<Initial> {
    let cands = prepare_candidates(samples, config)?;
    choose_candidate(samples, &cands, config)
}
