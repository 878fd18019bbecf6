//! Rank suggestions from cumulative mode-wise eigenvalue curves of the
//! screened and imputed tensors.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::SymmetricEigen;
use crate::mpca::{mean_tensor, mode_scatter};
use crate::sample::{row_to_tensor, stack_samples, validate_samples, TensorSample};
use crate::screen::{screen, select_clean_subset, ScreenConfig};
use crate::tensor::DenseTensor;

/// Eigenvalues below this fraction of the largest one count as zero.
pub const ZERO_EIGEN_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RankSelection {
    /// Per mode, eigenvalues of the mode scatter in decreasing order
    /// (negative round-off clamped to 0).
    pub eigenvalues: Vec<Vec<f64>>,
    /// Per mode, `Q(K) = sum_{k<=K} lambda_k / sum_k lambda_k` for `K = 1..=P`.
    pub cumulative: Vec<Vec<f64>>,
    pub threshold: f64,
    /// Smallest `K` with `Q(K) >= threshold`.
    pub threshold_ranks: Vec<usize>,
    /// `K` maximizing `lambda_K / lambda_{K+1}`.
    pub elbow_ranks: Vec<usize>,
    /// Number of imputed tensors the curves were computed from.
    pub n_used: usize,
}

impl RankSelection {
    /// The ranks reported as the suggestion (the elbow of each curve).
    pub fn suggested(&self) -> &[usize] {
        &self.elbow_ranks
    }
}

/// Smallest `K` whose cumulative fraction reaches `threshold`.
pub fn threshold_rank(cumulative: &[f64], threshold: f64) -> usize {
    let target = threshold * (1.0 - 1e-12);
    cumulative
        .iter()
        .position(|&q| q >= target)
        .map_or(cumulative.len(), |i| i + 1)
}

/// `K` maximizing the eigenvalue ratio `lambda_K / lambda_{K+1}`. A
/// numerically zero `lambda_{K+1}` makes the ratio infinite; the first such
/// `K` wins, as does the first of equal ratios.
pub fn elbow_rank(eigenvalues: &[f64]) -> usize {
    let p = eigenvalues.len();
    if p <= 1 {
        return 1;
    }
    let top = eigenvalues[0];
    if top <= 0.0 {
        return 1;
    }
    let zero = ZERO_EIGEN_RTOL * top;
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..p {
        let (a, b) = (eigenvalues[k - 1], eigenvalues[k]);
        if b <= zero {
            return if a <= zero { best.0 } else { k };
        }
        let ratio = a / b;
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    best.0
}

/// Eigenvalues and cumulative curves of the mode scatters of `tensors`
/// after centering at their mean.
pub fn rank_curves(tensors: &[DenseTensor]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let center = mean_tensor(tensors)?;
    let centered = tensors
        .iter()
        .map(|t| t.sub(&center))
        .collect::<Result<Vec<_>>>()?;
    let mut eigs = Vec::with_capacity(center.order());
    let mut curves = Vec::with_capacity(center.order());
    for mode in 0..center.order() {
        let phi = mode_scatter(&centered, mode)?;
        let values: Vec<f64> = SymmetricEigen::new(&phi)?
            .values
            .into_iter()
            .map(|x| x.max(0.0))
            .collect();
        let total: f64 = values.iter().sum();
        let mut acc = 0.0;
        let curve = values
            .iter()
            .map(|&x| {
                acc += x;
                if total > 0.0 {
                    acc / total
                } else {
                    1.0
                }
            })
            .collect();
        eigs.push(values);
        curves.push(curve);
    }
    Ok((eigs, curves))
}

/// Screens the samples, keeps the cleanest `ceil(0.75 N)` imputed tensors
/// and derives rank suggestions from their mode scatters.
pub fn select_ranks(
    samples: &[TensorSample],
    threshold: f64,
    config: &ScreenConfig,
) -> Result<RankSelection> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "rank threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let shape = validate_samples(samples)?;
    let scr = screen(&stack_samples(samples), config)?;
    let subset = select_clean_subset(&scr, samples.len());
    if subset.is_empty() {
        return Err(Error::Screening("every case was flagged".into()));
    }
    let imputed = subset
        .iter()
        .map(|&i| row_to_tensor(&scr.imputed, i, &shape))
        .collect::<Result<Vec<_>>>()?;
    let (eigenvalues, cumulative) = rank_curves(&imputed)?;
    Ok(RankSelection {
        threshold_ranks: cumulative
            .iter()
            .map(|c| threshold_rank(c, threshold))
            .collect(),
        elbow_ranks: eigenvalues.iter().map(|e| elbow_rank(e)).collect(),
        eigenvalues,
        cumulative,
        threshold,
        n_used: imputed.len(),
    })
}
