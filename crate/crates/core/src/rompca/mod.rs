//! Robust multilinear PCA fitted by iteratively reweighted least squares.

mod init;
mod post;
mod steps;

use alloc::format;
use alloc::vec::Vec;

pub use init::{
    cell_scales, choose_candidate, initialize, prepare_candidates, Candidates, Initial,
};
pub use post::{
    first_order_residuals, impute, objective_gradient, orthonormalize, reestimate_center,
    FirstOrderResiduals, Gradient,
};
pub use steps::{
    case_deviation, case_deviations, cell_residuals, compute_weights, fitted_tensor, objective,
    objective_from_residuals, update_center, update_core, update_core_from, update_factor, Weights,
};

use crate::error::{Error, Result};
use crate::mpca::{validate_ranks, MpcaConfig};
use crate::robust::{MScaleSpec, RhoSpec};
use crate::sample::{validate_samples, TensorSample};
use crate::screen::ScreenConfig;
use crate::tensor::{DenseTensor, Matrix};

/// Which parts of the objective are robust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Bounded `rho_1` and `rho_2`.
    Full,
    /// `rho_1(z) = z^2`: robust against whole outlying cases only.
    OnlyCase,
    /// `rho_2(z) = z^2`: robust against outlying cells only.
    OnlyCell,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::OnlyCase, Variant::OnlyCell];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::OnlyCase => "only_case",
            Variant::OnlyCell => "only_cell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RompcaConfig {
    pub ranks: Vec<usize>,
    pub rho1: RhoSpec,
    pub rho2: RhoSpec,
    pub mscale: MScaleSpec,
    pub irls_rel_tol: f64,
    pub irls_max_iter: usize,
    /// Iteration cap for the L1 initialization candidate.
    pub init_max_iter: usize,
    pub variant: Variant,
    pub screen: ScreenConfig,
    pub mpca: MpcaConfig,
    /// Recorded with the model; the fit itself is deterministic.
    pub seed: u64,
}

impl RompcaConfig {
    pub fn new(ranks: &[usize]) -> Self {
        Self {
            ranks: ranks.to_vec(),
            rho1: RhoSpec::tanh(),
            rho2: RhoSpec::tanh(),
            mscale: MScaleSpec::default(),
            irls_rel_tol: 1e-5,
            irls_max_iter: 200,
            init_max_iter: 200,
            variant: Variant::Full,
            screen: ScreenConfig::default(),
            mpca: MpcaConfig::default(),
            seed: 0,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// `(rho_1, rho_2)` after applying the variant.
    pub fn effective_rhos(&self) -> (RhoSpec, RhoSpec) {
        match self.variant {
            Variant::Full => (self.rho1, self.rho2),
            Variant::OnlyCase => (RhoSpec::Square, self.rho2),
            Variant::OnlyCell => (self.rho1, RhoSpec::Square),
        }
    }

    pub fn validate(&self, shape: &[usize]) -> Result<()> {
        validate_ranks(shape, &self.ranks)?;
        if !(self.irls_rel_tol > 0.0) || self.irls_max_iter == 0 || self.init_max_iter == 0 {
            return Err(Error::InvalidConfig(format!(
                "need irls_rel_tol > 0 and positive iteration caps (tol {}, max_iter {}, init_max_iter {})",
                self.irls_rel_tol, self.irls_max_iter, self.init_max_iter
            )));
        }
        Ok(())
    }
}

/// Projection matrices, cores and center of a Tucker-type fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub factors: Vec<Matrix>,
    pub cores: Vec<DenseTensor>,
    pub center: DenseTensor,
}

impl Fit {
    pub fn fitted(&self, n: usize) -> Result<DenseTensor> {
        fitted_tensor(&self.factors, &self.cores[n], &self.center)
    }
}

/// Fixed scales used by the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Scales {
    pub sigma1: DenseTensor,
    pub sigma2: f64,
}

/// Result of an IRLS run.
#[derive(Debug, Clone)]
pub struct IrlsOutput {
    pub fit: Fit,
    /// Weights used in the last core update.
    pub weights: Weights,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Runs IRLS from `start` with frozen scales. When `polish` is set a final
/// core refresh is performed with the last weights, so that the returned
/// weights and cores satisfy the core first-order condition exactly.
pub fn irls(
    samples: &[TensorSample],
    start: Fit,
    scales: &Scales,
    rho1: &RhoSpec,
    rho2: &RhoSpec,
    rel_tol: f64,
    max_iter: usize,
    polish: bool,
) -> Result<IrlsOutput> {
    let Fit {
        mut factors,
        mut cores,
        mut center,
    } = start;
    let (s1, s2) = (&scales.sigma1, scales.sigma2);
    let mut res = cell_residuals(samples, &factors, &cores, &center)?;
    let (mut obj, mut t) = objective_from_residuals(samples, &res, s1, s2, rho1, rho2)?;
    let mut weights = steps::weights_with_t(samples, &res, &t, s1, s2, rho1, rho2)?;
    let mut trace = alloc::vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let full = weights.all_combined();
        for mode in 0..factors.len() {
            factors[mode] = update_factor(samples, &factors, &cores, &center, &full, mode)?;
        }
        cores = samples
            .iter()
            .zip(&weights.cell)
            .zip(&cores)
            .map(|((s, w), u)| update_core_from(s, &factors, &center, w, u).map(|(u, _)| u))
            .collect::<Result<Vec<_>>>()?;
        center = update_center(samples, &factors, &cores, &full, &center)?.0;
        // The factors are only determined up to invertible transforms; left
        // alone their scale drifts and the Gram matrices degrade.
        let o = orthonormalize(&Fit {
            factors,
            cores,
            center,
        })?;
        (factors, cores, center) = (o.factors, o.cores, o.center);
        res = cell_residuals(samples, &factors, &cores, &center)?;
        let prev = obj;
        (obj, t) = objective_from_residuals(samples, &res, s1, s2, rho1, rho2)?;
        weights = steps::weights_with_t(samples, &res, &t, s1, s2, rho1, rho2)?;
        trace.push(obj);
        if !obj.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        if prev <= 0.0 || (prev - obj) <= rel_tol * prev {
            converged = true;
            break;
        }
    }
    if polish {
        cores = samples
            .iter()
            .zip(&weights.cell)
            .zip(&cores)
            .map(|((s, w), u)| update_core_from(s, &factors, &center, w, u).map(|(u, _)| u))
            .collect::<Result<Vec<_>>>()?;
        res = cell_residuals(samples, &factors, &cores, &center)?;
        trace.push(objective_from_residuals(samples, &res, s1, s2, rho1, rho2)?.0);
    }
    Ok(IrlsOutput {
        fit: Fit {
            factors,
            cores,
            center,
        },
        weights,
        trace,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone)]
pub struct RompcaModel {
    pub ranks: Vec<usize>,
    pub factors: Vec<Matrix>,
    pub center: DenseTensor,
    pub cores: Vec<DenseTensor>,
    pub sigma1: DenseTensor,
    pub sigma2: f64,
    /// `W~_n = W_n^cell ⊙ M_n` as used in the final core update.
    pub cell_weights: Vec<DenseTensor>,
    pub case_weights: Vec<f64>,
    pub rho1: RhoSpec,
    pub rho2: RhoSpec,
    pub variant: Variant,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// 1 for the MPCA-on-imputed candidate, 2 for the L1 candidate.
    pub chosen_candidate: u8,
    pub candidate_sigma2: [f64; 2],
    pub seed: u64,
}

impl RompcaModel {
    pub fn n_samples(&self) -> usize {
        self.cores.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.center.shape()
    }

    /// `X^_n = C + U_n x {V}`.
    pub fn reconstruct(&self, n: usize) -> Result<DenseTensor> {
        let core = self.cores.get(n).ok_or(Error::IndexOutOfRange {
            index: n,
            len: self.cores.len(),
        })?;
        fitted_tensor(&self.factors, core, &self.center)
    }

    pub fn reconstruct_all(&self) -> Result<Vec<DenseTensor>> {
        (0..self.n_samples()).map(|n| self.reconstruct(n)).collect()
    }

    /// `W_n`.
    pub fn weights(&self, n: usize) -> DenseTensor {
        self.cell_weights[n].scale(self.case_weights[n])
    }

    pub fn fit(&self) -> Fit {
        Fit {
            factors: self.factors.clone(),
            cores: self.cores.clone(),
            center: self.center.clone(),
        }
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Runs IRLS from a chosen initial fit and finishes the model: the last
/// core refresh, orthonormal factors and the re-estimated center.
pub fn fit_from_initial(
    samples: &[TensorSample],
    initial: &Initial,
    config: &RompcaConfig,
) -> Result<RompcaModel> {
    let (rho1, rho2) = config.effective_rhos();
    let out = irls(
        samples,
        initial.fit.clone(),
        &initial.scales,
        &rho1,
        &rho2,
        config.irls_rel_tol,
        config.irls_max_iter,
        true,
    )?;
    if !out.converged {
        log::warn!(
            "IRLS stopped after {} iterations without meeting the tolerance",
            out.iterations
        );
    }
    let ortho = orthonormalize(&out.fit)?;
    let mut model = RompcaModel {
        ranks: config.ranks.clone(),
        factors: ortho.factors,
        center: ortho.center,
        cores: ortho.cores,
        sigma1: initial.scales.sigma1.clone(),
        sigma2: initial.scales.sigma2,
        cell_weights: out.weights.cell,
        case_weights: out.weights.case,
        rho1,
        rho2,
        variant: config.variant,
        objective_trace: out.trace,
        converged: out.converged,
        iterations: out.iterations,
        chosen_candidate: initial.chosen,
        candidate_sigma2: initial.candidate_sigma2,
        seed: config.seed,
    };
    reestimate_center(&mut model, samples)?;
    Ok(model)
}

/// Full ROMPCA fit: screening-based initialization, IRLS and post-processing.
pub fn irls_fit(samples: &[TensorSample], config: &RompcaConfig) -> Result<RompcaModel> {
    let shape = validate_samples(samples)?;
    config.validate(&shape)?;
    let initial = initialize(samples, config)?;
    fit_from_initial(samples, &initial, config)
}
