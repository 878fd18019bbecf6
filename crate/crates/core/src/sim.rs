//! Synthetic Tucker-model data, contamination, missingness and the
//! four-method benchmark measured by the MSE on regular cells.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::SymmetricEigen;
use crate::mpca::{mpca_fit, mpca_reconstruct, MpcaConfig};
use crate::robust::median;
use crate::rompca::{
    choose_candidate, fit_from_initial, prepare_candidates, RompcaConfig, Variant,
};
use crate::sample::TensorSample;
use crate::tensor::{multi_mode_expand, DenseTensor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Clean,
    Cellwise,
    Casewise,
    Combined,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Clean,
        Scenario::Cellwise,
        Scenario::Casewise,
        Scenario::Combined,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Clean => "clean",
            Scenario::Cellwise => "cellwise",
            Scenario::Casewise => "casewise",
            Scenario::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    /// `gamma_case / gamma_cell`.
    pub fn case_multiplier(&self) -> f64 {
        match self {
            Scenario::Combined => 6.0,
            _ => 3.0,
        }
    }
}

/// How the core variance factor is formed for core entry `(p_1, ..., p_L)`
/// (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecayReading {
    /// `((P_1 P_2 ... P_L) / (p_1 p_2 ... p_L))^exponent`.
    Product,
    /// `((P_1 + ... + P_L) / (p_1 + ... + p_L))^exponent`.
    Sum,
}

impl DecayReading {
    pub fn name(&self) -> &'static str {
        match self {
            DecayReading::Product => "product",
            DecayReading::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [DecayReading::Product, DecayReading::Sum]
            .into_iter()
            .find(|x| x.name() == s)
    }
}

/// Which tensors the per-position standard deviation `s` of the cellwise
/// replacement value is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SdSource {
    /// The uncontaminated data.
    Clean,
    /// The data as they stand when the cellwise step runs (after any
    /// casewise replacement).
    Current,
}

impl SdSource {
    pub fn name(&self) -> &'static str {
        match self {
            SdSource::Clean => "clean",
            SdSource::Current => "current",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SdSource::Clean, SdSource::Current]
            .into_iter()
            .find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    /// `(30, 20, 5)` with ranks `(8, 6, 2)`.
    I,
    /// `(15, 10, 5)` with ranks `(4, 3, 2)`.
    II,
}

impl Setting {
    pub fn dims(&self) -> [usize; 3] {
        match self {
            Setting::I => [30, 20, 5],
            Setting::II => [15, 10, 5],
        }
    }

    pub fn ranks(&self) -> [usize; 3] {
        match self {
            Setting::I => [8, 6, 2],
            Setting::II => [4, 3, 2],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "i" | "I" | "1" => Some(Setting::I),
            "ii" | "II" | "2" => Some(Setting::II),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub decay_exponent: f64,
    pub decay: DecayReading,
    pub sd_source: SdSource,
    pub loading_base: f64,
    pub noise_var: f64,
    pub scenario: Scenario,
    pub gamma_grid: Vec<f64>,
    /// `gamma_case / gamma_cell`; `None` takes the scenario's value.
    pub case_multiplier: Option<f64>,
    pub missing_frac: f64,
    pub n_reps: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Desk-scale default: setting (ii), `N = 100`, 20 replications,
    /// `gamma_cell` in `0..=7`.
    pub fn desk(scenario: Scenario) -> Self {
        Self::for_setting(Setting::II, scenario)
    }

    pub fn for_setting(setting: Setting, scenario: Scenario) -> Self {
        Self {
            n: 100,
            dims: setting.dims().to_vec(),
            ranks: setting.ranks().to_vec(),
            decay_exponent: 0.9,
            decay: DecayReading::Product,
            sd_source: SdSource::Clean,
            loading_base: -0.9,
            noise_var: 0.1,
            scenario,
            gamma_grid: (0..=7).map(|g| g as f64).collect(),
            case_multiplier: None,
            missing_frac: 0.0,
            n_reps: 20,
            seed: 0,
        }
    }

    pub fn case_multiplier(&self) -> f64 {
        self.case_multiplier
            .unwrap_or_else(|| self.scenario.case_multiplier())
    }

    pub fn validate(&self) -> Result<()> {
        crate::mpca::validate_ranks(&self.dims, &self.ranks)?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 5 {
            return bad(format!("need at least 5 samples, got {}", self.n));
        }
        if self.gamma_grid.is_empty()
            || self
                .gamma_grid
                .iter()
                .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return bad("gamma grid must be nonempty, finite and nonnegative".to_string());
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return bad(format!(
                "missing fraction must lie in [0, 1), got {}",
                self.missing_frac
            ));
        }
        if !(self.noise_var >= 0.0) || self.n_reps == 0 {
            return bad("noise variance must be >= 0 and n_reps >= 1".to_string());
        }
        if matches!(self.scenario, Scenario::Casewise | Scenario::Combined) {
            for (&p, &k) in self.dims.iter().zip(&self.ranks) {
                if 2 * k + 1 > p {
                    return bad(format!(
                        "casewise outliers need K+1 odd-indexed eigenvectors: K={k} with P={p}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A generated dataset with its bookkeeping.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub samples: Vec<TensorSample>,
    /// 1 on regular cells, 0 on casewise outliers, planted cells and missing cells.
    pub delta: Vec<DenseTensor>,
    /// Uncontaminated tensors including noise.
    pub clean: Vec<DenseTensor>,
    pub case_outliers: Vec<usize>,
    /// `(sample, linear cell)` of cellwise replacements.
    pub cell_outliers: Vec<(usize, usize)>,
    pub missing: Vec<(usize, usize)>,
}

impl SimDataset {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.samples[0].shape()
    }

    /// Number of cells with `delta = 0`.
    pub fn irregular_count(&self) -> usize {
        self.delta
            .iter()
            .map(|d| d.as_slice().iter().filter(|&&x| x == 0.0).count())
            .sum()
    }
}

/// `sigma_ij = base^|i - j|`.
pub fn loading_covariance(p: usize, base: f64) -> Matrix {
    Matrix::from_fn(p, p, |i, j| libm::pow(base, i.abs_diff(j) as f64))
}

/// Eigenvectors of [`loading_covariance`] in decreasing eigenvalue order.
pub fn loading_eigenvectors(p: usize, base: f64) -> Result<Matrix> {
    Ok(SymmetricEigen::new(&loading_covariance(p, base))?.vectors)
}

fn select_columns(m: &Matrix, cols: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), cols.len(), |i, j| m.get(i, cols[j]))
}

/// True projection matrices: leading `K_l` eigenvectors.
pub fn true_factors(dims: &[usize], ranks: &[usize], base: f64) -> Result<Vec<Matrix>> {
    dims.iter()
        .zip(ranks)
        .map(|(&p, &k)| {
            let e = loading_eigenvectors(p, base)?;
            Ok(select_columns(&e, &(0..k).collect::<Vec<_>>()))
        })
        .collect()
}

/// Outlier projection matrices: eigenvectors 1, 3, ..., 2K+1 (1-based).
pub fn outlier_factors(dims: &[usize], ranks: &[usize], base: f64) -> Result<Vec<Matrix>> {
    dims.iter()
        .zip(ranks)
        .map(|(&p, &k)| {
            if 2 * k + 1 > p {
                return Err(Error::RankOutOfRange {
                    mode: 0,
                    rank: 2 * k + 1,
                    dim: p,
                });
            }
            let e = loading_eigenvectors(p, base)?;
            Ok(select_columns(
                &e,
                &(0..=k).map(|j| 2 * j).collect::<Vec<_>>(),
            ))
        })
        .collect()
}

/// Core tensor of the outlier model: ones where every 1-based index is odd.
pub fn outlier_core(ranks: &[usize]) -> Result<DenseTensor> {
    let shape: Vec<usize> = ranks.iter().map(|k| k + 1).collect();
    DenseTensor::from_fn(&shape, |idx| {
        if idx.iter().all(|i| i % 2 == 0) {
            1.0
        } else {
            0.0
        }
    })
}

/// Standard deviation multiplier of each core entry.
pub fn core_decay(
    dims: &[usize],
    ranks: &[usize],
    reading: DecayReading,
    exponent: f64,
) -> Result<DenseTensor> {
    let (num_p, num_s) = (
        dims.iter().product::<usize>() as f64,
        dims.iter().sum::<usize>() as f64,
    );
    DenseTensor::from_fn(ranks, |idx| {
        let ratio = match reading {
            DecayReading::Product => num_p / idx.iter().map(|&i| (i + 1) as f64).product::<f64>(),
            DecayReading::Sum => num_s / idx.iter().map(|&i| (i + 1) as f64).sum::<f64>(),
        };
        libm::pow(ratio, exponent)
    })
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream of a replication.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

const STREAM_BASE: u64 = 1;
const STREAM_CASE: u64 = 2;
const STREAM_CELL: u64 = 3;
const STREAM_MISSING: u64 = 4;

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], sd: f64) -> Result<DenseTensor> {
    DenseTensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// Clean data from the Tucker model with zero center.
pub fn generate(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimDataset> {
    crate::mpca::validate_ranks(&config.dims, &config.ranks)?;
    let factors = true_factors(&config.dims, &config.ranks, config.loading_base)?;
    let decay = core_decay(
        &config.dims,
        &config.ranks,
        config.decay,
        config.decay_exponent,
    )?;
    let sd = libm::sqrt(config.noise_var);
    let mut clean = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let core = gaussian(rng, &config.ranks, 1.0)?.zip_map(&decay, |a, b| a * b)?;
        let signal = multi_mode_expand(&core, &factors, None)?;
        clean.push(signal.add(&gaussian(rng, &config.dims, sd)?)?);
    }
    let ones = DenseTensor::filled(&config.dims, 1.0)?;
    Ok(SimDataset {
        samples: clean.iter().cloned().map(TensorSample::complete).collect(),
        delta: vec![ones; config.n],
        clean,
        case_outliers: Vec::new(),
        cell_outliers: Vec::new(),
        missing: Vec::new(),
    })
}

fn replace_data(ds: &mut SimDataset, n: usize, data: DenseTensor) -> Result<()> {
    ds.samples[n] = TensorSample::new(data, ds.samples[n].mask().clone())?;
    Ok(())
}

/// Per-position sample standard deviation across samples.
pub fn cell_sd(tensors: &[DenseTensor]) -> Result<DenseTensor> {
    let first = tensors.first().ok_or(Error::Empty("tensor list"))?;
    let n = tensors.len() as f64;
    let mut out = DenseTensor::zeros(first.shape())?;
    for c in 0..first.len() {
        let mean = tensors.iter().map(|t| t.as_slice()[c]).sum::<f64>() / n;
        let ss: f64 = tensors
            .iter()
            .map(|t| (t.as_slice()[c] - mean) * (t.as_slice()[c] - mean))
            .sum();
        out.as_mut_slice()[c] = if n > 1.0 {
            libm::sqrt(ss / (n - 1.0))
        } else {
            0.0
        };
    }
    Ok(out)
}

/// Replaces `floor(frac * |rows| * D)` cells of the given rows, chosen
/// uniformly without replacement, by `gamma * s`, with `s` the per-position
/// standard deviation across all samples.
pub fn contaminate_cellwise(
    ds: &mut SimDataset,
    gamma: f64,
    frac: f64,
    rows: &[usize],
    source: SdSource,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let s = match source {
        SdSource::Clean => cell_sd(&ds.clean)?,
        SdSource::Current => {
            let current: Vec<DenseTensor> = ds.samples.iter().map(|x| x.data().clone()).collect();
            cell_sd(&current)?
        }
    };
    let d = s.len();
    let total = rows.len() * d;
    let count = (frac * total as f64) as usize;
    if count == 0 {
        return Ok(());
    }
    let mut picks: Vec<(usize, usize)> = sample_indices(rng, total, count)
        .into_iter()
        .map(|k| (rows[k / d], k % d))
        .collect();
    picks.sort_unstable();
    for &(n, c) in &picks {
        let mut data = ds.samples[n].data().clone();
        data.as_mut_slice()[c] = gamma * s.as_slice()[c];
        replace_data(ds, n, data)?;
        ds.delta[n].as_mut_slice()[c] = 0.0;
    }
    ds.cell_outliers.extend(picks);
    ds.cell_outliers.sort_unstable();
    Ok(())
}

/// Replaces the given samples by `gamma_case * (U* x {V*} + E)` with fresh
/// noise.
pub fn contaminate_casewise(
    ds: &mut SimDataset,
    gamma_case: f64,
    cases: &[usize],
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let vstar = outlier_factors(&config.dims, &config.ranks, config.loading_base)?;
    let ustar = outlier_core(&config.ranks)?;
    let structured = multi_mode_expand(&ustar, &vstar, None)?;
    let sd = libm::sqrt(config.noise_var);
    for &n in cases {
        let x = structured
            .add(&gaussian(rng, &config.dims, sd)?)?
            .scale(gamma_case);
        replace_data(ds, n, x)?;
        ds.delta[n] = DenseTensor::zeros(&config.dims)?;
    }
    ds.case_outliers.extend_from_slice(cases);
    ds.case_outliers.sort_unstable();
    Ok(())
}

/// Marks `floor(frac * |rows| * D)` cells of the given rows as missing.
/// Samples are never left without an observed cell.
pub fn add_missing(
    ds: &mut SimDataset,
    frac: f64,
    rows: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let d: usize = ds.shape().iter().product();
    let total = rows.len() * d;
    let count = (frac * total as f64) as usize;
    if count == 0 {
        return Ok(());
    }
    let mut picks: Vec<(usize, usize)> = sample_indices(rng, total, count)
        .into_iter()
        .map(|k| (rows[k / d], k % d))
        .collect();
    picks.sort_unstable();
    let mut kept = Vec::with_capacity(picks.len());
    for (n, c) in picks {
        let s = &ds.samples[n];
        if s.observed() == 1 {
            continue;
        }
        let mut mask = s.mask().clone();
        mask.as_mut_slice()[c] = 0.0;
        ds.samples[n] = TensorSample::new(s.data().clone(), mask)?;
        ds.delta[n].as_mut_slice()[c] = 0.0;
        kept.push((n, c));
    }
    ds.missing.extend(kept);
    ds.missing.sort_unstable();
    Ok(())
}

/// The dataset of one benchmark grid point. Positions of outliers and
/// missing cells depend only on `(seed, rep)`; `gamma_cell = 0` yields the
/// uncontaminated data (plus missing cells).
pub fn scenario_dataset(config: &SimConfig, gamma_cell: f64, rep: usize) -> Result<SimDataset> {
    config.validate()?;
    let r = rep as u64;
    let mut ds = generate(config, &mut rng_for(config.seed, &[r, STREAM_BASE]))?;
    let n = config.n;
    let all: Vec<usize> = (0..n).collect();
    if gamma_cell > 0.0 {
        let gamma_case = config.case_multiplier() * gamma_cell;
        let mut case_rng = rng_for(config.seed, &[r, STREAM_CASE]);
        let mut cell_rng = rng_for(config.seed, &[r, STREAM_CELL]);
        match config.scenario {
            Scenario::Clean => {}
            Scenario::Cellwise => contaminate_cellwise(
                &mut ds,
                gamma_cell,
                0.2,
                &all,
                config.sd_source,
                &mut cell_rng,
            )?,
            Scenario::Casewise => {
                let cases: Vec<usize> = (0..n / 5).collect();
                contaminate_casewise(&mut ds, gamma_case, &cases, config, &mut case_rng)?;
            }
            Scenario::Combined => {
                let k = n / 10;
                let cases: Vec<usize> = (0..k).collect();
                contaminate_casewise(&mut ds, gamma_case, &cases, config, &mut case_rng)?;
                contaminate_cellwise(
                    &mut ds,
                    gamma_cell,
                    0.1,
                    &all[k..],
                    config.sd_source,
                    &mut cell_rng,
                )?;
            }
        }
    }
    if config.missing_frac > 0.0 {
        add_missing(
            &mut ds,
            config.missing_frac,
            &all,
            &mut rng_for(config.seed, &[r, STREAM_MISSING]),
        )?;
    }
    Ok(ds)
}

/// Layout of the planted diagnostic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub base: SimConfig,
    pub n_case: usize,
    pub n_clean: usize,
    pub cell_frac: f64,
    pub missing_frac: f64,
    pub gamma_cell: f64,
}

impl PlantedSpec {
    /// 100 tensors of size 15 x 10 x 5: 10 casewise outliers, 10 untouched,
    /// and 10% cellwise outliers plus 1% missing cells in the other 80, at
    /// `gamma_cell = 5`, `gamma_case = 30`.
    pub fn standard(seed: u64) -> Self {
        let mut base = SimConfig::desk(Scenario::Combined);
        base.seed = seed;
        Self {
            base,
            n_case: 10,
            n_clean: 10,
            cell_frac: 0.1,
            missing_frac: 0.01,
            gamma_cell: 5.0,
        }
    }
}

/// Casewise outliers occupy the first `n_case` indices, untouched samples
/// the next `n_clean`.
pub fn planted_dataset(spec: &PlantedSpec) -> Result<SimDataset> {
    let c = &spec.base;
    c.validate()?;
    if spec.n_case + spec.n_clean > c.n {
        return Err(Error::InvalidConfig(
            "more planted and clean cases than samples".into(),
        ));
    }
    let mut ds = generate(c, &mut rng_for(c.seed, &[0, STREAM_BASE]))?;
    let cases: Vec<usize> = (0..spec.n_case).collect();
    contaminate_casewise(
        &mut ds,
        c.case_multiplier() * spec.gamma_cell,
        &cases,
        c,
        &mut rng_for(c.seed, &[0, STREAM_CASE]),
    )?;
    let rest: Vec<usize> = (spec.n_case + spec.n_clean..c.n).collect();
    contaminate_cellwise(
        &mut ds,
        spec.gamma_cell,
        spec.cell_frac,
        &rest,
        c.sd_source,
        &mut rng_for(c.seed, &[0, STREAM_CELL]),
    )?;
    add_missing(
        &mut ds,
        spec.missing_frac,
        &rest,
        &mut rng_for(c.seed, &[0, STREAM_MISSING]),
    )?;
    Ok(ds)
}

/// `sum delta (x - xhat)^2 / sum delta`, with `x` the recorded data.
pub fn mse_regular(ds: &SimDataset, fitted: &[DenseTensor]) -> Result<f64> {
    if fitted.len() != ds.n() {
        return Err(Error::ShapeMismatch {
            expected: vec![ds.n()],
            found: vec![fitted.len()],
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((s, d), f) in ds.samples.iter().zip(&ds.delta).zip(fitted) {
        s.data().check_same_shape(f)?;
        for ((&x, &dl), &xh) in s
            .data()
            .as_slice()
            .iter()
            .zip(d.as_slice())
            .zip(f.as_slice())
        {
            if dl == 1.0 {
                num += (x - xh) * (x - xh);
                den += 1.0;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::NoRegularCells);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mpca,
    OnlyCase,
    OnlyCell,
    Rompca,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Mpca,
        Method::OnlyCase,
        Method::OnlyCell,
        Method::Rompca,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mpca => "mpca",
            Method::OnlyCase => "only_case",
            Method::OnlyCell => "only_cell",
            Method::Rompca => "rompca",
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            Method::Mpca => None,
            Method::OnlyCase => Some(Variant::OnlyCase),
            Method::OnlyCell => Some(Variant::OnlyCell),
            Method::Rompca => Some(Variant::Full),
        }
    }
}

/// One (method, gamma, replication) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub scenario: Scenario,
    pub method: Method,
    pub gamma_cell: f64,
    pub rep: usize,
    /// `None` when the fit failed.
    pub mse: Option<f64>,
    pub converged: bool,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Methods run for a configuration: MPCA only without missing cells.
pub fn methods_for(config: &SimConfig) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| *m != Method::Mpca || config.missing_frac == 0.0)
        .collect()
}

/// Every `(gamma index, replication)` pair in a fixed order.
pub fn tasks(config: &SimConfig) -> Vec<(usize, usize)> {
    (0..config.gamma_grid.len())
        .flat_map(|g| (0..config.n_reps).map(move |r| (g, r)))
        .collect()
}

/// Runs every method on one grid point. `clock` returns seconds from an
/// arbitrary origin; without it all timings are 0. Fit failures are recorded,
/// not propagated.
pub fn run_task(
    config: &SimConfig,
    gamma_index: usize,
    rep: usize,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<Vec<BenchRecord>> {
    let gamma = *config
        .gamma_grid
        .get(gamma_index)
        .ok_or(Error::IndexOutOfRange {
            index: gamma_index,
            len: config.gamma_grid.len(),
        })?;
    let ds = scenario_dataset(config, gamma, rep)?;
    let now = || clock.map_or(0.0, |c| c());
    let record = |method, outcome: Result<(f64, bool)>, seconds| {
        let (mse, converged, error) = match outcome {
            Ok((m, c)) => (Some(m), c, None),
            Err(e) => (None, false, Some(e.to_string())),
        };
        BenchRecord {
            scenario: config.scenario,
            method,
            gamma_cell: gamma,
            rep,
            mse,
            converged,
            seconds,
            error,
        }
    };
    let mut out = Vec::new();
    let methods = methods_for(config);
    if methods.contains(&Method::Mpca) {
        let t0 = now();
        let outcome = fit_mpca(&ds, &config.ranks);
        out.push(record(Method::Mpca, outcome, now() - t0));
    }
    let base = {
        let mut c = RompcaConfig::new(&config.ranks);
        c.seed = derive_seed(config.seed, &[rep as u64]);
        c
    };
    let t0 = now();
    let cands = prepare_candidates(&ds.samples, &base);
    let shared = now() - t0;
    for method in methods.into_iter().filter(|m| *m != Method::Mpca) {
        let t0 = now();
        let outcome = match &cands {
            Ok(c) => fit_variant(&ds, c, &base, method.variant().expect("robust method")),
            Err(e) => Err(e.clone()),
        };
        out.push(record(method, outcome, shared + now() - t0));
    }
    Ok(out)
}

fn fit_mpca(ds: &SimDataset, ranks: &[usize]) -> Result<(f64, bool)> {
    let data: Vec<DenseTensor> = ds.samples.iter().map(|s| s.data().clone()).collect();
    let config = MpcaConfig::default();
    let m = mpca_fit(&data, ranks, &config)?;
    let fitted = (0..ds.n())
        .map(|n| mpca_reconstruct(&m, n))
        .collect::<Result<Vec<_>>>()?;
    Ok((mse_regular(ds, &fitted)?, m.iterations < config.max_iter))
}

fn fit_variant(
    ds: &SimDataset,
    cands: &crate::rompca::Candidates,
    base: &RompcaConfig,
    variant: Variant,
) -> Result<(f64, bool)> {
    let config = base.clone().with_variant(variant);
    let initial = choose_candidate(&ds.samples, cands, &config)?;
    let model = fit_from_initial(&ds.samples, &initial, &config)?;
    Ok((mse_regular(ds, &model.reconstruct_all()?)?, model.converged))
}

/// Runs all tasks sequentially.
pub fn run_benchmark(
    config: &SimConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<Vec<BenchRecord>> {
    config.validate()?;
    let mut out = Vec::new();
    for (g, r) in tasks(config) {
        out.extend(run_task(config, g, r, clock)?);
    }
    Ok(out)
}

/// Median MSE of one (scenario, method, gamma) point.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianRow {
    pub scenario: Scenario,
    pub method: Method,
    pub gamma_cell: f64,
    pub median_mse: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Medians over replications, ordered by scenario, method and gamma. The
/// result does not depend on the order of `records`.
pub fn medians(records: &[BenchRecord]) -> Vec<MedianRow> {
    let mut keys: Vec<(Scenario, Method, u64)> = records
        .iter()
        .map(|r| (r.scenario, r.method, r.gamma_cell.to_bits()))
        .collect();
    keys.sort_by(|a, b| {
        (a.0, a.1)
            .cmp(&(b.0, b.1))
            .then(f64::from_bits(a.2).total_cmp(&f64::from_bits(b.2)))
    });
    keys.dedup();
    keys.into_iter()
        .map(|(scenario, method, g)| {
            let mut ok = Vec::new();
            let mut failed = 0;
            for r in records.iter().filter(|r| {
                r.scenario == scenario && r.method == method && r.gamma_cell.to_bits() == g
            }) {
                match r.mse {
                    Some(m) => ok.push(m),
                    None => failed += 1,
                }
            }
            ok.sort_by(f64::total_cmp);
            MedianRow {
                scenario,
                method,
                gamma_cell: f64::from_bits(g),
                median_mse: if ok.is_empty() { f64::NAN } else { median(&ok) },
                n_ok: ok.len(),
                n_failed: failed,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen as NaEigen};

    fn small(scenario: Scenario) -> SimConfig {
        let mut c = SimConfig::desk(scenario);
        c.n = 20;
        c.seed = 9;
        c
    }

    #[test]
    fn noiseless_model_is_exact_for_mpca() {
        let mut c = small(Scenario::Clean);
        c.noise_var = 0.0;
        let ds = scenario_dataset(&c, 0.0, 0).unwrap();
        let data: Vec<_> = ds.samples.iter().map(|s| s.data().clone()).collect();
        let m = mpca_fit(&data, &c.ranks, &MpcaConfig::default()).unwrap();
        for (n, x) in data.iter().enumerate() {
            let scale = x.as_slice().iter().fold(1.0f64, |a, v| a.max(v.abs()));
            assert!(mpca_reconstruct(&m, n).unwrap().max_abs_diff(x) <= 1e-10 * scale);
        }
    }

    #[test]
    fn first_core_entry_has_largest_variance() {
        for reading in [DecayReading::Product, DecayReading::Sum] {
            let d = core_decay(&[15, 10, 5], &[4, 3, 2], reading, 0.9).unwrap();
            let max = d.as_slice().iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(d.as_slice()[0], max);
            assert!(d.as_slice()[1..].iter().all(|&x| x < max));
        }
        let d = core_decay(&[15, 10, 5], &[4, 3, 2], DecayReading::Product, 0.9).unwrap();
        assert!((d.get(&[1, 2, 1]) - (750.0f64 / 12.0).powf(0.9)).abs() <= 1e-9);
    }

    #[test]
    fn loading_eigenvectors_match_oracle() {
        let e = loading_eigenvectors(15, -0.9).unwrap();
        let sigma = loading_covariance(15, -0.9);
        let na = NaEigen::new(DMatrix::from_column_slice(15, 15, sigma.as_slice()));
        let mut order: Vec<usize> = (0..15).collect();
        order.sort_by(|&a, &b| na.eigenvalues[b].total_cmp(&na.eigenvalues[a]));
        for (j, &k) in order.iter().enumerate() {
            let v = na.eigenvectors.column(k);
            let dot: f64 = (0..15).map(|i| v[i] * e.get(i, j)).sum();
            let s = dot.signum();
            for i in 0..15 {
                assert!((e.get(i, j) - s * v[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn cellwise_counts_and_values() {
        let c = small(Scenario::Cellwise);
        let ds = scenario_dataset(&c, 3.0, 1).unwrap();
        assert_eq!(ds.cell_outliers.len(), (0.2 * 20.0 * 750.0) as usize);
        let s = cell_sd(&ds.clean).unwrap();
        let mut diffs = Vec::new();
        for (n, (x, clean)) in ds.samples.iter().zip(&ds.clean).enumerate() {
            for cell in 0..750 {
                if x.data().as_slice()[cell] != clean.as_slice()[cell] {
                    diffs.push((n, cell));
                    assert_eq!(x.data().as_slice()[cell], 3.0 * s.as_slice()[cell]);
                }
            }
        }
        assert_eq!(diffs, ds.cell_outliers);

        let mut ds0 = generate(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rows: Vec<usize> = (0..20).collect();
        contaminate_cellwise(
            &mut ds0,
            0.0,
            0.2,
            &rows,
            SdSource::Clean,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        for &(n, cell) in &ds0.cell_outliers {
            assert_eq!(ds0.samples[n].data().as_slice()[cell], 0.0);
            assert_eq!(ds0.delta[n].as_slice()[cell], 0.0);
        }
    }

    #[test]
    fn casewise_outliers() {
        let c = small(Scenario::Casewise);
        let u = outlier_core(&[4, 3, 2]).unwrap();
        assert_eq!(
            u.as_slice().iter().filter(|&&x| x == 1.0).count(),
            3 * 2 * 2
        );

        let mut ds = generate(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        contaminate_casewise(&mut ds, 0.0, &[0, 1], &c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(ds.samples[0].data().as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(ds.irregular_count(), 2 * 750);

        // structured part is far from the clean subspace
        let v = true_factors(&c.dims, &c.ranks, c.loading_base).unwrap();
        let vs = outlier_factors(&c.dims, &c.ranks, c.loading_base).unwrap();
        let x = multi_mode_expand(&u, &vs, None).unwrap();
        let proj = crate::tensor::multi_mode_product(&x, &v, None).unwrap();
        let ratio = crate::tensor::frobenius_norm(&proj) / crate::tensor::frobenius_norm(&x);
        assert!(ratio < 0.5, "{ratio}");
    }

    #[test]
    fn combined_and_missing_bookkeeping() {
        let mut c = small(Scenario::Combined);
        c.missing_frac = 0.1;
        let ds = scenario_dataset(&c, 2.0, 0).unwrap();
        assert_eq!(ds.case_outliers, vec![0, 1]);
        assert!(ds.cell_outliers.iter().all(|&(n, _)| n >= 2));
        assert_eq!(ds.cell_outliers.len(), (0.1 * 18.0 * 750.0) as usize);
        assert_eq!(ds.missing.len(), (0.1 * 20.0 * 750.0) as usize);
        let mut irregular = vec![false; 20 * 750];
        for &n in &ds.case_outliers {
            for cell in 0..750 {
                irregular[n * 750 + cell] = true;
            }
        }
        for &(n, cell) in ds.cell_outliers.iter().chain(&ds.missing) {
            irregular[n * 750 + cell] = true;
        }
        assert_eq!(
            ds.irregular_count(),
            irregular.iter().filter(|&&x| x).count()
        );
        // overlaps: contaminated and then missing
        let both = ds
            .cell_outliers
            .iter()
            .filter(|p| ds.missing.contains(p))
            .count();
        assert!(both > 0);
        for &(n, cell) in &ds.missing {
            assert!(!ds.samples[n].is_observed(cell));
        }

        let ds0 = scenario_dataset(&c, 0.0, 0).unwrap();
        assert!(ds0.case_outliers.is_empty() && ds0.cell_outliers.is_empty());
        assert_eq!(ds0.irregular_count(), ds0.missing.len());
    }

    #[test]
    fn missing_fraction_is_accurate() {
        let mut c = small(Scenario::Clean);
        c.missing_frac = 0.1;
        let ds = scenario_dataset(&c, 0.0, 3).unwrap();
        let frac = ds.missing.len() as f64 / (20.0 * 750.0);
        assert!((frac - 0.1).abs() <= 0.005);
    }

    #[test]
    fn mse_examples() {
        let c = small(Scenario::Cellwise);
        let ds = scenario_dataset(&c, 4.0, 0).unwrap();
        let data: Vec<_> = ds.samples.iter().map(|s| s.data().clone()).collect();
        assert_eq!(mse_regular(&ds, &data).unwrap(), 0.0);
        let mut garbage = ds.clean.clone();
        for &(n, cell) in &ds.cell_outliers {
            garbage[n].as_mut_slice()[cell] = 1e9;
        }
        assert_eq!(mse_regular(&ds, &garbage).unwrap(), 0.0);

        let two = SimDataset {
            samples: vec![
                TensorSample::complete(DenseTensor::from_vec(&[2], vec![1.0, 2.0]).unwrap()),
                TensorSample::complete(DenseTensor::from_vec(&[2], vec![3.0, 4.0]).unwrap()),
            ],
            delta: vec![
                DenseTensor::from_vec(&[2], vec![1.0, 1.0]).unwrap(),
                DenseTensor::from_vec(&[2], vec![0.0, 1.0]).unwrap(),
            ],
            clean: Vec::new(),
            case_outliers: Vec::new(),
            cell_outliers: Vec::new(),
            missing: Vec::new(),
        };
        let fit = vec![
            DenseTensor::from_vec(&[2], vec![0.0, 2.5]).unwrap(),
            DenseTensor::from_vec(&[2], vec![100.0, 6.0]).unwrap(),
        ];
        // (1 + 0.25 + 4) / 3
        assert!((mse_regular(&two, &fit).unwrap() - 1.75).abs() <= 1e-15);
        let mut none = two.clone();
        none.delta = vec![DenseTensor::zeros(&[2]).unwrap(); 2];
        assert!(mse_regular(&none, &fit).is_err());
    }

    #[test]
    fn datasets_are_deterministic() {
        let c = small(Scenario::Combined);
        let a = scenario_dataset(&c, 3.0, 2).unwrap();
        let b = scenario_dataset(&c, 3.0, 2).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x, y);
        }
        let other = scenario_dataset(&c, 3.0, 3).unwrap();
        assert_ne!(a.samples[5], other.samples[5]);
        // positions do not depend on gamma
        let d = scenario_dataset(&c, 6.0, 2).unwrap();
        assert_eq!(a.cell_outliers, d.cell_outliers);
    }

    #[test]
    fn sd_source_after_casewise_step() {
        let mut c = small(Scenario::Combined);
        let a = scenario_dataset(&c, 2.0, 0).unwrap();
        c.sd_source = SdSource::Current;
        let b = scenario_dataset(&c, 2.0, 0).unwrap();
        assert_eq!(a.cell_outliers, b.cell_outliers);
        let (n, cell) = a.cell_outliers[0];
        let current: Vec<_> = a.samples.iter().map(|x| x.data().clone()).collect();
        let mut before = current.clone();
        for &(m, q) in &a.cell_outliers {
            before[m].as_mut_slice()[q] = a.clean[m].as_slice()[q];
        }
        let s = cell_sd(&before).unwrap().as_slice()[cell];
        assert!((b.samples[n].data().as_slice()[cell] - 2.0 * s).abs() <= 1e-12 * s);
    }

    #[test]
    fn planted_layout() {
        let ds = planted_dataset(&PlantedSpec::standard(4)).unwrap();
        assert_eq!(ds.case_outliers, (0..10).collect::<Vec<_>>());
        assert!(ds
            .cell_outliers
            .iter()
            .chain(&ds.missing)
            .all(|&(n, _)| n >= 20));
        assert_eq!(ds.cell_outliers.len(), 6000);
        assert_eq!(ds.missing.len(), 600);
    }

    #[test]
    fn medians_are_order_free() {
        let rec = |method, g: f64, rep, mse| BenchRecord {
            scenario: Scenario::Cellwise,
            method,
            gamma_cell: g,
            rep,
            mse,
            converged: true,
            seconds: 0.0,
            error: None,
        };
        let mut records = vec![
            rec(Method::Rompca, 1.0, 0, Some(3.0)),
            rec(Method::Rompca, 1.0, 1, Some(1.0)),
            rec(Method::Rompca, 1.0, 2, None),
            rec(Method::Mpca, 0.0, 0, Some(2.0)),
            rec(Method::Rompca, 0.0, 0, Some(5.0)),
        ];
        let a = medians(&records);
        records.reverse();
        assert_eq!(a, medians(&records));
        assert_eq!(a[0].method, Method::Mpca);
        let r = a
            .iter()
            .find(|m| m.method == Method::Rompca && m.gamma_cell == 1.0)
            .unwrap();
        assert_eq!((r.median_mse, r.n_ok, r.n_failed), (2.0, 2, 1));
    }

    #[test]
    fn small_benchmark_runs() {
        let mut c = small(Scenario::Cellwise);
        c.gamma_grid = vec![0.0, 4.0];
        c.n_reps = 1;
        let records = run_benchmark(&c, None).unwrap();
        assert_eq!(records.len(), 8);
        assert!(records.iter().all(|r| r.mse.is_some()));
        c.missing_frac = 0.1;
        let records = run_benchmark(&c, None).unwrap();
        assert!(records.iter().all(|r| r.method != Method::Mpca));
    }
}
