//! Outlier diagnostics of a fitted model: standardized residuals, cellmaps,
//! percentage of outlying cells and residual distances.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::robust::MScaleSpec;
use crate::rompca::{cell_residuals, cell_scales, RompcaModel};
use crate::sample::TensorSample;
use crate::tensor::DenseTensor;

/// `sqrt(chi^2_{1, 0.998})`, the 0.999 standard normal quantile.
pub const C_CELL: f64 = 3.090_232_306_167_813;
/// `|r~|` at which the color intensity saturates.
pub const SATURATION: f64 = 10.0;
pub const DEFAULT_MC_SAMPLES: usize = 10_000;
pub const MIN_MC_SAMPLES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellCategory {
    Regular,
    /// Positive outlier with intensity in `(0, 1]`.
    Positive(f64),
    Negative(f64),
    Missing,
}

impl CellCategory {
    /// Category of a standardized residual at an observed cell.
    pub fn classify(r: f64) -> Self {
        if r.abs() <= C_CELL {
            CellCategory::Regular
        } else {
            let i = intensity(r);
            if r > 0.0 {
                CellCategory::Positive(i)
            } else {
                CellCategory::Negative(i)
            }
        }
    }

    pub fn is_flagged(&self) -> bool {
        matches!(self, CellCategory::Positive(_) | CellCategory::Negative(_))
    }

    /// Display color: yellow for regular cells, light orange to red for
    /// positive outliers, purple to dark blue for negative ones, white for
    /// missing cells.
    pub fn rgb(&self) -> [f64; 3] {
        match *self {
            CellCategory::Regular => [255.0, 255.0, 0.0],
            CellCategory::Positive(i) => lerp([255.0, 190.0, 120.0], [200.0, 0.0, 0.0], i),
            CellCategory::Negative(i) => lerp([190.0, 140.0, 230.0], [0.0, 0.0, 140.0], i),
            CellCategory::Missing => [255.0, 255.0, 255.0],
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CellCategory::Regular => "regular",
            CellCategory::Positive(_) => "pos_outlier",
            CellCategory::Negative(_) => "neg_outlier",
            CellCategory::Missing => "missing",
        }
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + t * (b[k] - a[k]))
}

/// Color intensity: 0 at `|r| = C_CELL`, 1 from `|r| = SATURATION` on. Cells
/// just above the cutoff get a tiny positive intensity.
pub fn intensity(r: f64) -> f64 {
    let a = r.abs();
    if a <= C_CELL {
        0.0
    } else {
        ((a - C_CELL) / (SATURATION - C_CELL)).clamp(f64::MIN_POSITIVE, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseColor {
    /// `w_case = 1`.
    Yellow,
    /// Intermediate weight.
    Orange(f64),
    /// `w_case = 0`.
    Red,
}

impl CaseColor {
    pub fn from_weight(w: f64) -> Self {
        if w >= 1.0 {
            CaseColor::Yellow
        } else if w <= 0.0 {
            CaseColor::Red
        } else {
            CaseColor::Orange(w)
        }
    }

    pub fn rgb(&self) -> [f64; 3] {
        match *self {
            CaseColor::Yellow => [240.0, 220.0, 0.0],
            CaseColor::Orange(w) => lerp([210.0, 0.0, 0.0], [240.0, 220.0, 0.0], w),
            CaseColor::Red => [210.0, 0.0, 0.0],
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CaseColor::Yellow => "yellow",
            CaseColor::Orange(_) => "orange",
            CaseColor::Red => "red",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    /// `R~_n`, zero at missing cells.
    pub std_residuals: Vec<DenseTensor>,
    pub masks: Vec<DenseTensor>,
    pub sigma_tilde: DenseTensor,
    /// Cells whose scale had to be floored.
    pub degenerate_scales: usize,
    pub poc: Vec<f64>,
    pub residual_distance: Vec<f64>,
    pub case_weights: Vec<f64>,
    pub c_cell: f64,
    pub c_case: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl DiagnosticsReport {
    pub fn n_samples(&self) -> usize {
        self.std_residuals.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.sigma_tilde.shape()
    }

    pub fn category(&self, n: usize, cell: usize) -> CellCategory {
        if self.masks[n].as_slice()[cell] == 0.0 {
            CellCategory::Missing
        } else {
            CellCategory::classify(self.std_residuals[n].as_slice()[cell])
        }
    }

    pub fn is_flagged(&self, n: usize, cell: usize) -> bool {
        self.category(n, cell).is_flagged()
    }

    pub fn case_color(&self, n: usize) -> CaseColor {
        CaseColor::from_weight(self.case_weights[n])
    }

    /// Whether the residual distance of case `n` exceeds `c_case`.
    pub fn case_flagged(&self, n: usize) -> bool {
        self.residual_distance[n] > self.c_case
    }
}

/// Per-cell M-scales of the model residuals and the standardized residuals.
pub fn standardize_residuals(
    model: &RompcaModel,
    samples: &[TensorSample],
    spec: &MScaleSpec,
) -> Result<(Vec<DenseTensor>, DenseTensor, usize)> {
    if samples.len() != model.n_samples() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.n_samples()],
            found: vec![samples.len()],
        });
    }
    let res = cell_residuals(samples, &model.factors, &model.cores, &model.center)?;
    let (sigma, degenerate) = cell_scales(samples, &res, spec)?;
    let std = res
        .iter()
        .map(|r| r.zip_map(&sigma, |a, s| a / s))
        .collect::<Result<Vec<_>>>()?;
    Ok((std, sigma, degenerate))
}

/// `POC_n`: flagged observed cells over all cells.
pub fn poc(std_residual: &DenseTensor, mask: &DenseTensor) -> f64 {
    let flagged = std_residual
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .filter(|&(&r, &m)| m == 1.0 && r.abs() > C_CELL)
        .count();
    flagged as f64 / std_residual.len() as f64
}

/// Frobenius norm of the standardized residuals over observed cells.
pub fn residual_distance(std_residual: &DenseTensor, mask: &DenseTensor) -> f64 {
    let s: f64 = std_residual
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .filter(|&(_, &m)| m == 1.0)
        .map(|(&r, _)| r * r)
        .sum();
    libm::sqrt(s)
}

/// Linearly interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 0.99 quantile of the Frobenius norm of `n_mc` standard normal tensors of
/// the given shape.
pub fn case_cutoff(shape: &[usize], n_mc: usize, seed: u64) -> Result<f64> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::InvalidConfig(alloc::format!(
            "need at least {MIN_MC_SAMPLES} Monte-Carlo samples, got {n_mc}"
        )));
    }
    let d: usize = shape.iter().product();
    if d == 0 {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut norms: Vec<f64> = (0..n_mc)
        .map(|_| {
            let s: f64 = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * z
                })
                .sum();
            libm::sqrt(s)
        })
        .collect();
    norms.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&norms, 0.99))
}

/// Builds the full report for a fitted model.
pub fn diagnose(
    model: &RompcaModel,
    samples: &[TensorSample],
    spec: &MScaleSpec,
    n_mc: usize,
    seed: u64,
) -> Result<DiagnosticsReport> {
    let (std, sigma, degenerate) = standardize_residuals(model, samples, spec)?;
    let masks: Vec<DenseTensor> = samples.iter().map(|s| s.mask().clone()).collect();
    let poc_v = std.iter().zip(&masks).map(|(r, m)| poc(r, m)).collect();
    let dist = std
        .iter()
        .zip(&masks)
        .map(|(r, m)| residual_distance(r, m))
        .collect();
    let c_case = case_cutoff(sigma.shape(), n_mc, seed)?;
    Ok(DiagnosticsReport {
        std_residuals: std,
        masks,
        sigma_tilde: sigma,
        degenerate_scales: degenerate,
        poc: poc_v,
        residual_distance: dist,
        case_weights: model.case_weights.clone(),
        c_cell: C_CELL,
        c_case,
        mc_samples: n_mc,
        seed,
    })
}

/// One aggregated cellmap entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCell {
    pub observed: usize,
    pub flagged: usize,
    /// Mean signed intensity over observed cells (negative for negative outliers).
    pub mean_intensity: f64,
    /// Mean display color over observed cells; white when none is observed.
    pub rgb: [f64; 3],
}

impl MapCell {
    pub fn is_missing(&self) -> bool {
        self.observed == 0
    }

    pub fn is_yellow(&self) -> bool {
        self.observed > 0 && self.flagged == 0
    }

    fn from_categories(cats: impl Iterator<Item = CellCategory>) -> Self {
        let (mut observed, mut flagged) = (0, 0);
        let (mut sum, mut rgb) = (0.0, [0.0; 3]);
        for c in cats {
            if c == CellCategory::Missing {
                continue;
            }
            observed += 1;
            let col = c.rgb();
            for k in 0..3 {
                rgb[k] += col[k];
            }
            match c {
                CellCategory::Positive(i) => {
                    flagged += 1;
                    sum += i;
                }
                CellCategory::Negative(i) => {
                    flagged += 1;
                    sum -= i;
                }
                _ => {}
            }
        }
        if observed == 0 {
            return Self {
                observed,
                flagged,
                mean_intensity: 0.0,
                rgb: CellCategory::Missing.rgb(),
            };
        }
        let k = observed as f64;
        Self {
            observed,
            flagged,
            mean_intensity: sum / k,
            rgb: rgb.map(|x| x / k),
        }
    }
}

/// Row-major grid of map cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<MapCell>,
}

impl Grid {
    pub fn get(&self, row: usize, col: usize) -> &MapCell {
        &self.cells[row * self.cols + col]
    }
}

/// Cases as rows and groups of `g` adjacent vectorized cells as columns
/// (the last group may be shorter).
pub fn cellmap(report: &DiagnosticsReport, g: usize) -> Result<Grid> {
    if g == 0 {
        return Err(Error::InvalidConfig(
            "aggregation width must be at least 1".into(),
        ));
    }
    let d = report.sigma_tilde.len();
    let cols = d.div_ceil(g);
    let rows = report.n_samples();
    let mut cells = Vec::with_capacity(rows * cols);
    for n in 0..rows {
        for j in 0..cols {
            let range = j * g..((j + 1) * g).min(d);
            cells.push(MapCell::from_categories(
                range.map(|c| report.category(n, c)),
            ));
        }
    }
    Ok(Grid { rows, cols, cells })
}

/// The `index`-th mode-`mode` slice of `R~_n`. Rows run over the first
/// remaining mode and columns over the others in storage order; an order-1
/// tensor gives a 1 x 1 grid.
pub fn slice_cellmap(
    report: &DiagnosticsReport,
    n: usize,
    mode: usize,
    index: usize,
) -> Result<Grid> {
    let shape = report.shape();
    if n >= report.n_samples() {
        return Err(Error::IndexOutOfRange {
            index: n,
            len: report.n_samples(),
        });
    }
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    if index >= shape[mode] {
        return Err(Error::IndexOutOfRange {
            index,
            len: shape[mode],
        });
    }
    let rest: Vec<usize> = (0..shape.len()).filter(|&m| m != mode).collect();
    let rows = rest.first().map_or(1, |&m| shape[m]);
    let cols: usize = rest.iter().skip(1).map(|&m| shape[m]).product();
    let mut cells = vec![MapCell::from_categories(core::iter::empty()); rows * cols];
    let mut idx = vec![0usize; shape.len()];
    idx[mode] = index;
    let strides: Vec<usize> = {
        let mut s = vec![1usize; shape.len()];
        for m in 1..shape.len() {
            s[m] = s[m - 1] * shape[m - 1];
        }
        s
    };
    for r in 0..rows {
        for c in 0..cols {
            if let Some(&m0) = rest.first() {
                idx[m0] = r;
            }
            let mut rem = c;
            for &m in rest.iter().skip(1) {
                idx[m] = rem % shape[m];
                rem /= shape[m];
            }
            let lin: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            cells[r * cols + c] =
                MapCell::from_categories(core::iter::once(report.category(n, lin)));
        }
    }
    Ok(Grid { rows, cols, cells })
}

/// One row of the residual-distance plot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRow {
    pub index: usize,
    pub distance: f64,
    pub poc: f64,
    pub case_weight: f64,
    pub color: CaseColor,
    pub flagged: bool,
}

pub fn residual_distance_rows(report: &DiagnosticsReport) -> Vec<DistanceRow> {
    (0..report.n_samples())
        .map(|n| DistanceRow {
            index: n,
            distance: report.residual_distance[n],
            poc: report.poc[n],
            case_weight: report.case_weights[n],
            color: report.case_color(n),
            flagged: report.case_flagged(n),
        })
        .collect()
}
