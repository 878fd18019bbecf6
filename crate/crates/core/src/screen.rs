//! DDC-style cellwise screening of an `N x D` data matrix.
//!
//! Missing cells are encoded as NaN. The screener flags deviating cells,
//! imputes them together with the missing cells from robust predictions based
//! on correlated columns, and flags rows whose residuals are large overall.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::robust::{mad, median_in_place};
use crate::tensor::Matrix;

/// Consistency factor turning a MAD into a Gaussian standard deviation.
pub const MAD_SCALE: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenConfig {
    /// Number of predictor columns per column.
    pub k: usize,
    /// Cellwise cutoff on standardized values, `sqrt(chi2_{1,0.99})`.
    pub cell_cutoff: f64,
    /// Minimal absolute correlation for a column to act as predictor.
    pub corr_limit: f64,
    /// Minimal number of rows observed in both columns to use a pair.
    pub min_common: usize,
    /// Cutoff on the robustly standardized row statistic (`Phi^{-1}(0.99)`).
    pub case_cutoff: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            k: 15,
            cell_cutoff: 2.575_829_303_548_901,
            corr_limit: 0.5,
            min_common: 3,
            case_cutoff: 2.326_347_874_040_841,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScreenResult {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Column-major `N x D` flags: `cell_flags[i + N j]`.
    pub cell_flags: Vec<bool>,
    pub imputed: Matrix,
    pub case_flags: Vec<bool>,
    pub cell_cutoff: f64,
    /// Standardized cell residuals (NaN where missing).
    pub std_residuals: Matrix,
    /// Columns whose MAD was zero and received a floored scale.
    pub degenerate_columns: Vec<usize>,
}

impl ScreenResult {
    #[inline]
    pub fn is_flagged(&self, i: usize, j: usize) -> bool {
        self.cell_flags[i + self.n_rows * j]
    }

    /// Number of flagged cells per row.
    pub fn row_flag_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_rows];
        for j in 0..self.n_cols {
            for (i, c) in counts.iter_mut().enumerate() {
                if self.is_flagged(i, j) {
                    *c += 1;
                }
            }
        }
        counts
    }

    pub fn n_flagged(&self) -> usize {
        self.cell_flags.iter().filter(|&&f| f).count()
    }
}

fn observed(col: &[f64]) -> Vec<f64> {
    col.iter().copied().filter(|x| !x.is_nan()).collect()
}

/// Robust location and scale of the non-NaN entries of a column; the scale
/// is floored when the MAD vanishes.
fn robust_loc_scale(col: &[f64]) -> (f64, f64, bool) {
    let obs = observed(col);
    let (med, m) = mad(&obs);
    let s = MAD_SCALE * m;
    if s > 0.0 && s.is_finite() {
        return (med, s, false);
    }
    let mean_abs = obs.iter().map(|x| (x - med).abs()).sum::<f64>() / obs.len() as f64;
    let floor = if mean_abs > 0.0 {
        1.2533 * mean_abs
    } else {
        1e-6 * med.abs().max(1.0)
    };
    (med, floor, true)
}

fn pearson(a: &[f64], b: &[f64], min_common: usize) -> Option<f64> {
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        if !x.is_nan() && !y.is_nan() {
            n += 1;
            sa += x;
            sb += y;
        }
    }
    if n < min_common {
        return None;
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        if !x.is_nan() && !y.is_nan() {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / libm::sqrt(saa * sbb))
}

/// Median of `z_j / z_h` over rows where both are available and `z_h != 0`.
fn robust_slope(zj: &[f64], zh: &[f64], buf: &mut Vec<f64>) -> Option<f64> {
    buf.clear();
    for (&y, &x) in zj.iter().zip(zh) {
        if !y.is_nan() && !x.is_nan() && x != 0.0 {
            buf.push(y / x);
        }
    }
    if buf.is_empty() {
        None
    } else {
        Some(median_in_place(buf))
    }
}

/// Screens an `N x D` matrix with NaN marking missing cells.
pub fn screen(x: &Matrix, config: &ScreenConfig) -> Result<ScreenResult> {
    let (n, d) = (x.rows(), x.cols());
    if n < 5 {
        return Err(Error::Screening(format!("need at least 5 rows, got {n}")));
    }
    if x.as_slice().iter().any(|v| v.is_infinite()) {
        return Err(Error::NonFinite("screening input"));
    }
    for j in 0..d {
        if x.col(j).iter().filter(|v| !v.is_nan()).count() < 2 {
            return Err(Error::Screening(format!(
                "column {j} has fewer than 2 observed values"
            )));
        }
    }
    let c = config.cell_cutoff;

    // standardize, then blank out univariate outliers
    let mut loc = vec![0.0; d];
    let mut scale = vec![0.0; d];
    let mut degenerate_columns = Vec::new();
    let mut z = Matrix::zeros(n, d);
    let mut zc = Matrix::zeros(n, d);
    for j in 0..d {
        let (m, s, degenerate) = robust_loc_scale(x.col(j));
        if degenerate {
            log::warn!("column {j} has zero MAD; using floored scale {s:e}");
            degenerate_columns.push(j);
        }
        loc[j] = m;
        scale[j] = s;
        for i in 0..n {
            let v = (x.get(i, j) - m) / s;
            z.set(i, j, v);
            zc.set(i, j, if v.abs() > c { f64::NAN } else { v });
        }
    }

    // predictors: top-k correlated columns
    let mut cor = vec![f64::NAN; d * d];
    for j in 0..d {
        for h in j + 1..d {
            if let Some(r) = pearson(zc.col(j), zc.col(h), config.min_common) {
                cor[j + d * h] = r;
                cor[h + d * j] = r;
            }
        }
    }
    let mut buf = Vec::with_capacity(n);
    let mut pred = Matrix::zeros(n, d);
    for j in 0..d {
        let mut cands: Vec<(usize, f64)> = (0..d)
            .filter(|&h| h != j)
            .filter_map(|h| {
                let r = cor[j + d * h];
                (r.is_finite() && r.abs() >= config.corr_limit).then_some((h, r.abs()))
            })
            .collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cands.truncate(config.k);
        let mut preds: Vec<(usize, f64, f64)> = Vec::with_capacity(cands.len());
        for &(h, w) in &cands {
            if let Some(b) = robust_slope(zc.col(j), zc.col(h), &mut buf) {
                preds.push((h, w, b));
            }
        }
        for i in 0..n {
            let (mut num, mut den) = (0.0, 0.0);
            for &(h, w, b) in &preds {
                let v = zc.get(i, h);
                if !v.is_nan() {
                    num += w * b * v;
                    den += w;
                }
            }
            pred.set(i, j, if den > 0.0 { num / den } else { 0.0 });
        }
    }

    // standardized residuals and flags
    let mut std_res = Matrix::zeros(n, d);
    let mut cell_flags = vec![false; n * d];
    let mut imputed = x.clone();
    for j in 0..d {
        let raw: Vec<f64> = (0..n).map(|i| z.get(i, j) - pred.get(i, j)).collect();
        let (rm, rs, _) = robust_loc_scale(&raw);
        for i in 0..n {
            let missing = raw[i].is_nan();
            let r = if missing {
                f64::NAN
            } else {
                (raw[i] - rm) / rs
            };
            std_res.set(i, j, r);
            let flag = !missing && r.abs() > c;
            cell_flags[i + n * j] = flag;
            if flag || missing {
                imputed.set(i, j, loc[j] + scale[j] * pred.get(i, j));
            }
        }
    }

    // rows with large overall deviation
    let c2 = c * c;
    let t: Vec<f64> = (0..n)
        .map(|i| {
            let (mut s, mut k) = (0.0, 0usize);
            for j in 0..d {
                let r = std_res.get(i, j);
                if !r.is_nan() {
                    s += (r * r).min(c2);
                    k += 1;
                }
            }
            if k == 0 {
                0.0
            } else {
                s / k as f64
            }
        })
        .collect();
    let (tm, tmad) = mad(&t);
    let ts = MAD_SCALE * tmad;
    let case_flags = t
        .iter()
        .map(|&ti| ts > 0.0 && (ti - tm) / ts > config.case_cutoff)
        .collect();

    Ok(ScreenResult {
        n_rows: n,
        n_cols: d,
        cell_flags,
        imputed,
        case_flags,
        cell_cutoff: c,
        std_residuals: std_res,
        degenerate_columns,
    })
}

/// Indices of the `ceil(0.75 N)` rows without a case flag that have the
/// fewest flagged cells (ties by index). If fewer rows are unflagged, all of
/// them are returned.
pub fn select_clean_subset(result: &ScreenResult, n_total: usize) -> Vec<usize> {
    let h = (3 * n_total).div_ceil(4);
    let counts = result.row_flag_counts();
    let mut idx: Vec<usize> = (0..n_total.min(result.n_rows))
        .filter(|&i| !result.case_flags[i])
        .collect();
    idx.sort_by_key(|&i| (counts[i], i));
    idx.truncate(h);
    idx
}
