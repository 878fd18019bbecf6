//! Robust loss functions and the univariate M-estimator of scale.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Upper clip for the `|z|` weight `1/|z|`.
pub const ABS_WEIGHT_CAP: f64 = 1e6;

/// Hyperbolic tangent tuning constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TanhParams {
    pub b: f64,
    pub c: f64,
    pub q1: f64,
    pub q2: f64,
    d: f64,
}

impl TanhParams {
    pub fn new(b: f64, c: f64, q1: f64, q2: f64) -> Result<Self> {
        if !(b > 0.0 && c > b && q1 > 0.0 && q2 > 0.0) || !c.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "tanh constants need 0 < b < c and q1, q2 > 0 (got b={b}, c={c}, q1={q1}, q2={q2})"
            )));
        }
        let d = 0.5 * b * b + (q1 / q2) * libm::log(libm::cosh(q2 * (c - b)));
        Ok(Self { b, c, q1, q2, d })
    }

    /// Bound `d = rho(z)` for `|z| >= c`.
    #[inline]
    pub fn d(&self) -> f64 {
        self.d
    }
}

impl Default for TanhParams {
    fn default() -> Self {
        Self::new(1.5, 4.0, 1.540793, 0.8622731).expect("valid default constants")
    }
}

/// A rho function together with its derivative and IRLS weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSpec {
    Tanh(TanhParams),
    /// `rho(z) = z^2`
    Square,
    /// `rho(z) = |z|`
    Abs,
}

impl Default for RhoSpec {
    fn default() -> Self {
        RhoSpec::Tanh(TanhParams::default())
    }
}

impl RhoSpec {
    pub fn tanh() -> Self {
        Self::default()
    }

    pub fn rho(&self, z: f64) -> f64 {
        let a = z.abs();
        match self {
            RhoSpec::Tanh(p) => {
                if a <= p.b {
                    0.5 * z * z
                } else if a <= p.c {
                    p.d - (p.q1 / p.q2) * libm::log(libm::cosh(p.q2 * (p.c - a)))
                } else {
                    p.d
                }
            }
            RhoSpec::Square => z * z,
            RhoSpec::Abs => a,
        }
    }

    pub fn psi(&self, z: f64) -> f64 {
        match self {
            RhoSpec::Tanh(p) => {
                let a = z.abs();
                if a <= p.b {
                    z
                } else if a <= p.c {
                    p.q1 * libm::tanh(p.q2 * (p.c - a)) * z.signum()
                } else {
                    0.0
                }
            }
            RhoSpec::Square => 2.0 * z,
            RhoSpec::Abs => {
                if z == 0.0 {
                    0.0
                } else {
                    z.signum()
                }
            }
        }
    }

    /// The ratio `psi(z)/z` exactly as it enters the gradient.
    /// `Square` gives 2; `Abs` is clipped at [`ABS_WEIGHT_CAP`].
    pub fn psi_ratio(&self, z: f64) -> f64 {
        match self {
            RhoSpec::Tanh(p) => {
                let a = z.abs();
                if a <= p.b {
                    1.0
                } else if a >= p.c {
                    0.0
                } else {
                    p.q1 * libm::tanh(p.q2 * (p.c - a)) / a
                }
            }
            RhoSpec::Square => 2.0,
            RhoSpec::Abs => abs_weight(z),
        }
    }

    /// IRLS weight in `[0, 1]` (or `(0, ABS_WEIGHT_CAP]` for `Abs`).
    /// `Square` is normalized to the constant 1.
    pub fn weight(&self, z: f64) -> f64 {
        match self {
            RhoSpec::Tanh(_) => self.psi_ratio(z).min(1.0),
            RhoSpec::Square => 1.0,
            RhoSpec::Abs => abs_weight(z),
        }
    }

    /// Constant relating [`Self::psi_ratio`] to [`Self::weight`] away from clipping.
    pub fn weight_scale(&self) -> f64 {
        match self {
            RhoSpec::Square => 2.0,
            _ => 1.0,
        }
    }

    /// `sup rho`, infinite for unbounded kinds.
    pub fn sup(&self) -> f64 {
        match self {
            RhoSpec::Tanh(p) => p.d,
            _ => f64::INFINITY,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RhoSpec::Tanh(_) => "tanh",
            RhoSpec::Square => "square",
            RhoSpec::Abs => "abs",
        }
    }
}

fn abs_weight(z: f64) -> f64 {
    let a = z.abs();
    if a <= 1.0 / ABS_WEIGHT_CAP {
        ABS_WEIGHT_CAP
    } else {
        1.0 / a
    }
}

/// Settings for [`mscale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MScaleSpec {
    pub rho: RhoSpec,
    pub delta: f64,
    pub a: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for MScaleSpec {
    fn default() -> Self {
        Self {
            rho: RhoSpec::default(),
            delta: 1.88,
            a: 0.3431,
            max_iter: 100,
            rel_tol: 1e-9,
        }
    }
}

impl MScaleSpec {
    /// Mean of `rho(z_i / (a sigma))`.
    pub fn mean_rho(&self, values: &[f64], sigma: f64) -> f64 {
        let s = self.a * sigma;
        values.iter().map(|&z| self.rho.rho(z / s)).sum::<f64>() / values.len() as f64
    }
}

/// M-estimator of scale: the `sigma > 0` solving
/// `(1/n) sum rho(z_i / (a sigma)) = delta`, by fixed-point iteration on `sigma^2`.
pub fn mscale(values: &[f64], spec: &MScaleSpec) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("mscale input"));
    }
    if values.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("mscale input"));
    }
    if !(spec.delta > 0.0 && spec.a > 0.0) {
        return Err(Error::InvalidConfig(
            "mscale needs delta > 0 and a > 0".into(),
        ));
    }
    let n = values.len();
    let nonzero = values.iter().filter(|&&z| z != 0.0).count();
    // As sigma -> 0 the mean rho tends to (nonzero / n) * sup rho.
    if nonzero == 0 || (nonzero as f64) * spec.rho.sup() <= spec.delta * n as f64 {
        return Err(Error::AllZero);
    }
    let mut abs: Vec<f64> = values.iter().map(|z| z.abs()).collect();
    let med = median_in_place(&mut abs);
    let mut sigma = if med > 0.0 {
        med / 0.6745
    } else {
        abs.iter().sum::<f64>() / n as f64
    };
    for _ in 0..spec.max_iter {
        let ratio = spec.mean_rho(values, sigma) / spec.delta;
        let next = sigma * libm::sqrt(ratio);
        if !(next.is_finite() && next > 0.0) {
            return Err(Error::NonConvergence {
                iterations: spec.max_iter,
                sigma: next,
            });
        }
        if (next - sigma).abs() <= spec.rel_tol * sigma {
            return Ok(next);
        }
        sigma = next;
    }
    Err(Error::NonConvergence {
        iterations: spec.max_iter,
        sigma,
    })
}

/// Median of a slice (reorders it). Average of the two middle values for even length.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut w = v.to_vec();
    median_in_place(&mut w)
}

/// Median absolute deviation about the median (unscaled).
pub fn mad(v: &[f64]) -> (f64, f64) {
    let med = median(v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    (med, median_in_place(&mut dev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tanh() -> RhoSpec {
        RhoSpec::tanh()
    }

    #[test]
    fn tanh_reference_values() {
        let r = tanh();
        assert_eq!(r.psi(1.0), 1.0);
        assert_eq!(r.psi(5.0), 0.0);
        let d = r.sup();
        assert_eq!(r.rho(5.0), d);
        assert_eq!(r.rho(0.0), 0.0);
        assert_eq!(r.weight(0.0), 1.0);
        assert!((d - 3.762212297834482).abs() < 1e-12);
    }

    #[test]
    fn d_matches_quadrature_of_psi() {
        let r = tanh();
        // composite Simpson on [0, c] split at b
        let simpson = |a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = r.psi(a) + r.psi(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * r.psi(a + i as f64 * h);
            }
            s * h / 3.0
        };
        let q = simpson(0.0, 1.5, 2000) + simpson(1.5, 4.0, 2000);
        assert!((q - r.sup()).abs() < 1e-6);
    }

    #[test]
    fn continuity_at_knots() {
        let r = tanh();
        let RhoSpec::Tanh(p) = r else { unreachable!() };
        for &k in &[p.b, p.c] {
            for s in [1.0, -1.0] {
                let z = s * k;
                assert!((r.rho(z - 1e-12) - r.rho(z + 1e-12)).abs() < 1e-10);
            }
        }
        let left = p.b;
        let right = p.q1 * libm::tanh(p.q2 * (p.c - p.b));
        assert!((left - right).abs() < 1e-6);
        assert_eq!(r.psi(p.c), 0.0);
    }

    #[test]
    fn weights_in_range() {
        let r = tanh();
        for i in -800..=800 {
            let z = i as f64 / 100.0;
            let w = r.weight(z);
            assert!((0.0..=1.0).contains(&w));
            if z.abs() <= 1.5 {
                assert_eq!(w, 1.0);
            }
            if z.abs() >= 4.0 {
                assert_eq!(w, 0.0);
            }
        }
        assert_eq!(RhoSpec::Square.weight(3.0), 1.0);
        assert_eq!(RhoSpec::Square.psi_ratio(3.0), 2.0);
        assert_eq!(RhoSpec::Abs.weight(0.0), ABS_WEIGHT_CAP);
        assert_eq!(RhoSpec::Abs.weight(-4.0), 0.25);
    }

    #[test]
    fn bad_constants_rejected() {
        assert!(TanhParams::new(4.0, 1.5, 1.0, 1.0).is_err());
        assert!(TanhParams::new(0.0, 1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn mscale_gaussian_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z: Vec<f64> = (0..100_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let s = mscale(&z, &MScaleSpec::default()).unwrap();
        assert!((s - 1.0).abs() <= 0.02, "sigma = {s}");
    }

    #[test]
    fn mscale_equivariance_and_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let spec = MScaleSpec::default();
        let z: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = mscale(&z, &spec).unwrap();
        assert!((spec.mean_rho(&z, s) - spec.delta).abs() <= 1e-8);
        let z3: Vec<f64> = z.iter().map(|x| 3.0 * x).collect();
        let s3 = mscale(&z3, &spec).unwrap();
        assert!((s3 / (3.0 * s) - 1.0).abs() <= 1e-9);
        let zm: Vec<f64> = z.iter().map(|x| -x).collect();
        assert!((mscale(&zm, &spec).unwrap() / s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mscale_resists_gross_outliers() {
        // Population inflation factors of the M-scale under a fraction eps of
        // infinite outliers, from numerical integration against N(0,1):
        // eps=0.3 -> 1.709, eps=0.4 -> 2.450.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = MScaleSpec::default();
        let z: Vec<f64> = (0..20_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let clean = mscale(&z, &spec).unwrap();
        for (eps, expected) in [(0.3, 1.709), (0.4, 2.450)] {
            let mut dirty = z.clone();
            let k = (eps * z.len() as f64) as usize;
            dirty.iter_mut().take(k).for_each(|v| *v = 1e6);
            let ratio = mscale(&dirty, &spec).unwrap() / clean;
            assert!(
                (ratio - expected).abs() < 0.05 * expected,
                "eps={eps}: {ratio}"
            );
        }
    }

    #[test]
    fn mscale_degenerate() {
        let spec = MScaleSpec::default();
        assert_eq!(mscale(&[0.0; 10], &spec), Err(Error::AllZero));
        // fewer than half the values nonzero: no positive root for the bounded rho
        let mut v = [0.0; 10];
        v[0] = 1.0;
        assert_eq!(mscale(&v, &spec), Err(Error::AllZero));
        assert!(mscale(&[], &spec).is_err());
        // median zero but enough nonzero values: falls back to the mean start
        let v = [0.0, 0.0, 0.0, 1.0, 2.0, -1.0, 3.0];
        let s = mscale(&v, &spec).unwrap();
        assert!((spec.mean_rho(&v, s) - spec.delta).abs() < 1e-8);
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), (3.0, 1.0));
    }
}
