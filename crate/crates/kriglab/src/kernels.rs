//! Stationary correlation functions (product rule) and correlation matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Nugget values tried in order when a factorization fails.
pub const NUGGET_SCHEDULE: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Smallest squared Cholesky pivot accepted before a larger nugget is tried.
const MIN_PIVOT2: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    PowerExponential {
        nu: f64,
    },
    Matern32,
    Matern52,
    /// PLS-weighted Matern 3/2. `w_star[l]` is the rotated weight vector of component l.
    PlsMatern32 {
        w_star: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "kernel dimension must be >= 1".into(),
            ));
        }
        match &family {
            KernelFamily::PowerExponential { nu } if !(*nu > 0.0 && *nu <= 2.0) => {
                return Err(Error::InvalidArgument(format!(
                    "power exponent {nu} not in (0, 2]"
                )));
            }
            KernelFamily::PlsMatern32 { w_star } => {
                if w_star.is_empty() {
                    return Err(Error::InvalidArgument("PLS kernel needs h >= 1".into()));
                }
                if let Some(w) = w_star.iter().find(|w| w.len() != dim) {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: w.len(),
                    });
                }
            }
            _ => {}
        }
        Ok(KernelSpec { family, dim })
    }

    pub fn matern32(dim: usize) -> Self {
        KernelSpec {
            family: KernelFamily::Matern32,
            dim,
        }
    }

    /// Number of scale parameters (n, or h for the PLS kernel).
    pub fn theta_dim(&self) -> usize {
        match &self.family {
            KernelFamily::PlsMatern32 { w_star } => w_star.len(),
            _ => self.dim,
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.theta_dim(),
                got: theta.len(),
            });
        }
        match theta.iter().position(|t| !(*t > 0.0) || !t.is_finite()) {
            Some(i) => Err(Error::NonPositiveScale(i)),
            None => Ok(()),
        }
    }

    /// Correlation from per-dimension absolute differences. No validation.
    #[inline]
    pub fn corr_absdiff(&self, theta: &[f64], ad: &[f64]) -> f64 {
        match &self.family {
            KernelFamily::PowerExponential { nu } => {
                let s: f64 = ad.iter().zip(theta).map(|(d, t)| (d / t).powf(*nu)).sum();
                (-s).exp()
            }
            KernelFamily::Matern32 => {
                let mut prod = 1.0;
                let mut sum = 0.0;
                for (d, t) in ad.iter().zip(theta) {
                    let a = SQRT3 * d / t;
                    prod *= 1.0 + a;
                    sum += a;
                }
                prod * (-sum).exp()
            }
            KernelFamily::Matern52 => {
                let mut prod = 1.0;
                let mut sum = 0.0;
                for (d, t) in ad.iter().zip(theta) {
                    let a = SQRT5 * d / t;
                    prod *= 1.0 + a + a * a / 3.0;
                    sum += a;
                }
                prod * (-sum).exp()
            }
            KernelFamily::PlsMatern32 { w_star } => {
                let mut prod = 1.0;
                let mut sum = 0.0;
                for (w, t) in w_star.iter().zip(theta) {
                    for (wi, d) in w.iter().zip(ad) {
                        let a = SQRT3 * (wi * d).abs() / t;
                        prod *= 1.0 + a;
                        sum += a;
                    }
                }
                prod * (-sum).exp()
            }
        }
    }

    #[inline]
    pub(crate) fn corr_unchecked(
        &self,
        theta: &[f64],
        x: &[f64],
        xp: &[f64],
        buf: &mut [f64],
    ) -> f64 {
        for ((b, a), c) in buf.iter_mut().zip(x).zip(xp) {
            *b = (a - c).abs();
        }
        self.corr_absdiff(theta, buf)
    }
}

/// Product-rule correlation between two points.
pub fn correlation(spec: &KernelSpec, theta: &[f64], x: &[f64], xp: &[f64]) -> Result<f64> {
    spec.check_theta(theta)?;
    if x.len() != spec.dim || xp.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: x.len().min(xp.len()),
        });
    }
    let mut buf = vec![0.0; spec.dim];
    Ok(spec.corr_unchecked(theta, x, xp, &mut buf))
}

/// PLS-weighted Matern 3/2 correlation; `w_star[l]` has length n.
pub fn pls_correlation(w_star: &[Vec<f64>], theta: &[f64], x: &[f64], xp: &[f64]) -> Result<f64> {
    let spec = KernelSpec::new(
        KernelFamily::PlsMatern32 {
            w_star: w_star.to_vec(),
        },
        x.len(),
    )?;
    correlation(&spec, theta, x, xp)
}

/// R with unit diagonal plus nugget.
pub fn correlation_matrix(
    spec: &KernelSpec,
    theta: &[f64],
    x: &[Vec<f64>],
    nugget: f64,
) -> Result<DMatrix<f64>> {
    spec.check_theta(theta)?;
    let m = x.len();
    let mut r = DMatrix::zeros(m, m);
    let mut buf = vec![0.0; spec.dim];
    for i in 0..m {
        r[(i, i)] = 1.0 + nugget;
        for j in 0..i {
            let c = spec.corr_unchecked(theta, &x[i], &x[j], &mut buf);
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    Ok(r)
}

pub fn cross_correlation(
    spec: &KernelSpec,
    theta: &[f64],
    x: &[Vec<f64>],
    x0: &[f64],
) -> Result<DVector<f64>> {
    spec.check_theta(theta)?;
    let mut buf = vec![0.0; spec.dim];
    Ok(DVector::from_iterator(
        x.len(),
        x.iter()
            .map(|xi| spec.corr_unchecked(theta, x0, xi, &mut buf)),
    ))
}

/// Pairwise absolute coordinate differences, reused across many theta values.
#[derive(Debug, Clone)]
pub struct PairDiffs {
    pub m: usize,
    pub n: usize,
    data: Vec<f64>,
}

impl PairDiffs {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let m = x.len();
        let n = x.first().map_or(0, |p| p.len());
        let mut data = Vec::with_capacity(m * (m.saturating_sub(1)) / 2 * n);
        for i in 0..m {
            for j in 0..i {
                for k in 0..n {
                    data.push((x[i][k] - x[j][k]).abs());
                }
            }
        }
        PairDiffs { m, n, data }
    }

    pub fn matrix(&self, spec: &KernelSpec, theta: &[f64], nugget: f64) -> DMatrix<f64> {
        let m = self.m;
        let mut r = DMatrix::zeros(m, m);
        let mut off = 0;
        for i in 0..m {
            r[(i, i)] = 1.0 + nugget;
            for j in 0..i {
                let c = spec.corr_absdiff(theta, &self.data[off..off + self.n]);
                off += self.n;
                r[(i, j)] = c;
                r[(j, i)] = c;
            }
        }
        r
    }
}

/// Cholesky factorization with a guard on tiny pivots.
pub fn cholesky(r: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let ch = Cholesky::new(r)?;
    let l = ch.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let p = l[(i, i)];
        p.is_finite() && p * p > MIN_PIVOT2
    });
    ok.then_some(ch)
}

/// Factorize `build(nugget)` following the nugget schedule, starting at `start`.
pub fn factorize_with_nugget<F>(start: f64, build: F) -> Result<(Cholesky<f64, Dyn>, f64)>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let mut last = start;
    for &nug in NUGGET_SCHEDULE.iter().filter(|&&v| v >= start) {
        last = nug;
        if let Some(ch) = cholesky(build(nug)) {
            return Ok((ch, nug));
        }
    }
    Err(Error::NotPositiveDefinite { nugget: last })
}
