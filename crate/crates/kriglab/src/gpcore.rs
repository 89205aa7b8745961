//! Ordinary and universal Kriging: likelihood fit, BLUP prediction and
//! closed-form leave-one-out.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::designspace::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec, PairDiffs};
use crate::optim::{self, PsoConfig};

pub const THETA_MIN: f64 = 1e-3;
pub const THETA_MAX: f64 = 20.0;

/// User-supplied regression basis.
#[derive(Clone)]
pub struct CustomBasis {
    pub name: String,
    pub len: usize,
    pub f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl fmt::Debug for CustomBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomBasis({}, {})", self.name, self.len)
    }
}

/// Regression part of the model.
#[derive(Clone, Debug)]
pub enum Trend {
    /// Ordinary Kriging.
    Constant,
    /// All monomials of total degree <= p.
    Polynomial(usize),
    Custom(CustomBasis),
    /// Hierarchical Kriging: the scaled low-fidelity surrogate is the trend.
    LowFidelity(Arc<FittedModel>),
}

impl Trend {
    pub fn count(&self, n: usize) -> usize {
        match self {
            Trend::Constant => 1,
            Trend::Polynomial(p) => monomials(n, *p).len(),
            Trend::Custom(c) => c.len,
            Trend::LowFidelity(_) => 1,
        }
    }

    pub fn basis(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Trend::Constant => vec![1.0],
            Trend::Polynomial(p) => monomials(x.len(), *p)
                .iter()
                .map(|e| e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product())
                .collect(),
            Trend::Custom(c) => (c.f)(x),
            Trend::LowFidelity(lf) => vec![lf.predict_mean(x)],
        }
    }

    fn regression_matrix(&self, x: &[Vec<f64>]) -> DMatrix<f64> {
        let p = self.count(x.first().map_or(1, |v| v.len()));
        let mut f = DMatrix::zeros(x.len(), p);
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.basis(xi).into_iter().enumerate() {
                f[(i, j)] = v;
            }
        }
        f
    }
}

/// Exponent vectors of all monomials in n variables up to total degree p.
fn monomials(n: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n]];
    for deg in 1..=p {
        let mut cur = vec![0usize; n];
        fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k + 1 == cur.len() {
                cur[k] = left;
                out.push(cur.clone());
                return;
            }
            for e in (0..=left).rev() {
                cur[k] = e;
                rec(k + 1, left - e, cur, out);
            }
        }
        rec(0, deg, &mut cur, &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Two-sided interval mean +/- z(1 - alpha/2) * sd.
pub fn confidence_interval(pred: &Prediction, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} not in (0,1)"
        )));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let h = z * pred.variance.max(0.0).sqrt();
    Ok((pred.mean - h, pred.mean + h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub pso: PsoConfig,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            pso: PsoConfig::default(),
            theta_min: THETA_MIN,
            theta_max: THETA_MAX,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub psi: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub nugget: f64,
    /// All responses equal (or exactly explained by the trend); sigma2 is zero.
    pub degenerate: bool,
}

/// Closed-form leave-one-out results.
#[derive(Debug, Clone, PartialEq)]
pub struct Loo {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Loo {
    pub fn errors(&self, y: &[f64]) -> Vec<f64> {
        self.means.iter().zip(y).map(|(m, y)| m - y).collect()
    }
}

#[derive(Debug, Clone)]
struct AugInverse {
    /// top-left block of the inverse of [[R, F], [F^T, 0]]
    q11: DMatrix<f64>,
    /// top-right block
    q12: DMatrix<f64>,
}

/// A trained Kriging model. Immutable once built.
#[derive(Clone)]
pub struct FittedModel {
    pub dataset: Dataset,
    pub kernel: KernelSpec,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub nugget: f64,
    pub trend: Trend,
    pub beta: DVector<f64>,
    pub report: FitReport,
    /// Dataset version the PLS weights were computed from, if any.
    pub weights_version: Option<u64>,
    chol: Cholesky<f64, Dyn>,
    f_mat: DMatrix<f64>,
    rinv_f: DMatrix<f64>,
    g_chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    aug: OnceLock<Option<AugInverse>>,
}

impl fmt::Debug for FittedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FittedModel")
            .field("m", &self.dataset.len())
            .field("kernel", &self.kernel.family)
            .field("theta", &self.theta)
            .field("sigma2", &self.sigma2)
            .field("nugget", &self.nugget)
            .field("beta", &self.beta.as_slice())
            .finish()
    }
}

fn is_constant(y: &[f64]) -> bool {
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= 1e-14 * lo.abs().max(hi.abs()).max(1.0)
}

struct Gls {
    beta: DVector<f64>,
    sigma2: f64,
    rinv_f: DMatrix<f64>,
    g_chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Generalized least squares given a factorized R.
fn gls(chol: &Cholesky<f64, Dyn>, f: &DMatrix<f64>, y: &DVector<f64>) -> Option<Gls> {
    let m = y.len() as f64;
    let rinv_f = chol.solve(f);
    let g = f.transpose() * &rinv_f;
    let g_chol = kernels::cholesky(g)?;
    let rhs = rinv_f.transpose() * y;
    let beta = g_chol.solve(&rhs);
    let resid = y - f * &beta;
    let alpha = chol.solve(&resid);
    let sigma2 = (resid.dot(&alpha) / m).max(0.0);
    Some(Gls {
        beta,
        sigma2,
        rinv_f,
        g_chol,
        alpha,
    })
}

/// Reduced likelihood psi(theta) = sigma2 * det(R)^(1/m), with the nugget schedule.
pub fn reduced_likelihood(
    pd: &PairDiffs,
    kernel: &KernelSpec,
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &[f64],
) -> f64 {
    let m = y.len();
    let Ok((chol, _)) = kernels::factorize_with_nugget(0.0, |nug| pd.matrix(kernel, theta, nug))
    else {
        return f64::INFINITY;
    };
    let l = chol.l_dirty();
    let logdet: f64 = (0..m).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    // psi only needs sigma2, so skip the extra solve for alpha
    let z = chol.l().solve_lower_triangular(f);
    let zy = chol.l().solve_lower_triangular(y);
    let (Some(z), Some(zy)) = (z, zy) else {
        return f64::INFINITY;
    };
    let Some(g) = kernels::cholesky(z.transpose() * &z) else {
        return f64::INFINITY;
    };
    let beta = g.solve(&(z.transpose() * &zy));
    let r = zy - z * beta;
    let sigma2 = r.norm_squared() / m as f64;
    sigma2 * (logdet / m as f64).exp()
}

impl FittedModel {
    /// Assemble a model at fixed hyperparameters. The nugget follows the
    /// schedule starting at `nugget_start`.
    pub fn with_theta(
        dataset: Dataset,
        kernel: KernelSpec,
        trend: Trend,
        theta: Vec<f64>,
        nugget_start: f64,
    ) -> Result<Self> {
        kernel.check_theta(&theta)?;
        let m = dataset.len();
        if m == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let p = trend.count(dataset.dim());
        if p > m {
            return Err(Error::InvalidArgument(format!(
                "{p} trend terms exceed {m} samples"
            )));
        }
        let (chol, nugget) = kernels::factorize_with_nugget(nugget_start, |nug| {
            kernels::correlation_matrix(&kernel, &theta, &dataset.points, nug)
                .expect("theta checked above")
        })?;
        Self::assemble(dataset, kernel, trend, theta, chol, nugget)
    }

    /// Rebuild at an exact nugget (used when loading a stored model).
    pub fn with_exact_nugget(
        dataset: Dataset,
        kernel: KernelSpec,
        trend: Trend,
        theta: Vec<f64>,
        nugget: f64,
    ) -> Result<Self> {
        kernel.check_theta(&theta)?;
        let r = kernels::correlation_matrix(&kernel, &theta, &dataset.points, nugget)?;
        let chol = kernels::cholesky(r).ok_or(Error::NotPositiveDefinite { nugget })?;
        Self::assemble(dataset, kernel, trend, theta, chol, nugget)
    }

    fn assemble(
        dataset: Dataset,
        kernel: KernelSpec,
        trend: Trend,
        theta: Vec<f64>,
        chol: Cholesky<f64, Dyn>,
        nugget: f64,
    ) -> Result<Self> {
        let f_mat = trend.regression_matrix(&dataset.points);
        let y = DVector::from_column_slice(&dataset.responses);
        let g = gls(&chol, &f_mat, &y).ok_or(Error::NotPositiveDefinite { nugget })?;
        let ymax = y.amax().max(1e-300);
        let degenerate = is_constant(&dataset.responses) || g.sigma2 <= 1e-26 * ymax * ymax;
        let sigma2 = if degenerate { 0.0 } else { g.sigma2 };
        let alpha = g.alpha;
        Ok(FittedModel {
            dataset,
            kernel,
            theta,
            sigma2,
            nugget,
            trend,
            beta: g.beta,
            report: FitReport {
                nugget,
                degenerate,
                ..FitReport::default()
            },
            weights_version: None,
            chol,
            f_mat,
            rinv_f: g.rinv_f,
            g_chol: g.g_chol,
            alpha,
            aug: OnceLock::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.dataset.len()
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn is_ordinary(&self) -> bool {
        matches!(self.trend, Trend::Constant)
    }

    pub fn cross(&self, x0: &[f64]) -> DVector<f64> {
        let mut buf = vec![0.0; self.kernel.dim];
        DVector::from_iterator(
            self.m(),
            self.dataset
                .points
                .iter()
                .map(|xi| self.kernel.corr_unchecked(&self.theta, x0, xi, &mut buf)),
        )
    }

    /// Mean only, skipping the variance solve.
    pub fn predict_mean(&self, x0: &[f64]) -> f64 {
        let r0 = self.cross(x0);
        let f0 = self.trend.basis(x0);
        let t: f64 = f0.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        t + r0.dot(&self.alpha)
    }

    /// BLUP mean and variance at a normalized point.
    pub fn predict(&self, x0: &[f64]) -> Prediction {
        if self.is_ordinary() {
            self.predict_ordinary(x0)
        } else {
            self.predict_universal(x0)
        }
    }

    /// Scalar ordinary-Kriging formulas (trend is the constant mu).
    pub fn predict_ordinary(&self, x0: &[f64]) -> Prediction {
        let r0 = self.cross(x0);
        let mu = self.beta[0];
        let mean = mu + r0.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&r0)
            .expect("factor is nonsingular");
        let one_rinv_one = self.f_mat.column(0).dot(&self.rinv_f.column(0));
        let one_rinv_r0 = self.rinv_f.column(0).dot(&r0);
        let var =
            self.sigma2 * (1.0 - v.norm_squared() + (1.0 - one_rinv_r0).powi(2) / one_rinv_one);
        Prediction {
            mean,
            variance: var.max(0.0),
        }
    }

    /// General matrix form with u0 = F^T R^-1 r0 - f0.
    pub fn predict_universal(&self, x0: &[f64]) -> Prediction {
        let r0 = self.cross(x0);
        let f0 = DVector::from_vec(self.trend.basis(x0));
        let mean = f0.dot(&self.beta) + r0.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&r0)
            .expect("factor is nonsingular");
        let u0 = self.rinv_f.transpose() * &r0 - f0;
        let w = self.g_chol.solve(&u0);
        let var = self.sigma2 * (1.0 - v.norm_squared() + u0.dot(&w));
        Prediction {
            mean,
            variance: var.max(0.0),
        }
    }

    pub fn predict_raw(&self, x: &[f64]) -> Result<Prediction> {
        let z = self.dataset.domain.normalize(x)?;
        Ok(self.predict(&z))
    }

    fn aug(&self) -> Option<&AugInverse> {
        self.aug
            .get_or_init(|| {
                let m = self.m();
                let rinv = self.chol.inverse();
                let ginv = self.g_chol.inverse();
                let q12 = &self.rinv_f * &ginv;
                let q11 = rinv - &q12 * self.rinv_f.transpose();
                (0..m)
                    .all(|i| q11[(i, i)] > 0.0)
                    .then_some(AugInverse { q11, q12 })
            })
            .as_ref()
    }

    /// Dubrule closed-form leave-one-out means and variances.
    ///
    /// Uses S = [[sigma2 R, F], [F^T, 0]] and B the top-left block of its
    /// inverse; the variance therefore matches a refit with sigma2 held fixed.
    pub fn loo_dubrule(&self) -> Result<Loo> {
        let aug = self.loo_block()?;
        let m = self.m();
        let mut means = Vec::with_capacity(m);
        let mut variances = Vec::with_capacity(m);
        let y = &self.dataset.responses;
        for i in 0..m {
            let qii = aug.q11[(i, i)];
            // B = q11 / sigma2, so B_ij / B_ii = q_ij / q_ii
            let s: f64 = (0..m)
                .filter(|&j| j != i)
                .map(|j| aug.q11[(i, j)] * y[j])
                .sum();
            means.push(-s / qii);
            variances.push(self.sigma2 / qii);
        }
        Ok(Loo { means, variances })
    }

    fn loo_block(&self) -> Result<&AugInverse> {
        match self.aug() {
            Some(a) => Ok(a),
            None => {
                let q = self.chol.inverse();
                let i = (0..self.m()).find(|&i| q[(i, i)] <= 0.0).unwrap_or(0);
                Err(Error::SingularBlock(i))
            }
        }
    }

    /// Predictions at `x0` of every leave-one-out sub-model (frozen hyperparameters).
    ///
    /// With Q the inverse of [[R, F], [F^T, 0]], a = Q [y; 0] and c = Q [r0; f0],
    /// removing sample i shifts the prediction by c_i a_i / Q_ii.
    pub fn loo_predictions_at(&self, x0: &[f64]) -> Result<(f64, Vec<f64>)> {
        let aug = self.loo_block()?;
        let r0 = self.cross(x0);
        let f0 = DVector::from_vec(self.trend.basis(x0));
        let full = f0.dot(&self.beta) + r0.dot(&self.alpha);
        let c = &aug.q11 * &r0 + &aug.q12 * &f0;
        let out = (0..self.m())
            .map(|i| full - c[i] * self.alpha[i] / aug.q11[(i, i)])
            .collect();
        Ok((full, out))
    }

    pub fn gmse(&self) -> Result<f64> {
        let loo = self.loo_dubrule()?;
        let e = loo.errors(&self.dataset.responses);
        Ok((e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt())
    }

    pub fn q2(&self) -> Result<f64> {
        let loo = self.loo_dubrule()?;
        let y = &self.dataset.responses;
        let m = y.len() as f64;
        let s: f64 = (0..y.len())
            .map(|i| {
                let e = loo.means[i] - y[i];
                if loo.variances[i] > 0.0 {
                    e * e / loo.variances[i]
                } else if e == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .sum();
        Ok(1.0 - s / m)
    }

    /// psi at the stored hyperparameters.
    pub fn psi(&self) -> f64 {
        let m = self.m();
        let l = self.chol.l_dirty();
        let logdet: f64 = (0..m).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        self.sigma2 * (logdet / m as f64).exp()
    }

    /// Recompute (beta, sigma2) from scratch with a dense inverse.
    pub fn recompute_gls(&self) -> (DVector<f64>, f64) {
        let r = kernels::correlation_matrix(
            &self.kernel,
            &self.theta,
            &self.dataset.points,
            self.nugget,
        )
        .expect("valid theta");
        let rinv = r.try_inverse().expect("R invertible");
        let y = DVector::from_column_slice(&self.dataset.responses);
        let f = &self.f_mat;
        let g = f.transpose() * &rinv * f;
        let beta = g.try_inverse().expect("G invertible") * (f.transpose() * &rinv * &y);
        let res = &y - f * &beta;
        let s2 = (res.transpose() * &rinv * &res)[(0, 0)] / y.len() as f64;
        (beta, s2)
    }
}

/// Maximum-likelihood fit of the correlation scales in log10 coordinates.
pub fn fit(
    dataset: Dataset,
    kernel: KernelSpec,
    trend: Trend,
    cfg: &FitConfig,
    warm_start: Option<&[f64]>,
) -> Result<FittedModel> {
    let m = dataset.len();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "fit needs at least two samples".into(),
        ));
    }
    let td = kernel.theta_dim();
    let p = trend.count(dataset.dim());
    if p > m {
        return Err(Error::InvalidArgument(format!(
            "{p} trend terms exceed {m} samples"
        )));
    }
    if is_constant(&dataset.responses) {
        let theta = vec![1.0; td];
        let mut model = FittedModel::with_theta(dataset, kernel, trend, theta, 0.0)?;
        model.report.degenerate = true;
        return Ok(model);
    }
    let pd = PairDiffs::new(&dataset.points);
    let f = trend.regression_matrix(&dataset.points);
    let y = DVector::from_column_slice(&dataset.responses);
    let lo = vec![cfg.theta_min.log10(); td];
    let hi = vec![cfg.theta_max.log10(); td];
    let guesses: Vec<Vec<f64>> = warm_start
        .filter(|w| w.len() == td && w.iter().all(|t| *t > 0.0))
        .map(|w| vec![w.iter().map(|t| t.log10()).collect()])
        .unwrap_or_default();
    let res = optimize_mle(
        |lt: &[f64]| {
            let th: Vec<f64> = lt.iter().map(|v| 10f64.powf(*v)).collect();
            reduced_likelihood(&pd, &kernel, &f, &y, &th)
        },
        &lo,
        &hi,
        &guesses,
        &cfg.pso,
    );
    if !res.f.is_finite() {
        return Err(Error::NotPositiveDefinite {
            nugget: *kernels::NUGGET_SCHEDULE.last().unwrap(),
        });
    }
    let theta: Vec<f64> = res.x.iter().map(|v| 10f64.powf(*v)).collect();
    let mut model = FittedModel::with_theta(dataset, kernel, trend, theta, 0.0)?;
    model.report.psi = res.f;
    model.report.evaluations = res.evaluations;
    model.report.iterations = res.iterations;
    Ok(model)
}

/// Ordinary Kriging with the default Matern 3/2 kernel.
pub fn fit_ok(dataset: Dataset, cfg: &FitConfig) -> Result<FittedModel> {
    let n = dataset.dim();
    fit(dataset, KernelSpec::matern32(n), Trend::Constant, cfg, None)
}

/// Hybrid swarm + polish minimizer used for the likelihood.
pub fn optimize_mle<F>(
    psi: F,
    lo: &[f64],
    hi: &[f64],
    guesses: &[Vec<f64>],
    cfg: &PsoConfig,
) -> optim::OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    optim::minimize(psi, lo, hi, guesses, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designspace::Domain;

    fn schwefel_ds(m: usize) -> Dataset {
        let d = Domain::new(vec![0.0], vec![15.0]).unwrap();
        let pts = crate::designspace::tplhd(m, 1).unwrap();
        let ys = pts
            .iter()
            .map(|z| {
                let x = 15.0 * z[0];
                x * x.sin()
            })
            .collect();
        Dataset::new(pts, ys, d).unwrap()
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(2, 0).len(), 1);
        assert_eq!(monomials(2, 1).len(), 3);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 2).len(), 10);
    }

    #[test]
    fn constant_responses_are_degenerate() {
        let ds = Dataset::new(
            vec![vec![0.1], vec![0.5], vec![0.9]],
            vec![2.5; 3],
            Domain::unit(1),
        )
        .unwrap();
        let m = fit_ok(ds, &FitConfig::default()).unwrap();
        assert!(m.report.degenerate);
        assert_eq!(m.sigma2, 0.0);
        assert!((m.beta[0] - 2.5).abs() < 1e-12);
        let p = m.predict(&[0.3]);
        assert!((p.mean - 2.5).abs() < 1e-12);
        assert_eq!(p.variance, 0.0);
        let loo = m.loo_dubrule().unwrap();
        assert!(loo.means.iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn schwefel_interpolates() {
        let m = fit_ok(schwefel_ds(10), &FitConfig::default()).unwrap();
        for (x, y) in m.dataset.points.iter().zip(&m.dataset.responses) {
            let p = m.predict(x);
            assert!((p.mean - y).abs() < 1e-6);
            assert!(p.variance <= 1e-8 * m.sigma2);
        }
    }

    #[test]
    fn psi_is_minimal_against_probes() {
        use rand::{Rng, SeedableRng};
        let m = fit_ok(schwefel_ds(8), &FitConfig::default()).unwrap();
        let pd = PairDiffs::new(&m.dataset.points);
        let f = DMatrix::from_element(8, 1, 1.0);
        let y = DVector::from_column_slice(&m.dataset.responses);
        let best = reduced_likelihood(&pd, &m.kernel, &f, &y, &m.theta);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let lt: f64 = rng.random_range(THETA_MIN.log10()..THETA_MAX.log10());
            let v = reduced_likelihood(&pd, &m.kernel, &f, &y, &[10f64.powf(lt)]);
            assert!(best <= v * (1.0 + 1e-9), "{best} > {v}");
        }
        // stored factors agree with a dense recomputation
        let (beta, s2) = m.recompute_gls();
        assert!((beta[0] - m.beta[0]).abs() <= 1e-10 * m.beta[0].abs().max(1.0));
        assert!((s2 - m.sigma2).abs() <= 1e-8 * m.sigma2);
    }

    #[test]
    fn confidence_interval_quantile() {
        let (lo, hi) = confidence_interval(
            &Prediction {
                mean: 0.0,
                variance: 1.0,
            },
            0.05,
        )
        .unwrap();
        assert!((hi - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((lo + hi).abs() < 1e-15);
        let (a, b) = confidence_interval(
            &Prediction {
                mean: 3.0,
                variance: 0.0,
            },
            0.1,
        )
        .unwrap();
        assert_eq!((a, b), (3.0, 3.0));
        let (_, h4) = confidence_interval(
            &Prediction {
                mean: 0.0,
                variance: 4.0,
            },
            0.05,
        )
        .unwrap();
        assert!((h4 - 2.0 * hi).abs() < 1e-12);
    }

    #[test]
    fn far_point_reverts_to_mean() {
        let ds = schwefel_ds(6);
        let m = FittedModel::with_theta(
            ds,
            KernelSpec::matern32(1),
            Trend::Constant,
            vec![1e-3],
            0.0,
        )
        .unwrap();
        let p = m.predict(&[0.5 / 6.0 + 0.08]);
        assert!((p.mean - m.beta[0]).abs() < 1e-6 * m.beta[0].abs().max(1.0));
        assert!(p.variance >= m.sigma2 * (1.0 - 1e-9));
    }

    fn branin_ds() -> Dataset {
        let pts = crate::designspace::tplhd(12, 2).unwrap();
        let ys = pts
            .iter()
            .map(|z| {
                let (a, b) = (15.0 * z[0] - 5.0, 15.0 * z[1]);
                let pi = std::f64::consts::PI;
                (b - 5.1 / (4.0 * pi * pi) * a * a + 5.0 / pi * a - 6.0).powi(2)
                    + 10.0 * (1.0 - 1.0 / (8.0 * pi)) * a.cos()
            })
            .collect();
        Dataset::new(pts, ys, Domain::unit(2)).unwrap()
    }

    /// Refit without sample i at frozen theta, nugget and sigma2.
    fn brute_loo(m: &FittedModel, i: usize, x0: &[f64]) -> Prediction {
        let sub = FittedModel::with_exact_nugget(
            m.dataset.without(&[i]),
            m.kernel.clone(),
            m.trend.clone(),
            m.theta.clone(),
            m.nugget,
        )
        .unwrap();
        let p = sub.predict(x0);
        let scale = if sub.sigma2 > 0.0 {
            m.sigma2 / sub.sigma2
        } else {
            0.0
        };
        Prediction {
            mean: p.mean,
            variance: p.variance * scale,
        }
    }

    #[test]
    fn dubrule_matches_refit() {
        for trend in [Trend::Constant, Trend::Polynomial(1)] {
            let m = FittedModel::with_theta(
                branin_ds(),
                KernelSpec::matern32(2),
                trend,
                vec![2.0, 3.0],
                0.0,
            )
            .unwrap();
            let loo = m.loo_dubrule().unwrap();
            for i in 0..m.m() {
                let b = brute_loo(&m, i, &m.dataset.points[i].clone());
                let tol = 1e-8 * m.dataset.responses[i].abs().max(1.0);
                assert!(
                    (loo.means[i] - b.mean).abs() < tol,
                    "{i}: {} vs {}",
                    loo.means[i],
                    b.mean
                );
                assert!((loo.variances[i] - b.variance).abs() < 1e-7 * b.variance.max(1e-12));
            }
        }
    }

    #[test]
    fn sub_model_predictions_match_refit() {
        let m = FittedModel::with_theta(
            branin_ds(),
            KernelSpec::matern32(2),
            Trend::Polynomial(1),
            vec![1.5, 4.0],
            0.0,
        )
        .unwrap();
        let x0 = [0.37, 0.81];
        let (full, subs) = m.loo_predictions_at(&x0).unwrap();
        assert!((full - m.predict(&x0).mean).abs() < 1e-10);
        for (i, s) in subs.iter().enumerate() {
            let b = brute_loo(&m, i, &x0);
            assert!((s - b.mean).abs() < 1e-8 * b.mean.abs().max(1.0));
        }
    }

    #[test]
    fn universal_degree_zero_equals_ordinary() {
        let ok = FittedModel::with_theta(
            branin_ds(),
            KernelSpec::matern32(2),
            Trend::Constant,
            vec![2.0, 0.7],
            0.0,
        )
        .unwrap();
        let uk = FittedModel::with_theta(
            branin_ds(),
            KernelSpec::matern32(2),
            Trend::Polynomial(0),
            vec![2.0, 0.7],
            0.0,
        )
        .unwrap();
        assert!(!uk.is_ordinary());
        for x in [[0.1, 0.2], [0.5, 0.5], [0.93, 0.01]] {
            let a = ok.predict_ordinary(&x);
            let b = uk.predict_universal(&x);
            assert!((a.mean - b.mean).abs() < 1e-9 * a.mean.abs().max(1.0));
            assert!((a.variance - b.variance).abs() < 1e-9 * a.variance.max(1e-12));
        }
    }

    #[test]
    fn custom_basis_and_rank_check() {
        let basis = CustomBasis {
            name: "lin".into(),
            len: 2,
            f: Arc::new(|x: &[f64]| vec![1.0, x[0]]),
        };
        let m = FittedModel::with_theta(
            schwefel_ds(8),
            KernelSpec::matern32(1),
            Trend::Custom(basis),
            vec![5.0],
            0.0,
        )
        .unwrap();
        assert_eq!(m.beta.len(), 2);
        let too_many = FittedModel::with_theta(
            schwefel_ds(3),
            KernelSpec::matern32(1),
            Trend::Polynomial(3),
            vec![5.0],
            0.0,
        );
        assert!(too_many.is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn loo_identity_holds(ys in proptest::collection::vec(-10.0f64..10.0, 7), th in 0.5f64..8.0) {
            let pts = crate::designspace::tplhd(7, 2).unwrap();
            let ds = Dataset::new(pts, ys, Domain::unit(2)).unwrap();
            let m = FittedModel::with_theta(ds, KernelSpec::matern32(2), Trend::Constant, vec![th, th], 0.0).unwrap();
            let loo = m.loo_dubrule().unwrap();
            for i in 0..7 {
                let b = brute_loo(&m, i, &m.dataset.points[i].clone());
                proptest::prop_assert!((loo.means[i] - b.mean).abs() < 1e-7);
            }
        }
    }
}
