//! Partial least squares (NIPALS) reduction of the correlation scales.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::designspace::Dataset;
use crate::error::{Error, Result};
use crate::gpcore::{self, FitConfig, FittedModel, Trend};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::multifidelity::{self, HkModel};

/// Default number of retained components.
pub fn default_h(n: usize) -> usize {
    n.min(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlsWeights {
    /// `w[l]` is the unit best direction of component l.
    pub w: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    /// Rotated weights W (P^T W)^-1, one vector per component.
    pub w_star: Vec<Vec<f64>>,
    pub h: usize,
    /// Fewer components than requested were extracted.
    pub truncated: bool,
}

/// Univariate NIPALS on centred `x` (m x n) and `y`.
///
/// With a single response the inner loop converges in one step, so each
/// component takes w = X^T y / |X^T y| directly.
pub fn nipals(x: &DMatrix<f64>, y: &DVector<f64>, h: usize) -> Result<PlsWeights> {
    let (m, n) = x.shape();
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: y.len(),
        });
    }
    if h == 0 || h > n || h > m.saturating_sub(1).max(1) {
        return Err(Error::InvalidArgument(format!(
            "h = {h} outside [1, min(m-1, n)] for m = {m}, n = {n}"
        )));
    }
    let mut xd = x.clone();
    let mut yd = y.clone();
    let mut ws: Vec<DVector<f64>> = Vec::new();
    let mut ps: Vec<DVector<f64>> = Vec::new();
    for l in 0..h {
        let mut w = xd.transpose() * &yd;
        let norm = w.norm();
        if norm < 1e-12 {
            if n == 1 && l == 0 {
                // a single input leaves only one direction
                w = DVector::from_element(1, 1.0);
            } else if l == 0 {
                return Err(Error::RankDeficient(0));
            } else {
                break;
            }
        } else {
            w /= norm;
        }
        let t = &xd * &w;
        let tt = t.norm_squared();
        if tt < 1e-24 {
            if l == 0 {
                return Err(Error::RankDeficient(0));
            }
            break;
        }
        let p = xd.transpose() * &t / tt;
        let c = yd.dot(&t) / tt;
        xd -= &t * p.transpose();
        yd -= &t * c;
        ws.push(w);
        ps.push(p);
    }
    let k = ws.len();
    let wm = DMatrix::from_columns(&ws);
    let pm = DMatrix::from_columns(&ps);
    let ptw = pm.transpose() * &wm;
    let inv = ptw.try_inverse().ok_or(Error::RankDeficient(k))?;
    let ws_mat = &wm * inv;
    if ws_mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient(k));
    }
    let cols = |mat: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..mat.ncols())
            .map(|j| mat.column(j).iter().cloned().collect())
            .collect()
    };
    Ok(PlsWeights {
        w: cols(&wm),
        p: cols(&pm),
        w_star: cols(&ws_mat),
        h: k,
        truncated: k < h,
    })
}

/// Centre the dataset columns and responses, then run NIPALS.
pub fn weights_for(dataset: &Dataset, h: usize) -> Result<PlsWeights> {
    let m = dataset.len();
    let n = dataset.dim();
    let mut x = DMatrix::from_fn(m, n, |i, j| dataset.points[i][j]);
    for j in 0..n {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let mut y = DVector::from_column_slice(&dataset.responses);
    let ym = y.mean();
    y.add_scalar_mut(-ym);
    if y.amax() <= 1e-14 * ym.abs().max(1.0) && h <= n {
        // constant responses carry no direction; use the leading axes
        let axes: Vec<Vec<f64>> = (0..h)
            .map(|l| (0..n).map(|i| if i == l { 1.0 } else { 0.0 }).collect())
            .collect();
        return Ok(PlsWeights {
            w: axes.clone(),
            p: axes.clone(),
            w_star: axes,
            h,
            truncated: false,
        });
    }
    nipals(&x, &y, h)
}

/// PLS-weighted Matern 3/2 kernel for the dataset.
pub fn pls_kernel(dataset: &Dataset, h: usize) -> Result<KernelSpec> {
    let w = weights_for(dataset, h)?;
    KernelSpec::new(
        KernelFamily::PlsMatern32 { w_star: w.w_star },
        dataset.dim(),
    )
}

/// Ordinary Kriging with PLS weights computed from the current dataset.
pub fn fit_plsok(dataset: Dataset, h: usize, cfg: &FitConfig) -> Result<FittedModel> {
    let kernel = pls_kernel(&dataset, h)?;
    let version = dataset.version;
    let mut model = gpcore::fit(dataset, kernel, Trend::Constant, cfg, None)?;
    model.weights_version = Some(version);
    Ok(model)
}

/// HK with PLS kernels at both levels, each computed on its own data.
pub fn fit_plshk(
    lf_dataset: Dataset,
    hf_dataset: Dataset,
    h_lf: usize,
    h_hf: usize,
    cfg: &FitConfig,
) -> Result<HkModel> {
    let lf_kernel = pls_kernel(&lf_dataset, h_lf)?;
    let hf_kernel = pls_kernel(&hf_dataset, h_hf)?;
    let (lf_v, hf_v) = (lf_dataset.version, hf_dataset.version);
    let mut hk = fit_hk_with_kernels(lf_dataset, hf_dataset, lf_kernel, hf_kernel, cfg)?;
    if let Some(lf) = Arc::get_mut(&mut hk.lf) {
        lf.weights_version = Some(lf_v);
    }
    hk.hf.weights_version = Some(hf_v);
    Ok(hk)
}

/// HK with explicit kernels at both levels.
pub fn fit_hk_with_kernels(
    lf_dataset: Dataset,
    hf_dataset: Dataset,
    lf_kernel: KernelSpec,
    hf_kernel: KernelSpec,
    cfg: &FitConfig,
) -> Result<HkModel> {
    if lf_dataset.domain != hf_dataset.domain {
        return Err(Error::InvalidArgument(
            "LF and HF datasets use different domains".into(),
        ));
    }
    let lf = Arc::new(gpcore::fit(
        lf_dataset,
        lf_kernel,
        Trend::Constant,
        cfg,
        None,
    )?);
    multifidelity::fit_hf_on(lf, hf_dataset, hf_kernel, cfg, None)
}

/// True when a PLS model's weights were computed from its current dataset.
pub fn weights_current(model: &FittedModel) -> bool {
    match model.kernel.family {
        KernelFamily::PlsMatern32 { .. } => model.weights_version == Some(model.dataset.version),
        _ => true,
    }
}
