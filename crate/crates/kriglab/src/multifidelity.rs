//! Hierarchical Kriging: the low-fidelity surrogate, scaled by a fitted
//! factor, is the high-fidelity trend.

use std::sync::Arc;

use crate::designspace::Dataset;
use crate::error::{Error, Result};
use crate::gpcore::{self, FitConfig, FittedModel, Prediction, Trend};
use crate::kernels::KernelSpec;

/// Two-level HK model. `hf` carries `Trend::LowFidelity(lf)`.
#[derive(Debug, Clone)]
pub struct HkModel {
    pub lf: Arc<FittedModel>,
    pub hf: FittedModel,
}

impl HkModel {
    pub fn from_parts(lf: Arc<FittedModel>, hf: FittedModel) -> Result<Self> {
        match &hf.trend {
            Trend::LowFidelity(t) if Arc::ptr_eq(t, &lf) => Ok(HkModel { lf, hf }),
            _ => Err(Error::InvalidArgument(
                "HF model trend is not the given LF model".into(),
            )),
        }
    }

    /// Scaling factor of the LF trend.
    pub fn mu_hf(&self) -> f64 {
        self.hf.beta[0]
    }

    /// LF predictions at the HF sample points.
    pub fn f_hk(&self) -> Vec<f64> {
        self.hf
            .dataset
            .points
            .iter()
            .map(|x| self.lf.predict_mean(x))
            .collect()
    }

    pub fn predict(&self, x0: &[f64]) -> Prediction {
        self.hf.predict(x0)
    }
}

fn check_domains(lf: &Dataset, hf: &Dataset) -> Result<()> {
    if lf.domain != hf.domain {
        return Err(Error::InvalidArgument(
            "LF and HF datasets use different domains".into(),
        ));
    }
    if lf.len() < 2 || hf.len() < 2 {
        return Err(Error::InvalidArgument(
            "HK needs at least two samples per level".into(),
        ));
    }
    Ok(())
}

/// Fit the LF ordinary model, then the HF model on the LF trend.
pub fn fit_hk(
    lf_dataset: Dataset,
    hf_dataset: Dataset,
    kernel: KernelSpec,
    cfg: &FitConfig,
) -> Result<HkModel> {
    check_domains(&lf_dataset, &hf_dataset)?;
    let n = lf_dataset.dim();
    let lf = Arc::new(gpcore::fit(
        lf_dataset,
        KernelSpec::matern32(n),
        Trend::Constant,
        cfg,
        None,
    )?);
    fit_hf_on(lf, hf_dataset, kernel, cfg, None)
}

/// Fit only the HF level against an already trained LF model.
pub fn fit_hf_on(
    lf: Arc<FittedModel>,
    hf_dataset: Dataset,
    kernel: KernelSpec,
    cfg: &FitConfig,
    warm_start: Option<&[f64]>,
) -> Result<HkModel> {
    let hf = gpcore::fit(
        hf_dataset,
        kernel,
        Trend::LowFidelity(lf.clone()),
        cfg,
        warm_start,
    )?;
    Ok(HkModel { lf, hf })
}

pub fn predict_hk(model: &HkModel, x0: &[f64]) -> Prediction {
    model.predict(x0)
}
