//! Adaptive sampling: one new point per iteration chosen by an infill
//! strategy, plus the propose/evaluate/refit loop.
//!
//! All points handled here are normalized to the unit cube.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::benchfns::BenchmarkProblem;
use crate::designspace::{
    default_pool_size, dist, monte_carlo_pool, tplhd, CandidatePool, Dataset, Domain,
};
use crate::error::{Error, Result};
use crate::gpcore::{self, FitConfig, FittedModel, Trend};
use crate::kernels::{self, KernelSpec};
use crate::metrics::{classification_rates, compute_metrics, MetricReport};
use crate::multifidelity::HkModel;
use crate::optim::{maximize_unit, OptimResult, PsoConfig};
use crate::plsreduce;

/// Proposals closer than this to an existing sample end the run.
pub const CLUSTER_TOL: f64 = 1e-8;

/// Samples cap used when a stopping rule gives no budget.
pub const DEFAULT_MAX_SAMPLES: usize = 500;

/// Strategy parameters as read from a config file. Unused keys for the
/// selected strategy are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyParams {
    /// WEI weight on the improvement term.
    pub w: f64,
    /// EI/WEI look for maxima instead of minima.
    pub maximize: bool,
    /// AME exponent schedule, cycled per iteration.
    pub gammas: Vec<f64>,
    /// ACE decay rate; `None` uses one over the mean nearest-neighbour distance.
    pub alpha_doi: Option<f64>,
    /// SSA rejection distance.
    pub epsilon: f64,
    /// SSA refits each leave-one-out sub-model.
    pub ssa_refit: bool,
    /// MASA committee size.
    pub committee: usize,
    /// MIVor initial exploration rate.
    pub r0: f64,
    pub alpha_decay: f64,
    pub r_min: f64,
    /// MIVor class threshold on the response.
    pub threshold: f64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            w: 0.5,
            maximize: false,
            gammas: vec![0.5, 1.0, 2.0],
            alpha_doi: None,
            epsilon: 0.01,
            ssa_refit: true,
            committee: 5,
            r0: 0.5,
            alpha_decay: 1.05,
            r_min: 0.05,
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MivorParams {
    pub r0: f64,
    pub alpha_decay: f64,
    pub r_min: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Ace {
        alpha_doi: Option<f64>,
    },
    Ame {
        gammas: Vec<f64>,
    },
    Cvd,
    Cvvor,
    Ei {
        maximize: bool,
    },
    Wei {
        w: f64,
        maximize: bool,
    },
    Eigf,
    Masa {
        committee: usize,
    },
    Mepe,
    Mipt,
    Msd,
    Mmse,
    Sfcvt,
    /// `refit` refits each leave-one-out sub-model instead of freezing its scales.
    Ssa {
        epsilon: f64,
        refit: bool,
    },
    Mivor(MivorParams),
}

pub const STRATEGY_NAMES: [&str; 15] = [
    "ace", "ame", "cvd", "cvvor", "ei", "wei", "eigf", "masa", "mepe", "mipt", "msd", "mmse",
    "sfcvt", "ssa", "mivor",
];

impl Strategy {
    pub fn from_name(name: &str, p: &StrategyParams) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("{name}: {m}")));
        let s = match name {
            "ace" => {
                if matches!(p.alpha_doi, Some(a) if !(a > 0.0)) {
                    return bad("alpha_doi must be positive");
                }
                Strategy::Ace {
                    alpha_doi: p.alpha_doi,
                }
            }
            "ame" => {
                if p.gammas.is_empty() || p.gammas.iter().any(|g| !(*g >= 0.0)) {
                    return bad("gammas must be a nonempty list of nonnegative numbers");
                }
                Strategy::Ame {
                    gammas: p.gammas.clone(),
                }
            }
            "cvd" => Strategy::Cvd,
            "cvvor" => Strategy::Cvvor,
            "ei" => Strategy::Ei {
                maximize: p.maximize,
            },
            "wei" => {
                if !(0.0..=1.0).contains(&p.w) {
                    return bad("w must lie in [0, 1]");
                }
                Strategy::Wei {
                    w: p.w,
                    maximize: p.maximize,
                }
            }
            "eigf" => Strategy::Eigf,
            "masa" => {
                if p.committee < 2 {
                    return bad("committee must be at least 2");
                }
                Strategy::Masa {
                    committee: p.committee,
                }
            }
            "mepe" => Strategy::Mepe,
            "mipt" => Strategy::Mipt,
            "msd" => Strategy::Msd,
            "mmse" => Strategy::Mmse,
            "sfcvt" => Strategy::Sfcvt,
            "ssa" => {
                if !(p.epsilon >= 0.0) {
                    return bad("epsilon must be nonnegative");
                }
                Strategy::Ssa {
                    epsilon: p.epsilon,
                    refit: p.ssa_refit,
                }
            }
            "mivor" => {
                if !(0.0..=1.0).contains(&p.r0)
                    || !(p.alpha_decay >= 1.0)
                    || !(0.0..=1.0).contains(&p.r_min)
                {
                    return bad("need r0, r_min in [0, 1] and alpha_decay >= 1");
                }
                Strategy::Mivor(MivorParams {
                    r0: p.r0,
                    alpha_decay: p.alpha_decay,
                    r_min: p.r_min,
                    threshold: p.threshold,
                })
            }
            _ => return Err(Error::UnknownName(name.to_string())),
        };
        Ok(s)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ace { .. } => "ace",
            Strategy::Ame { .. } => "ame",
            Strategy::Cvd => "cvd",
            Strategy::Cvvor => "cvvor",
            Strategy::Ei { .. } => "ei",
            Strategy::Wei { .. } => "wei",
            Strategy::Eigf => "eigf",
            Strategy::Masa { .. } => "masa",
            Strategy::Mepe => "mepe",
            Strategy::Mipt => "mipt",
            Strategy::Msd => "msd",
            Strategy::Mmse => "mmse",
            Strategy::Sfcvt => "sfcvt",
            Strategy::Ssa { .. } => "ssa",
            Strategy::Mivor(_) => "mivor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposeResult {
    pub point: Vec<f64>,
    pub score: f64,
    pub diagnostics: BTreeMap<String, f64>,
    /// Branch taken, for strategies that switch between modes.
    pub branch: Option<String>,
}

impl ProposeResult {
    fn new(point: Vec<f64>, score: f64) -> Self {
        ProposeResult {
            point,
            score,
            ..Default::default()
        }
    }

    fn diag(mut self, k: &str, v: f64) -> Self {
        self.diagnostics.insert(k.to_string(), v);
        self
    }
}

/// Data carried between iterations by stateful strategies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrategyMemory {
    /// MEPE: (true squared error, estimated squared error) at the last added point.
    pub mepe_last: Option<(f64, f64)>,
    /// MEPE: (model mean, estimated squared error) at the pending proposal.
    pub mepe_pending: Option<(f64, f64)>,
    pub mepe_alpha: Option<f64>,
    /// MIVor exploration rate.
    pub mivor_r: Option<f64>,
    /// Number of AME steps taken, for the gamma cycle.
    pub ame_steps: usize,
}

// ---------------------------------------------------------------------------
// geometry helpers

/// Index and distance of the nearest point; ties go to the lowest index.
pub fn nearest(points: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = dist(p, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Distance from `x` to the nearest sample.
pub fn d_nn(points: &[Vec<f64>], x: &[f64]) -> f64 {
    nearest(points, x).1
}

/// Each sample's distance to its nearest other sample.
pub fn nn_distances(points: &[Vec<f64>]) -> Vec<f64> {
    (0..points.len())
        .map(|i| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| dist(p, &points[i]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        if x.is_nan() {
            continue;
        }
        match best {
            Some(b) if *x <= v[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Monte Carlo estimate of each sample's share of the unit cube.
pub fn voronoi_volumes(points: &[Vec<f64>], pool: &CandidatePool) -> Result<Vec<f64>> {
    if pool.points.is_empty() {
        return Err(Error::InvalidArgument("empty candidate pool".into()));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut counts = vec![0usize; points.len()];
    for p in &pool.points {
        counts[nearest(points, p).0] += 1;
    }
    let total = pool.points.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

fn loo_abs_errors(model: &FittedModel) -> Result<Vec<f64>> {
    let loo = model.loo_dubrule()?;
    Ok(loo
        .errors(&model.dataset.responses)
        .iter()
        .map(|e| e.abs())
        .collect())
}

fn check_pool(pool: &CandidatePool, n: usize) -> Result<()> {
    match pool.points.first() {
        None => Err(Error::InvalidArgument("empty candidate pool".into())),
        Some(p) if p.len() != n => Err(Error::DimensionMismatch {
            expected: n,
            got: p.len(),
        }),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// pool based strategies

/// Intersite-projected-threshold rank of one candidate.
pub fn mipt_rank(points: &[Vec<f64>], p: &[f64], d_min: f64) -> f64 {
    let proj = points
        .iter()
        .map(|x| {
            x.iter()
                .zip(p)
                .map(|(a, b)| (a - b).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    if proj < d_min {
        0.0
    } else {
        d_nn(points, p)
    }
}

pub fn propose_mipt(dataset: &Dataset, pool: &CandidatePool) -> Result<ProposeResult> {
    check_pool(pool, dataset.dim())?;
    let d_min = 1.0 / pool.points.len() as f64;
    let ranks: Vec<f64> = pool
        .points
        .iter()
        .map(|p| mipt_rank(&dataset.points, p, d_min))
        .collect();
    let best = argmax(&ranks)
        .filter(|&i| ranks[i] > 0.0)
        .ok_or(Error::AllCandidatesRejected)?;
    Ok(ProposeResult::new(pool.points[best].clone(), ranks[best]).diag("d_min", d_min))
}

pub fn propose_msd(dataset: &Dataset, pool: &CandidatePool) -> Result<ProposeResult> {
    check_pool(pool, dataset.dim())?;
    let d: Vec<f64> = pool
        .points
        .iter()
        .map(|p| d_nn(&dataset.points, p))
        .collect();
    let best = argmax(&d).expect("pool is nonempty");
    Ok(ProposeResult::new(pool.points[best].clone(), d[best]))
}

/// Cross-validation Voronoi: the cell of the sample with the largest LOO
/// error, sampled at its point farthest from the owner.
pub fn propose_cvvor(model: &FittedModel, pool: &CandidatePool) -> Result<ProposeResult> {
    check_pool(pool, model.dim())?;
    let pts = &model.dataset.points;
    let errs = if pts.len() > 1 {
        loo_abs_errors(model)?
    } else {
        vec![0.0]
    };
    let owner = argmax(&errs).unwrap_or(0);
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in pool.points.iter().enumerate() {
        let (i, d) = nearest(pts, p);
        if i == owner && best.is_none_or(|(_, bd)| d > bd) {
            best = Some((k, d));
        }
    }
    let (k, d) = best.ok_or(Error::EmptyCell)?;
    Ok(ProposeResult::new(pool.points[k].clone(), d)
        .diag("owner", owner as f64)
        .diag("owner_error", errs[owner]))
}

/// Query-by-committee variance and distance, both normalized.
pub fn propose_masa(
    model: &FittedModel,
    committee: usize,
    pool: &CandidatePool,
    seed: u64,
) -> Result<ProposeResult> {
    check_pool(pool, model.dim())?;
    let members = committee_models(model, committee, seed)?;
    let pts = &model.dataset.points;
    let mut dists = Vec::with_capacity(pool.points.len());
    let mut vars = Vec::with_capacity(pool.points.len());
    for p in &pool.points {
        dists.push(d_nn(pts, p));
        let preds: Vec<f64> = members.iter().map(|mm| mm.predict_mean(p)).collect();
        vars.push(population_variance(&preds));
    }
    let dmax = dists.iter().cloned().fold(0.0, f64::max);
    let vmax = vars.iter().cloned().fold(0.0, f64::max);
    let eta: Vec<f64> = dists
        .iter()
        .zip(&vars)
        .map(|(d, v)| {
            let a = if dmax > 0.0 { d / dmax } else { 0.0 };
            let b = if vmax > 0.0 { v / vmax } else { 0.0 };
            a + b
        })
        .collect();
    let best = argmax(&eta).expect("pool is nonempty");
    Ok(ProposeResult::new(pool.points[best].clone(), eta[best])
        .diag("qbc_variance", vars[best])
        .diag("distance", dists[best]))
}

pub fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Jackknife committee at the full model's hyperparameters. Member k leaves
/// out a contiguous block of a seeded shuffle.
pub fn committee_models(
    model: &FittedModel,
    committee: usize,
    seed: u64,
) -> Result<Vec<FittedModel>> {
    let m = model.m();
    if committee < 2 || m < committee {
        return Err(Error::InvalidArgument(format!(
            "committee of {committee} needs 2 <= K <= m = {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let b = m.div_ceil(committee);
    (0..committee)
        .map(|k| {
            let out: Vec<usize> = (0..b).map(|j| order[(k * b + j) % m]).collect();
            let ds = model.dataset.without(&out);
            if ds.len() < 2 {
                return Err(Error::DegenerateCommittee(k));
            }
            FittedModel::with_theta(
                ds,
                model.kernel.clone(),
                model.trend.clone(),
                model.theta.clone(),
                model.nugget,
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// continuous criteria

/// Swarm maximization over the unit cube, seeded with the best points of a
/// small Monte Carlo scan so narrow peaks are not missed.
pub fn maximize_criterion<F>(f: F, n: usize, pso: &PsoConfig) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let k = (pso.particles_per_dim * n / 3).max(1);
    let scan = monte_carlo_pool(50 * n * pso.particles_per_dim.max(1), n, pso.seed ^ 0x5eed)
        .expect("scan size is positive");
    let mut vals: Vec<(f64, usize)> = scan
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = f(p);
            (if v.is_nan() { f64::NEG_INFINITY } else { v }, i)
        })
        .collect();
    vals.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let guesses: Vec<Vec<f64>> = vals
        .iter()
        .take(k)
        .map(|(_, i)| scan.points[*i].clone())
        .collect();
    maximize_unit(f, n, &guesses, pso)
}

pub fn propose_mmse(model: &FittedModel, pso: &PsoConfig) -> Result<ProposeResult> {
    let r = maximize_criterion(
        |x| model.predict(x).variance.max(0.0).sqrt(),
        model.dim(),
        pso,
    );
    Ok(ProposeResult::new(r.x, r.f))
}

/// Weighted expected improvement. `w = 0.5` is half the classic EI.
pub fn wei(mean: f64, sd: f64, y_best: f64, w: f64, maximize: bool) -> f64 {
    let imp = if maximize {
        mean - y_best
    } else {
        y_best - mean
    };
    if !(sd > 0.0) {
        return w * imp.max(0.0);
    }
    let z = imp / sd;
    let n = Normal::standard();
    w * imp * n.cdf(z) + (1.0 - w) * sd * n.pdf(z)
}

/// Classic expected improvement.
pub fn expected_improvement(mean: f64, sd: f64, y_best: f64, maximize: bool) -> f64 {
    2.0 * wei(mean, sd, y_best, 0.5, maximize)
}

pub fn propose_ei(
    model: &FittedModel,
    w: f64,
    maximize: bool,
    pso: &PsoConfig,
) -> Result<ProposeResult> {
    let y = &model.dataset.responses;
    let best = if maximize {
        y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        y.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let r = maximize_criterion(
        |x| {
            let p = model.predict(x);
            wei(p.mean, p.sd(), best, w, maximize)
        },
        model.dim(),
        pso,
    );
    Ok(ProposeResult::new(r.x, r.f).diag("y_best", best))
}

pub fn eigf_score(model: &FittedModel, x: &[f64]) -> f64 {
    let p = model.predict(x);
    let (i, _) = nearest(&model.dataset.points, x);
    (p.mean - model.dataset.responses[i]).powi(2) + p.variance
}

pub fn propose_eigf(model: &FittedModel, pso: &PsoConfig) -> Result<ProposeResult> {
    let r = maximize_criterion(|x| eigf_score(model, x), model.dim(), pso);
    Ok(ProposeResult::new(r.x, r.f))
}

/// MEPE balance factor from the previous step's true and estimated squared errors.
pub fn mepe_alpha(last: Option<(f64, f64)>) -> f64 {
    match last {
        None => 0.5,
        Some((e_true, e_hat)) => {
            let ratio = if e_hat > 0.0 {
                0.5 * e_true / e_hat
            } else if e_true > 0.0 {
                1.0
            } else {
                0.0
            };
            0.99 * ratio.min(1.0)
        }
    }
}

/// Squared LOO error of the sample owning `x`'s Voronoi cell.
pub fn mepe_error_estimate(points: &[Vec<f64>], loo_sq: &[f64], x: &[f64]) -> f64 {
    loo_sq[nearest(points, x).0]
}

pub fn propose_mepe(model: &FittedModel, alpha: f64, pso: &PsoConfig) -> Result<ProposeResult> {
    let sq: Vec<f64> = loo_abs_errors(model)?.iter().map(|e| e * e).collect();
    let pts = &model.dataset.points;
    let r = maximize_criterion(
        |x| alpha * mepe_error_estimate(pts, &sq, x) + (1.0 - alpha) * model.predict(x).variance,
        model.dim(),
        pso,
    );
    let e_hat = mepe_error_estimate(pts, &sq, &r.x);
    let mean = model.predict_mean(&r.x);
    Ok(ProposeResult::new(r.x, r.f)
        .diag("alpha", alpha)
        .diag("e_hat", e_hat)
        .diag("mean", mean))
}

/// Adjusted-correlation determinant criterion. Returns `None` when every
/// LOO error is zero.
pub struct AmeCriterion {
    d: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl AmeCriterion {
    pub fn new(model: &FittedModel, gamma: f64) -> Result<Option<Self>> {
        let errs = loo_abs_errors(model)?;
        let emax = errs.iter().cloned().fold(0.0, f64::max);
        if !(emax > 0.0) {
            return Ok(None);
        }
        let eta: Vec<f64> = errs.iter().map(|e| (e / emax).powf(gamma)).collect();
        let emin = eta.iter().cloned().fold(f64::INFINITY, f64::min);
        let d: Vec<f64> = eta.iter().map(|e| 1.0 - 0.5 * (e - emin)).collect();
        let m = d.len();
        let r = kernels::correlation_matrix(
            &model.kernel,
            &model.theta,
            &model.dataset.points,
            model.nugget,
        )?;
        let adj = nalgebra::DMatrix::from_fn(m, m, |i, j| {
            let v = d[i] * r[(i, j)] * d[j];
            if i == j {
                v + 1.0 - d[i] * d[i]
            } else {
                v
            }
        });
        let chol = kernels::cholesky(adj).ok_or(Error::NotPositiveDefinite {
            nugget: model.nugget,
        })?;
        Ok(Some(AmeCriterion { d, chol }))
    }

    /// Determinant ratio det(R*) / det(R_adj) for the augmented matrix.
    pub fn score(&self, model: &FittedModel, x: &[f64]) -> f64 {
        let mut r = model.cross(x);
        for (ri, di) in r.iter_mut().zip(&self.d) {
            *ri *= di;
        }
        let s = self.chol.solve(&r);
        1.0 - r.dot(&s)
    }
}

pub fn propose_ame(model: &FittedModel, gamma: f64, pso: &PsoConfig) -> Result<ProposeResult> {
    match AmeCriterion::new(model, gamma)? {
        None => {
            let mut r = propose_mmse(model, pso)?;
            r.branch = Some("mmse".into());
            Ok(r.diag("gamma", gamma))
        }
        Some(c) => {
            let r = maximize_criterion(|x| c.score(model, x), model.dim(), pso);
            Ok(ProposeResult::new(r.x, r.f).diag("gamma", gamma))
        }
    }
}

/// Spread of the LOO sub-model predictions at `x`, times the distance to
/// the nearest sample.
pub fn cvd_score(model: &FittedModel, x: &[f64]) -> f64 {
    let Ok((full, subs)) = model.loo_predictions_at(x) else {
        return f64::NAN;
    };
    let e = (subs.iter().map(|s| (full - s).powi(2)).sum::<f64>() / subs.len() as f64).sqrt();
    e * d_nn(&model.dataset.points, x)
}

pub fn propose_cvd(model: &FittedModel, pso: &PsoConfig) -> Result<ProposeResult> {
    model.loo_dubrule()?;
    let r = maximize_criterion(|x| cvd_score(model, x), model.dim(), pso);
    Ok(ProposeResult::new(r.x, r.f))
}

/// Maximize `score` subject to `d_nn >= s`. Falls back to an enlarged pool
/// if the swarm found no feasible point.
fn constrained_max<F>(
    model: &FittedModel,
    s: f64,
    score: F,
    pso: &PsoConfig,
    pool_seed: u64,
) -> Result<ProposeResult>
where
    F: Fn(&[f64]) -> f64,
{
    let pts = &model.dataset.points;
    let obj = |x: &[f64]| {
        if d_nn(pts, x) >= s {
            score(x)
        } else {
            f64::NEG_INFINITY
        }
    };
    let r = maximize_criterion(obj, model.dim(), pso);
    if r.f > f64::NEG_INFINITY {
        return Ok(ProposeResult::new(r.x, r.f).diag("s", s));
    }
    let n = model.dim();
    let pool = monte_carlo_pool(10 * default_pool_size(n, model.m()), n, pool_seed)?;
    let vals: Vec<f64> = pool.points.iter().map(|p| obj(p)).collect();
    match argmax(&vals).filter(|&i| vals[i] > f64::NEG_INFINITY) {
        Some(i) => Ok(ProposeResult::new(pool.points[i].clone(), vals[i])
            .diag("s", s)
            .diag("pool_fallback", 1.0)),
        None => Err(Error::InfeasibleConstraint),
    }
}

/// Space-filling cross-validation tradeoff: an inner OK model of the LOO
/// errors, maximized away from existing samples.
pub fn propose_sfcvt(
    model: &FittedModel,
    inner_cfg: &FitConfig,
    pso: &PsoConfig,
    pool_seed: u64,
) -> Result<ProposeResult> {
    if model.m() < 2 {
        return Err(Error::InvalidArgument("sfcvt needs two samples".into()));
    }
    let errs = loo_abs_errors(model)?;
    let inner = gpcore::fit_ok(
        Dataset::new(
            model.dataset.points.clone(),
            errs,
            model.dataset.domain.clone(),
        )?,
        inner_cfg,
    )?;
    let s = 0.5
        * nn_distances(&model.dataset.points)
            .into_iter()
            .fold(0.0, f64::max);
    constrained_max(model, s, |x| inner.predict_mean(x), pso, pool_seed)
}

/// Accumulative error: LOO errors spread by an exponential influence.
pub fn propose_ace(
    model: &FittedModel,
    alpha_doi: Option<f64>,
    pso: &PsoConfig,
    pool_seed: u64,
) -> Result<ProposeResult> {
    if model.m() < 2 {
        return Err(Error::InvalidArgument("ace needs two samples".into()));
    }
    let errs = loo_abs_errors(model)?;
    let ds = nn_distances(&model.dataset.points);
    let mean_ds = ds.iter().sum::<f64>() / ds.len() as f64;
    let alpha = alpha_doi.unwrap_or(1.0 / mean_ds);
    let s = 0.5 * mean_ds;
    let pts = &model.dataset.points;
    let score = |x: &[f64]| {
        pts.iter()
            .zip(&errs)
            .map(|(p, e)| e * (-alpha * dist(p, x)).exp())
            .sum::<f64>()
    };
    Ok(constrained_max(model, s, score, pso, pool_seed)?.diag("alpha_doi", alpha))
}

/// Cumulative squared distance to all samples.
pub fn cdm(points: &[Vec<f64>], x: &[f64]) -> f64 {
    points.iter().map(|p| crate::designspace::dist2(p, x)).sum()
}

/// Sample-wise sensitivity: walks samples by decreasing CDM until a
/// sub-model discrepancy optimum is not clustered.
pub fn propose_ssa(
    model: &FittedModel,
    epsilon: f64,
    sub_fit: Option<&FitConfig>,
    pso: &PsoConfig,
) -> Result<ProposeResult> {
    let m = model.m();
    if m < 2 {
        return Err(Error::InvalidArgument("ssa needs two samples".into()));
    }
    model.loo_dubrule()?;
    let pts = &model.dataset.points;
    let c: Vec<f64> = pts.iter().map(|p| cdm(pts, p)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| c[*b].total_cmp(&c[*a]));
    for (rank, &j) in order.iter().enumerate() {
        let cfg = pso.clone().with_seed(pso.seed.wrapping_add(rank as u64));
        let r = match sub_fit {
            // frozen hyperparameters: closed-form sub-model
            None => maximize_criterion(
                |x| match model.loo_predictions_at(x) {
                    Ok((full, subs)) => (full - subs[j]).powi(2) * cdm(pts, x),
                    Err(_) => f64::NAN,
                },
                model.dim(),
                &cfg,
            ),
            Some(fc) => {
                let fc = FitConfig {
                    pso: fc
                        .pso
                        .clone()
                        .with_seed(fc.pso.seed.wrapping_add(rank as u64)),
                    ..fc.clone()
                };
                let sub = gpcore::fit(
                    model.dataset.without(&[j]),
                    model.kernel.clone(),
                    model.trend.clone(),
                    &fc,
                    Some(&model.theta),
                )?;
                maximize_criterion(
                    |x| (model.predict_mean(x) - sub.predict_mean(x)).powi(2) * cdm(pts, x),
                    model.dim(),
                    &cfg,
                )
            }
        };
        if r.f > 0.0 && d_nn(pts, &r.x) >= epsilon {
            return Ok(ProposeResult::new(r.x, r.f)
                .diag("rank", rank as f64)
                .diag("sample", j as f64));
        }
    }
    Err(Error::AllRanksExhausted)
}

// ---------------------------------------------------------------------------
// MIVor

/// Number of samples with label `false` among the `k` nearest other samples of `i`.
fn regular_neighbours(points: &[Vec<f64>], labels: &[bool], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, p)| (dist(p, &points[i]), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others
        .into_iter()
        .take(k)
        .map(|(_, j)| j)
        .filter(|&j| !labels[j])
        .collect()
}

/// One MIVor step. `u` decides between exploration and exploitation.
pub fn propose_mivor(
    model: &FittedModel,
    r: f64,
    threshold: f64,
    pool: &CandidatePool,
    u: f64,
) -> Result<ProposeResult> {
    let ds = &model.dataset;
    check_pool(pool, ds.dim())?;
    let labels: Vec<bool> = ds.responses.iter().map(|y| *y >= threshold).collect();
    let mipt = |branch: &str| -> Result<ProposeResult> {
        let mut res = propose_mipt(ds, pool)?;
        res.branch = Some(branch.to_string());
        Ok(res.diag("r", r).diag("u", u))
    };
    if !labels.iter().any(|l| *l) {
        return mipt("explore_no_positive");
    }
    if u < r {
        return mipt("explore");
    }
    let pts = &ds.points;
    let n = ds.dim();
    let vols = voronoi_volumes(pts, pool)?;
    let mut scores = vec![0.0; pts.len()];
    let mut neigh: Vec<Vec<usize>> = vec![Vec::new(); pts.len()];
    for i in 0..pts.len() {
        if labels[i] {
            neigh[i] = regular_neighbours(pts, &labels, i, 2 * n);
            scores[i] = vols[i] * neigh[i].len() as f64;
        }
    }
    let Some(xmax) = argmax(&scores).filter(|&i| scores[i] > 0.0) else {
        return mipt("explore_no_edge");
    };
    let cell: Vec<&Vec<f64>> = pool
        .points
        .iter()
        .filter(|p| nearest(pts, p).0 == xmax)
        .collect();
    if cell.is_empty() {
        return mipt("explore_empty_cell");
    }
    let s = 0.1 * nn_distances(pts).into_iter().fold(0.0, f64::max);
    let regular: Vec<&Vec<f64>> = neigh[xmax].iter().map(|&j| &pts[j]).collect();
    let closeness: Vec<f64> = cell
        .iter()
        .map(|p| {
            -regular
                .iter()
                .map(|q| dist(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let cand = cell[argmax(&closeness).expect("cell is nonempty")];
    let mut res = if d_nn(pts, cand) >= s {
        let mut r0 = ProposeResult::new(cand.clone(), scores[xmax]);
        r0.branch = Some("exploit".into());
        r0
    } else {
        let vars: Vec<f64> = cell.iter().map(|p| model.predict(p).variance).collect();
        let alt = cell[argmax(&vars).expect("cell is nonempty")];
        if d_nn(pts, alt) < s {
            return mipt("explore_fallback");
        }
        let mut r0 = ProposeResult::new(alt.clone(), scores[xmax]);
        r0.branch = Some("exploit_variance".into());
        r0
    };
    res.diagnostics.insert("r".into(), r);
    res.diagnostics.insert("u".into(), u);
    res.diagnostics.insert("sample".into(), xmax as f64);
    res.diagnostics.insert("s".into(), s);
    Ok(res)
}

// ---------------------------------------------------------------------------
// state and dispatch

/// Deterministic seed stream for (run seed, iteration, purpose).
pub fn derive_seed(seed: u64, iteration: u64, purpose: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(iteration.wrapping_mul(31).wrapping_add(purpose)))
}

/// Model family refitted at every iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Ok,
    /// Universal Kriging with a polynomial trend of the given degree.
    Uk(usize),
    Hk,
    PlsOk {
        h: usize,
    },
    PlsHk {
        h_lf: usize,
        h_hf: usize,
    },
}

impl ModelKind {
    pub fn needs_lf(&self) -> bool {
        matches!(self, ModelKind::Hk | ModelKind::PlsHk { .. })
    }
}

/// Fit the low-fidelity level once.
pub fn fit_lf(kind: &ModelKind, lf: Dataset, cfg: &FitConfig) -> Result<Arc<FittedModel>> {
    let n = lf.dim();
    let model = match kind {
        ModelKind::PlsHk { h_lf, .. } => {
            let v = lf.version;
            let k = plsreduce::pls_kernel(&lf, *h_lf)?;
            let mut mdl = gpcore::fit(lf, k, Trend::Constant, cfg, None)?;
            mdl.weights_version = Some(v);
            mdl
        }
        _ => gpcore::fit(lf, KernelSpec::matern32(n), Trend::Constant, cfg, None)?,
    };
    Ok(Arc::new(model))
}

/// Fit (or refit) the working model on `ds`.
pub fn fit_model(
    kind: &ModelKind,
    ds: Dataset,
    lf: Option<&Arc<FittedModel>>,
    cfg: &FitConfig,
    warm: Option<&[f64]>,
) -> Result<FittedModel> {
    let n = ds.dim();
    let lf_trend = || -> Result<Trend> {
        lf.map(|l| Trend::LowFidelity(l.clone()))
            .ok_or_else(|| Error::InvalidArgument("hierarchical model without an LF level".into()))
    };
    match kind {
        ModelKind::Ok => gpcore::fit(ds, KernelSpec::matern32(n), Trend::Constant, cfg, warm),
        ModelKind::Uk(p) => gpcore::fit(
            ds,
            KernelSpec::matern32(n),
            Trend::Polynomial(*p),
            cfg,
            warm,
        ),
        ModelKind::Hk => gpcore::fit(ds, KernelSpec::matern32(n), lf_trend()?, cfg, warm),
        ModelKind::PlsOk { h } | ModelKind::PlsHk { h_hf: h, .. } => {
            let trend = if matches!(kind, ModelKind::PlsOk { .. }) {
                Trend::Constant
            } else {
                lf_trend()?
            };
            let v = ds.version;
            let k = plsreduce::pls_kernel(&ds, *h)?;
            let mut mdl = gpcore::fit(ds, k, trend, cfg, warm)?;
            mdl.weights_version = Some(v);
            Ok(mdl)
        }
    }
}

pub struct AdaptiveState {
    /// Current model; its dataset is the design.
    pub model: FittedModel,
    pub lf: Option<Arc<FittedModel>>,
    pub memory: StrategyMemory,
    pub iteration: usize,
    pub seed: u64,
}

impl AdaptiveState {
    pub fn new(model: FittedModel, lf: Option<Arc<FittedModel>>, seed: u64) -> Self {
        AdaptiveState {
            model,
            lf,
            memory: StrategyMemory::default(),
            iteration: 0,
            seed,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.model.dataset
    }

    /// The model as a two-level HK model, when it has an LF trend.
    pub fn hk(&self) -> Option<HkModel> {
        let lf = self.lf.clone()?;
        HkModel::from_parts(lf, self.model.clone()).ok()
    }

    pub fn pool(&self) -> Result<CandidatePool> {
        let n = self.model.dim();
        monte_carlo_pool(
            default_pool_size(n, self.model.m()),
            n,
            derive_seed(self.seed, self.iteration as u64, 3),
        )
    }

    /// Propose the next point with `strategy`, updating strategy memory.
    pub fn propose(
        &mut self,
        strategy: &Strategy,
        pso: &PsoConfig,
        inner_fit: &FitConfig,
    ) -> Result<ProposeResult> {
        let it = self.iteration as u64;
        let pso = pso.clone().with_seed(derive_seed(self.seed, it, 2));
        let model = &self.model;
        let pool_seed = derive_seed(self.seed, it, 3);
        let res = match strategy {
            Strategy::Mipt => propose_mipt(&model.dataset, &self.pool()?),
            Strategy::Msd => propose_msd(&model.dataset, &self.pool()?),
            Strategy::Mmse => propose_mmse(model, &pso),
            Strategy::Ei { maximize } => propose_ei(model, 0.5, *maximize, &pso),
            Strategy::Wei { w, maximize } => propose_ei(model, *w, *maximize, &pso),
            Strategy::Eigf => propose_eigf(model, &pso),
            Strategy::Mepe => {
                let alpha = mepe_alpha(self.memory.mepe_last);
                let r = propose_mepe(model, alpha, &pso)?;
                self.memory.mepe_alpha = Some(alpha);
                self.memory.mepe_pending = Some((r.diagnostics["mean"], r.diagnostics["e_hat"]));
                Ok(r)
            }
            Strategy::Ame { gammas } => {
                let g = gammas[self.memory.ame_steps % gammas.len()];
                self.memory.ame_steps += 1;
                propose_ame(model, g, &pso)
            }
            Strategy::Cvd => propose_cvd(model, &pso),
            Strategy::Sfcvt => {
                let cfg = FitConfig {
                    pso: inner_fit
                        .pso
                        .clone()
                        .with_seed(derive_seed(self.seed, it, 4)),
                    ..inner_fit.clone()
                };
                propose_sfcvt(model, &cfg, &pso, pool_seed)
            }
            Strategy::Ace { alpha_doi } => propose_ace(model, *alpha_doi, &pso, pool_seed),
            Strategy::Cvvor => match propose_cvvor(model, &self.pool()?) {
                Err(Error::EmptyCell) => {
                    let n = model.dim();
                    let pool = monte_carlo_pool(
                        2 * default_pool_size(n, model.m()),
                        n,
                        derive_seed(self.seed, it, 5),
                    )?;
                    propose_cvvor(model, &pool)
                }
                r => r,
            },
            Strategy::Ssa { epsilon, refit } => {
                let fc = FitConfig {
                    pso: inner_fit
                        .pso
                        .clone()
                        .with_seed(derive_seed(self.seed, it, 9)),
                    ..inner_fit.clone()
                };
                propose_ssa(model, *epsilon, refit.then_some(&fc), &pso)
            }
            Strategy::Masa { committee } => propose_masa(
                model,
                *committee,
                &self.pool()?,
                derive_seed(self.seed, it, 6),
            ),
            Strategy::Mivor(p) => {
                let r = self.memory.mivor_r.unwrap_or(p.r0);
                let u: f64 = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, it, 7)).random();
                let res = propose_mivor(model, r, p.threshold, &self.pool()?, u)?;
                self.memory.mivor_r = Some((r / p.alpha_decay).max(p.r_min.min(r)));
                Ok(res)
            }
        }?;
        if res.point.len() != model.dim() || res.point.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfDomain(0));
        }
        let d = d_nn(&model.dataset.points, &res.point);
        if d <= CLUSTER_TOL {
            return Err(Error::ClusteringDetected(d));
        }
        // constraint-bearing strategies must honour their own rule
        let rule = match strategy {
            Strategy::Sfcvt | Strategy::Ace { .. } => res.diagnostics.get("s").copied(),
            Strategy::Ssa { epsilon, .. } => Some(*epsilon),
            Strategy::Mivor(_)
                if res
                    .branch
                    .as_deref()
                    .is_some_and(|b| b.starts_with("exploit")) =>
            {
                res.diagnostics.get("s").copied()
            }
            _ => None,
        };
        if let Some(s) = rule {
            if d < s {
                return Err(Error::InfeasibleConstraint);
            }
        }
        Ok(res)
    }

    /// Append an evaluated point and refit with the previous scales as a warm start.
    pub fn append(&mut self, kind: &ModelKind, z: Vec<f64>, y: f64, cfg: &FitConfig) -> Result<()> {
        if let Some((mean, e_hat)) = self.memory.mepe_pending.take() {
            self.memory.mepe_last = Some(((y - mean).powi(2), e_hat));
        }
        let mut ds = self.model.dataset.clone();
        ds.push(z, y)?;
        let it = self.iteration as u64 + 1;
        let cfg = FitConfig {
            pso: cfg.pso.clone().with_seed(derive_seed(self.seed, it, 1)),
            ..cfg.clone()
        };
        let warm = self.model.theta.clone();
        self.model = fit_model(kind, ds, self.lf.as_ref(), &cfg, Some(&warm))?;
        self.iteration += 1;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// loop

/// Something that can be sampled: a benchmark problem or a dynamics indicator.
pub trait Target {
    fn domain(&self) -> &Domain;
    /// High-fidelity response at a normalized point.
    fn eval(&self, z: &[f64]) -> Result<f64>;
    /// Low-fidelity response at a normalized point.
    fn eval_lf(&self, _z: &[f64]) -> Result<f64> {
        Err(Error::NotMultifidelity(self.name().to_string()))
    }
    fn name(&self) -> &str;
}

impl Target for BenchmarkProblem {
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn eval(&self, z: &[f64]) -> Result<f64> {
        self.evaluate_unit(z)
    }
    fn eval_lf(&self, z: &[f64]) -> Result<f64> {
        self.evaluate_lf_unit(z)
    }
    fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Rmse,
    Rmae,
    R2,
    PctPos,
    PctNeg,
    /// Both class rates at or above the threshold.
    PctBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingRule {
    pub max_samples: Option<usize>,
    pub threshold: Option<Threshold>,
}

impl StoppingRule {
    pub fn budget(max_samples: usize) -> Self {
        StoppingRule {
            max_samples: Some(max_samples),
            threshold: None,
        }
    }

    pub fn accuracy(metric: Metric, value: f64, max_samples: usize) -> Self {
        StoppingRule {
            max_samples: Some(max_samples),
            threshold: Some(Threshold { metric, value }),
        }
    }

    pub fn cap(&self) -> usize {
        self.max_samples.unwrap_or(DEFAULT_MAX_SAMPLES)
    }
}

impl Threshold {
    /// Errors must fall strictly below the value; R^2 and rates must reach it.
    pub fn reached(&self, row: &IterationRow) -> bool {
        let v = self.value;
        let rate = |r: Option<f64>| r.is_none_or(|x| x >= v);
        match self.metric {
            Metric::Mae => row.metrics.mae < v,
            Metric::Rmse => row.metrics.rmse < v,
            Metric::Rmae => row.metrics.rmae.is_some_and(|x| x < v),
            Metric::R2 => row.metrics.r2.is_some_and(|x| x >= v),
            Metric::PctPos => row.pct_pos.is_some_and(|x| x >= v),
            Metric::PctNeg => row.pct_neg.is_some_and(|x| x >= v),
            Metric::PctBoth => {
                (row.pct_pos.is_some() || row.pct_neg.is_some())
                    && rate(row.pct_pos)
                    && rate(row.pct_neg)
            }
        }
    }
}

/// Normalized reference points with their true responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl ReferenceSet {
    /// `n_points` seeded uniform points evaluated on the target.
    pub fn sample<T: Target + ?Sized>(target: &T, n_points: usize, seed: u64) -> Result<Self> {
        let pool = monte_carlo_pool(n_points, target.domain().dim(), seed)?;
        let values = pool
            .points
            .iter()
            .map(|z| target.eval(z))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReferenceSet {
            points: pool.points,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub model: ModelKind,
    pub strategy: Strategy,
    pub initial_size: usize,
    /// LF design size for hierarchical models.
    pub lf_size: usize,
    pub stopping: StoppingRule,
    /// Likelihood fit of the initial model.
    pub fit: FitConfig,
    /// Warm-started refits inside the loop.
    pub refit: FitConfig,
    pub criterion: PsoConfig,
    /// Class threshold for the rate columns; `None` skips them.
    pub classify_at: Option<f64>,
}

impl LoopConfig {
    pub fn new(
        model: ModelKind,
        strategy: Strategy,
        initial_size: usize,
        stopping: StoppingRule,
    ) -> Self {
        LoopConfig {
            model,
            strategy,
            initial_size,
            lf_size: 0,
            stopping,
            fit: FitConfig::default(),
            refit: default_refit(),
            criterion: PsoConfig::default(),
            classify_at: None,
        }
    }
}

/// Lighter swarm for warm-started refits.
pub fn default_refit() -> FitConfig {
    FitConfig {
        pso: PsoConfig {
            particles_per_dim: 15,
            iters_per_dim: 40,
            stall_iters: Some(15),
            polish_sweeps: 30,
            ..PsoConfig::default()
        },
        ..FitConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub m: usize,
    /// Raw coordinates of the point added this iteration; `None` for the initial design.
    pub point: Option<Vec<f64>>,
    pub response: Option<f64>,
    pub metrics: MetricReport,
    pub pct_pos: Option<f64>,
    pub pct_neg: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub branch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    /// Budget-only rule ran to its cap.
    Completed,
    ThresholdReached,
    /// Threshold rule hit the sample cap first.
    BudgetExhausted,
    ClusteringFailure(String),
    Failed(String),
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::ThresholdReached => "threshold_reached",
            RunStatus::BudgetExhausted => "budget_exhausted",
            RunStatus::ClusteringFailure(_) => "clustering_failure",
            RunStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<IterationRow>,
    pub status: RunStatus,
    pub final_dataset: Dataset,
}

impl RunRecord {
    /// Sample count at the first row meeting `t`.
    pub fn samples_to(&self, t: &Threshold) -> Option<usize> {
        self.rows.iter().find(|r| t.reached(r)).map(|r| r.m)
    }
}

fn evaluate_row(
    model: &FittedModel,
    reference: &ReferenceSet,
    classify_at: Option<f64>,
    iteration: usize,
) -> Result<IterationRow> {
    let pred: Vec<f64> = reference
        .points
        .iter()
        .map(|z| model.predict_mean(z))
        .collect();
    let metrics = compute_metrics(&reference.values, &pred)?;
    let (pct_pos, pct_neg) = match classify_at {
        Some(a) => {
            let t: Vec<bool> = reference.values.iter().map(|v| *v >= a).collect();
            let p: Vec<bool> = pred.iter().map(|v| *v >= a).collect();
            classification_rates(&t, &p)?
        }
        None => (None, None),
    };
    Ok(IterationRow {
        iteration,
        m: model.m(),
        point: None,
        response: None,
        metrics,
        pct_pos,
        pct_neg,
        diagnostics: BTreeMap::new(),
        branch: None,
    })
}

fn terminal_for(e: Error) -> RunStatus {
    match e {
        Error::ClusteringDetected(_)
        | Error::NotPositiveDefinite { .. }
        | Error::DuplicatePoint(_)
        | Error::InfeasibleConstraint
        | Error::AllRanksExhausted
        | Error::AllCandidatesRejected => RunStatus::ClusteringFailure(e.to_string()),
        other => RunStatus::Failed(other.to_string()),
    }
}

/// Evaluate the TPLHD initial design (and the LF design for hierarchical models).
pub fn initial_state<T: Target + ?Sized>(
    target: &T,
    cfg: &LoopConfig,
    seed: u64,
) -> Result<AdaptiveState> {
    let domain = target.domain().clone();
    let n = domain.dim();
    let pts = tplhd(cfg.initial_size, n)?;
    let ys = pts
        .iter()
        .map(|z| target.eval(z))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::new(pts, ys, domain.clone())?;
    let lf = if cfg.model.needs_lf() {
        if cfg.lf_size < 2 {
            return Err(Error::InvalidArgument(
                "hierarchical models need lf_size >= 2".into(),
            ));
        }
        let lp = tplhd(cfg.lf_size, n)?;
        let ly = lp
            .iter()
            .map(|z| target.eval_lf(z))
            .collect::<Result<Vec<_>>>()?;
        let fit = FitConfig {
            pso: cfg.fit.pso.clone().with_seed(derive_seed(seed, 0, 8)),
            ..cfg.fit.clone()
        };
        Some(fit_lf(&cfg.model, Dataset::new(lp, ly, domain)?, &fit)?)
    } else {
        None
    };
    let fit = FitConfig {
        pso: cfg.fit.pso.clone().with_seed(derive_seed(seed, 0, 1)),
        ..cfg.fit.clone()
    };
    let model = fit_model(&cfg.model, ds, lf.as_ref(), &fit, None)?;
    Ok(AdaptiveState::new(model, lf, seed))
}

/// Propose, evaluate, append and refit until the stopping rule holds.
/// Setup errors are returned; failures inside the loop end the run with a
/// terminal status.
pub fn run_adaptive_loop<T: Target + ?Sized>(
    target: &T,
    cfg: &LoopConfig,
    reference: &ReferenceSet,
    seed: u64,
) -> Result<RunRecord> {
    let mut state = initial_state(target, cfg, seed)?;
    run_from_state(target, cfg, reference, &mut state)
}

pub fn run_from_state<T: Target + ?Sized>(
    target: &T,
    cfg: &LoopConfig,
    reference: &ReferenceSet,
    state: &mut AdaptiveState,
) -> Result<RunRecord> {
    let cap = cfg.stopping.cap();
    if cap < state.model.m() {
        return Err(Error::InvalidArgument(format!(
            "sample budget {cap} is below the initial design size {}",
            state.model.m()
        )));
    }
    let mut rows = vec![evaluate_row(&state.model, reference, cfg.classify_at, 0)?];
    let reached = |rows: &[IterationRow]| {
        cfg.stopping
            .threshold
            .is_some_and(|t| t.reached(rows.last().unwrap()))
    };
    let status = loop {
        if reached(&rows) {
            break RunStatus::ThresholdReached;
        }
        if state.model.m() >= cap {
            break if cfg.stopping.threshold.is_some() {
                RunStatus::BudgetExhausted
            } else {
                RunStatus::Completed
            };
        }
        let step = (|| -> Result<IterationRow> {
            let prop = state.propose(&cfg.strategy, &cfg.criterion, &cfg.refit)?;
            let y = target.eval(&prop.point)?;
            let raw = state.dataset().domain.denormalize(&prop.point)?;
            state.append(&cfg.model, prop.point, y, &cfg.refit)?;
            let mut row = evaluate_row(&state.model, reference, cfg.classify_at, state.iteration)?;
            row.point = Some(raw);
            row.response = Some(y);
            row.diagnostics = prop.diagnostics;
            row.branch = prop.branch;
            Ok(row)
        })();
        match step {
            Ok(row) => rows.push(row),
            Err(e) => break terminal_for(e),
        }
    };
    Ok(RunRecord {
        seed: state.seed,
        rows,
        status,
        final_dataset: state.model.dataset.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use crate::benchfns::problem;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn ds1(xs: &[f64], f: fn(f64) -> f64) -> Dataset {
        Dataset::new(
            xs.iter().map(|x| vec![*x]).collect(),
            xs.iter().map(|x| f(*x)).collect(),
            Domain::unit(1),
        )
        .unwrap()
    }

    fn wiggle(x: f64) -> f64 {
        (9.0 * x).sin() + 0.5 * x
    }

    fn model1(xs: &[f64]) -> FittedModel {
        gpcore::fit_ok(ds1(xs, wiggle), &FitConfig::default()).unwrap()
    }

    fn model2(m: usize) -> FittedModel {
        let p = tplhd(m, 2).unwrap();
        let y = p
            .iter()
            .map(|z| (4.0 * z[0]).sin() + (3.0 * z[1] * z[0]).cos())
            .collect();
        gpcore::fit_ok(
            Dataset::new(p, y, Domain::unit(2)).unwrap(),
            &FitConfig::default(),
        )
        .unwrap()
    }

    fn grid_pool(k: usize) -> CandidatePool {
        CandidatePool {
            points: (0..k).map(|i| vec![i as f64 / (k - 1) as f64]).collect(),
            seed: 0,
        }
    }

    fn pso() -> PsoConfig {
        PsoConfig::default().with_seed(3)
    }

    #[test]
    fn mipt_largest_gap() {
        let dom = Domain::new(vec![0.2], vec![1.0]).unwrap();
        let raw: Vec<Vec<f64>> = [0.2, 0.36, 0.52, 0.68, 0.84]
            .iter()
            .map(|v| vec![*v])
            .collect();
        let ds = Dataset::from_raw(&raw, vec![0.0; 5], dom.clone()).unwrap();
        let r = propose_mipt(&ds, &grid_pool(2001)).unwrap();
        let x = dom.denormalize(&r.point).unwrap()[0];
        assert!((0.84..=1.0).contains(&x), "{x}");
        // exhaustive oracle: rank every grid point directly
        let pool = grid_pool(2001);
        let best = pool
            .points
            .iter()
            .map(|p| {
                ds.points
                    .iter()
                    .map(|q| (p[0] - q[0]).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        assert!((r.score - best).abs() < 1e-12);
    }

    #[test]
    fn mipt_single_center_and_rejection() {
        let ds = Dataset::new(vec![vec![0.5, 0.5]], vec![1.0], Domain::unit(2)).unwrap();
        let pool = monte_carlo_pool(500, 2, 1).unwrap();
        let r = propose_mipt(&ds, &pool).unwrap();
        let far = pool
            .points
            .iter()
            .map(|p| dist(p, &[0.5, 0.5]))
            .fold(0.0, f64::max);
        assert_eq!(r.score, far);
        assert_eq!(mipt_rank(&ds.points, &[0.5, 0.5], 1e-3), 0.0);
        let only = CandidatePool {
            points: vec![vec![0.5, 0.9]],
            seed: 0,
        };
        assert_eq!(propose_mipt(&ds, &only), Err(Error::AllCandidatesRejected));
    }

    #[test]
    fn msd_gap_midpoint_and_permutation() {
        let ds = ds1(&[0.0, 0.25, 0.5, 1.0], wiggle);
        let r = propose_msd(&ds, &grid_pool(1001)).unwrap();
        assert!((r.point[0] - 0.75).abs() < 1e-12);
        let ds2 = ds1(&[1.0, 0.5, 0.0, 0.25], wiggle);
        assert_eq!(propose_msd(&ds2, &grid_pool(1001)).unwrap().point, r.point);
    }

    #[test]
    fn mmse_two_points_midpoint() {
        let m = FittedModel::with_theta(
            ds1(&[0.0, 1.0], wiggle),
            KernelSpec::matern32(1),
            Trend::Constant,
            vec![0.5],
            0.0,
        )
        .unwrap();
        let r = propose_mmse(&m, &pso()).unwrap();
        let best = (0..=2000)
            .map(|k| k as f64 / 2000.0)
            .max_by(|a, b| {
                m.predict(&[*a])
                    .variance
                    .total_cmp(&m.predict(&[*b]).variance)
            })
            .unwrap();
        assert!((best - 0.5).abs() < 0.02);
        assert!((r.point[0] - 0.5).abs() < 0.02, "{:?}", r.point);
    }

    #[test]
    fn ei_values() {
        assert!((wei(1.0, 1.0, 1.0, 0.5, false) * 2.0 - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(expected_improvement(1.0, 0.0, 1.0, false), 0.0);
        assert_eq!(expected_improvement(0.4, 0.0, 1.0, false), 0.6);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0, true), 1.0);
    }

    #[test]
    fn wei_pure_exploitation_goes_to_predicted_minimum() {
        let m = model1(&[0.0, 0.2, 0.45, 0.7, 1.0]);
        let r = propose_ei(&m, 1.0, false, &pso()).unwrap();
        let grid: Vec<f64> = (0..=2000).map(|k| k as f64 / 2000.0).collect();
        let best = grid
            .iter()
            .map(|x| {
                let p = m.predict(&[*x]);
                wei(p.mean, p.sd(), r.diagnostics["y_best"], 1.0, false)
            })
            .fold(0.0, f64::max);
        assert!(r.score >= best - 1e-9, "{} < {best}", r.score);
    }

    #[test]
    fn eigf_zero_at_samples_and_grid_oracle() {
        let m = model1(&[0.0, 0.3, 0.55, 1.0]);
        for x in &m.dataset.points {
            assert!(eigf_score(&m, x) < 1e-10);
        }
        let r = propose_eigf(&m, &pso()).unwrap();
        let best = (0..=4000)
            .map(|k| eigf_score(&m, &[k as f64 / 4000.0]))
            .fold(0.0, f64::max);
        assert!(r.score >= best * (1.0 - 1e-6));
    }

    #[test]
    fn eigf_constant_matches_mmse() {
        let ds = ds1(&[0.0, 0.4, 1.0], |_| 2.0);
        let m = gpcore::fit_ok(ds, &FitConfig::default()).unwrap();
        let a = propose_eigf(&m, &pso()).unwrap();
        let b = propose_mmse(&m, &pso()).unwrap();
        assert_eq!(a.point, b.point);
    }

    #[test]
    fn mepe_alpha_rules() {
        assert_eq!(mepe_alpha(None), 0.5);
        assert_eq!(mepe_alpha(Some((0.0, 3.0))), 0.0);
        assert_eq!(mepe_alpha(Some((100.0, 1.0))), 0.99);
        assert!((mepe_alpha(Some((1.0, 2.0))) - 0.99 * 0.25).abs() < 1e-15);
        assert_eq!(mepe_alpha(Some((0.0, 0.0))), 0.0);
    }

    #[test]
    fn ame_equal_errors_and_zero_gamma() {
        let m = model1(&[0.0, 0.3, 0.55, 1.0]);
        let c = AmeCriterion::new(&m, 0.0).unwrap().unwrap();
        assert!(c.d.iter().all(|d| *d == 1.0));
        // with D = I the score is the unscaled variance factor
        let x = [0.77];
        let r = m.cross(&x);
        let rm =
            kernels::correlation_matrix(&m.kernel, &m.theta, &m.dataset.points, m.nugget).unwrap();
        let want = 1.0 - (r.transpose() * rm.try_inverse().unwrap() * &r)[(0, 0)];
        assert!((c.score(&m, &x) - want).abs() < 1e-10);
    }

    #[test]
    fn cvd_zero_at_samples_and_permutation() {
        let m = model1(&[0.0, 0.3, 0.55, 1.0]);
        for x in &m.dataset.points {
            assert!(cvd_score(&m, x).abs() < 1e-12);
        }
        let m2 = FittedModel::with_theta(
            ds1(&[1.0, 0.55, 0.0, 0.3], wiggle),
            m.kernel.clone(),
            Trend::Constant,
            m.theta.clone(),
            m.nugget,
        )
        .unwrap();
        for x in [0.1, 0.42, 0.8] {
            assert!((cvd_score(&m, &[x]) - cvd_score(&m2, &[x])).abs() < 1e-9);
        }
    }

    #[test]
    fn cvd_uniform_spread_tracks_msd() {
        // with the error factor held constant the CVD argmax is the MSD argmax
        let pts = [0.0, 0.2, 0.3, 1.0];
        let ds = ds1(&pts, wiggle);
        let pool = grid_pool(1001);
        let scores: Vec<f64> = pool
            .points
            .iter()
            .map(|p| 0.7 * d_nn(&ds.points, p))
            .collect();
        let msd = propose_msd(&ds, &pool).unwrap();
        assert_eq!(pool.points[argmax(&scores).unwrap()], msd.point);
    }

    #[test]
    fn sfcvt_and_ace_honour_constraint() {
        let m = model2(12);
        let cfg = FitConfig::default();
        let r = propose_sfcvt(&m, &cfg, &pso(), 9).unwrap();
        assert!(d_nn(&m.dataset.points, &r.point) >= r.diagnostics["s"]);
        let a = propose_ace(&m, None, &pso(), 9).unwrap();
        assert!(d_nn(&m.dataset.points, &a.point) >= a.diagnostics["s"]);
        let big = propose_ace(&m, Some(1e6), &pso(), 9).unwrap();
        assert!(d_nn(&m.dataset.points, &big.point) >= big.diagnostics["s"]);
    }

    #[test]
    fn sfcvt_two_samples() {
        let m = model1(&[0.2, 0.6]);
        let r = propose_sfcvt(&m, &FitConfig::default(), &pso(), 1).unwrap();
        assert!((r.diagnostics["s"] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ace_single_dominant_error() {
        let m = model1(&[0.0, 0.3, 0.55, 1.0]);
        let a = propose_ace(&m, None, &pso(), 2).unwrap();
        // grid oracle on the feasible set
        let errs = loo_abs_errors(&m).unwrap();
        let ds = nn_distances(&m.dataset.points);
        let mean_ds = ds.iter().sum::<f64>() / ds.len() as f64;
        let alpha = 1.0 / mean_ds;
        let s = 0.5 * mean_ds;
        let best = (0..=4000)
            .map(|k| k as f64 / 4000.0)
            .filter(|x| d_nn(&m.dataset.points, &[*x]) >= s)
            .map(|x| {
                m.dataset
                    .points
                    .iter()
                    .zip(&errs)
                    .map(|(p, e)| e * (-alpha * (p[0] - x).abs()).exp())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        assert!(a.score >= best * (1.0 - 1e-6));
    }

    #[test]
    fn cvvor_cell_membership() {
        let m = model2(10);
        let pool = monte_carlo_pool(2000, 2, 4).unwrap();
        let r = propose_cvvor(&m, &pool).unwrap();
        let owner = r.diagnostics["owner"] as usize;
        assert_eq!(nearest(&m.dataset.points, &r.point).0, owner);
        let errs = loo_abs_errors(&m).unwrap();
        assert_eq!(argmax(&errs).unwrap(), owner);
    }

    #[test]
    fn cvvor_single_sample() {
        let ds = Dataset::new(vec![vec![0.3]], vec![1.0], Domain::unit(1)).unwrap();
        let m =
            FittedModel::with_theta(ds, KernelSpec::matern32(1), Trend::Constant, vec![1.0], 0.0)
                .unwrap();
        let r = propose_cvvor(&m, &grid_pool(101)).unwrap();
        assert_eq!(r.point, vec![1.0]);
    }

    #[test]
    fn ssa_cdm_and_epsilon() {
        let pts = vec![
            vec![0.5, 0.5],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        assert!(cdm(&pts, &pts[0]) < cdm(&pts, &pts[1]));
        let m = model2(10);
        let r = propose_ssa(&m, 1e-3, None, &pso()).unwrap();
        assert!(d_nn(&m.dataset.points, &r.point) >= 1e-3);
        let flat = gpcore::fit_ok(ds1(&[0.0, 0.5, 1.0], |_| 1.0), &FitConfig::default()).unwrap();
        assert_eq!(
            propose_ssa(&flat, 1e-3, None, &pso()),
            Err(Error::AllRanksExhausted)
        );
    }

    #[test]
    fn masa_committee() {
        let m = model2(12);
        let pool = monte_carlo_pool(300, 2, 5).unwrap();
        let r = propose_masa(&m, 5, &pool, 11).unwrap();
        assert!(r.score <= 2.0 + 1e-12);
        let members = committee_models(&m, 5, 11).unwrap();
        let preds: Vec<f64> = members.iter().map(|mm| mm.predict_mean(&r.point)).collect();
        let mean = preds.iter().sum::<f64>() / 5.0;
        let var = preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((r.diagnostics["qbc_variance"] - var).abs() < 1e-12);
        for mm in &members {
            assert_eq!(mm.m(), 12 - 3);
        }
        let small = model1(&[0.0, 0.5, 1.0]);
        assert!(matches!(
            committee_models(&small, 2, 0),
            Err(Error::DegenerateCommittee(_))
        ));
        assert!(committee_models(&small, 4, 0).is_err());
    }

    #[test]
    fn masa_flat_committee_is_distance_only() {
        let m = gpcore::fit_ok(
            ds1(&[0.0, 0.2, 0.4, 0.6, 1.0], |_| 3.0),
            &FitConfig::default(),
        )
        .unwrap();
        let pool = grid_pool(501);
        let r = propose_masa(&m, 2, &pool, 1).unwrap();
        assert_eq!(r.diagnostics["qbc_variance"], 0.0);
        assert_eq!(r.point, propose_msd(&m.dataset, &pool).unwrap().point);
    }

    #[test]
    fn voronoi_split() {
        let pts = vec![vec![0.25], vec![0.75]];
        let pool = monte_carlo_pool(100_000, 1, 6).unwrap();
        let v = voronoi_volumes(&pts, &pool).unwrap();
        assert!((v[0] - 0.5).abs() < 0.01 && (v[1] - 0.5).abs() < 0.01);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(voronoi_volumes(&pts[..1], &pool).unwrap(), vec![1.0]);
    }

    #[test]
    fn mivor_branches() {
        let m = model1(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        let pool = grid_pool(401);
        // responses of wiggle are mixed in sign
        let none_pos = propose_mivor(&m, 0.0, 100.0, &pool, 0.9).unwrap();
        assert_eq!(none_pos.branch.as_deref(), Some("explore_no_positive"));
        assert_eq!(
            none_pos.point,
            propose_mipt(&m.dataset, &pool).unwrap().point
        );
        let r1 = propose_mivor(&m, 1.0, 0.0, &pool, 0.999).unwrap();
        assert_eq!(r1.point, propose_mipt(&m.dataset, &pool).unwrap().point);
        let ex = propose_mivor(&m, 0.0, 0.0, &pool, 0.5).unwrap();
        assert!(
            ex.branch.as_deref().unwrap().starts_with("exploit")
                || ex.branch.as_deref() == Some("explore_fallback")
        );
    }

    #[test]
    fn mivor_single_positive_scores_cell() {
        // one positive sample among regular ones: its cell is exploited
        let pts = vec![vec![0.1], vec![0.4], vec![0.6], vec![0.9]];
        let ys = vec![-1.0, 1.0, -1.0, -1.0];
        let ds = Dataset::new(pts, ys, Domain::unit(1)).unwrap();
        let m =
            FittedModel::with_theta(ds, KernelSpec::matern32(1), Trend::Constant, vec![0.3], 0.0)
                .unwrap();
        let pool = grid_pool(1001);
        let r = propose_mivor(&m, 0.0, 0.0, &pool, 0.5).unwrap();
        assert_eq!(r.diagnostics["sample"], 1.0);
        let vol = voronoi_volumes(&m.dataset.points, &pool).unwrap()[1];
        assert!((r.score - vol * 2.0).abs() < 1e-12);
        assert_eq!(nearest(&m.dataset.points, &r.point).0, 1);
        assert_eq!(r.branch.as_deref(), Some("exploit"));
    }

    #[test]
    fn zero_budget_loop() {
        let p = problem("schwefel1d").unwrap();
        let reference = ReferenceSet::sample(&p, 200, 1).unwrap();
        let cfg = LoopConfig::new(ModelKind::Ok, Strategy::Mipt, 6, StoppingRule::budget(6));
        let rec = run_adaptive_loop(&p, &cfg, &reference, 4).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.status, RunStatus::Completed);
        let bad = LoopConfig::new(ModelKind::Ok, Strategy::Mipt, 6, StoppingRule::budget(5));
        assert!(run_adaptive_loop(&p, &bad, &reference, 4).is_err());
    }

    #[test]
    fn short_loops_for_every_strategy() {
        let p = problem("schwefel1d").unwrap();
        let reference = ReferenceSet::sample(&p, 300, 1).unwrap();
        let params = StrategyParams::default();
        for name in STRATEGY_NAMES {
            let s = Strategy::from_name(name, &params).unwrap();
            let mut cfg = LoopConfig::new(ModelKind::Ok, s, 6, StoppingRule::budget(9));
            cfg.criterion = PsoConfig {
                particles_per_dim: 10,
                iters_per_dim: 20,
                ..PsoConfig::default()
            };
            let rec = run_adaptive_loop(&p, &cfg, &reference, 1).unwrap();
            let ms: Vec<usize> = rec.rows.iter().map(|r| r.m).collect();
            assert!(ms.windows(2).all(|w| w[1] == w[0] + 1), "{name}");
            assert_eq!(rec.rows[0].m, 6);
            if rec.status == RunStatus::Completed {
                assert_eq!(rec.final_dataset.len(), 9, "{name}");
            } else {
                assert!(
                    matches!(rec.status, RunStatus::ClusteringFailure(_)),
                    "{name}: {:?}",
                    rec.status
                );
            }
        }
    }

    #[test]
    fn mepe_loop_alpha_trajectory() {
        let p = problem("schwefel1d").unwrap();
        let reference = ReferenceSet::sample(&p, 300, 1).unwrap();
        let cfg = LoopConfig::new(ModelKind::Ok, Strategy::Mepe, 6, StoppingRule::budget(11));
        let rec = run_adaptive_loop(&p, &cfg, &reference, 2).unwrap();
        assert_eq!(rec.rows[1].diagnostics["alpha"], 0.5);
        for r in &rec.rows[1..] {
            let a = r.diagnostics["alpha"];
            assert!((0.0..=0.99).contains(&a));
        }
    }

    #[test]
    fn hk_loop_runs() {
        let p = problem("forrester").unwrap();
        let reference = ReferenceSet::sample(&p, 300, 1).unwrap();
        let mut cfg = LoopConfig::new(ModelKind::Hk, Strategy::Mmse, 4, StoppingRule::budget(7));
        cfg.lf_size = 11;
        let rec = run_adaptive_loop(&p, &cfg, &reference, 2).unwrap();
        assert_eq!(rec.final_dataset.len(), 7);
    }

    #[test]
    fn loop_is_deterministic() {
        let p = problem("shc2d").unwrap();
        let reference = ReferenceSet::sample(&p, 300, 1).unwrap();
        let cfg = LoopConfig::new(ModelKind::Ok, Strategy::Eigf, 8, StoppingRule::budget(11));
        let a = run_adaptive_loop(&p, &cfg, &reference, 5).unwrap();
        let b = run_adaptive_loop(&p, &cfg, &reference, 5).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn strategy_names_round_trip() {
        let p = StrategyParams::default();
        for n in STRATEGY_NAMES {
            assert_eq!(Strategy::from_name(n, &p).unwrap().name(), n);
        }
        assert!(Strategy::from_name("lola", &p).is_err());
    }

    fn audit(score: impl Fn(&[f64]) -> f64, best: f64, n: usize) -> bool {
        let probes = monte_carlo_pool(1000, n, 77).unwrap();
        probes
            .points
            .iter()
            .all(|p| score(p) <= best + 1e-9 * best.abs().max(1.0))
    }

    #[test]
    fn continuous_criteria_beat_probes() {
        let m = model2(12);
        let cfg = pso();
        let r = propose_mmse(&m, &cfg).unwrap();
        assert!(audit(|x| m.predict(x).sd(), r.score, 2));
        let r = propose_eigf(&m, &cfg).unwrap();
        assert!(audit(|x| eigf_score(&m, x), r.score, 2));
        let r = propose_cvd(&m, &cfg).unwrap();
        assert!(audit(|x| cvd_score(&m, x), r.score, 2));
        let r = propose_ame(&m, 1.0, &cfg).unwrap();
        let c = AmeCriterion::new(&m, 1.0).unwrap().unwrap();
        assert!(audit(|x| c.score(&m, x), r.score, 2));
        let r = propose_ei(&m, 0.5, false, &cfg).unwrap();
        let yb = r.diagnostics["y_best"];
        assert!(audit(
            |x| {
                let p = m.predict(x);
                wei(p.mean, p.sd(), yb, 0.5, false)
            },
            r.score,
            2
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn proposals_stay_in_cube(seed in 0u64..1000, idx in 0usize..15) {
            let m = model2(10);
            let mut st = AdaptiveState::new(m, None, seed);
            let s = Strategy::from_name(STRATEGY_NAMES[idx], &StrategyParams::default()).unwrap();
            let cfg = PsoConfig { particles_per_dim: 8, iters_per_dim: 10, ..PsoConfig::default() };
            if let Ok(r) = st.propose(&s, &cfg, &default_refit()) {
                prop_assert!(r.point.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(d_nn(&st.model.dataset.points, &r.point) > CLUSTER_TOL);
            }
        }

        #[test]
        fn voronoi_volumes_sum_to_one(k in 1usize..8, seed in 0u64..100) {
            let pts = monte_carlo_pool(k, 2, seed).unwrap().points;
            let pool = monte_carlo_pool(500, 2, seed + 1).unwrap();
            let v = voronoi_volumes(&pts, &pool).unwrap();
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn mivor_full_exploration_is_mipt(seed in 0u64..500, u in 0.0f64..1.0) {
            let m = model2(8);
            let pool = monte_carlo_pool(400, 2, seed).unwrap();
            let a = propose_mivor(&m, 1.0, 0.0, &pool, u).unwrap();
            let b = propose_mipt(&m.dataset, &pool).unwrap();
            prop_assert_eq!(a.point, b.point);
        }

        #[test]
        fn mepe_alpha_bounded(et in 0.0f64..1e3, eh in 0.0f64..1e3) {
            let a = mepe_alpha(Some((et, eh)));
            prop_assert!((0.0..=0.99).contains(&a));
        }
    }
}
