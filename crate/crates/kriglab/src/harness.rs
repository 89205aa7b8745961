//! Experiment configs, replicated runs and their artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::adaptive::{
    default_refit, initial_state, run_adaptive_loop, IterationRow, LoopConfig, ModelKind,
    ReferenceSet, RunRecord, RunStatus, StoppingRule, Strategy, StrategyParams, Target, Threshold,
};
use crate::benchfns;
use crate::designspace::initial_size;
use crate::dynamics::{
    indicator_map, write_map_csv, DynamicsProblem, Indicator, OscillatorParams, OscillatorState,
};
use crate::error::{Error, Result};
use crate::gpcore::{FitConfig, FittedModel};
use crate::metrics::{compute_metrics, MetricReport};
use crate::optim::PsoConfig;

// ---------------------------------------------------------------------------
// config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// ok | uk | hk | plsok | plshk
    pub kind: String,
    /// Trend degree for `uk`.
    #[serde(default = "one")]
    pub degree: usize,
    /// PLS components (HF level for `plshk`).
    #[serde(default = "four")]
    pub h: usize,
    /// PLS components of the LF level for `plshk`.
    #[serde(default = "four")]
    pub h_lf: usize,
}

fn one() -> usize {
    1
}
fn four() -> usize {
    4
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: "ok".into(),
            degree: 1,
            h: 4,
            h_lf: 4,
        }
    }
}

impl ModelSpec {
    pub fn kind(&self) -> Result<ModelKind> {
        Ok(match self.kind.as_str() {
            "ok" => ModelKind::Ok,
            "uk" => ModelKind::Uk(self.degree),
            "hk" => ModelKind::Hk,
            "plsok" => ModelKind::PlsOk { h: self.h },
            "plshk" => ModelKind::PlsHk {
                h_lf: self.h_lf,
                h_hf: self.h,
            },
            other => return Err(Error::UnknownName(other.to_string())),
        })
    }
}

/// Parameter axis of a dynamics problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// Overrides for the oscillator problems.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSpec {
    pub params: Option<OscillatorParams>,
    pub axes: Option<Vec<AxisSpec>>,
    pub indicator: Option<Indicator>,
    /// Initial (X, Ẋ, z).
    pub initial: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub problem: String,
    #[serde(default)]
    pub model: ModelSpec,
    pub strategy: String,
    /// Further strategies run under identical settings.
    #[serde(default)]
    pub compare: Vec<String>,
    #[serde(default)]
    pub strategy_params: StrategyParams,
    /// HF design size; defaults to 10 n.
    pub initial_size: Option<usize>,
    #[serde(default)]
    pub lf_size: usize,
    #[serde(default)]
    pub stopping: StoppingRule,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reference_seed")]
    pub reference_seed: u64,
    /// Defaults to 5000 n.
    pub reference_size: Option<usize>,
    /// Class threshold for the rate columns.
    pub classify_at: Option<f64>,
    pub output: Option<PathBuf>,
    pub fit: Option<PsoConfig>,
    pub refit: Option<PsoConfig>,
    pub criterion: Option<PsoConfig>,
    pub dynamics: Option<DynamicsSpec>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_reference_seed() -> u64 {
    12345
}

impl ExperimentSpec {
    pub fn new(problem: &str, strategy: &str) -> Self {
        ExperimentSpec {
            name: default_name(),
            problem: problem.into(),
            model: ModelSpec::default(),
            strategy: strategy.into(),
            compare: Vec::new(),
            strategy_params: StrategyParams::default(),
            initial_size: None,
            lf_size: 0,
            stopping: StoppingRule::default(),
            replications: 1,
            seed: 0,
            reference_seed: default_reference_seed(),
            reference_size: None,
            classify_at: None,
            output: None,
            fit: None,
            refit: None,
            criterion: None,
            dynamics: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn strategies(&self) -> Vec<String> {
        let mut v = vec![self.strategy.clone()];
        for s in &self.compare {
            if !v.contains(s) {
                v.push(s.clone());
            }
        }
        v
    }

    /// Pre-flight checks against the registries.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        for s in self.strategies() {
            Strategy::from_name(&s, &self.strategy_params)?;
        }
        let kind = self.model.kind()?;
        let target = self.target()?;
        let n = target.domain().dim();
        let m0 = self.initial_size.unwrap_or(initial_size(n));
        if m0 < 2 {
            return Err(Error::Config("initial_size must be at least 2".into()));
        }
        if self.stopping.cap() < m0 {
            return Err(Error::Config(format!(
                "max_samples {} is below initial_size {m0}",
                self.stopping.cap()
            )));
        }
        if kind.needs_lf() && self.lf_size < 2 {
            return Err(Error::Config(
                "hierarchical models need lf_size >= 2".into(),
            ));
        }
        if self.reference_size.is_some_and(|r| r < 2) {
            return Err(Error::Config("reference_size must be at least 2".into()));
        }
        Ok(())
    }

    /// Benchmark or oscillator problem named by `problem`.
    pub fn target(&self) -> Result<Box<dyn Target + Sync>> {
        if let Ok(p) = benchfns::problem(&self.problem) {
            if self.dynamics.is_some() {
                return Err(Error::Config(
                    "[dynamics] only applies to oscillator problems".into(),
                ));
            }
            return Ok(Box::new(p));
        }
        let mut p = DynamicsProblem::by_name(&self.problem)?;
        if let Some(d) = &self.dynamics {
            p = apply_dynamics(p, d)?;
        }
        Ok(Box::new(p))
    }

    pub fn loop_config(&self, strategy: &str, n: usize) -> Result<LoopConfig> {
        let s = Strategy::from_name(strategy, &self.strategy_params)?;
        let m0 = self.initial_size.unwrap_or(initial_size(n));
        let mut cfg = LoopConfig::new(self.model.kind()?, s, m0, self.stopping);
        cfg.lf_size = self.lf_size;
        cfg.classify_at = self.classify_at;
        if let Some(p) = &self.fit {
            cfg.fit = FitConfig {
                pso: p.clone(),
                ..FitConfig::default()
            };
        }
        if let Some(p) = &self.refit {
            cfg.refit = FitConfig {
                pso: p.clone(),
                ..default_refit()
            };
        }
        if let Some(p) = &self.criterion {
            cfg.criterion = p.clone();
        }
        Ok(cfg)
    }

    pub fn reference_size(&self, n: usize) -> usize {
        self.reference_size.unwrap_or(5000 * n)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}

fn apply_dynamics(mut p: DynamicsProblem, d: &DynamicsSpec) -> Result<DynamicsProblem> {
    if let Some(params) = d.params {
        params.validate()?;
        p.base = params;
    }
    if let Some(axes) = &d.axes {
        let axes = axes
            .iter()
            .map(|a| (a.name.clone(), a.lower, a.upper))
            .collect();
        let keep = (p.name.clone(), p.indicator, p.initial);
        p = DynamicsProblem::new(&keep.0, p.base, axes, keep.1)?;
        p.initial = keep.2;
    }
    if let Some(ind) = d.indicator {
        p.indicator = ind;
    }
    if let Some([x, xdot, z]) = d.initial {
        p.initial = OscillatorState { x, xdot, z, t: 0.0 };
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// running

#[derive(Debug, Clone)]
pub struct Replication {
    pub strategy: String,
    pub index: usize,
    pub seed: u64,
    /// Setup failures (initial design or fit) carry the message.
    pub outcome: std::result::Result<RunRecord, String>,
}

impl Replication {
    pub fn status(&self) -> RunStatus {
        match &self.outcome {
            Ok(r) => r.status.clone(),
            Err(m) => RunStatus::Failed(m.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub replications: Vec<Replication>,
}

impl ExperimentResult {
    /// 1 if any replication failed outright, 2 if some hit clustering failures, else 0.
    pub fn exit_code(&self) -> i32 {
        let st: Vec<RunStatus> = self.replications.iter().map(|r| r.status()).collect();
        if st.iter().any(|s| matches!(s, RunStatus::Failed(_))) {
            1
        } else if st
            .iter()
            .any(|s| matches!(s, RunStatus::ClusteringFailure(_)))
        {
            2
        } else {
            0
        }
    }

    pub fn rows(&self) -> Vec<RunRow> {
        self.replications.iter().flat_map(run_rows).collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows(), self.spec.stopping.threshold.as_ref())
    }
}

fn worker_count(jobs: usize) -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs)
        .max(1)
}

/// All strategies × replications; replication k uses seed master + k.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let target = spec.target()?;
    let n = target.domain().dim();
    let reference = ReferenceSet::sample(&*target, spec.reference_size(n), spec.reference_seed)?;
    let mut jobs = Vec::new();
    for s in spec.strategies() {
        let cfg = spec.loop_config(&s, n)?;
        for k in 0..spec.replications {
            jobs.push((s.clone(), k, cfg.clone()));
        }
    }
    let results: Mutex<Vec<Option<Replication>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|sc| {
        for _ in 0..worker_count(jobs.len()) {
            sc.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((s, k, cfg)) = jobs.get(i) else {
                    break;
                };
                let seed = spec.seed.wrapping_add(*k as u64);
                let outcome =
                    run_adaptive_loop(&*target, cfg, &reference, seed).map_err(|e| e.to_string());
                results.lock().unwrap()[i] = Some(Replication {
                    strategy: s.clone(),
                    index: *k,
                    seed,
                    outcome,
                });
            });
        }
    });
    let replications = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    Ok(ExperimentResult {
        spec: spec.clone(),
        replications,
    })
}

/// Fit the initial model only and score it on the reference set.
pub fn fit_once(spec: &ExperimentSpec, seed: u64) -> Result<(FittedModel, MetricReport)> {
    spec.validate()?;
    let target = spec.target()?;
    let n = target.domain().dim();
    let cfg = spec.loop_config(&spec.strategy, n)?;
    let state = initial_state(&*target, &cfg, seed)?;
    let reference = ReferenceSet::sample(&*target, spec.reference_size(n), spec.reference_seed)?;
    let pred: Vec<f64> = reference
        .points
        .iter()
        .map(|z| state.model.predict_mean(z))
        .collect();
    let metrics = compute_metrics(&reference.values, &pred)?;
    Ok((state.model, metrics))
}

/// Hyperparameters of a fitted model, for `model.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub problem: String,
    pub model: String,
    pub m: usize,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub nugget: f64,
    pub beta: Vec<f64>,
    pub psi: f64,
}

impl ModelRecord {
    pub fn new(spec: &ExperimentSpec, model: &FittedModel) -> Self {
        ModelRecord {
            problem: spec.problem.clone(),
            model: spec.model.kind.clone(),
            m: model.m(),
            theta: model.theta.clone(),
            sigma2: model.sigma2,
            nugget: model.nugget,
            beta: model.beta.iter().copied().collect(),
            psi: model.report.psi,
        }
    }
}

// ---------------------------------------------------------------------------
// runs.csv

/// One line of `runs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub strategy: String,
    pub replication: usize,
    pub seed: u64,
    pub iteration: usize,
    pub m: usize,
    /// Raw coordinates of the added point; empty for the initial design.
    pub point: Vec<f64>,
    pub response: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub rmae: Option<f64>,
    pub r2: Option<f64>,
    pub pct_pos: Option<f64>,
    pub pct_neg: Option<f64>,
    /// Terminal status of the replication.
    pub status: String,
    pub branch: Option<String>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl RunRow {
    fn as_iteration(&self) -> Option<IterationRow> {
        Some(IterationRow {
            iteration: self.iteration,
            m: self.m,
            point: None,
            response: self.response,
            metrics: MetricReport {
                mae: self.mae?,
                rmse: self.rmse?,
                rmae: self.rmae,
                r2: self.r2,
                n_ref: 0,
            },
            pct_pos: self.pct_pos,
            pct_neg: self.pct_neg,
            diagnostics: BTreeMap::new(),
            branch: None,
        })
    }
}

pub fn run_rows(rep: &Replication) -> Vec<RunRow> {
    let status = rep.status().label().to_string();
    let base = |iteration: usize, m: usize| RunRow {
        strategy: rep.strategy.clone(),
        replication: rep.index,
        seed: rep.seed,
        iteration,
        m,
        point: Vec::new(),
        response: None,
        mae: None,
        rmse: None,
        rmae: None,
        r2: None,
        pct_pos: None,
        pct_neg: None,
        status: status.clone(),
        branch: None,
        diagnostics: BTreeMap::new(),
    };
    match &rep.outcome {
        Err(_) => vec![base(0, 0)],
        Ok(rec) => rec
            .rows
            .iter()
            .map(|r| RunRow {
                point: r.point.clone().unwrap_or_default(),
                response: r.response,
                mae: Some(r.metrics.mae),
                rmse: Some(r.metrics.rmse),
                rmae: r.metrics.rmae,
                r2: r.metrics.r2,
                pct_pos: r.pct_pos,
                pct_neg: r.pct_neg,
                branch: r.branch.clone(),
                diagnostics: r.diagnostics.clone(),
                ..base(r.iteration, r.m)
            })
            .collect(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

pub fn write_runs_csv<W: std::io::Write>(rows: &[RunRow], w: W) -> Result<()> {
    let dim = rows.iter().map(|r| r.point.len()).max().unwrap_or(0);
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["strategy", "replication", "seed", "iteration", "m"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=dim).map(|i| format!("p{i}")));
    header.extend(
        [
            "y",
            "mae",
            "rmse",
            "rmae",
            "r2",
            "pct_pos",
            "pct_neg",
            "status",
            "branch",
            "diagnostics",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    wr.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.strategy.clone(),
            r.replication.to_string(),
            r.seed.to_string(),
            r.iteration.to_string(),
            r.m.to_string(),
        ];
        for i in 0..dim {
            rec.push(r.point.get(i).map(|v| v.to_string()).unwrap_or_default());
        }
        rec.extend([
            opt(r.response),
            opt(r.mae),
            opt(r.rmse),
            opt(r.rmae),
            opt(r.r2),
            opt(r.pct_pos),
            opt(r.pct_neg),
            r.status.clone(),
            r.branch.clone().unwrap_or_default(),
            r.diagnostics
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";"),
        ]);
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush().map_err(csv_err)?;
    Ok(())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(csv_err)
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(csv_err)
}

pub fn read_runs_csv<R: std::io::Read>(r: R) -> Result<Vec<RunRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("runs.csv lacks column '{name}'")))
    };
    let p_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.len() > 1 && h.starts_with('p') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    let idx: Vec<usize> = [
        "strategy",
        "replication",
        "seed",
        "iteration",
        "m",
        "y",
        "mae",
        "rmse",
        "rmae",
        "r2",
        "pct_pos",
        "pct_neg",
        "status",
        "branch",
        "diagnostics",
    ]
    .iter()
    .map(|n| col(n))
    .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        let mut point = Vec::new();
        for &c in &p_cols {
            let v = rec.get(c).unwrap_or("");
            if !v.is_empty() {
                point.push(parse(v)?);
            }
        }
        let mut diagnostics = BTreeMap::new();
        for kv in f(14).split(';').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad diagnostic '{kv}'")))?;
            diagnostics.insert(k.to_string(), parse(v)?);
        }
        out.push(RunRow {
            strategy: f(0).to_string(),
            replication: parse(f(1))?,
            seed: parse(f(2))?,
            iteration: parse(f(3))?,
            m: parse(f(4))?,
            point,
            response: parse_opt(f(5))?,
            mae: parse_opt(f(6))?,
            rmse: parse_opt(f(7))?,
            rmae: parse_opt(f(8))?,
            r2: parse_opt(f(9))?,
            pct_pos: parse_opt(f(10))?,
            pct_neg: parse_opt(f(11))?,
            status: f(12).to_string(),
            branch: Some(f(13).to_string()).filter(|s| !s.is_empty()),
            diagnostics,
        });
    }
    Ok(out)
}

pub fn load_runs_csv(path: &Path) -> Result<Vec<RunRow>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_runs_csv(f)
}

// ---------------------------------------------------------------------------
// summary.csv

/// Mean and max − min of a quantity over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub quantity: String,
    /// Sample count for per-checkpoint metrics; `None` for run-level quantities.
    pub m: Option<usize>,
    pub mean: f64,
    pub variation: f64,
    pub n: usize,
}

impl SummaryRow {
    /// `strategy:quantity` or `strategy:quantity@m`.
    pub fn key(&self) -> String {
        match self.m {
            Some(m) => format!("{}:{}@{m}", self.strategy, self.quantity),
            None => format!("{}:{}", self.strategy, self.quantity),
        }
    }
}

fn aggregate(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, hi - lo)
}

/// Aggregates derived from `runs.csv` rows alone.
pub fn summarize(rows: &[RunRow], threshold: Option<&Threshold>) -> Vec<SummaryRow> {
    let mut strategies: Vec<&str> = Vec::new();
    for r in rows {
        if !strategies.contains(&r.strategy.as_str()) {
            strategies.push(&r.strategy);
        }
    }
    let mut out = Vec::new();
    for s in strategies {
        let mine: Vec<&RunRow> = rows.iter().filter(|r| r.strategy == s).collect();
        let mut reps: Vec<usize> = mine.iter().map(|r| r.replication).collect();
        reps.dedup();
        reps.sort_unstable();
        reps.dedup();
        let push = |out: &mut Vec<SummaryRow>, q: &str, m: Option<usize>, v: &[f64]| {
            if v.is_empty() {
                return;
            }
            let (mean, variation) = aggregate(v);
            out.push(SummaryRow {
                strategy: s.to_string(),
                quantity: q.to_string(),
                m,
                mean,
                variation,
                n: v.len(),
            });
        };
        let final_of = |k: usize| mine.iter().rev().find(|r| r.replication == k);
        let finals: Vec<f64> = reps
            .iter()
            .filter_map(|&k| final_of(k).map(|r| r.m as f64))
            .collect();
        push(&mut out, "final_m", None, &finals);
        let clustered: Vec<f64> = reps
            .iter()
            .filter_map(|&k| final_of(k))
            .map(|r| f64::from(u8::from(r.status == "clustering_failure")))
            .collect();
        push(&mut out, "clustering_failure_rate", None, &clustered);
        if let Some(t) = threshold {
            let hits: Vec<f64> = reps
                .iter()
                .filter_map(|&k| {
                    mine.iter()
                        .filter(|r| r.replication == k)
                        .find(|r| r.as_iteration().is_some_and(|it| t.reached(&it)))
                        .map(|r| r.m as f64)
                })
                .collect();
            push(&mut out, "samples_to_threshold", None, &hits);
        }
        let mut ms: Vec<usize> = mine
            .iter()
            .filter(|r| r.mae.is_some())
            .map(|r| r.m)
            .collect();
        ms.sort_unstable();
        ms.dedup();
        type Getter = fn(&RunRow) -> Option<f64>;
        let metrics: [(&str, Getter); 6] = [
            ("mae", |r| r.mae),
            ("rmse", |r| r.rmse),
            ("rmae", |r| r.rmae),
            ("r2", |r| r.r2),
            ("pct_pos", |r| r.pct_pos),
            ("pct_neg", |r| r.pct_neg),
        ];
        for (name, get) in metrics {
            for &m in &ms {
                let v: Vec<f64> = mine
                    .iter()
                    .filter(|r| r.m == m)
                    .filter_map(|r| get(r))
                    .collect();
                push(&mut out, name, Some(m), &v);
            }
        }
    }
    out
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["strategy", "quantity", "m", "mean", "variation", "n"])
        .map_err(csv_err)?;
    for r in rows {
        wr.write_record([
            r.strategy.clone(),
            r.quantity.clone(),
            r.m.map(|m| m.to_string()).unwrap_or_default(),
            r.mean.to_string(),
            r.variation.to_string(),
            r.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(csv_err)?;
    Ok(())
}

pub fn read_summary_csv<R: std::io::Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 6 {
            return Err(Error::Parse("summary.csv rows need 6 fields".into()));
        }
        out.push(SummaryRow {
            strategy: rec[0].to_string(),
            quantity: rec[1].to_string(),
            m: if rec[2].is_empty() {
                None
            } else {
                Some(parse(&rec[2])?)
            },
            mean: parse(&rec[3])?,
            variation: parse(&rec[4])?,
            n: parse(&rec[5])?,
        });
    }
    Ok(out)
}

pub fn load_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_summary_csv(f)
}

// ---------------------------------------------------------------------------
// other artifacts

/// Final designs per replication in raw units.
pub fn write_samples_csv<W: std::io::Write>(result: &ExperimentResult, w: W) -> Result<()> {
    let dim = result
        .replications
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .map(|r| r.final_dataset.dim())
        .max()
        .unwrap_or(0);
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["strategy".to_string(), "replication".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("y".into());
    wr.write_record(&header).map_err(csv_err)?;
    for rep in &result.replications {
        let Ok(rec) = &rep.outcome else { continue };
        let ds = &rec.final_dataset;
        for (x, y) in ds.raw_points().iter().zip(&ds.responses) {
            let mut row = vec![rep.strategy.clone(), rep.index.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row.push(y.to_string());
            wr.write_record(&row).map_err(csv_err)?;
        }
    }
    wr.flush().map_err(csv_err)?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Mean of `quantity` against m, one polyline per strategy.
pub fn convergence_svg(summary: &[SummaryRow], quantity: &str, log_y: bool) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 150.0, 20.0, 45.0);
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in summary.iter().filter(|r| r.quantity == quantity) {
        let Some(m) = r.m else { continue };
        let y = if log_y {
            if r.mean <= 0.0 {
                continue;
            }
            r.mean.log10()
        } else {
            r.mean
        };
        if !y.is_finite() {
            continue;
        }
        match series.iter_mut().find(|s| s.0 == r.strategy) {
            Some(s) => s.1.push((m as f64, y)),
            None => series.push((r.strategy.clone(), vec![(m as f64, y)])),
        }
    }
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let ylab = if log_y {
            format!("{:.2e}", 10f64.powf(fy))
        } else {
            format!("{fy:.3}")
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            sx(fx),
            h - mb + 15.0,
            fx
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#,
            ml - 5.0,
            sy(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">m</text>"#,
        ml + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{quantity}{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        if log_y { " (log)" } else { "" }
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = p
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = mt + 15.0 + 16.0 * i as f64;
        let lx = w - mr + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{name}</text>"#,
            lx + 25.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_bytes<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Writes runs.csv, summary.csv, samples.csv, status.csv and convergence.svg.
pub fn emit_artifacts(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    if result.replications.is_empty() {
        return Err(Error::InvalidArgument("no replications to write".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = result.rows();
    let summary = summarize(&rows, result.spec.stopping.threshold.as_ref());
    let quantity = result
        .spec
        .stopping
        .threshold
        .map(|t| match t.metric {
            crate::adaptive::Metric::PctBoth | crate::adaptive::Metric::PctPos => "pct_pos",
            crate::adaptive::Metric::PctNeg => "pct_neg",
            crate::adaptive::Metric::R2 => "r2",
            crate::adaptive::Metric::Rmse => "rmse",
            crate::adaptive::Metric::Rmae => "rmae",
            crate::adaptive::Metric::Mae => "mae",
        })
        .unwrap_or("mae");
    let log_y = !matches!(quantity, "pct_pos" | "pct_neg" | "r2");
    let mut status = String::from("strategy,replication,seed,status,final_m,detail\n");
    for r in &result.replications {
        let st = r.status();
        let detail = match &st {
            RunStatus::ClusteringFailure(d) | RunStatus::Failed(d) => d.replace('"', "'"),
            _ => String::new(),
        };
        let final_m = r
            .outcome
            .as_ref()
            .map(|rec| rec.final_dataset.len())
            .unwrap_or(0);
        let _ = writeln!(
            status,
            "{},{},{},{},{final_m},\"{detail}\"",
            r.strategy,
            r.index,
            r.seed,
            st.label()
        );
    }
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("runs.csv", to_bytes(|b| write_runs_csv(&rows, b))?),
        ("summary.csv", to_bytes(|b| write_summary_csv(&summary, b))?),
        ("samples.csv", to_bytes(|b| write_samples_csv(result, b))?),
        ("status.csv", status.into_bytes()),
        (
            "convergence.svg",
            convergence_svg(&summary, quantity, log_y).into_bytes(),
        ),
        ("experiment.toml", result.spec.to_toml()?.into_bytes()),
    ];
    let mut out = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(name);
        write_file(&p, &bytes)?;
        out.push(p);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// golden values

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenEntry {
    /// Summary key, `strategy:quantity` or `strategy:quantity@m`.
    pub key: String,
    pub target: f64,
    pub tol_abs: Option<f64>,
    pub tol_rel: Option<f64>,
    #[serde(default)]
    pub note: String,
}

impl GoldenEntry {
    /// Within tol_abs, or within tol_rel·|target|, whichever is declared.
    pub fn accepts(&self, observed: f64) -> bool {
        let d = (observed - self.target).abs();
        self.tol_abs.is_some_and(|t| d <= t)
            || self.tol_rel.is_some_and(|t| d <= t * self.target.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenOutcome {
    pub key: String,
    pub target: f64,
    pub observed: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoldenReport {
    pub outcomes: Vec<GoldenOutcome>,
}

impl GoldenReport {
    pub fn pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    pub fn misses(&self) -> Vec<&GoldenOutcome> {
        self.outcomes.iter().filter(|o| !o.pass).collect()
    }
}

impl std::fmt::Display for GoldenReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for o in &self.outcomes {
            let obs = o
                .observed
                .map(|v| format!("{v:.6}"))
                .unwrap_or("missing".into());
            writeln!(
                f,
                "{} {}: observed {obs}, target {}",
                if o.pass { "PASS" } else { "MISS" },
                o.key,
                o.target
            )?;
        }
        Ok(())
    }
}

/// Compare summary values with golden entries; absent keys count as misses.
pub fn golden_check(summary: &[SummaryRow], entries: &[GoldenEntry]) -> GoldenReport {
    let by_key: BTreeMap<String, f64> = summary.iter().map(|r| (r.key(), r.mean)).collect();
    GoldenReport {
        outcomes: entries
            .iter()
            .map(|e| {
                let observed = by_key.get(&e.key).copied();
                GoldenOutcome {
                    key: e.key.clone(),
                    target: e.target,
                    observed,
                    pass: observed.is_some_and(|v| e.accepts(v)),
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenCase {
    /// Experiment config, relative to the suite file.
    pub config: PathBuf,
    #[serde(default)]
    pub entry: Vec<GoldenEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenSuite {
    pub case: Vec<GoldenCase>,
}

impl GoldenSuite {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let suite: GoldenSuite = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for c in &suite.case {
            for e in &c.entry {
                if e.tol_abs.is_none() && e.tol_rel.is_none() {
                    return Err(Error::Config(format!(
                        "entry '{}' declares no tolerance",
                        e.key
                    )));
                }
            }
        }
        Ok(suite)
    }
}

// ---------------------------------------------------------------------------
// indicator maps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub problem: String,
    #[serde(default = "default_per_axis")]
    pub points_per_axis: usize,
    pub output: Option<PathBuf>,
    pub dynamics: Option<DynamicsSpec>,
}

fn default_per_axis() -> usize {
    21
}

impl MapSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn problem(&self) -> Result<DynamicsProblem> {
        let p = DynamicsProblem::by_name(&self.problem)?;
        match &self.dynamics {
            Some(d) => apply_dynamics(p, d),
            None => Ok(p),
        }
    }
}

/// Evaluate the grid and write `map.csv` into `dir`.
pub fn run_map(spec: &MapSpec, dir: &Path) -> Result<PathBuf> {
    let problem = spec.problem()?;
    let rows = indicator_map(&problem, spec.points_per_axis)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("map.csv");
    let bytes = to_bytes(|b| write_map_csv(&problem, &rows, b))?;
    write_file(&path, &bytes)?;
    Ok(path)
}
