//! Acceptance checks. Each criterion prints one PASS/FAIL line; the target
//! itself only fails when a check cannot run at all.
//!
//! `KRIGLAB_ACCEPT=1,3,12` selects criteria. Criterion 11 takes hours and
//! only runs when selected explicitly or with `KRIGLAB_NIGHTLY=1`.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kriglab::adaptive::{
    run_adaptive_loop, LoopConfig, Metric, ModelKind, ReferenceSet, RunRecord, StoppingRule,
    Strategy, StrategyParams, Target, Threshold,
};
use kriglab::benchfns::{self, problem};
use kriglab::designspace::{monte_carlo_pool, tplhd, Dataset, Domain};
use kriglab::dynamics::{largest_lyapunov, DynamicsProblem, LinearSystem, LleConfig, Molaie};
use kriglab::gpcore::{self, FitConfig, FittedModel, Trend};
use kriglab::harness::{run_experiment, run_rows, write_runs_csv, ExperimentSpec};
use kriglab::kernels::{correlation_matrix, cross_correlation, KernelSpec};
use kriglab::multifidelity::fit_hk;
use kriglab::optim::PsoConfig;
use kriglab::plsreduce::fit_plsok;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn reference<T: Target + ?Sized>(t: &T) -> ReferenceSet {
    ReferenceSet::sample(t, 5000 * t.domain().dim(), 12345).expect("reference set")
}

fn strategy(name: &str) -> Strategy {
    Strategy::from_name(name, &StrategyParams::default()).expect("known strategy")
}

// ---------------------------------------------------------------- 1

fn random_instance(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(5..=15);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    while pts.len() < m {
        let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if pts.iter().all(|q| kriglab::designspace::dist(q, &p) > 0.05) {
            pts.push(p);
        }
    }
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..6.0)).collect();
    let ys = pts
        .iter()
        .map(|p| {
            p.iter()
                .zip(&a)
                .map(|(x, w)| (w * x).sin() + x * x)
                .sum::<f64>()
        })
        .collect();
    Dataset::new(pts, ys, Domain::unit(n)).unwrap()
}

/// Mean and variance from an explicit LU solve of the GLS system.
fn dense_oracle(m: &FittedModel, x0: &[f64]) -> (f64, f64) {
    let pts = &m.dataset.points;
    let k = pts.len();
    let r = correlation_matrix(&m.kernel, &m.theta, pts, m.nugget).unwrap();
    let rinv = r.clone().lu().try_inverse().unwrap();
    let p = m.trend.basis(&pts[0]).len();
    let mut f = DMatrix::zeros(k, p);
    for (i, x) in pts.iter().enumerate() {
        for (j, v) in m.trend.basis(x).into_iter().enumerate() {
            f[(i, j)] = v;
        }
    }
    let y = DVector::from_column_slice(&m.dataset.responses);
    let ftrf = f.transpose() * &rinv * &f;
    let ftrf_inv = ftrf.clone().lu().try_inverse().unwrap();
    let beta = &ftrf_inv * f.transpose() * &rinv * &y;
    let resid = &y - &f * &beta;
    let sigma2 = (resid.transpose() * &rinv * &resid)[(0, 0)] / k as f64;
    let r0 = cross_correlation(&m.kernel, &m.theta, pts, x0).unwrap();
    let f0 = DVector::from_vec(m.trend.basis(x0));
    let mean = f0.dot(&beta) + (r0.transpose() * &rinv * &resid)[(0, 0)];
    let u = f.transpose() * &rinv * &r0 - &f0;
    let var = sigma2
        * (1.0 - (r0.transpose() * &rinv * &r0)[(0, 0)] + (u.transpose() * &ftrf_inv * &u)[(0, 0)]);
    (mean, var)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 4];
    let mut fails = Vec::new();
    for inst in 0..20 {
        let ds = random_instance(&mut rng);
        let n = ds.dim();
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.6)).collect();
        let ok = FittedModel::with_theta(
            ds.clone(),
            KernelSpec::matern32(n),
            Trend::Constant,
            theta.clone(),
            0.0,
        )
        .unwrap();
        let uk = FittedModel::with_theta(
            ds.clone(),
            KernelSpec::matern32(n),
            Trend::Polynomial(0),
            theta,
            0.0,
        )
        .unwrap();
        let ys = &ds.responses;
        let range = ys.iter().cloned().fold(f64::MIN, f64::max)
            - ys.iter().cloned().fold(f64::MAX, f64::min);
        let mut bad = false;
        for (x, y) in ds.points.iter().zip(ys) {
            let p = ok.predict(x);
            let e = (p.mean - y).abs() / range;
            worst[0] = worst[0].max(e);
            bad |= e > 1e-6;
            let v = p.variance / ok.sigma2;
            worst[1] = worst[1].max(v);
            bad |= !(p.variance >= 0.0) || v > 1e-8;
        }
        for _ in 0..10 {
            let x0: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let (po, pu) = (ok.predict(&x0), uk.predict(&x0));
            bad |= !(po.variance >= 0.0);
            let d = (po.mean - pu.mean)
                .abs()
                .max((po.variance - pu.variance).abs());
            worst[2] = worst[2].max(d);
            bad |= d > 1e-10;
            let (om, ov) = dense_oracle(&ok, &x0);
            let rel = ((po.mean - om).abs() / om.abs().max(1.0))
                .max((po.variance - ov).abs() / ok.sigma2.max(1e-300));
            worst[3] = worst[3].max(rel);
            bad |= rel > 1e-8;
        }
        if bad {
            fails.push(inst);
        }
    }
    outcome(
        fails.is_empty(),
        format!(
            "interp {:.1e}, var at samples {:.1e}, uk-ok {:.1e}, dense {:.1e}, failing instances {fails:?}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut ds = random_instance(&mut rng);
        while ds.len() < 5 {
            ds = random_instance(&mut rng);
        }
        let n = ds.dim();
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.6)).collect();
        let m = FittedModel::with_theta(ds, KernelSpec::matern32(n), Trend::Constant, theta, 0.0)
            .unwrap();
        let loo = m.loo_dubrule().unwrap();
        for i in 0..m.m() {
            let sub = FittedModel::with_exact_nugget(
                m.dataset.without(&[i]),
                m.kernel.clone(),
                m.trend.clone(),
                m.theta.clone(),
                m.nugget,
            )
            .unwrap();
            let p = sub.predict(&m.dataset.points[i]);
            // the closed form keeps the full-model process variance
            let var = p.variance * m.sigma2 / sub.sigma2;
            let em = (loo.means[i] - p.mean).abs() / p.mean.abs().max(1e-12);
            let ev = (loo.variances[i] - var).abs() / var.abs().max(1e-12);
            worst = worst.max(em).max(ev);
        }
    }
    outcome(
        worst <= 1e-6,
        format!("max relative difference {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let checks = [
        (
            "hartmann3",
            benchfns::hartmann3(&[0.114614, 0.555649, 0.852547]),
            -3.8627,
            5e-4,
        ),
        (
            "trid5",
            benchfns::trid(&[5.0, 8.0, 9.0, 8.0, 5.0]),
            -30.0,
            1e-9,
        ),
        ("levy7", benchfns::levy(&[1.0; 7]), 0.0, 1e-12),
        (
            "six_hump",
            benchfns::six_hump_camel(&[0.0898, -0.7126]),
            -1.0316,
            1e-3,
        ),
        ("wong10", benchfns::wong(&benchfns::WONG_XMIN), 24.31, 0.02),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, v, target, tol) in checks {
        let ok = (v - target).abs() <= tol;
        pass &= ok;
        parts.push(format!("{name} {v:.6}{}", if ok { "" } else { " (off)" }));
    }
    outcome(pass, parts.join(", "))
}

// ---------------------------------------------------------------- 4, 5

struct Convergence {
    counts: Vec<f64>,
    missed: usize,
}

fn samples_to_threshold(
    pname: &str,
    sname: &str,
    m0: usize,
    mae: f64,
    cap: usize,
    reference: &ReferenceSet,
) -> Convergence {
    let p = problem(pname).unwrap();
    let cfg = LoopConfig::new(
        ModelKind::Ok,
        strategy(sname),
        m0,
        StoppingRule::accuracy(Metric::Mae, mae, cap),
    );
    let t = Threshold {
        metric: Metric::Mae,
        value: mae,
    };
    let mut counts = Vec::new();
    let mut missed = 0;
    for seed in 0..10 {
        let rec = run_adaptive_loop(&p, &cfg, reference, seed).unwrap();
        match rec.samples_to(&t) {
            Some(k) => counts.push(k as f64),
            None => {
                // an unconverged run counts at the cap
                missed += 1;
                counts.push(cap as f64);
            }
        }
    }
    Convergence { counts, missed }
}

fn band(c: &Convergence, lo: f64, hi: f64) -> (bool, String) {
    let m = mean(&c.counts);
    let ok = c.missed == 0 && (lo..=hi).contains(&m);
    (
        ok,
        format!(
            "mean {m:.1} in [{lo}, {hi}]? {ok}, {} unconverged",
            c.missed
        ),
    )
}

fn criterion_4() -> Outcome {
    let p = problem("schwefel1d").unwrap();
    let r = reference(&p);
    let mut pass = true;
    let mut parts = Vec::new();
    for (s, lo, hi) in [
        ("cvd", 18.0, 26.0),
        ("mepe", 20.0, 28.0),
        ("ssa", 20.0, 28.0),
    ] {
        let c = samples_to_threshold("schwefel1d", s, 10, 0.01, 50, &r);
        let (ok, d) = band(&c, lo, hi);
        pass &= ok;
        parts.push(format!("{s}: {d}"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let p = problem("shc2d").unwrap();
    let r = reference(&p);
    let mepe = samples_to_threshold("shc2d", "mepe", 20, 0.1, 120, &r);
    let mipt = samples_to_threshold("shc2d", "mipt", 20, 0.1, 120, &r);
    let (a, da) = band(&mepe, 42.0, 56.0);
    let (b, db) = band(&mipt, 56.0, 72.0);
    let order = mean(&mepe.counts) < mean(&mipt.counts);
    outcome(
        a && b && order,
        format!("mepe: {da}; mipt: {db}; mepe < mipt? {order}"),
    )
}

// ---------------------------------------------------------------- 6

fn grid_rmse(f: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64) -> f64 {
    let k = 1000;
    let s: f64 = (0..k)
        .map(|i| {
            let x = i as f64 / (k - 1) as f64;
            (f(x) - truth(x)).powi(2)
        })
        .sum();
    (s / k as f64).sqrt()
}

fn final_rmse(rec: &RunRecord) -> f64 {
    rec.rows.last().unwrap().metrics.rmse
}

fn criterion_6() -> Outcome {
    let p = problem("forrester").unwrap();
    let hp = tplhd(4, 1).unwrap();
    let lp = tplhd(7, 1).unwrap();
    let eval = |pts: &[Vec<f64>], lf: bool| -> Dataset {
        let ys = pts
            .iter()
            .map(|z| {
                if lf {
                    p.evaluate_lf_unit(z).unwrap()
                } else {
                    p.evaluate_unit(z).unwrap()
                }
            })
            .collect();
        Dataset::new(pts.to_vec(), ys, p.domain.clone()).unwrap()
    };
    let cfg = FitConfig::default();
    let hk = fit_hk(
        eval(&lp, true),
        eval(&hp, false),
        KernelSpec::matern32(1),
        &cfg,
    )
    .unwrap();
    let ok = gpcore::fit_ok(eval(&hp, false), &cfg).unwrap();
    let truth = |x: f64| p.evaluate_unit(&[x]).unwrap();
    let e_hk = grid_rmse(|x| hk.predict(&[x]).mean, truth);
    let e_ok = grid_rmse(|x| ok.predict(&[x]).mean, truth);
    let part1 = e_hk < e_ok;

    let wide = problem("forrester_wide").unwrap();
    let r = reference(&wide);
    let mut wins = 0;
    let mut parts = Vec::new();
    for s in [
        "ace", "ame", "cvd", "ei", "eigf", "masa", "mepe", "mipt", "msd", "ssa",
    ] {
        let mut hk_cfg = LoopConfig::new(ModelKind::Hk, strategy(s), 10, StoppingRule::budget(20));
        hk_cfg.lf_size = 70;
        let ok_cfg = LoopConfig::new(ModelKind::Ok, strategy(s), 10, StoppingRule::budget(20));
        let a = run_adaptive_loop(&wide, &hk_cfg, &r, 0).unwrap();
        let b = run_adaptive_loop(&wide, &ok_cfg, &r, 0).unwrap();
        let complete = a.final_dataset.len() == 20 && b.final_dataset.len() == 20;
        let win = complete && final_rmse(&a) < final_rmse(&b);
        wins += win as usize;
        parts.push(format!(
            "{s} {:.3}/{:.3}{}",
            final_rmse(&a),
            final_rmse(&b),
            if complete { "" } else { " (incomplete)" }
        ));
    }
    outcome(
        part1 && wins >= 8,
        format!(
            "4+7 grid rmse hk {e_hk:.3} vs ok {e_ok:.3}; hk wins {wins}/10 at 20 HF samples [{}]",
            parts.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let f = benchfns::fidelity_gap(&problem("forrester_wide").unwrap(), 10_000, 7).unwrap();
    let c = benchfns::fidelity_gap(&problem("currin").unwrap(), 10_000, 7).unwrap();
    let a = (f.mae - 38.7).abs() <= 0.05 * 38.7;
    let b = (c.mae - 0.114).abs() <= 0.10 * 0.114;
    outcome(
        a && b,
        format!(
            "forrester mae {:.3} (38.7 ± 5%), currin mae {:.4} (0.114 ± 10%)",
            f.mae, c.mae
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let p = problem("wong10").unwrap();
    let pso = PsoConfig {
        particles_per_dim: 10,
        iters_per_dim: 20,
        ..PsoConfig::default()
    };
    let (mut t_ok, mut t_pls) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let pts = monte_carlo_pool(150, 10, 900 + seed).unwrap().points;
        let ys = pts.iter().map(|z| p.evaluate_unit(z).unwrap()).collect();
        let ds = Dataset::new(pts, ys, p.domain.clone()).unwrap();
        let cfg = FitConfig {
            pso: pso.clone().with_seed(seed),
            ..FitConfig::default()
        };
        let t = Instant::now();
        gpcore::fit_ok(ds.clone(), &cfg).unwrap();
        t_ok.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        fit_plsok(ds, 4, &cfg).unwrap();
        t_pls.push(t.elapsed().as_secs_f64());
    }
    let (a, b) = (median(&mut t_pls), median(&mut t_ok));
    outcome(
        a < b,
        format!("median fit time plsok(h=4) {a:.2}s vs ok {b:.2}s"),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let sys = LinearSystem::new(DMatrix::from_element(1, 1, -1.0));
    let cfg = LleConfig {
        t_transient: 0.0,
        t_total: 20.0,
        ..LleConfig::default()
    };
    let lin = largest_lyapunov(&sys, 0.0, &[1.0], &cfg).unwrap();
    let mol = Molaie::default();
    let x0 = [-2.0, 0.0, 0.0];
    let mut mc = LleConfig::molaie();
    let est = largest_lyapunov(&mol, 0.0, &x0, &mc).unwrap();
    mc.exact_jacobian = true;
    let ex = largest_lyapunov(&mol, 0.0, &x0, &mc).unwrap();
    let a = (lin + 1.0).abs() <= 0.01;
    let b = (est - ex).abs() <= 0.02;
    outcome(
        a && b,
        format!("x' = -x: {lin:.4}; molaie estimated {est:.4} vs exact {ex:.4}"),
    )
}

// ---------------------------------------------------------------- 10, 11

fn criterion_10() -> Outcome {
    let p = DynamicsProblem::by_name("mob_lle_1d").unwrap();
    let r = reference(&p);
    let mut cfg = LoopConfig::new(
        ModelKind::Ok,
        strategy("mivor"),
        5,
        StoppingRule::accuracy(Metric::PctBoth, 99.0, 60),
    );
    cfg.classify_at = Some(0.0);
    let mut hits = 0;
    let mut parts = Vec::new();
    for seed in 0..10 {
        let rec = run_adaptive_loop(&p, &cfg, &r, seed).unwrap();
        let last = rec.rows.last().unwrap();
        let hit = rec.status.label() == "threshold_reached";
        hits += hit as usize;
        parts.push(format!(
            "{}:{:.1}/{:.1}",
            rec.final_dataset.len(),
            last.pct_pos.unwrap_or(f64::NAN),
            last.pct_neg.unwrap_or(f64::NAN)
        ));
    }
    let positive = r.values.iter().filter(|v| **v >= 0.0).count();
    outcome(
        hits >= 8,
        format!(
            "{hits}/10 seeds reached 99%/99% within 60 samples; reference {positive}/{} positive; final m:pos/neg [{}]",
            r.values.len(),
            parts.join(" ")
        ),
    )
}

fn criterion_11() -> Outcome {
    let p = DynamicsProblem::by_name("mob_lle_p1").unwrap();
    let r = reference(&p);
    let reps = 5u64;
    let mut rates = Vec::new();
    for s in ["mivor", "mipt", "eigf", "mepe"] {
        let mut cfg = LoopConfig::new(ModelKind::Ok, strategy(s), 20, StoppingRule::budget(90));
        cfg.classify_at = Some(0.0);
        let v: Vec<f64> = (0..reps)
            .map(|seed| {
                let rec = run_adaptive_loop(&p, &cfg, &r, seed).unwrap();
                rec.rows.last().unwrap().pct_pos.unwrap_or(0.0)
            })
            .collect();
        rates.push((s, mean(&v)));
    }
    let lead = rates[0].1;
    let pass = rates[1..].iter().all(|(_, v)| lead > *v);
    let d: Vec<String> = rates.iter().map(|(s, v)| format!("{s} {v:.2}%")).collect();
    outcome(
        pass,
        format!(
            "mean positive-class accuracy at 90 samples: {}",
            d.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 12

fn runs_csv_bytes(spec: &ExperimentSpec) -> Vec<u8> {
    let res = run_experiment(spec).unwrap();
    let rows: Vec<_> = res.replications.iter().flat_map(run_rows).collect();
    let mut buf = Vec::new();
    write_runs_csv(&rows, &mut buf).unwrap();
    buf
}

fn criterion_12() -> Outcome {
    let mut spec = ExperimentSpec::new("forrester", "mepe");
    spec.compare = vec!["ssa".into(), "mipt".into()];
    spec.replications = 2;
    spec.seed = 42;
    spec.initial_size = Some(5);
    spec.stopping = StoppingRule::budget(9);
    spec.reference_size = Some(500);
    let a = runs_csv_bytes(&spec);
    let b = runs_csv_bytes(&spec);
    outcome(
        a == b && !a.is_empty(),
        format!("two runs, {} bytes each, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let all: [(u32, fn() -> Outcome); 12] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
    ];
    // libtest-style flags such as --list or a name filter are ignored
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let selected: Option<BTreeSet<u32>> = std::env::var("KRIGLAB_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let nightly = std::env::var("KRIGLAB_NIGHTLY").is_ok_and(|v| v == "1");
    let mut failed = 0;
    for (k, f) in all {
        let run = match &selected {
            Some(s) => s.contains(&k),
            None => k != 11 || nightly,
        };
        if !run {
            println!("criterion {k}: SKIP (not selected)");
            continue;
        }
        let t = Instant::now();
        let o = f();
        failed += !o.pass as usize;
        println!(
            "criterion {k}: {} ({}) [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
}
