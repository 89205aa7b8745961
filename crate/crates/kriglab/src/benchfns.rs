//! Analytic test functions, single and multi-fidelity.

use std::f64::consts::{E, PI};

use crate::designspace::{monte_carlo_pool, Domain};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricReport};

pub type ScalarFn = fn(&[f64]) -> f64;

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub name: String,
    pub domain: Domain,
    pub hf: ScalarFn,
    pub lf: Option<ScalarFn>,
    /// Known minima `(x, f)` in raw coordinates.
    pub known_optima: Vec<(Vec<f64>, f64)>,
    /// Approximate max - min over the domain.
    pub spread_hint: Option<f64>,
    /// Lower bound is excluded (`]a, b]`), so inputs are clamped away from it.
    pub open_lower: bool,
}

impl BenchmarkProblem {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn is_multifidelity(&self) -> bool {
        self.lf.is_some()
    }

    fn prepare(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let d = &self.domain;
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let tol = 1e-9 * d.width(i);
                if !v.is_finite() || v < d.lower[i] - tol || v > d.upper[i] + tol {
                    return Err(Error::OutOfDomain(i));
                }
                let lo = if self.open_lower {
                    d.lower[i] + tol
                } else {
                    d.lower[i]
                };
                Ok(v.clamp(lo, d.upper[i]))
            })
            .collect()
    }

    /// High-fidelity value at a raw point.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok((self.hf)(&self.prepare(x)?))
    }

    pub fn evaluate_lf(&self, x: &[f64]) -> Result<f64> {
        let lf = self
            .lf
            .ok_or_else(|| Error::NotMultifidelity(self.name.clone()))?;
        Ok(lf(&self.prepare(x)?))
    }

    /// High-fidelity value at a normalized point.
    pub fn evaluate_unit(&self, z: &[f64]) -> Result<f64> {
        self.evaluate(&self.domain.denormalize(z)?)
    }

    pub fn evaluate_lf_unit(&self, z: &[f64]) -> Result<f64> {
        self.evaluate_lf(&self.domain.denormalize(z)?)
    }
}

pub fn schwefel(x: &[f64]) -> f64 {
    x[0] * x[0].sin()
}

pub fn schwefel_mod(x: &[f64]) -> f64 {
    let v = x[0];
    if v <= 10.0 {
        v * v.sin()
    } else {
        -v * v.cos()
    }
}

pub fn ackley(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    -20.0 * (-0.2 * (0.5 * (a * a + b * b)).sqrt()).exp()
        - (0.5 * ((2.0 * PI * a).cos() + (2.0 * PI * b).cos())).exp()
        + E
        + 20.0
}

/// Standard coefficient 2.1 on the x1^4 term.
pub fn six_hump_camel(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    (4.0 - 2.1 * a * a + a.powi(4) / 3.0) * a * a + a * b + (-4.0 + 4.0 * b * b) * b * b
}

const H3_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const H3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const H3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

pub fn hartmann3(x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let s: f64 = (0..3)
                .map(|j| H3_A[i][j] * (x[j] - H3_P[i][j]).powi(2))
                .sum();
            H3_ALPHA[i] * (-s).exp()
        })
        .sum::<f64>()
}

pub fn trid(x: &[f64]) -> f64 {
    let a: f64 = x.iter().map(|v| (v - 1.0).powi(2)).sum();
    let b: f64 = x.windows(2).map(|w| w[0] * w[1]).sum();
    a - b
}

pub fn levy(x: &[f64]) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
    let d = w.len();
    let mut s = (PI * w[0]).sin().powi(2);
    for wi in &w[..d - 1] {
        s += (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2));
    }
    let wd = w[d - 1];
    s + (wd - 1.0).powi(2) * (1.0 + (2.0 * PI * wd).sin().powi(2))
}

pub fn forrester_hf(x: &[f64]) -> f64 {
    let v = x[0];
    (6.0 * v - 2.0).powi(2) * (12.0 * v - 4.0).sin()
}

pub fn forrester_lf(x: &[f64]) -> f64 {
    0.5 * forrester_hf(x) + 10.0 * (x[0] - 0.5) - 5.0
}

pub fn currin_hf(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    let num = 2300.0 * a.powi(3) + 1900.0 * a * a + 2092.0 * a + 60.0;
    let den = 100.0 * a.powi(3) + 500.0 * a * a + 4.0 * a + 20.0;
    // b -> 0 sends exp(-1/(2b)) to 0
    let damp = if b > 0.0 {
        1.0 - (-1.0 / (2.0 * b)).exp()
    } else {
        1.0
    };
    damp * num / den
}

pub fn currin_lf(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    let lo = (b - 0.05).max(0.0);
    0.25 * (currin_hf(&[a + 0.05, b + 0.05])
        + currin_hf(&[a + 0.05, lo])
        + currin_hf(&[a - 0.05, b + 0.05])
        + currin_hf(&[a - 0.05, lo]))
}

/// Product form of the trend term; the printed "+" variant is not used.
pub fn park_hf(x: &[f64]) -> f64 {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    x1 / 2.0 * ((1.0 + (x2 + x3 * x3) * x4 / (x1 * x1)).sqrt() - 1.0)
        + (x1 + 3.0 * x4) * (1.0 + x3.sin()).exp()
}

pub fn park_lf(x: &[f64]) -> f64 {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    (1.0 + x1.sin() / 10.0) * park_hf(x) - 2.0 * x1 + x2 * x2 + x3 * x3 + 0.5
}

pub fn wong(x: &[f64]) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[0] * x[1] - 14.0 * x[0] - 16.0 * x[1]
        + (x[2] - 10.0).powi(2)
        + 4.0 * (x[3] - 5.0).powi(2)
        + (x[4] - 3.0).powi(2)
        + 2.0 * (x[5] - 1.0).powi(2)
        + 5.0 * x[6] * x[6]
        + 7.0 * (x[7] - 11.0).powi(2)
        + 2.0 * (x[8] - 10.0).powi(2)
        + (x[9] - 7.0).powi(2)
        + 45.0
}

/// Inputs: rw, r, Tu, Hu, Tl, Hl, L, Kw.
pub fn borehole_hf(x: &[f64]) -> f64 {
    let (rw, r, tu, hu, tl, hl, l, kw) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let lr = (r / rw).ln();
    2.0 * PI * tu * (hu - hl) / (lr * (1.0 + 2.0 * l * tu / (lr * rw * rw * kw) + tu / tl))
}

pub fn borehole_lf(x: &[f64]) -> f64 {
    let (rw, r, tu, hu, tl, hl, l, kw) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let lr = (r / rw).ln();
    5.0 * tu * (hu - hl) / (lr * (1.5 + 2.0 * l * tu / (lr * rw * rw * kw) + tu / tl))
}

/// Full-precision Wong minimizer.
pub const WONG_XMIN: [f64; 10] = [
    2.171996, 2.363683, 8.773926, 5.095984, 0.9906548, 1.430574, 1.321644, 9.828726, 8.280092,
    8.375927,
];

pub const NAMES: [&str; 14] = [
    "schwefel1d",
    "schwefel1d_wide",
    "schwefel_mod",
    "ackley2d",
    "shc2d",
    "hartmann3",
    "trid5",
    "levy7",
    "forrester",
    "forrester_wide",
    "currin",
    "park4",
    "wong10",
    "borehole8",
];

fn make(name: &str, domain: Domain, hf: ScalarFn, lf: Option<ScalarFn>) -> BenchmarkProblem {
    BenchmarkProblem {
        name: name.to_string(),
        domain,
        hf,
        lf,
        known_optima: Vec::new(),
        spread_hint: None,
        open_lower: false,
    }
}

/// Look up a registered problem.
pub fn problem(name: &str) -> Result<BenchmarkProblem> {
    let cube = |n, lo, hi| Domain::cube(n, lo, hi).expect("valid literal domain");
    let p = match name {
        "schwefel1d" => BenchmarkProblem {
            spread_hint: Some(24.0),
            known_optima: vec![(vec![0.0], 0.0)],
            ..make(name, cube(1, 0.0, 15.0), schwefel, None)
        },
        "schwefel1d_wide" => make(name, cube(1, 0.0, 35.0), schwefel, None),
        "schwefel_mod" => make(name, cube(1, 9.0, 13.0), schwefel_mod, None),
        "ackley2d" => BenchmarkProblem {
            known_optima: vec![(vec![0.0, 0.0], 0.0)],
            ..make(name, cube(2, -2.0, 2.0), ackley, None)
        },
        "shc2d" => BenchmarkProblem {
            known_optima: vec![
                (vec![0.0898, -0.7126], -1.0316),
                (vec![-0.0898, 0.7126], -1.0316),
            ],
            ..make(name, cube(2, -2.0, 2.0), six_hump_camel, None)
        },
        "hartmann3" => BenchmarkProblem {
            known_optima: vec![(vec![0.1146, 0.5556, 0.8525], -3.8627)],
            spread_hint: Some(3.7),
            ..make(name, cube(3, 0.0, 1.0), hartmann3, None)
        },
        "trid5" => BenchmarkProblem {
            known_optima: vec![(vec![5.0, 8.0, 9.0, 8.0, 5.0], -30.0)],
            ..make(name, cube(5, -25.0, 25.0), trid, None)
        },
        "levy7" => BenchmarkProblem {
            known_optima: vec![(vec![1.0; 7], 0.0)],
            spread_hint: Some(17.5),
            ..make(name, cube(7, -2.0, 2.0), levy, None)
        },
        "forrester" => make(name, cube(1, 0.0, 1.0), forrester_hf, Some(forrester_lf)),
        "forrester_wide" => make(name, cube(1, -3.0, 3.0), forrester_hf, Some(forrester_lf)),
        "currin" => BenchmarkProblem {
            open_lower: true,
            ..make(name, cube(2, 0.0, 1.0), currin_hf, Some(currin_lf))
        },
        "park4" => BenchmarkProblem {
            open_lower: true,
            ..make(name, cube(4, 0.0, 1.0), park_hf, Some(park_lf))
        },
        "wong10" => BenchmarkProblem {
            known_optima: vec![(WONG_XMIN.to_vec(), 24.3062091)],
            ..make(name, cube(10, -10.0, 10.0), wong, None)
        },
        "borehole8" => make(
            name,
            Domain::new(
                vec![0.05, 100.0, 63070.0, 990.0, 63.1, 700.0, 1120.0, 9855.0],
                vec![
                    0.15, 50000.0, 115600.0, 1100.0, 116.0, 820.0, 1680.0, 12045.0,
                ],
            )
            .expect("valid literal domain"),
            borehole_hf,
            Some(borehole_lf),
        ),
        _ => return Err(Error::UnknownName(name.to_string())),
    };
    Ok(p)
}

/// Metrics between the two fidelity levels over seeded uniform probes.
pub fn fidelity_gap(
    problem: &BenchmarkProblem,
    n_probes: usize,
    seed: u64,
) -> Result<MetricReport> {
    if !problem.is_multifidelity() {
        return Err(Error::NotMultifidelity(problem.name.clone()));
    }
    let pool = monte_carlo_pool(n_probes, problem.dim(), seed)?;
    let mut hf = Vec::with_capacity(n_probes);
    let mut lf = Vec::with_capacity(n_probes);
    for z in &pool.points {
        hf.push(problem.evaluate_unit(z)?);
        lf.push(problem.evaluate_lf_unit(z)?);
    }
    compute_metrics(&hf, &lf)
}
