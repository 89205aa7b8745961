//! Seeded particle swarm with a coordinate-descent polish.
//!
//! Used for the likelihood fit and for every continuous infill criterion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub particles_per_dim: usize,
    pub iters_per_dim: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub polish_sweeps: usize,
    /// Stop the swarm phase after this many iterations without improvement.
    pub stall_iters: Option<usize>,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            particles_per_dim: 30,
            iters_per_dim: 100,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            polish_sweeps: 50,
            stall_iters: None,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimize `f` over the box `[lo, hi]`. `guesses` seed the first particles.
pub fn minimize<F>(
    f: F,
    lo: &[f64],
    hi: &[f64],
    guesses: &[Vec<f64>],
    cfg: &PsoConfig,
) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let d = lo.len();
    let np = (cfg.particles_per_dim * d).max(1);
    let iters = cfg.iters_per_dim * d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let range: Vec<f64> = (0..d).map(|k| hi[k] - lo[k]).collect();
    let vmax: Vec<f64> = range.iter().map(|r| 0.5 * r).collect();

    let mut x: Vec<Vec<f64>> = Vec::with_capacity(np);
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(np);
    for p in 0..np {
        let pos = match guesses.get(p) {
            Some(g) => (0..d).map(|k| g[k].clamp(lo[k], hi[k])).collect(),
            None => (0..d)
                .map(|k| lo[k] + rng.random::<f64>() * range[k])
                .collect(),
        };
        x.push(pos);
        v.push(
            (0..d)
                .map(|k| (rng.random::<f64>() - 0.5) * 0.2 * range[k])
                .collect(),
        );
    }
    let mut evals = 0usize;
    let mut fx: Vec<f64> = x
        .iter()
        .map(|p| {
            evals += 1;
            sanitize(f(p))
        })
        .collect();
    let mut pbest = x.clone();
    let mut pbest_f = fx.clone();
    let mut g = 0usize;
    for p in 1..np {
        if pbest_f[p] < pbest_f[g] {
            g = p;
        }
    }
    let mut gbest = pbest[g].clone();
    let mut gbest_f = pbest_f[g];

    let mut stall = 0usize;
    let mut it_done = 0usize;
    for _ in 0..iters {
        it_done += 1;
        let before = gbest_f;
        for p in 0..np {
            for k in 0..d {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let mut vk = cfg.inertia * v[p][k]
                    + cfg.cognitive * r1 * (pbest[p][k] - x[p][k])
                    + cfg.social * r2 * (gbest[k] - x[p][k]);
                vk = vk.clamp(-vmax[k], vmax[k]);
                let mut xk = x[p][k] + vk;
                if xk < lo[k] {
                    xk = lo[k];
                    vk = 0.0;
                } else if xk > hi[k] {
                    xk = hi[k];
                    vk = 0.0;
                }
                v[p][k] = vk;
                x[p][k] = xk;
            }
            evals += 1;
            fx[p] = sanitize(f(&x[p]));
            if fx[p] < pbest_f[p] {
                pbest_f[p] = fx[p];
                pbest[p].clone_from(&x[p]);
                if fx[p] < gbest_f {
                    gbest_f = fx[p];
                    gbest.clone_from(&x[p]);
                }
            }
        }
        if let Some(limit) = cfg.stall_iters {
            let improved = gbest_f < before - 1e-12 * before.abs().max(1e-300);
            stall = if improved { 0 } else { stall + 1 };
            if stall >= limit {
                break;
            }
        }
    }

    // coordinate-descent polish from the best particle
    let mut best = gbest;
    let mut best_f = gbest_f;
    let mut step: Vec<f64> = range.iter().map(|r| 0.05 * r).collect();
    for _ in 0..cfg.polish_sweeps {
        let mut improved = false;
        for k in 0..d {
            for dir in [1.0, -1.0] {
                let mut trial = best.clone();
                trial[k] = (trial[k] + dir * step[k]).clamp(lo[k], hi[k]);
                if trial[k] == best[k] {
                    continue;
                }
                evals += 1;
                let ft = sanitize(f(&trial));
                if ft < best_f {
                    best_f = ft;
                    best = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in step.iter_mut() {
                *s *= 0.5;
            }
        }
    }
    OptimResult {
        x: best,
        f: best_f,
        evaluations: evals,
        iterations: it_done,
    }
}

/// Maximize `f` over the unit cube.
pub fn maximize_unit<F>(f: F, n: usize, guesses: &[Vec<f64>], cfg: &PsoConfig) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let lo = vec![0.0; n];
    let hi = vec![1.0; n];
    let mut r = minimize(|x| -f(x), &lo, &hi, guesses, cfg);
    r.f = -r.f;
    r
}
