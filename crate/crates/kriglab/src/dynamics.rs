//! Mass-on-belt friction oscillator, sticking time and largest Lyapunov exponents.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adaptive::Target;
use crate::designspace::Domain;
use crate::error::{Error, Result};

/// Smallest step the integrator will take before giving up.
pub const MIN_STEP: f64 = 1e-14;

// ---------------------------------------------------------------------------
// generic ODEs

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]);
    /// Exact Jacobian of the right-hand side, when known.
    fn jacobian(&self, _t: f64, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// ẋ = A x + forcing.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    /// `(component, amplitude, frequency)` of an additive sine forcing.
    pub forcing: Option<(usize, f64, f64)>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>) -> Self {
        LinearSystem { a, forcing: None }
    }

    /// x'' + c x' + k x = f sin(w t) as a first-order system.
    pub fn oscillator(k: f64, c: f64, f: f64, w: f64) -> Self {
        LinearSystem {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -k, -c]),
            forcing: Some((1, f, w)),
        }
    }
}

impl OdeSystem for LinearSystem {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            dx[i] = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
        if let Some((i, f, w)) = self.forcing {
            dx[i] += f * (w * t).sin();
        }
    }
    fn jacobian(&self, _t: f64, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

/// Jerk system of Molaie et al.: x' = y, y' = z, z' = -a x - y - 4 z + y² + x y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Molaie {
    pub a: f64,
}

impl Default for Molaie {
    fn default() -> Self {
        Molaie { a: 3.4 }
    }
}

impl OdeSystem for Molaie {
    fn dim(&self) -> usize {
        3
    }
    fn rhs(&self, _t: f64, s: &[f64], d: &mut [f64]) {
        let (x, y, z) = (s[0], s[1], s[2]);
        d[0] = y;
        d[1] = z;
        d[2] = -self.a * x - y - 4.0 * z + y * y + x * y;
    }
    fn jacobian(&self, _t: f64, s: &[f64]) -> Option<DMatrix<f64>> {
        let (x, y) = (s[0], s[1]);
        Some(DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                1.0,
                0.0,
                0.0,
                0.0,
                1.0,
                -self.a + y,
                -1.0 + 2.0 * y + x,
                -4.0,
            ],
        ))
    }
}

/// State plus the flattened (column-major) fundamental matrix.
struct Variational<'a, S: OdeSystem> {
    sys: &'a S,
}

impl<S: OdeSystem> OdeSystem for Variational<'_, S> {
    fn dim(&self) -> usize {
        let n = self.sys.dim();
        n + n * n
    }
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.sys.dim();
        self.sys.rhs(t, &x[..n], &mut dx[..n]);
        let j = self
            .sys
            .jacobian(t, &x[..n])
            .expect("variational system needs an exact Jacobian");
        let phi = &x[n..];
        for c in 0..n {
            for r in 0..n {
                dx[n + c * n + r] = (0..n).map(|k| j[(r, k)] * phi[c * n + k]).sum();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A21: f64 = 0.2;
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// fifth-order weights; b2 = 0
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// fifth minus fourth order weights, b2 = 0
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// dense output
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Continuous extension of one accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    r: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Component `i` at time `t` within the step.
    pub fn component(&self, i: usize, t: f64) -> f64 {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let r = &self.r;
        r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i])))
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..self.r[0].len()).map(|i| self.component(i, t)).collect()
    }
}

/// Adaptive Dormand-Prince integrator holding its current state.
pub struct Dp45<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    pub t: f64,
    pub x: Vec<f64>,
    /// Next trial step.
    pub h: f64,
    tol: Tolerances,
    k: [Vec<f64>; 7],
    y: Vec<f64>,
    y_new: Vec<f64>,
    dense: DenseStep,
    pub accepted: usize,
    pub rejected: usize,
}

impl<'a, S: OdeSystem + ?Sized> Dp45<'a, S> {
    pub fn new(sys: &'a S, t0: f64, x0: &[f64], tol: Tolerances) -> Result<Self> {
        let n = sys.dim();
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x0.len(),
            });
        }
        if !(tol.rtol > 0.0 && tol.atol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        let z = || vec![0.0; n];
        let mut k = [z(), z(), z(), z(), z(), z(), z()];
        sys.rhs(t0, x0, &mut k[0]);
        let mut me = Dp45 {
            sys,
            t: t0,
            x: x0.to_vec(),
            h: 0.0,
            tol,
            k,
            y: z(),
            y_new: z(),
            dense: DenseStep {
                t0,
                h: 0.0,
                r: [z(), z(), z(), z(), z()],
            },
            accepted: 0,
            rejected: 0,
        };
        me.h = me.initial_step();
        Ok(me)
    }

    // Hairer-Wanner starting step heuristic.
    fn initial_step(&mut self) -> f64 {
        let n = self.x.len();
        let sc = |v: f64, tol: &Tolerances| tol.atol + tol.rtol * v.abs();
        let norm = |v: &[f64], x: &[f64], tol: &Tolerances| {
            (v.iter()
                .zip(x)
                .map(|(a, b)| (a / sc(*b, tol)).powi(2))
                .sum::<f64>()
                / n as f64)
                .sqrt()
        };
        let d0 = norm(&self.x, &self.x, &self.tol);
        let d1 = norm(&self.k[0], &self.x, &self.tol);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        for i in 0..n {
            self.y[i] = self.x[i] + h0 * self.k[0][i];
        }
        self.sys.rhs(self.t + h0, &self.y, &mut self.k[1]);
        let diff: Vec<f64> = (0..n).map(|i| (self.k[1][i] - self.k[0][i]) / h0).collect();
        let d2 = norm(&diff, &self.x, &self.tol);
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }

    fn stages(&mut self, h: f64) {
        let n = self.x.len();
        let (t, sys) = (self.t, self.sys);
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let x = &self.x;
        let y = &mut self.y;
        for i in 0..n {
            y[i] = x[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C[1] * h, y, k2);
        for i in 0..n {
            y[i] = x[i] + h * (A3[0] * k1[i] + A3[1] * k2[i]);
        }
        sys.rhs(t + C[2] * h, y, k3);
        for i in 0..n {
            y[i] = x[i] + h * (A4[0] * k1[i] + A4[1] * k2[i] + A4[2] * k3[i]);
        }
        sys.rhs(t + C[3] * h, y, k4);
        for i in 0..n {
            y[i] = x[i] + h * (A5[0] * k1[i] + A5[1] * k2[i] + A5[2] * k3[i] + A5[3] * k4[i]);
        }
        sys.rhs(t + C[4] * h, y, k5);
        for i in 0..n {
            y[i] = x[i]
                + h * (A6[0] * k1[i]
                    + A6[1] * k2[i]
                    + A6[2] * k3[i]
                    + A6[3] * k4[i]
                    + A6[4] * k5[i]);
        }
        sys.rhs(t + h, y, k6);
        let yn = &mut self.y_new;
        for i in 0..n {
            yn[i] = x[i]
                + h * (B[0] * k1[i] + B[2] * k3[i] + B[3] * k4[i] + B[4] * k5[i] + B[5] * k6[i]);
        }
        sys.rhs(t + h, yn, k7);
    }

    fn error_norm(&self, h: f64) -> f64 {
        let n = self.x.len();
        let k = &self.k;
        let s: f64 = (0..n)
            .map(|i| {
                let e = h
                    * (E[0] * k[0][i]
                        + E[2] * k[2][i]
                        + E[3] * k[3][i]
                        + E[4] * k[4][i]
                        + E[5] * k[5][i]
                        + E[6] * k[6][i]);
                let sc = self.tol.atol + self.tol.rtol * self.x[i].abs().max(self.y_new[i].abs());
                (e / sc).powi(2)
            })
            .sum();
        (s / n as f64).sqrt()
    }

    fn accept(&mut self, h: f64) -> Result<()> {
        let n = self.x.len();
        let k = &self.k;
        let r = &mut self.dense.r;
        for i in 0..n {
            let dy = self.y_new[i] - self.x[i];
            let bspl = h * k[0][i] - dy;
            r[0][i] = self.x[i];
            r[1][i] = dy;
            r[2][i] = bspl;
            r[3][i] = dy - h * k[6][i] - bspl;
            r[4][i] = h
                * (D[0] * k[0][i]
                    + D[2] * k[2][i]
                    + D[3] * k[3][i]
                    + D[4] * k[4][i]
                    + D[5] * k[5][i]
                    + D[6] * k[6][i]);
        }
        self.dense.t0 = self.t;
        self.dense.h = h;
        self.t += h;
        std::mem::swap(&mut self.x, &mut self.y_new);
        let (first, rest) = self.k.split_at_mut(1);
        first[0].copy_from_slice(&rest[5]);
        self.accepted += 1;
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTrajectory(self.t));
        }
        Ok(())
    }

    /// Integrate to `t_end`, calling `on_step` after each accepted step.
    pub fn advance<F: FnMut(&DenseStep)>(&mut self, t_end: f64, mut on_step: F) -> Result<()> {
        if t_end < self.t {
            return Err(Error::InvalidArgument(
                "t_end lies before the current time".into(),
            ));
        }
        let mut just_rejected = false;
        loop {
            let rem = t_end - self.t;
            if rem <= 1e-13 * t_end.abs().max(1.0) {
                return Ok(());
            }
            if self.h < MIN_STEP {
                return Err(Error::StepSizeUnderflow(MIN_STEP, self.t));
            }
            let last = self.h >= rem;
            let h = if last { rem } else { self.h };
            self.stages(h);
            let err = self.error_norm(h);
            if !err.is_finite() {
                self.h = h * 0.2;
                self.rejected += 1;
                just_rejected = true;
                continue;
            }
            if err <= 1.0 {
                self.accept(h)?;
                on_step(&self.dense);
                let mut fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if just_rejected {
                    fac = fac.min(1.0);
                }
                just_rejected = false;
                // a truncated final step says nothing about the natural step
                if !last || h * fac > self.h {
                    self.h = h * fac;
                }
            } else {
                self.h = h * (0.9 * err.powf(-0.2)).max(0.2);
                self.rejected += 1;
                just_rejected = true;
            }
        }
    }
}

/// Final state at `t_end`.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    t_end: f64,
    tol: Tolerances,
) -> Result<Vec<f64>> {
    let mut ig = Dp45::new(sys, t0, x0, tol)?;
    ig.advance(t_end, |_| {})?;
    Ok(ig.x)
}

/// Dense-output samples at ascending `times` (all ≥ t0).
pub fn sample<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    times: &[f64],
    tol: Tolerances,
) -> Result<Vec<Vec<f64>>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < t0) {
        return Err(Error::InvalidArgument(
            "sample times must ascend from t0".into(),
        ));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    while next < times.len() && times[next] == t0 {
        out.push(x0.to_vec());
        next += 1;
    }
    let Some(&t_end) = times.last() else {
        return Ok(out);
    };
    let mut ig = Dp45::new(sys, t0, x0, tol)?;
    ig.advance(t_end, |st| {
        while next < times.len() && times[next] <= st.t1() {
            out.push(st.eval(times[next]));
            next += 1;
        }
    })?;
    while out.len() < times.len() {
        out.push(ig.x.clone());
    }
    Ok(out)
}

/// Same scheme with `steps` equal steps and no error control.
pub fn integrate_fixed<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    t_end: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let mut ig = Dp45::new(sys, t0, x0, Tolerances::default())?;
    let h = (t_end - t0) / steps as f64;
    for _ in 0..steps {
        ig.stages(h);
        ig.accept(h)?;
    }
    Ok(ig.x)
}

// ---------------------------------------------------------------------------
// mass on belt

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorParams {
    pub m: f64,
    pub v0: f64,
    pub d: f64,
    pub k1: f64,
    pub k2: f64,
    pub u0: f64,
    pub omega: f64,
    /// Normal force. Zero switches friction off.
    pub n0: f64,
    pub mu_s: f64,
    pub mu_k: f64,
    pub vs: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Defaults to g(0)/σ0.
    pub z_max: Option<f64>,
    /// Defaults to 0.7·g(0)/σ0.
    pub z_ba: Option<f64>,
}

impl Default for OscillatorParams {
    /// The time-response example set (Ω = 0.5).
    fn default() -> Self {
        OscillatorParams {
            m: 1.0,
            v0: 0.1,
            d: 0.0,
            k1: 1.0,
            k2: 0.0,
            u0: 0.1,
            omega: 0.5,
            n0: 1.0,
            mu_s: 0.3,
            mu_k: 0.15,
            vs: 0.1,
            sigma0: 100.0,
            sigma1: 10.0,
            sigma2: 0.1,
            z_max: None,
            z_ba: None,
        }
    }
}

pub const PARAM_NAMES: [&str; 14] = [
    "m", "v0", "d", "k1", "k2", "u0", "omega", "n0", "mu_s", "mu_k", "vs", "sigma0", "sigma1",
    "sigma2",
];

impl OscillatorParams {
    /// Ω-sweep set used for the 1D chaos study (Ω itself is the free axis).
    pub fn omega_sweep() -> Self {
        OscillatorParams::default()
    }

    /// (K1, K2) plane at Ω = 0.6.
    pub fn stiffness_plane() -> Self {
        OscillatorParams {
            omega: 0.6,
            ..OscillatorParams::default()
        }
    }

    pub fn g(&self, v_r: f64) -> f64 {
        self.n0 * (self.mu_k + (self.mu_s - self.mu_k) * (-(v_r / self.vs).powi(2)).exp())
    }

    pub fn z_max(&self) -> f64 {
        self.z_max.unwrap_or(self.g(0.0) / self.sigma0)
    }

    pub fn z_ba(&self) -> f64 {
        self.z_ba.unwrap_or(0.7 * self.g(0.0) / self.sigma0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let all = [
            self.m,
            self.v0,
            self.d,
            self.k1,
            self.k2,
            self.u0,
            self.omega,
            self.n0,
            self.mu_s,
            self.mu_k,
            self.vs,
            self.sigma0,
            self.sigma1,
            self.sigma2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("oscillator parameters must be finite");
        }
        if self.m <= 0.0 {
            return bad("M must be positive");
        }
        if !(self.mu_s >= self.mu_k && self.mu_k > 0.0) {
            return bad("need mu_s >= mu_k > 0");
        }
        if self.vs <= 0.0 || self.sigma0 <= 0.0 {
            return bad("Vs and sigma0 must be positive");
        }
        if self.n0 < 0.0 {
            return bad("N0 must be non-negative");
        }
        if self.n0 > 0.0 && !(self.z_max() > self.z_ba() && self.z_ba() >= 0.0) {
            return bad("need z_max > z_ba >= 0");
        }
        Ok(())
    }

    pub fn set(&mut self, name: &str, v: f64) -> Result<()> {
        let slot = match name {
            "m" => &mut self.m,
            "v0" => &mut self.v0,
            "d" => &mut self.d,
            "k1" => &mut self.k1,
            "k2" => &mut self.k2,
            "u0" => &mut self.u0,
            "omega" => &mut self.omega,
            "n0" => &mut self.n0,
            "mu_s" => &mut self.mu_s,
            "mu_k" => &mut self.mu_k,
            "vs" => &mut self.vs,
            "sigma0" => &mut self.sigma0,
            "sigma1" => &mut self.sigma1,
            "sigma2" => &mut self.sigma2,
            _ => return Err(Error::UnknownName(name.to_string())),
        };
        *slot = v;
        Ok(())
    }

    pub fn system(&self) -> Result<MassOnBelt> {
        self.validate()?;
        Ok(MassOnBelt {
            p: *self,
            z_max: self.z_max(),
            z_ba: self.z_ba(),
        })
    }

    /// Kinetic plus spring energy.
    pub fn energy(&self, x: f64, xdot: f64) -> f64 {
        0.5 * self.m * xdot * xdot + 0.25 * self.k1 * x.powi(4) + 0.5 * self.k2 * x * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OscillatorState {
    pub x: f64,
    pub xdot: f64,
    pub z: f64,
    pub t: f64,
}

impl OscillatorState {
    pub fn vector(&self) -> [f64; 3] {
        [self.x, self.xdot, self.z]
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Validated oscillator with resolved bristle limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassOnBelt {
    pub p: OscillatorParams,
    pub z_max: f64,
    pub z_ba: f64,
}

impl MassOnBelt {
    /// α as a function of |z| alone.
    pub fn alpha_z(&self, z: f64) -> f64 {
        let a = z.abs();
        if a <= self.z_ba {
            0.0
        } else if a >= self.z_max {
            1.0
        } else {
            let w = self.z_max - self.z_ba;
            let mid = 0.5 * (self.z_max + self.z_ba);
            0.5 * ((PI * (a - mid) / w).sin() + 1.0)
        }
    }

    /// α with the sign gate: plastic drift only while z and V_R agree in sign.
    pub fn alpha(&self, z: f64, v_r: f64) -> f64 {
        if sgn(z) == sgn(v_r) {
            self.alpha_z(z)
        } else {
            0.0
        }
    }

    /// (ż, f_R) for bristle deflection `z` and relative velocity `v_r`.
    pub fn friction(&self, z: f64, v_r: f64) -> (f64, f64) {
        let p = &self.p;
        if p.n0 == 0.0 {
            return (0.0, 0.0);
        }
        let zdot = (1.0 - self.alpha(z, v_r) * p.sigma0 / p.g(v_r) * z * sgn(v_r)) * v_r;
        let fr = p.sigma0 * z + p.sigma1 * zdot + p.sigma2 * v_r;
        (zdot, fr)
    }
}

/// (ż, f_R) at a state.
pub fn friction_rhs(state: &OscillatorState, params: &OscillatorParams) -> Result<(f64, f64)> {
    let sys = params.system()?;
    Ok(sys.friction(state.z, params.v0 - state.xdot))
}

impl OdeSystem for MassOnBelt {
    fn dim(&self) -> usize {
        3
    }
    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        let p = &self.p;
        let (x, xdot, z) = (s[0], s[1], s[2]);
        let v_r = p.v0 - xdot;
        let (zdot, fr) = self.friction(z, v_r);
        d[0] = xdot;
        d[1] = (-p.d * xdot - p.k1 * x * x * x - p.k2 * x + p.n0 * fr + p.u0 * (p.omega * t).sin())
            / p.m;
        d[2] = zdot;
    }
}

/// Time in `window` during which |V0 − Ẋ| < `v_thresh`.
pub fn sticking_time(
    params: &OscillatorParams,
    initial: &OscillatorState,
    window: (f64, f64),
    v_thresh: f64,
    tol: Tolerances,
) -> Result<f64> {
    let (ta, tb) = window;
    if !(tb > ta) || ta < initial.t {
        return Err(Error::InvalidArgument(
            "sticking window must follow the start".into(),
        ));
    }
    if !(v_thresh > 0.0) {
        return Err(Error::InvalidArgument(
            "velocity threshold must be positive".into(),
        ));
    }
    let sys = params.system()?;
    let v0 = params.v0;
    let gap = |st: &DenseStep, t: f64| (v0 - st.component(1, t)).abs() - v_thresh;
    let mut total = 0.0;
    let mut ig = Dp45::new(&sys, initial.t, &initial.vector(), tol)?;
    ig.advance(tb, |st| {
        let lo = st.t0.max(ta);
        let hi = st.t1().min(tb);
        if hi <= lo {
            return;
        }
        const SUB: usize = 8;
        let w = (hi - lo) / SUB as f64;
        for s in 0..SUB {
            let a = lo + s as f64 * w;
            let b = if s + 1 == SUB { hi } else { a + w };
            let (ga, gb) = (gap(st, a), gap(st, b));
            total += match (ga < 0.0, gb < 0.0) {
                (true, true) => b - a,
                (false, false) => 0.0,
                (inside_a, _) => {
                    let (mut l, mut r) = (a, b);
                    for _ in 0..50 {
                        let m = 0.5 * (l + r);
                        if (gap(st, m) < 0.0) == inside_a {
                            l = m;
                        } else {
                            r = m;
                        }
                    }
                    let c = 0.5 * (l + r);
                    if inside_a {
                        c - a
                    } else {
                        b - c
                    }
                }
            };
        }
    })?;
    Ok(total)
}

// ---------------------------------------------------------------------------
// Lyapunov exponents

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LleConfig {
    pub delta: f64,
    pub dt: f64,
    pub t_transient: f64,
    pub t_total: f64,
    /// Jacobian steps between Gram-Schmidt passes.
    pub renorm_interval: usize,
    /// Propagate the exact variational equations instead of finite differences.
    pub exact_jacobian: bool,
    pub tol: Tolerances,
}

impl Default for LleConfig {
    fn default() -> Self {
        LleConfig {
            delta: 1e-4,
            dt: 0.05,
            t_transient: 150.0,
            t_total: 400.0,
            renorm_interval: 1,
            exact_jacobian: false,
            tol: Tolerances::default(),
        }
    }
}

impl LleConfig {
    /// Settings for the jerk-system check.
    pub fn molaie() -> Self {
        LleConfig {
            dt: 0.1,
            t_transient: 200.0,
            t_total: 1200.0,
            ..LleConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument(
                "delta and dt must be positive".into(),
            ));
        }
        if !(self.t_total > self.t_transient && self.t_transient >= 0.0) {
            return Err(Error::InvalidArgument(
                "need t_total > t_transient >= 0".into(),
            ));
        }
        if self.t_total - self.t_transient < self.dt {
            return Err(Error::InvalidArgument(
                "averaging window shorter than dt".into(),
            ));
        }
        if self.renorm_interval == 0 {
            return Err(Error::InvalidArgument(
                "renorm_interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Central-difference Jacobian of the flow map over `dt` starting at (t, x).
pub fn estimate_jacobian<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    x: &[f64],
    delta: f64,
    dt: f64,
    tol: Tolerances,
) -> Result<DMatrix<f64>> {
    if !(delta != 0.0 && delta.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument("need delta != 0 and dt > 0".into()));
    }
    let n = sys.dim();
    let mut j = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for c in 0..n {
        xp[c] = x[c] + delta;
        let gp = integrate(sys, t, &xp, t + dt, tol)?;
        xp[c] = x[c] - delta;
        let gm = integrate(sys, t, &xp, t + dt, tol)?;
        xp[c] = x[c];
        for r in 0..n {
            j[(r, c)] = (gp[r] - gm[r]) / (2.0 * delta);
        }
    }
    Ok(j)
}

/// Flow-map Jacobian over `dt` from the variational equations, with the end state.
pub fn exact_flow_jacobian<S: OdeSystem>(
    sys: &S,
    t: f64,
    x: &[f64],
    dt: f64,
    tol: Tolerances,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = sys.dim();
    if sys.jacobian(t, x).is_none() {
        return Err(Error::InvalidArgument(
            "system has no exact Jacobian".into(),
        ));
    }
    let mut s0 = x.to_vec();
    s0.extend(DMatrix::<f64>::identity(n, n).iter());
    let end = integrate(&Variational { sys }, t, &s0, t + dt, tol)?;
    let j = DMatrix::from_column_slice(n, n, &end[n..]);
    Ok((j, end[..n].to_vec()))
}

/// Modified Gram-Schmidt in place; returns the column norms before normalization.
pub fn gram_schmidt(q: &mut DMatrix<f64>) -> Vec<f64> {
    let n = q.ncols();
    let mut norms = Vec::with_capacity(n);
    for c in 0..n {
        for p in 0..c {
            let dot = q.column(c).dot(&q.column(p));
            let prev = q.column(p).clone_owned();
            q.column_mut(c).axpy(-dot, &prev, 1.0);
        }
        let nrm = q.column(c).norm();
        norms.push(nrm);
        if nrm > 0.0 {
            q.column_mut(c).scale_mut(1.0 / nrm);
        }
    }
    norms
}

/// Average log stretch rates of an orthonormal tangent frame, largest first.
pub fn lyapunov_spectrum<S: OdeSystem>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    cfg: &LleConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = sys.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    let mut t = t0;
    let mut x = x0.to_vec();
    if cfg.t_transient > 0.0 {
        x = integrate(sys, t, &x, t0 + cfg.t_transient, cfg.tol)?;
        t = t0 + cfg.t_transient;
    }
    let steps = ((cfg.t_total - cfg.t_transient) / cfg.dt).round() as usize;
    let mut q = DMatrix::<f64>::identity(n, n);
    let mut sums = vec![0.0; n];
    for k in 0..steps {
        let (j, next) = if cfg.exact_jacobian {
            exact_flow_jacobian(sys, t, &x, cfg.dt, cfg.tol)?
        } else {
            let j = estimate_jacobian(sys, t, &x, cfg.delta, cfg.dt, cfg.tol)?;
            (j, integrate(sys, t, &x, t + cfg.dt, cfg.tol)?)
        };
        q = j * q;
        x = next;
        t += cfg.dt;
        if (k + 1) % cfg.renorm_interval == 0 || k + 1 == steps {
            let norms = gram_schmidt(&mut q);
            for (s, nrm) in sums.iter_mut().zip(norms) {
                // a collapsed direction contributes a large negative rate
                *s += nrm.max(1e-300).ln();
            }
        }
    }
    let span = steps as f64 * cfg.dt;
    let mut out: Vec<f64> = sums.into_iter().map(|s| s / span).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

pub fn largest_lyapunov<S: OdeSystem>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    cfg: &LleConfig,
) -> Result<f64> {
    Ok(lyapunov_spectrum(sys, t0, x0, cfg)?[0])
}

/// LLE of the oscillator started from `initial`.
pub fn oscillator_lle(
    params: &OscillatorParams,
    initial: &OscillatorState,
    cfg: &LleConfig,
) -> Result<f64> {
    let sys = params.system()?;
    largest_lyapunov(&sys, initial.t, &initial.vector(), cfg)
}

/// 1 for chaotic motion (LLE ≥ 0), 0 for regular.
pub fn chaos_class(lle: f64) -> u8 {
    u8::from(lle >= 0.0)
}

// ---------------------------------------------------------------------------
// targets

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Indicator {
    Lle(LleConfig),
    StickingTime {
        window: (f64, f64),
        v_thresh: f64,
        tol: Tolerances,
    },
}

impl Indicator {
    pub fn sticking() -> Self {
        Indicator::StickingTime {
            window: (150.0, 250.0),
            v_thresh: 1e-4,
            tol: Tolerances::default(),
        }
    }
}

/// Oscillator indicator as a function of selected parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsProblem {
    pub name: String,
    pub base: OscillatorParams,
    /// Parameter names varied along each axis.
    pub axes: Vec<String>,
    pub domain: Domain,
    pub indicator: Indicator,
    pub initial: OscillatorState,
}

pub const DYNAMICS_PROBLEMS: [&str; 3] = ["mob_lle_1d", "mob_lle_p1", "mob_sticking"];

impl DynamicsProblem {
    pub fn new(
        name: &str,
        base: OscillatorParams,
        axes: Vec<(String, f64, f64)>,
        indicator: Indicator,
    ) -> Result<Self> {
        let mut probe = base;
        for (a, lo, _) in &axes {
            probe.set(a, *lo)?;
        }
        let (names, (lo, hi)): (Vec<String>, (Vec<f64>, Vec<f64>)) =
            axes.into_iter().map(|(a, l, h)| (a, (l, h))).unzip();
        Ok(DynamicsProblem {
            name: name.to_string(),
            base,
            axes: names,
            domain: Domain::new(lo, hi)?,
            indicator,
            initial: OscillatorState::default(),
        })
    }

    /// Built-in problems by name.
    pub fn by_name(name: &str) -> Result<Self> {
        let ax = |a: &str, l: f64, h: f64| (a.to_string(), l, h);
        match name {
            "mob_lle_1d" => Self::new(
                name,
                OscillatorParams::omega_sweep(),
                vec![ax("omega", 0.2, 1.0)],
                Indicator::Lle(LleConfig::default()),
            ),
            "mob_lle_p1" => Self::new(
                name,
                OscillatorParams::stiffness_plane(),
                vec![ax("k1", 0.5, 1.0), ax("k2", 0.0, 0.6)],
                Indicator::Lle(LleConfig::default()),
            ),
            "mob_sticking" => Self::new(
                name,
                OscillatorParams::stiffness_plane(),
                vec![ax("k1", 0.5, 1.0), ax("k2", 0.0, 0.6)],
                Indicator::sticking(),
            ),
            _ => Err(Error::UnknownName(name.to_string())),
        }
    }

    /// Parameters at a raw point.
    pub fn params_at(&self, x: &[f64]) -> Result<OscillatorParams> {
        if x.len() != self.axes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.axes.len(),
                got: x.len(),
            });
        }
        let mut p = self.base;
        for (a, &v) in self.axes.iter().zip(x) {
            p.set(a, v)?;
        }
        Ok(p)
    }

    /// Indicator value at a raw point.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let p = self.params_at(x)?;
        match &self.indicator {
            Indicator::Lle(cfg) => oscillator_lle(&p, &self.initial, cfg),
            Indicator::StickingTime {
                window,
                v_thresh,
                tol,
            } => sticking_time(&p, &self.initial, *window, *v_thresh, *tol),
        }
    }
}

impl Target for DynamicsProblem {
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn eval(&self, z: &[f64]) -> Result<f64> {
        let x = self.domain.denormalize(z)?;
        self.evaluate(&x)
    }
    fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapRow {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Indicator on a regular grid with `per_axis` points per axis (raw coordinates).
pub fn indicator_map(problem: &DynamicsProblem, per_axis: usize) -> Result<Vec<MapRow>> {
    let n = problem.axes.len();
    if per_axis < 2 || n == 0 {
        return Err(Error::InvalidArgument(
            "map needs at least 2 points per axis".into(),
        ));
    }
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut k| {
            let z: Vec<f64> = (0..n)
                .map(|_| {
                    let i = k % per_axis;
                    k /= per_axis;
                    i as f64 / (per_axis - 1) as f64
                })
                .collect();
            let point = problem.domain.denormalize(&z)?;
            let value = problem.evaluate(&point)?;
            Ok(MapRow { point, value })
        })
        .collect()
}

/// `p1,...,pn,lle,label` (or `sticking_time` without a label) CSV.
pub fn write_map_csv<W: Write>(problem: &DynamicsProblem, rows: &[MapRow], w: W) -> Result<()> {
    let is_lle = matches!(problem.indicator, Indicator::Lle(_));
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=problem.axes.len()).map(|i| format!("p{i}")).collect();
    if is_lle {
        header.extend(["lle".to_string(), "label".to_string()]);
    } else {
        header.push("sticking_time".to_string());
    }
    let err = |e: csv::Error| Error::Parse(e.to_string());
    wr.write_record(&header).map_err(err)?;
    for r in rows {
        let mut rec: Vec<String> = r.point.iter().map(|v| v.to_string()).collect();
        rec.push(r.value.to_string());
        if is_lle {
            rec.push(chaos_class(r.value).to_string());
        }
        wr.write_record(&rec).map_err(err)?;
    }
    wr.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
