//! The finite-dimensional Galerkin SDE
//!
//! ```text
//! dX_k = λ_k^{σ₁-α₂} Y_k dt
//! dY_k = [∂_kλ22_k(Y) - λ22_k(Y) λ_k^{-α₂} Y_k - λ_k^{σ₁-α₁} X_k - λ_k^{σ₁} ∂_kΦ(X)] dt + √(2 λ22_k(Y)) dW_k
//! ```
//!
//! with path simulation and Monte-Carlo estimates of the transition semigroup
//! and resolvent.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::kolmogorov::{Cylinder, KolmogorovError, OperatorContext};
use crate::mc::{derive_stream, stream_rng, MeanSe};

/// State norm beyond which a path is declared to have blown up.
pub const BLOW_UP: f64 = 1e8;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("blow-up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },
    #[error("state has length {got}, expected {expected}")]
    StateDim { got: usize, expected: usize },
    #[error("all {0} paths blew up")]
    AllPathsFailed(usize),
    #[error(transparent)]
    Kolmogorov(#[from] KolmogorovError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    SemiImplicitLinear,
}

/// Time step and scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub dt: f64,
    pub scheme: Scheme,
}

impl Integrator {
    pub fn new(dt: f64, scheme: Scheme) -> Result<Self, SdeError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SdeError::Config(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { dt, scheme })
    }

    /// Number of steps closest to model time `t`.
    pub fn steps_for(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

impl Default for Integrator {
    fn default() -> Self {
        Self { dt: 1e-3, scheme: Scheme::SemiImplicitLinear }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub seed: u64,
    #[serde(default = "one")]
    pub paths: usize,
    /// Save every this many steps (the final state is always saved).
    #[serde(default = "one")]
    pub save_every: usize,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        Integrator::new(self.dt, self.scheme)?;
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(SdeError::Config(format!("horizon must be finite and nonnegative, got {}", self.horizon)));
        }
        if self.horizon > 0.0 && self.horizon < self.dt {
            return Err(SdeError::Config("horizon shorter than one step".into()));
        }
        if self.paths == 0 || self.save_every == 0 {
            return Err(SdeError::Config("paths and save_every must be positive".into()));
        }
        Ok(())
    }

    pub fn integrator(&self) -> Integrator {
        Integrator { dt: self.dt, scheme: self.scheme }
    }
}

/// Drift and diffusion of the Galerkin SDE at truncation `n`.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    pub ctx: OperatorContext,
    /// `λ_k^{σ₁-α₂}`
    pub a: Vec<f64>,
    /// `λ_k^{σ₁-α₁}`
    pub b: Vec<f64>,
}

/// Scratch buffers reused across steps.
#[derive(Clone, Debug)]
pub struct Workspace {
    lam: Vec<f64>,
    div: Vec<f64>,
    grad: Vec<f64>,
    noise: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self { lam: vec![0.0; n], div: vec![0.0; n], grad: vec![0.0; n], noise: vec![0.0; n] }
    }
}

impl GalerkinSystem {
    pub fn assemble(ctx: &OperatorContext, n: usize) -> Result<Self, SdeError> {
        if ctx.n() != n {
            return Err(KolmogorovError::Truncation { needed: n, n: ctx.n() }.into());
        }
        let c = &ctx.coeffs;
        Ok(Self {
            a: (0..n).map(|k| c.k12[k] / c.lam2[k]).collect(),
            b: (0..n).map(|k| c.k12[k] / c.lam1[k]).collect(),
            ctx: ctx.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }

    /// Writes the drift `(b_x, b_y)` at `(x, y)`.
    pub fn drift(&self, x: &[f64], y: &[f64], bx: &mut [f64], by: &mut [f64]) {
        let n = self.n();
        let mut ws = Workspace::new(n);
        self.fill(x, y, &mut ws);
        let c = &self.ctx.coeffs;
        for k in 0..n {
            bx[k] = self.a[k] * y[k];
            by[k] = ws.div[k] - ws.lam[k] / c.lam2[k] * y[k] - self.b[k] * x[k] - c.k12[k] * ws.grad[k];
        }
    }

    /// Diagonal of the `y`-block diffusion, `√(2 λ22_k(y))`.
    pub fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        self.ctx.coeffs.lambda22_all(y, out);
        out.iter_mut().for_each(|v| *v = (2.0 * *v).sqrt());
    }

    /// Linear drift matrix of mode `k` (1-based) with the diffusion frozen at `y = 0`.
    pub fn linear_drift_matrix(&self, k: usize) -> [[f64; 2]; 2] {
        let c = &self.ctx.coeffs;
        let mut lam = vec![0.0; self.n()];
        c.lambda22_all(&vec![0.0; self.n()], &mut lam);
        [[0.0, self.a[k - 1]], [-self.b[k - 1], -lam[k - 1] / c.lam2[k - 1]]]
    }

    /// Largest eigenvalue modulus of the per-mode linear drift over the
    /// admissible range of `λ22`.
    pub fn max_linear_rate(&self) -> f64 {
        let c = &self.ctx.coeffs;
        (0..self.n())
            .map(|k| {
                let fric = (c.base22[k] + c.amp22[k] * self.ctx.coeffs.spec.bumps.norm(k + 1).max(1.0)) / c.lam2[k];
                let prod = self.a[k] * self.b[k];
                let disc = fric * fric - 4.0 * prod;
                if disc >= 0.0 {
                    0.5 * (fric + disc.sqrt())
                } else {
                    prod.sqrt()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Warning text when `dt` times the fastest linear rate exceeds `0.5`.
    pub fn stability_warning(&self, dt: f64) -> Option<String> {
        let r = dt * self.max_linear_rate();
        (r >= 0.5).then(|| format!("dt * max linear rate = {r:.3} >= 0.5; the time step may be unstable"))
    }

    fn fill(&self, x: &[f64], y: &[f64], ws: &mut Workspace) {
        self.ctx.coeffs.lambda22_and_divergence(y, &mut ws.lam, &mut ws.div);
        self.ctx.potential.grad(x, &mut ws.grad);
    }

    /// One step in place using the standard normals in `noise`. Returns
    /// `false` when the new state is non-finite or beyond [`BLOW_UP`].
    pub fn step_in_place(&self, x: &mut [f64], y: &mut [f64], dt: f64, scheme: Scheme, noise: &[f64], ws: &mut Workspace) -> bool {
        self.fill(x, y, ws);
        let c = &self.ctx.coeffs;
        let sdt = dt.sqrt();
        let mut norm2 = 0.0;
        for k in 0..self.n() {
            let fric = ws.lam[k] / c.lam2[k];
            let explicit = ws.div[k] - c.k12[k] * ws.grad[k];
            let kick = (2.0 * ws.lam[k]).sqrt() * sdt * noise[k];
            let (xn, yn) = match scheme {
                Scheme::EulerMaruyama => (
                    x[k] + dt * self.a[k] * y[k],
                    y[k] + dt * (explicit - fric * y[k] - self.b[k] * x[k]) + kick,
                ),
                Scheme::SemiImplicitLinear => {
                    let yn = (y[k] - dt * self.b[k] * x[k] + dt * explicit + kick)
                        / (1.0 + dt * fric + dt * dt * self.a[k] * self.b[k]);
                    (x[k] + dt * self.a[k] * yn, yn)
                }
            };
            x[k] = xn;
            y[k] = yn;
            norm2 += xn * xn + yn * yn;
        }
        norm2.is_finite() && norm2 <= BLOW_UP * BLOW_UP
    }

    /// One step from `state = [x, y]` returning the new state.
    pub fn step(&self, state: &[f64], dt: f64, scheme: Scheme, noise: &[f64]) -> Result<Vec<f64>, SdeError> {
        let n = self.n();
        check_len(state.len(), 2 * n)?;
        check_len(noise.len(), n)?;
        let mut s = state.to_vec();
        let (x, y) = s.split_at_mut(n);
        let mut ws = Workspace::new(n);
        if !self.step_in_place(x, y, dt, scheme, noise, &mut ws) {
            return Err(SdeError::BlowUp { step: 1, time: dt });
        }
        Ok(s)
    }

    /// Advances `(x, y)` by `steps` steps, calling `observe(step, x, y)` after each.
    pub fn run<R: Rng, F: FnMut(usize, &[f64], &[f64])>(
        &self,
        x: &mut [f64],
        y: &mut [f64],
        integ: Integrator,
        steps: usize,
        rng: &mut R,
        mut observe: F,
    ) -> Result<(), SdeError> {
        let mut ws = Workspace::new(self.n());
        let mut noise = std::mem::take(&mut ws.noise);
        for s in 1..=steps {
            noise.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
            if !self.step_in_place(x, y, integ.dt, integ.scheme, &noise, &mut ws) {
                return Err(SdeError::BlowUp { step: s, time: s as f64 * integ.dt });
            }
            observe(s, x, y);
        }
        Ok(())
    }

    /// Values of `f` at the given step indices (ascending) along one path.
    pub fn values_at_steps<R: Rng>(
        &self,
        f: &Cylinder,
        w0: &[f64],
        steps: &[usize],
        integ: Integrator,
        rng: &mut R,
    ) -> Result<Vec<f64>, SdeError> {
        let n = self.n();
        let (mut x, mut y) = (w0[..n].to_vec(), w0[n..].to_vec());
        let mut out = Vec::with_capacity(steps.len());
        let mut next = 0;
        while next < steps.len() && steps[next] == 0 {
            out.push(f.value(&x, &y));
            next += 1;
        }
        let last = steps.last().copied().unwrap_or(0);
        self.run(&mut x, &mut y, integ, last, rng, |s, x, y| {
            while next < steps.len() && steps[next] == s {
                out.push(f.value(x, y));
                next += 1;
            }
        })?;
        Ok(out)
    }
}

fn check_len(got: usize, expected: usize) -> Result<(), SdeError> {
    if got != expected {
        return Err(SdeError::StateDim { got, expected });
    }
    Ok(())
}

/// States along a path at the saved times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub times: Vec<f64>,
    /// `[x, y]` per saved time.
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SdeError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|k| format!("x_{k}")));
        header.extend((1..=self.n).map(|k| format!("y_{k}")));
        wr.write_record(&header)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut rec = vec![t.to_string()];
            rec.extend(s.iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Simulates path `index` of the ensemble described by `cfg`.
pub fn simulate_path(system: &GalerkinSystem, w0: &[f64], cfg: &SimConfig, index: u64) -> Result<Trajectory, SdeError> {
    cfg.validate()?;
    let n = system.n();
    check_len(w0.len(), 2 * n)?;
    let integ = cfg.integrator();
    let steps = integ.steps_for(cfg.horizon);
    let mut traj = Trajectory { n, times: vec![0.0], states: vec![w0.to_vec()] };
    let (mut x, mut y) = (w0[..n].to_vec(), w0[n..].to_vec());
    let mut rng = stream_rng(cfg.seed, index);
    system.run(&mut x, &mut y, integ, steps, &mut rng, |s, x, y| {
        if s % cfg.save_every == 0 || s == steps {
            traj.times.push(s as f64 * integ.dt);
            let mut st = x.to_vec();
            st.extend_from_slice(y);
            traj.states.push(st);
        }
    })?;
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupEstimate {
    pub mean: f64,
    pub se: f64,
    pub paths_used: usize,
    pub excluded: usize,
}

/// Monte-Carlo estimate of `T_t f(w0)` from `paths` independent paths.
pub fn estimate_semigroup(
    system: &GalerkinSystem,
    f: &Cylinder,
    t: f64,
    w0: &[f64],
    paths: usize,
    seed: u64,
    integ: Integrator,
) -> Result<SemigroupEstimate, SdeError> {
    if !(t >= 0.0) {
        return Err(SdeError::Config(format!("t must be nonnegative, got {t}")));
    }
    let n = system.n();
    check_len(w0.len(), 2 * n)?;
    if f.base_dim() > n {
        return Err(KolmogorovError::Truncation { needed: f.base_dim(), n }.into());
    }
    let steps = [integ.steps_for(t)];
    let vals: Vec<Option<f64>> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, derive_stream(0x5e, i as u64));
            system.values_at_steps(f, w0, &steps, integ, &mut rng).ok().map(|v| v[0])
        })
        .collect();
    let ok: Vec<f64> = vals.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(SdeError::AllPathsFailed(paths));
    }
    let m = MeanSe::from_samples(&ok);
    Ok(SemigroupEstimate { mean: m.mean, se: m.se, paths_used: ok.len(), excluded: paths - ok.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventEstimate {
    pub value: f64,
    pub se: f64,
    /// Time grid actually used (multiples of `dt`).
    pub grid: Vec<f64>,
    pub excluded: usize,
    /// `‖g‖_∞ / λ` when `g` has a known sup norm.
    pub sup_bound: Option<f64>,
    /// `|value| ≤ ‖g‖_∞/λ + 3 SE`.
    pub contraction_ok: Option<bool>,
}

/// Geometric grid `0, t_max·10^{-3}, …, t_max` of `points + 1` nodes.
pub fn geometric_grid(t_max: f64, points: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    let lo = t_max * 1e-3;
    let r = (t_max / lo).powf(1.0 / (points.max(2) - 1) as f64);
    g.extend((0..points.max(2)).map(|j| lo * r.powi(j as i32)));
    *g.last_mut().unwrap() = t_max;
    g
}

/// Weights `w` with `∫_grid e^{-λt} p(t) dt = Σ w_j g_j` for the piecewise
/// linear interpolant `p` of the grid values, plus the tail `e^{-λT} g_T / λ`.
pub fn resolvent_weights(grid: &[f64], lambda: f64) -> Vec<f64> {
    let mut w = vec![0.0; grid.len()];
    for j in 0..grid.len() - 1 {
        let (ta, tb) = (grid[j], grid[j + 1]);
        let h = tb - ta;
        let (ea, eb) = ((-lambda * ta).exp(), (-lambda * tb).exp());
        let total = (ea - eb) / lambda;
        // ∫ e^{-λt}(t - ta)/h dt over [ta, tb]
        let lin = (-h * eb / lambda - eb / (lambda * lambda) + ea / (lambda * lambda)) / h;
        w[j] += total - lin;
        w[j + 1] += lin;
    }
    let last = grid.len() - 1;
    w[last] += (-lambda * grid[last]).exp() / lambda;
    w
}

/// Monte-Carlo resolvent `∫₀^∞ e^{-λt} T_t g(w0) dt` on a geometric grid.
#[allow(clippy::too_many_arguments)]
pub fn estimate_resolvent(
    system: &GalerkinSystem,
    g: &Cylinder,
    lambda: f64,
    w0: &[f64],
    paths: usize,
    t_max: f64,
    seed: u64,
    integ: Integrator,
    grid_points: usize,
) -> Result<ResolventEstimate, SdeError> {
    if !(lambda > 0.0) {
        return Err(SdeError::Config(format!("lambda must be positive, got {lambda}")));
    }
    if t_max * lambda < 10.0 - 1e-12 {
        return Err(SdeError::Config(format!("t_max * lambda = {} < 10", t_max * lambda)));
    }
    let n = system.n();
    check_len(w0.len(), 2 * n)?;
    if g.base_dim() > n {
        return Err(KolmogorovError::Truncation { needed: g.base_dim(), n }.into());
    }
    let mut steps: Vec<usize> = geometric_grid(t_max, grid_points).iter().map(|&t| integ.steps_for(t)).collect();
    steps.dedup();
    let grid: Vec<f64> = steps.iter().map(|&s| s as f64 * integ.dt).collect();
    let w = resolvent_weights(&grid, lambda);
    let vals: Vec<Option<f64>> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, derive_stream(0x7e, i as u64));
            system
                .values_at_steps(g, w0, &steps, integ, &mut rng)
                .ok()
                .map(|v| v.iter().zip(&w).map(|(a, b)| a * b).sum())
        })
        .collect();
    let ok: Vec<f64> = vals.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(SdeError::AllPathsFailed(paths));
    }
    let m = MeanSe::from_samples(&ok);
    let sup_bound = g.sup_norm().map(|s| s / lambda);
    Ok(ResolventEstimate {
        value: m.mean,
        se: m.se,
        grid,
        excluded: paths - ok.len(),
        sup_bound,
        contraction_ok: sup_bound.map(|b| m.mean.abs() <= b * (1.0 + 1e-12) + 3.0 * m.se),
    })
}
