//! Cylinder functions with exact derivatives and the Kolmogorov operator
//! `L^Φ = S - A^Φ` on the Galerkin space `ℝⁿ × ℝⁿ`.
//!
//! ```text
//! S f   = Σ_k λ22_k ∂²_{y_k} f + ∂_kλ22_k ∂_{y_k} f - λ22_k y_k/λ_{2,k} ∂_{y_k} f
//! A^Φ f = Σ_k λ_k^{σ₁} [ (x_k/λ_{1,k} + ∂_kΦ) ∂_{y_k} f - y_k/λ_{2,k} ∂_{x_k} f ]
//! Γ(f,g) = Σ_k λ22_k ∂_{y_k} f ∂_{y_k} g
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::coefficients::{CoefficientError, CoefficientSpec, Coefficients};
use crate::mc::{stream_rng, WeightedEstimate};
use crate::potential::{PhiSpec, PotentialError, PotentialVariant, Quadrature, RegularizationSpec, Superposition};
use crate::spectral_gaussian::GaussianSpec;

#[derive(Debug, Error)]
pub enum KolmogorovError {
    #[error("cylinder function uses {needed} modes but the truncation is {n}")]
    Truncation { needed: usize, n: usize },
    #[error("state has dimension {got}, expected {n}")]
    StateDim { got: usize, n: usize },
    #[error("Monte-Carlo budget {0} below the minimum of 1000")]
    Budget(usize),
    #[error("empty identity battery")]
    EmptyBattery,
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

// ---------------------------------------------------------------------------
// Jets
// ---------------------------------------------------------------------------

/// Value, gradients in `x` and `y`, and the full `y`-Hessian (row major).
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub hyy: Vec<f64>,
}

impl Jet {
    pub fn constant(n: usize, value: f64) -> Self {
        Jet { value, dx: vec![0.0; n], dy: vec![0.0; n], hyy: vec![0.0; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.dx.len()
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hyy[i * self.dim() + j]
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let n = self.dim();
        let mut hyy = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hyy[i * n + j] = self.value * o.hyy[i * n + j]
                    + o.value * self.hyy[i * n + j]
                    + self.dy[i] * o.dy[j]
                    + self.dy[j] * o.dy[i];
            }
        }
        Jet {
            value: self.value * o.value,
            dx: (0..n).map(|i| self.value * o.dx[i] + o.value * self.dx[i]).collect(),
            dy: (0..n).map(|i| self.value * o.dy[i] + o.value * self.dy[i]).collect(),
            hyy,
        }
    }

    pub fn scale_add(&mut self, c: f64, o: &Jet) {
        self.value += c * o.value;
        for (a, b) in self.dx.iter_mut().zip(&o.dx) {
            *a += c * b;
        }
        for (a, b) in self.dy.iter_mut().zip(&o.dy) {
            *a += c * b;
        }
        for (a, b) in self.hyy.iter_mut().zip(&o.hyy) {
            *a += c * b;
        }
    }
}

// ---------------------------------------------------------------------------
// Cylinder functions
// ---------------------------------------------------------------------------

/// Coordinate of the state, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Var {
    X(usize),
    Y(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub vars: Vec<(Var, u32)>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.vars.iter().map(|(_, p)| p).sum()
    }
}

/// Outer function for compositions `F(f₁, …, f_m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outer {
    /// `c + b·z + ½ zᵀ a z` with symmetric `a`.
    Quadratic { c: f64, b: Vec<f64>, a: Vec<Vec<f64>> },
    /// `sin(freq z₁ + phase)`
    Sin { freq: f64, phase: f64 },
    /// `exp(rate z₁)`
    Exp { rate: f64 },
}

impl Outer {
    /// Value, gradient and Hessian at `z`.
    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let m = z.len();
        match self {
            Outer::Quadratic { c, b, a } => {
                let g: Vec<f64> = (0..m).map(|k| b[k] + (0..m).map(|l| a[k][l] * z[l]).sum::<f64>()).collect();
                let v = c
                    + (0..m).map(|k| b[k] * z[k]).sum::<f64>()
                    + 0.5 * (0..m).map(|k| z[k] * (0..m).map(|l| a[k][l] * z[l]).sum::<f64>()).sum::<f64>();
                (v, g, a.clone())
            }
            Outer::Sin { freq, phase } => {
                let t = freq * z[0] + phase;
                (t.sin(), vec![freq * t.cos()], vec![vec![-freq * freq * t.sin()]])
            }
            Outer::Exp { rate } => {
                let e = (rate * z[0]).exp();
                (e, vec![rate * e], vec![vec![rate * rate * e]])
            }
        }
    }
}

/// Finitely based smooth test function of `(x, y)` with exact derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Cylinder {
    Constant { value: f64 },
    Polynomial { terms: Vec<Monomial> },
    /// `exp(-(|x - cx|² + |y - cy|²) / (2 scale²))` over the listed coordinates.
    GaussBump { scale: f64, x_center: Vec<f64>, y_center: Vec<f64> },
    Product { factors: Vec<Cylinder> },
    Compose { outer: Outer, inner: Vec<Cylinder> },
}

impl Cylinder {
    pub fn constant(value: f64) -> Self {
        Cylinder::Constant { value }
    }

    /// Single monomial `coeff · Π v^p`.
    pub fn monomial(coeff: f64, vars: &[(Var, u32)]) -> Self {
        Cylinder::Polynomial { terms: vec![Monomial { coeff, vars: vars.to_vec() }] }
    }

    pub fn x(k: usize) -> Self {
        Self::monomial(1.0, &[(Var::X(k), 1)])
    }

    pub fn y(k: usize) -> Self {
        Self::monomial(1.0, &[(Var::Y(k), 1)])
    }

    pub fn product(factors: Vec<Cylinder>) -> Self {
        Cylinder::Product { factors }
    }

    pub fn compose(outer: Outer, inner: Vec<Cylinder>) -> Self {
        Cylinder::Compose { outer, inner }
    }

    /// Number of leading modes the function depends on.
    pub fn base_dim(&self) -> usize {
        match self {
            Cylinder::Constant { .. } => 0,
            Cylinder::Polynomial { terms } => terms
                .iter()
                .flat_map(|t| t.vars.iter())
                .map(|(v, _)| match v {
                    Var::X(k) | Var::Y(k) => *k,
                })
                .max()
                .unwrap_or(0),
            Cylinder::GaussBump { x_center, y_center, .. } => x_center.len().max(y_center.len()),
            Cylinder::Product { factors } => factors.iter().map(Cylinder::base_dim).max().unwrap_or(0),
            Cylinder::Compose { inner, .. } => inner.iter().map(Cylinder::base_dim).max().unwrap_or(0),
        }
    }

    /// Total polynomial degree, `None` for non-polynomial functions.
    pub fn degree(&self) -> Option<u32> {
        match self {
            Cylinder::Constant { .. } => Some(0),
            Cylinder::Polynomial { terms } => Some(terms.iter().map(Monomial::degree).max().unwrap_or(0)),
            Cylinder::Product { factors } => factors.iter().map(Cylinder::degree).sum(),
            _ => None,
        }
    }

    /// `sup |f|` when known in closed form.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            Cylinder::Constant { value } => Some(value.abs()),
            Cylinder::GaussBump { .. } => Some(1.0),
            Cylinder::Compose { outer: Outer::Sin { .. }, .. } => Some(1.0),
            Cylinder::Product { factors } => factors.iter().map(Cylinder::sup_norm).product(),
            _ => None,
        }
    }

    /// Value only, without derivatives.
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Cylinder::Constant { value } => *value,
            Cylinder::Polynomial { terms } => terms
                .iter()
                .map(|t| {
                    t.coeff
                        * t.vars
                            .iter()
                            .map(|&(v, p)| match v {
                                Var::X(k) => coord(x, k - 1),
                                Var::Y(k) => coord(y, k - 1),
                            }
                            .powi(p as i32))
                            .product::<f64>()
                })
                .sum(),
            Cylinder::GaussBump { scale, x_center, y_center } => {
                let q: f64 = x_center.iter().enumerate().map(|(i, c)| (coord(x, i) - c).powi(2)).sum::<f64>()
                    + y_center.iter().enumerate().map(|(i, c)| (coord(y, i) - c).powi(2)).sum::<f64>();
                (-q / (2.0 * scale * scale)).exp()
            }
            Cylinder::Product { factors } => factors.iter().map(|f| f.value(x, y)).product(),
            Cylinder::Compose { outer, inner } => {
                let z: Vec<f64> = inner.iter().map(|f| f.value(x, y)).collect();
                outer.eval(&z).0
            }
        }
    }

    /// Exact jet at `(x, y)`; coordinates beyond the slices count as zero.
    pub fn jet(&self, x: &[f64], y: &[f64]) -> Jet {
        let n = x.len();
        match self {
            Cylinder::Constant { value } => Jet::constant(n, *value),
            Cylinder::Polynomial { terms } => {
                let mut acc = Jet::constant(n, 0.0);
                for t in terms {
                    let mut j = Jet::constant(n, t.coeff);
                    for &(v, p) in &t.vars {
                        j = j.mul(&power_jet(n, x, y, v, p));
                    }
                    acc.scale_add(1.0, &j);
                }
                acc
            }
            Cylinder::GaussBump { scale, x_center, y_center } => {
                let s2 = scale * scale;
                let mut q = 0.0;
                let mut jet = Jet::constant(n, 0.0);
                for (i, c) in x_center.iter().enumerate() {
                    let d = coord(x, i) - c;
                    q += d * d;
                    if i < n {
                        jet.dx[i] = -d / s2;
                    }
                }
                for (i, c) in y_center.iter().enumerate() {
                    let d = coord(y, i) - c;
                    q += d * d;
                    if i < n {
                        jet.dy[i] = -d / s2;
                    }
                }
                let e = (-q / (2.0 * s2)).exp();
                for i in 0..n {
                    for j in 0..n {
                        let diag = if i == j && i < y_center.len() { -1.0 / s2 } else { 0.0 };
                        jet.hyy[i * n + j] = e * (jet.dy[i] * jet.dy[j] + diag);
                    }
                }
                jet.value = e;
                jet.dx.iter_mut().for_each(|g| *g *= e);
                jet.dy.iter_mut().for_each(|g| *g *= e);
                jet
            }
            Cylinder::Product { factors } => {
                factors.iter().fold(Jet::constant(n, 1.0), |acc, f| acc.mul(&f.jet(x, y)))
            }
            Cylinder::Compose { outer, inner } => {
                let jets: Vec<Jet> = inner.iter().map(|f| f.jet(x, y)).collect();
                let z: Vec<f64> = jets.iter().map(|j| j.value).collect();
                let (v, g, h) = outer.eval(&z);
                let mut out = Jet::constant(n, v);
                for (k, jk) in jets.iter().enumerate() {
                    for i in 0..n {
                        out.dx[i] += g[k] * jk.dx[i];
                        out.dy[i] += g[k] * jk.dy[i];
                    }
                    for ij in 0..n * n {
                        out.hyy[ij] += g[k] * jk.hyy[ij];
                    }
                    for (l, jl) in jets.iter().enumerate() {
                        if h[k][l] == 0.0 {
                            continue;
                        }
                        for i in 0..n {
                            for j in 0..n {
                                out.hyy[i * n + j] += h[k][l] * jk.dy[i] * jl.dy[j];
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

fn coord(v: &[f64], i: usize) -> f64 {
    v.get(i).copied().unwrap_or(0.0)
}

fn power_jet(n: usize, x: &[f64], y: &[f64], v: Var, p: u32) -> Jet {
    let (val, idx, is_y) = match v {
        Var::X(k) => (coord(x, k - 1), k - 1, false),
        Var::Y(k) => (coord(y, k - 1), k - 1, true),
    };
    let p_i = p as i32;
    let f0 = val.powi(p_i);
    let f1 = if p >= 1 { p as f64 * val.powi(p_i - 1) } else { 0.0 };
    let f2 = if p >= 2 { (p * (p - 1)) as f64 * val.powi(p_i - 2) } else { 0.0 };
    let mut j = Jet::constant(n, f0);
    if idx < n {
        if is_y {
            j.dy[idx] = f1;
            j.hyy[idx * n + idx] = f2;
        } else {
            j.dx[idx] = f1;
        }
    }
    j
}

/// Deterministic battery of polynomial cylinder functions of degree ≤ 3 in
/// up to `max_dim` modes, plus a few bounded non-polynomial ones.
pub fn standard_battery(max_dim: usize, seed: u64) -> Vec<Cylinder> {
    let mut out = vec![
        Cylinder::constant(1.5),
        Cylinder::x(1),
        Cylinder::y(1),
        Cylinder::monomial(1.0, &[(Var::Y(1), 2)]),
        Cylinder::monomial(1.0, &[(Var::X(1), 1), (Var::Y(1), 1)]),
        Cylinder::monomial(1.0, &[(Var::Y(1), 3)]),
    ];
    let mut rng = stream_rng(seed, 0xB0);
    for d in 1..=max_dim {
        for _ in 0..3 {
            let nterms = rng.random_range(1..=4);
            let terms = (0..nterms)
                .map(|_| {
                    let deg = rng.random_range(1..=3u32);
                    let mut vars: Vec<(Var, u32)> = vec![];
                    for _ in 0..deg {
                        let k = rng.random_range(1..=d);
                        let v = if rng.random_bool(0.5) { Var::X(k) } else { Var::Y(k) };
                        match vars.iter_mut().find(|(w, _)| *w == v) {
                            Some((_, p)) => *p += 1,
                            None => vars.push((v, 1)),
                        }
                    }
                    Monomial { coeff: rng.random_range(-2.0..2.0), vars }
                })
                .collect();
            out.push(Cylinder::Polynomial { terms });
        }
    }
    out
}

/// Bounded test functions: bumps, trigonometric compositions and products.
pub fn bounded_battery() -> Vec<Cylinder> {
    vec![
        Cylinder::compose(Outer::Sin { freq: 2.0, phase: 0.3 }, vec![Cylinder::y(1)]),
        Cylinder::compose(Outer::Sin { freq: 1.0, phase: 1.2 }, vec![Cylinder::x(1)]),
        Cylinder::GaussBump { scale: 0.5, x_center: vec![0.1], y_center: vec![0.0, 0.2] },
        Cylinder::product(vec![
            Cylinder::compose(Outer::Sin { freq: 3.0, phase: 0.0 }, vec![Cylinder::x(1)]),
            Cylinder::GaussBump { scale: 0.7, x_center: vec![], y_center: vec![0.1] },
        ]),
    ]
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Coefficients, potential and truncation shared by all operator calls.
#[derive(Clone, Debug)]
pub struct OperatorContext {
    pub coeffs: Coefficients,
    pub potential: Superposition,
    pub variant: PotentialVariant,
}

impl OperatorContext {
    pub fn new(
        spec: &CoefficientSpec,
        phi: &PhiSpec,
        reg: Option<&RegularizationSpec>,
        variant: PotentialVariant,
        n: usize,
        quad_nodes: usize,
    ) -> Result<Self, KolmogorovError> {
        let quad = Quadrature::gauss_legendre(quad_nodes)?;
        Ok(Self {
            coeffs: Coefficients::new(spec, n)?,
            potential: Superposition::new(phi, reg, variant, n, quad)?,
            variant,
        })
    }

    pub fn n(&self) -> usize {
        self.coeffs.n
    }

    fn check(&self, f: &Cylinder, x: &[f64], y: &[f64]) -> Result<(), KolmogorovError> {
        let n = self.n();
        if f.base_dim() > n {
            return Err(KolmogorovError::Truncation { needed: f.base_dim(), n });
        }
        if x.len() != n || y.len() != n {
            return Err(KolmogorovError::StateDim { got: x.len().max(y.len()), n });
        }
        Ok(())
    }

    /// `(λ22_k(y), ∂_kλ22_k(y))`.
    pub fn diffusion(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let (mut lam, mut div) = (vec![0.0; n], vec![0.0; n]);
        self.coeffs.lambda22_and_divergence(y, &mut lam, &mut div);
        (lam, div)
    }

    pub fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        self.potential.grad(x, &mut g);
        g
    }

    fn s_of(&self, jet: &Jet, y: &[f64], lam: &[f64], div: &[f64]) -> f64 {
        let c = &self.coeffs;
        (0..self.n())
            .map(|k| lam[k] * jet.hess(k, k) + div[k] * jet.dy[k] - y[k] / c.lam2[k] * lam[k] * jet.dy[k])
            .sum()
    }

    fn a_of(&self, jet: &Jet, x: &[f64], y: &[f64], gphi: &[f64]) -> f64 {
        let c = &self.coeffs;
        (0..self.n())
            .map(|k| {
                c.k12[k] * ((x[k] / c.lam1[k] + gphi[k]) * jet.dy[k] - y[k] / c.lam2[k] * jet.dx[k])
            })
            .sum()
    }

    fn gamma_of(&self, a: &Jet, b: &Jet, lam: &[f64]) -> f64 {
        (0..self.n()).map(|k| lam[k] * a.dy[k] * b.dy[k]).sum()
    }
}

pub fn apply_s(ctx: &OperatorContext, f: &Cylinder, x: &[f64], y: &[f64]) -> Result<f64, KolmogorovError> {
    ctx.check(f, x, y)?;
    let (lam, div) = ctx.diffusion(y);
    Ok(ctx.s_of(&f.jet(x, y), y, &lam, &div))
}

pub fn apply_a_phi(ctx: &OperatorContext, f: &Cylinder, x: &[f64], y: &[f64]) -> Result<f64, KolmogorovError> {
    ctx.check(f, x, y)?;
    Ok(ctx.a_of(&f.jet(x, y), x, y, &ctx.grad_phi(x)))
}

pub fn apply_l_phi(ctx: &OperatorContext, f: &Cylinder, x: &[f64], y: &[f64]) -> Result<f64, KolmogorovError> {
    Ok(apply_s(ctx, f, x, y)? - apply_a_phi(ctx, f, x, y)?)
}

pub fn carre_du_champ(
    ctx: &OperatorContext,
    f: &Cylinder,
    g: &Cylinder,
    x: &[f64],
    y: &[f64],
) -> Result<f64, KolmogorovError> {
    ctx.check(f, x, y)?;
    ctx.check(g, x, y)?;
    let (lam, _) = ctx.diffusion(y);
    Ok(ctx.gamma_of(&f.jet(x, y), &g.jet(x, y), &lam))
}

/// Everything the audits need about one function at one state.
#[derive(Clone, Debug)]
pub struct PointEval {
    pub jet: Jet,
    pub s: f64,
    pub a: f64,
}

impl PointEval {
    pub fn l(&self) -> f64 {
        self.s - self.a
    }
}

fn point_eval(ctx: &OperatorContext, f: &Cylinder, x: &[f64], y: &[f64], lam: &[f64], div: &[f64], gphi: &[f64]) -> PointEval {
    let jet = f.jet(x, y);
    PointEval { s: ctx.s_of(&jet, y, lam, div), a: ctx.a_of(&jet, x, y, gphi), jet }
}

// ---------------------------------------------------------------------------
// Expectations under μ^Φ
// ---------------------------------------------------------------------------

/// Importance sample of `μ^Φ`: states drawn from `μ₁ ⊗ μ₂` with weights `e^{-Φ(x)}`.
#[derive(Clone, Debug)]
pub struct WeightedSample {
    pub n: usize,
    /// Interleaved `[x, y]` of length `2n` per state.
    pub states: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedSample {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, i: usize) -> (&[f64], &[f64]) {
        let s = &self.states[2 * self.n * i..2 * self.n * (i + 1)];
        s.split_at(self.n)
    }

    pub fn estimate(&self, values: &[f64]) -> WeightedEstimate {
        WeightedEstimate::new(&self.weights, values)
    }
}

const CHUNK: usize = 4096;

/// Draws `budget` weighted states; chunk `c` uses sub-stream `c` of `seed`.
pub fn sample_mu_phi(ctx: &OperatorContext, budget: usize, seed: u64) -> WeightedSample {
    let n = ctx.n();
    let mu1 = GaussianSpec::new(ctx.coeffs.spec.alpha1, n).expect("validated");
    let mu2 = GaussianSpec::new(ctx.coeffs.spec.alpha2, n).expect("validated");
    let (sd1, sd2) = (mu1.std_devs(), mu2.std_devs());
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..budget.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(budget - c * CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            let mut states = vec![0.0; 2 * n * count];
            let mut weights = Vec::with_capacity(count);
            for s in states.chunks_mut(2 * n) {
                let (x, y) = s.split_at_mut(n);
                mu1.sample_into(&mut rng, &sd1, x);
                mu2.sample_into(&mut rng, &sd2, y);
                weights.push((-ctx.potential.value(x)).exp());
            }
            (states, weights)
        })
        .collect();
    let mut out = WeightedSample { n, states: Vec::with_capacity(2 * n * budget), weights: Vec::with_capacity(budget) };
    for (s, w) in chunks {
        out.states.extend(s);
        out.weights.extend(w);
    }
    out
}

/// Self-normalized estimate of `∫ h dμ^Φ` with jackknife standard error.
pub fn mu_phi_expectation<H>(ctx: &OperatorContext, h: H, budget: usize, seed: u64) -> Result<WeightedEstimate, KolmogorovError>
where
    H: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    if budget < 1000 {
        return Err(KolmogorovError::Budget(budget));
    }
    let sample = sample_mu_phi(ctx, budget, seed);
    let values: Vec<f64> = (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = sample.state(i);
            h(x, y)
        })
        .collect();
    Ok(sample.estimate(&values))
}

// ---------------------------------------------------------------------------
// Identity audit
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditKind {
    /// Passes when `|estimate| ≤ 3 SE`.
    Zero,
    /// Passes when `estimate ≤ 3 SE`.
    NonPositive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub pair: usize,
    pub identity: String,
    pub kind: AuditKind,
    pub estimate: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n: usize,
    pub budget: usize,
    pub seed: u64,
    pub ess: f64,
    pub degenerate: bool,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, pair: usize, identity: &str) -> Option<&AuditRow> {
        self.rows.iter().find(|r| r.pair == pair && r.identity == identity)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), KolmogorovError> {
        serde_json::to_writer_pretty(w, self).map_err(std::io::Error::from)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), KolmogorovError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["pair", "identity", "gap", "se", "verdict"])?;
        for r in &self.rows {
            wr.write_record([
                r.pair.to_string(),
                r.identity.clone(),
                r.estimate.to_string(),
                r.se.to_string(),
                if r.pass { "pass" } else { "fail" }.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Resolvent parameter used in the second first-order estimate.
pub const AUDIT_LAMBDA: f64 = 1.0;

/// Monte-Carlo audit of the measure identities for each `(f, g)` pair.
///
/// Identities (all under `μ^Φ`): symmetry of `S`, antisymmetry of `A^Φ`,
/// `∫ f L^Φ f ≤ 0`, `∫ L^Φ f = 0`, integration by parts in every `x_i`,
/// `∫ Γ(f,f) ≤ ½ ∫ f² + (L^Φ f)²` and `∫ Γ(f,f) ≤ (4λ)⁻¹ ∫ (λf - L^Φ f)²`.
pub fn audit_identities(
    ctx: &OperatorContext,
    battery: &[(Cylinder, Cylinder)],
    budget: usize,
    seed: u64,
) -> Result<AuditReport, KolmogorovError> {
    if battery.is_empty() {
        return Err(KolmogorovError::EmptyBattery);
    }
    if budget < 1000 {
        return Err(KolmogorovError::Budget(budget));
    }
    let n = ctx.n();
    for (f, g) in battery {
        for h in [f, g] {
            if h.base_dim() > n {
                return Err(KolmogorovError::Truncation { needed: h.base_dim(), n });
            }
        }
    }
    let sample = sample_mu_phi(ctx, budget, seed);
    let names = identity_names(n);
    let per_pair = names.len();
    let ess = WeightedEstimate::new(&sample.weights, &vec![0.0; sample.len()]);
    let mut rows = vec![];
    let mut column = vec![0.0; sample.len()];
    // one pair at a time keeps memory at len * per_pair values
    for (pair, (f, g)) in battery.iter().enumerate() {
        let values: Vec<f64> = (0..sample.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let (x, y) = sample.state(i);
                let (lam, div) = ctx.diffusion(y);
                let gphi = ctx.grad_phi(x);
                let pf = point_eval(ctx, f, x, y, &lam, &div, &gphi);
                let pg = point_eval(ctx, g, x, y, &lam, &div, &gphi);
                let (fv, gv) = (pf.jet.value, pg.jet.value);
                let lf = pf.l();
                let gamma_ff = ctx.gamma_of(&pf.jet, &pf.jet, &lam);
                let mut row = Vec::with_capacity(per_pair);
                row.push(pf.s * gv - fv * pg.s);
                row.push(pf.a * gv + fv * pg.a);
                row.push(fv * lf);
                row.push(lf);
                for k in 0..n {
                    let c = &ctx.coeffs;
                    row.push(pf.jet.dx[k] * gv + fv * pg.jet.dx[k] - (x[k] / c.lam1[k] + gphi[k]) * fv * gv);
                }
                row.push(gamma_ff - 0.5 * (fv * fv + lf * lf));
                let resid = AUDIT_LAMBDA * fv - lf;
                row.push(gamma_ff - resid * resid / (4.0 * AUDIT_LAMBDA));
                row
            })
            .collect();
        for (j, (name, kind)) in names.iter().enumerate() {
            for (i, c) in column.iter_mut().enumerate() {
                *c = values[i * per_pair + j];
            }
            let e = sample.estimate(&column);
            let pass = match kind {
                AuditKind::Zero => e.estimate.abs() <= 3.0 * e.se,
                AuditKind::NonPositive => e.estimate <= 3.0 * e.se,
            };
            rows.push(AuditRow { pair, identity: name.clone(), kind: *kind, estimate: e.estimate, se: e.se, pass });
        }
    }
    Ok(AuditReport { n, budget, seed, ess: ess.ess, degenerate: ess.degenerate, rows })
}

fn identity_names(n: usize) -> Vec<(String, AuditKind)> {
    let mut v = vec![
        ("symmetry".to_string(), AuditKind::Zero),
        ("antisymmetry".to_string(), AuditKind::Zero),
        ("dissipativity".to_string(), AuditKind::NonPositive),
        ("invariance".to_string(), AuditKind::Zero),
    ];
    for k in 1..=n {
        v.push((format!("ibp_x{k}"), AuditKind::Zero));
    }
    v.push(("first_order".to_string(), AuditKind::NonPositive));
    v.push(("first_order_resolvent".to_string(), AuditKind::NonPositive));
    v
}
