//! Scalar potentials `φ`, their superposition functionals
//! `Φ_n(u) = ∫₀¹ φ(P_n u(ξ)) dξ`, the bounded regularizations
//! `φ_m = Ψ_m ∘ φ` with `Ψ_m(x) = x / (1 + α_m x^q)`, and the Moreau–Yosida
//! envelope of the convex part.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral_gaussian::{basis, SpectralVector};

#[derive(Debug, Error, PartialEq)]
pub enum PotentialError {
    #[error("quadrature needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("growth metadata missing")]
    NoGrowth,
    #[error("convex part is not convex: second derivative {value} at x = {x}")]
    NotConvex { x: f64, value: f64 },
    #[error("Moreau-Yosida parameter must be positive, got {0}")]
    BadTime(f64),
    #[error("regularization index {0} out of range")]
    BadIndex(usize),
    #[error("derivative order {0} not supported (0..=4)")]
    BadOrder(usize),
    #[error("invalid regularization: {0}")]
    BadRegularization(String),
}

// ---------------------------------------------------------------------------
// Scalar building blocks
// ---------------------------------------------------------------------------

/// One additive term of a scalar potential, with hand-coded derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Term {
    /// `coeff · x^power`
    Monomial { coeff: f64, power: u32 },
    /// `amp · exp(-x² / (2 width²))`
    GaussBump { amp: f64, width: f64 },
    /// `amp · cos(freq · x)`
    Cosine { amp: f64, freq: f64 },
    /// `amp · ((x² + eps²)^{3/4} - eps^{3/2})`, growth like `|x|^{3/2}`
    SmoothPow { amp: f64, eps: f64 },
}

impl Term {
    pub fn deriv(&self, x: f64, order: usize) -> f64 {
        match *self {
            Term::Monomial { coeff, power } => {
                let p = power as usize;
                if order > p {
                    return 0.0;
                }
                let falling: f64 = (0..order).map(|i| (p - i) as f64).product();
                coeff * falling * x.powi((p - order) as i32)
            }
            Term::GaussBump { amp, width } => {
                let z = x / width;
                let he = match order {
                    0 => 1.0,
                    1 => z,
                    2 => z * z - 1.0,
                    3 => z * z * z - 3.0 * z,
                    _ => z.powi(4) - 6.0 * z * z + 3.0,
                };
                amp * (-1.0 / width).powi(order as i32) * he * (-0.5 * z * z).exp()
            }
            Term::Cosine { amp, freq } => {
                let phase = freq * x;
                let trig = match order % 4 {
                    0 => phase.cos(),
                    1 => -phase.sin(),
                    2 => -phase.cos(),
                    _ => phase.sin(),
                };
                amp * freq.powi(order as i32) * trig
            }
            Term::SmoothPow { amp, eps } => {
                let e2 = eps * eps;
                let s = x * x + e2;
                amp * match order {
                    0 => s.powf(0.75) - eps.powf(1.5),
                    1 => 1.5 * x * s.powf(-0.25),
                    2 => 0.75 * (2.0 * e2 + x * x) * s.powf(-1.25),
                    3 => -0.375 * x * (6.0 * e2 + x * x) * s.powf(-2.25),
                    _ => 0.5625 * (-4.0 * e2 * e2 + 12.0 * e2 * x * x + x.powi(4)) * s.powf(-3.25),
                }
            }
        }
    }

    /// `sup φ - inf φ` over ℝ, `None` when unbounded.
    pub fn oscillation(&self) -> Option<f64> {
        match *self {
            Term::Monomial { coeff, power } => (coeff == 0.0 || power == 0).then_some(0.0),
            Term::GaussBump { amp, .. } => Some(amp.abs()),
            Term::Cosine { amp, freq } => Some(if freq == 0.0 { 0.0 } else { 2.0 * amp.abs() }),
            Term::SmoothPow { amp, .. } => (amp == 0.0).then_some(0.0),
        }
    }

    /// `sup |φ''|` over ℝ, `None` when unbounded.
    pub fn sup_abs_second(&self) -> Option<f64> {
        match *self {
            Term::Monomial { coeff, power } => match power {
                0 | 1 => Some(0.0),
                2 => Some(2.0 * coeff.abs()),
                _ => (coeff == 0.0).then_some(0.0),
            },
            Term::GaussBump { amp, width } => Some(amp.abs() / (width * width)),
            Term::Cosine { amp, freq } => Some(amp.abs() * freq * freq),
            Term::SmoothPow { amp, eps } => Some(1.5 * amp.abs() / eps.sqrt()),
        }
    }
}

fn sum_terms(terms: &[Term], x: f64, order: usize) -> f64 {
    terms.iter().map(|t| t.deriv(x, order)).sum()
}

/// Growth constants: `φ ≥ A|x|^{m0}` for `|x| ≥ R` and
/// `|φ''''| ≤ B̄(1 + |x|^{m1-4})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub a: f64,
    pub b_bar: f64,
    pub r: f64,
    pub m0: f64,
    pub m1: u32,
}

/// Uniform grid used for probing pointwise properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self { lo: -10.0, hi: 10.0, points: 2001 }
    }
}

impl ProbeGrid {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        let h = (self.hi - self.lo) / (self.points.max(2) - 1) as f64;
        (0..self.points).map(move |i| self.lo + h * i as f64)
    }
}

/// Scalar potential `φ = φ₁ + φ₂ - shift`, with `φ₁` meant to be convex and
/// `φ₂` of bounded oscillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    pub convex: Vec<Term>,
    #[serde(default)]
    pub perturbation: Vec<Term>,
    #[serde(default)]
    pub growth: Option<Growth>,
    /// Constant subtracted so that the minimum over the probe grid is zero.
    #[serde(default)]
    pub shift: f64,
}

impl PhiSpec {
    /// Builds the potential and records the shift that makes `min φ = 0`.
    pub fn normalized(convex: Vec<Term>, perturbation: Vec<Term>, growth: Option<Growth>) -> Self {
        let mut phi = PhiSpec { convex, perturbation, growth, shift: 0.0 };
        phi.shift = phi.probe_minimum(&ProbeGrid::default());
        phi
    }

    pub fn zero() -> Self {
        PhiSpec { convex: vec![], perturbation: vec![], growth: None, shift: 0.0 }
    }

    /// `a x²`.
    pub fn quadratic(a: f64) -> Self {
        Self::normalized(
            vec![Term::Monomial { coeff: a, power: 2 }],
            vec![],
            Some(Growth { a, b_bar: 1.0, r: 1.0, m0: 2.0, m1: 4 }),
        )
    }

    /// `x⁴`.
    pub fn quartic() -> Self {
        Self::normalized(
            vec![Term::Monomial { coeff: 1.0, power: 4 }],
            vec![],
            Some(Growth { a: 1.0, b_bar: 24.0, r: 1.0, m0: 4.0, m1: 4 }),
        )
    }

    /// `a x² + amp·exp(-x²/(2w²))`, a non-convex perturbation of a quadratic.
    pub fn quadratic_with_bump(a: f64, amp: f64, width: f64) -> Self {
        let b_bar = 3.0 * amp.abs() / width.powi(4) + 1.0;
        Self::normalized(
            vec![Term::Monomial { coeff: a, power: 2 }],
            vec![Term::GaussBump { amp, width }],
            Some(Growth { a: a / 2.0, b_bar, r: (2.0 * amp.abs() / a).sqrt().max(1.0), m0: 2.0, m1: 4 }),
        )
    }

    /// `a x² + b x⁴`.
    pub fn quadratic_quartic(a: f64, b: f64) -> Self {
        Self::normalized(
            vec![Term::Monomial { coeff: a, power: 2 }, Term::Monomial { coeff: b, power: 4 }],
            vec![],
            Some(Growth { a: b, b_bar: 24.0 * b, r: 1.0, m0: 4.0, m1: 4 }),
        )
    }

    /// `φ^{(order)}(x)`.
    pub fn deriv(&self, x: f64, order: usize) -> f64 {
        let v = sum_terms(&self.convex, x, order) + sum_terms(&self.perturbation, x, order);
        if order == 0 {
            v - self.shift
        } else {
            v
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.deriv(x, 0)
    }

    pub fn convex_deriv(&self, x: f64, order: usize) -> f64 {
        sum_terms(&self.convex, x, order)
    }

    pub fn perturbation_deriv(&self, x: f64, order: usize) -> f64 {
        sum_terms(&self.perturbation, x, order)
    }

    pub fn is_zero(&self) -> bool {
        self.convex.is_empty() && self.perturbation.is_empty() && self.shift == 0.0
    }

    /// Coefficient `a` if `φ(x) = a x² - shift` exactly.
    pub fn pure_quadratic(&self) -> Option<f64> {
        if !self.perturbation.is_empty() {
            return None;
        }
        let mut a = 0.0;
        for t in &self.convex {
            match *t {
                Term::Monomial { coeff, power: 2 } => a += coeff,
                Term::Monomial { coeff: 0.0, .. } => {}
                _ => return None,
            }
        }
        Some(a)
    }

    /// Minimum of the unshifted potential: grid scan refined by golden section.
    fn probe_minimum(&self, grid: &ProbeGrid) -> f64 {
        let raw = |x: f64| sum_terms(&self.convex, x, 0) + sum_terms(&self.perturbation, x, 0);
        let h = (grid.hi - grid.lo) / (grid.points - 1) as f64;
        let (best_x, best) = grid
            .iter()
            .map(|x| (x, raw(x)))
            .fold((0.0, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc });
        let (mut a, mut b) = (best_x - h, best_x + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if raw(c) < raw(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best.min(raw(0.5 * (a + b)))
    }

    /// Checks `φ₁'' ≥ -1e-12` on the grid.
    pub fn check_convex(&self, grid: &ProbeGrid) -> Result<(), PotentialError> {
        for x in grid.iter() {
            let value = self.convex_deriv(x, 2);
            if value < -1e-12 {
                return Err(PotentialError::NotConvex { x, value });
            }
        }
        Ok(())
    }

    /// `osc(φ₂)`; `None` if some perturbation term is unbounded.
    pub fn perturbation_oscillation(&self) -> Option<f64> {
        if self.perturbation.is_empty() {
            return Some(0.0);
        }
        let bound: f64 = self.perturbation.iter().map(Term::oscillation).sum::<Option<f64>>()?;
        // a grid estimate can only sharpen the sum-of-terms bound
        let grid = ProbeGrid { lo: -50.0, hi: 50.0, points: 20001 };
        let (lo, hi) = grid.iter().map(|x| self.perturbation_deriv(x, 0)).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), v| (lo.min(v), hi.max(v)),
        );
        Some(bound.min(hi - lo).max(0.0))
    }

    /// `sup |φ₂''|`; `None` if unbounded.
    pub fn perturbation_sup_second(&self) -> Option<f64> {
        // the empty float sum is -0.0
        self.perturbation.iter().map(Term::sup_abs_second).sum::<Option<f64>>().map(|s| s + 0.0)
    }

    /// Constant `B` with `|φ^{(j)}(x)| ≤ B(1+|x|^{m1-j})`, j = 0..4, obtained
    /// from `B̄` by integrating the fourth-derivative bound from 0.
    pub fn derived_b(&self) -> Result<f64, PotentialError> {
        let g = self.growth.as_ref().ok_or(PotentialError::NoGrowth)?;
        let mut b_next = g.b_bar;
        let mut b = b_next;
        for j in (0..4).rev() {
            let p = (g.m1 as usize - j) as f64;
            b_next = self.deriv(0.0, j).abs() + b_next * (1.0 + 1.0 / p);
            b = b.max(b_next);
        }
        Ok(b)
    }

    /// Pointwise audit of the growth hypotheses on a grid.
    pub fn check_growth(&self, grid: &ProbeGrid) -> Result<GrowthReport, PotentialError> {
        let g = self.growth.as_ref().ok_or(PotentialError::NoGrowth)?;
        let b = self.derived_b()?;
        let mut rep = GrowthReport { nonnegative: true, lower_bound: true, derivative_bounds: true, b };
        for x in grid.iter() {
            let v = self.value(x);
            if v < -1e-12 {
                rep.nonnegative = false;
            }
            let floor = g.a * x.abs().powf(g.m0);
            if x.abs() >= g.r && v < floor - 1e-12 * (1.0 + floor) {
                rep.lower_bound = false;
            }
            for j in 0..=4usize {
                let cap = b * (1.0 + x.abs().powi(g.m1 as i32 - j as i32));
                if self.deriv(x, j).abs() > cap * (1.0 + 1e-12) {
                    rep.derivative_bounds = false;
                }
            }
        }
        Ok(rep)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub nonnegative: bool,
    pub lower_bound: bool,
    pub derivative_bounds: bool,
    pub b: f64,
}

// ---------------------------------------------------------------------------
// Regularization φ_m = Ψ_m ∘ φ
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum AlphaRule {
    /// `α_m = scale / m`
    Harmonic { scale: f64 },
    /// `α_m = values[m-1]`
    Explicit { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSpec {
    pub q: u32,
    pub alphas: AlphaRule,
}

impl RegularizationSpec {
    pub fn new(q: u32, alphas: AlphaRule) -> Result<Self, PotentialError> {
        if q == 0 || !q.is_multiple_of(2) {
            return Err(PotentialError::BadRegularization(format!("q = {q} must be even and positive")));
        }
        match &alphas {
            AlphaRule::Harmonic { scale } if !(*scale > 0.0) => {
                return Err(PotentialError::BadRegularization("scale must be positive".into()))
            }
            AlphaRule::Explicit { values }
                if values.iter().any(|a| !(*a > 0.0)) || values.windows(2).any(|w| w[1] >= w[0]) =>
            {
                return Err(PotentialError::BadRegularization("alphas must be positive and strictly decreasing".into()))
            }
            _ => {}
        }
        Ok(Self { q, alphas })
    }

    /// Default rule `α_m = 1/m` with `q` from [`choose_q`].
    pub fn for_phi(phi: &PhiSpec) -> Result<Self, PotentialError> {
        Self::new(choose_q(phi)?, AlphaRule::Harmonic { scale: 1.0 })
    }

    pub fn alpha(&self, m: usize) -> Result<f64, PotentialError> {
        if m == 0 {
            return Err(PotentialError::BadIndex(m));
        }
        match &self.alphas {
            AlphaRule::Harmonic { scale } => Ok(scale / m as f64),
            AlphaRule::Explicit { values } => values.get(m - 1).copied().ok_or(PotentialError::BadIndex(m)),
        }
    }

    /// Whether `q > (m1-1)/m0` for the given growth data.
    pub fn admissible_for(&self, g: &Growth) -> bool {
        self.q as f64 > (g.m1 as f64 - 1.0) / g.m0
    }
}

/// Smallest even integer strictly greater than `(m1-1)/m0`.
pub fn choose_q(phi: &PhiSpec) -> Result<u32, PotentialError> {
    let g = phi.growth.as_ref().ok_or(PotentialError::NoGrowth)?;
    let r = (g.m1 as f64 - 1.0) / g.m0;
    let mut q = 2u32;
    while q as f64 <= r {
        q += 2;
    }
    Ok(q)
}

/// `Ψ^{(order)}(x)` for `Ψ(x) = x/(1+αx^q)`.
pub fn psi_derivs(alpha: f64, q: u32, x: f64, order: usize) -> Result<f64, PotentialError> {
    let qf = q as f64;
    let xq = x.powi(q as i32);
    let d = 1.0 + alpha * xq;
    let pw = |e: i32| if e == 0 { 1.0 } else { x.powi(e) };
    let qi = q as i32;
    Ok(match order {
        0 => x / d,
        1 => (1.0 - alpha * (qf - 1.0) * xq) / (d * d),
        2 => alpha * qf * pw(qi - 1) * (-alpha * xq + qf * (alpha * xq - 1.0) - 1.0) / d.powi(3),
        3 => {
            alpha * pw(qi - 2) * (qf * d * d - qf.powi(3) * (alpha * xq * (alpha * xq - 4.0) + 1.0))
                / d.powi(4)
        }
        4 => {
            let c3 = alpha.powi(3) * (qf - 1.0) * (qf + 1.0) * (qf + 2.0);
            let c2 = -alpha * alpha * (11.0 * qf.powi(3) + 6.0 * qf * qf + qf + 6.0);
            let c1 = alpha * (qf - 1.0) * (qf * (11.0 * qf + 5.0) + 6.0);
            let c0 = -qf.powi(3) + 2.0 * qf * qf + qf - 2.0;
            let mut s = c3 * pw(4 * qi - 3) + c2 * pw(3 * qi - 3) + c1 * pw(2 * qi - 3);
            if c0 != 0.0 {
                s += c0 * x.powi(qi - 3);
            }
            alpha * qf * s / d.powi(5)
        }
        o => return Err(PotentialError::BadOrder(o)),
    })
}

pub fn psi_m_derivs(reg: &RegularizationSpec, m: usize, x: f64, order: usize) -> Result<f64, PotentialError> {
    psi_derivs(reg.alpha(m)?, reg.q, x, order)
}

/// `φ_m^{(order)}(x)` by the chain rule through order 4.
pub fn phi_m_derivs(
    phi: &PhiSpec,
    reg: &RegularizationSpec,
    m: usize,
    x: f64,
    order: usize,
) -> Result<f64, PotentialError> {
    let alpha = reg.alpha(m)?;
    phi_m_with_alpha(phi, alpha, reg.q, x, order)
}

fn phi_m_with_alpha(phi: &PhiSpec, alpha: f64, q: u32, x: f64, order: usize) -> Result<f64, PotentialError> {
    let f = phi.value(x);
    let p = |k| psi_derivs(alpha, q, f, k);
    if order == 0 {
        return p(0);
    }
    let f1 = phi.deriv(x, 1);
    Ok(match order {
        1 => p(1)? * f1,
        2 => {
            let f2 = phi.deriv(x, 2);
            p(2)? * f1 * f1 + p(1)? * f2
        }
        3 => {
            let (f2, f3) = (phi.deriv(x, 2), phi.deriv(x, 3));
            p(3)? * f1.powi(3) + 3.0 * p(2)? * f1 * f2 + p(1)? * f3
        }
        4 => {
            let (f2, f3, f4) = (phi.deriv(x, 2), phi.deriv(x, 3), phi.deriv(x, 4));
            p(4)? * f1.powi(4)
                + 6.0 * p(3)? * f1 * f1 * f2
                + 3.0 * p(2)? * f2 * f2
                + 4.0 * p(2)? * f1 * f3
                + p(1)? * f4
        }
        o => return Err(PotentialError::BadOrder(o)),
    })
}

/// `max_{x ∈ grid} |φ_m^{(j)}(x)| / (1+|x|^{j(m1-1)})`.
pub fn normalized_derivative_sup(
    phi: &PhiSpec,
    reg: &RegularizationSpec,
    m: usize,
    j: usize,
    grid: &ProbeGrid,
) -> Result<f64, PotentialError> {
    let g = phi.growth.as_ref().ok_or(PotentialError::NoGrowth)?;
    let e = (j * (g.m1 as usize - 1)) as i32;
    let mut best: f64 = 0.0;
    for x in grid.iter() {
        let v = phi_m_derivs(phi, reg, m, x, j)?.abs() / (1.0 + x.abs().powi(e));
        best = best.max(v);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Quadrature and superposition functionals
// ---------------------------------------------------------------------------

/// Composite Gauss–Legendre rule on (0,1).
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on [-1,1] by Newton iteration.
fn gauss_legendre_ref(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

impl Quadrature {
    /// `nodes` points: 8-point panels when `nodes` is a multiple of 8,
    /// otherwise a single panel.
    pub fn gauss_legendre(nodes: usize) -> Result<Self, PotentialError> {
        if nodes < 2 {
            return Err(PotentialError::TooFewNodes(nodes));
        }
        let (order, panels) = if nodes.is_multiple_of(8) { (8, nodes / 8) } else { (nodes, 1) };
        let (rx, rw) = gauss_legendre_ref(order);
        let h = 1.0 / panels as f64;
        let mut q = Quadrature { nodes: Vec::with_capacity(nodes), weights: Vec::with_capacity(nodes) };
        for p in 0..panels {
            let a = p as f64 * h;
            for (x, w) in rx.iter().zip(&rw) {
                q.nodes.push(a + 0.5 * h * (x + 1.0));
                q.weights.push(0.5 * h * w);
            }
        }
        Ok(q)
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Which scalar function enters the superposition functional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum PotentialVariant {
    Zero,
    Raw,
    Regularized { m: usize },
}

/// `Φ_n` or `Φ_n^m` with a precomputed basis table at the quadrature nodes.
#[derive(Clone, Debug)]
pub struct Superposition {
    phi: PhiSpec,
    alpha_q: Option<(f64, u32)>,
    n: usize,
    quad: Quadrature,
    table: Vec<f64>,
    quadratic: Option<f64>,
}

impl Superposition {
    pub fn new(
        phi: &PhiSpec,
        reg: Option<&RegularizationSpec>,
        variant: PotentialVariant,
        n: usize,
        quad: Quadrature,
    ) -> Result<Self, PotentialError> {
        let (phi, alpha_q) = match variant {
            PotentialVariant::Zero => (PhiSpec::zero(), None),
            PotentialVariant::Raw => (phi.clone(), None),
            PotentialVariant::Regularized { m } => {
                let reg = reg.ok_or_else(|| PotentialError::BadRegularization("missing spec".into()))?;
                (phi.clone(), Some((reg.alpha(m)?, reg.q)))
            }
        };
        let quadratic = if alpha_q.is_none() { phi.pure_quadratic() } else { None };
        let mut table = Vec::with_capacity(quad.nodes.len() * n);
        for &xi in &quad.nodes {
            for k in 1..=n {
                table.push(basis(k, xi));
            }
        }
        Ok(Self { phi, alpha_q, n, quad, table, quadratic })
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.phi.is_zero()
    }

    fn scalar(&self, x: f64, order: usize) -> f64 {
        match self.alpha_q {
            None => self.phi.deriv(x, order),
            Some((a, q)) => phi_m_with_alpha(&self.phi, a, q, x, order).expect("order within 0..=4"),
        }
    }

    fn field_at(&self, j: usize, u: &[f64]) -> f64 {
        let row = &self.table[j * self.n..(j + 1) * self.n];
        row.iter().zip(u).map(|(d, c)| d * c).sum()
    }

    /// Value by quadrature, ignoring any closed form.
    pub fn value_quadrature(&self, u: &[f64]) -> f64 {
        (0..self.quad.nodes.len())
            .map(|j| self.quad.weights[j] * self.scalar(self.field_at(j, u), 0))
            .sum()
    }

    /// Gradient by quadrature, ignoring any closed form.
    pub fn grad_quadrature(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.quad.nodes.len() {
            let s = self.quad.weights[j] * self.scalar(self.field_at(j, u), 1);
            let row = &self.table[j * self.n..(j + 1) * self.n];
            for (o, d) in out.iter_mut().zip(row) {
                *o += s * d;
            }
        }
    }

    /// `Φ(P_n u)`; `u` may be longer than `n`.
    pub fn value(&self, u: &[f64]) -> f64 {
        if self.phi.is_zero() {
            return 0.0;
        }
        let u = &u[..self.n.min(u.len())];
        match self.quadratic {
            Some(a) => a * u.iter().map(|c| c * c).sum::<f64>() - self.phi.shift,
            None => self.value_quadrature(u),
        }
    }

    /// `∂_iΦ(P_n u)` for i = 1..n written to `out[..n]`.
    pub fn grad(&self, u: &[f64], out: &mut [f64]) {
        let u = &u[..self.n.min(u.len())];
        let out = &mut out[..self.n];
        if self.phi.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        match self.quadratic {
            Some(a) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (o, c) in out.iter_mut().zip(u) {
                    *o = 2.0 * a * c;
                }
            }
            None => self.grad_quadrature(u, out),
        }
    }
}

/// `Φ_n(u) = ∫₀¹ φ(P_n u(ξ)) dξ` by quadrature.
pub fn phi_n(phi: &PhiSpec, u: &SpectralVector, n: usize, quad: &Quadrature) -> Result<f64, PotentialError> {
    let s = Superposition::new(phi, None, PotentialVariant::Raw, n, quad.clone())?;
    Ok(s.value_quadrature(u.project(n).coeffs()))
}

/// `Φ_n^m(u) = ∫₀¹ φ_m(P_n u(ξ)) dξ`.
pub fn phi_n_m(
    phi: &PhiSpec,
    reg: &RegularizationSpec,
    m: usize,
    u: &SpectralVector,
    n: usize,
    quad: &Quadrature,
) -> Result<f64, PotentialError> {
    let s = Superposition::new(phi, Some(reg), PotentialVariant::Regularized { m }, n, quad.clone())?;
    Ok(s.value_quadrature(u.project(n).coeffs()))
}

/// Gradient of `Φ_n` in the first `n` modes, padded with zeros to `dim(u)`.
pub fn grad_phi_n(
    phi: &PhiSpec,
    u: &SpectralVector,
    n: usize,
    quad: &Quadrature,
) -> Result<SpectralVector, PotentialError> {
    let s = Superposition::new(phi, None, PotentialVariant::Raw, n, quad.clone())?;
    let mut out = vec![0.0; n.max(u.dim())];
    s.grad_quadrature(u.project(n).coeffs(), &mut out[..n]);
    Ok(SpectralVector::new(out).expect("finite gradient"))
}

// ---------------------------------------------------------------------------
// Moreau–Yosida envelope of the convex part
// ---------------------------------------------------------------------------

/// `(φ_t(y), φ_t'(y))` with `φ_t(y) = inf_x { φ₁(x) + (y-x)²/(2t) }`.
pub fn moreau_yosida(phi: &PhiSpec, t: f64, y: f64) -> Result<(f64, f64), PotentialError> {
    if !(t > 0.0) {
        return Err(PotentialError::BadTime(t));
    }
    phi.check_convex(&ProbeGrid::default())?;
    let p = prox(phi, t, y);
    let value = phi.convex_deriv(p, 0) + (y - p) * (y - p) / (2.0 * t);
    Ok((value, (y - p) / t))
}

/// Root of `φ₁'(x) + (x - y)/t`, bracketed by `[y - tφ₁'(y), y]`.
fn prox(phi: &PhiSpec, t: f64, y: f64) -> f64 {
    let g = |x: f64| phi.convex_deriv(x, 1) + (x - y) / t;
    let other = y - t * phi.convex_deriv(y, 1);
    let (mut lo, mut hi) = if other <= y { (other, y) } else { (y, other) };
    if g(lo) == 0.0 {
        return lo;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = phi.convex_deriv(x, 2) + 1.0 / t;
        let newton = x - gx / slope;
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// `∫₀¹ φ_t(u(ξ)) dξ`; the prox of a superposition acts pointwise on field values.
pub fn moreau_yosida_superposition(
    phi: &PhiSpec,
    t: f64,
    u: &SpectralVector,
    quad: &Quadrature,
) -> Result<f64, PotentialError> {
    let mut total = 0.0;
    for (xi, w) in quad.nodes.iter().zip(&quad.weights) {
        let val: f64 = u.coeffs().iter().enumerate().map(|(i, c)| c * basis(i + 1, *xi)).sum();
        total += w * moreau_yosida(phi, t, val)?.0;
    }
    Ok(total)
}
