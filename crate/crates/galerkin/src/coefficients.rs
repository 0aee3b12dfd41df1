//! Power-diagonal operators and the state-dependent diffusion `K₂₂`.
//!
//! ```text
//! Q₁ = Q^{α₁}, Q₂ = Q^{α₂}, K₁₂ = K₂₁ = Q^{σ₁}
//! λ_{22,k}(v) = λ_k^{α₂} + λ_k^{σ₂} + λ_k^{σ₃} ψ_k(p_k v) / ‖ψ_k‖_{C⁴}
//! ```
//!
//! `ψ_k(y) = Π_{j ≤ min(k,3)} b(y_j)` with the C⁴ bump `b(t) = (1 - t²/4)⁵`
//! on `|t| < 2`.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::OnceLock;
use thiserror::Error;

use crate::hypocoercivity;
use crate::mc::{stream_rng, MeanSe};
use crate::potential::{PhiSpec, ProbeGrid};
use crate::spectral_gaussian::{lambda_pow, GaussianSpec, SpectralVector};

#[derive(Debug, Error, PartialEq)]
pub enum CoefficientError {
    #[error("invalid coefficient spec: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Bump family
// ---------------------------------------------------------------------------

/// `b^{(order)}(t)` for `b(t) = (1 - t²/4)⁵`, zero outside `(-2, 2)`.
pub fn bump(t: f64, order: usize) -> f64 {
    if t.abs() >= 2.0 {
        return 0.0;
    }
    let w = 1.0 - 0.25 * t * t;
    let w1 = -0.5 * t;
    let w2 = -0.5;
    match order {
        0 => w.powi(5),
        1 => 5.0 * w.powi(4) * w1,
        2 => 20.0 * w.powi(3) * w1 * w1 + 5.0 * w.powi(4) * w2,
        3 => 60.0 * w * w * w1.powi(3) + 60.0 * w.powi(3) * w1 * w2,
        4 => 120.0 * w * w1.powi(4) + 360.0 * w * w * w1 * w1 * w2 + 60.0 * w.powi(3) * w2 * w2,
        _ => panic!("bump derivative order {order} not supported"),
    }
}

/// `sup |b^{(j)}|`, j = 0..4, from an 8193-point grid on [-2, 2].
pub fn bump_sups() -> &'static [f64; 5] {
    static SUPS: OnceLock<[f64; 5]> = OnceLock::new();
    SUPS.get_or_init(|| {
        let mut s = [0.0f64; 5];
        let pts = 8193;
        for i in 0..pts {
            let t = -2.0 + 4.0 * i as f64 / (pts - 1) as f64;
            for (j, sj) in s.iter_mut().enumerate() {
                *sj = sj.max(bump(t, j).abs());
            }
        }
        s
    })
}

/// `max_{|β| ≤ 4} Π_j sup|b^{(β_j)}|` over multi-indices in `factors` variables.
pub fn product_c4_norm(factors: usize) -> f64 {
    fn rec(s: &[f64; 5], left: usize, budget: usize) -> f64 {
        if left == 0 {
            return 1.0;
        }
        (0..=budget).map(|b| s[b] * rec(s, left - 1, budget - b)).fold(0.0, f64::max)
    }
    rec(bump_sups(), factors, 4)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BumpFamily {
    /// `ψ_k ≡ 0`: constant diffusion.
    None,
    /// Product of `min(k, max_factors)` polynomial bumps.
    Polynomial { max_factors: usize },
}

impl Default for BumpFamily {
    fn default() -> Self {
        BumpFamily::Polynomial { max_factors: 3 }
    }
}

impl BumpFamily {
    pub fn factors(&self, k: usize) -> usize {
        match self {
            BumpFamily::None => 0,
            BumpFamily::Polynomial { max_factors } => k.min(*max_factors),
        }
    }

    /// `‖ψ_k‖_{C⁴}`; zero for the empty family.
    pub fn norm(&self, k: usize) -> f64 {
        match self {
            BumpFamily::None => 0.0,
            _ => product_c4_norm(self.factors(k)),
        }
    }

    /// `ψ_k(p_k v) / ‖ψ_k‖_{C⁴}`.
    pub fn normalized(&self, k: usize, v: &[f64]) -> f64 {
        let f = self.factors(k);
        if f == 0 {
            return 0.0;
        }
        (0..f).map(|j| bump(v.get(j).copied().unwrap_or(0.0), 0)).product::<f64>() / self.norm(k)
    }

    /// `∂_i ψ_k(p_k v) / ‖ψ_k‖_{C⁴}` with 1-based `i`.
    pub fn normalized_partial(&self, k: usize, i: usize, v: &[f64]) -> f64 {
        let f = self.factors(k);
        if i == 0 || i > f {
            return 0.0;
        }
        let at = |j: usize| v.get(j).copied().unwrap_or(0.0);
        (0..f).map(|j| bump(at(j), usize::from(j + 1 == i))).product::<f64>() / self.norm(k)
    }
}

// ---------------------------------------------------------------------------
// Coefficient spec
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    #[serde(default)]
    pub bumps: BumpFamily,
}

impl CoefficientSpec {
    pub fn validate(&self) -> Result<(), CoefficientError> {
        let all = [self.alpha1, self.alpha2, self.sigma1, self.sigma2, self.sigma3];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(CoefficientError::Invalid("exponents must be finite".into()));
        }
        if self.alpha1 <= 0.5 || self.alpha2 <= 0.5 {
            return Err(CoefficientError::Invalid("alpha1 and alpha2 must exceed 1/2".into()));
        }
        if self.sigma1 < 0.0 || self.sigma2 < 0.0 || self.sigma3 < 0.0 {
            return Err(CoefficientError::Invalid("sigma exponents must be nonnegative".into()));
        }
        Ok(())
    }

    /// The parameter set used throughout the reaction-diffusion example:
    /// α₁ = 1.2, α₂ = 0.9, σ₁ = α₁/4 + α₂/2, σ₂ = α₂, σ₃ = 3α₂/2.
    pub fn final_remark() -> Self {
        let (a1, a2) = (1.2, 0.9);
        CoefficientSpec {
            alpha1: a1,
            alpha2: a2,
            sigma1: a1 / 4.0 + a2 / 2.0,
            sigma2: a2,
            sigma3: 1.5 * a2,
            bumps: BumpFamily::default(),
        }
    }

    pub fn min_sigma2_alpha2(&self) -> f64 {
        self.sigma2.min(self.alpha2)
    }
}

/// `λ_{22,k}(v)` for mode `k ≥ 1`.
pub fn lambda22(spec: &CoefficientSpec, k: usize, v: &SpectralVector) -> f64 {
    lambda_pow(k, spec.alpha2)
        + lambda_pow(k, spec.sigma2)
        + lambda_pow(k, spec.sigma3) * spec.bumps.normalized(k, v.coeffs())
}

/// `∂_i λ_{22,k}(v)`; zero for `i > k`.
pub fn lambda22_partials(spec: &CoefficientSpec, k: usize, i: usize, v: &SpectralVector) -> f64 {
    if i > k {
        return 0.0;
    }
    lambda_pow(k, spec.sigma3) * spec.bumps.normalized_partial(k, i, v.coeffs())
}

/// Scales mode `k` by `λ_k^exponent`.
pub fn apply_qpow(exponent: f64, v: &SpectralVector) -> SpectralVector {
    let c = v.coeffs().iter().enumerate().map(|(i, x)| x * lambda_pow(i + 1, exponent)).collect();
    SpectralVector::new(c).expect("finite powers of finite coefficients")
}

/// Per-mode tables for a fixed truncation, used on hot paths.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub spec: CoefficientSpec,
    pub n: usize,
    /// `λ_k^{α₁}`
    pub lam1: Vec<f64>,
    /// `λ_k^{α₂}`
    pub lam2: Vec<f64>,
    /// `λ_k^{σ₁}`
    pub k12: Vec<f64>,
    /// `λ_k^{α₂} + λ_k^{σ₂}`
    pub base22: Vec<f64>,
    /// `λ_k^{σ₃} / ‖ψ_k‖_{C⁴}` (zero without bumps)
    pub amp22: Vec<f64>,
    factors: Vec<usize>,
}

impl Coefficients {
    pub fn new(spec: &CoefficientSpec, n: usize) -> Result<Self, CoefficientError> {
        spec.validate()?;
        if n == 0 {
            return Err(CoefficientError::Invalid("truncation must be positive".into()));
        }
        let ks = 1..=n;
        Ok(Self {
            spec: spec.clone(),
            n,
            lam1: ks.clone().map(|k| lambda_pow(k, spec.alpha1)).collect(),
            lam2: ks.clone().map(|k| lambda_pow(k, spec.alpha2)).collect(),
            k12: ks.clone().map(|k| lambda_pow(k, spec.sigma1)).collect(),
            base22: ks.clone().map(|k| lambda_pow(k, spec.alpha2) + lambda_pow(k, spec.sigma2)).collect(),
            amp22: ks
                .clone()
                .map(|k| match spec.bumps.factors(k) {
                    0 => 0.0,
                    _ => lambda_pow(k, spec.sigma3) / spec.bumps.norm(k),
                })
                .collect(),
            factors: ks.map(|k| spec.bumps.factors(k)).collect(),
        })
    }

    pub fn has_bumps(&self) -> bool {
        self.factors.iter().any(|&f| f > 0)
    }

    /// Writes `λ_{22,k}(y)` and the diagonal partials `∂_k λ_{22,k}(y)`.
    pub fn lambda22_and_divergence(&self, y: &[f64], lam22: &mut [f64], div: &mut [f64]) {
        if !self.has_bumps() {
            lam22[..self.n].copy_from_slice(&self.base22);
            div[..self.n].iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        let fmax = self.factors.iter().copied().max().unwrap_or(0);
        let mut b0 = [0.0; 8];
        let mut b1 = [0.0; 8];
        for j in 0..fmax {
            b0[j] = bump(y[j], 0);
            b1[j] = bump(y[j], 1);
        }
        for k in 0..self.n {
            let f = self.factors[k];
            let prod: f64 = b0[..f].iter().product();
            lam22[k] = self.base22[k] + self.amp22[k] * prod;
            div[k] = if k < f {
                let others: f64 = (0..f).filter(|&j| j != k).map(|j| b0[j]).product();
                self.amp22[k] * others * b1[k]
            } else {
                0.0
            };
        }
    }

    /// `λ_{22,k}(y)` only.
    pub fn lambda22_all(&self, y: &[f64], lam22: &mut [f64]) {
        let mut div = vec![0.0; self.n];
        self.lambda22_and_divergence(y, lam22, &mut div);
    }

    /// `∂_i λ_{22,k}(y)` with 1-based indices.
    pub fn partial(&self, k: usize, i: usize, y: &[f64]) -> f64 {
        if i > k || self.factors[k - 1] == 0 {
            return 0.0;
        }
        self.amp22[k - 1] * self.spec.bumps.normalized_partial(k, i, y) * self.spec.bumps.norm(k)
    }
}

// ---------------------------------------------------------------------------
// Parameter regime
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Ge => ">=",
            Relation::Gt => ">",
            Relation::Le => "<=",
            Relation::Lt => "<",
        }
    }

    pub fn strict(self) -> bool {
        matches!(self, Relation::Gt | Relation::Lt)
    }
}

/// Tolerance for inequality evaluation; strict relations need more slack than this.
pub const REGIME_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    MDissipativity,
    Hypocoercivity,
    Process,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: Relation,
    pub strict: bool,
    pub pass: bool,
    /// Verdicts this condition counts towards; empty for advisory rows.
    pub groups: Vec<Verdict>,
    pub rendered: String,
}

impl Condition {
    fn new(name: &str, lhs: f64, relation: Relation, rhs: f64, groups: &[Verdict]) -> Self {
        let pass = match relation {
            Relation::Ge => lhs >= rhs - REGIME_TOL,
            Relation::Gt => lhs > rhs + REGIME_TOL,
            Relation::Le => lhs <= rhs + REGIME_TOL,
            Relation::Lt => lhs < rhs - REGIME_TOL,
        };
        Condition {
            name: name.to_string(),
            lhs,
            rhs,
            relation,
            strict: relation.strict(),
            pass,
            groups: groups.to_vec(),
            rendered: format!("{} {} {}", fmt_num(lhs), relation.symbol(), fmt_num(rhs)),
        }
    }
}

fn fmt_num(x: f64) -> String {
    if x >= f64::MAX {
        "inf".into()
    } else {
        format!("{x:.6}")
    }
}

/// Free parameters of the regularity inequalities; `None` entries are searched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeExtras {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub theta1: f64,
}

impl Default for RegimeExtras {
    fn default() -> Self {
        RegimeExtras { alpha: None, beta: None, gamma: None, theta1: 2.0 }
    }
}

impl RegimeExtras {
    /// β and γ from the closing remark of the reaction-diffusion example.
    pub fn final_remark(spec: &CoefficientSpec) -> Self {
        let (a1, a2) = (spec.alpha1, spec.alpha2);
        RegimeExtras {
            alpha: None,
            beta: Some(1.0 / (2.0 * a2) + 1.0 + (a1 - 1.0) / (16.0 * a2)),
            gamma: Some(1.0 / (4.0 * a2) + 0.5 + (a1 - 1.0) / (8.0 * a2)),
            theta1: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub m_dissipativity: bool,
    pub hypocoercivity: bool,
    pub process: bool,
    pub ergodicity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub conditions: Vec<Condition>,
    pub verdicts: Verdicts,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta1: f64,
    /// Which of α, β, γ were found by search rather than supplied.
    pub searched: Vec<String>,
}

pub const ROW_M_DISSIPATIVITY: &str =
    "M-dissipativity and right process solving the Martingale problem (enlarged state space)";
pub const ROW_PROCESS: &str = "mu^Phi-invariant Hunt process, weak sol. with weakly cont. paths, inf. lifetime";
pub const ROW_HYPOCOERCIVE: &str = "(T_t)_{t>=0} hypocoercive";

impl RegimeReport {
    pub fn failing(&self, group: Verdict) -> Vec<&Condition> {
        self.conditions.iter().filter(|c| c.groups.contains(&group) && !c.pass).collect()
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha = {:.6}, beta = {:.6}, gamma = {:.6}, theta1 = {:.6}", self.alpha, self.beta, self.gamma, self.theta1);
        for (title, group, verdict) in [
            (ROW_M_DISSIPATIVITY, Some(Verdict::MDissipativity), self.verdicts.m_dissipativity),
            (ROW_PROCESS, Some(Verdict::Process), self.verdicts.process),
            (ROW_HYPOCOERCIVE, Some(Verdict::Hypocoercivity), self.verdicts.hypocoercivity),
            ("advisory (not part of any verdict)", None, true),
        ] {
            let _ = writeln!(s, "\n== {title}{}", if group.is_some() { if verdict { "  [PASS]" } else { "  [FAIL]" } } else { "" });
            for c in &self.conditions {
                let member = match group {
                    Some(g) => c.groups.contains(&g),
                    None => c.groups.is_empty(),
                };
                if member {
                    let _ = writeln!(s, "  {:<4} {:<48} {}", if c.pass { "ok" } else { "FAIL" }, c.name, c.rendered);
                }
            }
        }
        let _ = writeln!(s, "\nergodicity: {}", if self.verdicts.ergodicity { "PASS" } else { "FAIL" });
        s
    }
}

/// Smallest point of a geometric grid on [1/8, 64] satisfying both α conditions.
fn search_alpha(spec: &CoefficientSpec) -> f64 {
    let mn = spec.min_sigma2_alpha2();
    let strict_lo = 1.0 / (2.0 * spec.alpha1) + 0.5;
    let lo = 2.0 * ((mn / 2.0 - spec.sigma1) / spec.alpha1 + 1.0);
    (0..=36)
        .map(|j| 0.125 * 2f64.powf(j as f64 / 4.0))
        .find(|&a| a > strict_lo + REGIME_TOL && a >= lo - REGIME_TOL)
        .unwrap_or(64.0)
}

fn search_beta(spec: &CoefficientSpec) -> f64 {
    let (a2, mn) = (spec.alpha2, spec.min_sigma2_alpha2());
    let strict_lo = 1.0 / (2.0 * a2) + mn / a2;
    let lo = (2.0 * (1.0 - mn / (2.0 * a2))).max(2.0 * (1.0 - spec.sigma3 / (2.0 * a2)));
    (strict_lo + 1e-9).max(lo)
}

fn search_gamma(spec: &CoefficientSpec, beta: f64) -> f64 {
    let (a2, mn) = (spec.alpha2, spec.min_sigma2_alpha2());
    let a = 1.0 / (4.0 * a2) + 0.5;
    let b = (beta + 1.0 / (2.0 * a2) + mn / a2) / 4.0;
    a.max(b) + 1e-9
}

/// Evaluates every parameter inequality and aggregates the verdicts.
pub fn check_regime(spec: &CoefficientSpec, phi: &PhiSpec, extras: &RegimeExtras) -> RegimeReport {
    use Relation::*;
    use Verdict::*;
    let CoefficientSpec { alpha1: a1, alpha2: a2, sigma1: s1, sigma2: s2, sigma3: s3, .. } = *spec;
    let mn = spec.min_sigma2_alpha2();

    let mut searched = vec![];
    let alpha = extras.alpha.unwrap_or_else(|| {
        searched.push("alpha".to_string());
        search_alpha(spec)
    });
    let beta = extras.beta.unwrap_or_else(|| {
        searched.push("beta".to_string());
        search_beta(spec)
    });
    let gamma = extras.gamma.unwrap_or_else(|| {
        searched.push("gamma".to_string());
        search_gamma(spec, beta)
    });

    let all = [MDissipativity, Hypocoercivity, Process];
    let md = [MDissipativity];
    let hy = [Hypocoercivity];
    let pr = [Process];
    let mut c = vec![
        Condition::new("alpha1 > 1/2", a1, Gt, 0.5, &all),
        Condition::new("alpha2 > 1/2", a2, Gt, 0.5, &all),
        Condition::new("sigma2 >= 0", s2, Ge, 0.0, &md),
        Condition::new("sigma3 >= min{sigma2,alpha2}/2", s3, Ge, mn / 2.0, &md),
        Condition::new("2 sigma1 - min{sigma2,alpha2} >= 1/2", 2.0 * s1 - mn, Ge, 0.5, &md),
        Condition::new("sigma1 >= alpha2 gamma", s1, Ge, a2 * gamma, &md),
        Condition::new("alpha > 1/(2 alpha1) + 1/2", alpha, Gt, 1.0 / (2.0 * a1) + 0.5, &md),
        Condition::new(
            "alpha >= 2((min{sigma2,alpha2}/2 - sigma1)/alpha1 + 1)",
            alpha,
            Ge,
            2.0 * ((mn / 2.0 - s1) / a1 + 1.0),
            &md,
        ),
        Condition::new("beta > 1/(2 alpha2) + min{sigma2,alpha2}/alpha2", beta, Gt, 1.0 / (2.0 * a2) + mn / a2, &md),
        Condition::new(
            "beta >= max{2(1 - min{sigma2,alpha2}/(2 alpha2)), 2(1 - sigma3/(2 alpha2))}",
            beta,
            Ge,
            (2.0 * (1.0 - mn / (2.0 * a2))).max(2.0 * (1.0 - s3 / (2.0 * a2))),
            &md,
        ),
        Condition::new("gamma > 1/(4 alpha2) + 1/2", gamma, Gt, 1.0 / (4.0 * a2) + 0.5, &md),
        Condition::new(
            "4 gamma - beta > 1/(2 alpha2) + min{sigma2,alpha2}/alpha2",
            4.0 * gamma - beta,
            Gt,
            1.0 / (2.0 * a2) + mn / a2,
            &md,
        ),
        Condition::new("sigma2 > 1/2", s2, Gt, 0.5, &pr),
        Condition::new("sigma3 > 1/2", s3, Gt, 0.5, &pr),
        Condition::new("alpha1/2 + sigma1 - alpha2/2 > 1/2", a1 / 2.0 + s1 - a2 / 2.0, Gt, 0.5, &pr),
        Condition::new("-alpha1/2 + sigma1 + alpha2/2 > 1/2", -a1 / 2.0 + s1 + a2 / 2.0, Gt, 0.5, &pr),
        Condition::new("2 sigma1 >= alpha2", 2.0 * s1, Ge, a2, &pr),
        Condition::new("2 sigma1 - alpha2 <= alpha1/2", 2.0 * s1 - a2, Le, a1 / 2.0, &hy),
        Condition::new("sigma2 >= alpha2", s2, Ge, a2, &hy),
        Condition::new("sigma3 >= 3 alpha2 / 2", s3, Ge, 1.5 * a2, &hy),
        Condition::new("2 sigma1 - alpha2 > 0", 2.0 * s1 - a2, Gt, 0.0, &hy),
    ];
    let eps = -(2.0 * s1 - a2) / (2.0 * s1 - a2 - a1);
    c.push(Condition::new("epsilon = -(2s1-a2)/(2s1-a2-a1) > 0", eps, Gt, 0.0, &hy));
    c.push(Condition::new("epsilon <= 1", eps, Le, 1.0, &hy));
    c.push(Condition::new("theta1 > 1", extras.theta1, Gt, 1.0, &hy));
    let min_curv = ProbeGrid::default().iter().map(|x| phi.convex_deriv(x, 2)).fold(f64::INFINITY, f64::min);
    c.push(Condition::new("phi1 convex: min phi1'' on probe grid >= 0", min_curv, Ge, 0.0, &hy));
    let osc = phi.perturbation_oscillation().unwrap_or(f64::MAX);
    c.push(Condition::new("osc(phi2) < inf", osc, Lt, f64::MAX, &hy));
    let d2 = phi.perturbation_sup_second().unwrap_or(f64::MAX);
    c.push(Condition::new("sup |phi2''| < inf", d2, Lt, f64::MAX, &hy));

    c.push(Condition::new(
        "advisory: alpha2(beta/2 - 1) + sigma1 >= alpha1 alpha/2",
        a2 * (beta / 2.0 - 1.0) + s1,
        Ge,
        a1 * alpha / 2.0,
        &[],
    ));
    c.push(Condition::new("advisory: alpha1 > 1", a1, Gt, 1.0, &[]));
    c.push(Condition::new("advisory: -alpha1 + 4 alpha2 > 2", -a1 + 4.0 * a2, Gt, 2.0, &[]));

    let verdict = |g: Verdict| c.iter().filter(|x| x.groups.contains(&g)).all(|x| x.pass);
    let (m, h, p) = (verdict(MDissipativity), verdict(Hypocoercivity), verdict(Process));
    RegimeReport {
        verdicts: Verdicts { m_dissipativity: m, hypocoercivity: h, process: p, ergodicity: m && h && p },
        conditions: c,
        alpha,
        beta,
        gamma,
        theta1: extras.theta1,
        searched,
    }
}

// ---------------------------------------------------------------------------
// Structural assumptions on K₂₂ at finite truncation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCheck {
    pub name: String,
    pub pass: bool,
    /// Smallest margin observed (positive means satisfied).
    pub slack: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub n: usize,
    pub samples: usize,
    pub checks: Vec<KCheck>,
    pub c1: hypocoercivity::C1Components,
    pub c_s: f64,
    pub c_a: Option<f64>,
}

impl KReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&KCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Partial sums of `Σ λ_k^{2p}` at `n·10^j`, j = 0..3.
pub fn ell2_partial_sums(p: f64, n: usize) -> Vec<f64> {
    let mut out = vec![];
    let mut acc = 0.0;
    let mut k = 1usize;
    for j in 0..4 {
        let upto = n * 10usize.pow(j);
        while k <= upto {
            acc += lambda_pow(k, 2.0 * p);
            k += 1;
        }
        out.push(acc);
    }
    out
}

/// Numerical audit of the structural assumptions on `K₂₂` at truncation `n`.
pub fn check_k_assumptions(
    spec: &CoefficientSpec,
    phi: Option<&PhiSpec>,
    n: usize,
    mc_budget: usize,
    seed: u64,
) -> Result<KReport, CoefficientError> {
    let co = Coefficients::new(spec, n)?;
    let mu2 = GaussianSpec::new(spec.alpha2, n).map_err(|e| CoefficientError::Invalid(e.to_string()))?;
    let sd = mu2.std_devs();
    let mut rng = stream_rng(seed, 0x4b);
    let mut lam = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut k0_slack = f64::INFINITY;
    let mut k6_slack = f64::INFINITY;
    let mut k2_slack = f64::INFINITY;
    let trace_cap: f64 = (1..=n)
        .map(|k| lambda_pow(k, spec.alpha2) + lambda_pow(k, spec.sigma2) + lambda_pow(k, spec.sigma3))
        .sum();
    for _ in 0..mc_budget {
        mu2.sample_into(&mut rng, &sd, &mut y);
        co.lambda22_all(&y, &mut lam);
        for (l, l2) in lam.iter().zip(&co.lam2) {
            k0_slack = k0_slack.min(l - l2);
        }
        k6_slack = k6_slack.min(trace_cap - lam.iter().sum::<f64>());
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 1..=n {
            let a = lambda_pow(k, -spec.alpha2 / 2.0) * co.partial(k, k, &y);
            let cap = 2.0 * (2.0 + norm) * lambda_pow(k, spec.sigma3 - spec.alpha2 / 2.0);
            k2_slack = k2_slack.min(cap - a.abs());
        }
    }
    let p = spec.sigma3 - spec.alpha2 / 2.0;
    let sums = ell2_partial_sums(p, n);
    let summable = 4.0 * p > 1.0 + REGIME_TOL;
    let c1 = hypocoercivity::compute_c1(spec, n, mc_budget, seed)?;
    let c_s = hypocoercivity::compute_cs(spec);
    let c_a = phi.and_then(|phi| hypocoercivity::compute_ca(spec, phi, n).ok().map(|r| r.c_a));
    let mut checks = vec![
        KCheck {
            name: "K0".into(),
            pass: k0_slack >= -1e-15,
            slack: k0_slack,
            detail: "lambda22_k(v) >= lambda_k^alpha2 on sampled v".into(),
        },
        KCheck {
            name: "K2(iii) pointwise".into(),
            pass: k2_slack >= -1e-15,
            slack: k2_slack,
            detail: "|alpha_k^22(v)| <= 2(2+|v|) lambda_k^(sigma3-alpha2/2)".into(),
        },
        KCheck {
            name: "K2(iii) l2 tail".into(),
            pass: summable,
            slack: 4.0 * p - 1.0,
            detail: format!("sum lambda_k^(2(sigma3-alpha2/2)) partial sums at n*10^j: {sums:?}"),
        },
        KCheck {
            name: "K2(iii) M22 finite".into(),
            pass: c1.m22.mean.is_finite() && c1.m22.mean <= c1.m22_bound + 3.0 * c1.m22.se,
            slack: c1.m22_bound - c1.m22.mean,
            detail: format!("M22 = {} +- {}, bound {}", c1.m22.mean, c1.m22.se, c1.m22_bound),
        },
        KCheck {
            name: "K3".into(),
            pass: c_s > 0.0,
            slack: c_s,
            detail: "velocity Poincare constant c_S".into(),
        },
        KCheck {
            name: "K6".into(),
            pass: k6_slack >= -1e-15,
            slack: k6_slack,
            detail: "tr K22(v) <= sum_k (lambda^alpha2 + lambda^sigma2 + lambda^sigma3)".into(),
        },
    ];
    if let Some(ca) = c_a {
        checks.push(KCheck { name: "K4".into(), pass: ca > 0.0, slack: ca, detail: "position Poincare constant c_A".into() });
    }
    Ok(KReport { n, samples: mc_budget, checks, c1, c_s, c_a })
}

/// Sample mean and SE of `‖v‖²` under `μ₂`, used as a reference scale.
pub fn mu2_second_moment(spec: &CoefficientSpec, n: usize, samples: usize, seed: u64) -> MeanSe {
    let mu2 = GaussianSpec::new(spec.alpha2, n).expect("valid spec");
    let sd = mu2.std_devs();
    let mut rng = stream_rng(seed, 0x4d32);
    let mut y = vec![0.0; n];
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            mu2.sample_into(&mut rng, &sd, &mut y);
            y.iter().map(|v| v * v).sum()
        })
        .collect();
    MeanSe::from_samples(&vals)
}
