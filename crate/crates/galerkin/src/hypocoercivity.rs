//! Hypocoercivity constants, the rate `θ₂`, the ergodic-average bound, and
//! the Monte-Carlo experiments that confront them.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::coefficients::{CoefficientError, CoefficientSpec, Coefficients};
use crate::galerkin_sde::{GalerkinSystem, Integrator, SdeError};
use crate::kolmogorov::{mu_phi_expectation, sample_mu_phi, Cylinder, KolmogorovError};
use crate::mc::{derive_stream, stream_rng, MeanSe, WeightedEstimate};
use crate::potential::PhiSpec;
use crate::spectral_gaussian::{lambda_pow, GaussianSpec};

#[derive(Debug, Error)]
pub enum HypocError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("perturbation has unbounded {0}")]
    Unbounded(&'static str),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Kolmogorov(#[from] KolmogorovError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

// ---------------------------------------------------------------------------
// Constants
// ---------------------------------------------------------------------------

/// Velocity Poincaré constant `c_S = ω₂₂ / λ₁^{α₂}` with `ω₂₂ = 1`.
pub fn compute_cs(spec: &CoefficientSpec) -> f64 {
    1.0 / lambda_pow(1, spec.alpha2)
}

/// `c_S = ω₂₂ / lam2[0]` with `ω₂₂ = min_k lower[k] / lam2[k]`.
pub fn compute_cs_from_lower_bound(lower: &[f64], lam2: &[f64]) -> f64 {
    let omega = lower.iter().zip(lam2).map(|(l, q)| l / q).fold(f64::INFINITY, f64::min);
    omega / lam2[0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaReport {
    /// `min_{k ≤ n} λ_k^{2σ₁-α₂-α₁}`
    pub omega12: f64,
    pub argmin_k: usize,
    /// Set when the minimum sits at `k = n`, i.e. the gap may vanish as `n → ∞`.
    pub vanishing_gap: bool,
    pub osc: f64,
    pub c_a: f64,
}

/// Position Poincaré constant `c_A = ω₁₂ / (λ₁^{α₁} e^{osc(φ₂)})`.
pub fn compute_ca(spec: &CoefficientSpec, phi: &PhiSpec, n: usize) -> Result<CaReport, HypocError> {
    if n == 0 {
        return Err(HypocError::Domain("truncation must be positive".into()));
    }
    let osc = phi.perturbation_oscillation().ok_or(HypocError::Unbounded("oscillation"))?;
    let p = 2.0 * spec.sigma1 - spec.alpha2 - spec.alpha1;
    let (argmin_k, omega12) = (1..=n)
        .map(|k| (k, lambda_pow(k, p)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    Ok(CaReport {
        omega12,
        argmin_k,
        vanishing_gap: n > 1 && argmin_k == n,
        osc,
        c_a: omega12 / (lambda_pow(1, spec.alpha1) * osc.exp()),
    })
}

/// `c_{Φ₂} = sup|φ₂''| · ‖C‖` with `‖C‖ = max_{k ≤ n} λ_k^{2σ₁-α₂}`.
pub fn compute_c_phi2(spec: &CoefficientSpec, phi: &PhiSpec, n: usize) -> Result<f64, HypocError> {
    let s2 = phi.perturbation_sup_second().ok_or(HypocError::Unbounded("second derivative"))?;
    let c_norm = (1..=n.max(1)).map(|k| lambda_pow(k, 2.0 * spec.sigma1 - spec.alpha2)).fold(0.0, f64::max);
    Ok(s2 * c_norm)
}

/// Components of `c₁ = ½(√C₁ + √C₂ + √M₂₂)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Components {
    /// `C₁ = sup_k (λ_k^{α₂} + λ_k^{σ₂})² λ_k^{-2α₂}`
    pub cap_c1: f64,
    /// Largest sampled `C̄₂(v) = sup_k K₂(v)_k² λ_k^{-3α₂}`.
    pub c2_bar_sup: f64,
    /// `C₂ = ∫ C̄₂(v) ‖v‖² dμ₂`
    pub cap_c2: MeanSe,
    /// `M₂₂ = ∫ ‖α^{22}(v)‖²_{ℓ²} dμ₂`
    pub m22: MeanSe,
    /// `4 Σ_{k≤n} λ_k^{2σ₃-α₂} · ∫(2 + ‖v‖)² dμ₂`, the integral bounded by Jensen.
    pub m22_bound: f64,
    pub c1: f64,
}

/// `C₁` in closed form; `C₂`, `M₂₂` by Monte Carlo over `μ₂` at truncation `n`.
pub fn compute_c1(spec: &CoefficientSpec, n: usize, mc_budget: usize, seed: u64) -> Result<C1Components, CoefficientError> {
    let co = Coefficients::new(spec, n)?;
    let cap_c1 = (0..n).map(|k| (co.base22[k] / co.lam2[k]).powi(2)).fold(0.0, f64::max);
    let trace: f64 = co.lam2.iter().sum();
    let m22_bound = 4.0
        * (1..=n).map(|k| lambda_pow(k, 2.0 * spec.sigma3 - spec.alpha2)).sum::<f64>()
        * (4.0 + 4.0 * trace.sqrt() + trace);
    let zero = MeanSe { mean: 0.0, se: 0.0 };
    if !co.has_bumps() || mc_budget == 0 {
        let (cap_c2, m22, c2_bar_sup) = if co.has_bumps() { (MeanSe { mean: f64::NAN, se: f64::NAN }, MeanSe { mean: f64::NAN, se: f64::NAN }, f64::NAN) } else { (zero, zero, 0.0) };
        let c1 = 0.5 * (cap_c1.sqrt() + cap_c2.mean.sqrt() + m22.mean.sqrt());
        return Ok(C1Components { cap_c1, c2_bar_sup, cap_c2, m22, m22_bound, c1 });
    }
    let mu2 = GaussianSpec::new(spec.alpha2, n).map_err(|e| CoefficientError::Invalid(e.to_string()))?;
    let sd = mu2.std_devs();
    let mut rng = stream_rng(seed, 0xC1);
    let (mut y, mut lam, mut div) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut c2_samples = Vec::with_capacity(mc_budget);
    let mut m22_samples = Vec::with_capacity(mc_budget);
    let mut c2_bar_sup: f64 = 0.0;
    let lam3: Vec<f64> = (1..=n).map(|k| lambda_pow(k, 3.0 * spec.alpha2)).collect();
    for _ in 0..mc_budget {
        mu2.sample_into(&mut rng, &sd, &mut y);
        co.lambda22_and_divergence(&y, &mut lam, &mut div);
        let c2_bar = (0..n).map(|k| (lam[k] - co.base22[k]).powi(2) / lam3[k]).fold(0.0, f64::max);
        c2_bar_sup = c2_bar_sup.max(c2_bar);
        c2_samples.push(c2_bar * y.iter().map(|v| v * v).sum::<f64>());
        m22_samples.push((0..n).map(|k| div[k] * div[k] / co.lam2[k]).sum());
    }
    let cap_c2 = MeanSe::from_samples(&c2_samples);
    let m22 = MeanSe::from_samples(&m22_samples);
    let c1 = 0.5 * (cap_c1.sqrt() + cap_c2.mean.sqrt() + m22.mean.sqrt());
    Ok(C1Components { cap_c1, c2_bar_sup, cap_c2, m22, m22_bound, c1 })
}

/// Convergence rate for prefactor `θ₁ > 1`.
pub fn theta2(theta1: f64, c_s: f64, c_a: f64, c1: f64, c_phi2: f64) -> Result<f64, HypocError> {
    if !(theta1 > 1.0) || !theta1.is_finite() {
        return Err(HypocError::Domain(format!("theta1 must exceed 1, got {theta1}")));
    }
    if !(c_s > 0.0 && c_a > 0.0 && c1 > 0.0) {
        return Err(HypocError::Domain(format!("c_S, c_A, c1 must be positive, got {c_s}, {c_a}, {c1}")));
    }
    if !(c_phi2 >= 0.0) {
        return Err(HypocError::Domain(format!("c_Phi2 must be nonnegative, got {c_phi2}")));
    }
    let c2 = (8.0 + c_phi2 / 4.0).sqrt();
    let r = c_a / (1.0 + c_a);
    let big = 1.0 + c1 + c2;
    let denom = big * (1.0 + (1.0 + c_a) / (2.0 * c_a) * big) + 0.5 * r;
    Ok(0.5 * (theta1 - 1.0) / theta1 * c_s.min(c1) / denom * r)
}

/// `t^{-1/2} √(2θ₁/θ₂ (1 - (1 - e^{-tθ₂})/(tθ₂))) · norm`.
pub fn ergodic_bound(t: f64, theta1: f64, theta2: f64, norm: f64) -> Result<f64, HypocError> {
    if !(t > 0.0) {
        return Err(HypocError::Domain(format!("t must be positive, got {t}")));
    }
    if !(theta2 > 0.0) {
        return Err(HypocError::Domain(format!("theta2 must be positive, got {theta2}")));
    }
    let x = t * theta2;
    if x < 1e-6 {
        // 2θ₁/(tθ₂)·(x/2 - x²/6) = θ₁(1 - x/3)
        return Ok((theta1 * (1.0 - x / 3.0)).sqrt() * norm);
    }
    let paren = 1.0 - (-(-x).exp_m1()) / x;
    Ok((2.0 * theta1 / theta2 * paren).sqrt() / t.sqrt() * norm)
}

/// All constants entering `θ₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypocConstants {
    pub n: usize,
    pub c_s: f64,
    pub c_a: f64,
    pub c_phi2: f64,
    pub cap_c1: f64,
    pub cap_c2: f64,
    pub m22: f64,
    pub c1: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub ca_report: CaReport,
    pub c1_components: C1Components,
}

impl HypocConstants {
    pub fn compute(
        spec: &CoefficientSpec,
        phi: &PhiSpec,
        n: usize,
        mc_budget: usize,
        seed: u64,
        theta1: f64,
    ) -> Result<Self, HypocError> {
        let c_s = compute_cs(spec);
        let ca_report = compute_ca(spec, phi, n)?;
        let c_phi2 = compute_c_phi2(spec, phi, n)?;
        let comp = compute_c1(spec, n, mc_budget, seed)?;
        let th2 = theta2(theta1, c_s, ca_report.c_a, comp.c1, c_phi2)?;
        Ok(Self {
            n,
            c_s,
            c_a: ca_report.c_a,
            c_phi2,
            cap_c1: comp.cap_c1,
            cap_c2: comp.cap_c2.mean,
            m22: comp.m22.mean,
            c1: comp.c1,
            theta1,
            theta2: th2,
            ca_report,
            c1_components: comp,
        })
    }
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub rows: Vec<CurveRow>,
    /// Kish effective size of the outer importance sample (decay only).
    pub ess: Option<f64>,
    pub degenerate: bool,
    /// Paths dropped after blow-up.
    pub excluded: usize,
}

impl Curve {
    /// Rows violating `estimate ≤ bound + k·SE`.
    pub fn bound_violations(&self, k: f64) -> Vec<CurveRow> {
        self.rows.iter().filter(|r| r.bound.is_some_and(|b| r.estimate > b + k * r.se)).copied().collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HypocError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "estimate", "se", "bound"])?;
        for r in &self.rows {
            wr.write_record([
                r.t.to_string(),
                r.estimate.to_string(),
                r.se.to_string(),
                r.bound.map(|b| b.to_string()).unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `√(z + SE) - √z` style error for a square root of a noisy nonnegative mean.
fn sqrt_with_se(z: f64, se: f64) -> (f64, f64) {
    let z = z.max(0.0);
    let r = z.sqrt();
    (r, (z + se).sqrt() - r)
}

type StepStats = Vec<(f64, f64)>;

/// Nested Monte-Carlo estimate of `‖T_t f - μ^Φ(f)‖_{L²(μ^Φ)}` at each time.
///
/// Outer states come from the importance sample of `μ^Φ`; each carries
/// `inner` paths. The inner sample variance divided by the inner count is
/// subtracted from the squared deviation, which removes the nesting bias.
/// With `rate = Some((θ₁, θ₂))` the bound column is `θ₁ e^{-θ₂ t}` times the
/// estimate at `t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_decay(
    system: &GalerkinSystem,
    f: &Cylinder,
    times: &[f64],
    outer: usize,
    inner: usize,
    seed: u64,
    integ: Integrator,
    rate: Option<(f64, f64)>,
) -> Result<Curve, HypocError> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(HypocError::Domain("times must be nonnegative and ascending".into()));
    }
    if outer < 2 || inner < 2 {
        return Err(HypocError::Domain("need at least two outer states and two inner paths".into()));
    }
    let n = system.n();
    if f.base_dim() > n {
        return Err(KolmogorovError::Truncation { needed: f.base_dim(), n }.into());
    }
    let sample = sample_mu_phi(&system.ctx, outer, derive_stream(seed, 0xDE));
    let steps: Vec<usize> = times.iter().map(|&t| integ.steps_for(t)).collect();
    let mut uniq = steps.clone();
    uniq.dedup();
    // per outer state: (mean, variance/count) at each unique step, excluded count
    let per_state: Vec<(Option<StepStats>, usize)> = (0..outer)
        .into_par_iter()
        .map(|i| {
            let (x, y) = sample.state(i);
            let mut w0 = x.to_vec();
            w0.extend_from_slice(y);
            let mut sums = vec![(0.0, 0.0); uniq.len()];
            let mut ok = 0usize;
            for j in 0..inner {
                let mut rng = stream_rng(seed, derive_stream(i as u64 + 1, j as u64));
                if let Ok(v) = system.values_at_steps(f, &w0, &uniq, integ, &mut rng) {
                    ok += 1;
                    for (s, v) in sums.iter_mut().zip(v) {
                        s.0 += v;
                        s.1 += v * v;
                    }
                }
            }
            if ok < 2 {
                return (None, inner);
            }
            let k = ok as f64;
            let stats = sums
                .iter()
                .map(|&(s, s2)| {
                    let m = s / k;
                    let var = ((s2 - k * m * m) / (k - 1.0)).max(0.0);
                    (m, var / k)
                })
                .collect();
            (Some(stats), inner - ok)
        })
        .collect();
    let excluded = per_state.iter().map(|p| p.1).sum();
    let kept: Vec<(f64, &Vec<(f64, f64)>)> = per_state
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.0.as_ref().map(|s| (sample.weights[i], s)))
        .collect();
    if kept.len() < 2 {
        return Err(SdeError::AllPathsFailed(outer * inner).into());
    }
    let weights: Vec<f64> = kept.iter().map(|k| k.0).collect();
    let mut rows = Vec::with_capacity(times.len());
    let mut z = vec![0.0; kept.len()];
    let mut ess = 0.0;
    let mut degenerate = false;
    for (ti, &t) in times.iter().enumerate() {
        let u = uniq.iter().position(|&s| s == steps[ti]).expect("step present");
        let means: Vec<f64> = kept.iter().map(|k| k.1[u].0).collect();
        let center = WeightedEstimate::new(&weights, &means).estimate;
        for (zi, k) in z.iter_mut().zip(&kept) {
            let (m, v) = k.1[u];
            *zi = (m - center) * (m - center) - v;
        }
        let e = WeightedEstimate::new(&weights, &z);
        ess = e.ess;
        degenerate = e.degenerate;
        let (est, se) = sqrt_with_se(e.estimate, e.se);
        rows.push(CurveRow { t, estimate: est, se, bound: None });
    }
    if let Some((th1, th2)) = rate {
        let base = rows.first().map(|r| r.estimate).unwrap_or(0.0);
        let t0 = rows.first().map(|r| r.t).unwrap_or(0.0);
        for r in &mut rows {
            r.bound = Some(th1 * (-th2 * (r.t - t0)).exp() * base);
        }
    }
    Ok(Curve { rows, ess: Some(ess), degenerate, excluded })
}

/// Exact draw from `μ^Φ` by rejection from `μ₁ ⊗ μ₂` with acceptance `e^{-Φ}`.
pub fn sample_mu_phi_exact<R: Rng>(system: &GalerkinSystem, rng: &mut R) -> Vec<f64> {
    let n = system.n();
    let spec = &system.ctx.coeffs.spec;
    let mu1 = GaussianSpec::new(spec.alpha1, n).expect("validated");
    let mu2 = GaussianSpec::new(spec.alpha2, n).expect("validated");
    let (sd1, sd2) = (mu1.std_devs(), mu2.std_devs());
    let mut w = vec![0.0; 2 * n];
    loop {
        let (x, y) = w.split_at_mut(n);
        mu1.sample_into(rng, &sd1, x);
        let accept = (-system.ctx.potential.value(x)).exp().min(1.0);
        if rng.random::<f64>() < accept {
            mu2.sample_into(rng, &sd2, y);
            return w;
        }
    }
}

/// `μ^Φ(g)` and `‖g - μ^Φ(g)‖_{L²(μ^Φ)}` by importance sampling.
pub fn centered_norm(system: &GalerkinSystem, g: &Cylinder, budget: usize, seed: u64) -> Result<(WeightedEstimate, f64), HypocError> {
    let mean = mu_phi_expectation(&system.ctx, |x, y| g.value(x, y), budget, seed)?;
    let m = mean.estimate;
    let var = mu_phi_expectation(&system.ctx, |x, y| (g.value(x, y) - m).powi(2), budget, seed)?;
    Ok((mean, var.estimate.max(0.0).sqrt()))
}

/// Root-mean-square error of the time average `t⁻¹∫₀ᵗ g(X_s) ds - μ^Φ(g)`
/// over `reps` stationary trajectories, at each time in `times`.
///
/// With `bound = Some((θ₁, θ₂, ‖g - μ^Φ(g)‖))` the bound column holds
/// [`ergodic_bound`].
#[allow(clippy::too_many_arguments)]
pub fn estimate_ergodic_error(
    system: &GalerkinSystem,
    g: &Cylinder,
    times: &[f64],
    reps: usize,
    seed: u64,
    integ: Integrator,
    reference: f64,
    bound: Option<(f64, f64, f64)>,
) -> Result<Curve, HypocError> {
    if reps < 30 {
        return Err(HypocError::Domain(format!("need at least 30 repetitions, got {reps}")));
    }
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(HypocError::Domain("times must be positive and ascending".into()));
    }
    let n = system.n();
    if g.base_dim() > n {
        return Err(KolmogorovError::Truncation { needed: g.base_dim(), n }.into());
    }
    let steps: Vec<usize> = times.iter().map(|&t| integ.steps_for(t).max(1)).collect();
    let last = *steps.last().unwrap();
    let errors: Vec<Result<Vec<f64>, SdeError>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, derive_stream(0xE6, r as u64));
            let w0 = sample_mu_phi_exact(system, &mut rng);
            let (mut x, mut y) = (w0[..n].to_vec(), w0[n..].to_vec());
            let mut prev = g.value(&x, &y);
            let mut acc = crate::mc::NeumaierSum::new();
            let mut out = Vec::with_capacity(steps.len());
            let mut next = 0;
            system.run(&mut x, &mut y, integ, last, &mut rng, |s, x, y| {
                let v = g.value(x, y);
                acc.add(0.5 * (prev + v));
                prev = v;
                while next < steps.len() && steps[next] == s {
                    out.push(acc.value() / s as f64 - reference);
                    next += 1;
                }
            })?;
            Ok(out)
        })
        .collect();
    let ok: Vec<Vec<f64>> = errors.into_iter().filter_map(Result::ok).collect();
    if ok.len() < 2 {
        return Err(SdeError::AllPathsFailed(reps).into());
    }
    let mut rows = vec![];
    for (i, &t) in times.iter().enumerate() {
        let sq: Vec<f64> = ok.iter().map(|e| e[i] * e[i]).collect();
        let m = MeanSe::from_samples(&sq);
        let (rms, se) = sqrt_with_se(m.mean, m.se);
        let b = match bound {
            Some((th1, th2, norm)) => Some(ergodic_bound(t, th1, th2, norm)?),
            None => None,
        };
        rows.push(CurveRow { t, estimate: rms, se, bound: b });
    }
    Ok(Curve { rows, ess: None, degenerate: false, excluded: reps - ok.len() })
}
