//! Dirichlet sine basis on (0,1), powers of the covariance `Q = (-∂²)^{-1}`
//! and centred Gaussian measures with diagonal covariance `Q^α`.
//!
//! ```text
//! d_k(ξ) = √2 sin(kπξ),   λ_k = (kπ)^{-2},   Q^α d_k = λ_k^α d_k
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

use crate::mc::stream_rng;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("spectral vector must have at least one mode")]
    Empty,
    #[error("non-finite coefficient at mode {0}")]
    NonFinite(usize),
    #[error("grid point {0} is not inside (0,1)")]
    OutsideDomain(f64),
    #[error("invalid Gaussian spec: {0}")]
    InvalidSpec(String),
}

/// Coefficients of a field in the sine basis; entry `i` is mode `k = i + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SpectralVector {
    coeffs: Vec<f64>,
}

impl SpectralVector {
    pub fn new(coeffs: Vec<f64>) -> Result<Self, SpectralError> {
        if coeffs.is_empty() {
            return Err(SpectralError::Empty);
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(SpectralError::NonFinite(i + 1));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1);
        Self { coeffs: vec![0.0; n] }
    }

    /// Basis vector of mode `k` (1-based) in dimension `n`.
    pub fn unit(n: usize, k: usize) -> Self {
        assert!(k >= 1 && k <= n);
        let mut v = Self::zeros(n);
        v.coeffs[k - 1] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of mode `k` (1-based); zero beyond the stored dimension.
    pub fn mode(&self, k: usize) -> f64 {
        self.coeffs.get(k - 1).copied().unwrap_or(0.0)
    }

    /// Projection onto the first `n` modes, zero-padded if needed.
    pub fn project(&self, n: usize) -> Self {
        let mut c = vec![0.0; n];
        for (dst, src) in c.iter_mut().zip(&self.coeffs) {
            *dst = *src;
        }
        Self { coeffs: c }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }
}

impl TryFrom<Vec<f64>> for SpectralVector {
    type Error = SpectralError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SpectralVector> for Vec<f64> {
    fn from(v: SpectralVector) -> Self {
        v.coeffs
    }
}

/// Eigenvalue `λ_k = (kπ)^{-2}` of the inverse Dirichlet Laplacian.
#[inline]
pub fn lambda(k: usize) -> f64 {
    let kp = k as f64 * PI;
    1.0 / (kp * kp)
}

/// `λ_k^p` computed as `(kπ)^{-2p}`.
#[inline]
pub fn lambda_pow(k: usize, p: f64) -> f64 {
    (k as f64 * PI).powf(-2.0 * p)
}

pub fn dirichlet_eigenvalues(n: usize) -> Vec<f64> {
    (1..=n).map(lambda).collect()
}

/// Basis function `d_k(ξ) = √2 sin(kπξ)`.
#[inline]
pub fn basis(k: usize, xi: f64) -> f64 {
    SQRT_2 * (k as f64 * PI * xi).sin()
}

/// Point values `Σ_k c_k d_k(ξ_j)`.
pub fn evaluate_field(v: &SpectralVector, grid: &[f64]) -> Result<Vec<f64>, SpectralError> {
    grid.iter()
        .map(|&xi| {
            if !(xi > 0.0 && xi < 1.0) {
                return Err(SpectralError::OutsideDomain(xi));
            }
            Ok(v.coeffs.iter().enumerate().map(|(i, c)| c * basis(i + 1, xi)).sum())
        })
        .collect()
}

/// Centred Gaussian on the first `dim` modes with covariance `Q^exponent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub exponent: f64,
    pub dim: usize,
}

impl GaussianSpec {
    pub fn new(exponent: f64, dim: usize) -> Result<Self, SpectralError> {
        if dim == 0 {
            return Err(SpectralError::InvalidSpec("dimension must be positive".into()));
        }
        if !exponent.is_finite() {
            return Err(SpectralError::InvalidSpec("exponent must be finite".into()));
        }
        Ok(Self { exponent, dim })
    }

    /// Variances `λ_k^α`, k = 1..dim.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.dim).map(|k| lambda_pow(k, self.exponent)).collect()
    }

    /// Whether `Q^α` is trace class on the full space.
    pub fn trace_class(&self) -> bool {
        self.exponent > 0.5
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.eigenvalues().into_iter().map(f64::sqrt).collect()
    }

    /// Writes one draw into `out` using `rng`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, sd: &[f64], out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(sd) {
            let z: f64 = rng.sample(StandardNormal);
            *o = s * z;
        }
    }
}

/// `count` i.i.d. draws; draw `i` uses sub-stream `i` of `seed`.
pub fn sample_gaussian(spec: &GaussianSpec, seed: u64, count: usize) -> Vec<SpectralVector> {
    let sd = spec.std_devs();
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut c = vec![0.0; spec.dim];
            spec.sample_into(&mut rng, &sd, &mut c);
            SpectralVector { coeffs: c }
        })
        .collect()
}

/// `q_ij = (Q^α l_i, l_j)`.
pub fn gaussian_moment2(spec: &GaussianSpec, l1: &SpectralVector, l2: &SpectralVector) -> f64 {
    let m = spec.dim.min(l1.dim()).min(l2.dim());
    (1..=m).map(|k| lambda_pow(k, spec.exponent) * l1.mode(k) * l2.mode(k)).sum()
}

/// Odd moments of a centred Gaussian vanish.
pub fn gaussian_moment3(
    _spec: &GaussianSpec,
    _l1: &SpectralVector,
    _l2: &SpectralVector,
    _l3: &SpectralVector,
) -> f64 {
    0.0
}

/// `∫ Π (x, l_i) dμ = q₁₂q₃₄ + q₁₃q₂₄ + q₁₄q₂₃`.
pub fn gaussian_moment4(
    spec: &GaussianSpec,
    l1: &SpectralVector,
    l2: &SpectralVector,
    l3: &SpectralVector,
    l4: &SpectralVector,
) -> f64 {
    let q = |a: &SpectralVector, b: &SpectralVector| gaussian_moment2(spec, a, b);
    q(l1, l2) * q(l3, l4) + q(l1, l3) * q(l2, l4) + q(l1, l4) * q(l2, l3)
}

/// Value of `∫ exp(s‖x‖²) dμ`, which is either finite or infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FerniqueValue {
    Finite(f64),
    Infinite,
}

impl FerniqueValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            FerniqueValue::Finite(v) => Some(v),
            FerniqueValue::Infinite => None,
        }
    }
}

pub fn fernique_integral(spec: &GaussianSpec, s: f64) -> FerniqueValue {
    let l1 = lambda_pow(1, spec.exponent);
    if s >= 1.0 / (2.0 * l1) {
        return FerniqueValue::Infinite;
    }
    let log_prod: f64 = spec.eigenvalues().iter().map(|l| (1.0 - 2.0 * s * l).ln()).sum();
    FerniqueValue::Finite((-0.5 * log_prod).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::MeanSe;
    use proptest::prelude::*;

    #[test]
    fn eigenvalues_match_inverse_squares() {
        let l = dirichlet_eigenvalues(3);
        assert!((l[0] - 0.101_321_183_642_337_77).abs() < 1e-16);
        assert!((l[1] - 1.0 / (4.0 * PI * PI)).abs() < 1e-16);
        assert!((l[2] - 1.0 / (9.0 * PI * PI)).abs() < 1e-16);
        assert!((l[0] * PI * PI - 1.0).abs() < 1e-15);
    }

    #[test]
    fn field_evaluation() {
        let one = SpectralVector::new(vec![1.0]).unwrap();
        assert!((evaluate_field(&one, &[0.5]).unwrap()[0] - SQRT_2).abs() < 1e-15);
        let second = SpectralVector::new(vec![0.0, 1.0]).unwrap();
        assert!(evaluate_field(&second, &[0.5]).unwrap()[0].abs() < 1e-15);
        let both = SpectralVector::new(vec![1.0, 1.0]).unwrap();
        let v = evaluate_field(&both, &[0.25]).unwrap()[0];
        let oracle = SQRT_2 * ((PI / 4.0).sin() + (PI / 2.0).sin());
        assert!((v - oracle).abs() < 1e-14);
        assert!((v - 2.414_213_562_373_095).abs() < 1e-14);
        assert_eq!(evaluate_field(&one, &[1.0]), Err(SpectralError::OutsideDomain(1.0)));
        assert!(evaluate_field(&one, &[0.0]).is_err());
    }

    #[test]
    fn vector_invariants() {
        assert_eq!(SpectralVector::new(vec![]), Err(SpectralError::Empty));
        assert_eq!(SpectralVector::new(vec![1.0, f64::NAN]), Err(SpectralError::NonFinite(2)));
        let parsed: Result<SpectralVector, _> = serde_json::from_str("[]");
        assert!(parsed.is_err());
    }

    #[test]
    fn trace_class_flag() {
        assert!(GaussianSpec::new(0.6, 3).unwrap().trace_class());
        assert!(!GaussianSpec::new(0.5, 3).unwrap().trace_class());
    }

    #[test]
    fn sampler_variance_and_determinism() {
        let spec = GaussianSpec::new(1.0, 4).unwrap();
        let xs = sample_gaussian(&spec, 11, 100_000);
        let v: Vec<f64> = xs.iter().map(|x| x.mode(1).powi(2)).collect();
        let m = MeanSe::from_samples(&v).mean;
        assert!((m / lambda(1) - 1.0).abs() < 0.03);
        assert!(sample_gaussian(&spec, 3, 0).is_empty());
        assert_eq!(sample_gaussian(&spec, 5, 10), sample_gaussian(&spec, 5, 10));
    }

    #[test]
    fn moment4_examples() {
        let spec = GaussianSpec::new(0.9, 5).unwrap();
        let e2 = SpectralVector::unit(5, 2);
        let got = gaussian_moment4(&spec, &e2, &e2, &e2, &e2);
        assert!((got - 3.0 * lambda_pow(2, 0.9).powi(2)).abs() < 1e-15);
        let z = SpectralVector::zeros(5);
        let e1 = SpectralVector::unit(5, 1);
        assert_eq!(gaussian_moment4(&spec, &e1, &e2, &z, &z), 0.0);
        assert_eq!(gaussian_moment3(&spec, &e1, &e1, &e1), 0.0);
    }

    #[test]
    fn moment4_mixed_modes_against_mc() {
        // E[x1² x2²] = λ₁λ₂ for independent coordinates; checked by simulation.
        let spec = GaussianSpec::new(1.0, 2).unwrap();
        let e1 = SpectralVector::unit(2, 1);
        let e2 = SpectralVector::unit(2, 2);
        let exact = gaussian_moment4(&spec, &e1, &e1, &e2, &e2);
        assert!((exact - lambda(1) * lambda(2)).abs() < 1e-18);
        let sd = spec.std_devs();
        let mut rng = stream_rng(99, 0);
        let mut buf = [0.0; 2];
        let vals: Vec<f64> = (0..1_000_000)
            .map(|_| {
                spec.sample_into(&mut rng, &sd, &mut buf);
                buf[0] * buf[0] * buf[1] * buf[1]
            })
            .collect();
        let m = MeanSe::from_samples(&vals);
        assert!(m.within(exact, 3.0), "{m:?} vs {exact}");
    }

    #[test]
    fn fernique_examples() {
        let one = GaussianSpec::new(1.0, 1).unwrap();
        let s = 1.0 / (4.0 * lambda(1));
        assert!((fernique_integral(&one, s).finite().unwrap() - SQRT_2).abs() < 1e-14);
        assert_eq!(fernique_integral(&one, 0.0), FerniqueValue::Finite(1.0));
        assert_eq!(fernique_integral(&one, 1.0 / (2.0 * lambda(1))), FerniqueValue::Infinite);
    }

    #[test]
    fn fernique_against_mc() {
        let spec = GaussianSpec::new(1.0, 6).unwrap();
        let s = 0.1 / (2.0 * lambda(1));
        let exact = fernique_integral(&spec, s).finite().unwrap();
        let sd = spec.std_devs();
        let mut rng = stream_rng(5, 1);
        let mut buf = [0.0; 6];
        let vals: Vec<f64> = (0..200_000)
            .map(|_| {
                spec.sample_into(&mut rng, &sd, &mut buf);
                (s * buf.iter().map(|x| x * x).sum::<f64>()).exp()
            })
            .collect();
        let m = MeanSe::from_samples(&vals);
        assert!((m.mean / exact - 1.0).abs() < 0.05);
        assert!(m.within(exact, 3.0));
    }

    proptest! {
        #[test]
        fn eigenvalues_strictly_decrease(alpha in 0.01f64..3.0, n in 2usize..10_000) {
            let spec = GaussianSpec::new(alpha, n).unwrap();
            let ev = spec.eigenvalues();
            prop_assert!(ev.iter().all(|&l| l > 0.0));
            prop_assert!(ev.windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn moment2_is_symmetric_bilinear(a in prop::collection::vec(-3.0f64..3.0, 4),
                                         b in prop::collection::vec(-3.0f64..3.0, 4),
                                         alpha in 0.5f64..2.0) {
            let spec = GaussianSpec::new(alpha, 4).unwrap();
            let va = SpectralVector::new(a).unwrap();
            let vb = SpectralVector::new(b).unwrap();
            let ab = gaussian_moment2(&spec, &va, &vb);
            prop_assert!((ab - gaussian_moment2(&spec, &vb, &va)).abs() < 1e-14);
            prop_assert!(gaussian_moment2(&spec, &va, &va) >= 0.0);
        }

        #[test]
        fn fernique_is_monotone_in_s(alpha in 0.6f64..2.0, n in 1usize..12, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
            let spec = GaussianSpec::new(alpha, n).unwrap();
            let cap = 1.0 / (2.0 * lambda_pow(1, alpha));
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let a = fernique_integral(&spec, lo * 0.99 * cap).finite().unwrap();
            let b = fernique_integral(&spec, hi * 0.99 * cap).finite().unwrap();
            prop_assert!(a <= b && a >= 1.0);
        }
    }
}
