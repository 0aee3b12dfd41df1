//! Monte-Carlo plumbing: seeded sub-streams, compensated sums, plain and
//! self-normalized estimators with standard errors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for sub-stream `stream` of experiment `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix two indices into one stream id (splitmix64 finalizer).
pub fn derive_stream(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Neumaier compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = NeumaierSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanSe { mean: f64::NAN, se: f64::NAN };
        }
        let mean = compensated_sum(xs.iter().copied()) / n as f64;
        if n == 1 {
            return MeanSe { mean, se: 0.0 };
        }
        let ss = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
        let var = ss / (n - 1) as f64;
        MeanSe { mean, se: (var / n as f64).sqrt() }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Self-normalized weighted estimate of `Σ w h / Σ w`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightedEstimate {
    pub estimate: f64,
    /// Jackknife standard error.
    pub se: f64,
    /// Kish effective sample size (Σw)²/Σw².
    pub ess: f64,
    pub count: usize,
    /// Set when `ess < 0.01 * count`.
    pub degenerate: bool,
}

impl WeightedEstimate {
    pub fn new(weights: &[f64], values: &[f64]) -> Self {
        assert_eq!(weights.len(), values.len());
        let n = weights.len();
        let sw = compensated_sum(weights.iter().copied());
        let sw2 = compensated_sum(weights.iter().map(|w| w * w));
        let swh = compensated_sum(weights.iter().zip(values).map(|(w, h)| w * h));
        let estimate = swh / sw;
        let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
        let se = if n > 1 {
            // Leave-one-out ratios, O(n).
            let loo = |i: usize| (swh - weights[i] * values[i]) / (sw - weights[i]);
            let mean_loo = compensated_sum((0..n).map(loo)) / n as f64;
            let ss = compensated_sum((0..n).map(|i| {
                let d = loo(i) - mean_loo;
                d * d
            }));
            ((n - 1) as f64 / n as f64 * ss).sqrt()
        } else {
            0.0
        };
        WeightedEstimate { estimate, se, ess, count: n, degenerate: ess < 0.01 * n as f64 }
    }
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
