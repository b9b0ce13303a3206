use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::estimation::chi2_quantile;
use crate::linalg::{self, Mat};

pub const MC_SAMPLES: usize = 1_000_000;
pub const MC_SEED: u64 = 0x5eed_0f_b0_05d;

/// `p`-quantile `w̄` of `‖w‖²` for `w ~ N(0, Σ₁)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBound {
    pub w_bar: f64,
    /// Zero when the quantile is exact.
    pub std_error: f64,
}

/// Exact for zero or isotropic `Σ₁`; otherwise a Monte Carlo quantile drawn
/// from `seed`.
pub fn noise_energy_bound(sigma1: &Mat, p: f64, seed: u64) -> Result<NoiseBound> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("confidence {p} outside (0, 1)")));
    }
    let n = sigma1.nrows();
    if n == 0 || sigma1.iter().all(|v| *v == 0.0) {
        return Ok(NoiseBound { w_bar: 0.0, std_error: 0.0 });
    }
    let scale = sigma1[(0, 0)];
    let isotropic = scale > 0.0
        && (0..n).all(|i| {
            (0..n).all(|j| {
                let target = if i == j { scale } else { 0.0 };
                (sigma1[(i, j)] - target).abs() <= 1e-12 * scale
            })
        });
    if isotropic {
        return Ok(NoiseBound { w_bar: scale * chi2_quantile(p, n as f64)?, std_error: 0.0 });
    }
    let weights: Vec<f64> = linalg::sym_eigenvalues(sigma1)
        .iter()
        .map(|l| l.max(0.0))
        .filter(|l| *l > 0.0)
        .collect();
    Ok(weighted_chi2_quantile(&weights, p, MC_SAMPLES, seed))
}

/// Monte Carlo quantile of `Σ λᵢ ξᵢ²`; the standard error is half the spread
/// between the order statistics one binomial standard deviation either side.
pub fn weighted_chi2_quantile(weights: &[f64], p: f64, samples: usize, seed: u64) -> NoiseBound {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<f64> = (0..samples)
        .map(|_| {
            weights
                .iter()
                .map(|l| {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    l * xi * xi
                })
                .sum()
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let count = samples as f64;
    let rank = |q: f64| ((q * count).ceil() as usize).clamp(1, samples) - 1;
    let spread = (count * p * (1.0 - p)).sqrt();
    let lo = draws[rank(p - spread / count)];
    let hi = draws[rank(p + spread / count)];
    NoiseBound { w_bar: draws[rank(p)], std_error: 0.5 * (hi - lo) }
}
