use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes in `n` trials; `None` when `n = 0`.
pub fn wilson(k: u64, n: u64, z: f64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Some(((center - half).max(0.0), (center + half).min(1.0)))
}

/// `P(X ≥ c)` for `X ~ Bin(n, p)`, indexed by `c = 0..=n+1`.
pub fn binomial_upper_tails(n: usize, p: f64) -> Vec<f64> {
    let dist = Binomial::new(p, n as u64).expect("binomial parameters checked by caller");
    (0..=n + 1)
        .map(|c| if c == 0 { 1.0 } else { dist.sf(c as u64 - 1) })
        .collect()
}

/// One-sided sign test: `P(X ≥ successes)` for `X ~ Bin(n, 1/2)`.
pub fn sign_test(successes: usize, n: usize) -> f64 {
    if successes == 0 {
        return 1.0;
    }
    binomial_upper_tails(n, 0.5)[successes.min(n + 1)]
}

/// Weighted pool-adjacent-violators fit, nondecreasing.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let w = w1 + w2;
            let m = if w > 0.0 { (m1 * w1 + m2 * w2) / w } else { 0.5 * (m1 + m2) };
            blocks.push((m, w, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(m, _, c)| std::iter::repeat_n(m, c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicTest {
    pub fitted: Vec<f64>,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Goodness of fit of a nondecreasing proportion curve. The statistic is the
/// Pearson residual sum against the PAVA fit, referred to `χ²(g − 1)` for
/// `g` groups, which bounds the chi-bar-squared null from above.
pub fn isotonic_test(successes: &[u64], totals: &[u64]) -> IsotonicTest {
    let groups: Vec<(f64, f64)> = successes
        .iter()
        .zip(totals)
        .filter(|(_, &n)| n > 0)
        .map(|(&k, &n)| (k as f64 / n as f64, n as f64))
        .collect();
    let values: Vec<f64> = groups.iter().map(|g| g.0).collect();
    let weights: Vec<f64> = groups.iter().map(|g| g.1).collect();
    let fitted = pava(&values, &weights);
    let statistic: f64 = groups
        .iter()
        .zip(&fitted)
        .map(|(&(p, n), &f)| {
            let f = f.clamp(0.5 / n, 1.0 - 0.5 / n);
            n * (p - f).powi(2) / (f * (1.0 - f))
        })
        .sum();
    let dof = groups.len().saturating_sub(1);
    let p_value = if dof == 0 || statistic <= 0.0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
    };
    IsotonicTest { fitted, statistic, dof, p_value }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`. `r2` is 1 for a
/// perfect fit, including constant `y`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Some(LinearFit { slope, intercept, r2 })
}

/// Least-squares slope of `y` against its index.
pub fn trend(y: &[f64]) -> Option<f64> {
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    linear_fit(&x, y).map(|f| f.slope)
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}
