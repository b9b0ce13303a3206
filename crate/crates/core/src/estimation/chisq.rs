//! Chi-square quantiles by inverting the regularized lower incomplete gamma.

use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// `Pr[χ²(dof) ≤ x]`.
pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * dof, 0.5 * x)
    }
}

fn chi2_pdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * dof;
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// `q` with `Pr[χ²(dof) ≤ q] = prob`, for `prob ∈ (0, 1)`.
pub fn chi2_quantile(prob: f64, dof: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("probability {prob} outside (0, 1)")));
    }
    if !(dof > 0.0) {
        return Err(Error::Domain(format!("degrees of freedom {dof} must be positive")));
    }
    let (mut lo, mut hi) = (0.0f64, dof.max(1.0));
    while chi2_cdf(hi, dof) < prob {
        lo = hi;
        hi *= 2.0;
    }
    // Newton steps guarded by the bisection bracket
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, dof) - prob;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = chi2_pdf(x, dof);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dof_closed_form() {
        let q = chi2_quantile(0.99, 2.0).unwrap();
        assert!((q - (-2.0 * 0.01f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(chi2_quantile(0.0, 1.0).is_err());
        assert!(chi2_quantile(1.0, 1.0).is_err());
        assert!(chi2_quantile(f64::NAN, 1.0).is_err());
    }
}
