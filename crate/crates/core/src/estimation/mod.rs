//! Kalman estimation in one-step-delayed innovation form and the chi-square
//! residual detector.

mod chisq;

pub use chisq::{chi2_cdf, chi2_quantile};

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{self, rows_serde, Mat, Vector};
use crate::plant::LtiModel;

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 1_000_000;

/// Steady-state estimator: gain `L`, residual covariance `Σ`, and the prior
/// error covariance it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EstimatorRaw", into = "EstimatorRaw")]
pub struct EstimatorConfig {
    gain: Mat,
    sigma_r: Mat,
    steady_cov: Mat,
    sigma_inv: Mat,
    sigma_sqrt: Mat,
}

#[derive(Serialize, Deserialize)]
struct EstimatorRaw {
    #[serde(rename = "L", with = "rows_serde")]
    gain: Mat,
    #[serde(rename = "Sigma", with = "rows_serde")]
    sigma_r: Mat,
    #[serde(with = "rows_serde")]
    steady_cov: Mat,
}

impl TryFrom<EstimatorRaw> for EstimatorConfig {
    type Error = Error;
    fn try_from(raw: EstimatorRaw) -> Result<Self> {
        EstimatorConfig::new(raw.gain, raw.sigma_r, raw.steady_cov)
    }
}

impl From<EstimatorConfig> for EstimatorRaw {
    fn from(c: EstimatorConfig) -> Self {
        EstimatorRaw { gain: c.gain, sigma_r: c.sigma_r, steady_cov: c.steady_cov }
    }
}

impl EstimatorConfig {
    /// Validates `Σ ≻ 0` and the shape of `L`; stability of `A − LC` is
    /// checked against a model by [`EstimatorConfig::check_stable`].
    pub fn new(gain: Mat, sigma_r: Mat, steady_cov: Mat) -> Result<Self> {
        let m = sigma_r.nrows();
        let n = steady_cov.nrows();
        dim_check(sigma_r.is_square() && steady_cov.is_square(), || {
            "residual and error covariances must be square".into()
        })?;
        dim_check(gain.nrows() == n && gain.ncols() == m, || {
            format!("gain is {}x{}, expected {n}x{m}", gain.nrows(), gain.ncols())
        })?;
        if linalg::asymmetry(&sigma_r) > 1e-10
            || !linalg::is_positive_definite(&sigma_r, 1e-10)
        {
            return Err(Error::Invalid("residual covariance is not symmetric positive definite".into()));
        }
        let sigma_r = linalg::symmetrize(&sigma_r);
        let sigma_inv = linalg::spd_inverse(&sigma_r)?;
        let sigma_sqrt = linalg::psd_sqrt(&sigma_r, 0.0);
        Ok(EstimatorConfig { gain, sigma_r, steady_cov, sigma_inv, sigma_sqrt })
    }

    pub fn gain(&self) -> &Mat {
        &self.gain
    }

    pub fn sigma_r(&self) -> &Mat {
        &self.sigma_r
    }

    pub fn steady_cov(&self) -> &Mat {
        &self.steady_cov
    }

    pub fn sigma_inv(&self) -> &Mat {
        &self.sigma_inv
    }

    /// Symmetric square root `Σ^{1/2}`.
    pub fn sigma_sqrt(&self) -> &Mat {
        &self.sigma_sqrt
    }

    pub fn n(&self) -> usize {
        self.gain.nrows()
    }

    pub fn m(&self) -> usize {
        self.gain.ncols()
    }

    pub fn check_stable(&self, model: &LtiModel) -> Result<()> {
        dim_check(self.n() == model.n() && self.m() == model.m(), || {
            format!(
                "estimator is {}x{}, model has n={} m={}",
                self.n(),
                self.m(),
                model.n(),
                model.m()
            )
        })?;
        let rho = linalg::spectral_radius(&(model.a() - &self.gain * model.c()));
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::Calibration(format!("A - LC has spectral radius {rho:.6} >= 1")))
        }
    }
}

/// Threshold `τ` for false-alarm rate `β` on `dof` residual channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub tau: f64,
    pub beta: f64,
    pub dof: usize,
}

impl DetectorConfig {
    pub fn new(tau: f64, beta: f64, dof: usize) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!("threshold {tau} must be finite and nonnegative")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Domain(format!("false-alarm rate {beta} outside (0, 1)")));
        }
        Ok(DetectorConfig { tau, beta, dof })
    }

    pub fn from_beta(beta: f64, dof: usize) -> Result<Self> {
        DetectorConfig::new(set_threshold(beta, dof)?, beta, dof)
    }
}

/// `τ` with `Pr[χ²(dof) ≤ τ] = 1 − β`.
pub fn set_threshold(beta: f64, dof: usize) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("false-alarm rate {beta} outside (0, 1)")));
    }
    if dof == 0 {
        return Err(Error::Domain("detector needs at least one degree of freedom".into()));
    }
    chi2_quantile(1.0 - beta, dof as f64)
}

/// Steady-state gain from the Riccati fixed point, iterated from `P = Σ₁`.
pub fn calibrate_estimator(model: &LtiModel) -> Result<EstimatorConfig> {
    let (a, c) = (model.a(), model.c());
    let (s1, s2) = (model.sigma1(), model.sigma2());
    let at = a.transpose();
    let ct = c.transpose();
    let mut p = s1.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let s = c * &p * &ct + s2;
        let s_inv = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Calibration("innovation covariance lost definiteness".into()))?
            .inverse();
        let apc = a * &p * &ct;
        let next = linalg::symmetrize(&(a * &p * &at + s1 - &apc * &s_inv * apc.transpose()));
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Calibration("Riccati recursion diverged".into()));
        }
        let diff = linalg::frobenius(&(&next - &p));
        p = next;
        if diff < RICCATI_TOL * linalg::frobenius(&p).max(1.0) {
            let s = linalg::symmetrize(&(c * &p * &ct + s2));
            let gain = a * &p * &ct * linalg::spd_inverse(&s)?;
            let cfg = EstimatorConfig::new(gain, s, p)?;
            cfg.check_stable(model)?;
            return Ok(cfg);
        }
    }
    Err(Error::Calibration(format!(
        "Riccati recursion did not converge in {RICCATI_MAX_ITER} iterations"
    )))
}

/// `x̂(k) = A x̂(k−1) + B u(k−1) + L(ȳ(k−1) − C x̂(k−1))`, returned with `ŷ(k) = C x̂(k)`.
pub fn estimator_step(
    cfg: &EstimatorConfig,
    model: &LtiModel,
    x_hat: &Vector,
    u: &Vector,
    y_bar: &Vector,
) -> (Vector, Vector) {
    let innovation = y_bar - model.c() * x_hat;
    let next = model.a() * x_hat + model.b() * u + cfg.gain() * innovation;
    let y_hat = model.c() * &next;
    (next, y_hat)
}

/// `z = rᵀΣ⁻¹r` with `r = ȳ − ŷ`; alarms when `z > τ`.
pub fn detector_step(
    det: &DetectorConfig,
    est: &EstimatorConfig,
    y_bar: &Vector,
    y_hat: &Vector,
) -> (f64, bool) {
    let r = y_bar - y_hat;
    let z = chi2_statistic(est, &r);
    (z, z > det.tau)
}

pub fn chi2_statistic(est: &EstimatorConfig, r: &Vector) -> f64 {
    r.dot(&(est.sigma_inv() * r))
}

/// Sample covariance of residual vectors (validation mode only).
pub fn empirical_residual_covariance(residuals: &[Vector]) -> Result<Mat> {
    let first = residuals
        .first()
        .ok_or_else(|| Error::Invalid("no residual samples".into()))?;
    let m = first.len();
    let count = residuals.len() as f64;
    let mean = residuals.iter().fold(Vector::zeros(m), |acc, r| acc + r) / count;
    let mut cov = Mat::zeros(m, m);
    for r in residuals {
        let d = r - &mean;
        cov += &d * d.transpose();
    }
    Ok(cov / (count - 1.0).max(1.0))
}
