use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lmi::{solve_maxdet_lmi, LmiOutcome, LmiProblem};
use super::noise::{noise_energy_bound, MC_SEED};
use crate::ellipsoid::{Ellipsoid, ShapeMatrix};
use crate::error::{dim_check, Error, Result};
use crate::estimation::{DetectorConfig, EstimatorConfig};
use crate::linalg::{self, rows_serde, Mat, Vector};
use crate::plant::LtiModel;
use crate::util::fingerprint;

/// Offline reach-set shape `Π = 𝒫⁻¹` with the calibration it depends on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CertificateRaw", into = "CertificateRaw")]
pub struct ReachCertificate {
    raw: CertificateRaw,
    shape: Arc<ShapeMatrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateRaw {
    #[serde(rename = "Pi", with = "rows_serde")]
    pi: Mat,
    b_star: f64,
    p: f64,
    w_bar: f64,
    w_bar_std_error: f64,
    objective: f64,
    beta: f64,
    tau: f64,
    delta_h: f64,
    estimator: EstimatorConfig,
    model_sha256: String,
    estimator_sha256: String,
    #[serde(default)]
    digest: String,
}

impl CertificateRaw {
    fn content_digest(&self) -> String {
        let mut body = self.clone();
        body.digest.clear();
        fingerprint(&body)
    }
}

impl TryFrom<CertificateRaw> for ReachCertificate {
    type Error = Error;
    fn try_from(raw: CertificateRaw) -> Result<Self> {
        let shape = ShapeMatrix::new(raw.pi.clone())
            .map_err(|e| Error::Certificate(format!("stored shape matrix rejected: {e}")))?;
        Ok(ReachCertificate { raw, shape: Arc::new(shape) })
    }
}

impl From<ReachCertificate> for CertificateRaw {
    fn from(c: ReachCertificate) -> Self {
        c.raw
    }
}

/// Fingerprint of everything `Π` depends on besides the model.
pub fn estimator_fingerprint(est: &EstimatorConfig, det: &DetectorConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        estimator: &'a EstimatorConfig,
        tau: f64,
        beta: f64,
        dof: usize,
    }
    fingerprint(&Key { estimator: est, tau: det.tau, beta: det.beta, dof: det.dof })
}

/// `b = Δh, 2Δh, …` strictly below one.
pub fn b_grid(delta_h: f64) -> Result<Vec<f64>> {
    if !(delta_h > 0.0 && delta_h < 1.0) {
        return Err(Error::Domain(format!("grid step {delta_h} outside (0, 1)")));
    }
    Ok((1..)
        .map(|j| j as f64 * delta_h)
        .take_while(|b| *b < 1.0 - 1e-12)
        .collect())
}

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub b: f64,
    pub outcome: LmiOutcome,
}

/// Solves the programme at every grid point; points run in parallel.
pub fn grid_search(prob: &LmiProblem, delta_h: f64) -> Result<Vec<GridPoint>> {
    b_grid(delta_h)?
        .into_par_iter()
        .map(|b| Ok(GridPoint { b, outcome: solve_maxdet_lmi(prob, b)? }))
        .collect()
}

pub fn lmi_problem(model: &LtiModel, est: &EstimatorConfig, tau: f64, w_bar: f64) -> Result<LmiProblem> {
    LmiProblem::new(model.a(), est.gain(), est.sigma_sqrt(), tau, w_bar)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub delta_h: f64,
    /// Noise confidence level; `1 − β` when `None`.
    pub p: Option<f64>,
    pub mc_seed: u64,
}

impl CertificateOptions {
    pub fn new(delta_h: f64) -> Self {
        CertificateOptions { delta_h, p: None, mc_seed: MC_SEED }
    }
}

/// Runs the grid search and keeps the smallest objective.
pub fn compute_certificate(
    model: &LtiModel,
    est: &EstimatorConfig,
    det: &DetectorConfig,
    opts: &CertificateOptions,
) -> Result<ReachCertificate> {
    est.check_stable(model)?;
    let delta_h = opts.delta_h;
    let p = opts.p.unwrap_or(1.0 - det.beta);
    let noise = noise_energy_bound(model.sigma1(), p, opts.mc_seed)?;
    let prob = lmi_problem(model, est, det.tau, noise.w_bar)?;
    let grid = grid_search(&prob, delta_h)?;
    let best = grid
        .iter()
        .filter_map(|g| g.outcome.solution())
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.b.total_cmp(&b.b)));
    let Some(best) = best else {
        let detail: Vec<String> = grid
            .iter()
            .map(|g| match &g.outcome {
                LmiOutcome::Infeasible { reason } => reason.clone(),
                LmiOutcome::Solved(_) => unreachable!(),
            })
            .collect();
        return Err(Error::Certificate(format!(
            "programme infeasible at every grid point: {}",
            detail.join("; ")
        )));
    };
    let pi = linalg::spd_inverse(&best.p)?;
    let mut raw = CertificateRaw {
        pi,
        b_star: best.b,
        p,
        w_bar: noise.w_bar,
        w_bar_std_error: noise.std_error,
        objective: best.objective,
        beta: det.beta,
        tau: det.tau,
        delta_h,
        estimator: est.clone(),
        model_sha256: model.fingerprint(),
        estimator_sha256: estimator_fingerprint(est, det),
        digest: String::new(),
    };
    raw.digest = raw.content_digest();
    ReachCertificate::try_from(raw)
}

impl ReachCertificate {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Certificate(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn pi(&self) -> &Mat {
        &self.raw.pi
    }

    pub fn shape(&self) -> &Arc<ShapeMatrix> {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.raw.pi.nrows()
    }

    pub fn b_star(&self) -> f64 {
        self.raw.b_star
    }

    pub fn p(&self) -> f64 {
        self.raw.p
    }

    pub fn w_bar(&self) -> f64 {
        self.raw.w_bar
    }

    pub fn objective(&self) -> f64 {
        self.raw.objective
    }

    pub fn beta(&self) -> f64 {
        self.raw.beta
    }

    pub fn tau(&self) -> f64 {
        self.raw.tau
    }

    pub fn delta_h(&self) -> f64 {
        self.raw.delta_h
    }

    pub fn estimator(&self) -> &EstimatorConfig {
        &self.raw.estimator
    }

    pub fn detector(&self) -> Result<DetectorConfig> {
        DetectorConfig::new(self.raw.tau, self.raw.beta, self.raw.estimator.m())
    }

    pub fn model_sha256(&self) -> &str {
        &self.raw.model_sha256
    }

    /// Integrity and validity against `model`: digest, fingerprints, and the
    /// LMI recheck at `(Π⁻¹, b*)`.
    pub fn verify(&self, model: &LtiModel) -> Result<()> {
        let raw = &self.raw;
        if raw.digest != raw.content_digest() {
            return Err(Error::Certificate("content digest mismatch".into()));
        }
        if raw.model_sha256 != model.fingerprint() {
            return Err(Error::Certificate("model fingerprint mismatch".into()));
        }
        let det = self.detector()?;
        if raw.estimator_sha256 != estimator_fingerprint(&raw.estimator, &det) {
            return Err(Error::Certificate("estimator fingerprint mismatch".into()));
        }
        if !(raw.b_star > 0.0 && raw.b_star < 1.0) {
            return Err(Error::Certificate(format!("b* = {} outside (0, 1)", raw.b_star)));
        }
        if !(raw.p > 0.0 && raw.p < 1.0) {
            return Err(Error::Certificate(format!("confidence level {} outside (0, 1)", raw.p)));
        }
        dim_check(self.dim() == model.n(), || {
            format!("certificate has order {}, model has n={}", self.dim(), model.n())
        })?;
        raw.estimator.check_stable(model)?;
        let prob = lmi_problem(model, &raw.estimator, raw.tau, raw.w_bar)?;
        let p_mat = linalg::spd_inverse(&raw.pi)?;
        if !prob.check(&p_mat, raw.b_star) {
            return Err(Error::Certificate("stored shape fails the LMI recheck".into()));
        }
        Ok(())
    }

    /// Also requires the certificate to match a separately calibrated estimator.
    pub fn verify_with(&self, model: &LtiModel, est: &EstimatorConfig, det: &DetectorConfig) -> Result<()> {
        self.verify(model)?;
        if self.raw.estimator_sha256 != estimator_fingerprint(est, det) {
            return Err(Error::Certificate("estimator or detector differs from certified calibration".into()));
        }
        Ok(())
    }
}

/// `𝓔ₓᵖ(k)`: the certified shape translated to `x_hat`; the shape is shared.
pub fn instantiate_reach_set(cert: &ReachCertificate, x_hat: &Vector) -> Result<Ellipsoid> {
    Ellipsoid::new(x_hat.clone(), Arc::clone(cert.shape()))
}
