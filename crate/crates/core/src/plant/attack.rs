use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::estimation::{chi2_statistic, DetectorConfig, EstimatorConfig};
use crate::linalg::{vec_serde, Vector};

/// Margin below `√τ` on steps that should pass the detector.
pub const STEALTH_EPS: f64 = 0.01;
/// Multiple of `√τ` on steps that mimic a false alarm.
pub const ALARM_SCALE: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackStrategy {
    /// Bias `rate·(k − k_s)` on the targeted sensors. When `stealthy`, the
    /// shaped residual is rescaled into the stealth set on every step.
    GrowingBias {
        rate: f64,
        #[serde(default = "default_true")]
        stealthy: bool,
    },
    /// Shaped residual `s·Σ^{1/2}·d̂` along a fixed unit direction.
    ResidualSteering {
        #[serde(with = "vec_serde")]
        direction: Vector,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub start: usize,
    pub end: usize,
    pub sensors: Vec<usize>,
    pub strategy: AttackStrategy,
    /// Fraction of attack steps that deliberately exceed `τ`.
    pub alarm_mimic_rate: f64,
}

impl AttackPlan {
    /// A plan that never activates.
    pub fn none() -> Self {
        AttackPlan {
            start: usize::MAX,
            end: usize::MAX,
            sensors: Vec::new(),
            strategy: AttackStrategy::GrowingBias { rate: 0.0, stealthy: false },
            alarm_mimic_rate: 0.0,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.start > self.end {
            return Err(Error::Invalid(format!("attack start {} after end {}", self.start, self.end)));
        }
        if let Some(&s) = self.sensors.iter().find(|&&s| s >= m) {
            return Err(Error::Invalid(format!("attacked sensor {s} out of range for m={m}")));
        }
        if !(0.0..1.0).contains(&self.alarm_mimic_rate) {
            return Err(Error::Invalid(format!(
                "alarm mimic rate {} outside [0, 1)",
                self.alarm_mimic_rate
            )));
        }
        match &self.strategy {
            AttackStrategy::GrowingBias { rate, .. } if !rate.is_finite() => {
                Err(Error::Invalid("growing-bias rate must be finite".into()))
            }
            AttackStrategy::ResidualSteering { direction } => {
                dim_check(direction.len() == m, || {
                    format!("steering direction has length {}, expected {m}", direction.len())
                })?;
                if !(direction.norm() > 0.0) || !direction.iter().all(|v| v.is_finite()) {
                    return Err(Error::Invalid("steering direction must be finite and nonzero".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_active(&self, k: usize) -> bool {
        k >= self.start && k <= self.end && !self.sensors.is_empty()
    }
}

/// Attack vector `δ(k)` for true output `y` and prediction `y_hat`.
///
/// Zero outside `[start, end]`. Draws one uniform per active step to decide
/// whether this step mimics a false alarm.
pub fn synthesize_stealthy_delta<R: Rng + ?Sized>(
    plan: &AttackPlan,
    k: usize,
    y: &Vector,
    y_hat: &Vector,
    est: &EstimatorConfig,
    det: &DetectorConfig,
    rng: &mut R,
) -> Vector {
    let m = y.len();
    if !plan.is_active(k) {
        return Vector::zeros(m);
    }
    let alarm = rng.random::<f64>() < plan.alarm_mimic_rate;
    let radius = det.tau.sqrt() * if alarm { ALARM_SCALE } else { 1.0 - STEALTH_EPS };
    let natural = y - y_hat;
    match &plan.strategy {
        AttackStrategy::ResidualSteering { direction } => {
            let d = direction / direction.norm();
            let shaped = est.sigma_sqrt() * d * radius;
            shaped - natural
        }
        AttackStrategy::GrowingBias { rate, stealthy } => {
            let mut bias = Vector::zeros(m);
            let magnitude = rate * (k - plan.start) as f64;
            for &s in &plan.sensors {
                bias[s] = magnitude;
            }
            if !stealthy {
                return bias;
            }
            let shaped = &natural + &bias;
            let z = chi2_statistic(est, &shaped);
            let rescaled = if z > 0.0 {
                let too_big = !alarm && z > radius * radius;
                let too_small = alarm && z < radius * radius;
                if too_big || too_small {
                    shaped * (radius / z.sqrt())
                } else {
                    shaped
                }
            } else if alarm {
                let mut dir = Vector::zeros(m);
                for &s in &plan.sensors {
                    dir[s] = 1.0;
                }
                let zd = chi2_statistic(est, &dir);
                dir * (radius / zd.sqrt())
            } else {
                shaped
            };
            rescaled - natural
        }
    }
}
