use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ellipsoid::{HalfSpace, UnsafeSet};
use crate::error::{dim_check, Error, Result};
use crate::estimation::{calibrate_estimator, DetectorConfig, EstimatorConfig};
use crate::linalg::{vec_serde, Vector};
use crate::monitor::{predict_control_flow, DEFAULT_RATE_WINDOW};
use crate::plant::{AttackPlan, Controller, LtiModel};

/// Noise-free steps used to settle onto the operating point.
pub const SETTLE_STEPS: usize = 20_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSpec {
    #[serde(rename = "K")]
    pub horizon: usize,
    pub beta: f64,
    /// Noise confidence level; `1 − β` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default = "default_rate_window")]
    pub rate_window: usize,
    #[serde(default = "default_delta_h")]
    pub delta_h: f64,
}

fn default_rate_window() -> usize {
    DEFAULT_RATE_WINDOW
}

fn default_delta_h() -> f64 {
    0.01
}

impl MonitorSpec {
    pub fn confidence(&self) -> f64 {
        self.p.unwrap_or(1.0 - self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Explicit(#[serde(with = "vec_serde")] Vector),
    Named(InitialKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Zero,
    OperatingPoint,
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Named(InitialKind::OperatingPoint)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub initial_state: InitialState,
}

/// Inclusive range for a per-trial draw, optionally log-uniform.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub log: bool,
}

impl Span {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = self.min.is_finite() && self.max.is_finite() && self.min <= self.max && (!self.log || self.min > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("{what} range [{}, {}] is invalid", self.min, self.max)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSide {
    Low,
    High,
}

/// Randomisation used by Monte Carlo validation. Each trial attacks a random
/// subset of sensors with a growing bias and places a limit on each attacked
/// output at a random margin from the operating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationTemplate {
    pub sensors_min: usize,
    pub sensors_max: usize,
    pub rate: Span,
    pub start_min: usize,
    pub start_max: usize,
    pub margin: Span,
    pub limit_side: LimitSide,
    #[serde(default)]
    pub stealthy: bool,
    #[serde(default)]
    pub alarm_mimic_rate: f64,
    pub horizon: usize,
    pub detection: DetectionRule,
}

/// The detector has detected the attack once `count` of the last `window`
/// steps alarmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRule {
    pub window: usize,
    pub count: usize,
}

impl DetectionRule {
    /// First step `k ≥ from` at which the rule fires.
    pub fn first_detection(&self, alarms: &[bool], from: usize) -> Option<usize> {
        let mut in_window = 0usize;
        for (k, &a) in alarms.iter().enumerate() {
            in_window += usize::from(a);
            if k >= self.window && alarms[k - self.window] {
                in_window -= 1;
            }
            if k >= from && in_window >= self.count {
                return Some(k);
            }
        }
        None
    }

    /// Smallest count whose false-detection probability per window under
    /// independent alarms at rate `beta` is at most `alpha`.
    pub fn for_false_rate(window: usize, beta: f64, alpha: f64) -> Result<Self> {
        if window == 0 || !(0.0..1.0).contains(&beta) || !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("window {window}, beta {beta}, alpha {alpha}")));
        }
        let tail = crate::harness::stats::binomial_upper_tails(window, beta);
        let count = (1..=window).find(|&c| tail[c] <= alpha).unwrap_or(window);
        Ok(DetectionRule { window, count })
    }
}

impl ValidationTemplate {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.sensors_min > self.sensors_max || self.sensors_max > m {
            return Err(Error::Invalid(format!(
                "attacked sensor count range {}..={} invalid for m={m}",
                self.sensors_min, self.sensors_max
            )));
        }
        if self.start_min > self.start_max || self.start_max > self.horizon {
            return Err(Error::Invalid("attack start range must lie within the horizon".into()));
        }
        self.rate.validate("rate")?;
        self.margin.validate("margin")?;
        if self.margin.min <= 0.0 {
            return Err(Error::Invalid("margins must be positive".into()));
        }
        if self.detection.window == 0 || self.detection.count == 0 || self.detection.count > self.detection.window {
            return Err(Error::Invalid("detection rule needs 0 < count <= window".into()));
        }
        if !(0.0..1.0).contains(&self.alarm_mimic_rate) {
            return Err(Error::Invalid("alarm mimic rate outside [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    model_ref: PathBuf,
    controller: Controller,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attack: Option<AttackPlan>,
    #[serde(default)]
    unsafe_set: Vec<HalfSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unsafe_ref: Option<PathBuf>,
    monitor: MonitorSpec,
    run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    validation: Option<ValidationTemplate>,
}

/// A resolved scenario: referenced files are loaded and every section is
/// checked against the model dimensions.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model_path: PathBuf,
    pub model: LtiModel,
    pub controller: Controller,
    pub attack: AttackPlan,
    pub unsafe_set: UnsafeSet,
    pub monitor: MonitorSpec,
    pub run: RunSpec,
    pub validation: Option<ValidationTemplate>,
}

/// Reads a JSON list of `{name, normal, offset}` half-spaces.
pub fn load_unsafe_set(path: &Path) -> Result<UnsafeSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read unsafe set {}: {e}", path.display())))?;
    let hs: Vec<HalfSpace> =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    UnsafeSet::new(hs)
}

impl Scenario {
    /// Relative references resolve against the scenario file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("cannot read scenario {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json_str(&text, base)
    }

    pub fn from_json_str(text: &str, base: &Path) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let model_path = base.join(&file.model_ref);
        let model = LtiModel::load(&model_path)?;
        let mut halfspaces = file.unsafe_set;
        if let Some(r) = &file.unsafe_ref {
            halfspaces.extend(load_unsafe_set(&base.join(r))?.halfspaces().iter().cloned());
        }
        let scenario = Scenario {
            model_path,
            model,
            controller: file.controller,
            attack: file.attack.unwrap_or_else(AttackPlan::none),
            unsafe_set: UnsafeSet::new(halfspaces)?,
            monitor: file.monitor,
            run: file.run,
            validation: file.validation,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, l) = (self.model.n(), self.model.m(), self.model.l());
        self.controller.validate(l, m)?;
        self.attack.validate(m)?;
        if let Some(d) = self.unsafe_set.dim() {
            dim_check(d == n, || format!("unsafe-set normals have length {d}, expected {n}"))?;
        }
        if let InitialState::Explicit(x0) = &self.run.initial_state {
            dim_check(x0.len() == n, || format!("initial state has length {}, expected {n}", x0.len()))?;
        }
        if !(self.monitor.beta > 0.0 && self.monitor.beta < 1.0) {
            return Err(Error::Invalid(format!("beta {} outside (0, 1)", self.monitor.beta)));
        }
        let p = self.monitor.confidence();
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Invalid(format!("confidence level {p} outside (0, 1)")));
        }
        if !(self.monitor.delta_h > 0.0 && self.monitor.delta_h < 1.0) {
            return Err(Error::Invalid(format!("grid spacing {} outside (0, 1)", self.monitor.delta_h)));
        }
        if let Some(v) = &self.validation {
            v.validate(m)?;
        }
        Ok(())
    }

    pub fn calibrate(&self) -> Result<(EstimatorConfig, DetectorConfig)> {
        let est = calibrate_estimator(&self.model)?;
        let det = DetectorConfig::from_beta(self.monitor.beta, self.model.m())?;
        Ok((est, det))
    }

    pub fn initial_state(&self) -> Result<Vector> {
        match &self.run.initial_state {
            InitialState::Explicit(x0) => Ok(x0.clone()),
            InitialState::Named(InitialKind::Zero) => Ok(Vector::zeros(self.model.n())),
            InitialState::Named(InitialKind::OperatingPoint) => operating_point(&self.model, &self.controller),
        }
    }

    pub fn template(&self) -> Result<&ValidationTemplate> {
        self.validation
            .as_ref()
            .ok_or_else(|| Error::Invalid("scenario has no validation section".into()))
    }
}

/// State reached by the noise-free closed loop from the origin under the
/// reference held at its step-0 value.
pub fn operating_point(model: &LtiModel, ctrl: &Controller) -> Result<Vector> {
    let mut state = ctrl.initial_state();
    let mut x = Vector::zeros(model.n());
    for _ in 0..SETTLE_STEPS {
        let next = predict_control_flow(model, ctrl, &mut state, &x, 0);
        let settled = (&next - &x).norm() <= 1e-13 * (1.0 + next.norm());
        x = next;
        if settled {
            return Ok(x);
        }
    }
    if x.iter().all(|v| v.is_finite()) && x.norm() < 1e12 {
        Ok(x)
    } else {
        Err(Error::Invalid("closed loop diverges; no operating point".into()))
    }
}
