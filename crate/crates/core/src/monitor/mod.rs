//! Online safety checks: closed-loop prediction of the estimate, reach-set
//! emptiness checks against the unsafe set, and the impact and
//! time-to-unsafe metrics, plus the distance-based baseline.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;

use crate::ellipsoid::{min_volume_intersection, Ellipsoid, PreparedConstraints, ShapeMatrix, UnsafeSet};
use crate::error::{dim_check, Result};
use crate::linalg::Vector;
use crate::plant::{Controller, ControllerState, LtiModel};
use crate::reach::ReachCertificate;

pub const DEFAULT_RATE_WINDOW: usize = 100;
pub const RATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorVerdict {
    pub k: usize,
    pub safe: bool,
    /// The estimate itself lies in the unsafe set.
    pub center_unsafe: bool,
    pub k_f: Option<usize>,
    pub violated_constraint: Option<usize>,
    pub tc_seconds: Option<f64>,
    pub impact: f64,
    pub per_step_min_distance: Vec<f64>,
    pub baseline_du: Option<f64>,
    pub baseline_tu: Option<f64>,
}

/// Algorithm state shared by every check: `K`, `Π`, the unsafe set and the
/// prediction model.
#[derive(Debug, Clone)]
pub struct Monitor {
    horizon: usize,
    shape: Arc<ShapeMatrix>,
    unsafe_set: UnsafeSet,
    prepared: PreparedConstraints,
    model: LtiModel,
    controller: Controller,
}

/// Noise-free closed-loop step of the estimate; advances the integrator.
pub fn predict_control_flow(
    model: &LtiModel,
    ctrl: &Controller,
    state: &mut ControllerState,
    x_hat: &Vector,
    k: usize,
) -> Vector {
    let y_p = model.c() * x_hat;
    let u_p = ctrl.control_law(state, &y_p, k, model.dt());
    model.a() * x_hat + model.b() * u_p
}

/// `Tc = k_f · Δt`.
pub fn time_to_unsafe(k_f_offset: usize, dt: f64) -> f64 {
    k_f_offset as f64 * dt
}

/// `Im = max_i det(Πᵢ)/det(Π)` over the half-spaces, clamped to `[0, 1]`.
pub fn impact_metric(shape: &Arc<ShapeMatrix>, x_hat: &Vector, unsafe_set: &UnsafeSet) -> Result<f64> {
    let e = Ellipsoid::new(x_hat.clone(), Arc::clone(shape))?;
    let mut worst = 0.0f64;
    for h in unsafe_set.halfspaces() {
        worst = worst.max(min_volume_intersection(&e, h)?.det_ratio(&e));
    }
    Ok(worst.clamp(0.0, 1.0))
}

/// Euclidean distance of the estimate to the unsafe set and `t_u = d_u / rate`.
/// `d_u` is `None` for an empty unsafe set.
pub fn baseline_metrics(x_hat: &Vector, unsafe_set: &UnsafeSet, rate: f64) -> (Option<f64>, Option<f64>) {
    let du = unsafe_set
        .halfspaces()
        .iter()
        .map(|h| ((h.offset - h.normal.dot(x_hat)) / h.normal.norm()).max(0.0))
        .min_by(f64::total_cmp);
    let tu = du.filter(|_| rate >= RATE_FLOOR).map(|d| d / rate);
    (du, tu)
}

impl Monitor {
    pub fn new(
        horizon: usize,
        cert: &ReachCertificate,
        unsafe_set: UnsafeSet,
        model: LtiModel,
        controller: Controller,
    ) -> Result<Self> {
        Self::with_shape(horizon, Arc::clone(cert.shape()), unsafe_set, model, controller)
    }

    pub fn with_shape(
        horizon: usize,
        shape: Arc<ShapeMatrix>,
        unsafe_set: UnsafeSet,
        model: LtiModel,
        controller: Controller,
    ) -> Result<Self> {
        dim_check(shape.dim() == model.n(), || {
            format!("shape has order {}, model has n={}", shape.dim(), model.n())
        })?;
        unsafe_set.validate()?;
        controller.validate(model.l(), model.m())?;
        let prepared = PreparedConstraints::new(&unsafe_set, &shape)?;
        Ok(Monitor { horizon, shape, unsafe_set, prepared, model, controller })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn shape(&self) -> &Arc<ShapeMatrix> {
        &self.shape
    }

    pub fn unsafe_set(&self) -> &UnsafeSet {
        &self.unsafe_set
    }

    pub fn model(&self) -> &LtiModel {
        &self.model
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    fn check_input(&self, x_hat: &Vector) -> Result<()> {
        dim_check(x_hat.len() == self.model.n(), || {
            format!("estimate has length {}, expected {}", x_hat.len(), self.model.n())
        })
    }

    /// First predicted offset `l ≤ K` whose reach set meets the unsafe set,
    /// with the violated constraint and the predicted estimate there.
    pub fn first_violation(
        &self,
        x_hat: &Vector,
        ctrl: &ControllerState,
        k: usize,
    ) -> Result<Option<(usize, usize, Vector)>> {
        self.check_input(x_hat)?;
        Ok(self.scan(x_hat, ctrl, k, None))
    }

    fn scan(
        &self,
        x_hat: &Vector,
        ctrl: &ControllerState,
        k: usize,
        mut distances: Option<&mut Vec<f64>>,
    ) -> Option<(usize, usize, Vector)> {
        if self.prepared.is_empty() {
            return None;
        }
        let mut state = ctrl.clone();
        let mut xp = x_hat.clone();
        for l in 0..=self.horizon {
            let s = self.prepared.scan(&xp);
            if let Some(d) = distances.as_deref_mut() {
                d.push(s.min_distance);
            }
            if let Some(i) = s.first_violation {
                return Some((l, i, xp));
            }
            if l < self.horizon {
                xp = predict_control_flow(&self.model, &self.controller, &mut state, &xp, k + l);
            }
        }
        None
    }

    /// Worst case for timing: every predicted step and every constraint is
    /// visited. Returns the number of violating steps.
    pub fn check_exhaustive(&self, x_hat: &Vector, ctrl: &ControllerState, k: usize) -> usize {
        let mut state = ctrl.clone();
        let mut xp = x_hat.clone();
        let mut hits = 0;
        for l in 0..=self.horizon {
            if self.prepared.scan(&xp).first_violation.is_some() {
                hits += 1;
            }
            if l < self.horizon {
                xp = predict_control_flow(&self.model, &self.controller, &mut state, &xp, k + l);
            }
        }
        hits
    }

    /// Safety verdict at step `k` for estimate `x_hat` and controller state
    /// `ctrl`. Baseline `t_u` is left empty; see [`OnlineMonitor`].
    pub fn check_safety(&self, x_hat: &Vector, ctrl: &ControllerState, k: usize) -> Result<MonitorVerdict> {
        self.check_input(x_hat)?;
        let mut distances = Vec::new();
        let hit = self.scan(x_hat, ctrl, k, Some(&mut distances));
        let center_unsafe = self.unsafe_set.first_containing(x_hat).is_some();
        let (baseline_du, _) = baseline_metrics(x_hat, &self.unsafe_set, 0.0);
        let verdict = match hit {
            None => MonitorVerdict {
                k,
                safe: true,
                center_unsafe,
                k_f: None,
                violated_constraint: None,
                tc_seconds: None,
                impact: 0.0,
                per_step_min_distance: distances,
                baseline_du,
                baseline_tu: None,
            },
            Some((l, i, xp)) => MonitorVerdict {
                k,
                safe: false,
                center_unsafe,
                k_f: Some(l),
                violated_constraint: Some(i),
                tc_seconds: Some(time_to_unsafe(l, self.model.dt())),
                impact: impact_metric(&self.shape, &xp, &self.unsafe_set)?,
                per_step_min_distance: distances,
                baseline_du,
                baseline_tu: None,
            },
        };
        Ok(verdict)
    }
}

/// Trailing average of `‖x̂(k) − x̂(k−1)‖ / Δt`.
#[derive(Debug, Clone)]
pub struct RateTracker {
    window: usize,
    dt: f64,
    last: Option<Vector>,
    increments: VecDeque<f64>,
    sum: f64,
}

impl RateTracker {
    pub fn new(window: usize, dt: f64) -> Self {
        RateTracker { window: window.max(1), dt, last: None, increments: VecDeque::new(), sum: 0.0 }
    }

    pub fn push(&mut self, x_hat: &Vector) -> f64 {
        if let Some(prev) = &self.last {
            let inc = (x_hat - prev).norm() / self.dt;
            self.increments.push_back(inc);
            self.sum += inc;
            if self.increments.len() > self.window {
                self.sum -= self.increments.pop_front().unwrap_or(0.0);
            }
        }
        self.last = Some(x_hat.clone());
        self.rate()
    }

    pub fn rate(&self) -> f64 {
        if self.increments.is_empty() {
            0.0
        } else {
            (self.sum / self.increments.len() as f64).max(0.0)
        }
    }
}

/// A monitor fed one estimate per step, tracking the baseline rate.
#[derive(Debug, Clone)]
pub struct OnlineMonitor {
    monitor: Monitor,
    rate: RateTracker,
}

impl OnlineMonitor {
    pub fn new(monitor: Monitor, rate_window: usize) -> Self {
        let dt = monitor.model().dt();
        OnlineMonitor { monitor, rate: RateTracker::new(rate_window, dt) }
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn step(&mut self, k: usize, x_hat: &Vector, ctrl: &ControllerState) -> Result<MonitorVerdict> {
        let rate = self.rate.push(x_hat);
        let mut v = self.monitor.check_safety(x_hat, ctrl, k)?;
        v.baseline_tu = baseline_metrics(x_hat, self.monitor.unsafe_set(), rate).1;
        Ok(v)
    }
}
