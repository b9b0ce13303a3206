use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{DetectionRule, Scenario};
use super::stats::{sign_test, trend};
use crate::ellipsoid::ShapeMatrix;
use crate::error::{Error, Result};
use crate::estimation::{DetectorConfig, EstimatorConfig};
use crate::monitor::{baseline_metrics, Monitor, MonitorVerdict, OnlineMonitor, RateTracker};
use crate::plant::{run_closed_loop, ClosedLoop, ControllerState, SimTrace};

/// Monitor verdicts for a simulated trace, fed step by step.
pub fn monitor_trace(monitor: Monitor, rate_window: usize, trace: &SimTrace) -> Result<Vec<MonitorVerdict>> {
    let mut online = OnlineMonitor::new(monitor, rate_window);
    trace
        .records
        .iter()
        .map(|r| online.step(r.k, &r.x_hat, &ControllerState { integral: r.integral.clone() }))
        .collect()
}

/// Baseline `t_u` evaluated on the true state, the reference both
/// predictions are scored against.
pub fn true_time_to_unsafe(scenario: &Scenario, rate_window: usize, trace: &SimTrace) -> Vec<Option<f64>> {
    let mut rate = RateTracker::new(rate_window, scenario.model.dt());
    trace
        .records
        .iter()
        .map(|r| {
            let v = rate.push(&r.x);
            baseline_metrics(&r.x, &scenario.unsafe_set, v).1
        })
        .collect()
}

/// One seeded run scored over the window from attack start to damage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRun {
    pub seed: u64,
    pub attack_start: usize,
    pub damage_step: Option<usize>,
    pub detection_step: Option<usize>,
    /// Damage happened and preceded detection.
    pub qualifies: bool,
    pub impact_before_damage: bool,
    pub first_impact_step: Option<usize>,
    pub baseline_tu_slope: Option<f64>,
    pub monitor_error_change: Option<f64>,
    pub baseline_error_change: Option<f64>,
}

impl ComparisonRun {
    pub fn tu_nondecreasing(&self) -> bool {
        self.qualifies && self.baseline_tu_slope.is_some_and(|s| s >= 0.0)
    }

    pub fn monitor_error_decreases(&self) -> bool {
        self.qualifies && self.monitor_error_change.is_some_and(|d| d < 0.0)
    }

    pub fn baseline_error_grows(&self) -> bool {
        self.qualifies && self.baseline_error_change.is_some_and(|d| d > 0.0)
    }

    pub fn paired_favours_monitor(&self) -> bool {
        match (self.qualifies, self.monitor_error_change, self.baseline_error_change) {
            (true, Some(m), Some(b)) => b > m,
            _ => false,
        }
    }
}

/// Mean of the final quarter minus mean of the first quarter.
fn quarter_change(v: &[f64]) -> Option<f64> {
    let q = v.len() / 4;
    if q == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some(mean(&v[v.len() - q..]) - mean(&v[..q]))
}

#[derive(Debug, Clone)]
pub struct ComparisonSetup<'a> {
    pub scenario: &'a Scenario,
    pub estimator: &'a EstimatorConfig,
    pub detector: &'a DetectorConfig,
    pub shape: Arc<ShapeMatrix>,
    pub detection: DetectionRule,
}

pub fn run_comparison(setup: &ComparisonSetup<'_>, seed: u64) -> Result<ComparisonRun> {
    let sc = setup.scenario;
    if sc.attack.sensors.is_empty() {
        return Err(Error::Invalid("comparison scenario has no attack".into()));
    }
    let loop_ = ClosedLoop {
        model: &sc.model,
        controller: &sc.controller,
        estimator: setup.estimator,
        detector: setup.detector,
        plan: &sc.attack,
    };
    let trace = run_closed_loop(&loop_, sc.run.horizon, seed, &sc.initial_state()?)?;
    let monitor = Monitor::with_shape(
        sc.monitor.horizon,
        Arc::clone(&setup.shape),
        sc.unsafe_set.clone(),
        sc.model.clone(),
        sc.controller.clone(),
    )?;
    let verdicts = monitor_trace(monitor, sc.monitor.rate_window, &trace)?;
    let truth = true_time_to_unsafe(sc, sc.monitor.rate_window, &trace);

    let start = sc.attack.start.min(trace.len());
    let alarms: Vec<bool> = trace.records.iter().map(|r| r.alarm).collect();
    let detection_step = setup.detection.first_detection(&alarms, start);
    let damage_step = trace.records.iter().position(|r| sc.unsafe_set.contains(&r.x));
    let qualifies = damage_step.is_some_and(|d| d >= start && detection_step.is_none_or(|t| d < t));
    let end = damage_step.unwrap_or(trace.len()).max(start);
    let window = &verdicts[start..end];

    let first_impact_step = window.iter().find(|v| v.impact > 0.0).map(|v| v.k);
    let tu: Vec<f64> = window.iter().filter_map(|v| v.baseline_tu).collect();
    let horizon_s = sc.monitor.horizon as f64 * sc.model.dt();
    let mut monitor_err = Vec::new();
    let mut baseline_err = Vec::new();
    for (v, t) in window.iter().zip(&truth[start..end]) {
        let (Some(t), Some(b)) = (*t, v.baseline_tu) else { continue };
        monitor_err.push((v.tc_seconds.unwrap_or(horizon_s) - t).abs());
        baseline_err.push((b - t).abs());
    }
    Ok(ComparisonRun {
        seed,
        attack_start: start,
        damage_step,
        detection_step,
        qualifies,
        impact_before_damage: qualifies && first_impact_step.is_some(),
        first_impact_step,
        baseline_tu_slope: trend(&tu),
        monitor_error_change: quarter_change(&monitor_err),
        baseline_error_change: quarter_change(&baseline_err),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub runs: Vec<ComparisonRun>,
    pub qualifying: usize,
    pub impact_before_damage: usize,
    pub tu_nondecreasing: usize,
    pub monitor_error_decreases: usize,
    pub baseline_error_grows: usize,
    pub paired_favours_monitor: usize,
    /// One-sided sign-test p-values over all runs.
    pub p_tu_nondecreasing: f64,
    pub p_monitor_decrease: f64,
    pub p_baseline_growth: f64,
    pub p_paired: f64,
}

pub fn run_comparison_sweep(setup: &ComparisonSetup<'_>, seeds: &[u64]) -> Result<ComparisonSummary> {
    let mut runs = seeds.par_iter().map(|&s| run_comparison(setup, s)).collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| r.seed);
    let n = runs.len();
    let count = |f: fn(&ComparisonRun) -> bool| runs.iter().filter(|r| f(r)).count();
    let tu_nondecreasing = count(ComparisonRun::tu_nondecreasing);
    let monitor_error_decreases = count(ComparisonRun::monitor_error_decreases);
    let baseline_error_grows = count(ComparisonRun::baseline_error_grows);
    let paired_favours_monitor = count(ComparisonRun::paired_favours_monitor);
    Ok(ComparisonSummary {
        qualifying: count(|r| r.qualifies),
        impact_before_damage: count(|r| r.impact_before_damage),
        tu_nondecreasing,
        monitor_error_decreases,
        baseline_error_grows,
        paired_favours_monitor,
        p_tu_nondecreasing: sign_test(tu_nondecreasing, n),
        p_monitor_decrease: sign_test(monitor_error_decreases, n),
        p_baseline_growth: sign_test(baseline_error_grows, n),
        p_paired: sign_test(paired_favours_monitor, n),
        runs,
    })
}
