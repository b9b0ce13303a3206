use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::classify::{classify_trial, Classification, OtherReason, TrialOutcome, TrialTimeline};
use super::scenario::{operating_point, LimitSide, Scenario, Span, ValidationTemplate};
use super::stats::{wilson, Z95};
use crate::ellipsoid::{HalfSpace, ShapeMatrix, UnsafeSet};
use crate::error::{Error, Result};
use crate::estimation::{DetectorConfig, EstimatorConfig};
use crate::linalg::Vector;
use crate::monitor::Monitor;
use crate::plant::{run_closed_loop, AttackPlan, AttackStrategy, ClosedLoop, Controller, ControllerState, LtiModel};

/// Everything a validation trial needs that does not change between trials.
#[derive(Debug, Clone)]
pub struct ValidationContext {
    pub model: LtiModel,
    pub controller: Controller,
    pub estimator: EstimatorConfig,
    pub detector: DetectorConfig,
    pub shape: Arc<ShapeMatrix>,
    pub template: ValidationTemplate,
    pub x_op: Vector,
    pub y_op: Vector,
}

impl ValidationContext {
    pub fn new(scenario: &Scenario, estimator: EstimatorConfig, detector: DetectorConfig, shape: Arc<ShapeMatrix>) -> Result<Self> {
        let template = scenario.template()?.clone();
        let x_op = operating_point(&scenario.model, &scenario.controller)?;
        let y_op = scenario.model.c() * &x_op;
        Ok(ValidationContext {
            model: scenario.model.clone(),
            controller: scenario.controller.clone(),
            estimator,
            detector,
            shape,
            template,
            x_op,
            y_op,
        })
    }
}

/// Per-trial draws: which sensors, how fast, from when, and where the limits sit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub seed: u64,
    pub plan: AttackPlan,
    pub unsafe_set: UnsafeSet,
    pub margins: Vec<f64>,
}

/// Decorrelated seed for trial `index` of a sweep started from `base`.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw(span: &Span, rng: &mut ChaCha8Rng) -> f64 {
    if span.min == span.max {
        return span.min;
    }
    if span.log {
        rng.random_range(span.min.ln()..=span.max.ln()).exp()
    } else {
        rng.random_range(span.min..=span.max)
    }
}

/// Draws the trial's attack and limits. `sensors` overrides the template's
/// count range. The bias pushes each attacked output toward its limit under
/// negative output feedback.
pub fn draw_trial(ctx: &ValidationContext, seed: u64, sensors: Option<usize>) -> Result<TrialSetup> {
    let t = &ctx.template;
    let m = ctx.model.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let count = match sensors {
        Some(c) if c > m => return Err(Error::Invalid(format!("cannot attack {c} of {m} sensors"))),
        Some(c) => c,
        None => rng.random_range(t.sensors_min..=t.sensors_max),
    };
    let mut chosen: Vec<usize> = sample(&mut rng, m, count).into_vec();
    chosen.sort_unstable();
    let rate = draw(&t.rate, &mut rng);
    let start = rng.random_range(t.start_min..=t.start_max);
    let sign = match t.limit_side {
        LimitSide::Low => 1.0,
        LimitSide::High => -1.0,
    };
    let mut margins = Vec::with_capacity(count);
    let mut halfspaces = Vec::with_capacity(count);
    for &i in &chosen {
        let d = draw(&t.margin, &mut rng);
        let row: Vector = ctx.model.c().row(i).transpose();
        let h = match t.limit_side {
            LimitSide::Low => HalfSpace::named(format!("y{i}_low"), -row, -(ctx.y_op[i] - d))?,
            LimitSide::High => HalfSpace::named(format!("y{i}_high"), row, ctx.y_op[i] + d)?,
        };
        margins.push(d);
        halfspaces.push(h);
    }
    let plan = if chosen.is_empty() {
        AttackPlan::none()
    } else {
        AttackPlan {
            start,
            end: usize::MAX,
            sensors: chosen,
            strategy: AttackStrategy::GrowingBias { rate: sign * rate, stealthy: t.stealthy },
            alarm_mimic_rate: t.alarm_mimic_rate,
        }
    };
    Ok(TrialSetup { seed, plan, unsafe_set: UnsafeSet::new(halfspaces)?, margins })
}

/// Simulates one trial and records `k_f` at every step for horizon `k_max`.
pub fn run_trial(ctx: &ValidationContext, setup: &TrialSetup, k_max: usize) -> Result<TrialTimeline> {
    let t = &ctx.template;
    let loop_ = ClosedLoop {
        model: &ctx.model,
        controller: &ctx.controller,
        estimator: &ctx.estimator,
        detector: &ctx.detector,
        plan: &setup.plan,
    };
    let trace = run_closed_loop(&loop_, t.horizon, setup.seed, &ctx.x_op)?;
    let monitor = Monitor::with_shape(
        k_max,
        Arc::clone(&ctx.shape),
        setup.unsafe_set.clone(),
        ctx.model.clone(),
        ctx.controller.clone(),
    )?;
    let mut k_f = Vec::with_capacity(trace.len());
    let mut alarms = Vec::with_capacity(trace.len());
    let mut damage_step = None;
    for r in &trace.records {
        let state = ControllerState { integral: r.integral.clone() };
        k_f.push(monitor.first_violation(&r.x_hat, &state, r.k)?.map(|(l, _, _)| l));
        alarms.push(r.alarm);
        if damage_step.is_none() && setup.unsafe_set.contains(&r.x) {
            damage_step = Some(r.k);
        }
    }
    let attack_present = !setup.plan.sensors.is_empty();
    let from = if attack_present { setup.plan.start } else { 0 };
    Ok(TrialTimeline {
        seed: setup.seed,
        attack_present,
        k_f,
        detection_step: t.detection.first_detection(&alarms, from),
        damage_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Rate {
    fn of(k: u64, n: u64) -> Self {
        let ci = wilson(k, n, Z95);
        Rate { value: (n > 0).then(|| k as f64 / n as f64), lo: ci.map(|c| c.0), hi: ci.map(|c| c.1) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub other: BTreeMap<OtherReason, u64>,
}

impl Counts {
    pub fn add(&mut self, o: &TrialOutcome) {
        match o.classification {
            Classification::TP => self.tp += 1,
            Classification::TN => self.tn += 1,
            Classification::FP => self.fp += 1,
            Classification::FN => self.fn_ += 1,
            Classification::Other => {
                *self.other.entry(o.other_reason.unwrap_or(OtherReason::Undecided)).or_default() += 1
            }
        }
    }

    pub fn other_total(&self) -> u64 {
        self.other.values().sum()
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_ + self.other_total()
    }
}

/// Rates at one horizon with Wilson 95% intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub horizon: usize,
    pub counts: Counts,
    pub tpr: Rate,
    pub fpr: Rate,
    pub tnr: Rate,
    pub fnr: Rate,
}

impl RateRow {
    pub fn from_outcomes(horizon: usize, outcomes: &[TrialOutcome]) -> Self {
        let mut c = Counts::default();
        outcomes.iter().for_each(|o| c.add(o));
        RateRow {
            horizon,
            tpr: Rate::of(c.tp, c.tp + c.fn_),
            fpr: Rate::of(c.fp, c.fp + c.tn),
            tnr: Rate::of(c.tn, c.tn + c.fp),
            fnr: Rate::of(c.fn_, c.fn_ + c.tp),
            counts: c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rows: Vec<RateRow>,
    pub timelines: Vec<TrialTimeline>,
}

fn simulate_trials(
    ctx: &ValidationContext,
    trials: usize,
    base_seed: u64,
    sensors: Option<usize>,
    k_max: usize,
) -> Result<Vec<TrialTimeline>> {
    let mut timelines = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let setup = draw_trial(ctx, trial_seed(base_seed, i), sensors)?;
            run_trial(ctx, &setup, k_max)
        })
        .collect::<Result<Vec<_>>>()?;
    timelines.sort_by_key(|t| t.seed);
    Ok(timelines)
}

/// Rates versus horizon. Every horizon classifies the same trials, each
/// simulated once with the largest horizon.
pub fn run_validation_sweep(
    ctx: &ValidationContext,
    horizons: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<ValidationReport> {
    if trials == 0 {
        log::warn!("no trials requested; every horizon row is omitted");
        return Ok(ValidationReport { rows: Vec::new(), timelines: Vec::new() });
    }
    let k_max = horizons.iter().copied().max().unwrap_or(0);
    let timelines = simulate_trials(ctx, trials, base_seed, None, k_max)?;
    let rows = horizons
        .iter()
        .map(|&k| {
            let outcomes = timelines.iter().map(|t| classify_trial(t, k)).collect::<Result<Vec<_>>>()?;
            Ok(RateRow::from_outcomes(k, &outcomes))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport { rows, timelines })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorRow {
    pub sensors: usize,
    pub row: RateRow,
}

/// Rates at horizon `k` versus the number of attacked sensors.
pub fn run_attacked_sensor_sweep(
    ctx: &ValidationContext,
    sensor_counts: &[usize],
    horizon: usize,
    trials: usize,
    base_seed: u64,
) -> Result<Vec<SensorRow>> {
    if trials == 0 {
        log::warn!("no trials requested; every sensor-count row is omitted");
        return Ok(Vec::new());
    }
    sensor_counts
        .iter()
        .map(|&s| {
            let timelines = simulate_trials(ctx, trials, base_seed, Some(s), horizon)?;
            let outcomes = timelines.iter().map(|t| classify_trial(t, horizon)).collect::<Result<Vec<_>>>()?;
            Ok(SensorRow { sensors: s, row: RateRow::from_outcomes(horizon, &outcomes) })
        })
        .collect()
}
