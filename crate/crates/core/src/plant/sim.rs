use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{synthesize_stealthy_delta, AttackPlan, Controller, ControllerState, LtiModel};
use crate::error::{dim_check, Result};
use crate::estimation::{chi2_statistic, DetectorConfig, EstimatorConfig};
use crate::linalg::Vector;
use crate::util::fmt_f64;

/// Plant noise and attack draws come from two streams of one seed.
pub fn trial_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let noise = ChaCha8Rng::seed_from_u64(seed);
    let mut attack = ChaCha8Rng::seed_from_u64(seed);
    attack.set_stream(1);
    (noise, attack)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vector,
    pub x_hat: Vector,
    pub u: Vector,
    pub y: Vector,
    pub y_hat: Vector,
    pub y_bar: Vector,
    pub delta: Vector,
    pub z: f64,
    pub alarm: bool,
    /// Controller integrator before the law ran at this step.
    pub integral: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub seed: u64,
    pub model_id: String,
    pub records: Vec<StepRecord>,
}

#[derive(Clone, Copy)]
pub struct ClosedLoop<'a> {
    pub model: &'a LtiModel,
    pub controller: &'a Controller,
    pub estimator: &'a EstimatorConfig,
    pub detector: &'a DetectorConfig,
    pub plan: &'a AttackPlan,
}

impl ClosedLoop<'_> {
    pub fn validate(&self) -> Result<()> {
        let (n, m, l) = (self.model.n(), self.model.m(), self.model.l());
        self.controller.validate(l, m)?;
        self.estimator.check_stable(self.model)?;
        dim_check(self.detector.dof == m, || {
            format!("detector has {} degrees of freedom, expected {m}", self.detector.dof)
        })?;
        self.plan.validate(m)?;
        dim_check(self.estimator.n() == n, || "estimator state dimension".into())
    }
}

/// Step-by-step closed-loop simulation over `k = 0..=horizon`, yielding one
/// record per step without storing the trace.
pub struct Simulation<'a> {
    loop_: ClosedLoop<'a>,
    horizon: usize,
    k: usize,
    x: Vector,
    x_hat: Vector,
    ctrl_state: ControllerState,
    noise_rng: ChaCha8Rng,
    attack_rng: ChaCha8Rng,
}

impl<'a> Simulation<'a> {
    /// The estimate starts at `x0`.
    pub fn new(loop_: ClosedLoop<'a>, horizon: usize, seed: u64, x0: &Vector) -> Result<Self> {
        loop_.validate()?;
        dim_check(x0.len() == loop_.model.n(), || {
            format!("initial state has length {}, expected {}", x0.len(), loop_.model.n())
        })?;
        let (noise_rng, attack_rng) = trial_rngs(seed);
        Ok(Simulation {
            ctrl_state: loop_.controller.initial_state(),
            loop_,
            horizon,
            k: 0,
            x: x0.clone(),
            x_hat: x0.clone(),
            noise_rng,
            attack_rng,
        })
    }
}

impl Iterator for Simulation<'_> {
    type Item = StepRecord;

    fn next(&mut self) -> Option<StepRecord> {
        let k = self.k;
        if k > self.horizon {
            return None;
        }
        self.k += 1;
        let lp = &self.loop_;
        let model = lp.model;
        let v = model.sample_measurement_noise(&mut self.noise_rng);
        let y = model.c() * &self.x + v;
        let y_hat = model.c() * &self.x_hat;
        let delta =
            synthesize_stealthy_delta(lp.plan, k, &y, &y_hat, lp.estimator, lp.detector, &mut self.attack_rng);
        let y_bar = &y + &delta;
        let residual = &y_bar - &y_hat;
        let z = chi2_statistic(lp.estimator, &residual);
        let integral = self.ctrl_state.integral.clone();
        let u = lp.controller.control_law(&mut self.ctrl_state, &y_bar, k, model.dt());
        let (next_x, next_hat) = if k < self.horizon {
            let w = model.sample_process_noise(&mut self.noise_rng);
            let nx = model.a() * &self.x + model.b() * &u + w;
            let nh = model.a() * &self.x_hat + model.b() * &u + lp.estimator.gain() * &residual;
            (nx, nh)
        } else {
            (Vector::zeros(0), Vector::zeros(0))
        };
        Some(StepRecord {
            k,
            x: std::mem::replace(&mut self.x, next_x),
            x_hat: std::mem::replace(&mut self.x_hat, next_hat),
            u,
            y,
            y_hat,
            y_bar,
            delta,
            z,
            alarm: z > lp.detector.tau,
            integral,
        })
    }
}

/// Simulates `k = 0..=horizon` from `x0`, with the estimate starting at `x0`.
pub fn run_closed_loop(loop_: &ClosedLoop<'_>, horizon: usize, seed: u64, x0: &Vector) -> Result<SimTrace> {
    let model_id = loop_.model.fingerprint();
    let records = Simulation::new(loop_.clone(), horizon, seed, x0)?.collect();
    Ok(SimTrace { seed, model_id, records })
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Columns: `k, x_*, xhat_*, u_*, y_*, yhat_*, ybar_*, delta_*, z, alarm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let Some(first) = self.records.first() else {
            return writeln!(w, "k");
        };
        let mut header = vec!["k".to_string()];
        for (prefix, len) in [
            ("x", first.x.len()),
            ("xhat", first.x_hat.len()),
            ("u", first.u.len()),
            ("y", first.y.len()),
            ("yhat", first.y_hat.len()),
            ("ybar", first.y_bar.len()),
            ("delta", first.delta.len()),
        ] {
            header.extend((0..len).map(|i| format!("{prefix}_{i}")));
        }
        header.push("z".into());
        header.push("alarm".into());
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            for v in [&r.x, &r.x_hat, &r.u, &r.y, &r.y_hat, &r.y_bar, &r.delta] {
                row.extend(v.iter().map(|&e| fmt_f64(e)));
            }
            row.push(fmt_f64(r.z));
            row.push(u8::from(r.alarm).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
