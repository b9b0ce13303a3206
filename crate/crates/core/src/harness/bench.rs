use std::hint::black_box;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::stats::quantile;
use crate::ellipsoid::{HalfSpace, ShapeMatrix, UnsafeSet};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::monitor::Monitor;
use crate::plant::{Controller, LtiModel};

/// Fewest timed checks per configuration.
pub const MIN_CHECKS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub n: usize,
    pub horizon: usize,
    pub constraints: usize,
    pub checks: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub p99_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// `(K, constraint count)` pairs.
    pub points: Vec<(usize, usize)>,
    pub checks: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl BenchConfig {
    /// A sweep over `horizons` at `base_constraints` followed by a sweep over
    /// `constraint_counts` at `base_horizon`, without repeated points.
    pub fn sweeps(
        horizons: &[usize],
        base_constraints: usize,
        constraint_counts: &[usize],
        base_horizon: usize,
        checks: usize,
        seed: u64,
    ) -> Self {
        let mut points: Vec<(usize, usize)> = horizons.iter().map(|&k| (k, base_constraints)).collect();
        for &c in constraint_counts {
            if !points.contains(&(base_horizon, c)) {
                points.push((base_horizon, c));
            }
        }
        BenchConfig { points, checks, warmup: checks / 10, seed }
    }
}

/// Random half-spaces with unit normals whose boundaries clear the reach
/// set around `center` by a random gap, so no check ever finds a violation.
pub fn random_halfspaces<R: Rng + ?Sized>(
    count: usize,
    center: &Vector,
    shape: &ShapeMatrix,
    rng: &mut R,
) -> Result<UnsafeSet> {
    let n = center.len();
    let hs = (0..count)
        .map(|i| {
            let mut c = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            c /= c.norm();
            let gap = rng.random_range(1.0..10.0) * (1.0 + shape.support(&c));
            let offset = c.dot(center) + shape.support(&c) + gap;
            HalfSpace::named(format!("h{i}"), c, offset)
        })
        .collect::<Result<Vec<_>>>()?;
    UnsafeSet::new(hs)
}

/// Wall-clock latency of exhaustive checks (every predicted step and every
/// constraint visited). Runs on the calling thread. Configurations are
/// timed round-robin, one check each per round, so drift in machine speed
/// is shared by all of them.
pub fn run_benchmark(
    model: &LtiModel,
    controller: &Controller,
    shape: &Arc<ShapeMatrix>,
    center: &Vector,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRecord>> {
    if cfg.checks < MIN_CHECKS {
        return Err(Error::Invalid(format!("at least {MIN_CHECKS} checks per point are required")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctrl_state = controller.initial_state();
    let monitors = cfg
        .points
        .iter()
        .map(|&(horizon, constraints)| {
            let unsafe_set = random_halfspaces(constraints, center, shape, &mut rng)?;
            Monitor::with_shape(horizon, Arc::clone(shape), unsafe_set, model.clone(), controller.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<Vector> = (0..cfg.checks + cfg.warmup)
        .map(|_| center + Vector::from_fn(center.len(), |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut times = vec![Vec::with_capacity(cfg.checks); monitors.len()];
    for (round, x) in inputs.iter().enumerate() {
        for (monitor, t) in monitors.iter().zip(times.iter_mut()) {
            let t0 = Instant::now();
            black_box(monitor.check_exhaustive(black_box(x), &ctrl_state, 0));
            let dt = t0.elapsed().as_secs_f64();
            if round >= cfg.warmup {
                t.push(dt);
            }
        }
    }
    Ok(cfg
        .points
        .iter()
        .zip(times)
        .map(|(&(horizon, constraints), mut t)| {
            t.sort_by(f64::total_cmp);
            BenchRecord {
                n: model.n(),
                horizon,
                constraints,
                checks: t.len(),
                mean_s: t.iter().sum::<f64>() / t.len() as f64,
                p50_s: quantile(&t, 0.5),
                p95_s: quantile(&t, 0.95),
                p99_s: quantile(&t, 0.99),
                max_s: t.last().copied().unwrap_or(f64::NAN),
            }
        })
        .collect())
}
