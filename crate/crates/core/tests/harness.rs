use std::path::{Path, PathBuf};
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reachmon::ellipsoid::ShapeMatrix;
use reachmon::harness::io::{write_rates_csv, write_roc_csv};
use reachmon::harness::stats::{
    binomial_upper_tails, isotonic_test, linear_fit, pava, quantile, sign_test, trend, wilson, Z95,
};
use reachmon::harness::{
    classify_trial, draw_trial, random_halfspaces, run_attacked_sensor_sweep, run_benchmark, run_comparison,
    run_validation_sweep, BenchConfig, Classification, ComparisonSetup, DetectionRule, OtherReason, RateRow,
    Scenario, TrialTimeline, ValidationContext,
};
use reachmon::linalg::{Mat, Vector};
use reachmon::monitor::Monitor;
use reachmon::reach::{compute_certificate, CertificateOptions};
use reachmon::{fmt_f64, Error};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn timeline(len: usize, warn: &[(usize, usize)], det: Option<usize>, dmg: Option<usize>) -> TrialTimeline {
    let mut k_f = vec![None; len];
    for &(k, f) in warn {
        k_f[k] = Some(f);
    }
    TrialTimeline { seed: 0, attack_present: true, k_f, detection_step: det, damage_step: dmg }
}

#[test]
fn classification_examples() {
    let tp = timeline(1000, &[(100, 200)], None, Some(300));
    assert_eq!(classify_trial(&tp, 500).unwrap().classification, Classification::TP);
    let tn = timeline(1000, &[], Some(200), None);
    assert_eq!(classify_trial(&tn, 500).unwrap().classification, Classification::TN);
    let fp = timeline(1000, &[(100, 300)], Some(150), Some(400));
    let out = classify_trial(&fp, 500).unwrap();
    assert_eq!(out.classification, Classification::FP);
    assert_eq!((out.warning_step, out.detection_step, out.damage_step), (Some(100), Some(150), Some(400)));
}

#[test]
fn classification_edge_cases() {
    let fn_ = timeline(1000, &[], None, Some(300));
    assert_eq!(classify_trial(&fn_, 500).unwrap().classification, Classification::FN);
    // A warning whose offset exceeds K does not count at K.
    let late = timeline(1000, &[(100, 300)], None, Some(400));
    assert_eq!(classify_trial(&late, 200).unwrap().classification, Classification::FN);
    assert_eq!(classify_trial(&late, 300).unwrap().classification, Classification::TP);
    // Warnings older than K before damage fall outside the window.
    let early = timeline(1000, &[(10, 5)], None, Some(400));
    assert_eq!(classify_trial(&early, 100).unwrap().classification, Classification::FN);
    let undecided = classify_trial(&timeline(50, &[], None, None), 10).unwrap();
    assert_eq!(undecided.other_reason, Some(OtherReason::Undecided));
    let no_damage = classify_trial(&timeline(500, &[(300, 1)], Some(350), None), 400).unwrap();
    assert_eq!(no_damage.other_reason, Some(OtherReason::DetectedWarnedNoDamage));
    let mut clean = timeline(50, &[(3, 1)], Some(9), Some(20));
    clean.attack_present = false;
    assert_eq!(classify_trial(&clean, 10).unwrap().other_reason, Some(OtherReason::NoAttack));
}

#[test]
fn classification_rejects_missing_truth() {
    assert!(matches!(classify_trial(&timeline(0, &[], None, None), 5), Err(Error::Classification(_))));
    assert!(matches!(classify_trial(&timeline(10, &[], None, Some(10)), 5), Err(Error::Classification(_))));
}

fn arb_timeline() -> impl Strategy<Value = (TrialTimeline, usize)> {
    (1usize..200).prop_flat_map(|len| {
        (
            prop::collection::vec(prop::option::of(0usize..300), len),
            prop::option::of(0..len),
            prop::option::of(0..len),
            any::<bool>(),
            0usize..300,
        )
            .prop_map(move |(k_f, det, dmg, attack, horizon)| {
                (TrialTimeline { seed: 1, attack_present: attack, k_f, detection_step: det, damage_step: dmg }, horizon)
            })
    })
}

proptest! {
    #[test]
    fn classification_is_a_partition((t, horizon) in arb_timeline()) {
        let out = classify_trial(&t, horizon).unwrap();
        let classes = [Classification::TP, Classification::TN, Classification::FP, Classification::FN, Classification::Other];
        prop_assert_eq!(classes.iter().filter(|&&c| c == out.classification).count(), 1);
        prop_assert_eq!(out.classification == Classification::Other, out.other_reason.is_some());
        match out.classification {
            Classification::TP | Classification::FN => {
                let dmg = t.damage_step.unwrap();
                prop_assert!(t.detection_step.is_none_or(|d| d > dmg));
            }
            Classification::FP => prop_assert!(t.detection_step.unwrap() <= t.damage_step.unwrap()),
            Classification::TN => prop_assert!(t.detection_step.is_some()),
            Classification::Other => {}
        }
        prop_assert!(t.attack_present || out.classification == Classification::Other);
        if let Some(w) = out.warning_step {
            prop_assert!(t.k_f[w].is_some_and(|f| f <= horizon));
        }
    }

    #[test]
    fn rows_count_every_trial((t, horizon) in arb_timeline(), copies in 1usize..20) {
        let outcomes: Vec<_> = (0..copies).map(|_| classify_trial(&t, horizon).unwrap()).collect();
        let row = RateRow::from_outcomes(horizon, &outcomes);
        prop_assert_eq!(row.counts.total(), copies as u64);
        for r in [&row.tpr, &row.fpr, &row.tnr, &row.fnr] {
            if let (Some(v), Some(lo), Some(hi)) = (r.value, r.lo, r.hi) {
                prop_assert!(lo <= v + 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn wilson_matches_frozen_values() {
    let (lo, hi) = wilson(5, 10, Z95).unwrap();
    assert!((lo - 0.236593090512564).abs() < 1e-12 && (hi - 0.7634069094874361).abs() < 1e-12);
    let (lo, hi) = wilson(0, 20, Z95).unwrap();
    assert!(lo == 0.0 && (hi - 0.16112515805281938).abs() < 1e-12);
    let (lo, hi) = wilson(19, 20, Z95).unwrap();
    assert!((lo - 0.763868806553258).abs() < 1e-12 && (hi - 0.9911185511992047).abs() < 1e-12);
    assert_eq!(wilson(0, 0, Z95), None);
}

#[test]
fn binomial_and_sign_tests() {
    assert!((sign_test(20, 20) - 0.5f64.powi(20)).abs() < 1e-18);
    assert_eq!(sign_test(0, 20), 1.0);
    let tails = binomial_upper_tails(4, 0.5);
    let expect = [1.0, 15.0 / 16.0, 11.0 / 16.0, 5.0 / 16.0, 1.0 / 16.0, 0.0];
    for (t, e) in tails.iter().zip(expect) {
        assert!((t - e).abs() < 1e-12);
    }
}

#[test]
fn isotonic_fit_pools_violators() {
    assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]), vec![1.0, 2.5, 2.5, 4.0]);
    assert_eq!(pava(&[3.0, 1.0], &[1.0, 3.0]), vec![1.5, 1.5]);
    let flat = isotonic_test(&[50, 60, 70, 80], &[100; 4]);
    assert_eq!(flat.statistic, 0.0);
    assert_eq!(flat.p_value, 1.0);
    let falling = isotonic_test(&[190, 100, 10], &[200; 3]);
    assert!(falling.p_value < 1e-6);
    assert_eq!(falling.dof, 2);
    let noisy = isotonic_test(&[100, 98, 104], &[200; 3]);
    assert!(noisy.p_value > 0.05);
}

#[test]
fn linear_fit_and_quantiles() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let fit = linear_fit(&x, &[3.0, 5.0, 7.0, 9.0]).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12 && (fit.r2 - 1.0).abs() < 1e-12);
    let noisy = linear_fit(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((noisy.slope - 0.8).abs() < 1e-12 && (noisy.r2 - 0.64).abs() < 1e-12);
    assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    assert!(trend(&[5.0, 4.0, 3.0]).unwrap() < 0.0);
    let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(quantile(&sorted, 0.5), 3.0);
    assert_eq!(quantile(&sorted, 0.125), 1.5);
    assert!(quantile(&[], 0.5).is_nan());
}

#[test]
fn detection_rule_counts_alarms_in_window() {
    let rule = DetectionRule { window: 4, count: 3 };
    let alarms = [true, false, true, false, false, true, true, false, true];
    assert_eq!(rule.first_detection(&alarms, 0), Some(8));
    assert_eq!(rule.first_detection(&alarms[..8], 0), None);
    let dense = [true, true, false, true, false];
    assert_eq!(rule.first_detection(&dense, 0), Some(3));
    assert_eq!(rule.first_detection(&dense, 4), None);
    let r = DetectionRule::for_false_rate(100, 0.05, 1e-6).unwrap();
    let tails = binomial_upper_tails(100, 0.05);
    assert!(tails[r.count] <= 1e-6 && tails[r.count - 1] > 1e-6);
    assert!(DetectionRule::for_false_rate(0, 0.05, 0.01).is_err());
}

#[test]
fn shipped_scenarios_load() {
    for name in ["synth_validation.json", "synth_baseline.json", "synth_nominal.json", "tep_like.json"] {
        let sc = Scenario::load(&scenarios().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        sc.validate().unwrap();
        assert_eq!(sc.initial_state().unwrap().len(), sc.model.n());
    }
    let tep = Scenario::load(&scenarios().join("tep_like.json")).unwrap();
    assert_eq!(tep.model.n(), 50);
    assert_eq!(tep.unsafe_set.len(), 8);
    assert!((tep.model.dt() - 1.8).abs() < 1e-12);
}

#[test]
fn scenario_schema_is_strict() {
    let base = scenarios();
    let text = std::fs::read_to_string(base.join("synth_nominal.json")).unwrap();
    assert!(Scenario::from_json_str(&text, &base).is_ok());
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["surprise"] = serde_json::json!(1);
    let err = Scenario::from_json_str(&v.to_string(), &base).unwrap_err();
    assert!(err.is_validation());
    let elsewhere = Scenario::from_json_str(&text, Path::new("/nonexistent"));
    assert!(elsewhere.is_err());
}

struct Ctx {
    ctx: ValidationContext,
}

fn validation_context() -> Ctx {
    let sc = Scenario::load(&scenarios().join("synth_validation.json")).unwrap();
    let (est, det) = sc.calibrate().unwrap();
    let cert = compute_certificate(&sc.model, &est, &det, &CertificateOptions::new(0.05)).unwrap();
    let ctx = ValidationContext::new(&sc, est, det, Arc::clone(cert.shape())).unwrap();
    Ctx { ctx }
}

#[test]
fn trial_draws_respect_template() {
    let c = validation_context();
    let t = &c.ctx.template;
    for seed in 0..50 {
        let setup = draw_trial(&c.ctx, seed, None).unwrap();
        let s = &setup.plan.sensors;
        assert!((t.sensors_min..=t.sensors_max).contains(&s.len()));
        let mut uniq = s.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), s.len());
        assert!((t.start_min..=t.start_max).contains(&setup.plan.start));
        assert_eq!(setup.unsafe_set.len(), s.len());
        assert!(setup.margins.iter().all(|m| (t.margin.min..=t.margin.max).contains(m)));
        assert!(setup.unsafe_set.halfspaces().iter().all(|h| h.name.ends_with("_low")));
        assert!(!setup.unsafe_set.contains(&c.ctx.x_op));
    }
    assert_eq!(draw_trial(&c.ctx, 9, None).unwrap().plan, draw_trial(&c.ctx, 9, None).unwrap().plan);
}

#[test]
fn sweeps_are_reproducible_and_complete() {
    let c = validation_context();
    assert!(run_validation_sweep(&c.ctx, &[50, 100], 0, 1).unwrap().rows.is_empty());
    let a = run_validation_sweep(&c.ctx, &[50, 100, 200], 12, 77).unwrap();
    let b = run_validation_sweep(&c.ctx, &[50, 100, 200], 12, 77).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 3);
    assert!(a.rows.iter().all(|r| r.counts.total() == 12));
    let mut buf = Vec::new();
    write_rates_csv(&mut buf, &a.rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("K,trials,TP,FP,TN,FN,other,"));
    let mut roc = Vec::new();
    write_roc_csv(&mut roc, &a.rows).unwrap();
    assert!(String::from_utf8(roc).unwrap().starts_with("FPR,TPR,K\n"));
}

#[test]
fn zero_attacked_sensors_means_no_attack() {
    let c = validation_context();
    let setup = draw_trial(&c.ctx, 3, Some(0)).unwrap();
    assert!(setup.plan.sensors.is_empty() && setup.unsafe_set.is_empty());
    let rows = run_attacked_sensor_sweep(&c.ctx, &[0], 100, 10, 5).unwrap();
    let counts = &rows[0].row.counts;
    assert_eq!((counts.tp, counts.fn_), (0, 0));
    assert_eq!(counts.other.get(&OtherReason::NoAttack).copied(), Some(10));
    assert!(run_attacked_sensor_sweep(&c.ctx, &[1], 100, 0, 5).unwrap().is_empty());
}

#[test]
fn baseline_scenario_warns_before_damage() {
    let sc = Scenario::load(&scenarios().join("synth_baseline.json")).unwrap();
    let (est, det) = sc.calibrate().unwrap();
    let cert = compute_certificate(&sc.model, &est, &det, &CertificateOptions::new(0.05)).unwrap();
    let setup = ComparisonSetup {
        scenario: &sc,
        estimator: &est,
        detector: &det,
        shape: Arc::clone(cert.shape()),
        detection: DetectionRule::for_false_rate(100, det.beta, 1e-6).unwrap(),
    };
    let run = run_comparison(&setup, 1).unwrap();
    assert!(run.qualifies);
    assert!(run.impact_before_damage);
    assert!(run.first_impact_step.unwrap() < run.damage_step.unwrap());
}

#[test]
fn benchmark_reports_every_point() {
    let sc = Scenario::load(&scenarios().join("synth_nominal.json")).unwrap();
    let shape = Arc::new(ShapeMatrix::new(Mat::identity(4, 4) * 0.5).unwrap());
    let center = Vector::zeros(4);
    let cfg = BenchConfig::sweeps(&[10, 20], 5, &[5, 10], 20, 1000, 3);
    assert_eq!(cfg.points, vec![(10, 5), (20, 5), (20, 10)]);
    let recs = run_benchmark(&sc.model, &sc.controller, &shape, &center, &cfg).unwrap();
    assert_eq!(recs.len(), 3);
    for r in &recs {
        assert_eq!(r.checks, 1000);
        assert!(r.mean_s > 0.0 && r.p50_s <= r.p95_s && r.p95_s <= r.p99_s && r.p99_s <= r.max_s);
    }
    let few = BenchConfig { checks: 10, ..cfg };
    assert!(run_benchmark(&sc.model, &sc.controller, &shape, &center, &few).is_err());
}

#[test]
fn random_constraints_stay_clear_of_reach_set() {
    let sc = Scenario::load(&scenarios().join("synth_nominal.json")).unwrap();
    let shape = Arc::new(ShapeMatrix::new(Mat::identity(4, 4) * 2.0).unwrap());
    let center = Vector::from_element(4, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = random_halfspaces(200, &center, &shape, &mut rng).unwrap();
    let m = Monitor::with_shape(0, shape, u, sc.model.clone(), sc.controller.clone()).unwrap();
    assert_eq!(m.check_exhaustive(&center, &sc.controller.initial_state(), 0), 0);
}

#[test]
fn floats_keep_seventeen_digits() {
    for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0] {
        let s = fmt_f64(x);
        assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
    }
    assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap().to_bits(), 0.1f64.to_bits());
}
