use std::path::PathBuf;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reachmon::estimation::{calibrate_estimator, chi2_statistic, DetectorConfig, EstimatorConfig};
use reachmon::harness::Scenario;
use reachmon::linalg::{frobenius_relative, Mat, Vector};
use reachmon::plant::{
    run_closed_loop, synthesize_stealthy_delta, AttackPlan, AttackStrategy, ClosedLoop, Controller, Knot,
    LtiModel, Reference, STEALTH_EPS,
};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scalar(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}

fn sample_model() -> LtiModel {
    LtiModel::load(&root().join("models/synth_small.json")).unwrap()
}

fn unit_residual_estimator(m: usize) -> EstimatorConfig {
    EstimatorConfig::new(Mat::zeros(1, m), Mat::identity(m, m), Mat::zeros(1, 1)).unwrap()
}

#[test]
fn noise_free_steps_are_exact() {
    let n = 3;
    let z = Mat::zeros(n, n);
    let model = LtiModel::new(Mat::identity(n, n), Mat::zeros(n, 1), Mat::identity(n, n), z.clone(), z, 1.0).unwrap();
    let x0 = Vector::from_row_slice(&[1.0, -2.0, 3.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (next, y) = model.step_plant(&x0, &Vector::zeros(1), &mut rng).unwrap();
    assert_eq!(next, x0);
    assert_eq!(y, x0);

    let model = LtiModel::new(scalar(0.5), scalar(1.0), scalar(1.0), scalar(0.0), scalar(0.0), 1.0).unwrap();
    let (next, y) = model.step_plant(&Vector::from_element(1, 2.0), &Vector::from_element(1, 1.0), &mut rng).unwrap();
    assert_eq!(next[0], 2.0);
    assert_eq!(y[0], 2.0);
}

#[test]
fn step_rejects_wrong_dimensions() {
    let model = sample_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(model.step_plant(&Vector::zeros(2), &Vector::zeros(model.l()), &mut rng).is_err());
    assert!(model.step_plant(&Vector::zeros(model.n()), &Vector::zeros(1), &mut rng).is_err());
}

#[test]
fn process_noise_covariance_is_reproduced() {
    let n = 3;
    let s2 = 0.25;
    let a = Mat::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.0, 0.9, 0.2, 0.0, 0.0, 0.3]);
    let model =
        LtiModel::new(a, Mat::identity(n, 1), Mat::identity(n, n), Mat::identity(n, n) * s2, Mat::identity(n, n), 1.0)
            .unwrap();
    let x = Vector::from_row_slice(&[1.0, 2.0, 3.0]);
    let u = Vector::from_element(1, -1.0);
    let mean_next = model.a() * &x + model.b() * &u;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let mut cov = Mat::zeros(n, n);
    for _ in 0..draws {
        let (next, _) = model.step_plant(&x, &u, &mut rng).unwrap();
        let d = next - &mean_next;
        cov += &d * d.transpose();
    }
    cov /= draws as f64;
    assert!(frobenius_relative(&cov, &(Mat::identity(n, n) * s2)) < 0.03);
}

#[test]
fn model_files_round_trip_and_reject_bad_input() {
    let model = sample_model();
    let text = serde_json::to_string(&model).unwrap();
    let back = LtiModel::from_json_str(&text).unwrap();
    assert_eq!(back.fingerprint(), model.fingerprint());
    assert_eq!((model.n(), model.m(), model.l()), (4, 3, 3));

    let ok = r#"{"A":[[0.5]],"B":[[1.0]],"C":[[1.0]],"Sigma1":[[1.0]],"Sigma2":[[1.0]],"dt":0.5}"#;
    assert!(LtiModel::from_json_str(ok).is_ok());
    let cases = [
        ok.replace("\"dt\":0.5", "\"dt\":0.0"),
        ok.replace("\"Sigma1\":[[1.0]]", "\"Sigma1\":[[-1.0]]"),
        ok.replace("\"B\":[[1.0]]", "\"B\":[[1.0],[2.0]]"),
        ok.replace("\"dt\":0.5", "\"dt\":0.5,\"extra\":1"),
        ok.replace("\"A\":[[0.5]],", ""),
    ];
    for bad in cases {
        let err = LtiModel::from_json_str(&bad).unwrap_err();
        assert!(err.is_validation(), "{bad}: {err}");
    }
}

#[test]
fn control_law_examples() {
    let ctrl = Controller::proportional(scalar(2.0), Reference::Constant(Vector::from_element(1, 1.0)));
    let mut st = ctrl.initial_state();
    assert_eq!(ctrl.control_law(&mut st, &Vector::from_element(1, 1.0), 0, 1.0)[0], 0.0);
    assert_eq!(ctrl.control_law(&mut st, &Vector::from_element(1, 4.0), 0, 1.0)[0], 6.0);

    let pi = Controller { integral_gain: Some(scalar(0.5)), ..ctrl.clone() };
    let mut st = pi.initial_state();
    assert_eq!(pi.control_law(&mut st, &Vector::from_element(1, 4.0), 0, 0.1)[0], 6.0);
    assert!((st.integral[0] - 0.3).abs() < 1e-15);
    assert!((pi.control_law(&mut st, &Vector::from_element(1, 4.0), 1, 0.1)[0] - 6.15).abs() < 1e-12);
}

#[test]
fn reference_schedule_is_piecewise_constant() {
    let r = Reference::Schedule {
        knots: vec![
            Knot { k: 0, value: Vector::from_element(1, 1.0) },
            Knot { k: 10, value: Vector::from_element(1, 5.0) },
        ],
    };
    assert_eq!(r.at(0)[0], 1.0);
    assert_eq!(r.at(9)[0], 1.0);
    assert_eq!(r.at(10)[0], 5.0);
    assert_eq!(r.at(1000)[0], 5.0);
    let ctrl = Controller::proportional(scalar(1.0), r);
    assert!(ctrl.validate(1, 1).is_ok());
    let bad = Controller::proportional(
        scalar(1.0),
        Reference::Schedule {
            knots: vec![
                Knot { k: 4, value: Vector::from_element(1, 1.0) },
                Knot { k: 4, value: Vector::from_element(1, 2.0) },
            ],
        },
    );
    assert!(bad.validate(1, 1).is_err());
    assert!(ctrl.validate(1, 2).is_err());
}

fn steering(direction: f64, mimic: f64) -> AttackPlan {
    AttackPlan {
        start: 5,
        end: 1_000_000,
        sensors: vec![0],
        strategy: AttackStrategy::ResidualSteering { direction: Vector::from_element(1, direction) },
        alarm_mimic_rate: mimic,
    }
}

#[test]
fn inactive_plan_injects_nothing() {
    let est = unit_residual_estimator(1);
    let det = DetectorConfig::new(3.84, 0.05, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = Vector::from_element(1, 0.7);
    let d = synthesize_stealthy_delta(&steering(1.0, 0.0), 4, &y, &Vector::zeros(1), &est, &det, &mut rng);
    assert_eq!(d, Vector::zeros(1));
}

#[test]
fn steering_residual_sits_inside_threshold() {
    let est = unit_residual_estimator(1);
    let det = DetectorConfig::new(3.84, 0.05, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (y, y_hat) = (Vector::from_element(1, 0.4), Vector::from_element(1, -0.2));
    let d = synthesize_stealthy_delta(&steering(1.0, 0.0), 5, &y, &y_hat, &est, &det, &mut rng);
    let shaped = &y - &y_hat + d;
    assert!((shaped[0] - 3.84f64.sqrt() * (1.0 - STEALTH_EPS)).abs() < 1e-12);
    let z = chi2_statistic(&est, &shaped);
    assert!((z - shaped[0] * shaped[0]).abs() < 1e-12);
    assert!(z < 3.84);
}

fn alarm_frequency(plan: &AttackPlan, steps: usize, seed: u64) -> f64 {
    let est = unit_residual_estimator(2);
    let det = DetectorConfig::from_beta(0.05, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut alarms = 0;
    for k in plan.start..plan.start + steps {
        let y = Vector::from_fn(2, |_, _| rand::Rng::sample::<f64, _>(&mut noise, rand_distr::StandardNormal));
        let d = synthesize_stealthy_delta(plan, k, &y, &Vector::zeros(2), &est, &det, &mut rng);
        if chi2_statistic(&est, &(&y + &d)) > det.tau {
            alarms += 1;
        }
    }
    alarms as f64 / steps as f64
}

#[test]
fn stealthy_alarm_rate_mimics_beta() {
    let plans = [
        AttackPlan {
            start: 0,
            end: usize::MAX,
            sensors: vec![0, 1],
            strategy: AttackStrategy::ResidualSteering { direction: Vector::from_row_slice(&[1.0, -1.0]) },
            alarm_mimic_rate: 0.05,
        },
        AttackPlan {
            start: 0,
            end: usize::MAX,
            sensors: vec![1],
            strategy: AttackStrategy::GrowingBias { rate: 0.01, stealthy: true },
            alarm_mimic_rate: 0.05,
        },
    ];
    for plan in &plans {
        let long = alarm_frequency(plan, 100_000, 7);
        assert!((0.04..=0.06).contains(&long), "{long}");
        let se = (0.05f64 * 0.95 / 10_000.0).sqrt();
        let short = alarm_frequency(plan, 10_000, 8);
        assert!((short - 0.05).abs() <= 2.0 * se, "{short}");
    }
}

proptest! {
    #[test]
    fn attack_is_zero_outside_window(start in 0usize..50, len in 0usize..50, k in 0usize..150, seed in any::<u64>()) {
        let est = unit_residual_estimator(2);
        let det = DetectorConfig::from_beta(0.05, 2).unwrap();
        let plan = AttackPlan {
            start,
            end: start + len,
            sensors: vec![0],
            strategy: AttackStrategy::GrowingBias { rate: 0.3, stealthy: false },
            alarm_mimic_rate: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = Vector::from_row_slice(&[0.2, -0.1]);
        let d = synthesize_stealthy_delta(&plan, k, &y, &Vector::zeros(2), &est, &det, &mut rng);
        if k < start || k > start + len {
            prop_assert_eq!(d, Vector::zeros(2));
        } else {
            prop_assert_eq!(d[0], 0.3 * (k - start) as f64);
        }
    }
}

struct Setup {
    model: LtiModel,
    ctrl: Controller,
    est: EstimatorConfig,
    det: DetectorConfig,
}

fn setup() -> Setup {
    let model = sample_model();
    let est = calibrate_estimator(&model).unwrap();
    let det = DetectorConfig::from_beta(0.05, model.m()).unwrap();
    let ctrl = Controller::proportional(Mat::identity(3, 3) * -2.0, Reference::zeros(3));
    Setup { model, ctrl, est, det }
}

#[test]
fn closed_loop_contracts() {
    let s = setup();
    let bias = AttackPlan {
        start: 10,
        end: 40,
        sensors: vec![2],
        strategy: AttackStrategy::GrowingBias { rate: 0.05, stealthy: true },
        alarm_mimic_rate: 0.05,
    };
    let late = AttackPlan { start: 500, end: 600, ..bias.clone() };
    let none = AttackPlan::none();
    let x0 = Vector::from_element(4, 0.5);
    let run = |plan: &AttackPlan, horizon, seed| {
        let lp = ClosedLoop { model: &s.model, controller: &s.ctrl, estimator: &s.est, detector: &s.det, plan };
        run_closed_loop(&lp, horizon, seed, &x0).unwrap()
    };

    let single = run(&none, 0, 1);
    assert_eq!(single.len(), 1);
    assert_eq!(single.records[0].x, x0);

    let a = run(&bias, 100, 9);
    assert_eq!(a, run(&bias, 100, 9));
    assert_ne!(a, run(&bias, 100, 10));
    assert_eq!(a.len(), 101);
    assert!(a.records.iter().enumerate().all(|(i, r)| r.k == i));
    for r in &a.records {
        if r.k < 10 || r.k > 40 {
            assert_eq!(r.delta, Vector::zeros(3));
        }
        assert_eq!(r.y_bar, &r.y + &r.delta);
    }
    assert!(a.records.iter().any(|r| r.delta != Vector::zeros(3)));
    assert_eq!(run(&late, 100, 9), run(&none, 100, 9));
}

#[test]
fn trace_csv_has_one_row_per_step() {
    let s = setup();
    let plan = AttackPlan::none();
    let lp = ClosedLoop { model: &s.model, controller: &s.ctrl, estimator: &s.est, detector: &s.det, plan: &plan };
    let trace = run_closed_loop(&lp, 5, 3, &Vector::zeros(4)).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header[0], "k");
    for col in ["x_0", "x_3", "u_2", "y_0", "ybar_2", "delta_0"] {
        assert!(header.contains(&col), "missing {col}");
    }
    assert!(lines[1..].iter().all(|l| l.split(',').count() == header.len()));
}

#[test]
fn noise_free_loops_settle_on_shipped_models() {
    for name in ["synth_validation.json", "tep_like.json"] {
        let sc = Scenario::load(&root().join("scenarios").join(name)).unwrap();
        let zero = Mat::zeros(sc.model.n(), sc.model.n());
        let quiet = LtiModel::new(
            sc.model.a().clone(),
            sc.model.b().clone(),
            sc.model.c().clone(),
            zero,
            Mat::zeros(sc.model.m(), sc.model.m()),
            sc.model.dt(),
        )
        .unwrap();
        let mut state = sc.controller.initial_state();
        let mut x = Vector::from_element(sc.model.n(), 1.0);
        let mut errs = Vec::new();
        for k in 0..20_000 {
            let y = quiet.c() * &x;
            errs.push((&y - sc.controller.reference.at(k)).norm());
            let u = sc.controller.control_law(&mut state, &y, k, quiet.dt());
            x = quiet.a() * &x + quiet.b() * u;
        }
        let tail = errs[errs.len() - 100..].iter().copied().fold(0.0, f64::max);
        assert!(tail < 1e-6, "{name}: tail error {tail}");
        assert!(tail < errs[0]);
    }
}
