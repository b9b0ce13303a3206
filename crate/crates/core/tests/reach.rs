use std::sync::Arc;

use reachmon::estimation::{DetectorConfig, EstimatorConfig};
use reachmon::linalg::{Mat, Vector};
use reachmon::plant::LtiModel;
use reachmon::reach::{
    b_grid, compute_certificate, instantiate_reach_set, noise_energy_bound, solve_maxdet_lmi, CertificateOptions,
    LmiOutcome, LmiProblem, ReachCertificate, MC_SEED,
};
use reachmon::Error;

/// `0.95`-quantile of `χ²₁ + 4χ²₁`, from adaptive quadrature of the
/// convolution integral.
const DIAG_1_4_Q95: f64 = 16.578882915849668;

fn scalar(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}

/// Eigenvalues of the 4×4 block matrix for scalar data, assembled by hand.
fn scalar_q_min_eig_ratio(p: f64, a: f64, l: f64, s: f64, energy: f64, b: f64) -> f64 {
    let c = (1.0 - b) / energy;
    let q = Mat::from_row_slice(
        4,
        4,
        &[
            b * p, a * p, 0.0, 0.0,
            a * p, p, p, -p * l * s,
            0.0, p, c, 0.0,
            0.0, -p * l * s, 0.0, c,
        ],
    );
    let eig = q.symmetric_eigenvalues();
    eig.min() / eig.max().abs()
}

/// Largest feasible `P` on a log grid over `[1e-6, 1e2]`, refined by bisection.
fn brute_force_objective(a: f64, l: f64, s: f64, energy: f64, b: f64) -> Option<f64> {
    let feasible = |p: f64| scalar_q_min_eig_ratio(p, a, l, s, energy, b) >= -1e-12;
    let steps = 20_000;
    let grid = |i: usize| 10f64.powf(-6.0 + 8.0 * i as f64 / steps as f64);
    let best = (0..=steps).rev().find(|&i| feasible(grid(i)))?;
    let (mut lo, mut hi) = (grid(best), grid((best + 1).min(steps)));
    if best < steps {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Some(-lo.ln())
}

fn oracle_problem(a: f64) -> LmiProblem {
    LmiProblem::new(&scalar(a), &scalar(0.5), &scalar(1.0), 3.84, 6.63).unwrap()
}

#[test]
fn noise_bound_examples() {
    let unit = noise_energy_bound(&scalar(1.0), 0.99, MC_SEED).unwrap();
    assert!((unit.w_bar - 6.6348966010212145).abs() < 1e-8);
    assert_eq!(unit.std_error, 0.0);
    let iso = noise_energy_bound(&(Mat::identity(2, 2) * 3.0), 0.99, MC_SEED).unwrap();
    assert!((iso.w_bar - 3.0 * -2.0 * 0.01f64.ln()).abs() < 1e-8);
    assert_eq!(noise_energy_bound(&Mat::zeros(3, 3), 0.9, MC_SEED).unwrap().w_bar, 0.0);
    assert!(matches!(noise_energy_bound(&scalar(1.0), 1.0, MC_SEED), Err(Error::Domain(_))));
}

#[test]
fn anisotropic_noise_bound_matches_quadrature() {
    let nb = noise_energy_bound(&Mat::from_diagonal(&Vector::from_row_slice(&[1.0, 4.0])), 0.95, MC_SEED).unwrap();
    assert!(nb.std_error > 0.0);
    assert!(nb.std_error / nb.w_bar <= 0.01);
    assert!((nb.w_bar - DIAG_1_4_Q95).abs() <= 4.0 * nb.std_error, "{} vs {DIAG_1_4_Q95}", nb.w_bar);
    let again = noise_energy_bound(&Mat::from_diagonal(&Vector::from_row_slice(&[1.0, 4.0])), 0.95, MC_SEED).unwrap();
    assert_eq!(nb, again);
}

#[test]
fn scalar_solver_matches_brute_force_sweep() {
    let prob = oracle_problem(0.9);
    let LmiOutcome::Solved(sol) = solve_maxdet_lmi(&prob, 0.85).unwrap() else {
        panic!("oracle instance should be feasible");
    };
    let oracle = brute_force_objective(0.9, 0.5, 1.0, 3.84 + 6.63, 0.85).unwrap();
    assert!((sol.objective - oracle).abs() <= 0.01 * oracle.abs().max(1.0), "{} vs {oracle}", sol.objective);
    assert!(sol.min_eig_ratio >= -1e-8);
    assert!(prob.check(&sol.p, 0.85));
}

#[test]
fn unit_root_is_infeasible_everywhere() {
    let prob = oracle_problem(1.0);
    for b in b_grid(0.05).unwrap() {
        assert!(matches!(solve_maxdet_lmi(&prob, b).unwrap(), LmiOutcome::Infeasible { .. }), "b={b}");
    }
}

#[test]
fn grid_covers_open_interval() {
    let g = b_grid(0.01).unwrap();
    assert_eq!(g.len(), 99);
    assert!((g[0] - 0.01).abs() < 1e-15 && (g[98] - 0.99).abs() < 1e-12);
    assert_eq!(b_grid(0.5).unwrap(), vec![0.5]);
    assert!(b_grid(0.0).is_err() && b_grid(1.0).is_err());
}

struct Oracle {
    model: LtiModel,
    est: EstimatorConfig,
    det: DetectorConfig,
}

/// Scalar plant with `A = 0.9`, `L = 0.5`, `Σ = 1`.
fn oracle_system(tau: f64) -> Oracle {
    let model = LtiModel::new(scalar(0.9), scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), 1.0).unwrap();
    let est = EstimatorConfig::new(scalar(0.5), scalar(1.0), scalar(1.0)).unwrap();
    let det = DetectorConfig::new(tau, 0.05, 1).unwrap();
    Oracle { model, est, det }
}

fn certify(o: &Oracle, delta_h: f64) -> ReachCertificate {
    let opts = CertificateOptions { p: Some(0.99), ..CertificateOptions::new(delta_h) };
    compute_certificate(&o.model, &o.est, &o.det, &opts).unwrap()
}

#[test]
fn certificate_matches_grid_of_sweeps() {
    let o = oracle_system(3.84);
    let cert = certify(&o, 0.05);
    let energy = cert.tau() + cert.w_bar();
    let best = b_grid(0.05)
        .unwrap()
        .into_iter()
        .filter_map(|b| brute_force_objective(0.9, 0.5, 1.0, energy, b))
        .fold(f64::INFINITY, f64::min);
    assert!((cert.objective() - best).abs() <= 0.01 * best.abs().max(1.0), "{} vs {best}", cert.objective());
    assert!((cert.pi()[(0, 0)] - cert.objective().exp()).abs() < 1e-9 * cert.pi()[(0, 0)]);
}

#[test]
fn single_point_grid_returns_that_point() {
    // Feasibility needs b > A², so the grid {0.5} only works for |A| < 0.707.
    let mut o = oracle_system(3.84);
    assert!(matches!(
        compute_certificate(&o.model, &o.est, &o.det, &CertificateOptions::new(0.5)),
        Err(Error::Certificate(_))
    ));
    o.model = LtiModel::new(scalar(0.5), scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), 1.0).unwrap();
    let cert = certify(&o, 0.5);
    assert_eq!(cert.b_star(), 0.5);
    let prob = LmiProblem::new(&scalar(0.5), &scalar(0.5), &scalar(1.0), cert.tau(), cert.w_bar()).unwrap();
    let LmiOutcome::Solved(sol) = solve_maxdet_lmi(&prob, 0.5).unwrap() else {
        panic!("b = 0.5 should be feasible");
    };
    assert!((sol.objective - cert.objective()).abs() < 1e-12);
}

#[test]
fn weaker_detector_never_shrinks_reach_set() {
    let dets: Vec<f64> = [0.5, 1.0, 2.0, 3.84, 8.0, 16.0]
        .iter()
        .map(|&tau| certify(&oracle_system(tau), 0.05).pi()[(0, 0)])
        .collect();
    assert!(dets.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)), "{dets:?}");
}

#[test]
fn finer_grid_never_worsens_objective() {
    let o = oracle_system(3.84);
    for (coarse, fine) in [(0.1, 0.05), (0.05, 0.025), (0.02, 0.01)] {
        let (c, f) = (certify(&o, coarse), certify(&o, fine));
        assert!(f.objective() <= c.objective() + 1e-9, "{coarse}: {} < {}", c.objective(), f.objective());
    }
}

#[test]
fn certificate_round_trips_and_detects_tampering() {
    let o = oracle_system(3.84);
    let cert = certify(&o, 0.1);
    cert.verify(&o.model).unwrap();
    cert.verify_with(&o.model, &o.est, &o.det).unwrap();
    let text = cert.to_json();
    let back: ReachCertificate = serde_json::from_str(&text).unwrap();
    back.verify(&o.model).unwrap();
    assert_eq!(back.pi(), cert.pi());

    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["Pi"][0][0] = serde_json::json!(cert.pi()[(0, 0)] * 1.5);
    let tampered: ReachCertificate = serde_json::from_value(value).unwrap();
    assert!(matches!(tampered.verify(&o.model), Err(Error::Certificate(_))));

    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["b_star"] = serde_json::json!(0.3);
    let tampered: ReachCertificate = serde_json::from_value(value).unwrap();
    assert!(matches!(tampered.verify(&o.model), Err(Error::Certificate(_))));

    let other = LtiModel::new(scalar(0.8), scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), 1.0).unwrap();
    assert!(matches!(cert.verify(&other), Err(Error::Certificate(_))));
    let other_det = DetectorConfig::new(3.0, 0.05, 1).unwrap();
    assert!(matches!(cert.verify_with(&o.model, &o.est, &other_det), Err(Error::Certificate(_))));
}

#[test]
fn infeasible_model_yields_certificate_error() {
    let model = LtiModel::new(scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), 1.0).unwrap();
    let est = EstimatorConfig::new(scalar(0.5), scalar(1.0), scalar(1.0)).unwrap();
    let det = DetectorConfig::new(3.84, 0.05, 1).unwrap();
    let res = compute_certificate(&model, &est, &det, &CertificateOptions::new(0.25));
    assert!(matches!(res, Err(Error::Certificate(_))));
}

#[test]
fn reach_sets_share_one_shape() {
    let o = oracle_system(3.84);
    let cert = certify(&o, 0.1);
    let e0 = instantiate_reach_set(&cert, &Vector::zeros(1)).unwrap();
    let e1 = instantiate_reach_set(&cert, &Vector::from_element(1, 4.0)).unwrap();
    assert_eq!(e0.center(), &Vector::zeros(1));
    assert_eq!(e0.shape().matrix(), cert.pi());
    assert!(Arc::ptr_eq(e0.shape_arc(), e1.shape_arc()));
    assert!(instantiate_reach_set(&cert, &Vector::zeros(2)).is_err());
}
