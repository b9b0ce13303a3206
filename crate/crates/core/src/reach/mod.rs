//! Offline ellipsoidal bound on the estimation-error reachable set.

mod certificate;
mod lmi;
mod noise;

pub use certificate::{
    b_grid, compute_certificate, CertificateOptions, estimator_fingerprint, grid_search, instantiate_reach_set, lmi_problem,
    GridPoint, ReachCertificate,
};
pub use lmi::{
    solve_maxdet_lmi, stein, LmiOutcome, LmiProblem, LmiSolution, ETA_RANGE, LMI_EIG_TOL, MU_FACTOR, MU_START,
    MU_STOP,
};
pub use noise::{noise_energy_bound, weighted_chi2_quantile, NoiseBound, MC_SAMPLES, MC_SEED};
