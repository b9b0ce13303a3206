use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{self, rows_serde, Mat, Vector};

const COV_TOL: f64 = 1e-10;

/// Discrete-time plant `x⁺ = Ax + Bu + w`, `y = Cx + v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelRaw", into = "ModelRaw")]
pub struct LtiModel {
    a: Mat,
    b: Mat,
    c: Mat,
    sigma1: Mat,
    sigma2: Mat,
    dt: f64,
    w_factor: Mat,
    v_factor: Mat,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRaw {
    #[serde(rename = "A", with = "rows_serde")]
    a: Mat,
    #[serde(rename = "B", with = "rows_serde")]
    b: Mat,
    #[serde(rename = "C", with = "rows_serde")]
    c: Mat,
    #[serde(rename = "Sigma1", with = "rows_serde")]
    sigma1: Mat,
    #[serde(rename = "Sigma2", with = "rows_serde")]
    sigma2: Mat,
    dt: f64,
}

impl TryFrom<ModelRaw> for LtiModel {
    type Error = Error;
    fn try_from(r: ModelRaw) -> Result<Self> {
        LtiModel::new(r.a, r.b, r.c, r.sigma1, r.sigma2, r.dt)
    }
}

impl From<LtiModel> for ModelRaw {
    fn from(m: LtiModel) -> Self {
        ModelRaw { a: m.a, b: m.b, c: m.c, sigma1: m.sigma1, sigma2: m.sigma2, dt: m.dt }
    }
}

fn check_cov(name: &str, m: &Mat) -> Result<()> {
    if linalg::asymmetry(m) > COV_TOL {
        return Err(Error::Invalid(format!("{name} is not symmetric")));
    }
    if !linalg::is_positive_semidefinite(m, COV_TOL) {
        return Err(Error::Invalid(format!("{name} is not positive semidefinite")));
    }
    Ok(())
}

impl LtiModel {
    pub fn new(a: Mat, b: Mat, c: Mat, sigma1: Mat, sigma2: Mat, dt: f64) -> Result<Self> {
        let n = a.nrows();
        dim_check(a.is_square(), || format!("A is {}x{}", a.nrows(), a.ncols()))?;
        dim_check(b.nrows() == n, || format!("B has {} rows, expected {n}", b.nrows()))?;
        dim_check(c.ncols() == n, || format!("C has {} columns, expected {n}", c.ncols()))?;
        let m = c.nrows();
        dim_check(sigma1.shape() == (n, n), || format!("Sigma1 must be {n}x{n}"))?;
        dim_check(sigma2.shape() == (m, m), || format!("Sigma2 must be {m}x{m}"))?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Invalid(format!("sampling period {dt} must be positive")));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c)] {
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(Error::Invalid(format!("{name} has non-finite entries")));
            }
        }
        check_cov("Sigma1", &sigma1)?;
        check_cov("Sigma2", &sigma2)?;
        let sigma1 = linalg::symmetrize(&sigma1);
        let sigma2 = linalg::symmetrize(&sigma2);
        let w_factor = linalg::noise_factor(&sigma1);
        let v_factor = linalg::noise_factor(&sigma2);
        Ok(LtiModel { a, b, c, sigma1, sigma2, dt, w_factor, v_factor })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn sigma1(&self) -> &Mat {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &Mat {
        &self.sigma2
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    /// Input dimension.
    pub fn l(&self) -> usize {
        self.b.ncols()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }

    pub fn sample_process_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        sample(&self.w_factor, rng)
    }

    pub fn sample_measurement_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        sample(&self.v_factor, rng)
    }

    /// One plant step: draws `v` then `w`, returns `(x⁺, y)` with `y = Cx + v`.
    pub fn step_plant<R: Rng + ?Sized>(
        &self,
        x: &Vector,
        u: &Vector,
        rng: &mut R,
    ) -> Result<(Vector, Vector)> {
        dim_check(x.len() == self.n(), || format!("state has length {}, expected {}", x.len(), self.n()))?;
        dim_check(u.len() == self.l(), || format!("input has length {}, expected {}", u.len(), self.l()))?;
        let v = self.sample_measurement_noise(rng);
        let w = self.sample_process_noise(rng);
        let y = &self.c * x + v;
        let next = &self.a * x + &self.b * u + w;
        Ok((next, y))
    }
}

fn sample<R: Rng + ?Sized>(factor: &Mat, rng: &mut R) -> Vector {
    let xi = Vector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * xi
}
