use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{rows_serde, vec_serde, Mat, Vector};

/// Output setpoint, constant or piecewise constant in the step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reference {
    Constant(#[serde(with = "vec_serde")] Vector),
    Schedule { knots: Vec<Knot> },
}

/// `value` holds from step `k` until the next knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub k: usize,
    #[serde(with = "vec_serde")]
    pub value: Vector,
}

impl Reference {
    pub fn zeros(m: usize) -> Self {
        Reference::Constant(Vector::zeros(m))
    }

    pub fn at(&self, k: usize) -> &Vector {
        match self {
            Reference::Constant(v) => v,
            Reference::Schedule { knots } => {
                let idx = knots.partition_point(|kn| kn.k <= k);
                &knots[idx.saturating_sub(1)].value
            }
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        match self {
            Reference::Constant(v) => {
                dim_check(v.len() == m, || format!("reference has length {}, expected {m}", v.len()))
            }
            Reference::Schedule { knots } => {
                if knots.is_empty() {
                    return Err(Error::Invalid("reference schedule has no knots".into()));
                }
                if knots.windows(2).any(|w| w[0].k >= w[1].k) {
                    return Err(Error::Invalid("reference knots must be strictly increasing in k".into()));
                }
                for kn in knots {
                    dim_check(kn.value.len() == m, || {
                        format!("reference knot at k={} has length {}, expected {m}", kn.k, kn.value.len())
                    })?;
                }
                Ok(())
            }
        }
    }
}

/// `u = 𝒦(ȳ − y_r) + 𝒦_I z`, with the integrator `z` optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Controller {
    #[serde(with = "rows_serde")]
    pub gain: Mat,
    pub reference: Reference,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rows")]
    pub integral_gain: Option<Mat>,
}

mod opt_rows {
    use crate::linalg::{from_rows, to_rows, Mat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|r| from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Integrator state `z` of a PI law; empty for static laws.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControllerState {
    pub integral: Vector,
}

impl Controller {
    pub fn proportional(gain: Mat, reference: Reference) -> Self {
        Controller { gain, reference, integral_gain: None }
    }

    pub fn validate(&self, l: usize, m: usize) -> Result<()> {
        dim_check(self.gain.shape() == (l, m), || {
            format!("controller gain is {}x{}, expected {l}x{m}", self.gain.nrows(), self.gain.ncols())
        })?;
        if let Some(ki) = &self.integral_gain {
            dim_check(ki.shape() == (l, m), || {
                format!("integral gain is {}x{}, expected {l}x{m}", ki.nrows(), ki.ncols())
            })?;
        }
        self.reference.validate(m)
    }

    pub fn initial_state(&self) -> ControllerState {
        let len = if self.integral_gain.is_some() { self.gain.ncols() } else { 0 };
        ControllerState { integral: Vector::zeros(len) }
    }

    /// Input for received measurement `y_bar` at step `k`; advances the
    /// integrator by forward Euler.
    pub fn control_law(&self, state: &mut ControllerState, y_bar: &Vector, k: usize, dt: f64) -> Vector {
        let err = y_bar - self.reference.at(k);
        let mut u = &self.gain * &err;
        if let Some(ki) = &self.integral_gain {
            u += ki * &state.integral;
            state.integral += err * dt;
        }
        u
    }
}
