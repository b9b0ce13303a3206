//! Predictive safety monitoring for LTI plants under stealthy sensor attacks.
//!
//! An offline max-det programme bounds the estimation-error reachable set by
//! an ellipsoid; online, that ellipsoid is translated along a noise-free
//! closed-loop prediction and checked against a union of unsafe half-spaces.

pub mod ellipsoid;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod monitor;
pub mod plant;
pub mod reach;
mod util;

pub use error::{Error, Result};
pub use util::{fingerprint, fmt_f64, fmt_opt};
