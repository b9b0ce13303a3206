//! Ellipsoids, half-spaces, and the ellipsoidal calculus used by the safety
//! checks and metrics.
//!
//! An ellipsoid with center `q` and shape `Π` is the set
//! `{ x : (x − q)ᵀ Π⁻¹ (x − q) ≤ 1 }`. A half-space `{ x : c·x ≥ b }` always
//! denotes the *unsafe* side of a safety limit.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{asymmetry, is_positive_definite, vec_serde, Mat, Vector};

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const PD_REL_TOL: f64 = 1e-10;
pub const MIN_NORMAL_NORM: f64 = 1e-12;

/// Validated symmetric positive-definite shape matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix {
    matrix: Mat,
    log_det: f64,
}

impl ShapeMatrix {
    pub fn new(matrix: Mat) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "shape matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let asym = asymmetry(&matrix);
        if asym > SYMMETRY_TOL {
            return Err(Error::Invalid(format!("shape matrix asymmetry {asym:e} exceeds tolerance")));
        }
        if !is_positive_definite(&matrix, PD_REL_TOL) {
            return Err(Error::Invalid("shape matrix is not positive definite".into()));
        }
        let log_det = log_det_spd(&matrix)?;
        Ok(Self { matrix, log_det })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn det(&self) -> f64 {
        self.log_det.exp()
    }

    /// `sqrt(c Π cᵀ)`, the support half-width of the ellipsoid along `c`.
    pub fn support(&self, c: &Vector) -> f64 {
        c.dot(&(&self.matrix * c)).max(0.0).sqrt()
    }

    /// Returns `s² Π`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(&self.matrix * (s * s))
    }
}

pub(crate) fn log_det_spd(m: &Mat) -> Result<f64> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Invalid("matrix is not positive definite".into()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: Vector,
    shape: Arc<ShapeMatrix>,
}

impl Ellipsoid {
    pub fn new(center: Vector, shape: Arc<ShapeMatrix>) -> Result<Self> {
        dim_check(center.len() == shape.dim(), || {
            format!("center has dimension {} but shape is {}x{}", center.len(), shape.dim(), shape.dim())
        })?;
        Ok(Self { center, shape })
    }

    pub fn from_matrix(center: Vector, shape: Mat) -> Result<Self> {
        Self::new(center, Arc::new(ShapeMatrix::new(shape)?))
    }

    pub fn unit_ball(center: Vector) -> Self {
        let n = center.len();
        let shape = ShapeMatrix::new(Mat::identity(n, n)).expect("identity is positive definite");
        Self { center, shape: Arc::new(shape) }
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn shape(&self) -> &ShapeMatrix {
        &self.shape
    }

    pub fn shape_arc(&self) -> &Arc<ShapeMatrix> {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `(x − q)ᵀ Π⁻¹ (x − q)`; at most 1 for members.
    pub fn quadratic_form(&self, x: &Vector) -> f64 {
        let d = x - &self.center;
        let chol = Cholesky::new(self.shape.matrix().clone()).expect("validated shape");
        d.dot(&chol.solve(&d))
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.quadratic_form(x) <= 1.0 + tol
    }
}

/// Unsafe half-space `{ x : normal·x ≥ offset }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(with = "vec_serde")]
    pub normal: Vector,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vector, offset: f64) -> Result<Self> {
        Self::named("", normal, offset)
    }

    pub fn named(name: impl Into<String>, normal: Vector, offset: f64) -> Result<Self> {
        let h = Self { name: name.into(), normal, offset };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.normal.norm() > MIN_NORMAL_NORM) {
            return Err(Error::Invalid(format!("half-space '{}' has a zero normal", self.name)));
        }
        if !self.offset.is_finite() || self.normal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("half-space '{}' has non-finite entries", self.name)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        self.normal.dot(x) >= self.offset
    }

    /// Euclidean distance from a point on the safe side to the half-space
    /// (zero on or beyond the boundary).
    pub fn point_distance(&self, x: &Vector) -> f64 {
        ((self.offset - self.normal.dot(x)) / self.normal.norm()).max(0.0)
    }
}

/// Union of unsafe half-spaces; empty means nothing is unsafe.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnsafeSet {
    halfspaces: Vec<HalfSpace>,
}

impl UnsafeSet {
    pub fn new(halfspaces: Vec<HalfSpace>) -> Result<Self> {
        let set = Self { halfspaces };
        set.validate()?;
        Ok(set)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for h in &self.halfspaces {
            h.validate()?;
        }
        if let Some(first) = self.halfspaces.first() {
            let n = first.dim();
            dim_check(self.halfspaces.iter().all(|h| h.dim() == n), || {
                "half-space normals have differing dimensions".into()
            })?;
        }
        Ok(())
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    pub fn len(&self) -> usize {
        self.halfspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halfspaces.is_empty()
    }

    /// Dimension of the normals, `None` for the empty set.
    pub fn dim(&self) -> Option<usize> {
        self.halfspaces.first().map(HalfSpace::dim)
    }

    /// Index of the first half-space containing `x`.
    pub fn first_containing(&self, x: &Vector) -> Option<usize> {
        self.halfspaces.iter().position(|h| h.contains(x))
    }

    pub fn contains(&self, x: &Vector) -> bool {
        self.first_containing(x).is_some()
    }
}

/// Signed clearance between an ellipsoid and the boundary hyperplane of `h`:
/// `(|b − c·q| − sqrt(c Π cᵀ)) / ‖c‖`.
pub fn distance_to_hyperplane(e: &Ellipsoid, h: &HalfSpace) -> Result<f64> {
    dim_check(e.dim() == h.dim(), || {
        format!("ellipsoid dimension {} vs half-space dimension {}", e.dim(), h.dim())
    })?;
    let gap = (h.offset - h.normal.dot(e.center())).abs();
    Ok((gap - e.shape().support(&h.normal)) / h.normal.norm())
}

/// First half-space of `u` whose boundary the ellipsoid reaches, if any.
///
/// The center must lie on the safe side of every half-space; otherwise
/// `Error::CenterUnsafe` is returned.
pub fn intersects_unsafe(e: &Ellipsoid, u: &UnsafeSet) -> Result<Option<usize>> {
    if let Some(n) = u.dim() {
        dim_check(n == e.dim(), || format!("unsafe set dimension {n} vs ellipsoid {}", e.dim()))?;
    }
    if let Some(index) = u.first_containing(e.center()) {
        return Err(Error::CenterUnsafe { index });
    }
    for (i, h) in u.halfspaces().iter().enumerate() {
        if distance_to_hyperplane(e, h)? <= 0.0 {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Result of covering `E ∩ H` with a minimum-volume ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub enum CapCover {
    /// The whole ellipsoid lies in the half-space.
    Contained,
    /// The intersection is empty (or a single boundary point).
    Empty,
    Covering(Ellipsoid),
}

impl CapCover {
    /// `det(Πᵢ)/det(Π)` convention used by the impact metric.
    pub fn det_ratio(&self, original: &Ellipsoid) -> f64 {
        match self {
            CapCover::Contained => 1.0,
            CapCover::Empty => 0.0,
            CapCover::Covering(c) => (c.shape().log_det() - original.shape().log_det()).exp(),
        }
    }
}

/// Normalized depth `α = (c·q − b) / sqrt(c Π cᵀ)` of the center past the
/// boundary, measured toward the unsafe side.
pub fn cap_depth(e: &Ellipsoid, h: &HalfSpace) -> f64 {
    (h.normal.dot(e.center()) - h.offset) / e.shape().support(&h.normal)
}

/// Minimum-volume ellipsoid covering `e ∩ h` (the unsafe-side cap).
///
/// Uses the deep-cut update. For `α ≥ 1/n` no ellipsoid smaller than `e`
/// covers the cap and `e` itself is returned.
pub fn min_volume_intersection(e: &Ellipsoid, h: &HalfSpace) -> Result<CapCover> {
    dim_check(e.dim() == h.dim(), || {
        format!("ellipsoid dimension {} vs half-space dimension {}", e.dim(), h.dim())
    })?;
    let alpha = cap_depth(e, h);
    if alpha >= 1.0 {
        return Ok(CapCover::Contained);
    }
    if alpha <= -1.0 {
        return Ok(CapCover::Empty);
    }
    let n = e.dim();
    if n == 1 {
        return interval_cap(e, h).map(CapCover::Covering);
    }
    let nf = n as f64;
    if alpha >= 1.0 / nf {
        return Ok(CapCover::Covering(e.clone()));
    }
    let pi = e.shape().matrix();
    let s = e.shape().support(&h.normal);
    // Π c̄ with c̄ = c / sqrt(c Π cᵀ), pointing into the unsafe side.
    let pc = pi * &h.normal / s;
    let center = e.center() + &pc * ((1.0 - alpha * nf) / (nf + 1.0));
    let scale = nf * nf * (1.0 - alpha * alpha) / (nf * nf - 1.0);
    let gamma = 2.0 * (1.0 - alpha * nf) / ((nf + 1.0) * (1.0 - alpha));
    let mut shape = (pi - &pc * pc.transpose() * gamma) * scale;
    shape = (&shape + shape.transpose()) * 0.5;
    Ellipsoid::from_matrix(center, shape).map(CapCover::Covering)
}

/// Closed form of `det(Πᵢ)/det(Π)` for a cap of depth `alpha` in dimension
/// `n ≥ 2`, matching [`min_volume_intersection`].
pub fn cap_det_ratio(alpha: f64, n: usize) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    if alpha <= -1.0 {
        return 0.0;
    }
    let nf = n as f64;
    if n == 1 {
        // interval length ratio squared
        let keep = (1.0 + alpha) / 2.0;
        return keep * keep;
    }
    if alpha >= 1.0 / nf {
        return 1.0;
    }
    let scale = nf * nf * (1.0 - alpha * alpha) / (nf * nf - 1.0);
    scale.powi(n as i32) * (nf - 1.0) * (1.0 + alpha) / ((nf + 1.0) * (1.0 - alpha))
}

fn interval_cap(e: &Ellipsoid, h: &HalfSpace) -> Result<Ellipsoid> {
    let q = e.center()[0];
    let r = e.shape().matrix()[(0, 0)].sqrt();
    let (mut lo, mut hi) = (q - r, q + r);
    let a = h.normal[0];
    let cut = h.offset / a;
    if a > 0.0 {
        lo = lo.max(cut);
    } else {
        hi = hi.min(cut);
    }
    let half = 0.5 * (hi - lo);
    Ellipsoid::from_matrix(Vector::from_element(1, 0.5 * (lo + hi)), Mat::from_element(1, 1, half * half))
}

/// Volume of the unit ball in `n` dimensions, `π^{n/2} / Γ(n/2 + 1)`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let nf = n as f64;
    (0.5 * nf * PI.ln() - ln_gamma(0.5 * nf + 1.0)).exp()
}

pub fn volume(e: &Ellipsoid) -> f64 {
    unit_ball_volume(e.dim()) * (0.5 * e.shape().log_det()).exp()
}

/// Unsafe set bound to a fixed shape matrix so that per-step checks only
/// need the center: supports `sqrt(c Π cᵀ)` and norms are cached.
#[derive(Debug, Clone)]
pub struct PreparedConstraints {
    normals: Mat,
    offsets: Vec<f64>,
    norms: Vec<f64>,
    supports: Vec<f64>,
}

impl PreparedConstraints {
    pub fn new(unsafe_set: &UnsafeSet, shape: &ShapeMatrix) -> Result<Self> {
        let n = shape.dim();
        if let Some(d) = unsafe_set.dim() {
            dim_check(d == n, || format!("unsafe set dimension {d} vs shape {n}"))?;
        }
        let hs = unsafe_set.halfspaces();
        let normals = Mat::from_fn(hs.len(), n, |i, j| hs[i].normal[j]);
        Ok(Self {
            normals,
            offsets: hs.iter().map(|h| h.offset).collect(),
            norms: hs.iter().map(|h| h.normal.norm()).collect(),
            supports: hs.iter().map(|h| shape.support(&h.normal)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Scan all constraints for an ellipsoid centered at `center`.
    pub fn scan(&self, center: &Vector) -> ConstraintScan {
        let proj = &self.normals * center;
        let mut scan = ConstraintScan { center_unsafe: None, first_violation: None, min_distance: f64::INFINITY };
        for i in 0..self.offsets.len() {
            let gap = self.offsets[i] - proj[i];
            if gap <= 0.0 && scan.center_unsafe.is_none() {
                scan.center_unsafe = Some(i);
            }
            // signed: a center past the boundary yields a negative gap
            let d = (gap - self.supports[i]) / self.norms[i];
            if d <= 0.0 && scan.first_violation.is_none() {
                scan.first_violation = Some(i);
            }
            scan.min_distance = scan.min_distance.min(d);
        }
        scan
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintScan {
    pub center_unsafe: Option<usize>,
    pub first_violation: Option<usize>,
    pub min_distance: f64,
}
