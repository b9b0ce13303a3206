//! Max-det programme with one LMI, solved by a log-det barrier method.
//!
//! `Q(𝒫) ⪰ 0` is handled through its Schur complement on the middle block:
//! with `G = [A, I, −LΣ^{1/2}]` and `c = (1−b)/(τ+w̄)`,
//! `Q ⪰ 0 ⟺ 𝒫 ≻ 0 ∧ D(𝒫) = diag(b𝒫, cI_n, cI_m) − Gᵀ𝒫G ⪰ 0`, and
//! `log det Q = log det 𝒫 + log det D`.

use nalgebra::Cholesky;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{self, Mat, Vector};

pub const MU_START: f64 = 1.0;
pub const MU_FACTOR: f64 = 0.5;
pub const MU_STOP: f64 = 1e-9;
pub const ETA_RANGE: (f64, f64) = (1e-10, 1e6);
pub const LMI_EIG_TOL: f64 = 1e-8;

const ETA_GRID: usize = 161;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX: usize = 200;
const ARMIJO: f64 = 0.25;
const MAX_HALVINGS: usize = 80;

/// Fixed data of the programme; `b` varies over the grid.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    a: Mat,
    g: Mat,
    energy: f64,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub p: Mat,
    /// `−log det 𝒫`.
    pub objective: f64,
    pub b: f64,
    /// `min eig Q / max eig Q` at the returned point.
    pub min_eig_ratio: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub enum LmiOutcome {
    Solved(LmiSolution),
    Infeasible { reason: String },
}

impl LmiOutcome {
    pub fn solution(&self) -> Option<&LmiSolution> {
        match self {
            LmiOutcome::Solved(s) => Some(s),
            LmiOutcome::Infeasible { .. } => None,
        }
    }
}

impl LmiProblem {
    /// `sigma_sqrt` is the symmetric square root of the residual covariance.
    pub fn new(a: &Mat, l: &Mat, sigma_sqrt: &Mat, tau: f64, w_bar: f64) -> Result<Self> {
        let n = a.nrows();
        let m = sigma_sqrt.nrows();
        dim_check(a.is_square(), || "A must be square".into())?;
        dim_check(l.shape() == (n, m), || format!("L must be {n}x{m}"))?;
        dim_check(sigma_sqrt.is_square(), || "residual covariance root must be square".into())?;
        if !(tau >= 0.0 && w_bar >= 0.0) || !(tau + w_bar > 0.0) || !(tau + w_bar).is_finite() {
            return Err(Error::Domain(format!("need tau, w_bar >= 0 with positive finite sum (tau={tau}, w_bar={w_bar})")));
        }
        let mut g = Mat::zeros(n, 2 * n + m);
        g.view_mut((0, 0), (n, n)).copy_from(a);
        g.view_mut((0, n), (n, n)).fill_with_identity();
        g.view_mut((0, 2 * n), (n, m)).copy_from(&(-(l * sigma_sqrt)));
        Ok(LmiProblem { a: a.clone(), g, energy: tau + w_bar })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    fn width(&self) -> usize {
        self.g.ncols()
    }

    fn c(&self, b: f64) -> f64 {
        (1.0 - b) / self.energy
    }

    /// Schur complement `D(𝒫)`.
    pub fn reduced(&self, p: &Mat, b: f64) -> Mat {
        let n = self.n();
        let c = self.c(b);
        let mut d = -(self.g.transpose() * p * &self.g);
        {
            let mut top = d.view_mut((0, 0), (n, n));
            top += p * b;
        }
        for i in n..self.width() {
            d[(i, i)] += c;
        }
        linalg::symmetrize(&d)
    }

    /// The full block matrix `Q(𝒫)` of order `3n + m`.
    pub fn full(&self, p: &Mat, b: f64) -> Mat {
        let n = self.n();
        let w = self.width();
        let m = w - 2 * n;
        let c = self.c(b);
        let ls = -self.g.view((0, 2 * n), (n, m));
        let mut q = Mat::zeros(3 * n + m, 3 * n + m);
        q.view_mut((0, 0), (n, n)).copy_from(&(p * b));
        let pa = p * &self.a;
        q.view_mut((n, 0), (n, n)).copy_from(&pa);
        q.view_mut((0, n), (n, n)).copy_from(&pa.transpose());
        q.view_mut((n, n), (n, n)).copy_from(p);
        q.view_mut((n, 2 * n), (n, n)).copy_from(p);
        q.view_mut((2 * n, n), (n, n)).copy_from(p);
        let pls = -(p * ls);
        q.view_mut((n, 3 * n), (n, m)).copy_from(&pls);
        q.view_mut((3 * n, n), (m, n)).copy_from(&pls.transpose());
        for i in 2 * n..3 * n + m {
            q[(i, i)] = c;
        }
        q
    }

    /// `min eig Q / max eig Q`.
    pub fn min_eig_ratio(&self, p: &Mat, b: f64) -> f64 {
        let (lo, hi) = linalg::eig_range(&self.full(p, b));
        lo / hi.abs().max(f64::MIN_POSITIVE)
    }

    /// `Q(𝒫) ⪰ 0` within `LMI_EIG_TOL` relative to the largest eigenvalue.
    pub fn check(&self, p: &Mat, b: f64) -> bool {
        linalg::is_positive_definite(p, 0.0) && self.min_eig_ratio(p, b) >= -LMI_EIG_TOL
    }
}

struct Basis {
    pairs: Vec<(usize, usize)>,
}

impl Basis {
    fn new(n: usize) -> Self {
        let pairs = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        Basis { pairs }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn scale(i: usize, j: usize) -> f64 {
        if i == j {
            0.5
        } else {
            1.0
        }
    }

    fn to_matrix(&self, x: &Vector, n: usize) -> Mat {
        let mut p = Mat::zeros(n, n);
        for (&(i, j), &v) in self.pairs.iter().zip(x.iter()) {
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
        p
    }

    fn to_vector(&self, p: &Mat) -> Vector {
        Vector::from_iterator(self.len(), self.pairs.iter().map(|&(i, j)| p[(i, j)]))
    }
}

struct Point {
    x: Vector,
    p: Mat,
    p_chol: Cholesky<f64, nalgebra::Dyn>,
    d_chol: Cholesky<f64, nalgebra::Dyn>,
    log_det_p: f64,
    log_det_d: f64,
}

impl Point {
    fn barrier(&self, mu: f64) -> f64 {
        -(1.0 + mu) * self.log_det_p - mu * self.log_det_d
    }
}

fn chol_log_det(ch: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

struct Solver<'a> {
    prob: &'a LmiProblem,
    basis: Basis,
    b: f64,
}

impl Solver<'_> {
    fn point(&self, x: Vector) -> Option<Point> {
        let n = self.prob.n();
        let p = self.basis.to_matrix(&x, n);
        let p_chol = p.clone().cholesky()?;
        let d_chol = self.prob.reduced(&p, self.b).cholesky()?;
        let log_det_p = chol_log_det(&p_chol);
        let log_det_d = chol_log_det(&d_chol);
        Some(Point { x, p, p_chol, d_chol, log_det_p, log_det_d })
    }

    fn point_from_matrix(&self, p: &Mat) -> Option<Point> {
        self.point(self.basis.to_vector(p))
    }

    /// Gradient and Hessian of the barrier in the symmetric basis.
    fn derivatives(&self, pt: &Point, mu: f64) -> (Vector, Mat) {
        let n = self.prob.n();
        let g = &self.prob.g;
        let x_inv = pt.p_chol.inverse();
        let w = pt.d_chol.inverse();
        let z00 = w.view((0, 0), (n, n)) * self.b;
        let z01 = w.rows(0, n) * g.transpose() * self.b.sqrt();
        let z10 = z01.transpose();
        let z11 = g * &w * g.transpose();
        let families: [(&Mat, f64); 4] = [(&z00, 1.0), (&z01, -1.0), (&z10, -1.0), (&z11, 1.0)];
        let pairs = &self.basis.pairs;
        let dim = pairs.len();
        let mut grad = Vector::zeros(dim);
        let mut hess = Mat::zeros(dim, dim);
        for (alpha, &(i, j)) in pairs.iter().enumerate() {
            let s = Basis::scale(i, j);
            grad[alpha] = -(1.0 + mu) * 2.0 * s * x_inv[(i, j)]
                - mu * 2.0 * s * (z00[(i, j)] - z11[(i, j)]);
            for (beta, &(k, l)) in pairs.iter().enumerate().skip(alpha) {
                let ss = s * Basis::scale(k, l);
                let hp = x_inv[(i, k)] * x_inv[(j, l)] + x_inv[(i, l)] * x_inv[(j, k)];
                let mut hd = 0.0;
                for (z, sign) in &families {
                    hd += sign * (z[(i, k)] * z[(j, l)] + z[(i, l)] * z[(j, k)]);
                }
                let h = 2.0 * ss * ((1.0 + mu) * hp + mu * hd);
                hess[(alpha, beta)] = h;
                hess[(beta, alpha)] = h;
            }
        }
        (grad, hess)
    }

    fn newton_direction(grad: &Vector, hess: &Mat) -> Option<Vector> {
        if let Some(ch) = hess.clone().cholesky() {
            return Some(ch.solve(&(-grad)));
        }
        hess.clone().lu().solve(&(-grad))
    }

    /// Damped Newton centering at fixed `mu`.
    fn center(&self, mut pt: Point, mu: f64, steps: &mut usize) -> Point {
        for _ in 0..NEWTON_MAX {
            let (grad, hess) = self.derivatives(&pt, mu);
            let Some(dir) = Self::newton_direction(&grad, &hess) else {
                break;
            };
            let slope = grad.dot(&dir);
            if !(slope < 0.0) || -slope * 0.5 <= NEWTON_TOL {
                break;
            }
            *steps += 1;
            let f0 = pt.barrier(mu);
            let mut t = 1.0;
            let mut next = None;
            for _ in 0..MAX_HALVINGS {
                if let Some(cand) = self.point(&pt.x + &dir * t) {
                    if cand.barrier(mu) <= f0 + ARMIJO * t * slope {
                        next = Some(cand);
                        break;
                    }
                }
                t *= 0.5;
            }
            match next {
                Some(p) => pt = p,
                None => break,
            }
        }
        pt
    }

    fn initial_point(&self) -> Option<Point> {
        let n = self.prob.n();
        let scan = |shape: &Mat| -> Option<Point> {
            let (lo, hi) = (ETA_RANGE.0.ln(), ETA_RANGE.1.ln());
            (0..ETA_GRID)
                .filter_map(|i| {
                    let eta = (lo + (hi - lo) * i as f64 / (ETA_GRID - 1) as f64).exp();
                    self.point_from_matrix(&(shape * eta))
                })
                .min_by(|a, b| a.barrier(MU_START).total_cmp(&b.barrier(MU_START)))
        };
        scan(&Mat::identity(n, n)).or_else(|| {
            let shape = stein(&self.prob.a, self.b)?;
            scan(&shape)
        })
    }
}

/// `X` with `bX − AᵀXA = I`, when `ρ(A)² < b`.
pub fn stein(a: &Mat, b: f64) -> Option<Mat> {
    let n = a.nrows();
    let mut x = Mat::identity(n, n) / b;
    let mut m = a / b.sqrt();
    for _ in 0..64 {
        let inc = m.transpose() * &x * &m;
        x += &inc;
        m = &m * &m;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        if linalg::frobenius(&m) < 1e-18 {
            return Some(linalg::symmetrize(&x));
        }
    }
    None
}

/// Minimise `−log det 𝒫` subject to `Q(𝒫) ⪰ 0` for fixed `b ∈ (0, 1)`.
pub fn solve_maxdet_lmi(prob: &LmiProblem, b: f64) -> Result<LmiOutcome> {
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::Domain(format!("b = {b} outside (0, 1)")));
    }
    let solver = Solver { prob, basis: Basis::new(prob.n()), b };
    let Some(mut pt) = solver.initial_point() else {
        return Ok(LmiOutcome::Infeasible {
            reason: format!("no strictly feasible start on the eta range at b = {b}"),
        });
    };
    let mut steps = 0;
    let mut mu = MU_START;
    loop {
        pt = solver.center(pt, mu, &mut steps);
        if mu < MU_STOP {
            break;
        }
        mu *= MU_FACTOR;
    }
    let ratio = prob.min_eig_ratio(&pt.p, b);
    if ratio < -LMI_EIG_TOL {
        return Ok(LmiOutcome::Infeasible {
            reason: format!("final point fails the LMI recheck (ratio {ratio:.3e}) at b = {b}"),
        });
    }
    Ok(LmiOutcome::Solved(LmiSolution {
        objective: -pt.log_det_p,
        p: pt.p,
        b,
        min_eig_ratio: ratio,
        newton_steps: steps,
    }))
}
