//! Dense convex LP/QP solver.
//!
//! All problems are posed as
//!
//! ```text
//! minimize    ½ z'Pz + q'z
//! subject to  A z  = b
//!             G z <= h
//! ```
//!
//! and solved by a primal-dual interior point method. A failed or stalled
//! iteration never decides infeasibility on its own: the verdict always comes
//! from the phase-1 problem in [`check_feasible`].

mod ipm;
mod kkt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue tolerated for `P`.
pub const PSD_TOL: f64 = 1e-10;

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Bound on every KKT residual (and the total duality gap) at an optimal return.
    pub tol: f64,
    /// Phase-1 total slack below which a constraint system counts as feasible.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            feas_tol: 1e-7,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_in: DMatrix<f64>,
    pub h_in: DVector<f64>,
}

/// Residuals of the KKT conditions at a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Most negative inequality multiplier, reported as a positive number (0 when all are >= 0).
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        g_in: DMatrix<f64>,
        h_in: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::Dimension(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(Error::Dimension(format!(
                "equality system is {}x{} with rhs {}, expected {n} columns",
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len()
            )));
        }
        if g_in.ncols() != n || g_in.nrows() != h_in.len() {
            return Err(Error::Dimension(format!(
                "inequality system is {}x{} with rhs {}, expected {n} columns",
                g_in.nrows(),
                g_in.ncols(),
                h_in.len()
            )));
        }
        Ok(Self {
            p,
            q,
            a_eq,
            b_eq,
            g_in,
            h_in,
        })
    }

    /// Linear program (`P = 0`).
    pub fn lp(
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        g_in: DMatrix<f64>,
        h_in: DVector<f64>,
    ) -> Result<Self> {
        let n = c.len();
        Self::new(DMatrix::zeros(n, n), c, a_eq, b_eq, g_in, h_in)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    pub fn kkt_residuals(
        &self,
        z: &DVector<f64>,
        y: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> KktResiduals {
        let grad = &self.p * z + &self.q + self.a_eq.tr_mul(y) + self.g_in.tr_mul(mu);
        let eq = &self.a_eq * z - &self.b_eq;
        let ineq = &self.g_in * z - &self.h_in;
        let primal = eq
            .iter()
            .map(|v| v.abs())
            .chain(ineq.iter().map(|v| v.max(0.0)))
            .fold(0.0, f64::max);
        let complementarity = mu
            .iter()
            .zip(ineq.iter())
            .map(|(m, r)| (m * r).abs())
            .fold(0.0, f64::max);
        KktResiduals {
            stationarity: grad.amax(),
            primal,
            complementarity,
            dual_sign: mu.iter().map(|m| (-m).max(0.0)).fold(0.0, f64::max),
        }
    }

    /// Total constraint violation `‖Az − b‖₁ + Σ max(Gz − h, 0)`.
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        total_violation(&self.a_eq, &self.b_eq, &self.g_in, &self.h_in, z)
    }

    fn check_psd(&self) -> Result<()> {
        let n = self.num_vars();
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (self.p[(i, j)] - self.p[(j, i)]).abs())
            .fold(0.0, f64::max);
        if asym > 1e-9 * (1.0 + self.p.amax()) {
            return Err(Error::Parameter("P is not symmetric".into()));
        }
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || self.p[(i, j)] == 0.0));
        let min_eig = if diagonal {
            (0..n).map(|i| self.p[(i, i)]).fold(f64::INFINITY, f64::min)
        } else {
            SymmetricEigen::new(self.p.clone()).eigenvalues.min()
        };
        if n > 0 && min_eig < -PSD_TOL {
            return Err(Error::Parameter(format!(
                "P is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }
}

fn total_violation(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    z: &DVector<f64>,
) -> f64 {
    let eq: f64 = (a * z - b).iter().map(|v| v.abs()).sum();
    let ineq: f64 = (g * z - h).iter().map(|v| v.max(0.0)).sum();
    eq + ineq
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub z: DVector<f64>,
    /// Equality multipliers.
    pub y: DVector<f64>,
    /// Inequality multipliers.
    pub mu: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Outcome of the phase-1 feasibility problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Total constraint violation of `witness`.
    pub slack: f64,
    pub witness: DVector<f64>,
}

pub fn solve_qp(problem: &QpProblem, settings: &SolverSettings) -> Result<Solution> {
    problem.check_psd()?;
    let out = ipm::interior_point(problem, settings.tol, settings.max_iter)?;
    if out.converged {
        let objective = problem.objective(&out.z);
        return Ok(Solution {
            status: Status::Optimal,
            z: out.z,
            y: out.y,
            mu: out.lambda,
            objective,
            iterations: out.iterations,
        });
    }
    let phase1 = check_feasible(
        &problem.a_eq,
        &problem.b_eq,
        &problem.g_in,
        &problem.h_in,
        settings,
    )?;
    let status = if phase1.feasible {
        log::debug!(
            "interior point stopped after {} iterations on a feasible problem",
            out.iterations
        );
        Status::MaxIter
    } else {
        Status::Infeasible
    };
    let objective = problem.objective(&out.z);
    Ok(Solution {
        status,
        z: out.z,
        y: out.y,
        mu: out.lambda,
        objective,
        iterations: out.iterations,
    })
}

pub fn solve_lp(
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    g_in: &DMatrix<f64>,
    h_in: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<Solution> {
    let problem = QpProblem::lp(
        c.clone(),
        a_eq.clone(),
        b_eq.clone(),
        g_in.clone(),
        h_in.clone(),
    )?;
    solve_qp(&problem, settings)
}

/// Phase-1 feasibility oracle: minimizes the total nonnegative slack needed
/// on every equality and inequality row.
pub fn check_feasible(
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    g_in: &DMatrix<f64>,
    h_in: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<Feasibility> {
    let n = a_eq.ncols().max(g_in.ncols());
    if a_eq.ncols() != n && a_eq.nrows() > 0 || g_in.ncols() != n && g_in.nrows() > 0 {
        return Err(Error::Dimension(
            "equality and inequality systems have different widths".into(),
        ));
    }
    if a_eq.nrows() != b_eq.len() || g_in.nrows() != h_in.len() {
        return Err(Error::Dimension("right-hand side length mismatch".into()));
    }
    let (p, m) = (a_eq.nrows(), g_in.nrows());
    // Variables: [z (n) | e+ (p) | e- (p) | t (m)].
    let nv = n + 2 * p + m;
    let mut c = DVector::zeros(nv);
    c.rows_mut(n, 2 * p + m).fill(1.0);

    let mut a = DMatrix::zeros(p, nv);
    if p > 0 {
        a.view_mut((0, 0), (p, n)).copy_from(a_eq);
        a.view_mut((0, n), (p, p)).fill_diagonal(1.0);
        a.view_mut((0, n + p), (p, p)).fill_diagonal(-1.0);
    }

    let mut g = DMatrix::zeros(m + 2 * p + m, nv);
    let mut h = DVector::zeros(m + 2 * p + m);
    if m > 0 {
        g.view_mut((0, 0), (m, n)).copy_from(g_in);
        g.view_mut((0, n + 2 * p), (m, m)).fill_diagonal(-1.0);
        h.rows_mut(0, m).copy_from(h_in);
    }
    for k in 0..(2 * p + m) {
        g[(m + k, n + k)] = -1.0;
    }

    let problem = QpProblem::lp(c, a, b_eq.clone(), g, h)?;
    let out = ipm::interior_point(&problem, settings.tol.min(1e-9), settings.max_iter)?;
    if !out.converged {
        return Err(Error::Solver(format!(
            "phase-1 problem did not converge in {} iterations",
            out.iterations
        )));
    }
    let witness = out.z.rows(0, n).into_owned();
    let slack = total_violation(a_eq, b_eq, g_in, h_in, &witness);
    Ok(Feasibility {
        feasible: slack <= settings.feas_tol,
        slack,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn empty(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    #[test]
    fn active_lower_bound() {
        // min z^2 s.t. z >= 1
        let (a, b) = empty(1);
        let prob = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            a,
            b,
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, -1.0),
        )
        .unwrap();
        let sol = solve_qp(&prob, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn unit_interval_lps() {
        let (a, b) = empty(1);
        let g = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_column_slice(&[1.0, 0.0]);
        let s = SolverSettings::default();
        let sol = solve_lp(&DVector::from_element(1, 1.0), &a, &b, &g, &h, &s).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-7);

        let g = DMatrix::from_element(1, 1, 1.0);
        let h = DVector::from_element(1, 3.0);
        let sol = solve_lp(&DVector::from_element(1, -1.0), &a, &b, &g, &h, &s).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.z[0], 3.0, epsilon = 1e-7);
    }

    #[test]
    fn feasibility_oracle() {
        let (a, b) = empty(1);
        let s = SolverSettings::default();
        let g = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let ok = check_feasible(&a, &b, &g, &DVector::from_column_slice(&[1.0, 0.0]), &s).unwrap();
        assert!(ok.feasible);
        assert!(ok.slack <= 1e-9);
        assert!(ok.witness[0] >= -1e-9 && ok.witness[0] <= 1.0 + 1e-9);

        // z <= 0 and z >= 1
        let bad = check_feasible(&a, &b, &g, &DVector::from_column_slice(&[0.0, -1.0]), &s).unwrap();
        assert!(!bad.feasible);
        assert!(bad.slack >= 1.0 - 1e-7);
    }

    #[test]
    fn infeasible_qp_reported_by_phase_one() {
        let (a, b) = empty(1);
        let prob = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            a,
            b,
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_column_slice(&[0.0, -1.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let (a, b) = empty(2);
        let (g, h) = empty(2);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let prob = QpProblem::new(p, DVector::zeros(2), a, b, g, h);
        let err = solve_qp(&prob.unwrap(), &SolverSettings::default()).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn equality_only_least_norm() {
        // min ‖z‖² s.t. z1 + z2 + z3 = 3 -> z = (1,1,1)
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let (g, h) = empty(3);
        let prob = QpProblem::new(
            DMatrix::identity(3, 3) * 2.0,
            DVector::zeros(3),
            a,
            DVector::from_element(1, 3.0),
            g,
            h,
        )
        .unwrap();
        let sol = solve_qp(&prob, &SolverSettings::default()).unwrap();
        assert!(sol.is_optimal());
        for v in sol.z.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-9);
        }
    }
}
