//! Optimized robust control invariant (RCI) design, scaling constants and the
//! selection-map feedback.
//!
//! With `M = (M_0, …, M_{h-1})` and `D_0 = I`, `D_l = A^l + Σ_{j<l} A^{l-1-j} B M_j`,
//! the set `R_h(M) = ⊕_{l<h} D_l W` is RCI for `x⁺ = Ax + Bu + w` whenever
//! `D_h(M) = 0`, with the feedback given by the matching `⊕ M_l W` decomposition.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, ConvexSet};
use crate::model::{controllability_rank, System};
use crate::opt::{solve_lp, solve_qp, QpProblem, SolverSettings, Status};

/// Points with sup-norm at or below this are treated as the origin by the selection map.
pub const ZERO_POINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RciWeights {
    pub q_eta: f64,
    pub q_theta: f64,
}

impl RciWeights {
    pub fn new(q_eta: f64, q_theta: f64) -> Result<Self> {
        let w = Self { q_eta, q_theta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.q_eta) || !ok(self.q_theta) || self.q_eta + self.q_theta == 0.0 {
            return Err(Error::Parameter(format!(
                "RCI weights ({}, {}) must be nonnegative and not both zero",
                self.q_eta, self.q_theta
            )));
        }
        Ok(())
    }
}

impl Default for RciWeights {
    fn default() -> Self {
        Self {
            q_eta: 1.0,
            q_theta: 1.0,
        }
    }
}

/// Fractions of the constraint boxes given to the main MPC (α), the
/// ancillary MPC (β) and the invariance feedback (ξ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    pub alpha_x: f64,
    pub alpha_u: f64,
    pub beta_x: f64,
    pub beta_u: f64,
    pub xi_x: f64,
    pub xi_u: f64,
}

impl ScalingConstants {
    /// Full boxes to the main MPC, nothing else.
    pub fn main_only() -> Self {
        Self {
            alpha_x: 1.0,
            alpha_u: 1.0,
            beta_x: 0.0,
            beta_u: 0.0,
            xi_x: 0.0,
            xi_u: 0.0,
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let all = [
            self.alpha_x,
            self.alpha_u,
            self.beta_x,
            self.beta_u,
            self.xi_x,
            self.xi_u,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Parameter(format!(
                "scaling constants must lie in [0, 1]: {self:?}"
            )));
        }
        let sx = self.alpha_x + self.beta_x + self.xi_x;
        let su = self.alpha_u + self.beta_u + self.xi_u;
        if sx > 1.0 + tol || su > 1.0 + tol {
            return Err(Error::Parameter(format!(
                "scaling sums {sx} (state) and {su} (input) exceed 1"
            )));
        }
        Ok(())
    }
}

/// A solution of the RCI design problem together with its derived data.
#[derive(Debug, Clone, PartialEq)]
pub struct RciDesign {
    pub h: usize,
    /// `M_0, …, M_{h-1}`, each `m × n`.
    pub m: Vec<DMatrix<f64>>,
    /// `D_0, …, D_h`.
    pub d: Vec<DMatrix<f64>>,
    pub eta: f64,
    pub theta: f64,
    pub delta: f64,
    pub weights: RciWeights,
    pub w: ConvexSet,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl RciDesign {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_h_norm(&self) -> f64 {
        self.d[self.h].amax()
    }

    /// Rebuilds a design from stored gains, with the tightest `η, θ` on `w`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_gains(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        m: Vec<DMatrix<f64>>,
        w: ConvexSet,
        weights: RciWeights,
        x: &AxisBox,
        u: &AxisBox,
    ) -> Result<Self> {
        weights.validate()?;
        if m.is_empty() {
            return Err(Error::Parameter("at least one feedback matrix is required".into()));
        }
        if m.iter().any(|ml| ml.shape() != (b.ncols(), a.nrows())) {
            return Err(Error::Dimension(format!(
                "feedback matrices must be {}x{}",
                b.ncols(),
                a.nrows()
            )));
        }
        if w.dim() != a.nrows() || x.dim() != a.nrows() || u.dim() != b.ncols() {
            return Err(Error::Dimension("sets do not match the model".into()));
        }
        let d = d_matrices(a, b, &m);
        let (eta, theta) = tight_scalings(&d, &m, &w, x, u);
        Ok(Self {
            h: m.len(),
            m,
            d,
            eta,
            theta,
            delta: weights.q_eta * eta + weights.q_theta * theta,
            weights,
            w,
            a: a.clone(),
            b: b.clone(),
        })
    }

    /// Same feedback matrices applied to another disturbance set, with the
    /// tightest η, θ for it.
    pub fn with_disturbance(&self, w: ConvexSet, x: &AxisBox, u: &AxisBox) -> Result<Self> {
        let (eta, theta) = tight_scalings(&self.d, &self.m, &w, x, u);
        Ok(Self {
            eta,
            theta,
            delta: self.weights.q_eta * eta + self.weights.q_theta * theta,
            w,
            ..self.clone()
        })
    }
}

/// `D_0, …, D_h` for the given feedback matrices.
pub fn d_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>, m: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let n = a.nrows();
    let mut d = Vec::with_capacity(m.len() + 1);
    d.push(DMatrix::identity(n, n));
    for l in 0..m.len() {
        let next = a * &d[l] + b * &m[l];
        d.push(next);
    }
    d
}

/// Smallest `(η, θ)` with `⊕_{l<h} D_l W ⊆ ηX` and `⊕_{l<h} M_l W ⊆ θU`.
fn tight_scalings(
    d: &[DMatrix<f64>],
    m: &[DMatrix<f64>],
    w: &ConvexSet,
    x: &AxisBox,
    u: &AxisBox,
) -> (f64, f64) {
    let h = m.len();
    let ratio = |maps: &[DMatrix<f64>], bx: &AxisBox| {
        bx.facets()
            .iter()
            .map(|(c, off)| {
                let sum: f64 = maps[..h]
                    .iter()
                    .map(|t| w.support(&t.tr_mul(c)))
                    .sum();
                sum / off
            })
            .fold(0.0, f64::max)
    };
    (ratio(d, x), ratio(m, u))
}

struct RciLayout {
    n: usize,
    m: usize,
    h: usize,
}

impl RciLayout {
    fn m_var(&self, j: usize, p: usize, c: usize) -> usize {
        (j * self.m + p) * self.n + c
    }
    fn tx(&self, l: usize, k: usize) -> usize {
        self.h * self.m * self.n + l * 2 * self.n + k
    }
    fn tu(&self, l: usize, k: usize) -> usize {
        self.h * self.m * self.n + self.h * 2 * self.n + l * 2 * self.m + k
    }
    fn eta(&self) -> usize {
        self.h * (self.m * self.n + 2 * self.n + 2 * self.m)
    }
    fn theta(&self) -> usize {
        self.eta() + 1
    }
    fn delta(&self) -> usize {
        self.eta() + 2
    }
    fn len(&self) -> usize {
        self.eta() + 3
    }
}

/// Linear map `vec(M) ↦ D_h(M) − A^h` as a matrix acting on the M-variables.
fn terminal_map(a: &DMatrix<f64>, b: &DMatrix<f64>, lay: &RciLayout) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m, h) = (lay.n, lay.m, lay.h);
    let mut powers = vec![DMatrix::identity(n, n)];
    for _ in 0..h {
        let next = a * powers.last().unwrap();
        powers.push(next);
    }
    let mut c = DMatrix::zeros(n * n, h * m * n);
    for j in 0..h {
        let ab = &powers[h - 1 - j] * b;
        for r in 0..n {
            for col in 0..n {
                for p in 0..m {
                    c[(r * n + col, lay.m_var(j, p, col))] = ab[(r, p)];
                }
            }
        }
    }
    (c, powers.swap_remove(h))
}

/// Solves the optimized-RCI linear program at horizon `h`.
#[allow(clippy::too_many_arguments)]
pub fn solve_rci(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &ConvexSet,
    x: &AxisBox,
    u: &AxisBox,
    h: usize,
    weights: RciWeights,
    settings: &SolverSettings,
) -> Result<RciDesign> {
    weights.validate()?;
    let n = a.nrows();
    let m = b.ncols();
    if w.dim() != n || x.dim() != n || u.dim() != m || b.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension("RCI data dimensions disagree".into()));
    }
    if h < n {
        return Err(Error::Parameter(format!(
            "RCI horizon h = {h} must be at least the state dimension {n}"
        )));
    }
    if controllability_rank(a, b) < n {
        return Err(Error::Parameter("(A, B) is not controllable".into()));
    }
    let lay = RciLayout { n, m, h };
    let (cmap, ah) = terminal_map(a, b, &lay);
    let nv = lay.len();
    let mut a_eq = DMatrix::zeros(n * n, nv);
    a_eq.view_mut((0, 0), (n * n, h * m * n)).copy_from(&cmap);
    let b_eq = DVector::from_iterator(n * n, (0..n * n).map(|k| -ah[(k / n, k % n)]));

    let m_final = if w.is_origin() {
        // Any deadbeat M gives η = θ = 0; take the least-norm one.
        let nm = h * m * n;
        let prob = QpProblem::new(
            DMatrix::identity(nm, nm),
            DVector::zeros(nm),
            cmap.clone(),
            b_eq.clone(),
            DMatrix::zeros(0, nm),
            DVector::zeros(0),
        )?;
        let sol = solve_qp(&prob, settings)?;
        if !sol.is_optimal() {
            return Err(Error::NoRciDesign { subsystem: 0, h });
        }
        sol.z
    } else {
        let gens = w.generators();
        let mut powers = vec![DMatrix::identity(n, n)];
        for _ in 0..h {
            let next = a * powers.last().unwrap();
            powers.push(next);
        }
        let ab: Vec<DMatrix<f64>> = powers.iter().map(|p| p * b).collect();

        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let xf = x.facets();
        let uf = u.facets();
        let facet_coord = |k: usize, dim: usize| (k % dim, if k < dim { 1.0 } else { -1.0 });
        for l in 0..h {
            for g in gens {
                let alg = &powers[l] * g;
                for k in 0..2 * n {
                    let (i, s) = facet_coord(k, n);
                    let mut coeffs = vec![(lay.tx(l, k), -1.0)];
                    for j in 0..l {
                        let blk = &ab[l - 1 - j];
                        for p in 0..m {
                            for c in 0..n {
                                let v = s * blk[(i, p)] * g[c];
                                if v != 0.0 {
                                    coeffs.push((lay.m_var(j, p, c), v));
                                }
                            }
                        }
                    }
                    rows.push((coeffs, -s * alg[i]));
                }
                for k in 0..2 * m {
                    let (p, s) = facet_coord(k, m);
                    let mut coeffs = vec![(lay.tu(l, k), -1.0)];
                    for c in 0..n {
                        if g[c] != 0.0 {
                            coeffs.push((lay.m_var(l, p, c), s * g[c]));
                        }
                    }
                    rows.push((coeffs, 0.0));
                }
            }
        }
        for (k, (_, off)) in xf.iter().enumerate() {
            let mut coeffs: Vec<(usize, f64)> = (0..h).map(|l| (lay.tx(l, k), 1.0)).collect();
            coeffs.push((lay.eta(), -off));
            rows.push((coeffs, 0.0));
        }
        for (k, (_, off)) in uf.iter().enumerate() {
            let mut coeffs: Vec<(usize, f64)> = (0..h).map(|l| (lay.tu(l, k), 1.0)).collect();
            coeffs.push((lay.theta(), -off));
            rows.push((coeffs, 0.0));
        }
        for v in [lay.eta(), lay.theta()] {
            rows.push((vec![(v, 1.0)], 1.0));
            rows.push((vec![(v, -1.0)], 0.0));
        }
        rows.push((
            vec![
                (lay.eta(), weights.q_eta),
                (lay.theta(), weights.q_theta),
                (lay.delta(), -1.0),
            ],
            0.0,
        ));

        let mut g_in = DMatrix::zeros(rows.len(), nv);
        let mut h_in = DVector::zeros(rows.len());
        for (r, (coeffs, rhs)) in rows.iter().enumerate() {
            for (c, v) in coeffs {
                g_in[(r, *c)] += v;
            }
            h_in[r] = *rhs;
        }
        let mut cost = DVector::zeros(nv);
        cost[lay.delta()] = 1.0;
        let sol = solve_lp(&cost, &a_eq, &b_eq, &g_in, &h_in, settings)?;
        match sol.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(Error::NoRciDesign { subsystem: 0, h }),
            Status::MaxIter => {
                return Err(Error::Solver(format!(
                    "RCI linear program did not converge in {} iterations",
                    sol.iterations
                )))
            }
        }
        sol.z.rows(0, h * m * n).into_owned()
    };

    // Remove the equality residual left by the solver: least-norm correction
    // onto D_h(M) = 0.
    let resid = &cmap * &m_final - &b_eq;
    let gram = &cmap * cmap.transpose();
    let corr = gram
        .cholesky()
        .map(|c| cmap.tr_mul(&c.solve(&resid)))
        .ok_or_else(|| Error::Solver("terminal map is rank deficient".into()))?;
    let m_vec = m_final - corr;

    let mats: Vec<DMatrix<f64>> = (0..h)
        .map(|j| DMatrix::from_fn(m, n, |p, c| m_vec[lay.m_var(j, p, c)]))
        .collect();
    let d = d_matrices(a, b, &mats);
    let (eta, theta) = tight_scalings(&d, &mats, w, x, u);
    if eta > 1.0 + 1e-9 || theta > 1.0 + 1e-9 {
        return Err(Error::NoRciDesign { subsystem: 0, h });
    }
    Ok(RciDesign {
        h,
        m: mats,
        d,
        eta: eta.min(1.0),
        theta: theta.min(1.0),
        delta: weights.q_eta * eta.min(1.0) + weights.q_theta * theta.min(1.0),
        weights,
        w: w.clone(),
        a: a.clone(),
        b: b.clone(),
    })
}

/// `(η̃, θ̃)` for a summand `Ŵ` of the design's disturbance set, keeping `M` fixed.
pub fn rescale_for_summand(
    design: &RciDesign,
    w_hat: &ConvexSet,
    x: &AxisBox,
    u: &AxisBox,
) -> Result<(f64, f64)> {
    if w_hat.dim() != design.n() {
        return Err(Error::Dimension(format!(
            "summand of dimension {} for a design of dimension {}",
            w_hat.dim(),
            design.n()
        )));
    }
    for (c, _) in x.facets() {
        let (sh, sw) = (w_hat.support(&c), design.w.support(&c));
        if sh > sw + 1e-8 * (1.0 + sw.abs()) {
            return Err(Error::Parameter(format!(
                "set is not a summand of the design disturbance set (support {sh} > {sw})"
            )));
        }
    }
    let (eta, theta) = tight_scalings(&design.d, &design.m, w_hat, x, u);
    if eta > 1.0 || theta > 1.0 {
        return Err(Error::Parameter(format!(
            "rescaled invariant set needs η̃ = {eta}, θ̃ = {theta} > 1"
        )));
    }
    Ok((eta, theta))
}

/// Off-line data for one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemDesign {
    pub scalings: ScalingConstants,
    /// Design for the full coupling set `W_i`.
    pub full: RciDesign,
    /// Same `M` on `Ŵ_i`; its `(eta, theta)` are `(ξˣ, ξᵘ)`.
    pub hat: RciDesign,
}

/// Computes every subsystem's scaling constants in two passes: an RCI design
/// on the full coupling set fixes `α = 1 − (η, θ)`; the summand built from the
/// neighbours' leftover fractions then fixes `ξ` and `β = 1 − α − ξ`.
pub fn design_scalings(
    system: &System,
    h: usize,
    weights: RciWeights,
    settings: &SolverSettings,
) -> Result<Vec<SubsystemDesign>> {
    let count = system.len();
    let ones = vec![1.0; count];
    let tag = |i: usize| {
        move |e: Error| match e {
            Error::NoRciDesign { h, .. } => Error::NoRciDesign { subsystem: i, h },
            Error::CouplingTooStrong { .. } => e,
            other => Error::Design {
                subsystem: i,
                reason: other.to_string(),
            },
        }
    };

    let mut full = Vec::with_capacity(count);
    for s in system.subsystems() {
        let w = system
            .coupling_disturbance_set(s.id, &ones, &ones)?
            .pruned(settings)?;
        for (c, off) in s.x_box.facets() {
            if w.support(&c) >= off {
                return Err(Error::Design {
                    subsystem: s.id,
                    reason: "coupling disturbance set is not inside the interior of the state box"
                        .into(),
                });
            }
        }
        let d = solve_rci(&s.a, &s.b, &w, &s.x_box, &s.u_box, h, weights, settings)
            .map_err(tag(s.id))?;
        log::info!(
            "subsystem {}: eta = {:.6}, theta = {:.6} over {} generators",
            s.id,
            d.eta,
            d.theta,
            w.len()
        );
        full.push(d);
    }

    let alpha_x: Vec<f64> = full.iter().map(|d| 1.0 - d.eta).collect();
    let alpha_u: Vec<f64> = full.iter().map(|d| 1.0 - d.theta).collect();
    let rest_x: Vec<f64> = alpha_x.iter().map(|a| 1.0 - a).collect();
    let rest_u: Vec<f64> = alpha_u.iter().map(|a| 1.0 - a).collect();

    let mut out = Vec::with_capacity(count);
    for (s, design) in system.subsystems().iter().zip(full) {
        let w_hat = system
            .coupling_disturbance_set(s.id, &rest_x, &rest_u)?
            .pruned(settings)?;
        let (xi_x, xi_u) =
            rescale_for_summand(&design, &w_hat, &s.x_box, &s.u_box).map_err(tag(s.id))?;
        let (ax, au) = (alpha_x[s.id], alpha_u[s.id]);
        let beta_x = 1.0 - ax - xi_x;
        let beta_u = 1.0 - au - xi_u;
        if beta_x < 0.0 || beta_u < 0.0 {
            return Err(Error::CouplingTooStrong {
                subsystem: s.id,
                beta_x,
                beta_u,
            });
        }
        let hat = design.with_disturbance(w_hat, &s.x_box, &s.u_box)?;
        out.push(SubsystemDesign {
            scalings: ScalingConstants {
                alpha_x: ax,
                alpha_u: au,
                beta_x,
                beta_u,
                xi_x,
                xi_u,
            },
            full: design,
            hat,
        });
    }
    Ok(out)
}

/// Result of evaluating the selection map at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub f: DVector<f64>,
    /// Per-stage disturbance points `v_l ∈ W` with `Σ_l D_l v_l` equal to the
    /// query point (up to the slack when relaxed).
    pub stages: Vec<DVector<f64>>,
    /// True when the point had no exact decomposition and the slack-relaxed
    /// problem was used.
    pub relaxed: bool,
    /// `‖Σ_l D_l v_l − e‖∞`.
    pub residual: f64,
}

/// Minimal selection map `μ(e) = Σ_l M_l v_l` over decompositions
/// `e = Σ_l D_l v_l`, `v_l ∈ conv(W ∪ {0})`, minimizing the total weight.
pub fn selection_control(
    design: &RciDesign,
    e: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<Selection> {
    let n = design.n();
    let m = design.b.ncols();
    let h = design.h;
    if e.len() != n {
        return Err(Error::Dimension(format!(
            "selection point of length {} for a design of dimension {n}",
            e.len()
        )));
    }
    let zero = || Selection {
        f: DVector::zeros(m),
        stages: vec![DVector::zeros(n); h],
        relaxed: false,
        residual: e.amax(),
    };
    if e.amax() <= ZERO_POINT_TOL {
        return Ok(zero());
    }
    let gens = design.w.generators();
    if design.w.is_origin() {
        return Ok(Selection {
            relaxed: true,
            ..zero()
        });
    }
    let k = gens.len();
    let nl = h * k;
    let images: Vec<Vec<DVector<f64>>> = design.d[..h]
        .iter()
        .map(|d| gens.iter().map(|g| d * g).collect())
        .collect();

    // Equality rows are normalized by the largest image entry; the data is
    // often many orders of magnitude below one.
    let scale = images
        .iter()
        .flatten()
        .map(|v| v.amax())
        .fold(0.0, f64::max);
    let rhs = e / scale;
    let build = |relaxed: bool| -> Result<_> {
        let nv = nl + if relaxed { 2 * n } else { 0 };
        let mut a = DMatrix::zeros(n, nv);
        for l in 0..h {
            for (gi, img) in images[l].iter().enumerate() {
                a.view_mut((0, l * k + gi), (n, 1)).copy_from(&(img / scale));
            }
        }
        let mut cost = DVector::from_element(nv, 1.0);
        if relaxed {
            a.view_mut((0, nl), (n, n)).fill_diagonal(1.0);
            a.view_mut((0, nl + n), (n, n)).fill_diagonal(-1.0);
            cost.rows_mut(nl, 2 * n).fill(1e3 * (1.0 + nl as f64));
        }
        let mut g = DMatrix::zeros(nv + h, nv);
        let mut hv = DVector::zeros(nv + h);
        g.view_mut((0, 0), (nv, nv)).fill_diagonal(-1.0);
        for l in 0..h {
            g.view_mut((nv + l, l * k), (1, k)).fill(1.0);
            hv[nv + l] = 1.0;
        }
        let sol = solve_lp(&cost, &a, &rhs, &g, &hv, settings)?;
        Ok(sol)
    };

    let mut relaxed = false;
    let mut sol = build(false)?;
    if sol.status != Status::Optimal {
        log::warn!("selection point outside the invariant set; using the relaxed decomposition");
        relaxed = true;
        sol = build(true)?;
        if sol.status != Status::Optimal {
            return Err(Error::Solver("relaxed selection problem failed".into()));
        }
    }
    let stages: Vec<DVector<f64>> = (0..h)
        .map(|l| {
            gens.iter()
                .enumerate()
                .fold(DVector::zeros(n), |acc, (gi, g)| acc + g * sol.z[l * k + gi].max(0.0))
        })
        .collect();
    let mut f = DVector::zeros(m);
    let mut recon = DVector::zeros(n);
    for l in 0..h {
        f += &design.m[l] * &stages[l];
        recon += &design.d[l] * &stages[l];
    }
    Ok(Selection {
        f,
        stages,
        relaxed,
        residual: (recon - e).amax(),
    })
}

/// Worst-case findings of [`verify_rci`]; every violation is a nonnegative excess.
#[derive(Debug, Clone, PartialEq)]
pub struct RciReport {
    pub samples: usize,
    pub generators: usize,
    /// Distance between each successor `A x + B μ(x) + g` and its shifted
    /// decomposition in `R_h`.
    pub invariance: f64,
    /// Excess of `μ(x)` over `θU`.
    pub input: f64,
    /// Excess of `R_h` supports over `ηX`, and of sampled points over `ηX`.
    pub containment: f64,
    pub d_h_norm: f64,
    /// Samples whose decomposition needed the slack relaxation.
    pub relaxed: usize,
    /// Successors rejected by an independent membership solve.
    pub membership_failures: usize,
}

impl RciReport {
    pub fn violations(&self, tol: f64) -> usize {
        [self.invariance, self.input, self.containment]
            .iter()
            .filter(|v| **v > tol)
            .count()
            + usize::from(self.d_h_norm > 1e-8)
            + self.relaxed
            + self.membership_failures
    }
}

/// Independent membership checks are run on this many leading samples.
const MEMBERSHIP_SAMPLES: usize = 20;

/// Empirical RCI certificate on random generator mixtures of `R_h`.
pub fn verify_rci(
    design: &RciDesign,
    x: &AxisBox,
    u: &AxisBox,
    n_samples: usize,
    seed: u64,
    settings: &SolverSettings,
) -> Result<RciReport> {
    let n = design.n();
    let h = design.h;
    let gens = design.w.generators();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta_x = x.scale(design.eta.clamp(0.0, 1.0))?;
    let theta_u = u.scale(design.theta.clamp(0.0, 1.0))?;

    let mut containment = 0.0f64;
    for (c, off) in x.facets() {
        let s: f64 = design.d[..h].iter().map(|d| design.w.support(&d.tr_mul(&c))).sum();
        containment = containment.max(s - design.eta * off);
    }
    let mut input = 0.0f64;
    for (c, off) in u.facets() {
        let s: f64 = design.m.iter().map(|mm| design.w.support(&mm.tr_mul(&c))).sum();
        input = input.max(s - design.theta * off);
    }

    let excess = |bx: &AxisBox, p: &DVector<f64>| {
        p.iter()
            .zip(bx.lo().iter().zip(bx.hi().iter()))
            .map(|(v, (l, hi))| (v - hi).max(l - v).max(0.0))
            .fold(0.0, f64::max)
    };

    let mut report = RciReport {
        samples: n_samples,
        generators: gens.len(),
        invariance: 0.0,
        input: input.max(0.0),
        containment: containment.max(0.0),
        d_h_norm: design.d_h_norm(),
        relaxed: 0,
        membership_failures: 0,
    };
    for sample in 0..n_samples {
        let mut point = DVector::zeros(n);
        for l in 0..h {
            let mut weights: Vec<f64> = if rng.gen_bool(0.1) {
                let mut one = vec![0.0; gens.len()];
                one[rng.gen_range(0..gens.len())] = 1.0;
                one
            } else {
                (0..gens.len()).map(|_| -(rng.gen::<f64>().max(1e-300)).ln()).collect()
            };
            let total: f64 = weights.iter().sum();
            let radius = if rng.gen_bool(0.25) { 1.0 } else { rng.gen::<f64>() };
            weights.iter_mut().for_each(|w| *w *= radius / total);
            let v = gens
                .iter()
                .zip(&weights)
                .fold(DVector::zeros(n), |acc, (g, w)| acc + g * *w);
            point += &design.d[l] * v;
        }
        report.containment = report.containment.max(excess(&eta_x, &point));

        let sel = selection_control(design, &point, settings)?;
        if sel.relaxed {
            report.relaxed += 1;
        }
        report.input = report.input.max(excess(&theta_u, &sel.f));
        let base = &design.a * &point + &design.b * &sel.f;
        let mut shifted = DVector::zeros(n);
        for l in 1..h {
            shifted += &design.d[l] * &sel.stages[l - 1];
        }
        for g in gens {
            let succ = &base + g;
            let witness = &shifted + g;
            report.invariance = report.invariance.max((succ - witness).amax() + sel.residual);
        }
        if sample < MEMBERSHIP_SAMPLES {
            for g in gens {
                let next = selection_control(design, &(&base + g), settings)?;
                if next.relaxed || next.residual > 1e-6 {
                    report.membership_failures += 1;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn interval(r: f64) -> ConvexSet {
        AxisBox::symmetric(&[r]).unwrap().to_set()
    }

    fn settings() -> SolverSettings {
        SolverSettings {
            tol: 1e-9,
            ..SolverSettings::default()
        }
    }

    fn unit() -> AxisBox {
        AxisBox::symmetric(&[1.0]).unwrap()
    }

    #[test]
    fn deadbeat_in_one_step() {
        let d = solve_rci(&scalar(0.0), &scalar(1.0), &interval(0.1), &unit(), &unit(), 1, RciWeights::default(), &settings())
            .unwrap();
        assert_abs_diff_eq!(d.m[0][(0, 0)], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(d.eta, 0.1, epsilon = 1e-7);
        assert_abs_diff_eq!(d.theta, 0.0, epsilon = 1e-7);
        assert!(d.d_h_norm() <= 1e-12);
        let r = verify_rci(&d, &unit(), &unit(), 50, 1, &settings()).unwrap();
        assert_eq!(r.violations(1e-6), 0, "{r:?}");
    }

    #[test]
    fn scalar_integrator() {
        let wbar = 0.2;
        let d = solve_rci(&scalar(1.0), &scalar(1.0), &interval(wbar), &unit(), &unit(), 1, RciWeights::default(), &settings())
            .unwrap();
        assert_abs_diff_eq!(d.m[0][(0, 0)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.eta, wbar, epsilon = 1e-9);
        assert_abs_diff_eq!(d.theta, wbar, epsilon = 1e-9);
        assert_abs_diff_eq!(d.delta, 2.0 * wbar, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_and_invalid_designs() {
        let err = solve_rci(&scalar(1.0), &scalar(1.0), &interval(1.5), &unit(), &unit(), 1, RciWeights::default(), &settings());
        assert!(matches!(err, Err(Error::NoRciDesign { .. })), "{err:?}");
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sq = AxisBox::symmetric(&[1.0, 1.0]).unwrap();
        assert!(solve_rci(&a, &b, &sq.scale(0.1).unwrap().to_set(), &sq, &unit(), 3, RciWeights::default(), &settings()).is_err());
        assert!(RciWeights::new(0.0, 0.0).is_err());
        assert!(RciWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn summand_rescaling() {
        let d = solve_rci(&scalar(1.0), &scalar(1.0), &interval(0.2), &unit(), &unit(), 1, RciWeights::default(), &settings())
            .unwrap();
        let (e0, t0) = rescale_for_summand(&d, &ConvexSet::origin(1), &unit(), &unit()).unwrap();
        assert_eq!((e0, t0), (0.0, 0.0));
        let (e1, t1) = rescale_for_summand(&d, &d.w, &unit(), &unit()).unwrap();
        assert_abs_diff_eq!(e1, d.eta, epsilon = 1e-12);
        assert_abs_diff_eq!(t1, d.theta, epsilon = 1e-12);
        let (eh, th) = rescale_for_summand(&d, &d.w.scale(0.5).unwrap(), &unit(), &unit()).unwrap();
        assert_abs_diff_eq!(eh, d.eta / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(th, d.theta / 2.0, epsilon = 1e-12);
        assert!(rescale_for_summand(&d, &interval(0.3), &unit(), &unit()).is_err());
    }

    #[test]
    fn selection_of_simple_points() {
        let d = solve_rci(&scalar(1.0), &scalar(1.0), &interval(0.2), &unit(), &unit(), 1, RciWeights::default(), &settings())
            .unwrap();
        let s = selection_control(&d, &DVector::zeros(1), &settings()).unwrap();
        assert_eq!(s.f, DVector::zeros(1));
        let s = selection_control(&d, &DVector::from_element(1, 0.2), &settings()).unwrap();
        assert!(!s.relaxed);
        assert_abs_diff_eq!(s.f[0], -0.2, epsilon = 1e-7);
        let s = selection_control(&d, &DVector::from_element(1, 0.5), &settings()).unwrap();
        assert!(s.relaxed);
    }

    #[test]
    fn shrunk_eta_is_reported() {
        let d = solve_rci(&scalar(1.0), &scalar(1.0), &interval(0.2), &unit(), &unit(), 1, RciWeights::default(), &settings())
            .unwrap();
        let tampered = RciDesign {
            eta: d.eta * 0.5,
            ..d
        };
        let r = verify_rci(&tampered, &unit(), &unit(), 20, 3, &settings()).unwrap();
        assert!(r.containment > 0.05);
        assert!(r.violations(1e-6) > 0);
    }
}
