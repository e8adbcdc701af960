//! Main and ancillary optimal control problems and the per-controller phases
//! of one control round.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::model::SubsystemModel;
use crate::opt::{solve_qp, QpProblem, SolverSettings, Status};
use crate::rci::{selection_control, RciDesign, ScalingConstants};

/// Main horizon `n` and ancillary horizon `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizons {
    pub n: usize,
    pub h: usize,
}

impl Horizons {
    pub fn new(n: usize, h: usize) -> Result<Self> {
        let hz = Self { n, h };
        hz.validate()?;
        Ok(hz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("main horizon N must be at least 1".into()));
        }
        if self.h < self.n + 1 {
            return Err(Error::Parameter(format!(
                "ancillary horizon H = {} must be at least N + 1 = {}",
                self.h,
                self.n + 1
            )));
        }
        Ok(())
    }
}

/// Optimal nominal plan `x̄⁰(0..=N)`, `ū⁰(0..N)` and its cost `V̄⁰`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub x_seq: Vec<DVector<f64>>,
    pub u_seq: Vec<DVector<f64>>,
    pub cost: f64,
}

impl Prediction {
    pub fn zero(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            x_seq: vec![DVector::zeros(n); horizon + 1],
            u_seq: vec![DVector::zeros(m); horizon],
            cost: 0.0,
        }
    }

    /// Largest gap between `x_seq` and a re-simulation of `x⁺ = Ax + Bu` from `x_seq[0]`.
    pub fn rollout_error(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let mut x = self.x_seq[0].clone();
        let mut worst = 0.0f64;
        for (k, u) in self.u_seq.iter().enumerate() {
            x = a * &x + b * u;
            worst = worst.max((&x - &self.x_seq[k + 1]).amax());
        }
        worst
    }
}

/// Predicted coupling sequence `w̄(0..=N)` with `w̄(N) = 0`, read as zero beyond `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSequence {
    w: Vec<DVector<f64>>,
}

impl DisturbanceSequence {
    pub fn zeros(n: usize, horizon: usize) -> Self {
        Self {
            w: vec![DVector::zeros(n); horizon + 1],
        }
    }

    pub fn new(w: Vec<DVector<f64>>) -> Result<Self> {
        match w.last() {
            None => Err(Error::Parameter("disturbance sequence is empty".into())),
            Some(last) if last.iter().any(|v| *v != 0.0) => Err(Error::Parameter(
                "the last entry of a disturbance sequence must be zero".into(),
            )),
            Some(_) => Ok(Self { w }),
        }
    }

    pub fn horizon(&self) -> usize {
        self.w.len() - 1
    }

    pub fn entries(&self) -> &[DVector<f64>] {
        &self.w
    }

    pub fn get(&self, k: usize) -> DVector<f64> {
        self.w
            .get(k)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(self.w[0].len()))
    }

    /// `{w̄(1), …, w̄(N), 0}`.
    pub fn tail(&self) -> Self {
        let mut w: Vec<DVector<f64>> = self.w[1..].to_vec();
        w.push(DVector::zeros(self.w[0].len()));
        Self { w }
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().all(|v| v.iter().all(|x| *x == 0.0))
    }
}

/// Solution of the ancillary problem: `ē⁰(0..=H)`, `f̄⁰(0..H)` and `V̂⁰`.
#[derive(Debug, Clone, PartialEq)]
pub struct AncillarySolution {
    pub e_seq: Vec<DVector<f64>>,
    pub f_seq: Vec<DVector<f64>>,
    pub cost: f64,
}

struct Ocp<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    q: &'a DMatrix<f64>,
    r: &'a DMatrix<f64>,
    x0: &'a DVector<f64>,
    offsets: &'a dyn Fn(usize) -> DVector<f64>,
    horizon: usize,
    x_box: &'a AxisBox,
    u_box: &'a AxisBox,
}

enum OcpOutcome {
    Solved(Vec<DVector<f64>>, Vec<DVector<f64>>, f64),
    Infeasible,
}

/// Pushes box rows for variable `start..start+dim`; zero-width coordinates
/// become equalities.
fn box_rows(
    bx: &AxisBox,
    start: usize,
    eq: &mut Vec<(usize, f64)>,
    ineq: &mut Vec<(usize, f64, f64)>,
) {
    for i in 0..bx.dim() {
        let (lo, hi) = (bx.lo()[i], bx.hi()[i]);
        if hi - lo <= 0.0 {
            eq.push((start + i, lo));
        } else {
            ineq.push((start + i, 1.0, hi));
            ineq.push((start + i, -1.0, -lo));
        }
    }
}

/// `min Σ_{k<T} ℓ(x(k), u(k))` s.t. `x(0) = x0`, `x(k+1) = A x(k) + B u(k) + o(k)`,
/// `x(k) ∈ X` for `1 <= k < T`, `u(k) ∈ U` for `k < T`, `x(T) = 0`.
fn solve_ocp(p: &Ocp, settings: &SolverSettings) -> Result<OcpOutcome> {
    let n = p.a.nrows();
    let m = p.b.ncols();
    let t = p.horizon;
    let nx = (t - 1) * n;
    let nv = nx + t * m;
    let xv = |k: usize| (k - 1) * n;
    let uv = |k: usize| nx + k * m;

    let mut hess = DMatrix::zeros(nv, nv);
    for k in 1..t {
        hess.view_mut((xv(k), xv(k)), (n, n)).copy_from(p.q);
    }
    for k in 0..t {
        hess.view_mut((uv(k), uv(k)), (m, m)).copy_from(p.r);
    }

    let mut fixed: Vec<(usize, f64)> = Vec::new();
    let mut ineq: Vec<(usize, f64, f64)> = Vec::new();
    for k in 1..t {
        box_rows(p.x_box, xv(k), &mut fixed, &mut ineq);
    }
    for k in 0..t {
        box_rows(p.u_box, uv(k), &mut fixed, &mut ineq);
    }

    let mut a_eq = DMatrix::zeros(t * n + fixed.len(), nv);
    let mut b_eq = DVector::zeros(t * n + fixed.len());
    for k in 0..t {
        let row = k * n;
        if k + 1 < t {
            a_eq.view_mut((row, xv(k + 1)), (n, n)).fill_diagonal(1.0);
        }
        let rhs = if k == 0 {
            p.a * p.x0 + (p.offsets)(0)
        } else {
            let blk = -p.a;
            a_eq.view_mut((row, xv(k)), (n, n)).copy_from(&blk);
            (p.offsets)(k)
        };
        a_eq.view_mut((row, uv(k)), (n, m)).copy_from(&(-p.b));
        b_eq.rows_mut(row, n).copy_from(&rhs);
    }
    for (i, (var, val)) in fixed.iter().enumerate() {
        a_eq[(t * n + i, *var)] = 1.0;
        b_eq[t * n + i] = *val;
    }
    let mut g_in = DMatrix::zeros(ineq.len(), nv);
    let mut h_in = DVector::zeros(ineq.len());
    for (r, (var, sign, rhs)) in ineq.iter().enumerate() {
        g_in[(r, *var)] = *sign;
        h_in[r] = *rhs;
    }

    let prob = QpProblem::new(hess, DVector::zeros(nv), a_eq, b_eq, g_in, h_in)?;
    let sol = solve_qp(&prob, settings)?;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => return Ok(OcpOutcome::Infeasible),
        Status::MaxIter => {
            return Err(Error::Solver(format!(
                "optimal control problem did not converge in {} iterations",
                sol.iterations
            )))
        }
    }
    let mut xs = Vec::with_capacity(t + 1);
    xs.push(p.x0.clone());
    for k in 1..t {
        xs.push(sol.z.rows(xv(k), n).into_owned());
    }
    xs.push(DVector::zeros(n));
    let us: Vec<DVector<f64>> = (0..t).map(|k| sol.z.rows(uv(k), m).into_owned()).collect();
    let cost = sol.objective + 0.5 * p.x0.dot(&(p.q * p.x0));
    Ok(OcpOutcome::Solved(xs, us, cost))
}

/// Main problem: plans the decoupled nominal system inside `αˣX`, `αᵘU` to the origin.
pub fn solve_main(
    model: &SubsystemModel,
    s: &ScalingConstants,
    hz: &Horizons,
    x_bar: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<Prediction> {
    if x_bar.len() != model.n() {
        return Err(Error::Dimension(format!(
            "nominal state of length {} for subsystem {} with n = {}",
            x_bar.len(),
            model.id,
            model.n()
        )));
    }
    if x_bar.iter().all(|v| *v == 0.0) {
        return Ok(Prediction::zero(model.n(), model.m(), hz.n));
    }
    let x_box = model.x_box.scale(s.alpha_x)?;
    let u_box = model.u_box.scale(s.alpha_u)?;
    let n = model.n();
    let zero = move |_: usize| DVector::zeros(n);
    let ocp = Ocp {
        a: &model.a,
        b: &model.b,
        q: &model.q,
        r: &model.r,
        x0: x_bar,
        offsets: &zero,
        horizon: hz.n,
        x_box: &x_box,
        u_box: &u_box,
    };
    match solve_ocp(&ocp, settings)? {
        OcpOutcome::Solved(x_seq, u_seq, cost) => Ok(Prediction { x_seq, u_seq, cost }),
        OcpOutcome::Infeasible => Err(Error::MainInfeasible(model.id)),
    }
}

/// Ancillary problem: steers the planned error to the origin inside `βˣX`,
/// `βᵘU` against the predicted coupling `w̄`.
pub fn solve_ancillary(
    model: &SubsystemModel,
    s: &ScalingConstants,
    hz: &Horizons,
    e_bar: &DVector<f64>,
    w: &DisturbanceSequence,
    settings: &SolverSettings,
) -> Result<AncillarySolution> {
    let n = model.n();
    if e_bar.len() != n || w.entries()[0].len() != n {
        return Err(Error::Dimension(format!(
            "ancillary data dimensions do not match subsystem {}",
            model.id
        )));
    }
    if w.horizon() + 1 > hz.h {
        return Err(Error::Parameter(format!(
            "disturbance sequence of horizon {} does not fit H = {}",
            w.horizon(),
            hz.h
        )));
    }
    if e_bar.iter().all(|v| *v == 0.0) && w.is_zero() {
        return Ok(AncillarySolution {
            e_seq: vec![DVector::zeros(n); hz.h + 1],
            f_seq: vec![DVector::zeros(model.m()); hz.h],
            cost: 0.0,
        });
    }
    let x_box = model.x_box.scale(s.beta_x)?;
    let u_box = model.u_box.scale(s.beta_u)?;
    if !x_box.contains(e_bar, 0.0) {
        return Err(Error::AncillaryInfeasible(model.id));
    }
    let offsets = |k: usize| w.get(k);
    let ocp = Ocp {
        a: &model.a,
        b: &model.b,
        q: &model.q,
        r: &model.r,
        x0: e_bar,
        offsets: &offsets,
        horizon: hz.h,
        x_box: &x_box,
        u_box: &u_box,
    };
    match solve_ocp(&ocp, settings)? {
        OcpOutcome::Solved(e_seq, f_seq, cost) => Ok(AncillarySolution { e_seq, f_seq, cost }),
        OcpOutcome::Infeasible => Err(Error::AncillaryInfeasible(model.id)),
    }
}

/// `w̄⁰(l) = Σ_j A_ij x̄_j⁰(l) + B_ij ū_j⁰(l)` for `l = 0..=N`, with `ū_j⁰(N) = 0`.
pub fn assemble_disturbance(
    model: &SubsystemModel,
    neighbour_preds: &BTreeMap<usize, Prediction>,
    horizon: usize,
) -> Result<DisturbanceSequence> {
    let n = model.n();
    let mut w = vec![DVector::zeros(n); horizon + 1];
    for j in model.neighbours() {
        let pred = neighbour_preds.get(&j).ok_or(Error::MissingPrediction {
            subsystem: model.id,
            neighbour: j,
        })?;
        if pred.x_seq.len() != horizon + 1 || pred.u_seq.len() != horizon {
            return Err(Error::Dimension(format!(
                "prediction from {j} has horizon {}, expected {horizon}",
                pred.u_seq.len()
            )));
        }
        let c = &model.couplings[&j];
        for (l, wl) in w.iter_mut().enumerate() {
            *wl += &c.a * &pred.x_seq[l];
            if l < horizon {
                *wl += &c.b * &pred.u_seq[l];
            }
        }
    }
    DisturbanceSequence::new(w)
}

/// Static data of one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub model: SubsystemModel,
    pub scalings: ScalingConstants,
    pub horizons: Horizons,
    /// Invariance feedback on `Ŵ`.
    pub selection: RciDesign,
    pub settings: SolverSettings,
}

/// Evolving state of one controller between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub x_bar: DVector<f64>,
    pub e_bar: DVector<f64>,
    pub stored_w: DisturbanceSequence,
    /// `+∞` until the first accepted ancillary solution.
    pub v_star: f64,
}

impl ControllerState {
    pub fn initial(x0: &DVector<f64>, horizon: usize) -> Self {
        Self {
            x_bar: x0.clone(),
            e_bar: DVector::zeros(x0.len()),
            stored_w: DisturbanceSequence::zeros(x0.len(), horizon),
            v_star: f64::INFINITY,
        }
    }
}

/// Everything one controller did in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub id: usize,
    pub x: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub e_bar: DVector<f64>,
    pub e_hat: DVector<f64>,
    pub u: DVector<f64>,
    pub u_bar0: DVector<f64>,
    pub f_bar0: DVector<f64>,
    pub mu: DVector<f64>,
    pub v_bar: f64,
    /// `ℓ(x̄, ū⁰(0))`.
    pub nominal_stage_cost: f64,
    pub v_hat: f64,
    /// `V*` after this round's update.
    pub v_star: f64,
    pub accepted: bool,
    /// Ancillary problem with the new sequence was feasible.
    pub new_feasible: bool,
    /// The stored-sequence solve ran (only on reject).
    pub fallback: bool,
    pub selection_relaxed: bool,
    pub state_margin: f64,
    pub input_margin: f64,
}

impl Controller {
    /// Steps 1–2: plan from the current nominal state.
    pub fn phase_main(&self, cs: &ControllerState) -> Result<Prediction> {
        solve_main(&self.model, &self.scalings, &self.horizons, &cs.x_bar, &self.settings)
    }

    /// Steps 4–6: choose the disturbance sequence, apply
    /// `u = ū⁰(0) + f̄⁰(0) + μ(ê)` and advance the controller state.
    pub fn phase_ancillary(
        &self,
        cs: &ControllerState,
        pred: &Prediction,
        w_new: &DisturbanceSequence,
        x_meas: &DVector<f64>,
    ) -> Result<(DVector<f64>, ControllerState, StepRecord)> {
        let m = &self.model;
        let fresh = match solve_ancillary(m, &self.scalings, &self.horizons, &cs.e_bar, w_new, &self.settings) {
            Ok(sol) => Some(sol),
            Err(Error::AncillaryInfeasible(_)) => None,
            Err(e) => return Err(e),
        };
        let new_feasible = fresh.is_some();
        let (sol, used_w, accepted) = match fresh {
            Some(sol) if sol.cost <= cs.v_star => (sol, w_new, true),
            _ => {
                let sol = match solve_ancillary(
                    m,
                    &self.scalings,
                    &self.horizons,
                    &cs.e_bar,
                    &cs.stored_w,
                    &self.settings,
                ) {
                    Ok(sol) => sol,
                    Err(Error::AncillaryInfeasible(_)) => return Err(Error::DoubleInfeasible(m.id)),
                    Err(e) => return Err(e),
                };
                (sol, &cs.stored_w, false)
            }
        };

        let e_hat = x_meas - &cs.x_bar - &cs.e_bar;
        let sel = selection_control(&self.selection, &e_hat, &self.settings)?;
        let u_bar0 = &pred.u_seq[0];
        let f_bar0 = &sol.f_seq[0];
        let u = u_bar0 + f_bar0 + &sel.f;

        let stage = m.stage_cost(&cs.e_bar, f_bar0);
        let v_anchor = if accepted { sol.cost } else { cs.v_star };
        let v_star = if v_anchor.is_finite() {
            v_anchor - stage
        } else {
            f64::INFINITY
        };
        let next = ControllerState {
            x_bar: &m.a * &cs.x_bar + &m.b * u_bar0,
            e_bar: &m.a * &cs.e_bar + &m.b * f_bar0 + used_w.get(0),
            stored_w: used_w.tail(),
            v_star,
        };
        let record = StepRecord {
            id: m.id,
            x: x_meas.clone(),
            x_bar: cs.x_bar.clone(),
            e_bar: cs.e_bar.clone(),
            e_hat,
            u: u.clone(),
            u_bar0: u_bar0.clone(),
            f_bar0: f_bar0.clone(),
            mu: sel.f,
            v_bar: pred.cost,
            nominal_stage_cost: m.stage_cost(&cs.x_bar, u_bar0),
            v_hat: sol.cost,
            v_star,
            accepted,
            new_feasible,
            fallback: !accepted,
            selection_relaxed: sel.relaxed,
            state_margin: m.x_box.margin(x_meas),
            input_margin: m.u_box.margin(&u),
        };
        Ok((u, next, record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AxisBox, ConvexSet};
    use approx::assert_abs_diff_eq;

    fn double_integrator() -> SubsystemModel {
        SubsystemModel::new(
            0,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            DMatrix::from_column_slice(2, 1, &[0.005, 0.1]),
            BTreeMap::new(),
            AxisBox::symmetric(&[2.0, 8.0]).unwrap(),
            AxisBox::symmetric(&[4.0]).unwrap(),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    fn tight() -> SolverSettings {
        SolverSettings {
            tol: 1e-9,
            ..SolverSettings::default()
        }
    }

    fn half() -> ScalingConstants {
        ScalingConstants {
            alpha_x: 0.5,
            alpha_u: 0.5,
            beta_x: 0.4,
            beta_u: 0.4,
            xi_x: 0.1,
            xi_u: 0.1,
        }
    }

    #[test]
    fn horizons_are_validated() {
        assert!(Horizons::new(25, 26).is_ok());
        assert!(Horizons::new(25, 25).is_err());
        assert!(Horizons::new(0, 3).is_err());
    }

    #[test]
    fn main_problem_at_origin_is_zero() {
        let m = double_integrator();
        let hz = Horizons::new(10, 11).unwrap();
        let p = solve_main(&m, &half(), &hz, &DVector::zeros(2), &tight()).unwrap();
        assert_eq!(p, Prediction::zero(2, 1, 10));
    }

    #[test]
    fn main_problem_reaches_origin() {
        let m = double_integrator();
        let hz = Horizons::new(25, 26).unwrap();
        let x0 = DVector::from_column_slice(&[0.5, -0.3]);
        let p = solve_main(&m, &ScalingConstants::main_only(), &hz, &x0, &tight()).unwrap();
        assert!(p.cost > 0.0);
        assert_eq!(p.x_seq[25], DVector::zeros(2));
        assert!(p.rollout_error(&m.a, &m.b) <= 1e-9, "{}", p.rollout_error(&m.a, &m.b));
        assert!(matches!(
            solve_main(&m, &half(), &Horizons::new(2, 3).unwrap(), &DVector::from_column_slice(&[1.9, 7.0]), &tight()),
            Err(Error::MainInfeasible(0))
        ));
    }

    #[test]
    fn ancillary_trivial_data() {
        let m = double_integrator();
        let hz = Horizons::new(5, 6).unwrap();
        let s = solve_ancillary(&m, &half(), &hz, &DVector::zeros(2), &DisturbanceSequence::zeros(2, 5), &tight())
            .unwrap();
        assert_eq!(s.cost, 0.0);
        assert!(s.f_seq.iter().all(|f| f[0] == 0.0));
        let outside = DVector::from_column_slice(&[1.5, 0.0]);
        assert!(matches!(
            solve_ancillary(&m, &half(), &hz, &outside, &DisturbanceSequence::zeros(2, 5), &tight()),
            Err(Error::AncillaryInfeasible(0))
        ));
    }

    #[test]
    fn disturbance_sequences() {
        let w = DisturbanceSequence::new(vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0), DVector::zeros(1)])
            .unwrap();
        assert_eq!(w.tail().entries(), &[DVector::from_element(1, 2.0), DVector::zeros(1), DVector::zeros(1)]);
        assert_eq!(w.get(7), DVector::zeros(1));
        assert!(DisturbanceSequence::new(vec![DVector::from_element(1, 1.0)]).is_err());
    }

    #[test]
    fn assembly_is_affine_in_neighbour_plans() {
        let mut couplings = BTreeMap::new();
        couplings.insert(
            1,
            crate::model::Coupling {
                a: DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.2, 0.3]),
                b: DMatrix::from_column_slice(2, 1, &[0.0, 0.5]),
            },
        );
        let m = SubsystemModel { couplings, ..double_integrator() };
        let c = DVector::from_column_slice(&[1.0, 2.0]);
        let mut pred = Prediction {
            x_seq: vec![c.clone(); 4],
            u_seq: vec![DVector::from_element(1, 3.0); 3],
            cost: 0.0,
        };
        pred.x_seq[3] = DVector::zeros(2);
        let preds: BTreeMap<usize, Prediction> = [(1, pred)].into_iter().collect();
        let w = assemble_disturbance(&m, &preds, 3).unwrap();
        for l in 0..3 {
            assert_abs_diff_eq!(w.entries()[l][0], 0.1, epsilon = 1e-15);
            assert_abs_diff_eq!(w.entries()[l][1], 0.2 + 0.6 + 1.5, epsilon = 1e-15);
        }
        assert_eq!(w.entries()[3], DVector::zeros(2));
        assert!(matches!(
            assemble_disturbance(&m, &BTreeMap::new(), 3),
            Err(Error::MissingPrediction { subsystem: 0, neighbour: 1 })
        ));
    }

    #[test]
    fn first_round_accepts() {
        let m = double_integrator();
        let hz = Horizons::new(10, 11).unwrap();
        let sel = RciDesign {
            h: 2,
            m: vec![DMatrix::zeros(1, 2); 2],
            d: vec![DMatrix::identity(2, 2); 3],
            eta: 0.0,
            theta: 0.0,
            delta: 0.0,
            weights: Default::default(),
            w: ConvexSet::origin(2),
            a: m.a.clone(),
            b: m.b.clone(),
        };
        let ctrl = Controller {
            model: m,
            scalings: half(),
            horizons: hz,
            selection: sel,
            settings: tight(),
        };
        let x0 = DVector::from_column_slice(&[0.4, 0.0]);
        let cs = ControllerState::initial(&x0, 10);
        let pred = ctrl.phase_main(&cs).unwrap();
        let mut w = vec![DVector::zeros(2); 11];
        w[0] = DVector::from_column_slice(&[0.0, 0.05]);
        let w = DisturbanceSequence::new(w).unwrap();
        let (u, next, rec) = ctrl.phase_ancillary(&cs, &pred, &w, &x0).unwrap();
        assert!(rec.accepted && rec.new_feasible && !rec.fallback);
        assert!(rec.v_star.is_finite());
        assert_abs_diff_eq!(u[0], pred.u_seq[0][0] + rec.f_bar0[0], epsilon = 1e-15);
        assert_eq!(next.stored_w, w.tail());
        assert_abs_diff_eq!(
            (&next.e_bar - (&ctrl.model.a * &cs.e_bar + &ctrl.model.b * &rec.f_bar0 + w.get(0))).amax(),
            0.0
        );

        // The shifted tail bounds the next optimal cost by V*.
        let (_, _, rec2) = ctrl
            .phase_ancillary(&next, &ctrl.phase_main(&next).unwrap(), &next.stored_w, &(&next.x_bar + &next.e_bar))
            .unwrap();
        assert!(rec2.v_hat <= next.v_star + 1e-7);
    }
}
