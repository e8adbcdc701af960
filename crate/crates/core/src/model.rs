//! Subsystem models, the stacked plant and zero-order-hold discretization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, ConvexSet};

/// Coupling blocks `(A_ij, B_ij)` through which neighbour `j` enters subsystem `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Coupling {
    pub fn is_zero(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| *v == 0.0)
    }
}

/// Discrete-time subsystem `x_i⁺ = A_ii x_i + B_ii u_i + Σ_j (A_ij x_j + B_ij u_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    pub id: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Keyed by neighbour id. Entries whose blocks are all zero are kept but
    /// are not neighbours.
    pub couplings: BTreeMap<usize, Coupling>,
    pub x_box: AxisBox,
    pub u_box: AxisBox,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn check_positive_definite(name: &str, id: usize, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::Dimension(format!(
            "subsystem {id}: {name} is {}x{}, expected {dim}x{dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::Parameter(format!("subsystem {id}: {name} is not symmetric")));
    }
    if min_eigenvalue(m) <= 0.0 {
        return Err(Error::Parameter(format!(
            "subsystem {id}: {name} is not positive definite"
        )));
    }
    Ok(())
}

/// Rank of the controllability matrix `[B AB ... A^{n-1}B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    let sv = ctrb.svd(false, false).singular_values;
    let tol = sv.max() * 1e-10 * n.max(m * n) as f64;
    sv.iter().filter(|s| **s > tol).count()
}

impl SubsystemModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        couplings: BTreeMap<usize, Coupling>,
        x_box: AxisBox,
        u_box: AxisBox,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || n == 0 || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "subsystem {id}: A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        if x_box.dim() != n || u_box.dim() != m {
            return Err(Error::Dimension(format!(
                "subsystem {id}: constraint boxes have dimensions {} and {}, expected {n} and {m}",
                x_box.dim(),
                u_box.dim()
            )));
        }
        check_positive_definite("Q", id, &q, n)?;
        check_positive_definite("R", id, &r, m)?;
        if controllability_rank(&a, &b) < n {
            return Err(Error::Parameter(format!(
                "subsystem {id}: (A_ii, B_ii) is not controllable"
            )));
        }
        for (j, c) in &couplings {
            if *j == id {
                return Err(Error::Parameter(format!("subsystem {id} is coupled to itself")));
            }
            if c.a.nrows() != n || c.b.nrows() != n {
                return Err(Error::Dimension(format!(
                    "subsystem {id}: coupling blocks from {j} have {} and {} rows, expected {n}",
                    c.a.nrows(),
                    c.b.nrows()
                )));
            }
        }
        Ok(Self {
            id,
            a,
            b,
            couplings,
            x_box,
            u_box,
            q,
            r,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Ids with a nonzero coupling block, ascending.
    pub fn neighbours(&self) -> Vec<usize> {
        self.couplings
            .iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(j, _)| *j)
            .collect()
    }

    /// `½ (x'Qx + u'Ru)`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }
}

/// The interconnected plant: subsystem `i` is `subsystems[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    subsystems: Vec<SubsystemModel>,
}

impl System {
    pub fn new(subsystems: Vec<SubsystemModel>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::Parameter("a system needs at least one subsystem".into()));
        }
        for (i, s) in subsystems.iter().enumerate() {
            if s.id != i {
                return Err(Error::Parameter(format!(
                    "subsystem at position {i} carries id {}",
                    s.id
                )));
            }
        }
        for s in &subsystems {
            for (j, c) in &s.couplings {
                let other = subsystems.get(*j).ok_or(Error::UnknownSubsystem(*j))?;
                if c.a.ncols() != other.n() || c.b.ncols() != other.m() {
                    return Err(Error::Dimension(format!(
                        "coupling {}<-{j} is {}x{} / {}x{}, neighbour has n = {}, m = {}",
                        s.id,
                        c.a.nrows(),
                        c.a.ncols(),
                        c.b.nrows(),
                        c.b.ncols(),
                        other.n(),
                        other.m()
                    )));
                }
            }
        }
        Ok(Self { subsystems })
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn subsystems(&self) -> &[SubsystemModel] {
        &self.subsystems
    }

    pub fn subsystem(&self, i: usize) -> Result<&SubsystemModel> {
        self.subsystems.get(i).ok_or(Error::UnknownSubsystem(i))
    }

    /// Ids exchanging predictions with `i`: coupled in either direction.
    pub fn communication_peers(&self, i: usize) -> Result<Vec<usize>> {
        let me = self.subsystem(i)?;
        let mut peers: Vec<usize> = me.neighbours();
        for s in &self.subsystems {
            if s.neighbours().contains(&i) && !peers.contains(&s.id) {
                peers.push(s.id);
            }
        }
        peers.sort_unstable();
        Ok(peers)
    }

    pub fn state_offsets(&self) -> Vec<usize> {
        offsets(self.subsystems.iter().map(|s| s.n()))
    }

    pub fn input_offsets(&self) -> Vec<usize> {
        offsets(self.subsystems.iter().map(|s| s.m()))
    }

    pub fn state_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.n()).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.m()).sum()
    }

    /// Stacked `(A, B)` of the full plant.
    pub fn stacked(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let xo = self.state_offsets();
        let uo = self.input_offsets();
        let mut a = DMatrix::zeros(self.state_dim(), self.state_dim());
        let mut b = DMatrix::zeros(self.state_dim(), self.input_dim());
        for s in &self.subsystems {
            let r = xo[s.id];
            a.view_mut((r, xo[s.id]), (s.n(), s.n())).copy_from(&s.a);
            b.view_mut((r, uo[s.id]), (s.n(), s.m())).copy_from(&s.b);
            for (j, c) in &s.couplings {
                let o = &self.subsystems[*j];
                a.view_mut((r, xo[*j]), (s.n(), o.n())).copy_from(&c.a);
                b.view_mut((r, uo[*j]), (s.n(), o.m())).copy_from(&c.b);
            }
        }
        (a, b)
    }

    /// `⊕_{j ∈ N_i} (sx_j A_ij X_j ⊕ su_j B_ij U_j)`, with one scaling per
    /// subsystem id (entries for non-neighbours are ignored).
    pub fn coupling_disturbance_set(
        &self,
        i: usize,
        state_scalings: &[f64],
        input_scalings: &[f64],
    ) -> Result<ConvexSet> {
        let me = self.subsystem(i)?;
        if state_scalings.len() != self.len() || input_scalings.len() != self.len() {
            return Err(Error::Dimension(format!(
                "expected {} scalings per channel, got {} and {}",
                self.len(),
                state_scalings.len(),
                input_scalings.len()
            )));
        }
        let mut set = ConvexSet::origin(me.n());
        for j in me.neighbours() {
            let c = &me.couplings[&j];
            let other = &self.subsystems[j];
            let xs = other.x_box.scale(state_scalings[j])?.to_set();
            let us = other.u_box.scale(input_scalings[j])?.to_set();
            set = set
                .minkowski_sum(&xs.linear_image(&c.a)?)?
                .minkowski_sum(&us.linear_image(&c.b)?)?;
        }
        Ok(set)
    }

    /// Copy of the system with every coupling block zeroed.
    pub fn decoupled(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.subsystems {
            for c in s.couplings.values_mut() {
                c.a.fill(0.0);
                c.b.fill(0.0);
            }
        }
        out
    }
}

fn offsets(dims: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut acc = 0;
    dims.map(|d| {
        let o = acc;
        acc += d;
        o
    })
    .collect()
}

/// Matrix exponential by scaling and squaring of a Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0i32;
    while norm / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let scaled = m / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() <= f64::EPSILON * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Exact zero-order-hold discretization of `ẋ = A x + B u` over `ts` seconds,
/// from the exponential of the augmented block `[A B; 0 0]`.
pub fn discretize_zoh(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::Parameter(format!("sampling period {ts} must be positive")));
    }
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("continuous A must be square and match B".into()));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * ts));
    let e = expm(&aug);
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

/// Splits stacked matrices into `(A_ij, B_ij)` blocks by subsystem dimensions.
pub fn partition_blocks(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    state_dims: &[usize],
    input_dims: &[usize],
) -> Result<Vec<Vec<(DMatrix<f64>, DMatrix<f64>)>>> {
    let nx: usize = state_dims.iter().sum();
    let nu: usize = input_dims.iter().sum();
    if state_dims.len() != input_dims.len()
        || a.shape() != (nx, nx)
        || b.shape() != (nx, nu)
    {
        return Err(Error::Dimension("block dimensions do not match stacked matrices".into()));
    }
    let xo = offsets(state_dims.iter().copied());
    let uo = offsets(input_dims.iter().copied());
    Ok((0..state_dims.len())
        .map(|i| {
            (0..state_dims.len())
                .map(|j| {
                    (
                        a.view((xo[i], xo[j]), (state_dims[i], state_dims[j])).into_owned(),
                        b.view((xo[i], uo[j]), (state_dims[i], input_dims[j])).into_owned(),
                    )
                })
                .collect()
        })
        .collect())
}
