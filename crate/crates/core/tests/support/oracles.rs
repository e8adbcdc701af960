//! Brute-force reference solvers used only by tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct Instance {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

fn subsets(m: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..1usize << m).map(move |mask| (0..m).filter(|i| mask >> i & 1 == 1).collect())
}

/// Active-set enumeration for a strictly convex QP: every subset of
/// inequalities is treated as active, the equality-constrained KKT system is
/// solved directly, and the feasible, dual-feasible point with the lowest
/// objective is returned.
pub fn active_set_qp(inst: &Instance) -> Option<(DVector<f64>, f64)> {
    let n = inst.q.len();
    let p = inst.a.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for active in subsets(inst.g.nrows()) {
        let k = p + active.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&inst.p);
        rhs.rows_mut(0, n).copy_from(&(-&inst.q));
        for r in 0..p {
            for j in 0..n {
                kkt[(n + r, j)] = inst.a[(r, j)];
                kkt[(j, n + r)] = inst.a[(r, j)];
            }
            rhs[n + r] = inst.b[r];
        }
        for (c, &r) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + p + c, j)] = inst.g[(r, j)];
                kkt[(j, n + p + c)] = inst.g[(r, j)];
            }
            rhs[n + p + c] = inst.h[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let duals_ok = (0..active.len()).all(|c| sol[n + p + c] >= -1e-9);
        let feasible = (&inst.g * &z - &inst.h).iter().all(|v| *v <= 1e-9)
            && (&inst.a * &z - &inst.b).amax() <= 1e-9;
        if duals_ok && feasible {
            let obj = 0.5 * z.dot(&(&inst.p * &z)) + inst.q.dot(&z);
            if best.as_ref().map_or(true, |(_, o)| obj < *o) {
                best = Some((z, obj));
            }
        }
    }
    best
}

/// Vertex enumeration for a bounded LP: every choice of `n` linearly
/// independent tight rows (all equalities plus a subset of inequalities) gives
/// a candidate vertex; the best feasible one is optimal.
pub fn vertex_enumeration_lp(inst: &Instance) -> Option<(DVector<f64>, f64)> {
    let n = inst.q.len();
    let p = inst.a.nrows();
    let need = n.checked_sub(p)?;
    let mut best: Option<(DVector<f64>, f64)> = None;
    for active in subsets(inst.g.nrows()).filter(|s| s.len() == need) {
        let mut m = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for r in 0..p {
            m.row_mut(r).copy_from(&inst.a.row(r));
            rhs[r] = inst.b[r];
        }
        for (c, &r) in active.iter().enumerate() {
            m.row_mut(p + c).copy_from(&inst.g.row(r));
            rhs[p + c] = inst.h[r];
        }
        let lu = m.lu();
        if lu.determinant().abs() < 1e-10 {
            continue;
        }
        let Some(z) = lu.solve(&rhs) else { continue };
        let feasible = (&inst.g * &z - &inst.h).iter().all(|v| *v <= 1e-9)
            && (&inst.a * &z - &inst.b).amax() <= 1e-9;
        if feasible {
            let obj = inst.q.dot(&z);
            if best.as_ref().map_or(true, |(_, o)| obj < *o) {
                best = Some((z, obj));
            }
        }
    }
    best
}

fn uniform(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(rng: &mut impl Rng) -> Instance {
    let n = rng.gen_range(1..=6);
    let p = rng.gen_range(0..=n.min(2));
    let m = rng.gen_range(1..=8);
    let l = uniform(rng, n, n);
    let pm = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a = uniform(rng, p, n);
    let b = &a * &z0;
    let g = uniform(rng, m, n);
    let h = &g * &z0 + DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
    Instance {
        p: pm,
        q: DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0)),
        a,
        b,
        g,
        h,
    }
}

/// Random LP over the box `[-1, 1]^n` with extra random cuts and equalities.
pub fn random_lp(rng: &mut impl Rng) -> Instance {
    let n = rng.gen_range(1..=5);
    let p = rng.gen_range(0..=n.min(2) - 1);
    let extra = rng.gen_range(0..=3);
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let a = uniform(rng, p, n);
    let b = &a * &z0;
    let cuts = uniform(rng, extra, n);
    let cut_rhs = &cuts * &z0 + DVector::from_fn(extra, |_, _| rng.gen_range(0.0..0.5));
    let mut g = DMatrix::zeros(2 * n + extra, n);
    let mut h = DVector::zeros(2 * n + extra);
    for i in 0..n {
        g[(i, i)] = 1.0;
        g[(n + i, i)] = -1.0;
        h[i] = 1.0;
        h[n + i] = 1.0;
    }
    g.view_mut((2 * n, 0), (extra, n)).copy_from(&cuts);
    h.rows_mut(2 * n, extra).copy_from(&cut_rhs);
    Instance {
        p: DMatrix::zeros(n, n),
        q: DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
        a,
        b,
        g,
        h,
    }
}
