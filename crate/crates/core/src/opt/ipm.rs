//! Mehrotra predictor-corrector iteration for
//! `min ½ z'Pz + q'z  s.t.  Az = b,  Gz + s = h,  s >= 0`.

use nalgebra::DVector;

use super::kkt::{KktFactor, KktStructure, SparseRows};
use super::QpProblem;
use crate::error::Result;

const STEP_FRACTION: f64 = 0.99;
const STALL_WINDOW: usize = 40;
const DIVERGED_MULTIPLIER: f64 = 1e12;

pub(crate) struct IpmOutcome {
    pub converged: bool,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
    pub iterations: usize,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn interior_point(prob: &QpProblem, tol: f64, max_iter: usize) -> Result<IpmOutcome> {
    let a = SparseRows::from_dense(&prob.a_eq);
    let g = SparseRows::from_dense(&prob.g_in);
    let st = KktStructure::new(&prob.p, &a, &g);
    let m = g.nrows();
    let linear = prob.p.iter().all(|v| *v == 0.0);

    // Starting point from the Newton system with unit weights.
    let ones = vec![1.0; m];
    let init = KktFactor::new(&st, &prob.p, &a, &g, &ones)?;
    let (mut z, mut y) = init.solve(&(-&prob.q + g.mul_t(&prob.h_in)), &prob.b_eq)?;
    let slack0 = &prob.h_in - g.mul(&z);
    let mut s = if m == 0 {
        DVector::zeros(0)
    } else {
        let shift = -slack0.min();
        if shift < 0.0 {
            slack0.clone()
        } else {
            slack0.add_scalar(1.0 + shift)
        }
    };
    // Multipliers from the same solve (`λ = Gz − h`), shifted positive.
    let mut lambda = if m == 0 {
        DVector::zeros(0)
    } else {
        let dual0 = -&slack0;
        let shift = -dual0.min();
        if shift < 0.0 {
            dual0
        } else {
            dual0.add_scalar(1.0 + shift)
        }
    };

    let mut best = f64::INFINITY;
    let mut best_iter = 0usize;
    let mut iterations = 0usize;

    for iter in 0..max_iter {
        iterations = iter;
        let r_d = &prob.p * &z + &prob.q + a.mul_t(&y) + g.mul_t(&lambda);
        let r_p = a.mul(&z) - &prob.b_eq;
        let r_g = g.mul(&z) + &s - &prob.h_in;
        let gap = s.dot(&lambda);
        let merit = inf_norm(&r_d)
            .max(inf_norm(&r_p))
            .max(inf_norm(&r_g))
            .max(gap);
        if merit <= tol && prob.kkt_residuals(&z, &y, &lambda).max() <= tol {
            return Ok(IpmOutcome {
                converged: true,
                z,
                y,
                lambda,
                iterations: iter,
            });
        }
        if merit < 0.9 * best {
            best = merit;
            best_iter = iter;
        } else if iter - best_iter > STALL_WINDOW {
            break;
        }
        if m > 0 && lambda.max() > DIVERGED_MULTIPLIER * (1.0 + inf_norm(&prob.q)) {
            break;
        }

        let mu = if m > 0 { gap / m as f64 } else { 0.0 };
        let sigma: Vec<f64> = s.iter().zip(lambda.iter()).map(|(si, li)| li / si).collect();
        let kkt = KktFactor::new(&st, &prob.p, &a, &g, &sigma)?;

        let direction = |r_c: &DVector<f64>| -> Result<_> {
            let corr = DVector::from_iterator(
                m,
                (0..m).map(|i| (lambda[i] * r_g[i] - r_c[i]) / s[i]),
            );
            let r1 = -&r_d - g.mul_t(&corr);
            let (dz, dy) = kkt.solve(&r1, &(-&r_p))?;
            let ds = -&r_g - g.mul(&dz);
            let dl = DVector::from_iterator(
                m,
                (0..m).map(|i| (-r_c[i] - lambda[i] * ds[i]) / s[i]),
            );
            Ok((dz, dy, ds, dl))
        };

        // Predictor.
        let r_c_aff = s.component_mul(&lambda);
        let (_, _, ds_aff, dl_aff) = direction(&r_c_aff)?;
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&lambda, &dl_aff)).min(1.0);
        let centering = if m > 0 && mu > 0.0 {
            let mu_aff = (&s + alpha_aff * &ds_aff).dot(&(&lambda + alpha_aff * &dl_aff))
                / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // Corrector.
        let r_c = &r_c_aff + ds_aff.component_mul(&dl_aff) - DVector::from_element(m, centering * mu);
        let (dz, dy, ds, dl) = direction(&r_c)?;
        let alpha_p = (STEP_FRACTION * max_step(&s, &ds)).min(1.0);
        let alpha_d = (STEP_FRACTION * max_step(&lambda, &dl)).min(1.0);
        // Primal and dual steps may differ only when the objective is linear.
        let (alpha_p, alpha_d) = if linear {
            (alpha_p, alpha_d)
        } else {
            (alpha_p.min(alpha_d), alpha_p.min(alpha_d))
        };

        z += alpha_p * dz;
        s += alpha_p * ds;
        y += alpha_d * dy;
        lambda += alpha_d * dl;
    }

    Ok(IpmOutcome {
        converged: false,
        z,
        y,
        lambda,
        iterations,
    })
}
