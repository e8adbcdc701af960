//! Invariant checks over designs and closed-loop runs.

use std::fmt;

use nedmpc_core::coordinator::SimulationResult;
use nedmpc_core::model::System;
use nedmpc_core::rci::SubsystemDesign;

/// Tolerance on nominal cost descent between rounds.
pub const DESCENT_TOL: f64 = 1e-6;
/// Tolerance on `x = x̄ + ē + ê`.
pub const SPLIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub round: Option<usize>,
    pub subsystem: usize,
    pub check: &'static str,
    /// Size of the violation.
    pub excess: f64,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.round {
            Some(r) => write!(f, "round {r}, subsystem {}: {} (by {:e})", self.subsystem, self.check, self.excess),
            None => write!(f, "subsystem {}: {} (by {:e})", self.subsystem, self.check, self.excess),
        }
    }
}

/// Design-level checks: constant sums, the invariance feedback fitting in
/// its `ξ` share, and `D_h = 0`.
pub fn audit_design(designs: &[SubsystemDesign], tol: f64) -> Vec<Finding> {
    let mut out = Vec::new();
    for (i, d) in designs.iter().enumerate() {
        let s = &d.scalings;
        let mut push = |check, excess: f64| {
            if excess > tol {
                out.push(Finding {
                    round: None,
                    subsystem: i,
                    check,
                    excess,
                })
            }
        };
        push("state constants sum above 1", s.alpha_x + s.beta_x + s.xi_x - 1.0);
        push("input constants sum above 1", s.alpha_u + s.beta_u + s.xi_u - 1.0);
        push("invariant set exceeds its state share", d.hat.eta - s.xi_x);
        push("invariance feedback exceeds its input share", d.hat.theta - s.xi_u);
        push("full-set design exceeds the complement of alpha_x", d.full.eta - (1.0 - s.alpha_x));
        push("full-set design exceeds the complement of alpha_u", d.full.theta - (1.0 - s.alpha_u));
        push("terminal matrix D_h is not zero", d.full.d_h_norm() - 1e-8);
    }
    out
}

/// Closed-loop checks on every round: constraints, the split of each
/// state into its three boxes, selection health, nominal descent and the
/// bookkeeping of `V*`.
pub fn audit_run(
    system: &System,
    designs: &[SubsystemDesign],
    result: &SimulationResult,
    tol: f64,
) -> Vec<Finding> {
    let mut out: Vec<Finding> = result
        .violations
        .iter()
        .map(|v| Finding {
            round: Some(v.round),
            subsystem: v.subsystem,
            check: if v.what.starts_with("state") {
                "state constraint"
            } else {
                "input constraint"
            },
            excess: -v.margin,
        })
        .collect();
    for (k, log) in result.logs.iter().enumerate() {
        for rec in &log.records {
            let i = rec.id;
            let model = &system.subsystems()[i];
            let sc = &designs[i].scalings;
            let mut push = |check, excess: f64| {
                if excess > tol || excess.is_nan() {
                    out.push(Finding {
                        round: Some(log.round),
                        subsystem: i,
                        check,
                        excess,
                    })
                }
            };
            let scaled = |bx: &nedmpc_core::geometry::AxisBox, a: f64, v| match bx.scale(a) {
                Ok(b) => -b.margin(v),
                Err(_) => f64::NAN,
            };
            if log.round > 0 {
                push("nominal state outside alpha_x box", scaled(&model.x_box, sc.alpha_x, &rec.x_bar));
            }
            push("planned error outside beta_x box", scaled(&model.x_box, sc.beta_x, &rec.e_bar));
            push("unplanned error outside xi_x box", scaled(&model.x_box, sc.xi_x, &rec.e_hat));
            push("nominal input outside alpha_u box", scaled(&model.u_box, sc.alpha_u, &rec.u_bar0));
            push("ancillary input outside beta_u box", scaled(&model.u_box, sc.beta_u, &rec.f_bar0));
            push("invariance input outside xi_u box", scaled(&model.u_box, sc.xi_u, &rec.mu));
            push(
                "state split does not reconstruct the measurement",
                (&rec.x_bar + &rec.e_bar + &rec.e_hat - &rec.x).amax() - SPLIT_TOL + tol,
            );
            if rec.selection_relaxed {
                push("unplanned error outside the invariant set (relaxed selection)", f64::INFINITY);
            }
            if rec.v_star.is_finite() {
                push("V* negative", -rec.v_star - DESCENT_TOL + tol);
            }
            if let Some(next) = result.logs.get(k + 1) {
                let nr = &next.records[i];
                push(
                    "nominal cost did not descend",
                    nr.v_bar - rec.v_bar + rec.nominal_stage_cost - DESCENT_TOL + tol,
                );
                if !nr.accepted && rec.v_star.is_finite() {
                    push("V* increased without an accept", nr.v_star - rec.v_star);
                }
            }
        }
    }
    out
}

/// One line per distinct check: count and worst excess.
pub fn summarize(findings: &[Finding]) -> Vec<String> {
    let mut keys: Vec<&'static str> = findings.iter().map(|f| f.check).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let hits: Vec<&Finding> = findings.iter().filter(|f| f.check == k).collect();
            let worst = hits.iter().map(|f| f.excess).fold(f64::NEG_INFINITY, f64::max);
            format!("{k}: {} occurrence(s), worst {worst:e}, first at {}", hits.len(), hits[0])
        })
        .collect()
}
