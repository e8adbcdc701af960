//! CSV traces: one row per (round, subsystem).
//!
//! Vector quantities get one column per component, sized for the largest
//! subsystem; components a smaller subsystem lacks are left empty.
//! Numbers use the shortest decimal form that parses back to the same
//! `f64`.

use std::io::Write;

use nalgebra::DVector;
use nedmpc_core::coordinator::SimulationResult;

use crate::error::Result;

const STATE_FIELDS: [&str; 4] = ["x", "x_bar", "e_bar", "e_hat"];
const INPUT_FIELDS: [&str; 4] = ["u", "u_bar0", "f_bar0", "mu"];
const SCALAR_FIELDS: [&str; 9] = [
    "v_bar",
    "v_hat",
    "v_star",
    "accepted",
    "fallback",
    "new_feasible",
    "selection_relaxed",
    "state_margin",
    "input_margin",
];

pub fn header(n_max: usize, m_max: usize) -> Vec<String> {
    let mut h = vec!["round".to_string(), "t".to_string(), "subsystem".to_string()];
    for f in STATE_FIELDS {
        h.extend((0..n_max).map(|k| format!("{f}{k}")));
    }
    for f in INPUT_FIELDS {
        h.extend((0..m_max).map(|k| format!("{f}{k}")));
    }
    h.extend(SCALAR_FIELDS.iter().map(|s| s.to_string()));
    h
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn padded(v: &DVector<f64>, width: usize, row: &mut Vec<String>) {
    row.extend(v.iter().map(|x| num(*x)));
    row.extend((v.len()..width).map(|_| String::new()));
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// Writes the full trace of `result`; `period` converts rounds to seconds.
pub fn write_trace<W: Write>(out: W, result: &SimulationResult, period: f64) -> Result<()> {
    let first = result.logs.first().map(|l| l.records.as_slice()).unwrap_or(&[]);
    let n_max = first.iter().map(|r| r.x.len()).max().unwrap_or(0);
    let m_max = first.iter().map(|r| r.u.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(n_max, m_max))?;
    for log in &result.logs {
        for rec in &log.records {
            let mut row = vec![
                log.round.to_string(),
                num(log.round as f64 * period),
                rec.id.to_string(),
            ];
            for v in [&rec.x, &rec.x_bar, &rec.e_bar, &rec.e_hat] {
                padded(v, n_max, &mut row);
            }
            for v in [&rec.u, &rec.u_bar0, &rec.f_bar0, &rec.mu] {
                padded(v, m_max, &mut row);
            }
            row.extend([
                num(rec.v_bar),
                num(rec.v_hat),
                num(rec.v_star),
                flag(rec.accepted),
                flag(rec.fallback),
                flag(rec.new_feasible),
                flag(rec.selection_relaxed),
                num(rec.state_margin),
                num(rec.input_margin),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
