//! JSON persistence of off-line designs.
//!
//! Per subsystem the file stores the six scaling constants, `η, θ, δ` of
//! the full-set design, `η̃, θ̃` of the summand design and the feedback
//! matrices `M_0..M_{h-1}`, each flattened row-major. Numbers are written
//! in shortest round-trip form.

use std::path::Path;

use nalgebra::DMatrix;
use nedmpc_core::model::System;
use nedmpc_core::opt::SolverSettings;
use nedmpc_core::rci::{RciDesign, RciWeights, ScalingConstants, SubsystemDesign};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemRecord {
    pub id: usize,
    pub scalings: ScalingConstants,
    pub eta: f64,
    pub theta: f64,
    pub delta: f64,
    pub eta_tilde: f64,
    pub theta_tilde: f64,
    pub m_rows: usize,
    pub m_cols: usize,
    pub m: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub h: usize,
    pub weights: RciWeights,
    pub subsystems: Vec<SubsystemRecord>,
}

impl DesignFile {
    pub fn from_designs(designs: &[SubsystemDesign]) -> Self {
        let h = designs.first().map_or(0, |d| d.full.h);
        let weights = designs.first().map_or_else(RciWeights::default, |d| d.full.weights);
        let subsystems = designs
            .iter()
            .enumerate()
            .map(|(id, d)| {
                let (r, c) = d.full.m.first().map_or((0, 0), |m| m.shape());
                SubsystemRecord {
                    id,
                    scalings: d.scalings,
                    eta: d.full.eta,
                    theta: d.full.theta,
                    delta: d.full.delta,
                    eta_tilde: d.hat.eta,
                    theta_tilde: d.hat.theta,
                    m_rows: r,
                    m_cols: c,
                    m: d
                        .full
                        .m
                        .iter()
                        .map(|ml| ml.transpose().iter().copied().collect())
                        .collect(),
                }
            })
            .collect();
        Self {
            h,
            weights,
            subsystems,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::DesignFile(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Rebuilds the designs for `system`. The disturbance sets come from the
    /// system and the stored `α`; `η, θ, η̃, θ̃` are recomputed from the
    /// stored gains (compare with [`DesignFile::recorded_mismatch`]).
    pub fn to_designs(&self, system: &System, settings: &SolverSettings) -> Result<Vec<SubsystemDesign>> {
        if self.subsystems.len() != system.len() {
            return Err(SimError::DesignFile(format!(
                "{} subsystem records for {} subsystems",
                self.subsystems.len(),
                system.len()
            )));
        }
        let ones = vec![1.0; system.len()];
        let mut rest_x = Vec::with_capacity(system.len());
        let mut rest_u = Vec::with_capacity(system.len());
        for (k, rec) in self.subsystems.iter().enumerate() {
            if rec.id != k {
                return Err(SimError::DesignFile(format!("subsystems[{k}].id: expected {k}")));
            }
            rec.scalings
                .validate(1e-9)
                .map_err(|e| SimError::DesignFile(format!("subsystems[{k}].scalings: {e}")))?;
            rest_x.push(1.0 - rec.scalings.alpha_x);
            rest_u.push(1.0 - rec.scalings.alpha_u);
        }
        let mut out = Vec::with_capacity(system.len());
        for (s, rec) in system.subsystems().iter().zip(&self.subsystems) {
            let field = format!("subsystems[{}]", s.id);
            if (rec.m_rows, rec.m_cols) != (s.m(), s.n()) {
                return Err(SimError::DesignFile(format!(
                    "{field}: feedback matrices are {}x{}, the model needs {}x{}",
                    rec.m_rows,
                    rec.m_cols,
                    s.m(),
                    s.n()
                )));
            }
            if rec.m.len() != self.h {
                return Err(SimError::DesignFile(format!(
                    "{field}.m: expected {} matrices, found {}",
                    self.h,
                    rec.m.len()
                )));
            }
            let mut m = Vec::with_capacity(self.h);
            for (l, flat) in rec.m.iter().enumerate() {
                if flat.len() != s.m() * s.n() || flat.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::DesignFile(format!(
                        "{field}.m[{l}]: expected {} finite entries",
                        s.m() * s.n()
                    )));
                }
                m.push(DMatrix::from_row_slice(s.m(), s.n(), flat));
            }
            let w = system.coupling_disturbance_set(s.id, &ones, &ones)?.pruned(settings)?;
            let full = RciDesign::from_gains(&s.a, &s.b, m, w, self.weights, &s.x_box, &s.u_box)?;
            let w_hat = system
                .coupling_disturbance_set(s.id, &rest_x, &rest_u)?
                .pruned(settings)?;
            let hat = full.with_disturbance(w_hat, &s.x_box, &s.u_box)?;
            out.push(SubsystemDesign {
                scalings: rec.scalings,
                full,
                hat,
            });
        }
        Ok(out)
    }

    /// Largest gap between the recorded `η, θ, η̃, θ̃` and the values
    /// recomputed in `designs`.
    pub fn recorded_mismatch(&self, designs: &[SubsystemDesign]) -> f64 {
        self.subsystems
            .iter()
            .zip(designs)
            .flat_map(|(r, d)| {
                [
                    r.eta - d.full.eta,
                    r.theta - d.full.theta,
                    r.eta_tilde - d.hat.eta,
                    r.theta_tilde - d.hat.theta,
                ]
            })
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}
