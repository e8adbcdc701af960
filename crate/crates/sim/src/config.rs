//! JSON run configuration.
//!
//! A config lists the subsystems (local matrices, box bounds and diagonal
//! weights), the couplings between them, and the horizon, design and
//! simulation parameters. Matrices are arrays of rows. With
//! `"time_domain": "continuous"` the stacked system is discretized by a
//! zero-order hold at `ts` seconds before it is split back into blocks.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nedmpc_core::geometry::AxisBox;
use nedmpc_core::model::{discretize_zoh, partition_blocks, Coupling, SubsystemModel, System};
use nedmpc_core::mpc::Horizons;
use nedmpc_core::opt::SolverSettings;
use nedmpc_core::rci::RciWeights;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDomain {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub x_max: Vec<f64>,
    /// Defaults to `-x_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<Vec<f64>>,
    pub u_max: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_min: Option<Vec<f64>>,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
}

/// Effect of subsystem `from` on subsystem `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub to: usize,
    pub from: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub n: usize,
    pub h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RciConfig {
    pub h: usize,
    #[serde(default = "one")]
    pub q_eta: f64,
    #[serde(default = "one")]
    pub q_theta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub steps: usize,
    /// One state per subsystem.
    pub initial_states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Interior-point stopping tolerance.
    pub solver: f64,
    pub max_iter: usize,
    /// Slack allowed on closed-loop constraint and invariant checks.
    pub constraint: f64,
    /// Slack allowed by `verify` on sampled invariance checks.
    pub verify: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solver: 1e-9,
            max_iter: 5000,
            constraint: 1e-9,
            verify: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub time_domain: TimeDomain,
    /// Sampling period in seconds; required for continuous models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    pub horizons: HorizonConfig,
    pub rci: RciConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    pub subsystems: Vec<SubsystemConfig>,
    #[serde(default)]
    pub couplings: Vec<CouplingConfig>,
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(SimError::Config(format!("{field}: matrix must be nonempty")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(SimError::Config(format!("{field}: rows have different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SimError::Config(format!("{field}: entries must be finite")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn bounds(max: &[f64], min: Option<&Vec<f64>>, dim: usize, field: &str) -> Result<AxisBox> {
    if max.len() != dim {
        return Err(SimError::Config(format!(
            "{field}_max: expected {dim} entries, found {}",
            max.len()
        )));
    }
    let hi = DVector::from_column_slice(max);
    let lo = match min {
        Some(v) if v.len() != dim => {
            return Err(SimError::Config(format!(
                "{field}_min: expected {dim} entries, found {}",
                v.len()
            )))
        }
        Some(v) => DVector::from_column_slice(v),
        None => -&hi,
    };
    AxisBox::new(lo, hi).map_err(|e| SimError::Config(format!("{field} bounds: {e}")))
}

fn diag(v: &[f64], dim: usize, field: &str) -> Result<DMatrix<f64>> {
    if v.len() != dim {
        return Err(SimError::Config(format!(
            "{field}: expected {dim} entries, found {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(SimError::Config(format!("{field}: weights must be positive")));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Config::from_json(&text)
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn horizons(&self) -> Result<Horizons> {
        let HorizonConfig { n, h } = self.horizons;
        if n < 1 {
            return Err(SimError::Config("horizons.n: must be at least 1".into()));
        }
        if h < n + 1 {
            return Err(SimError::Config(format!(
                "horizons.h: H = {h} must be at least N + 1 = {} so that the ancillary horizon covers the whole disturbance sequence",
                n + 1
            )));
        }
        Ok(Horizons::new(n, h)?)
    }

    pub fn weights(&self) -> Result<RciWeights> {
        RciWeights::new(self.rci.q_eta, self.rci.q_theta)
            .map_err(|e| SimError::Config(format!("rci weights: {e}")))
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.tolerances.solver,
            max_iter: self.tolerances.max_iter,
            ..SolverSettings::default()
        }
    }

    /// Seconds per round (1 for discrete configs without `ts`).
    pub fn period(&self) -> f64 {
        self.ts.unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsystems.is_empty() {
            return Err(SimError::Config("subsystems: at least one is required".into()));
        }
        self.horizons()?;
        self.weights()?;
        if self.rci.h < 1 {
            return Err(SimError::Config("rci.h: must be at least 1".into()));
        }
        match (self.time_domain, self.ts) {
            (TimeDomain::Continuous, None) => {
                return Err(SimError::Config("ts: required for continuous models".into()))
            }
            (_, Some(ts)) if !(ts.is_finite() && ts > 0.0) => {
                return Err(SimError::Config(format!("ts: must be positive, found {ts}")))
            }
            _ => {}
        }
        let t = self.tolerances;
        for (name, v) in [
            ("solver", t.solver),
            ("constraint", t.constraint),
            ("verify", t.verify),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("tolerances.{name}: must be positive")));
            }
        }
        if t.max_iter == 0 {
            return Err(SimError::Config("tolerances.max_iter: must be positive".into()));
        }
        if self.sim.initial_states.len() != self.subsystems.len() {
            return Err(SimError::Config(format!(
                "sim.initial_states: expected {} states, found {}",
                self.subsystems.len(),
                self.sim.initial_states.len()
            )));
        }
        let system = self.system()?;
        for (s, x0) in system.subsystems().iter().zip(&self.sim.initial_states) {
            if x0.len() != s.n() {
                return Err(SimError::Config(format!(
                    "sim.initial_states[{}]: expected {} entries, found {}",
                    s.id,
                    s.n(),
                    x0.len()
                )));
            }
            if !s.x_box.contains(&DVector::from_column_slice(x0), 0.0) {
                return Err(SimError::Config(format!(
                    "sim.initial_states[{}]: outside the state constraints",
                    s.id
                )));
            }
        }
        Ok(())
    }

    /// Discrete-time system described by the config.
    pub fn system(&self) -> Result<System> {
        let count = self.subsystems.len();
        let mut locals = Vec::with_capacity(count);
        for (i, s) in self.subsystems.iter().enumerate() {
            let a = matrix(&s.a, &format!("subsystems[{i}].a"))?;
            let b = matrix(&s.b, &format!("subsystems[{i}].b"))?;
            if !a.is_square() {
                return Err(SimError::Config(format!("subsystems[{i}].a: must be square")));
            }
            if b.nrows() != a.nrows() {
                return Err(SimError::Config(format!(
                    "subsystems[{i}].b: expected {} rows, found {}",
                    a.nrows(),
                    b.nrows()
                )));
            }
            locals.push((a, b));
        }
        let dims: Vec<(usize, usize)> = locals.iter().map(|(a, b)| (a.nrows(), b.ncols())).collect();

        let mut blocks: Vec<BTreeMap<usize, Coupling>> = vec![BTreeMap::new(); count];
        for (k, c) in self.couplings.iter().enumerate() {
            let field = format!("couplings[{k}]");
            if c.to >= count || c.from >= count {
                return Err(SimError::Config(format!("{field}: subsystem index out of range")));
            }
            if c.to == c.from {
                return Err(SimError::Config(format!("{field}: a subsystem cannot couple to itself")));
            }
            if blocks[c.to].contains_key(&c.from) {
                return Err(SimError::Config(format!("{field}: duplicate coupling")));
            }
            let (n_to, _) = dims[c.to];
            let (n_from, m_from) = dims[c.from];
            let a = match &c.a {
                Some(rows) => matrix(rows, &format!("{field}.a"))?,
                None => DMatrix::zeros(n_to, n_from),
            };
            let b = match &c.b {
                Some(rows) => matrix(rows, &format!("{field}.b"))?,
                None => DMatrix::zeros(n_to, m_from),
            };
            if a.shape() != (n_to, n_from) || b.shape() != (n_to, m_from) {
                return Err(SimError::Config(format!(
                    "{field}: expected blocks of shape {n_to}x{n_from} and {n_to}x{m_from}"
                )));
            }
            blocks[c.to].insert(c.from, Coupling { a, b });
        }

        if self.time_domain == TimeDomain::Continuous {
            let ts = self
                .ts
                .ok_or_else(|| SimError::Config("ts: required for continuous models".into()))?;
            let state_dims: Vec<usize> = dims.iter().map(|d| d.0).collect();
            let input_dims: Vec<usize> = dims.iter().map(|d| d.1).collect();
            let (nx, nu) = (state_dims.iter().sum(), input_dims.iter().sum());
            let mut ac = DMatrix::zeros(nx, nx);
            let mut bc = DMatrix::zeros(nx, nu);
            let xo = offsets(&state_dims);
            let uo = offsets(&input_dims);
            for i in 0..count {
                let (a, b) = &locals[i];
                ac.view_mut((xo[i], xo[i]), a.shape()).copy_from(a);
                bc.view_mut((xo[i], uo[i]), b.shape()).copy_from(b);
                for (j, c) in &blocks[i] {
                    ac.view_mut((xo[i], xo[*j]), c.a.shape()).copy_from(&c.a);
                    bc.view_mut((xo[i], uo[*j]), c.b.shape()).copy_from(&c.b);
                }
            }
            let (ad, bd) = discretize_zoh(&ac, &bc, ts)?;
            let parts = partition_blocks(&ad, &bd, &state_dims, &input_dims)?;
            for i in 0..count {
                locals[i] = parts[i][i].clone();
                blocks[i] = (0..count)
                    .filter(|j| *j != i)
                    .map(|j| {
                        let (a, b) = parts[i][j].clone();
                        (j, Coupling { a, b })
                    })
                    .filter(|(_, c)| !c.is_zero())
                    .collect();
            }
        }

        let mut subs = Vec::with_capacity(count);
        for (i, ((a, b), couplings)) in locals.into_iter().zip(blocks).enumerate() {
            let s = &self.subsystems[i];
            let (n, m) = (a.nrows(), b.ncols());
            let field = format!("subsystems[{i}]");
            let model = SubsystemModel::new(
                i,
                a,
                b,
                couplings,
                bounds(&s.x_max, s.x_min.as_ref(), n, &format!("{field}.x"))?,
                bounds(&s.u_max, s.u_min.as_ref(), m, &format!("{field}.u"))?,
                diag(&s.q_diag, n, &format!("{field}.q_diag"))?,
                diag(&s.r_diag, m, &format!("{field}.r_diag"))?,
            )
            .map_err(|e| SimError::Config(format!("{field}: {e}")))?;
            subs.push(model);
        }
        Ok(System::new(subs)?)
    }

    /// Stacked initial state.
    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.sim.initial_states.iter().map(Vec::len).sum(),
            self.sim.initial_states.iter().flatten().copied(),
        )
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}
