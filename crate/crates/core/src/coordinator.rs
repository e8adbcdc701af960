//! Round-synchronous execution of the nested controllers against the full
//! coupled plant.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::System;
use crate::mpc::{assemble_disturbance, Controller, ControllerState, Horizons, Prediction, StepRecord};
use crate::opt::SolverSettings;
use crate::rci::SubsystemDesign;

/// Global/local dynamics agreement required every round.
pub const CONSISTENCY_TOL: f64 = 1e-12;

/// A nominal plan broadcast by one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: usize,
    pub round: usize,
    pub x_seq: Vec<DVector<f64>>,
    pub u_seq: Vec<DVector<f64>>,
}

/// In-process delivery of plans along the communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageBus {
    peers: Vec<Vec<usize>>,
    inbox: Vec<Vec<Message>>,
}

impl MessageBus {
    pub fn new(system: &System) -> Result<Self> {
        let peers = (0..system.len())
            .map(|i| system.communication_peers(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inbox: vec![Vec::new(); peers.len()],
            peers,
        })
    }

    pub fn peers(&self, i: usize) -> &[usize] {
        &self.peers[i]
    }

    /// Queues `msg` for every peer of its sender.
    pub fn deliver(&mut self, msg: &Message) {
        for &j in &self.peers[msg.sender] {
            self.inbox[j].push(msg.clone());
        }
    }

    /// Drains controller `i`'s inbox.
    pub fn collect(&mut self, i: usize) -> Vec<Message> {
        std::mem::take(&mut self.inbox[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// One record per subsystem, in id order.
    pub records: Vec<StepRecord>,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

/// A constraint violation found in the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub round: usize,
    pub subsystem: usize,
    pub what: String,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub logs: Vec<RoundLog>,
    pub final_plant: PlantState,
    pub final_states: Vec<ControllerState>,
    pub violations: Vec<Violation>,
}

impl SimulationResult {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The plant together with one controller per subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedSystem {
    pub system: System,
    pub controllers: Vec<Controller>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl NestedSystem {
    pub fn new(
        system: System,
        designs: &[SubsystemDesign],
        horizons: Horizons,
        settings: SolverSettings,
    ) -> Result<Self> {
        horizons.validate()?;
        if designs.len() != system.len() {
            return Err(Error::Dimension(format!(
                "{} designs for {} subsystems",
                designs.len(),
                system.len()
            )));
        }
        let controllers = system
            .subsystems()
            .iter()
            .zip(designs)
            .map(|(m, d)| {
                d.scalings.validate(1e-12)?;
                Ok(Controller {
                    model: m.clone(),
                    scalings: d.scalings,
                    horizons,
                    selection: d.hat.clone(),
                    settings,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (a, b) = system.stacked();
        Ok(Self {
            system,
            controllers,
            a,
            b,
        })
    }

    pub fn horizons(&self) -> Horizons {
        self.controllers[0].horizons
    }

    fn split(&self, v: &DVector<f64>, offsets: &[usize], dims: impl Fn(usize) -> usize) -> Vec<DVector<f64>> {
        offsets
            .iter()
            .enumerate()
            .map(|(i, o)| v.rows(*o, dims(i)).into_owned())
            .collect()
    }

    pub fn split_state(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let subs = self.system.subsystems();
        self.split(x, &self.system.state_offsets(), |i| subs[i].n())
    }

    pub fn split_input(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        let subs = self.system.subsystems();
        self.split(u, &self.system.input_offsets(), |i| subs[i].m())
    }

    pub fn initial_states(&self, x0: &DVector<f64>) -> Result<Vec<ControllerState>> {
        if x0.len() != self.system.state_dim() {
            return Err(Error::Dimension(format!(
                "initial state of length {}, plant has {}",
                x0.len(),
                self.system.state_dim()
            )));
        }
        Ok(self
            .split_state(x0)
            .iter()
            .map(|xi| ControllerState::initial(xi, self.horizons().n))
            .collect())
    }

    /// One barrier-synchronous round: all main problems, message exchange,
    /// all ancillary phases, then the plant update.
    pub fn run_round(
        &self,
        plant: &PlantState,
        states: &[ControllerState],
    ) -> Result<(DVector<f64>, PlantState, Vec<ControllerState>, RoundLog)> {
        let round = plant.t;
        let tag = |i: usize| {
            move |e: Error| Error::Round {
                round,
                subsystem: i,
                source: Box::new(e),
            }
        };
        let mut bus = MessageBus::new(&self.system)?;

        let mut preds: Vec<Prediction> = Vec::with_capacity(self.controllers.len());
        for (i, (ctrl, cs)) in self.controllers.iter().zip(states).enumerate() {
            let p = ctrl.phase_main(cs).map_err(tag(i))?;
            bus.deliver(&Message {
                sender: i,
                round,
                x_seq: p.x_seq.clone(),
                u_seq: p.u_seq.clone(),
            });
            preds.push(p);
        }

        let x_parts = self.split_state(&plant.x);
        let mut inputs = Vec::with_capacity(self.controllers.len());
        let mut next_states = Vec::with_capacity(self.controllers.len());
        let mut records = Vec::with_capacity(self.controllers.len());
        for (i, (ctrl, cs)) in self.controllers.iter().zip(states).enumerate() {
            let received: BTreeMap<usize, Prediction> = bus
                .collect(i)
                .into_iter()
                .filter(|m| m.round == round)
                .map(|m| {
                    (
                        m.sender,
                        Prediction {
                            x_seq: m.x_seq,
                            u_seq: m.u_seq,
                            cost: f64::NAN,
                        },
                    )
                })
                .collect();
            let w_new = assemble_disturbance(&ctrl.model, &received, ctrl.horizons.n).map_err(tag(i))?;
            let (u, next, rec) = ctrl
                .phase_ancillary(cs, &preds[i], &w_new, &x_parts[i])
                .map_err(tag(i))?;
            inputs.push(u);
            next_states.push(next);
            records.push(rec);
        }

        let u_full = DVector::from_iterator(
            self.system.input_dim(),
            inputs.iter().flat_map(|u| u.iter().copied()),
        );
        let x_next = &self.a * &plant.x + &self.b * &u_full;
        self.check_consistency(&plant.x, &u_full, &x_next, round)?;
        let log = RoundLog {
            round,
            records,
            x: plant.x.clone(),
            u: u_full.clone(),
        };
        Ok((
            u_full,
            PlantState {
                x: x_next,
                t: round + 1,
            },
            next_states,
            log,
        ))
    }

    /// Asserts `x_i⁺ = A_ii x_i + B_ii u_i + w_i` against the stacked update.
    fn check_consistency(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_next: &DVector<f64>,
        round: usize,
    ) -> Result<()> {
        let xs = self.split_state(x);
        let us = self.split_input(u);
        let xn = self.split_state(x_next);
        for s in self.system.subsystems() {
            let mut local = &s.a * &xs[s.id] + &s.b * &us[s.id];
            for (j, c) in &s.couplings {
                local += &c.a * &xs[*j] + &c.b * &us[*j];
            }
            let gap = (local - &xn[s.id]).amax();
            if gap > CONSISTENCY_TOL {
                return Err(Error::Consistency(format!(
                    "round {round}, subsystem {}: local update differs from the plant by {gap:e}",
                    s.id
                )));
            }
        }
        Ok(())
    }

    /// Runs `steps` rounds from `x0`, recording every round and every
    /// closed-loop constraint violation (beyond `constraint_tol`).
    pub fn run_simulation(
        &self,
        x0: &DVector<f64>,
        steps: usize,
        constraint_tol: f64,
    ) -> Result<SimulationResult> {
        let mut states = self.initial_states(x0)?;
        let mut plant = PlantState {
            x: x0.clone(),
            t: 0,
        };
        let mut logs = Vec::with_capacity(steps);
        let mut violations = Vec::new();
        for _ in 0..steps {
            let (_, next_plant, next_states, log) = self.run_round(&plant, &states)?;
            for rec in &log.records {
                if rec.state_margin < -constraint_tol {
                    violations.push(Violation {
                        round: log.round,
                        subsystem: rec.id,
                        what: "state constraint".into(),
                        margin: rec.state_margin,
                    });
                }
                if rec.input_margin < -constraint_tol {
                    violations.push(Violation {
                        round: log.round,
                        subsystem: rec.id,
                        what: "input constraint".into(),
                        margin: rec.input_margin,
                    });
                }
            }
            if let Some(v) = violations.first() {
                if v.round == log.round {
                    log::warn!(
                        "round {}: {} of subsystem {} violated by {:e}",
                        v.round,
                        v.what,
                        v.subsystem,
                        -v.margin
                    );
                }
            }
            logs.push(log);
            plant = next_plant;
            states = next_states;
        }
        Ok(SimulationResult {
            logs,
            final_plant: plant,
            final_states: states,
            violations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AxisBox;
    use crate::model::{Coupling, SubsystemModel};
    use crate::rci::{design_scalings, RciWeights};

    fn chain(coupling: f64) -> System {
        let mk = |id: usize, other: usize| {
            let mut c = BTreeMap::new();
            c.insert(
                other,
                Coupling {
                    a: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, coupling, 0.0]),
                    b: DMatrix::zeros(2, 1),
                },
            );
            SubsystemModel::new(
                id,
                DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
                DMatrix::from_column_slice(2, 1, &[0.005, 0.1]),
                c,
                AxisBox::symmetric(&[2.0, 2.0]).unwrap(),
                AxisBox::symmetric(&[4.0]).unwrap(),
                DMatrix::identity(2, 2),
                DMatrix::identity(1, 1),
            )
            .unwrap()
        };
        System::new(vec![mk(0, 1), mk(1, 0)]).unwrap()
    }

    fn settings() -> SolverSettings {
        SolverSettings {
            tol: 1e-9,
            ..SolverSettings::default()
        }
    }

    fn nested(coupling: f64) -> NestedSystem {
        let sys = chain(coupling);
        let d = design_scalings(&sys, 4, RciWeights::default(), &settings()).unwrap();
        NestedSystem::new(sys, &d, Horizons::new(8, 9).unwrap(), settings()).unwrap()
    }

    #[test]
    fn bus_follows_the_graph() {
        let sys = chain(0.01);
        let mut bus = MessageBus::new(&sys).unwrap();
        bus.deliver(&Message {
            sender: 0,
            round: 0,
            x_seq: vec![],
            u_seq: vec![],
        });
        assert_eq!(bus.collect(1).len(), 1);
        assert!(bus.collect(0).is_empty());
        assert!(bus.collect(1).is_empty());
        let none = MessageBus::new(&sys.decoupled()).unwrap();
        assert!(none.peers(0).is_empty());
    }

    #[test]
    fn origin_stays_at_rest() {
        let ns = nested(0.01);
        let r = ns.run_simulation(&DVector::zeros(4), 5, 1e-9).unwrap();
        assert!(r.passed());
        for log in &r.logs {
            assert_eq!(log.u, DVector::zeros(2));
            assert_eq!(log.x, DVector::zeros(4));
        }
    }

    #[test]
    fn symmetric_chain_has_identical_constants() {
        let sys = chain(0.01);
        let d = design_scalings(&sys, 4, RciWeights::default(), &settings()).unwrap();
        assert_eq!(d[0].scalings, d[1].scalings);
    }

    #[test]
    fn coupled_chain_converges() {
        let ns = nested(0.05);
        let x0 = DVector::from_column_slice(&[0.15, 0.0, -0.12, 0.06]);
        let r = ns.run_simulation(&x0, 60, 1e-9).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert!(r.final_plant.x.amax() < 1e-3, "{}", r.final_plant.x);
        assert!(r.logs.iter().all(|l| l.records.iter().all(|s| !s.selection_relaxed)));
    }

    #[test]
    fn errors_carry_round_and_subsystem() {
        let ns = nested(0.01);
        let far = DVector::from_column_slice(&[1.99, 1.9, 0.0, 0.0]);
        match ns.run_simulation(&far, 3, 1e-9) {
            Err(Error::Round { round: 0, subsystem: 0, source }) => {
                assert!(matches!(*source, Error::MainInfeasible(0)))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
