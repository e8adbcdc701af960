//! Four trucks joined by springs and dampers.

use crate::config::{
    Config, CouplingConfig, HorizonConfig, RciConfig, SimConfig, SubsystemConfig, TimeDomain,
    Tolerances,
};

/// Truck masses in kg.
pub const MASSES: [f64; 4] = [3.0, 2.0, 3.0, 6.0];

/// `(i, j, stiffness, damping)` for each connected pair.
pub const LINKS: [(usize, usize, f64, f64); 3] = [(0, 1, 0.5, 0.2), (1, 2, 0.75, 0.25), (2, 3, 1.0, 0.3)];

/// Gain of the force input on the velocity.
pub const INPUT_GAIN: f64 = 100.0;

pub const INITIAL_STATES: [[f64; 2]; 4] = [[1.8, -2.0], [0.5, 5.0], [-0.9, -5.0], [-1.8, 2.0]];

/// The four-truck configuration: continuous dynamics per truck (state
/// `(r, v)`) with `ṙ = v`, `m v̇ = Σ −k (r − r_j) − h (v − v_j) + 100 u`,
/// held at 0.1 s.
pub fn truck_benchmark() -> Config {
    let mut subsystems = Vec::with_capacity(4);
    let mut couplings = Vec::new();
    for (i, &m) in MASSES.iter().enumerate() {
        let (mut k_sum, mut h_sum) = (0.0, 0.0);
        for &(p, q, k, h) in &LINKS {
            if p == i || q == i {
                k_sum += k;
                h_sum += h;
                let j = if p == i { q } else { p };
                couplings.push(CouplingConfig {
                    to: i,
                    from: j,
                    a: Some(vec![vec![0.0, 0.0], vec![k / m, h / m]]),
                    b: None,
                });
            }
        }
        subsystems.push(SubsystemConfig {
            a: vec![vec![0.0, 1.0], vec![-k_sum / m, -h_sum / m]],
            b: vec![vec![0.0], vec![INPUT_GAIN]],
            x_max: vec![2.0, 8.0],
            x_min: None,
            u_max: vec![if i == 3 { 6.0 } else { 4.0 }],
            u_min: None,
            q_diag: vec![1.0, 1.0],
            r_diag: vec![1.0],
        });
    }
    couplings.sort_by_key(|c| (c.to, c.from));
    Config {
        time_domain: TimeDomain::Continuous,
        ts: Some(0.1),
        horizons: HorizonConfig { n: 25, h: 26 },
        rci: RciConfig {
            h: 10,
            q_eta: 1.0,
            q_theta: 1.0,
        },
        sim: SimConfig {
            steps: 300,
            initial_states: INITIAL_STATES.iter().map(|x| x.to_vec()).collect(),
        },
        tolerances: Tolerances::default(),
        seed: 7,
        subsystems,
        couplings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_is_valid() {
        let cfg = truck_benchmark();
        cfg.validate().unwrap();
        assert_eq!(cfg.couplings.len(), 6);
        assert_eq!(cfg.initial_state().len(), 8);
    }

    #[test]
    fn middle_truck_feels_both_links() {
        let cfg = truck_benchmark();
        let a = &cfg.subsystems[1].a;
        assert_eq!(a[1], vec![-(0.5 + 0.75) / 2.0, -(0.2 + 0.25) / 2.0]);
    }

    #[test]
    fn hold_couples_every_pair() {
        let sys = truck_benchmark().system().unwrap();
        for s in sys.subsystems() {
            assert_eq!(s.neighbours().len(), 3, "truck {}", s.id);
        }
    }
}
