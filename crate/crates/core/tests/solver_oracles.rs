mod support;

use nalgebra::{DMatrix, DVector};
use nedmpc_core::opt::{solve_lp, solve_qp, QpProblem, SolverSettings, Status};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::oracles::{active_set_qp, random_lp, random_qp, vertex_enumeration_lp, Instance};

fn to_problem(inst: &Instance) -> QpProblem {
    QpProblem::new(
        inst.p.clone(),
        inst.q.clone(),
        inst.a.clone(),
        inst.b.clone(),
        inst.g.clone(),
        inst.h.clone(),
    )
    .unwrap()
}

#[test]
fn random_qps_match_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let settings = SolverSettings::default();
    for case in 0..100 {
        let inst = random_qp(&mut rng);
        let (z_ref, obj_ref) = active_set_qp(&inst).expect("oracle found no KKT point");
        let prob = to_problem(&inst);
        let sol = solve_qp(&prob, &settings).unwrap();
        assert_eq!(sol.status, Status::Optimal, "case {case}");
        assert!(prob.kkt_residuals(&sol.z, &sol.y, &sol.mu).max() <= 1e-7);
        assert!((sol.objective - obj_ref).abs() <= 1e-6, "case {case}");
        assert!((&sol.z - &z_ref).amax() <= 1e-6, "case {case}");
    }
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let settings = SolverSettings::default();
    for case in 0..100 {
        let inst = random_lp(&mut rng);
        let (_, obj_ref) = vertex_enumeration_lp(&inst).expect("oracle found no vertex");
        let sol = solve_lp(&inst.q, &inst.a, &inst.b, &inst.g, &inst.h, &settings).unwrap();
        assert_eq!(sol.status, Status::Optimal, "case {case}");
        let prob = to_problem(&inst);
        assert!(prob.kkt_residuals(&sol.z, &sol.y, &sol.mu).max() <= 1e-7);
        assert!((sol.objective - obj_ref).abs() <= 1e-6, "case {case}: {} vs {obj_ref}", sol.objective);
    }
}

#[test]
fn least_norm_matches_direct_kkt_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let inst = random_qp(&mut rng);
        let n = inst.q.len();
        if inst.a.nrows() == 0 {
            continue;
        }
        let p = inst.a.nrows();
        // min ‖z‖² s.t. Az = b via [2I A'; A 0]
        let mut kkt = DMatrix::zeros(n + p, n + p);
        kkt.view_mut((0, 0), (n, n)).fill_diagonal(2.0);
        kkt.view_mut((0, n), (n, p)).copy_from(&inst.a.transpose());
        kkt.view_mut((n, 0), (p, n)).copy_from(&inst.a);
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(n, p).copy_from(&inst.b);
        let direct = kkt.lu().solve(&rhs).unwrap().rows(0, n).into_owned();

        let prob = QpProblem::new(
            DMatrix::identity(n, n) * 2.0,
            DVector::zeros(n),
            inst.a.clone(),
            inst.b.clone(),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&prob, &SolverSettings::default()).unwrap();
        assert!(sol.is_optimal());
        assert!((&sol.z - &direct).amax() <= 1e-6);
    }
}

#[test]
fn objective_never_exceeds_feasibility_witness() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let settings = SolverSettings::default();
    for _ in 0..30 {
        let inst = random_qp(&mut rng);
        let prob = to_problem(&inst);
        let sol = solve_qp(&prob, &settings).unwrap();
        let feas = nedmpc_core::opt::check_feasible(&inst.a, &inst.b, &inst.g, &inst.h, &settings)
            .unwrap();
        assert!(feas.feasible);
        assert!(sol.objective <= prob.objective(&feas.witness) + 1e-6);
    }
}

#[test]
fn solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inst = random_qp(&mut rng);
    let prob = to_problem(&inst);
    let a = solve_qp(&prob, &SolverSettings::default()).unwrap();
    let b = solve_qp(&prob, &SolverSettings::default()).unwrap();
    assert_eq!(a, b);
}
