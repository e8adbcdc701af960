use nalgebra::{DMatrix, DVector};
use nedmpc_core::geometry::{AxisBox, ConvexSet};
use nedmpc_core::model::discretize_zoh;
use nedmpc_core::opt::SolverSettings;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), 1..=max)
}

fn set(dim: usize, pts: Vec<Vec<f64>>) -> ConvexSet {
    ConvexSet::new(dim, pts.into_iter().map(DVector::from_vec).collect()).unwrap()
}

proptest! {
    #[test]
    fn support_of_a_minkowski_sum_is_the_sum_of_supports(
        a in points(3, 6),
        b in points(3, 6),
        d in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let (a, b, d) = (set(3, a), set(3, b), DVector::from_vec(d));
        let sum = a.minkowski_sum(&b).unwrap();
        let lhs = sum.support(&d);
        let rhs = a.support(&d) + b.support(&d);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn support_is_positively_homogeneous(
        a in points(2, 8),
        d in prop::collection::vec(-2.0..2.0f64, 2),
        t in 0.0..=1.0f64,
    ) {
        let (a, d) = (set(2, a), DVector::from_vec(d));
        let lhs = a.scale(t).unwrap().support(&d);
        let rhs = t * a.support(&d);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        let scaled_dir = a.support(&(&d * t));
        prop_assert!((scaled_dir - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn double_integrator_zoh_matches_the_closed_form(ts in 1e-3..2.0f64) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = discretize_zoh(&a, &b, ts).unwrap();
        let ad_ref = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
        let bd_ref = DMatrix::from_row_slice(2, 1, &[ts * ts / 2.0, ts]);
        prop_assert!((ad - ad_ref).amax() <= 1e-12);
        prop_assert!((bd - bd_ref).amax() <= 1e-12);
    }
}

#[test]
fn box_membership_agrees_with_the_hull_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let settings = SolverSettings::default();
    for trial in 0..4 {
        let dim = 2 + trial % 2;
        let lo = DVector::from_fn(dim, |_, _| -rng.gen_range(0.1..3.0));
        let hi = DVector::from_fn(dim, |_, _| rng.gen_range(0.1..3.0));
        let bx = AxisBox::new(lo.clone(), hi.clone()).unwrap();
        let hull = bx.to_set();
        let mut checked = 0;
        while checked < 250 {
            let p = DVector::from_fn(dim, |k, _| rng.gen_range(1.3 * lo[k]..1.3 * hi[k]));
            // Points within 1e-6 of a facet are left out: the hull test is
            // an LP answer, exact only up to its tolerance.
            if bx.margin(&p).abs() < 1e-6 {
                continue;
            }
            let by_box = bx.contains(&p, 0.0);
            let by_hull = hull.contains_point(&p, 1e-9, &settings).unwrap();
            assert_eq!(by_box, by_hull, "trial {trial}, point {p}");
            checked += 1;
        }
    }
}
