use proptest::prelude::*;
use treecast_core::posterior::posterior_of_magnetization;
use treecast_core::{
    level_bound, magnetization_of, merge_magnetization, one_step_bound, ModelParams,
};

fn params() -> impl Strategy<Value = ModelParams> {
    (1usize..200, -8.0f64..2.0)
        .prop_map(|(k, lw)| ModelParams::derive_from_omega(k, lw.exp()).unwrap())
}

/// A magnetization reachable from some posterior in `[0, 1]`.
fn magnetization(p: &ModelParams) -> impl Strategy<Value = f64> {
    let lo = p.theta;
    (0.0f64..=1.0).prop_map(move |u| lo + u * (1.0 - lo))
}

proptest! {
    #[test]
    fn lambda_round_trip(k in 1usize..5000, lw in -12.0f64..1.0) {
        let a = ModelParams::derive_from_omega(k, lw.exp());
        prop_assume!(a.is_ok());
        let a = a.unwrap();
        let b = ModelParams::derive_from_lambda(k, a.lambda_internal).unwrap();
        prop_assert!((a.omega - b.omega).abs() <= 1e-10 * a.omega);
    }

    #[test]
    fn derived_quantities_consistent(p in params()) {
        prop_assert!((p.pi0 + p.pi1 - 1.0).abs() < 1e-15);
        prop_assert!((p.theta * p.pi01 + 1.0).abs() < 1e-12);
        prop_assert!((p.pi01 - 1.0 - p.delta).abs() <= 1e-12 * p.pi01);
        // stationarity of the chain
        let m = p.transition;
        prop_assert!((p.pi0 * m[0][1] + p.pi1 * m[1][1] - p.pi1).abs() < 1e-14);
    }

    #[test]
    fn lambda_increases_with_omega(k in 1usize..100, lw in -8.0f64..1.0, d in 1e-6f64..0.5) {
        let a = ModelParams::derive_from_omega(k, lw.exp()).unwrap();
        let b = ModelParams::derive_from_omega(k, lw.exp() * (1.0 + d)).unwrap();
        prop_assert!(b.lambda_internal > a.lambda_internal);
        prop_assert!(b.lambda_root > a.lambda_root);
    }

    #[test]
    fn merge_commutes_and_stays_in_range(
        (p, y, z) in params().prop_flat_map(|p| (Just(p), magnetization(&p), magnetization(&p)))
    ) {
        let yh = p.theta * z;
        let a = merge_magnetization(y, yh, &p);
        let b = merge_magnetization(yh, y, &p);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a, b);
                prop_assert!(a >= p.theta - 1e-9 && a <= 1.0 + 1e-9);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "asymmetric failure"),
        }
    }

    #[test]
    fn magnetization_round_trip(p in params(), p1 in 0.0f64..=1.0) {
        let x = magnetization_of(&p, p1).unwrap();
        let back = posterior_of_magnetization(&p, x);
        prop_assert!((back - p1).abs() < 1e-9);
    }

    #[test]
    fn bounds_are_monotone(p in params(), a in 0.0f64..1.0, b in 0.0f64..1.0, z in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(level_bound(lo, &p) <= level_bound(hi, &p));
        prop_assert!(one_step_bound(lo, z, &p) <= one_step_bound(hi, z, &p) + 1e-15);
    }
}
