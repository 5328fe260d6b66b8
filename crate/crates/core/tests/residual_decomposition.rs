use proptest::prelude::*;

use asyncdetect::problems::build_linear;
use asyncdetect::{evaluate_local_residual, reduce_residual, true_global_residual, GlobalView, Norm, ResidualSpec};

fn norm_strategy() -> impl Strategy<Value = Norm> {
    prop_oneof![Just(Norm::Max), Just(Norm::Lq(1.0)), Just(Norm::L2), (1.0f64..4.0).prop_map(Norm::Lq)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn global_residual_is_reduction_of_locals(
        seed in 0u64..200,
        p in 1usize..6,
        extra in 0usize..4,
        norm in norm_strategy(),
        values in prop::collection::vec(-10.0f64..10.0, 30),
    ) {
        let n = p * (1 + extra) + extra;
        let lin = build_linear(n, p, 0.5, seed).unwrap();
        let problem = lin.problem(p).unwrap();
        let spec = ResidualSpec::new(norm);
        let view = GlobalView::unstamped(values[..n].to_vec(), p);
        let locals: Vec<f64> =
            (0..p).map(|i| evaluate_local_residual(&problem, &spec, i, &view).unwrap()).collect();
        let reduced = reduce_residual(&spec, &locals).unwrap();
        let global = true_global_residual(&problem, &spec, &view).unwrap();
        match norm {
            Norm::Max => prop_assert_eq!(reduced, global),
            _ => prop_assert!((reduced - global).abs() <= 1e-12 * global.max(1e-300), "{} vs {}", reduced, global),
        }
    }

    #[test]
    fn reduction_is_order_free_for_max(locals in prop::collection::vec(0.0f64..1e3, 1..10)) {
        let spec = ResidualSpec::max();
        let mut rev = locals.clone();
        rev.reverse();
        prop_assert_eq!(reduce_residual(&spec, &locals).unwrap(), reduce_residual(&spec, &rev).unwrap());
    }
}

#[test]
fn l2_takes_root_once() {
    assert_eq!(reduce_residual(&ResidualSpec::l2(), &[9.0, 16.0]).unwrap(), 5.0);
    assert_eq!(reduce_residual(&ResidualSpec::max(), &[3.0, 4.0]).unwrap(), 4.0);
}

#[test]
fn negative_local_is_rejected() {
    assert!(reduce_residual(&ResidualSpec::l2(), &[1.0, -0.5]).is_err());
    assert!(reduce_residual(&ResidualSpec::max(), &[f64::NAN]).is_err());
}
