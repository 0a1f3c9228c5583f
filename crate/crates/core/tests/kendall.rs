mod common;

use common::brute_tau_b;
use proptest::prelude::*;
use tvt_core::eval::kendall_tau;
use tvt_core::Error;

/// Values drawn from a small alphabet so ties are common.
fn tied_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=50, 1u32..=8).prop_flat_map(|(n, k)| {
        let v = prop::collection::vec((0..k).prop_map(f64::from), n);
        (v.clone(), v)
    })
}

fn untied_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=50).prop_flat_map(|n| {
        let p = Just((0..n).map(|i| i as f64).collect::<Vec<_>>()).prop_shuffle();
        (p.clone(), p)
    })
}

#[test]
fn scipy_style_reference_values() {
    // x=[1,2,3,4,5], y=[3,1,2,5,4]: P=7, Q=3 -> 0.4
    let t = kendall_tau(&[1., 2., 3., 4., 5.], &[3., 1., 2., 5., 4.]).unwrap();
    assert!((t - 0.4).abs() < 1e-12);
}

#[test]
fn constant_inputs_are_degenerate() {
    assert!(matches!(kendall_tau(&[1., 2.], &[4., 4.]), Err(Error::DegenerateTau(_))));
    assert!(matches!(kendall_tau(&[1., f64::NAN], &[1., 2.]), Err(Error::DegenerateTau(_))));
}

proptest! {
    #[test]
    fn matches_pair_counting_with_ties((x, y) in tied_pairs()) {
        match brute_tau_b(&x, &y) {
            Some(want) => prop_assert_eq!(kendall_tau(&x, &y).unwrap(), want),
            None => prop_assert!(kendall_tau(&x, &y).is_err()),
        }
    }

    #[test]
    fn matches_pair_counting_without_ties((x, y) in untied_pairs()) {
        prop_assert_eq!(kendall_tau(&x, &y).unwrap(), brute_tau_b(&x, &y).unwrap());
    }

    #[test]
    fn symmetric_and_bounded((x, y) in tied_pairs()) {
        if let Ok(t) = kendall_tau(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&t));
            prop_assert_eq!(t, kendall_tau(&y, &x).unwrap());
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert_eq!(-t, kendall_tau(&x, &neg).unwrap());
        }
    }
}
