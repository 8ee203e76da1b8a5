use proptest::prelude::*;
use relgraph_core::checks::normalization_audit;
use relgraph_core::numerics::softmax;

#[test]
fn attention_distributions_over_1000_scenes() {
    let a = normalization_audit(1000, 11).unwrap();
    assert_eq!(a.instances, 1000);
    assert!(a.distributions > 10_000, "only {} distributions", a.distributions);
    assert!(a.max_sum_error < 1e-12, "max |sum - 1| = {:e}", a.max_sum_error);
    assert_eq!(a.masked_nonzero, 0);
}

proptest! {
    #[test]
    fn masked_softmax_is_a_distribution(
        v in prop::collection::vec(-700.0f64..700.0, 1..24),
        bits in prop::collection::vec(any::<bool>(), 24),
    ) {
        let mut mask: Vec<bool> = bits[..v.len()].to_vec();
        mask[0] = true;
        let p = softmax(&v, Some(&mask)).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for (x, m) in p.iter().zip(&mask) {
            prop_assert!(x.is_finite() && *x >= 0.0);
            if !m {
                prop_assert_eq!(*x, 0.0);
            }
        }
    }
}
