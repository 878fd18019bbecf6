mod support;

use proptest::prelude::*;
use support::identities::{check, instance};

#[test]
fn thousand_random_instances() {
    let worst = (0..1000)
        .map(|seed| check(&instance(seed)))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12, "worst relative error {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn identities_hold(seed in any::<u64>()) {
        let err = check(&instance(seed));
        prop_assert!(err <= 1e-12, "error {err:e}");
    }
}
