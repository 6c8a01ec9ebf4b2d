//! Analytic gradients vs central finite differences on the scaled-down net.

use proptest::prelude::*;
use xlab_core::nn::gradcheck::{gradient_check, GradCheck};

#[test]
fn f64_gradients_match_to_1e5() {
    let GradCheck { worst, checked, .. } = gradient_check::<f64>(1, 1e-5, 100);
    assert_eq!(checked, 100);
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn f32_gradients_match_to_1e2() {
    let GradCheck { worst, checked, .. } = gradient_check::<f32>(2, 1e-3, 100);
    assert_eq!(checked, 100);
    assert!(worst <= 1e-2, "worst relative error {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradients_match_for_random_models(seed in any::<u64>()) {
        let GradCheck { worst, checked, skipped } = gradient_check::<f32>(seed, 1e-3, 100);
        prop_assert_eq!(checked, 100);
        prop_assert!(skipped < 50, "seed {} skipped {}", seed, skipped);
        prop_assert!(worst <= 1e-2, "seed {} worst {:e}", seed, worst);
    }
}
