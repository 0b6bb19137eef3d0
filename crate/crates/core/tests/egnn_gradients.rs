mod common;

use common::gradient_check;
use tactile_core::egnn::Pooling;

#[test]
fn backward_matches_central_differences_max_pooling() {
    for seed in 0..3 {
        let worst = gradient_check(Pooling::Max, seed);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
    }
}

#[test]
fn backward_matches_central_differences_mean_pooling() {
    for seed in 10..13 {
        let worst = gradient_check(Pooling::Mean, seed);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
    }
}
