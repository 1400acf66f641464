mod common;

use common::gradcheck::{layers, run_suite};

#[test]
fn every_layer_matches_finite_differences() {
    for (name, err) in run_suite(20, 11) {
        assert!(err < 1e-5, "{name}: relative error {err:e}");
    }
}

#[test]
fn suite_covers_each_layer_once() {
    let names: Vec<_> = layers().iter().map(|l| l.name).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert!(names.len() >= 20);
}
