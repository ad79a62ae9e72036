mod common;

use common::{clf_gradient_error, lm_gradient_error};
use ulmfit::model::{ArchConfig, DropoutConfig};

#[test]
fn lm_single_layer_matches_finite_differences() {
    let (err, name) = lm_gradient_error(ArchConfig::custom(11, 4, 6, 1), DropoutConfig::none(), 1);
    assert!(err < 1e-4, "{name}: {err:e}");
}

#[test]
fn lm_two_layers_matches_finite_differences() {
    let (err, name) = lm_gradient_error(ArchConfig::custom(11, 4, 6, 2), DropoutConfig::none(), 2);
    assert!(err < 1e-4, "{name}: {err:e}");
}

#[test]
fn lm_with_fixed_dropout_masks_matches_finite_differences() {
    let (err, name) = lm_gradient_error(ArchConfig::custom(11, 4, 6, 2), DropoutConfig::with_multiplier(1.0), 3);
    assert!(err < 1e-4, "{name}: {err:e}");
}

#[test]
fn classifier_matches_finite_differences() {
    let (err, name) = clf_gradient_error(ArchConfig::custom(11, 4, 6, 2), DropoutConfig::none(), 4);
    assert!(err < 1e-4, "{name}: {err:e}");
}

#[test]
fn classifier_with_fixed_dropout_masks_matches_finite_differences() {
    let (err, name) = clf_gradient_error(ArchConfig::custom(11, 4, 6, 3), DropoutConfig::with_multiplier(1.0), 5);
    assert!(err < 1e-4, "{name}: {err:e}");
}
