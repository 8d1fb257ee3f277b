//! Canonical demonstration models used throughout the tests and docs.

use crate::model::{EmissionSpec, HmmModel, InitialSpec, ModelSpec};

/// Two sticky states with informative but overlapping binary emissions.
/// Stationary law (2/3, 1/3).
pub fn sticky_two_state() -> HmmModel {
    HmmModel::from_spec(ModelSpec {
        states: 2,
        transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        initial: InitialSpec::Tag("stationary".into()),
        emission: EmissionSpec::Categorical { probs: vec![vec![0.8, 0.2], vec![0.3, 0.7]] },
    })
    .expect("preset is valid")
}

/// Uniform two-state chain whose emissions reveal the state exactly
/// (`f_s(x) = 1{x = s}`). Every decoder recovers the truth, so all risks
/// vanish identically; useful as a zero point.
pub fn identity_two_state() -> HmmModel {
    HmmModel::from_spec(ModelSpec {
        states: 2,
        transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        initial: InitialSpec::Explicit(vec![0.5, 0.5]),
        emission: EmissionSpec::Categorical { probs: vec![vec![1.0, 0.0], vec![0.0, 1.0]] },
    })
    .expect("preset is valid")
}

/// Two well-separated unit-variance Gaussian states; handy for exercising the
/// continuous-observation paths.
pub fn gaussian_two_state() -> HmmModel {
    HmmModel::from_spec(ModelSpec {
        states: 2,
        transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        initial: InitialSpec::Tag("stationary".into()),
        emission: EmissionSpec::Gaussian { means: vec![0.0, 3.0], stds: vec![1.0, 1.0] },
    })
    .expect("preset is valid")
}
