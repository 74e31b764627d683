//! Training loop, experiment harness, file formats and self-test suites
//! for the probabilistic-subgoal HRL library.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod selftest;
pub mod svg;
pub mod trainer;
