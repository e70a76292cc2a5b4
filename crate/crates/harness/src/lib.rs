//! Adversarial scenarios, benchmarks and synthetic histories for `ppdp-core`.

pub mod bench;
pub mod scenario;
pub mod synthetic;
