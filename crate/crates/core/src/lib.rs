//! Scenario-driven portfolio tail-risk laboratory.
//!
//! The pipeline turns structured macroeconomic stress scenarios (generated by
//! a language model or replayed from frozen fixtures) into portfolio tail-risk
//! metrics through a three-channel factor mapping, then grounds those numbers
//! against historical and econometric baselines with full reproducibility
//! hashing along the way.

pub mod baselines;
pub mod diagnostics;
pub mod factor;
pub mod ingest;
pub mod llm;
pub mod model;
pub mod plausibility;
pub mod provenance;
pub mod retrieval;
pub mod risk;
pub mod stats;

pub use model::{
    canonical_json_bytes, load_config, validate_scenario, ChannelParams, ConfigError, DateWindow,
    FieldViolation, MacroShock, Portfolio, RegimeLabel, RunConfig, Scenario, Windows,
};
pub use provenance::{hash_artifact, sha256_hex, verify_replay, ReplayReport, RunManifest};

// Linear-algebra types appear in public signatures; re-export the crate so
// downstream users never need a separately versioned direct dependency.
pub use nalgebra;
