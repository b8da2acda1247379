//! Harness for measuring how intrinsic judge biases (position, verbosity,
//! bandwagon, chain-of-thought) manifest in single-judge, multi-agent-debate,
//! and meta-judge evaluation pipelines. Perturbed prompts run against live or
//! scripted agents, every call lands in a replayable manifest, and the
//! metrics and statistics layers are pure functions of that manifest.

pub mod agents;
pub mod bias;
pub mod cli;
pub mod config;
pub mod core;
pub mod dataset;
pub mod manifest;
pub mod metrics;
pub mod orchestrate;
pub mod parse;
pub mod report;
pub mod runner;
pub mod seeding;
pub mod stats;

pub use crate::core::{
    canonicalize, derive_verdict, BiasKind, BiasVariant, CanonicalVerdict, ComparisonTask,
    Judgment, Perm, Presentation, SolutionId, Verdict,
};
