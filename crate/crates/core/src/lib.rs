//! Patch generation and verification for repository issues, built to run
//! without executing the code under change.
//!
//! The pipeline has two halves. The generation half ([`agent`],
//! [`codegraph`], [`workspace`], [`diff`]) resolves an issue by searching
//! a static code graph, applying gated string-replacement edits to a
//! scratch checkout, and emitting a unified diff. The judging half
//! ([`verifier`], [`selection`], [`metrics`], [`data`]) shows candidate
//! patches to a language model in groups, parses boxed verdicts, picks a
//! single winner in two rounds, and scores predictions against labels.
//! [`llm`] is the model boundary, with scripted and closure-backed mocks
//! so every pipeline also runs offline.

pub mod agent;
pub mod codegraph;
pub mod data;
pub mod diff;
pub mod llm;
pub mod metrics;
pub mod parallel;
pub mod python;
pub mod selection;
pub mod verifier;
pub mod workspace;
