// SPDX-License-Identifier: MIT OR Apache-2.0

//! # circuitlab
//!
//! Tooling for mechanistic analysis of symbolic chain-of-thought deduction.
//!
//! - [`logic`]: the deductive world (rules, facts, forward chaining, gold chains).
//! - [`promptgen`]: the k-shot prompt grammar, chain parser and role tagger.
//! - [`counterfactual`]: clean/corrupted prompt pairs for four corruption types.
//! - [`protocol`]: the model contract (capture, patch, ablate) and HTTP transport.
//! - [`toymodel`]: a small hookable decoder-only transformer.
//! - [`cma`]: activation patching, path patching, circuit networks, head ablation.
//! - [`eval`]: step/answer accuracy, uncertain-token statistics, reports.

pub mod logic;
pub mod manifest;
pub mod cma;
pub mod counterfactual;
pub mod eval;
pub mod promptgen;
pub mod protocol;
pub mod seeding;
pub mod toymodel;
pub mod verify;
