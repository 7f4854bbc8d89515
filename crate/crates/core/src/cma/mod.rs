// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal mediation over per-head residual contributions.
//!
//! Every score is a difference of probabilities of the pair's clean target
//! at the last prompt position. [`aie`] patches clean-run head outputs into
//! the corrupted run; [`path_patch`] perturbs an upstream head in the clean
//! run, harvests a downstream head's resulting output, and patches only that.
//!
//! Path patching here does not freeze the components between the two heads:
//! pass 1 lets the perturbation flow through everything and only the
//! receiver's output is harvested. Stricter variants in the literature hold
//! intermediate heads at their clean values.

mod ablation;
mod circuit;
mod patching;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counterfactual::{CorruptionType, StructureError};
use crate::protocol::{HeadId, ProtocolError};

pub use ablation::{ablate_eval, role_heads, AblationConfig, AblationMetrics, AblationName, MetricRow, RunMetrics};
pub use circuit::{assemble_circuit, circuit_network, CircuitEdge, CircuitGraph, CircuitNode};
pub use patching::{aie, aie_per_pair, path_patch, path_patch_unchecked, path_scores, PairDeltas, PathEdgeScore};

/// What a group of heads is taken to do, named after the corruption and
/// patch position that localizes it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum HeadRole {
    ReadFact,
    SelectPremise,
    ReadRuleCondition,
    MatchRuleCondition,
    ReadRule,
    SelectRule,
    ReadTraversalAlg,
    ImplementTraversalAlg,
}

impl HeadRole {
    pub const ALL: [HeadRole; 8] = [
        HeadRole::ReadFact,
        HeadRole::SelectPremise,
        HeadRole::ReadRuleCondition,
        HeadRole::MatchRuleCondition,
        HeadRole::ReadRule,
        HeadRole::SelectRule,
        HeadRole::ReadTraversalAlg,
        HeadRole::ImplementTraversalAlg,
    ];

    /// `(reading role, decision role)` for a corruption type.
    pub fn for_kind(kind: CorruptionType) -> (HeadRole, HeadRole) {
        match kind {
            CorruptionType::C1 => (HeadRole::ReadFact, HeadRole::SelectPremise),
            CorruptionType::C2 => (HeadRole::ReadRuleCondition, HeadRole::MatchRuleCondition),
            CorruptionType::C3 => (HeadRole::ReadRule, HeadRole::SelectRule),
            CorruptionType::C4 => (HeadRole::ReadTraversalAlg, HeadRole::ImplementTraversalAlg),
        }
    }

    pub fn kind(self) -> CorruptionType {
        *CorruptionType::ALL.iter().find(|&&k| {
            let (a, b) = HeadRole::for_kind(k);
            a == self || b == self
        }).expect("every role belongs to a kind")
    }

    /// Reading roles are located at the causal span, decision roles at the
    /// token before the component.
    pub fn mode(self) -> PositionMode {
        if HeadRole::for_kind(self.kind()).0 == self {
            PositionMode::CausalSpan
        } else {
            PositionMode::PrecedingToken
        }
    }

    pub fn from_kind_mode(kind: CorruptionType, mode: PositionMode) -> HeadRole {
        let (read, decide) = HeadRole::for_kind(kind);
        match mode {
            PositionMode::CausalSpan => read,
            PositionMode::PrecedingToken => decide,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadRole::ReadFact => "ReadFact",
            HeadRole::SelectPremise => "SelectPremise",
            HeadRole::ReadRuleCondition => "ReadRuleCondition",
            HeadRole::MatchRuleCondition => "MatchRuleCondition",
            HeadRole::ReadRule => "ReadRule",
            HeadRole::SelectRule => "SelectRule",
            HeadRole::ReadTraversalAlg => "ReadTraversalAlg",
            HeadRole::ImplementTraversalAlg => "ImplementTraversalAlg",
        }
    }
}

impl fmt::Display for HeadRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        HeadRole::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown head role {s:?}"))
    }
}

/// Which token positions are patched.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    CausalSpan,
    PrecedingToken,
}

impl FromStr for PositionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "causal_span" => Ok(PositionMode::CausalSpan),
            "preceding_token" => Ok(PositionMode::PrecedingToken),
            _ => Err(format!("unknown position mode {s:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CmaError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("pair {id} is invalid: {source}")]
    InvalidPair { id: String, source: StructureError },
    #[error("emit {emit} must sit in an earlier layer than rec {rec}")]
    LayerOrder { emit: HeadId, rec: HeadId },
    #[error("no heads for role {0}")]
    MissingRole(HeadRole),
    #[error("{0}")]
    Config(String),
}

/// Mean probability delta per head for one role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AIEMatrix {
    pub model_id: String,
    pub role: HeadRole,
    #[serde(rename = "L")]
    pub n_layers: usize,
    #[serde(rename = "J")]
    pub n_heads: usize,
    /// `scores[layer][head]`.
    pub scores: Vec<Vec<f64>>,
    pub n_pairs: usize,
    /// Pairs dropped because their spans did not align to tokens.
    pub skipped: usize,
}

impl AIEMatrix {
    pub fn score(&self, h: HeadId) -> f64 {
        self.scores[h.layer][h.head]
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        let j = self.n_heads;
        (0..self.n_layers * j).map(move |i| HeadId::new(i / j, i % j))
    }
}

/// The `k` highest-scoring heads, ties by `(layer, head)` ascending.
pub fn select_top_heads(matrix: &AIEMatrix, k: usize) -> Vec<HeadId> {
    let mut heads: Vec<HeadId> = matrix.heads().collect();
    heads.sort_by(|a, b| matrix.score(*b).total_cmp(&matrix.score(*a)).then(a.cmp(b)));
    heads.truncate(k);
    heads
}

/// `ceil(pct * n)`, ignoring float noise in the product (0.15 * 20 is
/// slightly above 3 in binary).
pub fn top_count(n: usize, pct: f64) -> usize {
    let x = pct * n as f64;
    let r = x.round();
    let c = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (c as usize).clamp(1, n.max(1))
}

/// Per layer, the mean of its `ceil(pct * J)` largest scores.
pub fn layer_role_score(matrix: &AIEMatrix, pct: f64) -> Vec<f64> {
    assert!(pct > 0.0 && pct <= 1.0, "pct must be in (0, 1]");
    let m = top_count(matrix.n_heads, pct);
    matrix
        .scores
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(|a, b| b.total_cmp(a));
            r[..m].iter().sum::<f64>() / m as f64
        })
        .collect()
}
