// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{select_top_heads, AIEMatrix, CmaError, HeadRole};
use crate::eval::{final_answer_accuracy, inference_step_accuracy};
use crate::promptgen::{DatasetRecord, SEPARATOR};
use crate::protocol::{GenerateRequest, HeadId, ModelBackend};
use crate::seeding::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationName {
    Baseline,
    Rand,
    Rs,
    Ps,
    Pst,
    ThreeRoles,
}

impl AblationName {
    pub const ALL: [AblationName; 6] =
        [AblationName::Baseline, AblationName::Rand, AblationName::Rs, AblationName::Ps, AblationName::Pst, AblationName::ThreeRoles];

    pub fn name(self) -> &'static str {
        match self {
            AblationName::Baseline => "baseline",
            AblationName::Rand => "rand",
            AblationName::Rs => "rs",
            AblationName::Ps => "ps",
            AblationName::Pst => "pst",
            AblationName::ThreeRoles => "three_roles",
        }
    }

    /// Roles whose top heads are knocked out.
    pub fn roles(self) -> &'static [HeadRole] {
        use HeadRole::*;
        match self {
            AblationName::Baseline | AblationName::Rand => &[],
            AblationName::Rs => &[ReadRule, SelectRule],
            AblationName::Ps => &[ReadFact, SelectPremise],
            AblationName::Pst => &[ReadRuleCondition, MatchRuleCondition],
            AblationName::ThreeRoles => &[ReadRule, SelectRule, ReadFact, SelectPremise, ReadRuleCondition, MatchRuleCondition],
        }
    }
}

impl fmt::Display for AblationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "3roles" => Ok(AblationName::ThreeRoles),
            _ => AblationName::ALL.into_iter().find(|n| n.name() == s).ok_or_else(|| format!("unknown ablation config {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: AblationName,
    pub top_k: usize,
    pub rand_fraction: f64,
    pub rand_runs: usize,
    pub seed: u64,
}

impl AblationConfig {
    pub fn new(name: AblationName) -> Self {
        AblationConfig { name, top_k: 5, rand_fraction: 0.03, rand_runs: 3, seed: 0 }
    }

    /// Heads to zero, one set per run. Role configs give a single run; the
    /// random config draws `rand_runs` sets of `round(fraction * L * J)`
    /// heads (at least one), uniformly and without replacement.
    pub fn head_sets(&self, role_heads: &BTreeMap<HeadRole, Vec<HeadId>>, n_layers: usize, n_heads: usize) -> Result<Vec<Vec<HeadId>>, CmaError> {
        let total = n_layers * n_heads;
        match self.name {
            AblationName::Baseline => Ok(vec![Vec::new()]),
            AblationName::Rand => {
                if !(self.rand_fraction > 0.0 && self.rand_fraction <= 1.0) || self.rand_runs == 0 {
                    return Err(CmaError::Config(format!("bad random ablation {} x {}", self.rand_fraction, self.rand_runs)));
                }
                let count = ((self.rand_fraction * total as f64).round() as usize).clamp(1, total);
                Ok((0..self.rand_runs)
                    .map(|run| {
                        let mut rng = rng_from_seed(derive_seed(self.seed, run as u64));
                        let mut heads: Vec<HeadId> =
                            sample(&mut rng, total, count).into_iter().map(|i| HeadId::new(i / n_heads, i % n_heads)).collect();
                        heads.sort();
                        heads
                    })
                    .collect())
            }
            name => {
                let mut heads = Vec::new();
                for role in name.roles() {
                    let ranked = role_heads.get(role).ok_or(CmaError::MissingRole(*role))?;
                    heads.extend(ranked.iter().take(self.top_k).copied());
                }
                heads.sort();
                heads.dedup();
                Ok(vec![heads])
            }
        }
    }
}

/// Each role's heads ranked by score, `k` per role.
pub fn role_heads(matrices: &[AIEMatrix], k: usize) -> BTreeMap<HeadRole, Vec<HeadId>> {
    matrices.iter().map(|m| (m.role, select_top_heads(m, k))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub heads: Vec<HeadId>,
    pub lenient: f64,
    pub strict: f64,
    pub final_answer: Option<f64>,
    pub n: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMetrics {
    pub config: AblationConfig,
    pub dataset: String,
    pub runs: Vec<RunMetrics>,
    /// Means over runs.
    pub lenient: f64,
    pub strict: f64,
    pub final_answer: Option<f64>,
    /// Records with a model or protocol error, summed over runs.
    pub failed: usize,
    pub first_error: Option<String>,
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config: String,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

impl AblationMetrics {
    pub fn rows(&self) -> Vec<MetricRow> {
        let n = self.runs.first().map_or(0, |r| r.n);
        let heads = self.runs.iter().map(|r| r.heads.len()).sum::<usize>() as f64 / self.runs.len().max(1) as f64;
        let mut metrics = vec![("lenient_step_accuracy", self.lenient), ("strict_step_accuracy", self.strict)];
        if let Some(f) = self.final_answer {
            metrics.push(("final_answer_accuracy", f));
        }
        metrics.push(("heads_ablated", heads));
        metrics.push(("failed_records", self.failed as f64));
        metrics
            .into_iter()
            .map(|(metric, value)| MetricRow {
                config: self.config.name.to_string(),
                dataset: self.dataset.clone(),
                metric: metric.to_string(),
                value,
                n,
                seed: self.config.seed,
            })
            .collect()
    }
}

/// Token budget for one generation: the gold continuation plus half again.
pub fn generation_budget(record: &DatasetRecord) -> usize {
    let gold = record.prompt_text.len().saturating_sub(record.generation_prompt().len());
    gold + gold / 2 + 16
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Greedy generation on every record with the configured heads zeroed during
/// prefill and decoding, scored by step and answer accuracy.
pub fn ablate_eval(
    backend: &dyn ModelBackend,
    records: &[DatasetRecord],
    dataset: &str,
    config: &AblationConfig,
    role_heads: &BTreeMap<HeadRole, Vec<HeadId>>,
) -> Result<AblationMetrics, CmaError> {
    let caps = backend.capabilities()?;
    let sets = config.head_sets(role_heads, caps.n_layers, caps.n_heads)?;
    let stop = SEPARATOR.trim_end().to_string();
    let mut runs = Vec::new();
    let mut first_error = None;
    for heads in sets {
        let outcomes: Vec<Result<(f64, f64, String, &'static str), String>> = records
            .par_iter()
            .map(|r| {
                let mut req = GenerateRequest::new(r.generation_prompt(), generation_budget(r));
                req.request_id = Some(r.id.clone());
                req.ablate = heads.clone();
                req.stop = vec![stop.clone()];
                let g = backend.generate(&req).map_err(|e| format!("{}: {e}", r.id))?;
                let acc = inference_step_accuracy(&g.text, r.problem(), &r.gold_chain);
                let gold = if r.gold_chain.verdict { "True" } else { "False" };
                Ok((acc.lenient, acc.strict, g.text, gold))
            })
            .collect();
        let ok: Vec<_> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        if first_error.is_none() {
            first_error = outcomes.iter().find_map(|o| o.as_ref().err().cloned());
        }
        runs.push(RunMetrics {
            lenient: mean(ok.iter().map(|o| o.0)),
            strict: mean(ok.iter().map(|o| o.1)),
            final_answer: final_answer_accuracy(ok.iter().map(|o| (o.2.as_str(), o.3))),
            n: ok.len(),
            failed: outcomes.len() - ok.len(),
            heads,
        });
    }
    let answers: Vec<f64> = runs.iter().filter_map(|r| r.final_answer).collect();
    Ok(AblationMetrics {
        config: config.clone(),
        dataset: dataset.to_string(),
        lenient: mean(runs.iter().map(|r| r.lenient)),
        strict: mean(runs.iter().map(|r| r.strict)),
        final_answer: (!answers.is_empty()).then(|| mean(answers.iter().copied())),
        failed: runs.iter().map(|r| r.failed).sum(),
        first_error,
        runs,
    })
}
