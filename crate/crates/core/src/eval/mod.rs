// SPDX-License-Identifier: MIT OR Apache-2.0

//! Step and answer accuracy, uncertain-token statistics, and report files.

mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::{validate_chain, ChainStep, Problem, ReasoningChain};
use crate::promptgen::{parse_chain, Role, RoleSpan};

pub use report::{emit_report, load_artifacts, plot_rows, Artifacts, PlotRow, ReportError, ReportFormat};

/// Default probability below which a token counts as uncertain.
pub const UNCERTAIN_THRESHOLD: f64 = 0.8;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAccuracy {
    pub lenient: f64,
    pub strict: f64,
    pub generated_steps: usize,
    pub gold_steps: usize,
}

/// Scores a generated chain.
///
/// `lenient` is the fraction of parsed steps (malformed lines included) that
/// are valid against the problem and the evolving KB. `strict` counts steps
/// equal to the gold step at the same position and valid, over the longer of
/// the two chains.
pub fn inference_step_accuracy(generated: &str, problem: &Problem, gold: &ReasoningChain) -> StepAccuracy {
    let (chain, _) = parse_chain(generated, problem);
    let verdicts = validate_chain(problem, &chain);
    let matched = chain
        .steps
        .iter()
        .zip(&gold.steps)
        .zip(&verdicts.step_verdicts)
        .filter(|((g, s), &ok)| ok && matches!(g, ChainStep::Inference(_)) && g == s)
        .count();
    let denom = chain.steps.len().max(gold.steps.len());
    StepAccuracy {
        lenient: verdicts.accuracy(),
        strict: if denom == 0 { 0.0 } else { matched as f64 / denom as f64 },
        generated_steps: chain.steps.len(),
        gold_steps: gold.steps.len(),
    }
}

/// The answer token of the last `Validate(...) = X` line, if any.
pub fn extract_verdict(text: &str) -> Option<&str> {
    let line = text.lines().rev().find(|l| l.contains("Validate("))?;
    let rest = line.rsplit_once(") = ")?.1;
    let v = rest.trim().trim_end_matches('.');
    (!v.is_empty()).then_some(v)
}

/// Exact match of extracted verdicts; `None` for an empty set.
pub fn final_answer_accuracy<'a>(records: impl IntoIterator<Item = (&'a str, &'a str)>) -> Option<f64> {
    let (mut n, mut hits) = (0usize, 0usize);
    for (generated, gold) in records {
        n += 1;
        if extract_verdict(generated) == Some(gold) {
            hits += 1;
        }
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

/// One scored token of a teacher-forced pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceToken {
    pub text: String,
    pub logprob: f64,
    /// Byte range in the prompt.
    pub offset: [usize; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogprobTrace {
    pub tokens: Vec<TraceToken>,
}

impl LogprobTrace {
    /// Pairs echoed logprobs with tokenizer offsets; the first token has no
    /// logprob and is dropped.
    pub fn from_echo(text: &str, offsets: &[[usize; 2]], echo: &[Option<f64>]) -> Self {
        let tokens = offsets
            .iter()
            .zip(echo)
            .filter_map(|(o, lp)| {
                lp.map(|logprob| TraceToken { text: text.get(o[0]..o[1]).unwrap_or_default().to_string(), logprob, offset: *o })
            })
            .collect();
        LogprobTrace { tokens }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleStats {
    pub role: Role,
    pub uncertain: u64,
    pub total: u64,
    /// Counts per 0.05-wide probability bin.
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainStats {
    pub threshold: f64,
    pub last_shots: usize,
    /// One entry per role, in [`Role::ALL`] order.
    pub roles: Vec<RoleStats>,
}

impl UncertainStats {
    pub fn empty(threshold: f64, last_shots: usize) -> Self {
        let roles = Role::ALL
            .iter()
            .map(|&role| RoleStats { role, uncertain: 0, total: 0, histogram: vec![0; HISTOGRAM_BINS] })
            .collect();
        UncertainStats { threshold, last_shots, roles }
    }

    pub fn role(&self, role: Role) -> &RoleStats {
        self.roles.iter().find(|r| r.role == role).expect("every role present")
    }

    pub fn merge(&mut self, other: &UncertainStats) {
        for (a, b) in self.roles.iter_mut().zip(&other.roles) {
            a.uncertain += b.uncertain;
            a.total += b.total;
            for (x, y) in a.histogram.iter_mut().zip(&b.histogram) {
                *x += y;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("token at {offset:?} does not align with the prompt ({reason})")]
pub struct AlignmentError {
    pub offset: [usize; 2],
    pub reason: &'static str,
}

fn bin(p: f64) -> usize {
    ((p / 0.05).floor() as usize).min(HISTOGRAM_BINS - 1)
}

/// Groups tokens of the last `last_shots` shots by the role of the span
/// containing their first byte.
pub fn uncertain_token_stats(
    trace: &LogprobTrace,
    spans: &[RoleSpan],
    last_shots: usize,
    threshold: f64,
) -> Result<UncertainStats, AlignmentError> {
    let mut stats = UncertainStats::empty(threshold, last_shots);
    let n_shots = spans.iter().map(|s| s.shot_index + 1).max().unwrap_or(0);
    let first_shot = n_shots.saturating_sub(last_shots);
    let mut sorted: Vec<&RoleSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    let mut prev_end = 0;
    for t in &trace.tokens {
        let [a, b] = t.offset;
        if a >= b || a < prev_end {
            return Err(AlignmentError { offset: t.offset, reason: "offsets not increasing" });
        }
        prev_end = b;
        let i = sorted.partition_point(|s| s.end <= a);
        let Some(span) = sorted.get(i).filter(|s| s.start <= a) else {
            continue;
        };
        if span.shot_index < first_shot {
            continue;
        }
        let p = t.logprob.exp();
        let r = stats.roles.iter_mut().find(|r| r.role == span.role).expect("every role present");
        r.total += 1;
        if p < threshold {
            r.uncertain += 1;
        }
        r.histogram[bin(p)] += 1;
    }
    if let (Some(last), Some(end)) = (trace.tokens.last(), sorted.iter().map(|s| s.end).max()) {
        if last.offset[1] > end {
            return Err(AlignmentError { offset: last.offset, reason: "past the last span" });
        }
    }
    Ok(stats)
}
