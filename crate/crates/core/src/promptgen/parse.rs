// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::{ChainStep, InferenceStep, KbState, Premise, Problem, ReasoningChain, Rule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("missing {0}")]
    Missing(&'static str),
}

/// A line the chain parser could not use. `line` is 1-based within the input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub issues: Vec<ParseIssue>,
}

impl ParseReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, line: usize, reason: impl Into<String>) {
        self.issues.push(ParseIssue { line, reason: reason.into() });
    }
}

/// Splits a prompt on the separator line.
pub fn split_shots(text: &str) -> Vec<&str> {
    text.split(super::SEPARATOR).collect()
}

fn premise(s: &str) -> Option<Premise> {
    let mut c = s.chars();
    match (c.next(), c.next()) {
        (Some(ch), None) => Premise::new(ch).ok(),
        _ => None,
    }
}

fn parse_kb(line: &str) -> Option<KbState> {
    let inner = line.strip_prefix("KB = {")?.strip_suffix('}')?;
    if inner.is_empty() {
        return Some(KbState::default());
    }
    let mut kb = KbState::default();
    for item in inner.split(", ") {
        if !kb.insert(premise(item)?) {
            return None;
        }
    }
    Some(kb)
}

fn parse_step(line: &str) -> Result<InferenceStep, &'static str> {
    let rest = line.strip_prefix("=> F(KB[").ok_or("expected \"=> F(KB[\"")?;
    let (list, rest) = rest.split_once("], Rule").ok_or("expected \"], Rule\"")?;
    let mut selected = Vec::with_capacity(2);
    for item in list.split(", ") {
        let p = item.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')).and_then(premise);
        selected.push(p.ok_or("bad premise selection")?);
    }
    let (digits, rest) = rest.split_once(") => `").ok_or("expected \") => `\"")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return Err("bad rule id");
    }
    let rule_id: u32 = digits.parse().map_err(|_| "bad rule id")?;
    let derived = rest.strip_suffix('`').and_then(premise).ok_or("bad derived premise")?;
    Ok(InferenceStep { selected, rule_id, derived, kb_after: None })
}

fn parse_validate(line: &str) -> Option<(Premise, bool)> {
    let rest = line.strip_prefix("=> Validate(KB, Question=`")?;
    let (q, verdict) = rest.split_once("`) = ")?;
    let v = match verdict {
        "True." => true,
        "False." => false,
        _ => return None,
    };
    Some((premise(q)?, v))
}

/// Best-effort parse of a chain, from a whole shot or a bare continuation.
///
/// Lines before the first `KB = {` or `=>` line are skipped. A `KB` line
/// attaches to the step before it; the first one is the initial snapshot and
/// is not stored. Parsing stops at the Validate line or a separator line.
/// Anything else becomes a malformed step and an issue in the report.
pub fn parse_chain(text: &str, problem: &Problem) -> (ReasoningChain, ParseReport) {
    let mut chain = ReasoningChain::default();
    let mut report = ParseReport::default();
    let mut started = false;
    let mut seen_initial_kb = false;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end();
        if line == "-------" {
            break;
        }
        if line.is_empty() {
            continue;
        }
        let is_chain_line = line.starts_with("KB = {") || line.starts_with("=>");
        if !started && !is_chain_line {
            continue;
        }
        started = true;
        if line.starts_with("KB = {") {
            let Some(kb) = parse_kb(line) else {
                report.push(line_no, "malformed KB snapshot");
                continue;
            };
            match chain.steps.last_mut() {
                None if !seen_initial_kb => seen_initial_kb = true,
                Some(ChainStep::Inference(s)) if s.kb_after.is_none() => s.kb_after = Some(kb),
                _ => report.push(line_no, "KB snapshot without a preceding step"),
            }
            continue;
        }
        if line.starts_with("=> Validate") {
            match parse_validate(line) {
                Some((q, v)) => {
                    if q != problem.question {
                        report.push(line_no, format!("validate names {q}, question is {}", problem.question));
                    }
                    chain.verdict = v;
                }
                None => report.push(line_no, "malformed Validate line"),
            }
            break;
        }
        match parse_step(line) {
            Ok(step) => chain.steps.push(ChainStep::Inference(step)),
            Err(reason) => {
                report.push(line_no, reason);
                chain.steps.push(ChainStep::Malformed { text: line.to_string() });
            }
        }
    }
    (chain, report)
}

fn parse_rule_line(line: &str, line_no: usize) -> Result<Rule, ParseError> {
    let err = |reason: &str| ParseError::Line { line: line_no, reason: reason.to_string() };
    let rest = line.strip_prefix("# (Rule").ok_or_else(|| err("expected rule line"))?;
    let (id, body) = rest.split_once("): ").ok_or_else(|| err("expected \"): \""))?;
    let id: u32 = id.parse().map_err(|_| err("bad rule id"))?;
    if let Some(p) = body.strip_suffix(" is true") {
        return Ok(Rule::fact(id, premise(p).ok_or_else(|| err("bad fact premise"))?));
    }
    let body = body.strip_prefix("If ").ok_or_else(|| err("expected \"If\" or \"is true\""))?;
    let (conds, concl) = body.split_once(" then ").ok_or_else(|| err("expected \" then \""))?;
    let conditions = conds
        .split(", ")
        .map(|c| premise(c).ok_or_else(|| err("bad condition")))
        .collect::<Result<Vec<_>, _>>()?;
    let conclusion = premise(concl).ok_or_else(|| err("bad conclusion"))?;
    Ok(Rule::new(id, conditions, conclusion))
}

/// Parses the problem statement of a shot (header, rules, question).
pub fn parse_problem(shot: &str) -> Result<Problem, ParseError> {
    let mut lines = shot.lines().enumerate();
    match lines.next() {
        Some((_, "### Given list of facts and rules:")) => {}
        _ => return Err(ParseError::Missing("header line")),
    }
    let mut rules = Vec::new();
    for (n, line) in lines {
        if let Some(q) = line.strip_prefix("# (Question): truth value of ") {
            let q = q
                .strip_suffix('?')
                .and_then(premise)
                .ok_or(ParseError::Line { line: n + 1, reason: "bad question".into() })?;
            return Ok(Problem { rules, question: q });
        }
        rules.push(parse_rule_line(line, n + 1)?);
    }
    Err(ParseError::Missing("question line"))
}

/// Parses a complete shot into its problem and chain.
pub fn parse_shot(shot: &str) -> Result<(Problem, ReasoningChain, ParseReport), ParseError> {
    let problem = parse_problem(shot)?;
    let (chain, report) = parse_chain(shot, &problem);
    Ok((problem, chain, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{derive_chain, fixtures::demo2, generate_problem, GenConfig, TraversalPolicy};
    use crate::promptgen::{render_shot, Cutoff};
    use crate::seeding::derive_seed;

    #[test]
    fn empty_text_gives_empty_false_chain() {
        let (c, r) = parse_chain("", &demo2());
        assert!(c.is_empty());
        assert!(!c.verdict);
        assert!(r.is_clean());
    }

    #[test]
    fn round_trip_on_random_shots() {
        for i in 0..500 {
            let seed = derive_seed(11, i);
            let pr = generate_problem(seed, &GenConfig::default()).unwrap();
            let pol = if i % 2 == 0 { TraversalPolicy::bfs() } else { TraversalPolicy::dfs() };
            let chain = derive_chain(&pr, &pol).unwrap();
            let text = render_shot(&pr, &chain, Cutoff::Full);
            let (p2, c2, report) = parse_shot(&text).unwrap();
            assert!(report.is_clean(), "{:?}", report);
            assert_eq!(p2, pr);
            assert_eq!(c2, chain);
            assert_eq!(render_shot(&p2, &c2, Cutoff::Full), text);
        }
    }

    #[test]
    fn garbage_lines_become_malformed_steps() {
        let pr = demo2();
        let text = "KB = {L, Q, I}\n=> F(KB['L'], Rule2) => `B`\nKB = {L, Q, I, B}\n=> F(KB['B' Rule6) => `V`\nblah\n=> Validate(KB, Question=`V`) = True.\nignored";
        let (c, r) = parse_chain(text, &pr);
        assert_eq!(c.steps.len(), 3);
        assert!(matches!(c.steps[1], ChainStep::Malformed { .. }));
        assert!(matches!(c.steps[2], ChainStep::Malformed { .. }));
        assert!(c.verdict);
        assert_eq!(r.issues.iter().map(|i| i.line).collect::<Vec<_>>(), vec![4, 5]);
    }

    #[test]
    fn stops_at_separator_and_flags_missing_kb() {
        let pr = demo2();
        let text = "=> F(KB['L'], Rule2) => `B`\n-------\n=> F(KB['B'], Rule6) => `V`";
        let (c, _) = parse_chain(text, &pr);
        assert_eq!(c.steps.len(), 1);
        assert_eq!(c.steps[0].as_inference().unwrap().kb_after, None);
        assert!(!c.verdict);
    }

    #[test]
    fn rule_id_with_leading_zero_rejected() {
        assert!(parse_step("=> F(KB['L'], Rule02) => `B`").is_err());
        assert!(parse_step("=> F(KB['L', 'Q'], Rule12) => `B`").is_ok());
        assert!(parse_step("=> F(KB['L','Q'], Rule12) => `B`").is_err());
    }

    #[test]
    fn problem_parse_errors() {
        assert_eq!(parse_problem("hello"), Err(ParseError::Missing("header line")));
        assert_eq!(parse_problem("### Given list of facts and rules:\n# (Rule1): A is true"), Err(ParseError::Missing("question line")));
        assert!(matches!(
            parse_problem("### Given list of facts and rules:\n# (Rule1): If a then B\n"),
            Err(ParseError::Line { line: 2, .. })
        ));
    }
}
