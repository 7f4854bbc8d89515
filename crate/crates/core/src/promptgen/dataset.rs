// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{render_prompt, Cutoff, PromptDoc, PromptShot, RoleSpan};
use crate::logic::{derive_chain, generate_problem, GenConfig, LogicError, Premise, Problem, ReasoningChain};
use crate::seeding::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub gen: GenConfig,
}

impl SynthConfig {
    pub fn new(k: usize, n: usize, seed: u64) -> Self {
        SynthConfig { k, n, seed, gen: GenConfig::default() }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("record {record}: {source}")]
    Record { record: usize, source: LogicError },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub k: usize,
    /// Full prompt including the query's gold chain.
    pub prompt_text: String,
    pub shots: Vec<PromptShot>,
    pub role_spans: Vec<RoleSpan>,
    pub gold_chain: ReasoningChain,
    pub question: Premise,
    pub seed: u64,
}

impl DatasetRecord {
    pub fn problem(&self) -> &Problem {
        &self.shots.last().expect("record has a query shot").problem
    }

    pub fn doc(&self, gen: &GenConfig) -> PromptDoc {
        let q = self.shots.last().expect("record has a query shot");
        render_prompt(&self.demos(), (&q.problem, &q.chain, Cutoff::Full), gen.policy)
    }

    fn demos(&self) -> Vec<(Problem, ReasoningChain)> {
        self.shots[..self.k].iter().map(|s| (s.problem.clone(), s.chain.clone())).collect()
    }

    /// The prompt a model continues: demonstrations plus the query problem,
    /// ending right before the initial KB line.
    pub fn generation_prompt(&self) -> String {
        let q = self.shots.last().expect("record has a query shot");
        render_prompt(&self.demos(), (&q.problem, &q.chain, Cutoff::Problem), Default::default()).text
    }
}

/// Builds a k-shot document whose shots are drawn from `seed`.
pub fn synth_doc(k: usize, seed: u64, gen: &GenConfig) -> Result<PromptDoc, LogicError> {
    synth_doc_filtered(k, seed, gen, &|_: &Problem, _: &ReasoningChain| true)
}

/// Like [`synth_doc`], but each demonstration is redrawn (up to
/// `gen.max_attempts` times) until `keep` accepts it. The query is never
/// filtered. With an always-true filter this equals [`synth_doc`].
pub fn synth_doc_filtered(
    k: usize,
    seed: u64,
    gen: &GenConfig,
    keep: &dyn Fn(&Problem, &ReasoningChain) -> bool,
) -> Result<PromptDoc, LogicError> {
    let mut shots = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let base = derive_seed(seed, j as u64);
        let mut drawn = None;
        for r in 0..gen.max_attempts.max(1) {
            let s = if r == 0 { base } else { derive_seed(base, r as u64) };
            let problem = generate_problem(s, gen)?;
            let chain = derive_chain(&problem, &gen.policy)?;
            if j == k || keep(&problem, &chain) {
                drawn = Some((problem, chain));
                break;
            }
        }
        shots.push(drawn.ok_or(LogicError::GenerationExhausted { attempts: gen.max_attempts })?);
    }
    let (qp, qc) = shots.pop().expect("k + 1 shots");
    Ok(render_prompt(&shots, (&qp, &qc, Cutoff::Full), gen.policy))
}

pub fn synth_record(index: usize, config: &SynthConfig) -> Result<DatasetRecord, LogicError> {
    let seed = derive_seed(config.seed, index as u64);
    let doc = synth_doc(config.k, seed, &config.gen)?;
    let query = doc.query().clone();
    Ok(DatasetRecord {
        id: format!("k{}-s{}-{:05}", config.k, config.seed, index),
        k: config.k,
        prompt_text: doc.text,
        role_spans: doc.spans,
        gold_chain: query.chain,
        question: query.problem.question,
        shots: doc.shots,
        seed,
    })
}

/// Generates `config.n` records in parallel; output order follows the index.
pub fn synth_dataset(config: &SynthConfig) -> Result<Vec<DatasetRecord>, SynthError> {
    (0..config.n)
        .into_par_iter()
        .map(|i| synth_record(i, config).map_err(|source| SynthError::Record { record: i, source }))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SynthError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| SynthError::Json { line: n + 1, source })?);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> io::Result<()> {
    write_jsonl(path, records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, SynthError> {
    read_jsonl(path)
}
