// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use circuitlab::cma::{
    ablate_eval, aie, assemble_circuit, path_scores, role_heads, AIEMatrix, AblationConfig, AblationName, CmaError, HeadRole, PathEdgeScore,
    PositionMode,
};
use circuitlab::counterfactual::{generate_pairs, CorruptionType, PairRecord};
use circuitlab::eval::{emit_report, load_artifacts, uncertain_token_stats, LogprobTrace, ReportFormat, UncertainStats};
use circuitlab::logic::{GenConfig, TraversalPolicy};
use circuitlab::manifest::RunManifest;
use circuitlab::promptgen::{read_dataset, read_jsonl, synth_dataset, write_dataset, write_jsonl, SynthConfig};
use circuitlab::protocol::{open_endpoint, serve, ForwardRequest, HeadId, ModelBackend, ProtocolError};
use circuitlab::toymodel::{ToyConfig, ToyModel};
use circuitlab::verify::{toy_verify, VerifyOptions};

#[derive(Parser)]
#[command(name = "circuitlab", version, about = "Synthesize deduction prompts and run causal mediation over attention heads")]
struct Cli {
    /// Worker threads for generation and patching requests.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Endpoint {
    /// `toy://` for the in-process toy model, or an http:// gateway.
    #[arg(long, env = "CIRCUITLAB_ENDPOINT", default_value = "toy://")]
    endpoint: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a k-shot dataset (JSONL).
    Synth {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        min_rules: usize,
        #[arg(long, default_value_t = 18)]
        max_rules: usize,
        #[arg(long, default_value = "bfs")]
        policy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate clean/corrupted prompt pairs (JSONL).
    Corrupt {
        #[arg(long = "type")]
        kind: CorruptionType,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bfs")]
        policy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uncertain-token statistics from teacher-forced logprobs.
    Probe {
        #[command(flatten)]
        endpoint: Endpoint,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        last_shots: usize,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Activation patching over every head.
    Aie {
        #[command(flatten)]
        endpoint: Endpoint,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        mode: PositionMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Path patching between every ordered pair of the given heads.
    Path {
        #[command(flatten)]
        endpoint: Endpoint,
        #[arg(long)]
        pairs: PathBuf,
        /// JSON list of {layer, head}, or a circuit file.
        #[arg(long)]
        heads: PathBuf,
        #[arg(long, default_value = "preceding-token")]
        mode: PositionMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a circuit from score and edge files.
    Circuit {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_heads: usize,
        #[arg(long, default_value_t = 10)]
        top_edges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generation with heads zeroed, scored by step and answer accuracy.
    Ablate {
        #[command(flatten)]
        endpoint: Endpoint,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: AblationName,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Directory of score files; needed by the role configs.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        rand_runs: usize,
        #[arg(long, default_value_t = 0.03)]
        rand_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tables and plot data from a directory of results.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        format: ReportFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// The built-in toy model.
    Toy {
        #[command(subcommand)]
        cmd: ToyCmd,
    },
}

#[derive(Subcommand)]
enum ToyCmd {
    /// Run the property suite against the toy backend.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_http: bool,
    },
    /// Serve the toy model over HTTP until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Error class, mapped to the exit code.
enum Failure {
    Data(anyhow::Error),
    Backend(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        if e.downcast_ref::<ProtocolError>().is_some() {
            return Failure::Backend(e);
        }
        match e.downcast_ref::<CmaError>() {
            Some(CmaError::Protocol(_)) => Failure::Backend(e),
            _ => Failure::Data(e),
        }
    }
}

impl From<CmaError> for Failure {
    fn from(e: CmaError) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        Failure::Backend(e.into())
    }
}

type Res<T> = Result<T, Failure>;

fn policy(name: &str) -> anyhow::Result<TraversalPolicy> {
    match name {
        "bfs" => Ok(TraversalPolicy::bfs()),
        "dfs" => Ok(TraversalPolicy::dfs()),
        _ => bail!("unknown policy {name:?}"),
    }
}

fn backend(e: &Endpoint) -> Res<Arc<dyn ModelBackend>> {
    Ok(open_endpoint(&e.endpoint)?)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_pairs(path: &Path) -> anyhow::Result<Vec<PairRecord>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn single_kind(pairs: &[PairRecord]) -> anyhow::Result<CorruptionType> {
    let kind = pairs.first().ok_or_else(|| anyhow!("pair file is empty"))?.kind;
    if pairs.iter().any(|p| p.kind != kind) {
        bail!("pair file mixes corruption types");
    }
    Ok(kind)
}

fn read_heads(path: &Path) -> anyhow::Result<Vec<HeadId>> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    if let Some(nodes) = v.get("nodes") {
        let nodes: Vec<serde_json::Value> = serde_json::from_value(nodes.clone())?;
        return nodes.into_iter().map(|n| Ok(serde_json::from_value(n["head"].clone())?)).collect();
    }
    Ok(serde_json::from_value(v)?)
}

fn load_matrices(dir: &Path) -> anyhow::Result<Vec<AIEMatrix>> {
    Ok(load_artifacts(dir)?.matrices)
}

fn run(cli: Cli) -> Res<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match cli.cmd {
        Cmd::Synth { k, n, seed, min_rules, max_rules, policy: p, out } => {
            if min_rules > max_rules || min_rules == 0 {
                return Err(Failure::Data(anyhow!("bad rule bounds {min_rules}..={max_rules}")));
            }
            let gen = GenConfig { min_total: min_rules, max_total: max_rules, policy: policy(&p)?, ..GenConfig::default() };
            let cfg = SynthConfig { k, n, seed, gen };
            let mut m = RunManifest::start("synth", args, serde_json::to_value(&cfg).map_err(anyhow::Error::from)?);
            let records = synth_dataset(&cfg).map_err(anyhow::Error::from)?;
            write_dataset(&out, &records).map_err(anyhow::Error::from)?;
            m.seeds.push(seed);
            m.outputs.push(out);
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Corrupt { kind, n, k, seed, policy: p, out } => {
            let gen = GenConfig { policy: policy(&p)?, ..GenConfig::default() };
            let set = generate_pairs(n, k, kind, seed, &gen).map_err(anyhow::Error::from)?;
            write_jsonl(&out, &set.pairs).map_err(anyhow::Error::from)?;
            eprintln!("{} pairs in {} attempts (yield {:.3})", set.pairs.len(), set.attempts, set.yield_ratio());
            let mut m = RunManifest::start("corrupt", args, json!({"kind": kind, "n": n, "k": k, "gen": gen, "attempts": set.attempts}));
            m.seeds.push(seed);
            m.outputs.push(out);
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Probe { endpoint, data, last_shots, threshold, out } => {
            let be = backend(&endpoint)?;
            let records = read_dataset(&data).map_err(anyhow::Error::from)?;
            let per: Vec<UncertainStats> = records
                .par_iter()
                .map(|r| -> Res<UncertainStats> {
                    let tok = be.tokenize(&r.prompt_text)?;
                    let res = be.forward(&ForwardRequest { echo: true, ..ForwardRequest::new(r.prompt_text.as_str()) })?;
                    let echo = res.echo_logprobs.ok_or_else(|| Failure::Backend(anyhow!("backend ignored echo")))?;
                    let trace = LogprobTrace::from_echo(&r.prompt_text, &tok.offsets, &echo);
                    uncertain_token_stats(&trace, &r.role_spans, last_shots, threshold).map_err(|e| Failure::Data(e.into()))
                })
                .collect::<Res<_>>()?;
            let mut total = UncertainStats::empty(threshold, last_shots);
            for s in &per {
                total.merge(s);
            }
            write_json(&out, &total)?;
            let mut m = RunManifest::start("probe", args, json!({"endpoint": endpoint.endpoint, "last_shots": last_shots, "threshold": threshold}));
            m.inputs.push(data);
            m.outputs.push(out);
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Aie { endpoint, pairs, mode, out } => {
            let be = backend(&endpoint)?;
            let ps = read_pairs(&pairs)?;
            let role = HeadRole::from_kind_mode(single_kind(&ps)?, mode);
            let matrix = aie(&*be, &ps, mode, role)?;
            if matrix.skipped > 0 {
                eprintln!("{} of {} pairs skipped: spans do not align to tokens", matrix.skipped, ps.len());
            }
            write_json(&out, &matrix)?;
            let mut m = RunManifest::start("aie", args, json!({"endpoint": endpoint.endpoint, "mode": mode, "role": role}));
            m.inputs.push(pairs);
            m.outputs.push(out);
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Path { endpoint, pairs, heads, mode, out } => {
            let be = backend(&endpoint)?;
            let ps = read_pairs(&pairs)?;
            single_kind(&ps)?;
            let hs = read_heads(&heads)?;
            let edges: Vec<(HeadId, HeadId)> =
                hs.iter().flat_map(|&a| hs.iter().filter(move |b| a.layer < b.layer).map(move |&b| (a, b))).collect();
            let scores = path_scores(&*be, &ps, &edges, mode)?;
            write_json(&out, &scores)?;
            let mut m = RunManifest::start("path", args, json!({"endpoint": endpoint.endpoint, "mode": mode}));
            m.inputs.extend([pairs, heads]);
            m.outputs.push(out);
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Circuit { scores, top_heads, top_edges, out } => {
            let a = load_artifacts(&scores).map_err(anyhow::Error::from)?;
            if a.matrices.is_empty() {
                return Err(Failure::Data(anyhow!("no score files in {}", scores.display())));
            }
            let mut edges: Vec<(CorruptionType, PositionMode, Vec<PathEdgeScore>)> = Vec::new();
            for (_, es) in &a.edges {
                let mut by_kind: BTreeMap<CorruptionType, Vec<PathEdgeScore>> = BTreeMap::new();
                for e in es {
                    if let Some(k) = e.kind {
                        by_kind.entry(k).or_default().push(e.clone());
                    }
                }
                edges.extend(by_kind.into_iter().map(|(k, v)| (k, PositionMode::PrecedingToken, v)));
            }
            let graph = assemble_circuit(&a.matrices, &edges, top_heads, top_edges);
            write_json(&out, &graph)?;
            let mut m = RunManifest::start("circuit", args, json!({"top_heads": top_heads, "top_edges": top_edges}));
            m.inputs.push(scores);
            m.outputs.push(out);
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Ablate { endpoint, data, config, topk, scores, seed, rand_runs, rand_fraction, out } => {
            let be = backend(&endpoint)?;
            let records = read_dataset(&data).map_err(anyhow::Error::from)?;
            let cfg = AblationConfig { name: config, top_k: topk, rand_fraction, rand_runs, seed };
            let rh = match &scores {
                Some(dir) => role_heads(&load_matrices(dir)?, topk),
                None => BTreeMap::new(),
            };
            let name = data.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string();
            let metrics = ablate_eval(&*be, &records, &name, &cfg, &rh)?;
            if let Some(e) = &metrics.first_error {
                eprintln!("{} records failed; first: {e}", metrics.failed);
            }
            let mut w = csv::Writer::from_path(&out).map_err(anyhow::Error::from)?;
            for r in metrics.rows() {
                w.serialize(r).map_err(anyhow::Error::from)?;
            }
            w.flush().map_err(anyhow::Error::from)?;
            let mut m = RunManifest::start("ablate", args, json!({"endpoint": endpoint.endpoint, "config": cfg, "runs": metrics.runs}));
            m.seeds.push(seed);
            m.inputs.push(data);
            m.inputs.extend(scores);
            m.outputs.push(out);
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Report { input, format, out } => {
            let a = load_artifacts(&input).map_err(anyhow::Error::from)?;
            let written = emit_report(&a, format, &out).map_err(anyhow::Error::from)?;
            let mut m = RunManifest::start("report", args, json!({"format": format!("{format:?}")}));
            m.inputs.push(input);
            m.outputs = written;
            m.finish().map_err(anyhow::Error::from)?;
        }
        Cmd::Toy { cmd: ToyCmd::Verify { seed, no_http } } => {
            let report = toy_verify(&VerifyOptions { seed, http: !no_http, ..VerifyOptions::default() })?;
            for c in &report.checks {
                println!("{} {:<34} {:>6} ms  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.millis, c.detail);
            }
            println!("{} in {} ms", report.model_id, report.millis);
            if !report.passed() {
                return Err(Failure::Backend(anyhow!("toy verify: some checks failed")));
            }
        }
        Cmd::Toy { cmd: ToyCmd::Serve { addr, seed } } => {
            let model = Arc::new(ToyModel::new(ToyConfig { seed, ..ToyConfig::default() }));
            let handle = serve(model, &addr)?;
            eprintln!("serving {} on {}", ToyModel::new(ToyConfig { seed, max_seq_len: 1, ..ToyConfig::default() }).model_id(), handle.url());
            handle.join();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({"error": {"kind": "usage", "message": e.to_string()}}));
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind, e) = match f {
                Failure::Data(e) => (3, "data", e),
                Failure::Backend(e) => (4, "backend", e),
            };
            eprintln!("{}", json!({"error": {"kind": kind, "message": format!("{e:#}")}}));
            ExitCode::from(code)
        }
    }
}
