// SPDX-License-Identifier: MIT OR Apache-2.0

//! The toy-backend property suite behind `circuitlab toy verify`.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::cma::{
    ablate_eval, aie, aie_per_pair, path_patch, path_patch_unchecked, AblationConfig, AblationName, CmaError, HeadRole, PositionMode,
};
use crate::counterfactual::{generate_pairs, CorruptionType, PairRecord};
use crate::logic::GenConfig;
use crate::promptgen::{synth_record, SynthConfig};
use crate::protocol::{serve, ForwardRequest, HeadId, HttpBackend, ModelBackend};
use crate::toymodel::{CharTokenizer, Hooks, ToyConfig, ToyModel};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub model_id: String,
    pub checks: Vec<Check>,
    pub millis: u128,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub model: ToyConfig,
    pub seed: u64,
    /// Pairs per check.
    pub n_pairs: usize,
    /// Also exercise the HTTP transport over loopback.
    pub http: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { model: ToyConfig::default(), seed: 0, n_pairs: 3, http: true }
    }
}

type Outcome = Result<(bool, String), CmaError>;

fn degenerate(pairs: &[PairRecord]) -> Vec<PairRecord> {
    pairs.iter().map(|p| PairRecord { corrupted_text: p.clean_text.clone(), ..p.clone() }).collect()
}

fn target_logprob(m: &dyn ModelBackend, req: ForwardRequest, pos: usize, target: &str) -> Result<f64, CmaError> {
    let r = m.forward(&req.logprobs_at(pos, &[target]))?;
    Ok(r.logprob(pos, target).expect("requested"))
}

fn heads(m: &ToyModel) -> Vec<HeadId> {
    let c = &m.config;
    (0..c.n_layers).flat_map(|l| (0..c.n_heads).map(move |j| HeadId::new(l, j))).collect()
}

fn self_patch(m: &ToyModel, pair: &PairRecord) -> Outcome {
    let pos = pair.clean_text.len() - 1;
    let positions: Vec<usize> = pair.causal_spans.iter().flat_map(|[s, e]| *s..*e).collect();
    let base = target_logprob(m, ForwardRequest::new(pair.clean_text.as_str()), pos, &pair.clean_target)?;
    let mut worst = 0.0f64;
    for h in heads(m) {
        let cap = m.forward(&ForwardRequest::new(pair.clean_text.as_str()).capture(h, positions.clone()))?;
        let acts = cap.captures[0].values.0.clone();
        let lp = target_logprob(m, ForwardRequest::new(pair.clean_text.as_str()).patch(h, positions.clone(), acts), pos, &pair.clean_target)?;
        worst = worst.max((lp - base).abs());
    }
    Ok((worst < 1e-6, format!("max |dlogprob| = {worst:e}")))
}

fn decomposition(m: &ToyModel, pair: &PairRecord) -> Outcome {
    let tr = m.trace(&CharTokenizer::encode(&pair.clean_text)?, &Hooks::default());
    let mut worst = 0.0f64;
    for l in 0..m.config.n_layers {
        for p in 0..tr.hidden[l + 1].nrows() {
            let mut err = 0.0f64;
            let mut norm = 0.0f64;
            for i in 0..tr.hidden[l + 1].ncols() {
                let sum: f32 = tr.hidden[l][[p, i]] + tr.mlp_out[l][[p, i]] + tr.head_out[l].iter().map(|a| a[[p, i]]).sum::<f32>();
                let h = tr.hidden[l + 1][[p, i]];
                err += ((sum - h) as f64).powi(2);
                norm += (h as f64).powi(2);
            }
            worst = worst.max(err.sqrt() / norm.sqrt().max(1e-12));
        }
    }
    Ok((worst < 1e-5, format!("max relative error = {worst:e}")))
}

fn masked_clone(m: &ToyModel, pair: &PairRecord) -> Outcome {
    let tokens = CharTokenizer::encode(&pair.clean_text)?;
    let mut worst = 0.0f32;
    for h in heads(m) {
        let a = m.trace(&tokens, &Hooks::ablating([h])).logits;
        let b = m.with_head_output_zeroed(h.layer, h.head).trace(&tokens, &Hooks::default()).logits;
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f32::max);
    }
    Ok((worst <= 1e-6, format!("max |dlogit| = {worst:e}")))
}

fn null_aie(m: &ToyModel, pairs: &[PairRecord]) -> Outcome {
    let mat = aie(m, &degenerate(pairs), PositionMode::CausalSpan, HeadRole::ReadFact)?;
    let n = (mat.n_layers * mat.n_heads) as f64;
    let mean = mat.scores.iter().flatten().map(|s| s.abs()).sum::<f64>() / n;
    Ok((mean < 1e-9 && mat.n_pairs == pairs.len(), format!("mean |AIE| = {mean:e} over {} pairs", mat.n_pairs)))
}

fn order_independence(m: &ToyModel, pairs: &[PairRecord]) -> Outcome {
    let fwd = aie(m, pairs, PositionMode::PrecedingToken, HeadRole::SelectPremise)?;
    let mut rev = pairs.to_vec();
    rev.reverse();
    let back = aie(m, &rev, PositionMode::PrecedingToken, HeadRole::SelectPremise)?;
    // each pair on its own, then a plain sorted mean
    let singles: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| aie_per_pair(m, std::slice::from_ref(p), PositionMode::PrecedingToken).map(|mut d| d.remove(0).deltas.expect("aligned")))
        .collect::<Result<_, _>>()?;
    let mut exact = fwd.scores == back.scores;
    for (i, h) in fwd.heads().enumerate() {
        let mut col: Vec<f64> = singles.iter().map(|d| d[i]).collect();
        col.sort_by(f64::total_cmp);
        exact &= col.iter().sum::<f64>() / col.len() as f64 == fwd.score(h);
    }
    Ok((exact, format!("{} pairs, forward == reversed == mean of singles: {exact}", fwd.n_pairs)))
}

fn path_cases(m: &ToyModel, pairs: &[PairRecord]) -> Outcome {
    let (emit, rec) = (HeadId::new(0, 1), HeadId::new(m.config.n_layers - 1, 2));
    let zero = path_patch(m, &degenerate(pairs), emit, rec, PositionMode::CausalSpan)?.score;
    let order = matches!(path_patch(m, pairs, rec, emit, PositionMode::CausalSpan), Err(CmaError::LayerOrder { .. }));
    // emit == rec: pass 1 returns the corrupted output itself
    let h = HeadId::new(1, 0);
    let collapsed = path_patch_unchecked(m, pairs, h, h, PositionMode::CausalSpan)?.score;
    let mut direct = Vec::new();
    for p in pairs {
        let pos: Vec<usize> = crate::protocol::align_pair(m, &p.clean_text, &p.corrupted_text, &p.causal_spans.iter().map(|[s, e]| *s..*e).collect::<Vec<_>>())?;
        let last = p.clean_text.len() - 1;
        let cor = m.forward(&ForwardRequest::new(p.corrupted_text.as_str()).capture(h, pos.clone()))?.captures.remove(0).values.0;
        let patched = target_logprob(m, ForwardRequest::new(p.clean_text.as_str()).patch(h, pos, cor), last, &p.clean_target)?.exp();
        let clean = target_logprob(m, ForwardRequest::new(p.clean_text.as_str()), last, &p.clean_target)?.exp();
        direct.push(patched - clean);
    }
    let direct = direct.iter().sum::<f64>() / direct.len() as f64;
    let ok = zero == 0.0 && order && (collapsed - direct).abs() < 1e-6;
    Ok((ok, format!("degenerate score {zero:e}; layer order rejected: {order}; collapsed {collapsed:e} vs direct {direct:e}")))
}

fn ablation_determinism(m: &ToyModel, seed: u64) -> Outcome {
    let cfg = SynthConfig::new(0, 2, seed);
    let records: Vec<_> = (0..2).map(|i| synth_record(i, &cfg)).collect::<Result<_, _>>().map_err(|e| CmaError::Config(e.to_string()))?;
    let ac = AblationConfig { seed, rand_runs: 2, ..AblationConfig::new(AblationName::Rand) };
    let a = ablate_eval(m, &records, "verify", &ac, &Default::default())?;
    let b = ablate_eval(m, &records, "verify", &ac, &Default::default())?;
    Ok((a == b && a.failed == 0, format!("lenient {} strict {} over {} records", a.lenient, a.strict, records.len())))
}

fn http_loopback(m: &ToyModel, pair: &PairRecord) -> Outcome {
    let shared = Arc::new(m.clone());
    let server = serve(shared.clone(), "127.0.0.1:0")?;
    let client = HttpBackend::new(&server.url());
    let positions: Vec<usize> = pair.causal_spans.iter().flat_map(|[s, e]| *s..*e).collect();
    let h = HeadId::new(1, 3);
    let acts = m.forward(&ForwardRequest::new(pair.clean_text.as_str()).capture(h, positions.clone()))?.captures.remove(0).values.0;
    let req = ForwardRequest::new(pair.corrupted_text.as_str())
        .patch(h, positions.clone(), acts)
        .capture(HeadId::new(2, 0), positions)
        .ablate([HeadId::new(0, 2)])
        .logprobs_at(pair.clean_text.len() - 1, &[&pair.clean_target, &pair.corrupted_target]);
    let local = m.forward(&req)?;
    let remote = client.forward(&req)?;
    let bits = |r: &crate::protocol::ForwardResult| {
        let acts: Vec<u32> = r.captures.iter().flat_map(|c| c.values.0.iter().map(|x| x.to_bits())).collect();
        let lps: Vec<u64> = r.logprobs.iter().flat_map(|l| l.logprobs.iter().map(|x| x.to_bits())).collect();
        (acts, lps)
    };
    let caps = client.capabilities()? == m.capabilities()?;
    let same = bits(&local) == bits(&remote);
    server.shutdown();
    Ok((caps && same, format!("capabilities match: {caps}; forward bit-identical: {same}")))
}

/// Runs every property check against a freshly built toy model.
pub fn toy_verify(opts: &VerifyOptions) -> Result<VerifyReport, CmaError> {
    let start = Instant::now();
    let m = ToyModel::new(opts.model.clone());
    let gen = GenConfig::default();
    let pairs = |kind| generate_pairs(opts.n_pairs, 0, kind, opts.seed, &gen).map(|s| s.pairs).map_err(|e| CmaError::Config(e.to_string()));
    let c1 = pairs(CorruptionType::C1)?;
    let c3 = pairs(CorruptionType::C3)?;
    let mut checks = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let (passed, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        checks.push(Check { name, passed, detail, millis: t.elapsed().as_millis() });
    };
    run("self_patch_noop", &|| self_patch(&m, &c1[0]));
    run("residual_decomposition", &|| decomposition(&m, &c3[0]));
    run("ablation_equals_masked_clone", &|| masked_clone(&m, &c1[0]));
    run("null_aie", &|| null_aie(&m, &c1));
    run("aggregation_order_independence", &|| order_independence(&m, &c3));
    run("path_patch_degenerate_cases", &|| path_cases(&m, &c1));
    run("ablation_determinism", &|| ablation_determinism(&m, opts.seed));
    if opts.http {
        run("http_loopback_bit_exact", &|| http_loopback(&m, &c1[0]));
    }
    Ok(VerifyReport { model_id: m.model_id(), checks, millis: start.elapsed().as_millis() })
}
