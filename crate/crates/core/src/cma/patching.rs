// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AIEMatrix, CmaError, HeadRole, PositionMode};
use crate::counterfactual::{check_structure, CorruptionType, PairRecord};
use crate::protocol::{align_pair, Capabilities, ForwardRequest, HeadId, ModelBackend, ProtocolError};

/// Token positions of one pair for a position mode.
#[derive(Clone, Debug)]
pub(crate) struct Located {
    pub positions: Vec<usize>,
    /// The last prompt token, where the target is predicted.
    pub target_pos: usize,
}

/// `Ok(None)` when the pair's spans do not align to tokens.
pub(crate) fn locate(backend: &dyn ModelBackend, pair: &PairRecord, mode: PositionMode) -> Result<Option<Located>, CmaError> {
    check_structure(pair).map_err(|source| CmaError::InvalidPair { id: pair.id.clone(), source })?;
    let spans: Vec<_> = match mode {
        PositionMode::CausalSpan => pair.causal_spans.iter().map(|[s, e]| *s..*e).collect(),
        PositionMode::PrecedingToken => vec![pair.preceding_char..pair.preceding_char + 1],
    };
    let positions = match align_pair(backend, &pair.clean_text, &pair.corrupted_text, &spans) {
        Ok(p) => p,
        Err(ProtocolError::Alignment(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let n = backend.tokenize(&pair.clean_text)?.tokens.len();
    Ok(Some(Located { positions, target_pos: n - 1 }))
}

fn prob_of_target(backend: &dyn ModelBackend, req: ForwardRequest, pos: usize, target: &str) -> Result<(f64, Vec<Vec<f32>>), CmaError> {
    let r = backend.forward(&req.logprobs_at(pos, &[target]))?;
    let lp = r.logprob(pos, target).ok_or_else(|| ProtocolError::Backend("missing logprob".into()))?;
    Ok((lp.exp(), r.captures.into_iter().map(|c| c.values.0).collect()))
}

fn all_heads(caps: &Capabilities) -> Vec<HeadId> {
    (0..caps.n_layers).flat_map(|l| (0..caps.n_heads).map(move |j| HeadId::new(l, j))).collect()
}

/// Per-pair deltas in `(layer, head)` order, or `None` for a skipped pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDeltas {
    pub pair_id: String,
    pub deltas: Option<Vec<f64>>,
}

/// Activation-patching deltas for each pair independently.
pub fn aie_per_pair(backend: &dyn ModelBackend, pairs: &[PairRecord], mode: PositionMode) -> Result<Vec<PairDeltas>, CmaError> {
    let caps = backend.capabilities()?;
    let heads = all_heads(&caps);
    pairs
        .par_iter()
        .map(|pair| {
            let Some(loc) = locate(backend, pair, mode)? else {
                return Ok(PairDeltas { pair_id: pair.id.clone(), deltas: None });
            };
            let target = pair.clean_target.as_str();
            let mut capture = ForwardRequest::new(pair.clean_text.as_str());
            for &h in &heads {
                capture = capture.capture(h, loc.positions.clone());
            }
            let (_, clean_acts) = prob_of_target(backend, capture, loc.target_pos, target)?;
            let (base, _) = prob_of_target(backend, ForwardRequest::new(pair.corrupted_text.as_str()), loc.target_pos, target)?;
            let deltas = heads
                .par_iter()
                .zip(clean_acts)
                .map(|(&h, acts)| {
                    let req = ForwardRequest::new(pair.corrupted_text.as_str()).patch(h, loc.positions.clone(), acts);
                    Ok(prob_of_target(backend, req, loc.target_pos, target)?.0 - base)
                })
                .collect::<Result<Vec<f64>, CmaError>>()?;
            Ok(PairDeltas { pair_id: pair.id.clone(), deltas: Some(deltas) })
        })
        .collect()
}

/// Order-independent mean: values are summed in sorted order.
fn stable_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean activation-patching effect of every head. Pairs whose spans do not
/// align are skipped and counted; with no usable pair all scores are 0.
pub fn aie(backend: &dyn ModelBackend, pairs: &[PairRecord], mode: PositionMode, role: HeadRole) -> Result<AIEMatrix, CmaError> {
    let caps = backend.capabilities()?;
    let per_pair = aie_per_pair(backend, pairs, mode)?;
    let used: Vec<&Vec<f64>> = per_pair.iter().filter_map(|p| p.deltas.as_ref()).collect();
    let n = caps.total_heads();
    let flat: Vec<f64> = (0..n)
        .map(|i| stable_mean(&mut used.iter().map(|d| d[i]).collect::<Vec<_>>()))
        .collect();
    Ok(AIEMatrix {
        model_id: caps.model_id,
        role,
        n_layers: caps.n_layers,
        n_heads: caps.n_heads,
        scores: flat.chunks(caps.n_heads).map(<[f64]>::to_vec).collect(),
        n_pairs: used.len(),
        skipped: per_pair.len() - used.len(),
    })
}

/// Effect of `emit`'s corrupted output on `rec`, measured on the clean target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEdgeScore {
    pub emit: HeadId,
    pub rec: HeadId,
    pub score: f64,
    pub n_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<CorruptionType>,
}

/// Per-pair state shared by every edge: clean baseline and the corrupted
/// outputs of all heads at the patch positions.
struct PathContext {
    loc: Located,
    clean_prob: f64,
    corrupted: Vec<Vec<f32>>,
}

fn path_context(backend: &dyn ModelBackend, pair: &PairRecord, mode: PositionMode, heads: &[HeadId]) -> Result<Option<PathContext>, CmaError> {
    let Some(loc) = locate(backend, pair, mode)? else {
        return Ok(None);
    };
    let target = pair.clean_target.as_str();
    let mut req = ForwardRequest::new(pair.corrupted_text.as_str());
    for &h in heads {
        req = req.capture(h, loc.positions.clone());
    }
    let (_, corrupted) = prob_of_target(backend, req, loc.target_pos, target)?;
    let (clean_prob, _) = prob_of_target(backend, ForwardRequest::new(pair.clean_text.as_str()), loc.target_pos, target)?;
    Ok(Some(PathContext { loc, clean_prob, corrupted }))
}

fn edge_delta(backend: &dyn ModelBackend, pair: &PairRecord, ctx: &PathContext, emit_acts: &[f32], emit: HeadId, rec: HeadId) -> Result<f64, CmaError> {
    let pos = &ctx.loc.positions;
    let target = pair.clean_target.as_str();
    // pass 1: perturb emit, let it flow, harvest rec
    let pass1 = ForwardRequest::new(pair.clean_text.as_str()).patch(emit, pos.clone(), emit_acts.to_vec()).capture(rec, pos.clone());
    let (_, mut got) = prob_of_target(backend, pass1, ctx.loc.target_pos, target)?;
    // pass 2: patch only rec
    let pass2 = ForwardRequest::new(pair.clean_text.as_str()).patch(rec, pos.clone(), got.remove(0));
    Ok(prob_of_target(backend, pass2, ctx.loc.target_pos, target)?.0 - ctx.clean_prob)
}

/// Path scores for many edges over one pair set, sharing per-pair passes.
/// Edge order is preserved. Layer order is not checked.
pub fn path_scores(
    backend: &dyn ModelBackend,
    pairs: &[PairRecord],
    edges: &[(HeadId, HeadId)],
    mode: PositionMode,
) -> Result<Vec<PathEdgeScore>, CmaError> {
    let mut emitters: Vec<HeadId> = edges.iter().map(|e| e.0).collect();
    emitters.sort();
    emitters.dedup();
    let per_pair: Vec<Option<Vec<f64>>> = pairs
        .par_iter()
        .map(|pair| {
            let Some(ctx) = path_context(backend, pair, mode, &emitters)? else {
                return Ok(None);
            };
            edges
                .par_iter()
                .map(|&(emit, rec)| {
                    let i = emitters.binary_search(&emit).expect("emitter captured");
                    edge_delta(backend, pair, &ctx, &ctx.corrupted[i], emit, rec)
                })
                .collect::<Result<Vec<f64>, CmaError>>()
                .map(Some)
        })
        .collect::<Result<_, CmaError>>()?;
    let used: Vec<&Vec<f64>> = per_pair.iter().flatten().collect();
    let kind = pairs.first().map(|p| p.kind).filter(|k| pairs.iter().all(|p| p.kind == *k));
    Ok(edges
        .iter()
        .enumerate()
        .map(|(i, &(emit, rec))| PathEdgeScore {
            emit,
            rec,
            score: stable_mean(&mut used.iter().map(|d| d[i]).collect::<Vec<_>>()),
            n_pairs: used.len(),
            kind,
        })
        .collect())
}

/// Two-pass path patching from `emit` to `rec`; `emit` must sit in an
/// earlier layer.
pub fn path_patch(
    backend: &dyn ModelBackend,
    pairs: &[PairRecord],
    emit: HeadId,
    rec: HeadId,
    mode: PositionMode,
) -> Result<PathEdgeScore, CmaError> {
    if emit.layer >= rec.layer {
        return Err(CmaError::LayerOrder { emit, rec });
    }
    path_patch_unchecked(backend, pairs, emit, rec, mode)
}

/// [`path_patch`] without the layer-order check. With `emit == rec` pass 1
/// harvests the corrupted output itself, so the score is the clean-side
/// activation-patching effect of that head.
pub fn path_patch_unchecked(
    backend: &dyn ModelBackend,
    pairs: &[PairRecord],
    emit: HeadId,
    rec: HeadId,
    mode: PositionMode,
) -> Result<PathEdgeScore, CmaError> {
    Ok(path_scores(backend, pairs, &[(emit, rec)], mode)?.remove(0))
}
