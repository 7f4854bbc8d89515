// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ModelBackend, ProtocolError};

/// Tokens covering one character span.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanMapping {
    pub tokens: Vec<usize>,
    /// Some covering token extends past the span's edges.
    pub hazard: bool,
}

/// Maps each span to the minimal set of tokens overlapping it. Errors are
/// collected per span rather than aborting the batch.
pub fn map_spans(offsets: &[[usize; 2]], text_len: usize, spans: &[Range<usize>]) -> Vec<Result<SpanMapping, ProtocolError>> {
    spans
        .iter()
        .map(|span| {
            if span.start >= span.end || span.end > text_len {
                return Err(ProtocolError::Alignment(format!("span {span:?} is empty or outside {text_len} bytes")));
            }
            // offsets are sorted and contiguous, so overlapping tokens form a run
            let first = offsets.partition_point(|o| o[1] <= span.start);
            let last = offsets.partition_point(|o| o[0] < span.end);
            if first >= last {
                return Err(ProtocolError::Alignment(format!("no token covers span {span:?}")));
            }
            let hazard = offsets[first][0] < span.start || offsets[last - 1][1] > span.end;
            Ok(SpanMapping { tokens: (first..last).collect(), hazard })
        })
        .collect()
}

/// Token positions for a clean/corrupted pair: both texts must tokenize to
/// the same length and each span must map to the same hazard-free token set
/// on both sides. Returns the sorted union of positions.
pub fn align_pair(
    backend: &dyn ModelBackend,
    clean: &str,
    corrupted: &str,
    spans: &[Range<usize>],
) -> Result<Vec<usize>, ProtocolError> {
    let a = backend.tokenize(clean)?;
    let b = backend.tokenize(corrupted)?;
    if a.tokens.len() != b.tokens.len() {
        return Err(ProtocolError::Alignment(format!("token counts differ: {} vs {}", a.tokens.len(), b.tokens.len())));
    }
    let ma = map_spans(&a.offsets, clean.len(), spans);
    let mb = map_spans(&b.offsets, corrupted.len(), spans);
    let mut out = Vec::new();
    for ((x, y), span) in ma.into_iter().zip(mb).zip(spans) {
        let (x, y) = (x?, y?);
        if x.hazard || y.hazard {
            return Err(ProtocolError::Alignment(format!("span {span:?} splits a token")));
        }
        if x.tokens != y.tokens {
            return Err(ProtocolError::Alignment(format!("span {span:?} maps to different tokens")));
        }
        out.extend(x.tokens);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
