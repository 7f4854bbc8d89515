// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{HashMap, HashSet};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{Layer, ToyModel};
use crate::protocol::HeadId;

/// Rows of attention scores computed at once; bounds memory on long prompts.
const ATTN_BLOCK: usize = 256;
const LN_EPS: f32 = 1e-5;

/// Interventions for one forward pass. A patched or ablated head's
/// contribution replaces the computed one before it enters the residual
/// stream; captures read contributions after interventions.
#[derive(Clone, Debug, Default)]
pub struct Hooks {
    pub ablate: HashSet<HeadId>,
    /// `(position, values)` with `values.len() == hidden width`.
    pub patches: HashMap<HeadId, Vec<(usize, Vec<f32>)>>,
    pub captures: Vec<(HeadId, Vec<usize>)>,
}

impl Hooks {
    pub fn ablating(heads: impl IntoIterator<Item = HeadId>) -> Self {
        Hooks { ablate: heads.into_iter().collect(), ..Hooks::default() }
    }

    pub fn patch(&mut self, head: HeadId, position: usize, values: Vec<f32>) {
        self.patches.entry(head).or_default().push((position, values));
    }

    pub fn capture(&mut self, head: HeadId, positions: Vec<usize>) {
        self.captures.push((head, positions));
    }
}

/// Every intermediate of one pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `hidden[0]` is the embedding; `hidden[l + 1]` is the output of layer `l`.
    pub hidden: Vec<Array2<f32>>,
    pub mlp_out: Vec<Array2<f32>>,
    /// `head_out[l][j]` is head `j`'s contribution in layer `l`, `T x d`.
    pub head_out: Vec<Vec<Array2<f32>>>,
    pub logits: Array2<f32>,
}

impl ForwardTrace {
    pub fn log_probs(&self, position: usize) -> Vec<f64> {
        log_softmax(self.logits.row(position))
    }
}

pub(crate) struct RunOut {
    pub final_hidden: Array2<f32>,
    /// One `positions x d` block per capture, position-major.
    pub captures: Vec<Vec<f32>>,
    pub trace: Option<(Vec<Array2<f32>>, Vec<Array2<f32>>, Vec<Vec<Array2<f32>>>)>,
    pub kv: Option<Vec<(Array2<f32>, Array2<f32>)>>,
}

pub(crate) fn log_softmax(logits: ArrayView1<f32>) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let lse = logits.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x as f64 - lse).collect()
}

fn layer_norm_row(x: ArrayView1<f32>, g: &Array1<f32>, b: &Array1<f32>) -> Array1<f32> {
    let n = x.len() as f32;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
}

fn layer_norm(x: &Array2<f32>, g: &Array1<f32>, b: &Array1<f32>) -> Array2<f32> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        out.row_mut(i).assign(&layer_norm_row(row, g, b));
    }
    out
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Causal attention for one head, `q`, `k`, `v` all `T x dh`.
fn attend(q: ArrayView2<f32>, k: ArrayView2<f32>, v: ArrayView2<f32>) -> Array2<f32> {
    let t = q.nrows();
    let scale = 1.0 / (q.ncols() as f32).sqrt();
    let mut z = Array2::zeros((t, v.ncols()));
    let mut r0 = 0;
    while r0 < t {
        let r1 = (r0 + ATTN_BLOCK).min(t);
        let mut scores = q.slice(s![r0..r1, ..]).dot(&k.slice(s![..r1, ..]).t());
        for (i, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
            let visible = r0 + i + 1;
            let row = row.as_slice_mut().expect("fresh product is contiguous");
            for x in row[..visible].iter_mut() {
                *x *= scale;
            }
            softmax_in_place(&mut row[..visible]);
            row[visible..].fill(0.0);
        }
        z.slice_mut(s![r0..r1, ..]).assign(&scores.dot(&v.slice(s![..r1, ..])));
        r0 = r1;
    }
    z
}

impl Layer {
    fn mlp(&self, h_mid: &Array2<f32>) -> Array2<f32> {
        let ln = layer_norm(h_mid, &self.ln2_g, &self.ln2_b);
        let mut u = ln.dot(&self.w1) + &self.b1;
        u.mapv_inplace(gelu);
        u.dot(&self.w2) + &self.b2
    }

    fn mlp_row(&self, h_mid: ArrayView1<f32>) -> Array1<f32> {
        let ln = layer_norm_row(h_mid, &self.ln2_g, &self.ln2_b);
        let mut u = ln.dot(&self.w1) + &self.b1;
        u.mapv_inplace(gelu);
        u.dot(&self.w2) + &self.b2
    }
}

impl ToyModel {
    fn embed(&self, tokens: &[u32]) -> Array2<f32> {
        let d = self.config.hidden();
        let mut x = Array2::zeros((tokens.len(), d));
        for (p, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(p);
            row.assign(&self.tok_emb.row(t as usize));
            row += &self.pos_emb.row(p);
        }
        x
    }

    pub(crate) fn run(&self, tokens: &[u32], hooks: &Hooks, keep_trace: bool, keep_kv: bool) -> RunOut {
        let (d, dh) = (self.config.hidden(), self.config.head_width);
        let t = tokens.len();
        let mut x = self.embed(tokens);
        let mut captures = vec![Vec::new(); hooks.captures.len()];
        let mut hidden = Vec::new();
        let mut mlp_outs = Vec::new();
        let mut head_outs = Vec::new();
        let mut kv = Vec::new();
        if keep_trace {
            hidden.push(x.clone());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let ln = layer_norm(&x, &layer.ln1_g, &layer.ln1_b);
            let q = ln.dot(&layer.w_q);
            let k = ln.dot(&layer.w_k);
            let v = ln.dot(&layer.w_v);
            let mut attn = Array2::<f32>::zeros((t, d));
            let mut heads = Vec::new();
            for j in 0..self.config.n_heads {
                let id = HeadId::new(l, j);
                let cols = s![.., j * dh..(j + 1) * dh];
                let mut a = if hooks.ablate.contains(&id) {
                    Array2::zeros((t, d))
                } else {
                    let z = attend(q.slice(cols), k.slice(cols), v.slice(cols));
                    z.dot(&layer.w_o.slice(s![j * dh..(j + 1) * dh, ..]))
                };
                if let Some(ps) = hooks.patches.get(&id) {
                    for (p, vals) in ps {
                        a.row_mut(*p).assign(&ArrayView1::from(vals.as_slice()));
                    }
                }
                for (c, (cid, positions)) in hooks.captures.iter().enumerate() {
                    if *cid == id {
                        for &p in positions {
                            captures[c].extend(a.row(p).iter());
                        }
                    }
                }
                attn += &a;
                if keep_trace {
                    heads.push(a);
                }
            }
            let h_mid = &x + &attn;
            let m = layer.mlp(&h_mid);
            x = &h_mid + &m;
            if keep_trace {
                hidden.push(x.clone());
                mlp_outs.push(m);
                head_outs.push(heads);
            }
            if keep_kv {
                kv.push((k, v));
            }
        }
        RunOut {
            final_hidden: x,
            captures,
            trace: keep_trace.then_some((hidden, mlp_outs, head_outs)),
            kv: keep_kv.then_some(kv),
        }
    }

    pub(crate) fn logits_row(&self, h: ArrayView1<f32>) -> Array1<f32> {
        layer_norm_row(h, &self.lnf_g, &self.lnf_b).dot(&self.w_u)
    }

    /// Full pass keeping every intermediate.
    pub fn trace(&self, tokens: &[u32], hooks: &Hooks) -> ForwardTrace {
        let out = self.run(tokens, hooks, true, false);
        let (hidden, mlp_out, head_out) = out.trace.expect("trace requested");
        let logits = layer_norm(&out.final_hidden, &self.lnf_g, &self.lnf_b).dot(&self.w_u);
        ForwardTrace { hidden, mlp_out, head_out, logits }
    }

    /// Runs the prompt once and keeps keys and values for incremental decoding.
    pub fn prefill(&self, tokens: &[u32], ablate: HashSet<HeadId>) -> DecodeState {
        assert!(!tokens.is_empty(), "prefill needs at least one token");
        let hooks = Hooks { ablate, ..Hooks::default() };
        let out = self.run(tokens, &hooks, false, true);
        let logits = self.logits_row(out.final_hidden.row(tokens.len() - 1));
        DecodeState { len: tokens.len(), kv: out.kv.expect("kv requested"), ablate: hooks.ablate, logits }
    }

    /// Appends one token and returns the next-token logits.
    pub fn step<'a>(&self, state: &'a mut DecodeState, token: u32) -> &'a Array1<f32> {
        let (d, dh) = (self.config.hidden(), self.config.head_width);
        let p = state.len;
        let mut x = &self.tok_emb.row(token as usize) + &self.pos_emb.row(p);
        let scale = 1.0 / (dh as f32).sqrt();
        for (l, layer) in self.layers.iter().enumerate() {
            let ln = layer_norm_row(x.view(), &layer.ln1_g, &layer.ln1_b);
            let q = ln.dot(&layer.w_q);
            let (kc, vc) = &mut state.kv[l];
            kc.push_row(ln.dot(&layer.w_k).view()).expect("width matches");
            vc.push_row(ln.dot(&layer.w_v).view()).expect("width matches");
            let mut attn = Array1::<f32>::zeros(d);
            for j in 0..self.config.n_heads {
                if state.ablate.contains(&HeadId::new(l, j)) {
                    continue;
                }
                let cols = s![.., j * dh..(j + 1) * dh];
                let mut w = kc.slice(cols).dot(&q.slice(s![j * dh..(j + 1) * dh]));
                w.mapv_inplace(|x| x * scale);
                softmax_in_place(w.as_slice_mut().expect("fresh vector"));
                let z = vc.slice(cols).t().dot(&w);
                attn += &z.dot(&layer.w_o.slice(s![j * dh..(j + 1) * dh, ..]));
            }
            let h_mid = &x + &attn;
            let m = layer.mlp_row(h_mid.view());
            x = &h_mid + &m;
        }
        state.len += 1;
        state.logits = self.logits_row(x.view());
        &state.logits
    }
}

/// Cached keys and values for greedy decoding.
#[derive(Clone, Debug)]
pub struct DecodeState {
    len: usize,
    kv: Vec<(Array2<f32>, Array2<f32>)>,
    ablate: HashSet<HeadId>,
    logits: Array1<f32>,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn logits(&self) -> &Array1<f32> {
        &self.logits
    }
}
