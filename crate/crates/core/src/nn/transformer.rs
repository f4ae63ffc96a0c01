//! Shared transformer trunk: forward pass with activation cache and manual backward.

use super::ops::{dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place, LnCache};
use super::params::{LayerOffsets, Layout};
use super::ModelConfig;

struct LayerCache {
    x_in: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    /// n_heads × T × T attention probabilities.
    probs: Vec<f64>,
    attn: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

pub(crate) struct TrunkCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    /// Final hidden states after the closing layer norm, T × d.
    pub out: Vec<f64>,
}

impl TrunkCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Attention probabilities of one layer and head, row-major T × T.
    pub fn attention(&self, layer: usize, head: usize) -> &[f64] {
        let t = self.ids.len();
        &self.layers[layer].probs[head * t * t..(head + 1) * t * t]
    }
}

fn slice(p: &[f64], off: usize, len: usize) -> &[f64] {
    &p[off..off + len]
}

/// Multi-head attention over `qkv` (T × 3d). Returns (concat heads T × d, probs).
fn attention(qkv: &[f64], t_len: usize, d: usize, n_heads: usize, causal: bool) -> (Vec<f64>, Vec<f64>) {
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; t_len * d];
    let mut probs = vec![0.0; n_heads * t_len * t_len];
    for h in 0..n_heads {
        for t in 0..t_len {
            let q = &qkv[t * 3 * d + h * hd..t * 3 * d + (h + 1) * hd];
            let span = if causal { t + 1 } else { t_len };
            let row = &mut probs[(h * t_len + t) * t_len..(h * t_len + t) * t_len + span];
            for (j, s) in row.iter_mut().enumerate() {
                let k = &qkv[j * 3 * d + d + h * hd..j * 3 * d + d + (h + 1) * hd];
                *s = dot(q, k) * scale;
            }
            softmax_in_place(row);
            let o = &mut out[t * d + h * hd..t * d + (h + 1) * hd];
            for (j, &pj) in row.iter().enumerate() {
                let v = &qkv[j * 3 * d + 2 * d + h * hd..j * 3 * d + 2 * d + (h + 1) * hd];
                for (oi, &vi) in o.iter_mut().zip(v) {
                    *oi += pj * vi;
                }
            }
        }
    }
    (out, probs)
}

fn attention_backward(
    qkv: &[f64],
    probs: &[f64],
    d_attn: &[f64],
    t_len: usize,
    d: usize,
    n_heads: usize,
    causal: bool,
) -> Vec<f64> {
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dqkv = vec![0.0; t_len * 3 * d];
    let mut dp = vec![0.0; t_len];
    for h in 0..n_heads {
        for t in 0..t_len {
            let span = if causal { t + 1 } else { t_len };
            let row = &probs[(h * t_len + t) * t_len..(h * t_len + t) * t_len + span];
            let da = &d_attn[t * d + h * hd..t * d + (h + 1) * hd];
            for j in 0..span {
                let vo = j * 3 * d + 2 * d + h * hd;
                dp[j] = dot(da, &qkv[vo..vo + hd]);
                for i in 0..hd {
                    dqkv[vo + i] += row[j] * da[i];
                }
            }
            let weighted: f64 = row.iter().zip(&dp[..span]).map(|(p, g)| p * g).sum();
            let qo = t * 3 * d + h * hd;
            for j in 0..span {
                let ds = row[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let ko = j * 3 * d + d + h * hd;
                for i in 0..hd {
                    dqkv[qo + i] += ds * qkv[ko + i];
                    dqkv[ko + i] += ds * qkv[qo + i];
                }
            }
        }
    }
    dqkv
}

pub(crate) fn trunk_forward(cfg: &ModelConfig, layout: &Layout, p: &[f64], ids: &[u32], causal: bool) -> TrunkCache {
    let d = cfg.d_model;
    let f = cfg.d_ff;
    let t_len = ids.len();
    let mut x = vec![0.0; t_len * d];
    for (t, &id) in ids.iter().enumerate() {
        let e = slice(p, layout.wte + id as usize * d, d);
        let pe = slice(p, layout.wpe + t * d, d);
        for i in 0..d {
            x[t * d + i] = e[i] + pe[i];
        }
    }
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lo in &layout.layers {
        let (h1, ln1) = layer_norm(&x, slice(p, lo.ln1_g, d), slice(p, lo.ln1_b, d), t_len, d);
        let qkv = linear(&h1, slice(p, lo.w_qkv, d * 3 * d), slice(p, lo.b_qkv, 3 * d), t_len, d, 3 * d);
        let (attn, probs) = attention(&qkv, t_len, d, cfg.n_heads, causal);
        let proj = linear(&attn, slice(p, lo.w_o, d * d), slice(p, lo.b_o, d), t_len, d, d);
        let x_mid: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let (h2, ln2) = layer_norm(&x_mid, slice(p, lo.ln2_g, d), slice(p, lo.ln2_b, d), t_len, d);
        let pre_act = linear(&h2, slice(p, lo.w_fc, d * f), slice(p, lo.b_fc, f), t_len, d, f);
        let act: Vec<f64> = pre_act.iter().map(|&v| gelu(v)).collect();
        let mlp = linear(&act, slice(p, lo.w_proj, f * d), slice(p, lo.b_proj, d), t_len, f, d);
        let x_out: Vec<f64> = x_mid.iter().zip(&mlp).map(|(a, b)| a + b).collect();
        layers.push(LayerCache { x_in: std::mem::replace(&mut x, x_out), ln1, h1, qkv, probs, attn, ln2, h2, pre_act, act });
    }
    let (out, lnf) = layer_norm(&x, slice(p, layout.lnf_g, d), slice(p, layout.lnf_b, d), t_len, d);
    TrunkCache { ids: ids.to_vec(), layers, lnf, out }
}

/// Split-borrow a gradient buffer into disjoint mutable slices.
fn two_mut(g: &mut [f64], a: (usize, usize), b: (usize, usize)) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.0 + a.1 <= b.0);
    let (lo, hi) = g.split_at_mut(b.0);
    (&mut lo[a.0..a.0 + a.1], &mut hi[..b.1])
}

fn layer_backward(
    cfg: &ModelConfig,
    lo: &LayerOffsets,
    p: &[f64],
    c: &LayerCache,
    dx_out: Vec<f64>,
    grad: &mut [f64],
    t_len: usize,
    causal: bool,
) -> Vec<f64> {
    let d = cfg.d_model;
    let f = cfg.d_ff;
    // MLP branch.
    let (dw, db) = two_mut(grad, (lo.w_proj, f * d), (lo.b_proj, d));
    let d_act = linear_backward(&c.act, slice(p, lo.w_proj, f * d), &dx_out, dw, db, t_len, f, d);
    let d_pre: Vec<f64> = d_act.iter().zip(&c.pre_act).map(|(g, &u)| g * gelu_grad(u)).collect();
    let (dw, db) = two_mut(grad, (lo.w_fc, d * f), (lo.b_fc, f));
    let d_h2 = linear_backward(&c.h2, slice(p, lo.w_fc, d * f), &d_pre, dw, db, t_len, d, f);
    let (dg, db) = two_mut(grad, (lo.ln2_g, d), (lo.ln2_b, d));
    let d_ln2 = layer_norm_backward(&d_h2, &c.ln2, slice(p, lo.ln2_g, d), dg, db, t_len, d);
    let dx_mid: Vec<f64> = dx_out.iter().zip(&d_ln2).map(|(a, b)| a + b).collect();
    // Attention branch.
    let (dw, db) = two_mut(grad, (lo.w_o, d * d), (lo.b_o, d));
    let d_attn = linear_backward(&c.attn, slice(p, lo.w_o, d * d), &dx_mid, dw, db, t_len, d, d);
    let d_qkv = attention_backward(&c.qkv, &c.probs, &d_attn, t_len, d, cfg.n_heads, causal);
    let (dw, db) = two_mut(grad, (lo.w_qkv, d * 3 * d), (lo.b_qkv, 3 * d));
    let d_h1 = linear_backward(&c.h1, slice(p, lo.w_qkv, d * 3 * d), &d_qkv, dw, db, t_len, d, 3 * d);
    let (dg, db) = two_mut(grad, (lo.ln1_g, d), (lo.ln1_b, d));
    let d_ln1 = layer_norm_backward(&d_h1, &c.ln1, slice(p, lo.ln1_g, d), dg, db, t_len, d);
    debug_assert_eq!(c.x_in.len(), d_ln1.len());
    dx_mid.iter().zip(&d_ln1).map(|(a, b)| a + b).collect()
}

/// Accumulates parameter gradients given dLoss/d(out).
pub(crate) fn trunk_backward(
    cfg: &ModelConfig,
    layout: &Layout,
    p: &[f64],
    cache: &TrunkCache,
    d_out: &[f64],
    grad: &mut [f64],
    causal: bool,
) {
    let d = cfg.d_model;
    let t_len = cache.len();
    let (dg, db) = two_mut(grad, (layout.lnf_g, d), (layout.lnf_b, d));
    let mut dx = layer_norm_backward(d_out, &cache.lnf, slice(p, layout.lnf_g, d), dg, db, t_len, d);
    for (lo, c) in layout.layers.iter().zip(&cache.layers).rev() {
        dx = layer_backward(cfg, lo, p, c, dx, grad, t_len, causal);
    }
    for (t, &id) in cache.ids.iter().enumerate() {
        let row = &dx[t * d..(t + 1) * d];
        let e = layout.wte + id as usize * d;
        for i in 0..d {
            grad[e + i] += row[i];
        }
        let pe = layout.wpe + t * d;
        for i in 0..d {
            grad[pe + i] += row[i];
        }
    }
}

/// Per-layer key/value cache for incremental causal decoding.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub(crate) fn new(n_layers: usize) -> Self {
        KvCache { keys: vec![Vec::new(); n_layers], values: vec![Vec::new(); n_layers], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Process one token at position `cache.len()`; returns the final hidden state (d).
pub(crate) fn trunk_step(cfg: &ModelConfig, layout: &Layout, p: &[f64], cache: &mut KvCache, id: u32) -> Vec<f64> {
    let d = cfg.d_model;
    let f = cfg.d_ff;
    let hd = d / cfg.n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let pos = cache.len;
    let e = slice(p, layout.wte + id as usize * d, d);
    let pe = slice(p, layout.wpe + pos * d, d);
    let mut x: Vec<f64> = e.iter().zip(pe).map(|(a, b)| a + b).collect();
    for (l, lo) in layout.layers.iter().enumerate() {
        let (h1, _) = layer_norm(&x, slice(p, lo.ln1_g, d), slice(p, lo.ln1_b, d), 1, d);
        let qkv = linear(&h1, slice(p, lo.w_qkv, d * 3 * d), slice(p, lo.b_qkv, 3 * d), 1, d, 3 * d);
        cache.keys[l].extend_from_slice(&qkv[d..2 * d]);
        cache.values[l].extend_from_slice(&qkv[2 * d..]);
        let keys = &cache.keys[l];
        let values = &cache.values[l];
        let mut attn = vec![0.0; d];
        let mut row = vec![0.0; pos + 1];
        for h in 0..cfg.n_heads {
            let q = &qkv[h * hd..(h + 1) * hd];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(q, &keys[j * d + h * hd..j * d + (h + 1) * hd]) * scale;
            }
            softmax_in_place(&mut row);
            let o = &mut attn[h * hd..(h + 1) * hd];
            for (j, &pj) in row.iter().enumerate() {
                for (oi, &vi) in o.iter_mut().zip(&values[j * d + h * hd..j * d + (h + 1) * hd]) {
                    *oi += pj * vi;
                }
            }
        }
        let proj = linear(&attn, slice(p, lo.w_o, d * d), slice(p, lo.b_o, d), 1, d, d);
        let x_mid: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let (h2, _) = layer_norm(&x_mid, slice(p, lo.ln2_g, d), slice(p, lo.ln2_b, d), 1, d);
        let act: Vec<f64> = linear(&h2, slice(p, lo.w_fc, d * f), slice(p, lo.b_fc, f), 1, d, f)
            .into_iter()
            .map(gelu)
            .collect();
        let mlp = linear(&act, slice(p, lo.w_proj, f * d), slice(p, lo.b_proj, d), 1, f, d);
        x = x_mid.iter().zip(&mlp).map(|(a, b)| a + b).collect();
    }
    cache.len += 1;
    layer_norm(&x, slice(p, layout.lnf_g, d), slice(p, layout.lnf_b, d), 1, d).0
}
