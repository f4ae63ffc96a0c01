//! Flat parameter storage with named, shaped views.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub(crate) wte: usize,
    pub(crate) wpe: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) head_w: Option<usize>,
    pub(crate) head_b: Option<usize>,
    pub total: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    next: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        let spec = TensorSpec { name, shape, offset };
        self.next += spec.len();
        self.tensors.push(spec);
        offset
    }
}

impl Layout {
    /// Decoder layout when `num_labels` is `None`, encoder with head otherwise.
    pub fn new(config: &ModelConfig, num_labels: Option<usize>) -> Self {
        let d = config.d_model;
        let f = config.d_ff;
        let mut b = Builder { tensors: Vec::new(), next: 0 };
        let wte = b.push("wte".into(), vec![config.vocab_size, d]);
        let wpe = b.push("wpe".into(), vec![config.context_len, d]);
        let layers = (0..config.n_layers)
            .map(|i| LayerOffsets {
                ln1_g: b.push(format!("h{i}.ln1.g"), vec![d]),
                ln1_b: b.push(format!("h{i}.ln1.b"), vec![d]),
                w_qkv: b.push(format!("h{i}.attn.w_qkv"), vec![d, 3 * d]),
                b_qkv: b.push(format!("h{i}.attn.b_qkv"), vec![3 * d]),
                w_o: b.push(format!("h{i}.attn.w_o"), vec![d, d]),
                b_o: b.push(format!("h{i}.attn.b_o"), vec![d]),
                ln2_g: b.push(format!("h{i}.ln2.g"), vec![d]),
                ln2_b: b.push(format!("h{i}.ln2.b"), vec![d]),
                w_fc: b.push(format!("h{i}.mlp.w_fc"), vec![d, f]),
                b_fc: b.push(format!("h{i}.mlp.b_fc"), vec![f]),
                w_proj: b.push(format!("h{i}.mlp.w_proj"), vec![f, d]),
                b_proj: b.push(format!("h{i}.mlp.b_proj"), vec![d]),
            })
            .collect();
        let lnf_g = b.push("ln_f.g".into(), vec![d]);
        let lnf_b = b.push("ln_f.b".into(), vec![d]);
        let (head_w, head_b) = match num_labels {
            Some(l) => (
                Some(b.push("head.w".into(), vec![d, l])),
                Some(b.push("head.b".into(), vec![l])),
            ),
            None => (None, None),
        };
        Layout { tensors: b.tensors, wte, wpe, layers, lnf_g, lnf_b, head_w, head_b, total: b.next }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".g")
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.contains(".b_")
}

/// Weights ~ N(0, 0.02), layer-norm gains 1, biases 0.
pub(crate) fn init_params(layout: &Layout, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut data = vec![0.0; layout.total];
    for t in &layout.tensors {
        let slot = &mut data[t.range()];
        if is_gain(&t.name) {
            slot.fill(1.0);
        } else if !is_bias(&t.name) {
            for v in slot.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let cfg = ModelConfig::tiny(11);
        let layout = Layout::new(&cfg, Some(2));
        let mut next = 0;
        for t in &layout.tensors {
            assert_eq!(t.offset, next);
            next += t.len();
        }
        assert_eq!(next, layout.total);
        assert!(layout.get("head.w").is_some());
        assert!(Layout::new(&cfg, None).get("head.w").is_none());
    }

    #[test]
    fn init_roles() {
        let cfg = ModelConfig::tiny(11);
        let layout = Layout::new(&cfg, None);
        let p = init_params(&layout, 3);
        let g = layout.get("h0.ln1.g").unwrap();
        assert!(p[g.range()].iter().all(|&v| v == 1.0));
        let b = layout.get("h0.attn.b_qkv").unwrap();
        assert!(p[b.range()].iter().all(|&v| v == 0.0));
        let w = layout.get("wte").unwrap();
        assert!(p[w.range()].iter().any(|&v| v != 0.0));
    }
}
