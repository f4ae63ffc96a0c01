use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::{ClassifierMode, DecoderLm, EncoderClassifier, LabeledSequence};
use super::{ModelConfig, ModelKind, NnError};
use crate::dataset::TokenId;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-4;
/// Denominator floor so that gradients which are zero in both computations
/// (up to rounding) do not produce huge relative errors.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub parameters_checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compare analytic gradients with central finite differences on every
/// parameter. Weights are jittered first so gains and biases leave their
/// init values and every code path carries signal.
pub fn gradient_check(kind: ModelKind, config: ModelConfig) -> Result<GradCheckReport, NnError> {
    config.validate()?;
    if config.d_model > 16 || config.n_layers > 2 {
        return Err(NnError::InvalidConfig("gradient check needs d_model <= 16 and n_layers <= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6772_6164);
    let jitter = Normal::new(0.0, 0.3).expect("valid std");
    let vocab = config.vocab_size as TokenId;
    let seq = |rng: &mut ChaCha8Rng, max: usize| -> Vec<TokenId> {
        let len = rng.random_range(2..=max);
        (0..len).map(|_| rng.random_range(0..vocab)).collect()
    };
    match kind {
        ModelKind::Decoder => {
            let mut model = DecoderLm::new(config, "gradcheck")?;
            model.params.iter_mut().for_each(|p| *p += jitter.sample(&mut rng));
            let batch: Vec<Vec<TokenId>> = (0..2).map(|_| seq(&mut rng, config.context_len + 1)).collect();
            let refs: Vec<&[TokenId]> = batch.iter().map(Vec::as_slice).collect();
            let mut grad = vec![0.0; model.params.len()];
            model.loss_and_grad(&refs, Some(&mut grad))?;
            let layout = model.layout.clone();
            compare(&mut model, &grad, &layout, |m| &mut m.params, |m| m.loss_and_grad(&refs, None))
        }
        ModelKind::Classifier => {
            let mut model = EncoderClassifier::new(config, ClassifierMode::Cpc, "gradcheck")?;
            model.params.iter_mut().for_each(|p| *p += jitter.sample(&mut rng));
            let batch: Vec<LabeledSequence> = (0..2)
                .map(|_| {
                    let ids = seq(&mut rng, config.context_len);
                    let labels = (0..9).filter(|_| rng.random_bool(0.3)).collect();
                    LabeledSequence { ids, labels }
                })
                .collect();
            let refs: Vec<&LabeledSequence> = batch.iter().collect();
            let mut grad = vec![0.0; model.params.len()];
            model.loss_and_grad(&refs, Some(&mut grad))?;
            let layout = model.layout.clone();
            compare(&mut model, &grad, &layout, |m| &mut m.params, |m| m.loss_and_grad(&refs, None))
        }
    }
}

fn compare<M>(
    model: &mut M,
    grad: &[f64],
    layout: &super::Layout,
    params: impl Fn(&mut M) -> &mut Vec<f64>,
    loss: impl Fn(&M) -> Result<f64, NnError>,
) -> Result<GradCheckReport, NnError> {
    let mut worst = (0.0f64, String::new());
    for t in &layout.tensors {
        for i in t.range() {
            let orig = params(model)[i];
            params(model)[i] = orig + GRADCHECK_STEP;
            let up = loss(model)?;
            params(model)[i] = orig - GRADCHECK_STEP;
            let down = loss(model)?;
            params(model)[i] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let err = rel_error(grad[i], numeric);
            if !(err <= worst.0) {
                worst = (err, t.name.clone());
            }
        }
    }
    Ok(GradCheckReport { max_rel_error: worst.0, worst_tensor: worst.1, parameters_checked: layout.total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_gradients_match() {
        for seed in 0..3 {
            let r = gradient_check(ModelKind::Decoder, ModelConfig::tiny(11).with_seed(seed)).unwrap();
            assert!(r.max_rel_error < 1e-3, "{r:?}");
        }
    }

    #[test]
    fn two_layer_decoder_gradients_match() {
        let cfg = ModelConfig { n_layers: 2, n_heads: 4, d_model: 16, d_ff: 24, context_len: 6, vocab_size: 9, seed: 3 };
        let r = gradient_check(ModelKind::Decoder, cfg).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn classifier_gradients_match() {
        for seed in 0..3 {
            let r = gradient_check(ModelKind::Classifier, ModelConfig::tiny(11).with_seed(seed)).unwrap();
            assert!(r.max_rel_error < 1e-3, "{r:?}");
        }
    }

    #[test]
    fn oversized_config_rejected() {
        assert!(gradient_check(ModelKind::Decoder, ModelConfig::toy(50)).is_err());
    }

    #[test]
    fn saturated_batch_stays_finite() {
        // Scale the embedding so the tied output saturates; the target is the argmax.
        let mut lm = DecoderLm::new(ModelConfig::tiny(4).with_seed(1), "h").unwrap();
        let wte = lm.layout.get("wte").unwrap().range();
        lm.params[wte].iter_mut().for_each(|p| *p *= 1e4);
        let logits = lm.forward(&[2, 2, 2]).unwrap();
        let target = (0..4).max_by(|&a, &b| logits.row(2)[a].total_cmp(&logits.row(2)[b])).unwrap() as TokenId;
        let seq = vec![2, 2, 2, target];
        let mut grad = vec![0.0; lm.params.len()];
        let loss = lm.loss_and_grad(&[&seq], Some(&mut grad)).unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
