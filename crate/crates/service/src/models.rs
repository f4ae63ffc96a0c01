use std::path::{Path, PathBuf};
use std::sync::Arc;

use claimforge::dataset::Vocabulary;
use claimforge::generate::{GeneratorOptions, ModelSet};
use claimforge::nn::{load_checkpoint, Checkpoint};
use serde::Serialize;

use crate::config::ServiceConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointStatus {
    pub role: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub loaded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// An immutable snapshot of everything a request may use. Swapped whole.
#[derive(Debug, Clone, Default)]
pub struct LoadedModels {
    pub set: Option<Arc<ModelSet>>,
    pub checkpoints: Vec<CheckpointStatus>,
}

impl LoadedModels {
    pub fn from_set(set: ModelSet) -> Self {
        let mut checkpoints = Vec::new();
        for (role, m) in [("forward", &set.forward), ("backward", &set.backward)] {
            if let Some(m) = m {
                checkpoints.push(CheckpointStatus {
                    role: role.into(),
                    path: None,
                    loaded: true,
                    step: Some(m.step()),
                    vocab_hash: Some(m.vocab_hash().to_string()),
                    error: None,
                });
            }
        }
        if let Some(r) = &set.relevancy {
            checkpoints.push(CheckpointStatus {
                role: "relevancy".into(),
                path: None,
                loaded: true,
                step: Some(r.step()),
                vocab_hash: Some(r.vocab_hash().to_string()),
                error: None,
            });
        }
        LoadedModels { set: Some(Arc::new(set)), checkpoints }
    }

    /// Loads what the config names. Failures are recorded, not fatal: the
    /// service starts degraded.
    pub fn load(config: &ServiceConfig) -> Self {
        let options = GeneratorOptions { lambda: config.lambda, oversample: config.oversample };
        let Some(vocab_path) = &config.vocabulary else {
            return LoadedModels { set: None, checkpoints: vec![missing("vocabulary", None, "not configured")] };
        };
        let vocab = match Vocabulary::load(vocab_path) {
            Ok(v) => Arc::new(v),
            Err(e) => return LoadedModels { set: None, checkpoints: vec![missing("vocabulary", Some(vocab_path), &e.to_string())] },
        };
        let mut set = ModelSet::new(vocab.clone());
        set.options = options;
        let mut checkpoints = Vec::new();
        let roles = [
            ("forward", &config.forward_checkpoint),
            ("backward", &config.backward_checkpoint),
            ("relevancy", &config.relevancy_checkpoint),
        ];
        for (role, path) in roles {
            let Some(path) = path else { continue };
            let status = match load_checkpoint(path) {
                Err(e) => missing(role, Some(path), &e.to_string()),
                Ok(ckpt) if ckpt.vocab_hash() != vocab.hash() => missing(role, Some(path), "vocabulary hash mismatch"),
                Ok(ckpt) => {
                    let status = CheckpointStatus {
                        role: role.into(),
                        path: Some(path.clone()),
                        loaded: true,
                        step: Some(ckpt.step()),
                        vocab_hash: Some(ckpt.vocab_hash().to_string()),
                        error: None,
                    };
                    match (role, ckpt) {
                        ("relevancy", Checkpoint::Classifier(c)) => set = set.with_relevancy(c),
                        ("forward", Checkpoint::Decoder(d)) => set = set.with_forward(d),
                        ("backward", Checkpoint::Decoder(d)) => set = set.with_backward(d),
                        _ => {
                            checkpoints.push(missing(role, Some(path), "wrong model kind"));
                            continue;
                        }
                    }
                    status
                }
            };
            checkpoints.push(status);
        }
        LoadedModels { set: Some(Arc::new(set)), checkpoints }
    }

    pub fn vocab_hash(&self) -> Option<&str> {
        self.set.as_ref().map(|s| s.vocab.hash())
    }

    /// Healthy when a vocabulary and a forward decoder are loaded and every
    /// configured checkpoint loaded.
    pub fn healthy(&self) -> bool {
        self.set.as_ref().is_some_and(|s| s.forward.is_some()) && self.checkpoints.iter().all(|c| c.loaded)
    }
}

fn missing(role: &str, path: Option<&Path>, error: &str) -> CheckpointStatus {
    CheckpointStatus {
        role: role.into(),
        path: path.map(Path::to_path_buf),
        loaded: false,
        step: None,
        vocab_hash: None,
        error: Some(error.to_string()),
    }
}
