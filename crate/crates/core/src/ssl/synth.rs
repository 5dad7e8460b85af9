//! Synthetic token-sequence corpus: each token has a prototype frame and
//! utterances hold noisy, variable-length runs of those prototypes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::numcore::{SeededRng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenCorpusConfig {
    /// Number of non-blank tokens; labels are `1..=vocab`.
    pub vocab: usize,
    pub input_dim: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub noise: f64,
    pub frame_period_ms: f64,
}

impl Default for TokenCorpusConfig {
    fn default() -> Self {
        Self {
            vocab: 6,
            input_dim: 16,
            min_tokens: 3,
            max_tokens: 6,
            min_frames_per_token: 2,
            max_frames_per_token: 4,
            noise: 0.3,
            frame_period_ms: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureSequence,
    pub tokens: Vec<usize>,
    pub frame_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCorpus {
    /// `vocab × input_dim`; row `k-1` is token `k`.
    pub prototypes: Tensor,
    pub utterances: Vec<Utterance>,
}

pub fn generate_token_corpus(seed: u64, num_utterances: usize, cfg: &TokenCorpusConfig) -> Result<TokenCorpus> {
    if cfg.vocab == 0 || cfg.input_dim == 0 {
        return Err(Error::invalid("token corpus needs vocab and input dim ≥ 1"));
    }
    if cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens {
        return Err(Error::invalid("token count range must satisfy 1 ≤ min ≤ max"));
    }
    if cfg.min_frames_per_token == 0 || cfg.min_frames_per_token > cfg.max_frames_per_token {
        return Err(Error::invalid("frames-per-token range must satisfy 1 ≤ min ≤ max"));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::invalid(format!("noise must be non-negative, got {}", cfg.noise)));
    }
    let mut rng = SeededRng::new(seed);
    let d = cfg.input_dim;
    let prototypes = Tensor::matrix(cfg.vocab, d, (0..cfg.vocab * d).map(|_| rng.normal()).collect())?;
    let mut utterances = Vec::with_capacity(num_utterances);
    for u in 0..num_utterances {
        let n_tok = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
        let mut tokens = Vec::with_capacity(n_tok);
        let mut frame_labels = Vec::new();
        let mut data = Vec::new();
        for _ in 0..n_tok {
            let tok = 1 + rng.below(cfg.vocab);
            tokens.push(tok);
            let span = cfg.min_frames_per_token + rng.below(cfg.max_frames_per_token - cfg.min_frames_per_token + 1);
            for _ in 0..span {
                frame_labels.push(tok);
                data.extend(prototypes.row(tok - 1).iter().map(|p| p + cfg.noise * rng.normal()));
            }
        }
        let features = FeatureSequence::new(
            Tensor::matrix(frame_labels.len(), d, data)?,
            cfg.frame_period_ms,
            FeatureKind::Fbk,
        )?;
        utterances.push(Utterance {
            id: format!("utt{u:04}"),
            features,
            tokens,
            frame_labels,
        });
    }
    Ok(TokenCorpus { prototypes, utterances })
}
