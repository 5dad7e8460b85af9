//! Desk-scale end-to-end run: SSL pre-training with a bottleneck, feature
//! extraction and fusion with filter-bank features, frame-level joint
//! decoding, N-best rescoring, scoring and significance testing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bottleneck::{BottleneckConfig, BottleneckPosition};
use crate::combine::{joint_decode, preset, rescore_nbest, truncate_nbest, FrameScoreStream, Hypothesis, NBestList, DEFAULT_NBEST};
use crate::error::{Error, Result};
use crate::eval::{align_and_count, mapsswe, wer, ScoredTranscriptSet, SignificanceReport, TranscriptRecord, WerReport, DEFAULT_ALPHA};
use crate::features::{fuse_features, FeatureKind, FeatureSequence};
use crate::numcore::{SeededRng, Tensor};
use crate::ssl::network::{ContextConfig, SslConfig};
use crate::ssl::synth::{generate_token_corpus, TokenCorpusConfig, Utterance};
use crate::ssl::train::{Objective, SslTrainConfig, SslTrainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmokeConfig {
    pub seed: u64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub steps: usize,
    pub num_blocks: usize,
    pub model_dim: usize,
    pub bottleneck_dim: usize,
    pub position: BottleneckPosition,
    pub fbk_dim: usize,
    pub frame_preset: String,
    pub rescore_preset: String,
    pub nbest_candidates: usize,
    pub nbest: usize,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            train_utterances: 24,
            test_utterances: 12,
            steps: 50,
            num_blocks: 4,
            model_dim: 64,
            bottleneck_dim: 256,
            position: BottleneckPosition::AfterLastBlock,
            fbk_dim: 40,
            frame_preset: "uaspeech-3way".into(),
            rescore_preset: "uaspeech-rescore".into(),
            nbest_candidates: 40,
            nbest: DEFAULT_NBEST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub seed: u64,
    pub optimizer_steps: u64,
    pub training_losses: Vec<f64>,
    pub ssl_frames: usize,
    pub extracted_frames: usize,
    pub extracted_dim: usize,
    pub fused_dim: usize,
    pub frame_weights: Vec<f64>,
    pub rescore_weights: BTreeMap<String, f64>,
    pub nbest_depth: usize,
    pub wer: BTreeMap<String, WerReport>,
    /// Joint decoding against the fused-feature system alone.
    pub significance: SignificanceReport,
}

const SYSTEMS: [&str; 3] = ["ctc", "attention", "tdnn"];

fn symbol(k: usize) -> String {
    format!("t{k}")
}

/// Labels at the doubled frame rate, so each input frame covers two.
fn upsampled(labels: &[usize]) -> Vec<usize> {
    labels.iter().flat_map(|&l| [l, l]).collect()
}

fn collapse(labels: &[usize]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut prev = None;
    for &l in labels {
        if prev != Some(l) {
            out.push(symbol(l));
        }
        prev = Some(l);
    }
    out
}

fn log_softmax_rows(rows: Vec<Vec<f64>>) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            r.into_iter().map(|x| x - lse).collect()
        })
        .collect();
    Tensor::from_rows(&rows)
}

/// 40-d filter-bank stand-in at 10 ms: a fixed projection of the token
/// prototype plus noise.
fn synthetic_fbk(u: &Utterance, prototypes: &Tensor, proj: &Tensor, rng: &mut SeededRng) -> Result<FeatureSequence> {
    let labels = upsampled(&u.frame_labels);
    let (dim, src) = (proj.rows(), proj.cols());
    let mut data = Vec::with_capacity(labels.len() * dim);
    for &l in &labels {
        let p = prototypes.row(l - 1);
        for i in 0..dim {
            let v: f64 = (0..src).map(|j| proj.get(i, j) * p[j]).sum();
            data.push(v + 1.0 * rng.normal());
        }
    }
    FeatureSequence::new(Tensor::matrix(labels.len(), dim, data)?, 10.0, FeatureKind::Fbk)
}

/// Diagonal Gaussian classifier with a variance shared across classes,
/// standing in for a back-end trained on the fused features.
struct CentroidScorer {
    means: Vec<Vec<f64>>,
    inv_var: Vec<f64>,
}

impl CentroidScorer {
    fn fit(data: &[(FeatureSequence, Vec<usize>)], vocab: usize) -> Result<Self> {
        let d = data[0].0.dim();
        let mut sums = vec![vec![0.0; d]; vocab];
        let mut counts = vec![0usize; vocab];
        for (x, labels) in data {
            for (t, &l) in labels.iter().enumerate() {
                counts[l - 1] += 1;
                for (s, v) in sums[l - 1].iter_mut().zip(x.row(t)) {
                    *s += v;
                }
            }
        }
        let means: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
            .collect();
        let mut var = vec![0.0; d];
        let mut n = 0usize;
        for (x, labels) in data {
            for (t, &l) in labels.iter().enumerate() {
                for ((v, a), m) in var.iter_mut().zip(x.row(t)).zip(&means[l - 1]) {
                    *v += (a - m) * (a - m);
                }
                n += 1;
            }
        }
        let inv_var = var.into_iter().map(|v| 1.0 / (v / n as f64).max(1e-6)).collect();
        Ok(Self { means, inv_var })
    }

    fn scores(&self, x: &FeatureSequence) -> Result<Tensor> {
        log_softmax_rows(
            (0..x.num_frames())
                .map(|t| {
                    self.means
                        .iter()
                        .map(|m| {
                            -0.5 * x
                                .row(t)
                                .iter()
                                .zip(m)
                                .zip(&self.inv_var)
                                .map(|((a, b), w)| w * (a - b) * (a - b))
                                .sum::<f64>()
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

/// A weaker system: noisy one-hot evidence for the true label.
fn toy_stream(labels: &[usize], vocab: usize, noise: f64, rng: &mut SeededRng) -> Result<Tensor> {
    log_softmax_rows(
        labels
            .iter()
            .map(|&l| (1..=vocab).map(|k| if k == l { 3.0 } else { 0.0 } + noise * rng.normal()).collect())
            .collect(),
    )
}

/// Candidate hypotheses around `seed_hyp`: the hypothesis itself, then
/// single substitutions, deletions and insertions in a fixed order.
fn candidates(seed_hyp: &[String], vocab: usize, limit: usize) -> Vec<Vec<String>> {
    let mut out = vec![seed_hyp.to_vec()];
    let push = |h: Vec<String>, out: &mut Vec<Vec<String>>| {
        if !h.is_empty() && !out.contains(&h) && out.len() < limit {
            out.push(h);
        }
    };
    for i in 0..seed_hyp.len() {
        for k in 1..=vocab {
            let mut h = seed_hyp.to_vec();
            h[i] = symbol(k);
            push(h, &mut out);
        }
        let mut h = seed_hyp.to_vec();
        h.remove(i);
        push(h, &mut out);
    }
    for i in 0..=seed_hyp.len() {
        for k in 1..=vocab {
            let mut h = seed_hyp.to_vec();
            h.insert(i, symbol(k));
            push(h, &mut out);
        }
    }
    out
}

pub fn run_smoke(cfg: &SmokeConfig) -> Result<SmokeReport> {
    if cfg.train_utterances == 0 || cfg.test_utterances < 2 {
        return Err(Error::invalid("smoke run needs training data and at least two test utterances"));
    }
    let frame_preset = preset(&cfg.frame_preset)?;
    let rescore_preset = preset(&cfg.rescore_preset)?;
    if frame_preset.ratios.len() != 3 || rescore_preset.names.len() != 3 {
        return Err(Error::invalid("smoke run combines exactly three systems"));
    }
    let corpus_cfg = TokenCorpusConfig::default();
    let vocab = corpus_cfg.vocab;
    let corpus = generate_token_corpus(cfg.seed, cfg.train_utterances + cfg.test_utterances, &corpus_cfg)?;
    let (train, test) = corpus.utterances.split_at(cfg.train_utterances);

    let batch_size = 4;
    let config = SslTrainConfig {
        objective: Objective::Hubert,
        model: SslConfig {
            input_dim: corpus_cfg.input_dim,
            frame_period_ms: corpus_cfg.frame_period_ms,
            context: ContextConfig {
                num_blocks: cfg.num_blocks,
                model_dim: cfg.model_dim,
                ..ContextConfig::default()
            },
            bottleneck: Some(BottleneckConfig {
                inner_dim: cfg.bottleneck_dim,
                position: cfg.position,
                output_stride_ms: 10.0,
                dropout: 0.0,
                ..BottleneckConfig::default()
            }),
        },
        seed: cfg.seed,
        epochs: cfg.steps.div_ceil(train.len().div_ceil(batch_size)).max(1),
        batch_size,
        max_steps: Some(cfg.steps),
        ..SslTrainConfig::default()
    };
    let mut trainer = SslTrainer::new(config, train)?;
    let logs = trainer.train(train, |_| {})?;

    let mut rng = SeededRng::derived(cfg.seed, 0x5eed);
    let proj = Tensor::matrix(
        cfg.fbk_dim,
        corpus_cfg.input_dim,
        (0..cfg.fbk_dim * corpus_cfg.input_dim).map(|_| rng.normal() / (corpus_cfg.input_dim as f64).sqrt()).collect(),
    )?;
    let fused = |u: &Utterance, rng: &mut SeededRng| -> Result<(FeatureSequence, usize)> {
        let ssl = trainer.extract(&u.features)?;
        let fbk = synthetic_fbk(u, &corpus.prototypes, &proj, rng)?;
        Ok((fuse_features(&fbk, &ssl)?, ssl.dim()))
    };
    let mut fit_data = Vec::new();
    for u in train {
        let (x, _) = fused(u, &mut rng)?;
        fit_data.push((x, upsampled(&u.frame_labels)));
    }
    let scorer = CentroidScorer::fit(&fit_data, vocab)?;

    let inventory: Vec<String> = (1..=vocab).map(symbol).collect();
    let frame_weights = frame_preset.normalized();
    let rescore_weights = rescore_preset.named();
    let mut records: BTreeMap<String, Vec<TranscriptRecord>> = BTreeMap::new();
    let (mut ssl_frames, mut extracted_frames, mut extracted_dim, mut fused_dim) = (0, 0, 0, 0);
    for u in test {
        let labels = upsampled(&u.frame_labels);
        let (x, dim) = fused(u, &mut rng)?;
        ssl_frames += u.features.num_frames();
        extracted_frames += x.num_frames();
        extracted_dim = dim;
        fused_dim = x.dim();
        let streams = vec![
            FrameScoreStream::new(u.id.clone(), inventory.clone(), scorer.scores(&x)?, 10.0)?,
            FrameScoreStream::new(u.id.clone(), inventory.clone(), toy_stream(&labels, vocab, 0.9, &mut rng)?, 10.0)?,
            FrameScoreStream::new(u.id.clone(), inventory.clone(), toy_stream(&labels, vocab, 1.1, &mut rng)?, 10.0)?,
        ];
        let reference = collapse(&labels);
        let mut record = |system: &str, hyp: Vec<String>| {
            records.entry(system.to_string()).or_default().push(TranscriptRecord {
                utt_id: u.id.clone(),
                reference: reference.clone(),
                hypothesis: hyp,
                metadata: BTreeMap::new(),
            });
        };
        let singles: Vec<Vec<String>> = streams
            .iter()
            .map(|s| joint_decode(std::slice::from_ref(s), &[1.0]).map(|o| o.readout(None)))
            .collect::<Result<_>>()?;
        for (name, hyp) in SYSTEMS.iter().zip(&singles) {
            record(name, hyp.clone());
        }
        let joint = joint_decode(&streams, &frame_weights)?.readout(None);
        record("joint", joint.clone());

        // each system scores a candidate by its distance to its own output
        let hyps = candidates(&joint, vocab, cfg.nbest_candidates)
            .into_iter()
            .map(|h| {
                let scores = SYSTEMS
                    .iter()
                    .zip(&singles)
                    .map(|(name, own)| {
                        let d = align_and_count(own, &h).counts.errors() as f64;
                        (name.to_string(), d + 0.01 * rng.uniform())
                    })
                    .collect();
                Hypothesis {
                    text: h.join(" "),
                    tokens: h,
                    scores,
                }
            })
            .collect();
        let list = truncate_nbest(&NBestList { utt_id: u.id.clone(), hyps }, cfg.nbest)?;
        let best = rescore_nbest(&list, &rescore_weights)?.best;
        record("rescore", list.hyps[best].tokens.clone());
    }

    let mut sets = BTreeMap::new();
    for (name, recs) in records {
        sets.insert(name, ScoredTranscriptSet::new(recs)?);
    }
    let wer = sets
        .iter()
        .map(|(k, s)| wer(s, None).map(|r| (k.clone(), r)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let significance = mapsswe(&sets["joint"], &sets["ctc"], DEFAULT_ALPHA)?;
    Ok(SmokeReport {
        seed: cfg.seed,
        optimizer_steps: trainer.steps_taken(),
        training_losses: logs.iter().map(|l| l.mean_loss).collect(),
        ssl_frames,
        extracted_frames,
        extracted_dim,
        fused_dim,
        frame_weights,
        rescore_weights,
        nbest_depth: cfg.nbest,
        wer,
        significance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_lists_are_deduplicated_and_bounded() {
        let seed: Vec<String> = ["t1", "t2"].iter().map(|s| s.to_string()).collect();
        let c = candidates(&seed, 3, 40);
        assert_eq!(c[0], seed);
        assert!(c.len() <= 40);
        for (i, h) in c.iter().enumerate() {
            assert!(!c[..i].contains(h));
        }
    }
}
