//! Training loop for the four SSL objectives on a shared model.
//!
//! Every utterance draws its masks, distractors and noise from an RNG keyed
//! by `(seed, epoch, utterance id)`, so a batch loss does not depend on the
//! order of its utterances and a resumed run replays the same trajectory.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::formats::mdl::ModelFile;
use crate::numcore::nn::Linear;
use crate::numcore::{Binding, LrSchedule, Optimizer, OptimizerKind, ParamId, ParamStore, SeededRng, Tape, Tensor, Var};

use super::ctc::ctc_loss_var;
use super::ema::EmaTeacher;
use super::losses::{
    contrastive_diversity_loss, data2vec_loss, masked_prediction_loss, sample_distractors, DEFAULT_ALPHA, DEFAULT_BETA,
    DEFAULT_DISTRACTORS, DEFAULT_KAPPA, DEFAULT_TAU,
};
use super::mask::MaskSpec;
use super::network::{SslConfig, SslModel};
use super::quantizer::{GumbelQuantizer, KMeansQuantizer};
use super::synth::Utterance;

pub const ARCHITECTURE: &str = "ssl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Wav2vec2,
    Hubert,
    Data2vec,
    Ctc,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Wav2vec2, Objective::Hubert, Objective::Data2vec, Objective::Ctc];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Wav2vec2 => "wav2vec2",
            Objective::Hubert => "hubert",
            Objective::Data2vec => "data2vec",
            Objective::Ctc => "ctc",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown objective `{s}` (expected wav2vec2, hubert, data2vec or ctc)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslTrainConfig {
    pub objective: Objective,
    pub model: SslConfig,
    pub mask: MaskSpec,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop after this many optimizer steps, whatever the epoch count.
    pub max_steps: Option<usize>,

    pub distractors: usize,
    pub kappa: f64,
    pub alpha: f64,
    pub codebooks: usize,
    pub codebook_entries: usize,
    pub code_dim: usize,
    pub gumbel_temperature: f64,

    pub kmeans_sizes: Vec<usize>,
    pub kmeans_iterations: usize,
    pub tau: f64,
    pub target_dim: usize,

    /// Weight on the student in the teacher update.
    pub ema_gamma: f64,
    pub top_k: usize,
    pub beta: f64,

    /// Non-blank output tokens for CTC; the blank is class 0.
    pub vocab: usize,
}

impl Default for SslTrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Hubert,
            model: SslConfig::default(),
            mask: MaskSpec::default(),
            seed: 0,
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            max_steps: None,
            distractors: DEFAULT_DISTRACTORS,
            kappa: DEFAULT_KAPPA,
            alpha: DEFAULT_ALPHA,
            codebooks: 2,
            codebook_entries: 8,
            code_dim: 8,
            gumbel_temperature: 1.0,
            kmeans_sizes: vec![8, 12],
            kmeans_iterations: 25,
            tau: DEFAULT_TAU,
            target_dim: 16,
            ema_gamma: 0.01,
            top_k: 2,
            beta: DEFAULT_BETA,
            vocab: 6,
        }
    }
}

impl SslTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.context.validate()?;
        self.mask.validate()?;
        if let Some(bn) = &self.model.bottleneck {
            bn.validate()?;
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be ≥ 0, got {}", self.learning_rate)));
        }
        match self.objective {
            Objective::Wav2vec2 => {
                if self.distractors == 0 || !(self.kappa > 0.0) || !(self.gumbel_temperature > 0.0) {
                    return Err(Error::invalid("wav2vec2 needs ≥1 distractor and positive kappa / temperature"));
                }
            }
            Objective::Hubert => {
                if self.kmeans_sizes.is_empty() || self.kmeans_sizes.contains(&0) || !(self.tau > 0.0) {
                    return Err(Error::invalid("hubert needs non-empty positive k-means sizes and tau > 0"));
                }
            }
            Objective::Data2vec => {
                if !(0.0..=1.0).contains(&self.ema_gamma) {
                    return Err(Error::invalid(format!("EMA decay must be in [0, 1], got {}", self.ema_gamma)));
                }
                if self.top_k == 0 || self.top_k > self.model.context.num_blocks {
                    return Err(Error::invalid(format!(
                        "top-K depth {} must be in 1..={}",
                        self.top_k, self.model.context.num_blocks
                    )));
                }
                if !(self.beta > 0.0) {
                    return Err(Error::invalid("beta must be positive"));
                }
            }
            Objective::Ctc => {
                if self.vocab == 0 {
                    return Err(Error::invalid("CTC needs at least one output token"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Head {
    Wav2vec2 {
        quantizer: GumbelQuantizer,
        final_proj: Linear,
    },
    Hubert {
        kmeans: KMeansQuantizer,
        projections: Vec<ParamId>,
        codewords: Vec<ParamId>,
    },
    Data2vec {
        regression: Linear,
        teacher: EmaTeacher,
    },
    Ctc {
        output: Linear,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct SslTrainer {
    pub config: SslTrainConfig,
    pub params: ParamStore,
    pub model: SslModel,
    head: Head,
    optimizer: Optimizer,
    epochs_done: usize,
}

/// FNV-1a, stable across platforms and releases.
fn stable_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn utterance_rng(stream: u64, id: &str) -> SeededRng {
    SeededRng::derived(stream, stable_hash(id))
}

fn stack_frames(corpus: &[Utterance]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = corpus
        .iter()
        .flat_map(|u| (0..u.features.num_frames()).map(|t| u.features.row(t).to_vec()).collect::<Vec<_>>())
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("training corpus has no frames"));
    }
    Tensor::from_rows(&rows)
}

impl SslTrainer {
    /// Fresh model; `corpus` seeds the k-means targets for HuBERT-style
    /// training and fixes the step count of the learning-rate schedule.
    pub fn new(config: SslTrainConfig, corpus: &[Utterance]) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let mut params = ParamStore::new();
        let model = SslModel::new(&mut params, config.model.clone(), &mut rng)?;
        let d = model.model_dim();
        let head = match config.objective {
            Objective::Wav2vec2 => {
                let quantizer = GumbelQuantizer::new(
                    &mut params,
                    "quantizer",
                    d,
                    config.codebooks,
                    config.codebook_entries,
                    config.code_dim,
                    d,
                    config.gumbel_temperature,
                    &mut rng,
                )?;
                let final_proj = Linear::new(&mut params, "final_proj", d, d, &mut rng);
                Head::Wav2vec2 { quantizer, final_proj }
            }
            Objective::Hubert => {
                let kmeans = KMeansQuantizer::fit(
                    &stack_frames(corpus)?,
                    &config.kmeans_sizes,
                    config.kmeans_iterations,
                    config.seed,
                )?;
                let e = config.target_dim;
                let mut projections = Vec::new();
                let mut codewords = Vec::new();
                for (g, &v) in config.kmeans_sizes.iter().enumerate() {
                    projections.push(params.add_glorot(format!("hubert.proj{g}"), d, e, &mut rng));
                    codewords.push(params.add(
                        format!("hubert.codewords{g}"),
                        Tensor::matrix(v, e, (0..v * e).map(|_| rng.normal()).collect())?,
                    ));
                }
                Head::Hubert {
                    kmeans,
                    projections,
                    codewords,
                }
            }
            Objective::Data2vec => {
                let regression = Linear::new(&mut params, "regression", d, d, &mut rng);
                let teacher = EmaTeacher::new(&params, config.ema_gamma, config.top_k, config.model.context.num_blocks)?;
                Head::Data2vec { regression, teacher }
            }
            Objective::Ctc => Head::Ctc {
                output: Linear::new(&mut params, "ctc_output", d, config.vocab + 1, &mut rng),
            },
        };
        let steps_per_epoch = corpus.len().div_ceil(config.batch_size) as u64;
        let mut total = steps_per_epoch * config.epochs as u64;
        if let Some(m) = config.max_steps {
            total = total.min(m as u64);
        }
        let optimizer = Optimizer::new(
            OptimizerKind::adam(),
            config.learning_rate,
            LrSchedule::LinearDecay {
                total_steps: total.max(1),
            },
            &params,
        )?;
        Ok(Self {
            config,
            params,
            model,
            head,
            optimizer,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn steps_taken(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// Loss of one utterance on `b`. Dropout is active when `train` is set.
    fn utterance_loss(&self, tape: &Tape, b: &Binding, utt: &Utterance, rng: &mut SeededRng, train: bool) -> Result<Var> {
        let x = tape.constant(utt.features.frames().clone());
        let t = utt.features.num_frames();
        let cfg = &self.config;
        match &self.head {
            Head::Wav2vec2 { quantizer, final_proj } => {
                let draw = cfg.mask.sample_at_least(t, 2, rng);
                if draw.masked.len() < 2 {
                    return Err(Error::invalid(format!("utterance `{}` is too short to mask", utt.id)));
                }
                let mut drop_rng = SeededRng::new(rng.next_u64());
                let fw = self.model.forward(b, &x, &draw.masked, train.then_some(&mut drop_rng))?;
                let q = quantizer.forward(b, &fw.encoded, Some(rng))?;
                let qm = q.quantized.gather_rows(&draw.masked)?;
                let cm = final_proj.forward(b, &fw.output.gather_rows(&draw.masked)?)?;
                let distractors = sample_distractors(draw.masked.len(), cfg.distractors, rng)?;
                Ok(contrastive_diversity_loss(&cm, &qm, &distractors, &q.probs, cfg.kappa, cfg.alpha)?.total)
            }
            Head::Hubert {
                kmeans,
                projections,
                codewords,
            } => {
                let labels = kmeans.assign(utt.features.frames())?;
                let draw = cfg.mask.sample_at_least(t, 1, rng);
                let mut drop_rng = SeededRng::new(rng.next_u64());
                let fw = self.model.forward(b, &x, &draw.masked, train.then_some(&mut drop_rng))?;
                let p: Vec<Var> = projections.iter().map(|&id| b.get(id).clone()).collect();
                let c: Vec<Var> = codewords.iter().map(|&id| b.get(id).clone()).collect();
                masked_prediction_loss(&fw.output, &draw.masked, &labels, &p, &c, cfg.tau)
            }
            Head::Data2vec { regression, teacher } => {
                let teacher_tape = Tape::new();
                let tb = teacher.params.bind_frozen(&teacher_tape);
                let tx = teacher_tape.constant(utt.features.frames().clone());
                let tfw = self.model.forward(&tb, &tx, &[], None)?;
                let blocks: Vec<Tensor> = tfw.blocks.iter().map(|v| (*v.value()).clone()).collect();
                let draw = cfg.mask.sample_at_least(t, 1, rng);
                let mut drop_rng = SeededRng::new(rng.next_u64());
                let fw = self.model.forward(b, &x, &draw.masked, train.then_some(&mut drop_rng))?;
                let pred = regression.forward(b, &fw.output)?;
                data2vec_loss(&pred, &blocks, teacher.top_k, cfg.beta, &draw.masked)
            }
            Head::Ctc { output } => {
                let mut drop_rng = SeededRng::new(rng.next_u64());
                let fw = self.model.forward(b, &x, &[], train.then_some(&mut drop_rng))?;
                let logp = output.forward(b, &fw.output)?.log_softmax_rows()?;
                if let Some(&bad) = utt.tokens.iter().find(|&&k| k == 0 || k > cfg.vocab) {
                    return Err(Error::invalid(format!("utterance `{}` has token {bad} outside 1..={}", utt.id, cfg.vocab)));
                }
                ctc_loss_var(&logp, &utt.tokens, 0)
            }
        }
    }

    /// Summed loss over `utts` with per-utterance randomness keyed by
    /// `stream` and no parameter update.
    pub fn eval_loss(&self, utts: &[&Utterance], stream: u64) -> Result<f64> {
        let mut total = 0.0;
        for utt in utts {
            let tape = Tape::new();
            let b = self.params.bind_frozen(&tape);
            let mut rng = utterance_rng(stream, &utt.id);
            total += self.utterance_loss(&tape, &b, utt, &mut rng, false)?.item();
        }
        Ok(total)
    }

    /// One optimizer step on `batch`; returns the mean utterance loss.
    pub fn step(&mut self, batch: &[&Utterance], stream: u64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let mut total: Option<Var> = None;
        for utt in batch {
            let mut rng = utterance_rng(stream, &utt.id);
            let l = self.utterance_loss(&tape, &b, utt, &mut rng, true)?;
            total = Some(match total {
                Some(t) => t.add(&l)?,
                None => l,
            });
        }
        let loss = total.expect("non-empty").scale(1.0 / batch.len() as f64);
        let grads = b.grads(&loss.backward()?);
        self.optimizer.step(&mut self.params, &grads)?;
        if let Head::Data2vec { teacher, .. } = &mut self.head {
            teacher.update(&self.params, self.optimizer.steps_taken() as usize)?;
        }
        Ok(loss.item())
    }

    fn at_step_limit(&self) -> bool {
        self.config
            .max_steps
            .is_some_and(|m| self.optimizer.steps_taken() >= m as u64)
    }

    /// Runs the next epoch over `corpus` in a seeded shuffled order.
    pub fn train_epoch(&mut self, corpus: &[Utterance]) -> Result<EpochLog> {
        let epoch = self.epochs_done;
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        SeededRng::derived(self.config.seed, 2 * epoch as u64 + 1).shuffle(&mut order);
        let stream = SeededRng::derived(self.config.seed, 2 * epoch as u64 + 2).next_u64();
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            if self.at_step_limit() {
                break;
            }
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &corpus[i]).collect();
            let loss = self.step(&batch, stream).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {}", epoch + 1)),
                other => other,
            })?;
            sum += loss;
            steps += 1;
        }
        self.epochs_done += 1;
        Ok(EpochLog {
            epoch: self.epochs_done,
            mean_loss: if steps > 0 { sum / steps as f64 } else { 0.0 },
            steps,
        })
    }

    /// Trains the remaining configured epochs (or until `max_steps`).
    pub fn train(&mut self, corpus: &[Utterance], mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epochs_done < self.config.epochs && !self.at_step_limit() {
            let log = self.train_epoch(corpus)?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// Bottleneck features of `features` at the bottleneck's output stride.
    pub fn extract(&self, features: &FeatureSequence) -> Result<FeatureSequence> {
        let bn = self.model.bottleneck.as_ref().ok_or_else(|| {
            Error::invalid("model has no bottleneck; available positions: none (train with a bottleneck configured)")
        })?;
        if features.dim() != self.config.model.input_dim {
            return Err(Error::shape(
                "extract",
                format!("model expects {}-dim input, got {}", self.config.model.input_dim, features.dim()),
            ));
        }
        if (features.frame_period_ms() - self.config.model.frame_period_ms).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "model expects {} ms frames, got {} ms",
                self.config.model.frame_period_ms,
                features.frame_period_ms()
            )));
        }
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let x = tape.constant(features.frames().clone());
        let fw = self.model.forward(&b, &x, &[], None)?;
        let ext = fw.extracted.expect("bottleneck present");
        FeatureSequence::new((*ext.value()).clone(), bn.config.output_stride_ms, FeatureKind::Ssl)
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut file = ModelFile::new(json!({
            "architecture": ARCHITECTURE,
            "config": serde_json::to_value(&self.config)?,
            "seed": self.config.seed,
            "epochs_done": self.epochs_done,
            "optimizer_steps": self.optimizer.steps_taken(),
            "schedule": serde_json::to_value(self.optimizer.schedule())?,
        }));
        file.push_store("param.", &self.params);
        let (m, v) = self.optimizer.moments();
        for (i, (name, t)) in self.params.iter().enumerate() {
            file.push(format!("adam.m.{name}"), Tensor::new(t.shape().to_vec(), m[i].clone())?);
            file.push(format!("adam.v.{name}"), Tensor::new(t.shape().to_vec(), v[i].clone())?);
        }
        match &self.head {
            Head::Hubert { kmeans, .. } => {
                for (g, cb) in kmeans.codebooks.iter().enumerate() {
                    file.push(format!("kmeans.{g}"), cb.clone());
                }
            }
            Head::Data2vec { teacher, .. } => file.push_store("teacher.", &teacher.params),
            _ => {}
        }
        Ok(file)
    }

    /// Restores a trainer (parameters, optimizer moments and buffers).
    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        let meta = &file.header;
        if meta.get("architecture").and_then(|a| a.as_str()) != Some(ARCHITECTURE) {
            return Err(Error::format("MDL1", "not an SSL model file"));
        }
        let config: SslTrainConfig = serde_json::from_value(
            meta.get("config")
                .cloned()
                .ok_or_else(|| Error::format("MDL1", "header lacks `config`"))?,
        )?;
        let epochs_done = meta.get("epochs_done").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        let steps = meta.get("optimizer_steps").and_then(|v| v.as_u64()).unwrap_or(0);

        // Rebuild the layout without refitting k-means: a placeholder corpus
        // is never consulted because the codebooks come from the file.
        let mut probe = config.clone();
        let kmeans_file = if config.objective == Objective::Hubert {
            let cbs = (0..config.kmeans_sizes.len())
                .map(|g| file.require(&format!("kmeans.{g}")).cloned())
                .collect::<Result<Vec<_>>>()?;
            probe.kmeans_iterations = 1;
            Some(KMeansQuantizer { codebooks: cbs })
        } else {
            None
        };
        let placeholder = placeholder_corpus(&probe)?;
        let mut trainer = Self::new(probe, &placeholder)?;
        trainer.config = config;
        if let (Head::Hubert { kmeans, .. }, Some(k)) = (&mut trainer.head, kmeans_file) {
            *kmeans = k;
        }
        file.load_store("param.", &mut trainer.params)?;
        if let Head::Data2vec { teacher, .. } = &mut trainer.head {
            file.load_store("teacher.", &mut teacher.params)?;
        }
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, _) in trainer.params.iter() {
            m.push(file.require(&format!("adam.m.{name}"))?.data().to_vec());
            v.push(file.require(&format!("adam.v.{name}"))?.data().to_vec());
        }
        let schedule: LrSchedule = serde_json::from_value(
            meta.get("schedule")
                .cloned()
                .ok_or_else(|| Error::format("MDL1", "header lacks `schedule`"))?,
        )?;
        trainer.optimizer = Optimizer::new(OptimizerKind::adam(), trainer.config.learning_rate, schedule, &trainer.params)?;
        trainer.optimizer.restore(steps, m, v)?;
        trainer.epochs_done = epochs_done;
        Ok(trainer)
    }
}

/// Enough frames for k-means to fit any configured codebook size.
fn placeholder_corpus(cfg: &SslTrainConfig) -> Result<Vec<Utterance>> {
    let k = cfg.kmeans_sizes.iter().copied().max().unwrap_or(1);
    let d = cfg.model.input_dim;
    let frames = Tensor::matrix(k, d, (0..k * d).map(|i| i as f64).collect())?;
    Ok(vec![Utterance {
        id: "placeholder".into(),
        features: FeatureSequence::new(frames, cfg.model.frame_period_ms, FeatureKind::Fbk)?,
        tokens: vec![],
        frame_labels: vec![0; k],
    }])
}
