use serde::{Deserialize, Serialize};
use serde_json::json;

use super::losses::{mixture_mean, mtl_loss, MdnParams, MtlWeights, SIGMA_FLOOR};
use super::synth::ParallelPair;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::formats::mdl::ModelFile;
use crate::numcore::nn::Linear;
use crate::numcore::{Binding, LrSchedule, Optimizer, OptimizerKind, ParamStore, SeededRng, Tape, Tensor, Var};

pub const ARCHITECTURE: &str = "a2a-mdn";

/// Tanh MLP whose last layer emits `M` logits, `M·D` means and `M·D` log
/// standard deviations per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnHead {
    hidden: Vec<Linear>,
    out: Linear,
    pub input_dim: usize,
    pub mixtures: usize,
    pub output_dim: usize,
    pub sigma_floor: f64,
}

impl MdnHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        input_dim: usize,
        hidden: &[usize],
        mixtures: usize,
        output_dim: usize,
        sigma_floor: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if input_dim == 0 || mixtures == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid("MDN dimensions and mixture count must be positive"));
        }
        if !(sigma_floor > 0.0) {
            return Err(Error::invalid(format!("sigma floor must be positive, got {sigma_floor}")));
        }
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("mdn.hidden{i}"), prev, h, rng));
            prev = h;
        }
        let out = Linear::new(store, "mdn.out", prev, mixtures * (1 + 2 * output_dim), rng);
        Ok(Self {
            hidden: layers,
            out,
            input_dim,
            mixtures,
            output_dim,
            sigma_floor,
        })
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Result<MdnParams> {
        let xv = x.value();
        if !xv.is_matrix() || xv.cols() != self.input_dim {
            return Err(Error::shape(
                "mdn_forward",
                format!("expected T×{} input, got {:?}", self.input_dim, xv.shape()),
            ));
        }
        let mut h = x.clone();
        for layer in &self.hidden {
            h = layer.forward(b, &h)?.tanh();
        }
        MdnParams::from_raw(&self.out.forward(b, &h)?, self.mixtures, self.output_dim, self.sigma_floor)
    }
}

/// `ŷ_t = Σ_m w_m μ_m` for every frame of `acoustic`; frame-local.
pub fn invert(head: &MdnHead, params: &ParamStore, acoustic: &FeatureSequence) -> Result<FeatureSequence> {
    if acoustic.dim() != head.input_dim {
        return Err(Error::shape(
            "invert",
            format!("model expects {}-dim acoustic input, got {}", head.input_dim, acoustic.dim()),
        ));
    }
    let tape = Tape::new();
    let b = params.bind_frozen(&tape);
    let p = head.forward(&b, &tape.constant(acoustic.frames().clone()))?;
    let y = mixture_mean(&p)?;
    FeatureSequence::new((*y.value()).clone(), acoustic.frame_period_ms(), FeatureKind::Uti)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2aTrainConfig {
    pub mixtures: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: MtlWeights,
    pub sigma_floor: f64,
}

impl Default for A2aTrainConfig {
    fn default() -> Self {
        Self {
            mixtures: 3,
            hidden: vec![64, 64],
            epochs: 20,
            batch_size: 200,
            learning_rate: 1e-3,
            seed: 0,
            weights: MtlWeights::default(),
            sigma_floor: SIGMA_FLOOR,
        }
    }
}

impl A2aTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be ≥ 2 (Pearson needs two frames)"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be ≥ 0, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2aEpochLog {
    pub epoch: usize,
    /// Multi-task loss over the whole training set after the epoch.
    pub train_loss: f64,
    pub mdn: f64,
    pub mse: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2aEvaluation {
    pub loss: f64,
    pub mdn: f64,
    pub mse: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone)]
pub struct A2aTrainer {
    pub config: A2aTrainConfig,
    pub params: ParamStore,
    pub head: MdnHead,
    optimizer: Optimizer,
    epochs_done: usize,
}

impl A2aTrainer {
    /// `frames` is the training-set size, used to lay out the decay schedule.
    pub fn new(config: A2aTrainConfig, input_dim: usize, output_dim: usize, frames: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let mut params = ParamStore::new();
        let head = MdnHead::new(
            &mut params,
            input_dim,
            &config.hidden,
            config.mixtures,
            output_dim,
            config.sigma_floor,
            &mut rng,
        )?;
        let total = (frames / config.batch_size).max(1) as u64 * config.epochs as u64;
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
            head,
            optimizer,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn check_pair(&self, data: &ParallelPair) -> Result<()> {
        if data.acoustic.dim() != self.head.input_dim || data.articulatory.dim() != self.head.output_dim {
            return Err(Error::shape(
                "a2a_data",
                format!(
                    "model maps {}→{} dims, data has {}→{}",
                    self.head.input_dim,
                    self.head.output_dim,
                    data.acoustic.dim(),
                    data.articulatory.dim()
                ),
            ));
        }
        Ok(())
    }

    pub fn evaluate(&self, data: &ParallelPair) -> Result<A2aEvaluation> {
        self.check_pair(data)?;
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let p = self.head.forward(&b, &tape.constant(data.acoustic.frames().clone()))?;
        let out = mtl_loss(&p, data.articulatory.frames(), &self.config.weights)?;
        Ok(A2aEvaluation {
            loss: out.total.item(),
            mdn: out.mdn,
            mse: out.mse,
            pearson: out.pearson,
        })
    }

    /// One pass over shuffled minibatches of frames. A trailing batch with
    /// fewer than two frames is skipped.
    pub fn train_epoch(&mut self, data: &ParallelPair) -> Result<A2aEpochLog> {
        self.check_pair(data)?;
        let n = data.acoustic.num_frames();
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::derived(self.config.seed, self.epochs_done as u64 + 1).shuffle(&mut order);
        let (x, y) = (data.acoustic.frames(), data.articulatory.frames());
        for chunk in order.chunks(self.config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = Tensor::from_rows(&chunk.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>())?;
            let yb = Tensor::from_rows(&chunk.iter().map(|&i| y.row(i).to_vec()).collect::<Vec<_>>())?;
            let tape = Tape::new();
            let b = self.params.bind(&tape);
            let p = self.head.forward(&b, &tape.constant(xb))?;
            let loss = mtl_loss(&p, &yb, &self.config.weights)?.total;
            let grads = b.grads(&loss.backward().map_err(|e| match e {
                Error::NonFinite(w) => Error::NonFinite(format!("{w} at epoch {}", self.epochs_done + 1)),
                other => other,
            })?);
            self.optimizer.step(&mut self.params, &grads)?;
        }
        self.epochs_done += 1;
        let eval = self.evaluate(data)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}", self.epochs_done)));
        }
        Ok(A2aEpochLog {
            epoch: self.epochs_done,
            train_loss: eval.loss,
            mdn: eval.mdn,
            mse: eval.mse,
            pearson: eval.pearson,
        })
    }

    pub fn train(&mut self, data: &ParallelPair, mut on_epoch: impl FnMut(&A2aEpochLog)) -> Result<Vec<A2aEpochLog>> {
        let mut logs = Vec::new();
        while self.epochs_done < self.config.epochs {
            let log = self.train_epoch(data)?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn invert(&self, acoustic: &FeatureSequence) -> Result<FeatureSequence> {
        invert(&self.head, &self.params, acoustic)
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut file = ModelFile::new(json!({
            "architecture": ARCHITECTURE,
            "config": serde_json::to_value(&self.config)?,
            "seed": self.config.seed,
            "input_dim": self.head.input_dim,
            "output_dim": self.head.output_dim,
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
        Ok(file)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        let meta = &file.header;
        if meta.get("architecture").and_then(|a| a.as_str()) != Some(ARCHITECTURE) {
            return Err(Error::format("MDL1", "not an A2A model file"));
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::format("MDL1", format!("header lacks `{k}`")))
        };
        let config: A2aTrainConfig = serde_json::from_value(field("config")?)?;
        let input_dim: usize = serde_json::from_value(field("input_dim")?)?;
        let output_dim: usize = serde_json::from_value(field("output_dim")?)?;
        let schedule: LrSchedule = serde_json::from_value(field("schedule")?)?;
        let steps: u64 = serde_json::from_value(field("optimizer_steps")?)?;
        let mut trainer = Self::new(config, input_dim, output_dim, 0)?;
        file.load_store("param.", &mut trainer.params)?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, _) in trainer.params.iter() {
            m.push(file.require(&format!("adam.m.{name}"))?.data().to_vec());
            v.push(file.require(&format!("adam.v.{name}"))?.data().to_vec());
        }
        trainer.optimizer = Optimizer::new(OptimizerKind::adam(), trainer.config.learning_rate, schedule, &trainer.params)?;
        trainer.optimizer.restore(steps, m, v)?;
        trainer.epochs_done = serde_json::from_value(field("epochs_done")?)?;
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_inverts_to_its_mean() {
        let mut store = ParamStore::new();
        let head = MdnHead::new(&mut store, 3, &[5], 1, 2, SIGMA_FLOOR, &mut SeededRng::new(0)).unwrap();
        let x = FeatureSequence::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.4, 0.0, 1.0]], 10.0, FeatureKind::Fbk).unwrap();
        let y = invert(&head, &store, &x).unwrap();
        let tape = Tape::new();
        let b = store.bind_frozen(&tape);
        let p = head.forward(&b, &tape.constant(x.frames().clone())).unwrap();
        assert_eq!(y.frames().data(), p.means.value().data());
        assert_eq!(y.kind(), FeatureKind::Uti);
    }

    #[test]
    fn wrong_input_dim_rejected() {
        let mut store = ParamStore::new();
        let head = MdnHead::new(&mut store, 3, &[5], 2, 2, SIGMA_FLOOR, &mut SeededRng::new(0)).unwrap();
        let x = FeatureSequence::from_rows(&[vec![0.1, 0.2]], 10.0, FeatureKind::Fbk).unwrap();
        assert!(invert(&head, &store, &x).is_err());
    }
}
