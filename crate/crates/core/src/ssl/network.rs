//! Pre-LN transformer context network and the SSL model that wraps it.

use serde::{Deserialize, Serialize};

use crate::bottleneck::{Bottleneck, BottleneckConfig};
use crate::error::{Error, Result};
use crate::numcore::nn::{dropout, LayerNorm, Linear};
use crate::numcore::{Binding, ParamId, ParamStore, SeededRng, Tensor, Var};

use super::mask::apply_mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            num_blocks: 4,
            model_dim: 64,
            heads: 4,
            ff_dim: 128,
            dropout: 0.0,
        }
    }
}

impl ContextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::invalid("context network needs at least one block"));
        }
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model dim {} must be a positive multiple of the head count {}",
                self.model_dim, self.heads
            )));
        }
        if self.ff_dim == 0 {
            return Err(Error::invalid("feed-forward dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    proj: Linear,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextNetwork {
    pub config: ContextConfig,
    blocks: Vec<Block>,
}

impl ContextNetwork {
    pub fn new(store: &mut ParamStore, name: &str, config: ContextConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let blocks = (0..config.num_blocks)
            .map(|i| {
                let p = format!("{name}.block{i}");
                Block {
                    ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), d),
                    query: Linear::new(store, &format!("{p}.query"), d, d, rng),
                    key: Linear::new(store, &format!("{p}.key"), d, d, rng),
                    value: Linear::new(store, &format!("{p}.value"), d, d, rng),
                    proj: Linear::new(store, &format!("{p}.proj"), d, d, rng),
                    ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), d),
                    ff_in: Linear::new(store, &format!("{p}.ff_in"), d, config.ff_dim, rng),
                    ff_out: Linear::new(store, &format!("{p}.ff_out"), config.ff_dim, d, rng),
                }
            })
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn attention(&self, blk: &Block, b: &Binding, x: &Var) -> Result<Var> {
        let (q, k, v) = (blk.query.forward(b, x)?, blk.key.forward(b, x)?, blk.value.forward(b, x)?);
        let dh = self.config.model_dim / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads = (0..self.config.heads)
            .map(|h| {
                let (s, e) = (h * dh, (h + 1) * dh);
                let scores = q.slice_cols(s, e)?.matmul(&k.slice_cols(s, e)?.transpose()?)?.scale(scale);
                scores.softmax_rows()?.matmul(&v.slice_cols(s, e)?)
            })
            .collect::<Result<Vec<_>>>()?;
        blk.proj.forward(b, &Var::concat_cols(&heads)?)
    }

    /// Runs block `i` on a `T×d` stream.
    pub fn forward_block(&self, i: usize, b: &Binding, x: &Var, mut rng: Option<&mut SeededRng>) -> Result<Var> {
        let blk = &self.blocks[i];
        let rate = self.config.dropout;
        let a = self.attention(blk, b, &blk.ln_attn.forward(b, x)?)?;
        let x = x.add(&dropout(&a, rate, rng.as_deref_mut())?)?;
        let f = blk.ff_in.forward(b, &blk.ln_ff.forward(b, &x)?)?.relu();
        let f = blk.ff_out.forward(b, &f)?;
        x.add(&dropout(&f, rate, rng)?)
    }
}

/// Fixed sinusoidal position code, `T×d`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(t, d, data).expect("sized")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub input_dim: usize,
    pub frame_period_ms: f64,
    pub context: ContextConfig,
    /// `input_dim` of the bottleneck is forced to the model dim.
    pub bottleneck: Option<BottleneckConfig>,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            frame_period_ms: 20.0,
            context: ContextConfig::default(),
            bottleneck: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslModel {
    pub config: SslConfig,
    encoder: Linear,
    mask_embedding: ParamId,
    pub context: ContextNetwork,
    pub bottleneck: Option<Bottleneck>,
}

pub struct SslForward {
    /// Encoder output before masking, `T×d`.
    pub encoded: Var,
    /// Output of every transformer block, `T×d`.
    pub blocks: Vec<Var>,
    /// Final contextual stream, `T×d`.
    pub output: Var,
    /// Bottleneck features at the output stride, when present.
    pub extracted: Option<Var>,
}

impl SslModel {
    pub fn new(store: &mut ParamStore, config: SslConfig, rng: &mut SeededRng) -> Result<Self> {
        config.context.validate()?;
        if config.input_dim == 0 {
            return Err(Error::invalid("SSL input dim must be positive"));
        }
        let d = config.context.model_dim;
        let encoder = Linear::new(store, "encoder", config.input_dim, d, rng);
        let mask_embedding = store.add(
            "mask_embedding",
            Tensor::new(vec![d], (0..d).map(|_| rng.uniform_range(-0.5, 0.5)).collect())?,
        );
        let context = ContextNetwork::new(store, "context", config.context, rng)?;
        let mut config = config;
        let bottleneck = match config.bottleneck.as_mut() {
            Some(bn) => {
                bn.input_dim = d;
                bn.input_stride_ms = config.frame_period_ms;
                Some(Bottleneck::new(store, "bottleneck", *bn, rng)?)
            }
            None => None,
        };
        Ok(Self {
            config,
            encoder,
            mask_embedding,
            context,
            bottleneck,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.config.context.model_dim
    }

    /// Encoder, masking, context blocks and (if configured) the bottleneck,
    /// whose restored stream replaces the hidden state at its position.
    pub fn forward(&self, b: &Binding, x: &Var, masked: &[usize], mut rng: Option<&mut SeededRng>) -> Result<SslForward> {
        let xv = x.value();
        if !xv.is_matrix() || xv.cols() != self.config.input_dim {
            return Err(Error::shape(
                "ssl_forward",
                format!("expected T×{} input, got {:?}", self.config.input_dim, xv.shape()),
            ));
        }
        let t = xv.rows();
        let encoded = self.encoder.forward(b, x)?.tanh();
        let mut h = if masked.is_empty() {
            encoded.clone()
        } else {
            apply_mask(&encoded, b.get(self.mask_embedding), masked)?
        };
        h = h.add(&x.tape().constant(positional_encoding(t, self.model_dim())))?;
        let at = self
            .bottleneck
            .as_ref()
            .map(|bn| bn.config.position.blocks_before(self.context.num_blocks()));
        let mut extracted = None;
        let mut blocks = Vec::with_capacity(self.context.num_blocks());
        for i in 0..=self.context.num_blocks() {
            if at == Some(i) {
                let out = self.bottleneck.as_ref().expect("present").forward(b, &h, rng.as_deref_mut())?;
                extracted = Some(out.extracted);
                h = out.restored;
            }
            if i < self.context.num_blocks() {
                h = self.context.forward_block(i, b, &h, rng.as_deref_mut())?;
                blocks.push(h.clone());
            }
        }
        Ok(SslForward {
            encoded,
            blocks,
            output: h,
            extracted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bottleneck::BottleneckPosition;
    use crate::numcore::Tape;

    fn small(bottleneck: Option<BottleneckConfig>) -> SslConfig {
        SslConfig {
            input_dim: 5,
            context: ContextConfig {
                num_blocks: 3,
                model_dim: 8,
                heads: 2,
                ff_dim: 12,
                dropout: 0.0,
            },
            bottleneck,
            ..SslConfig::default()
        }
    }

    #[test]
    fn block_outputs_are_t_by_d() {
        let mut store = ParamStore::new();
        let model = SslModel::new(&mut store, small(None), &mut SeededRng::new(0)).unwrap();
        let tape = Tape::new();
        let b = store.bind(&tape);
        let x = tape.constant(Tensor::full(&[6, 5], 0.1));
        let out = model.forward(&b, &x, &[1, 2], None).unwrap();
        assert_eq!(out.blocks.len(), 3);
        for blk in &out.blocks {
            assert_eq!(blk.shape(), vec![6, 8]);
        }
        assert!(out.extracted.is_none());
    }

    #[test]
    fn bottleneck_extracts_at_each_position() {
        for pos in BottleneckPosition::ALL {
            let cfg = BottleneckConfig {
                inner_dim: 16,
                position: pos,
                dropout: 0.0,
                ..BottleneckConfig::default()
            };
            let mut store = ParamStore::new();
            let model = SslModel::new(&mut store, small(Some(cfg)), &mut SeededRng::new(1)).unwrap();
            let tape = Tape::new();
            let b = store.bind(&tape);
            let x = tape.constant(Tensor::full(&[4, 5], 0.2));
            let out = model.forward(&b, &x, &[], None).unwrap();
            assert_eq!(out.extracted.unwrap().shape(), vec![8, 16]);
            assert_eq!(out.output.shape(), vec![4, 8]);
        }
    }

    #[test]
    fn rejects_bad_head_split() {
        let cfg = ContextConfig {
            model_dim: 10,
            heads: 4,
            ..ContextConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ContextConfig { num_blocks: 0, ..ContextConfig::default() }.validate().is_err());
    }
}
