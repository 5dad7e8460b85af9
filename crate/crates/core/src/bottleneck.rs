//! Bottleneck insert that re-strides an SSL context stream to the back-end
//! frame rate and compresses it for feature fusion.
//!
//! Layout (input `T×C` at the input stride, `r = input_stride / output_stride`):
//!
//! 1. transposed 1-D convolution, kernel `r`, stride `r`: `T×C → rT×C`
//! 2. FC block (linear → ReLU → dropout): `rT×C → rT×inner`
//! 3. 1-D convolution, kernel `r`, stride `r`: `rT×inner → T×inner`
//! 4. FC block: `T×inner → T×C`
//!
//! The extracted representation is the output of the linear layer in step 2
//! (before its activation); step 4's output is the restored stream that
//! replaces the host network's hidden state at the insertion point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::numcore::nn::{dropout, Linear};
use crate::numcore::{Binding, ParamId, ParamStore, SeededRng, Tape, Tensor, Var};

/// Where the bottleneck sits inside the SSL model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BottleneckPosition {
    /// Between the feature encoder and the first transformer block.
    AfterEncoder,
    /// After block `⌈L/2⌉` of an `L`-block context network.
    AfterMiddleBlock,
    AfterLastBlock,
}

impl BottleneckPosition {
    pub const ALL: [BottleneckPosition; 3] = [
        BottleneckPosition::AfterEncoder,
        BottleneckPosition::AfterMiddleBlock,
        BottleneckPosition::AfterLastBlock,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BottleneckPosition::AfterEncoder => "after-encoder",
            BottleneckPosition::AfterMiddleBlock => "after-middle-block",
            BottleneckPosition::AfterLastBlock => "after-last-block",
        }
    }

    /// Number of transformer blocks that run before the bottleneck.
    pub fn blocks_before(self, num_blocks: usize) -> usize {
        match self {
            BottleneckPosition::AfterEncoder => 0,
            BottleneckPosition::AfterMiddleBlock => num_blocks.div_ceil(2),
            BottleneckPosition::AfterLastBlock => num_blocks,
        }
    }
}

impl fmt::Display for BottleneckPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BottleneckPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "after-encoder" | "e" => Ok(BottleneckPosition::AfterEncoder),
            "after-middle-block" | "f" => Ok(BottleneckPosition::AfterMiddleBlock),
            "after-last-block" | "g" => Ok(BottleneckPosition::AfterLastBlock),
            other => Err(Error::invalid(format!(
                "unknown bottleneck position `{other}` (expected after-encoder, after-middle-block or after-last-block)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BottleneckConfig {
    pub inner_dim: usize,
    pub position: BottleneckPosition,
    pub input_dim: usize,
    pub input_stride_ms: f64,
    pub output_stride_ms: f64,
    pub dropout: f64,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        Self {
            inner_dim: 256,
            position: BottleneckPosition::AfterLastBlock,
            input_dim: 1024,
            input_stride_ms: 20.0,
            output_stride_ms: 10.0,
            dropout: 0.1,
        }
    }
}

impl BottleneckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_dim == 0 || self.input_dim == 0 {
            return Err(Error::invalid("bottleneck dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        self.rate_factor().map(|_| ())
    }

    /// `input_stride / output_stride`, which must be a positive integer.
    pub fn rate_factor(&self) -> Result<usize> {
        let r = self.input_stride_ms / self.output_stride_ms;
        let n = r.round();
        if self.output_stride_ms > 0.0 && n >= 1.0 && (r - n).abs() < 1e-9 {
            Ok(n as usize)
        } else {
            Err(Error::invalid(format!(
                "output stride {} ms must divide input stride {} ms",
                self.output_stride_ms, self.input_stride_ms
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub config: BottleneckConfig,
    factor: usize,
    up_taps: Vec<ParamId>,
    up_bias: ParamId,
    fc_in: Linear,
    down_taps: Vec<ParamId>,
    down_bias: ParamId,
    fc_out: Linear,
}

pub struct BottleneckOutput {
    /// `rT×inner` at the output stride.
    pub extracted: Var,
    /// `T×input_dim` at the input stride.
    pub restored: Var,
}

impl Bottleneck {
    pub fn new(store: &mut ParamStore, name: &str, config: BottleneckConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let factor = config.rate_factor()?;
        let (c, inner) = (config.input_dim, config.inner_dim);
        let up_taps = (0..factor)
            .map(|k| store.add_glorot(format!("{name}.upconv.tap{k}"), c, c, rng))
            .collect();
        let up_bias = store.add_zeros(format!("{name}.upconv.bias"), &[c]);
        let fc_in = Linear::new(store, &format!("{name}.fc_in"), c, inner, rng);
        let down_taps = (0..factor)
            .map(|k| store.add_glorot(format!("{name}.downconv.tap{k}"), inner, inner, rng))
            .collect();
        let down_bias = store.add_zeros(format!("{name}.downconv.bias"), &[inner]);
        let fc_out = Linear::new(store, &format!("{name}.fc_out"), inner, c, rng);
        Ok(Self {
            config,
            factor,
            up_taps,
            up_bias,
            fc_in,
            down_taps,
            down_bias,
            fc_out,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Sets both convolutions' taps and both linear layers to (rectangular)
    /// identities with zero biases.
    pub fn set_identity(&self, store: &mut ParamStore) {
        let (c, inner) = (self.config.input_dim, self.config.inner_dim);
        for &tap in &self.up_taps {
            *store.get_mut(tap) = Tensor::eye(c, c);
        }
        for &tap in &self.down_taps {
            *store.get_mut(tap) = Tensor::eye(inner, inner);
        }
        *store.get_mut(self.fc_in.weight) = Tensor::eye(c, inner);
        *store.get_mut(self.fc_out.weight) = Tensor::eye(inner, c);
        for id in [self.up_bias, self.down_bias, self.fc_in.bias, self.fc_out.bias] {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(&shape);
        }
    }

    /// Transposed convolution, kernel = stride = `r`: row `r·t + k` is
    /// `x_t · W_k + b`.
    pub fn upsample(&self, b: &Binding, x: &Var) -> Result<Var> {
        let t = x.value().rows();
        let r = self.factor;
        let parts = self
            .up_taps
            .iter()
            .map(|&w| x.matmul(b.get(w)))
            .collect::<Result<Vec<_>>>()?;
        let stacked = Var::concat_rows(&parts)?;
        let order: Vec<usize> = (0..t * r).map(|i| (i % r) * t + i / r).collect();
        stacked.gather_rows(&order)?.add_row(b.get(self.up_bias))
    }

    /// Convolution, kernel = stride = `r`: row `t` is `Σ_k x_{r·t+k} · W_k + b`.
    fn downsample(&self, b: &Binding, x: &Var) -> Result<Var> {
        let rows = x.value().rows();
        let r = self.factor;
        let t = rows / r;
        let mut acc: Option<Var> = None;
        for (k, &w) in self.down_taps.iter().enumerate() {
            let idx: Vec<usize> = (0..t).map(|i| r * i + k).collect();
            let term = x.gather_rows(&idx)?.matmul(b.get(w))?;
            acc = Some(match acc {
                Some(a) => a.add(&term)?,
                None => term,
            });
        }
        acc.expect("factor >= 1").add_row(b.get(self.down_bias))
    }

    /// Runs the module on a `T×input_dim` hidden stream. Dropout is active
    /// only when `rng` is given.
    pub fn forward(&self, b: &Binding, x: &Var, mut rng: Option<&mut SeededRng>) -> Result<BottleneckOutput> {
        let v = x.value();
        if !v.is_matrix() || v.cols() != self.config.input_dim {
            return Err(Error::shape(
                "bottleneck",
                format!("expected T×{} input, got {:?}", self.config.input_dim, v.shape()),
            ));
        }
        let up = self.upsample(b, x)?;
        let extracted = self.fc_in.forward(b, &up)?;
        let h = dropout(&extracted.relu(), self.config.dropout, rng.as_deref_mut())?;
        let down = self.downsample(b, &h)?;
        let restored = dropout(&self.fc_out.forward(b, &down)?.relu(), self.config.dropout, rng)?;
        Ok(BottleneckOutput { extracted, restored })
    }

    /// Inference on a feature sequence: returns the extracted features at
    /// the output stride and the restored stream at the input stride.
    pub fn apply(&self, store: &ParamStore, input: &FeatureSequence) -> Result<(FeatureSequence, FeatureSequence)> {
        if (input.frame_period_ms() - self.config.input_stride_ms).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "bottleneck expects {} ms frames, got {} ms",
                self.config.input_stride_ms,
                input.frame_period_ms()
            )));
        }
        if input.dim() != self.config.input_dim {
            return Err(Error::shape(
                "bottleneck",
                format!("expected {}-dim input, got {}", self.config.input_dim, input.dim()),
            ));
        }
        let tape = Tape::new();
        let b = store.bind_frozen(&tape);
        let x = tape.constant(input.frames().clone());
        let out = self.forward(&b, &x, None)?;
        let extracted = FeatureSequence::new(
            (*out.extracted.value()).clone(),
            self.config.output_stride_ms,
            FeatureKind::Ssl,
        )?;
        let restored = FeatureSequence::new(
            (*out.restored.value()).clone(),
            self.config.input_stride_ms,
            FeatureKind::Ssl,
        )?;
        Ok((extracted, restored))
    }
}
