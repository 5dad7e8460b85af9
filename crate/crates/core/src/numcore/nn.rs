use crate::error::Result;
use crate::numcore::params::{Binding, ParamId, ParamStore};
use crate::numcore::rng::SeededRng;
use crate::numcore::tape::Var;
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[out_dim]);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Result<Var> {
        x.matmul(b.get(self.weight))?.add_row(b.get(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0));
        let bias = store.add_zeros(format!("{name}.bias"), &[dim]);
        Self { gain, bias }
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Result<Var> {
        x.normalize_rows(Self::EPS)?
            .mul_row(b.get(self.gain))?
            .add_row(b.get(self.bias))
    }
}

/// Inverted dropout: active only when an RNG is supplied (training mode),
/// scaling kept units by `1/(1-rate)` so the expectation is unchanged.
pub fn dropout(x: &Var, rate: f64, rng: Option<&mut SeededRng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let v = x.value();
            let keep = 1.0 - rate;
            let mask = (0..v.len())
                .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            x.mul_const(Tensor::new(v.shape().to_vec(), mask)?)
        }
        _ => Ok(x.clone()),
    }
}
