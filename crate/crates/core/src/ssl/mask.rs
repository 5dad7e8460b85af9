use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Var};

/// Span masking: each frame starts a span with probability `prob`; a span
/// covers `span` frames (clipped at the end). Spans may overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub prob: f64,
    pub span: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { prob: 0.065, span: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskDraw {
    pub starts: Vec<usize>,
    /// Sorted, deduplicated masked frame indices.
    pub masked: Vec<usize>,
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) || self.span == 0 {
            return Err(Error::invalid(format!(
                "mask probability must be in [0,1] and span positive, got {} / {}",
                self.prob, self.span
            )));
        }
        Ok(())
    }

    pub fn sample(&self, num_frames: usize, rng: &mut SeededRng) -> MaskDraw {
        let starts: Vec<usize> = (0..num_frames).filter(|_| rng.bernoulli(self.prob)).collect();
        self.cover(num_frames, starts)
    }

    /// Like [`sample`](Self::sample) but guarantees at least `min_starts`
    /// spans, drawing extra start positions uniformly when needed.
    pub fn sample_at_least(&self, num_frames: usize, min_starts: usize, rng: &mut SeededRng) -> MaskDraw {
        let mut starts: Vec<usize> = (0..num_frames).filter(|_| rng.bernoulli(self.prob)).collect();
        while starts.len() < min_starts.min(num_frames) {
            let s = rng.below(num_frames);
            if !starts.contains(&s) {
                starts.push(s);
            }
        }
        starts.sort_unstable();
        self.cover(num_frames, starts)
    }

    fn cover(&self, num_frames: usize, starts: Vec<usize>) -> MaskDraw {
        let mut hit = vec![false; num_frames];
        for &s in &starts {
            for h in hit.iter_mut().skip(s).take(self.span) {
                *h = true;
            }
        }
        let masked = hit.iter().enumerate().filter_map(|(i, &h)| h.then_some(i)).collect();
        MaskDraw { starts, masked }
    }
}

/// Replaces the masked rows of `z` with a (learned) mask embedding.
pub fn apply_mask(z: &Var, mask_embedding: &Var, masked: &[usize]) -> Result<Var> {
    let t = z.value().rows();
    let emb = mask_embedding.value();
    let row = if emb.is_matrix() {
        mask_embedding.clone()
    } else {
        // promote a length-D vector to a 1×D matrix
        let tape = z.tape();
        let ones = tape.constant(crate::numcore::Tensor::full(&[1, emb.len()], 1.0));
        ones.mul_row(mask_embedding)?
    };
    let mut is_masked = vec![false; t];
    for &m in masked {
        if m >= t {
            return Err(Error::invalid(format!("masked index {m} outside {t} frames")));
        }
        is_masked[m] = true;
    }
    let stacked = Var::concat_rows(&[z.clone(), row])?;
    let order: Vec<usize> = (0..t).map(|i| if is_masked[i] { t } else { i }).collect();
    stacked.gather_rows(&order)
}
