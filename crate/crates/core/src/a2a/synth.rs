//! Synthetic parallel acoustic/articulatory data.
//!
//! Each articulatory dimension is a sum of three random-phase sinusoids
//! sampled at the frame rate; the acoustic frame is `tanh(W a_t + b)` plus
//! Gaussian noise, with `W` a fixed full-column-rank `D_ac×D_art` matrix.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::numcore::{SeededRng, Tensor};

pub const COMPONENTS_PER_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelConfig {
    pub frames: usize,
    pub art_dim: usize,
    pub ac_dim: usize,
    pub noise: f64,
    /// Frames per second.
    pub frame_rate: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    /// Sum of the three component amplitudes of every dimension.
    pub amplitude: f64,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self {
            frames: 2500,
            art_dim: 4,
            ac_dim: 8,
            noise: 0.05,
            frame_rate: 100.0,
            min_freq_hz: 0.3,
            max_freq_hz: 3.0,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelPair {
    pub acoustic: FeatureSequence,
    pub articulatory: FeatureSequence,
}

impl ParallelPair {
    pub fn new(acoustic: FeatureSequence, articulatory: FeatureSequence) -> Result<Self> {
        if acoustic.num_frames() != articulatory.num_frames()
            || acoustic.frame_period_ms() != articulatory.frame_period_ms()
        {
            return Err(Error::Mismatch(format!(
                "parallel streams differ: {} frames @ {} ms vs {} frames @ {} ms",
                acoustic.num_frames(),
                acoustic.frame_period_ms(),
                articulatory.num_frames(),
                articulatory.frame_period_ms()
            )));
        }
        Ok(Self { acoustic, articulatory })
    }

    /// Frames `start..end` of both streams.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let cut = |s: &FeatureSequence| {
            let rows: Vec<Vec<f64>> = (start..end).map(|t| s.row(t).to_vec()).collect();
            let t = Tensor::matrix(rows.len(), s.dim(), rows.concat())?;
            FeatureSequence::new(t, s.frame_period_ms(), s.kind())
        };
        if start > end || end > self.acoustic.num_frames() {
            return Err(Error::invalid(format!("slice {start}..{end} outside {} frames", self.acoustic.num_frames())));
        }
        Self::new(cut(&self.acoustic)?, cut(&self.articulatory)?)
    }
}

/// One sinusoid of an articulatory trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelData {
    pub pair: ParallelPair,
    /// `D_ac×D_art`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    /// `components[d]` are the sinusoids of articulatory dimension `d`.
    pub components: Vec<Vec<Sinusoid>>,
}

/// Rank of a small dense matrix by Gaussian elimination with pivoting.
fn rank(m: &Tensor) -> usize {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a: Vec<Vec<f64>> = (0..rows).map(|r| m.row(r).to_vec()).collect();
    let mut rank = 0;
    for c in 0..cols {
        let pivot = (rank..rows).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()));
        let Some(p) = pivot else { break };
        if a[p][c].abs() < 1e-9 {
            continue;
        }
        a.swap(rank, p);
        for r in rank + 1..rows {
            let f = a[r][c] / a[rank][c];
            for k in c..cols {
                a[r][k] -= f * a[rank][k];
            }
        }
        rank += 1;
    }
    rank
}

/// Generates one parallel stream. `weight`/`bias` override the random map.
pub fn generate_parallel(seed: u64, cfg: &ParallelConfig, map: Option<(Tensor, Vec<f64>)>) -> Result<ParallelData> {
    if cfg.frames < 16 {
        return Err(Error::invalid(format!("need at least 16 frames, got {}", cfg.frames)));
    }
    if cfg.art_dim == 0 || cfg.ac_dim < cfg.art_dim {
        return Err(Error::invalid(format!(
            "acoustic dim {} must be ≥ articulatory dim {} ≥ 1 for the map to be invertible",
            cfg.ac_dim, cfg.art_dim
        )));
    }
    if !(cfg.noise >= 0.0) || !(cfg.frame_rate > 0.0) || !(0.0 < cfg.min_freq_hz && cfg.min_freq_hz <= cfg.max_freq_hz) {
        return Err(Error::invalid("noise ≥ 0, frame rate > 0 and 0 < min freq ≤ max freq are required"));
    }
    if cfg.max_freq_hz * 2.0 > cfg.frame_rate {
        return Err(Error::invalid("maximum frequency must be below the Nyquist rate"));
    }
    let mut rng = SeededRng::new(seed);
    let (t_len, da, dc) = (cfg.frames, cfg.art_dim, cfg.ac_dim);

    let components: Vec<Vec<Sinusoid>> = (0..da)
        .map(|_| {
            let raw: Vec<f64> = (0..COMPONENTS_PER_DIM).map(|_| rng.uniform_range(0.2, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter()
                .map(|&w| Sinusoid {
                    amplitude: cfg.amplitude * w / total,
                    freq_hz: rng.uniform_range(cfg.min_freq_hz, cfg.max_freq_hz),
                    phase: rng.uniform_range(0.0, 2.0 * PI),
                })
                .collect()
        })
        .collect();

    let (weight, bias) = match map {
        Some((w, b)) => {
            if w.shape() != [dc, da] || b.len() != dc {
                return Err(Error::shape(
                    "generate_parallel",
                    format!("map {:?} + {} bias for {dc}×{da}", w.shape(), b.len()),
                ));
            }
            (w, b)
        }
        None => loop {
            let scale = 1.5 / (da as f64).sqrt();
            let w = Tensor::matrix(dc, da, (0..dc * da).map(|_| scale * rng.normal()).collect())?;
            let b: Vec<f64> = (0..dc).map(|_| 0.1 * rng.normal()).collect();
            if rank(&w) == da {
                break (w, b);
            }
        },
    };

    let mut art = Vec::with_capacity(t_len * da);
    let mut ac = Vec::with_capacity(t_len * dc);
    for t in 0..t_len {
        let time = t as f64 / cfg.frame_rate;
        let a: Vec<f64> = components
            .iter()
            .map(|cs| cs.iter().map(|s| s.amplitude * (2.0 * PI * s.freq_hz * time + s.phase).sin()).sum())
            .collect();
        for i in 0..dc {
            let pre: f64 = (0..da).map(|j| weight.get(i, j) * a[j]).sum::<f64>() + bias[i];
            let n = if cfg.noise > 0.0 { cfg.noise * rng.normal() } else { 0.0 };
            ac.push(pre.tanh() + n);
        }
        art.extend(a);
    }
    let period = 1000.0 / cfg.frame_rate;
    let pair = ParallelPair::new(
        FeatureSequence::new(Tensor::matrix(t_len, dc, ac)?, period, FeatureKind::Fbk)?,
        FeatureSequence::new(Tensor::matrix(t_len, da, art)?, period, FeatureKind::Uti)?,
    )?;
    Ok(ParallelData {
        pair,
        weight,
        bias,
        components,
    })
}
