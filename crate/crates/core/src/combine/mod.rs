//! System combination: frame-level score fusion, N-best rescoring and
//! development-set weight search.

pub mod fixture;
pub mod presets;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use presets::{preset, CombineMode, Preset, PRESETS};

pub const DEFAULT_NBEST: usize = 30;

/// Per-frame log-likelihoods of one system over a token inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreStream {
    pub utt_id: String,
    pub inventory: Vec<String>,
    /// `T×|V|`.
    pub scores: Tensor,
    pub frame_period_ms: f64,
}

impl FrameScoreStream {
    pub fn new(utt_id: impl Into<String>, inventory: Vec<String>, scores: Tensor, frame_period_ms: f64) -> Result<Self> {
        let utt_id = utt_id.into();
        if inventory.is_empty() {
            return Err(Error::invalid(format!("`{utt_id}`: empty token inventory")));
        }
        if !scores.is_matrix() || scores.cols() != inventory.len() || scores.rows() == 0 {
            return Err(Error::shape(
                "frame_scores",
                format!("`{utt_id}`: scores {:?} for {} tokens", scores.shape(), inventory.len()),
            ));
        }
        crate::error::ensure_finite(&format!("`{utt_id}` frame scores"), scores.data())?;
        if !(frame_period_ms > 0.0) {
            return Err(Error::invalid(format!("`{utt_id}`: frame period must be positive")));
        }
        Ok(Self {
            utt_id,
            inventory,
            scores,
            frame_period_ms,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.scores.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointDecodeOutput {
    pub fused: FrameScoreStream,
    /// Per-frame best token index, lowest index on ties.
    pub best: Vec<usize>,
}

impl JointDecodeOutput {
    /// Frame labels with repeats merged and `blank` (if any) removed.
    pub fn readout(&self, blank: Option<&str>) -> Vec<String> {
        let mut out = Vec::new();
        let mut prev = None;
        for &k in &self.best {
            let sym = &self.fused.inventory[k];
            if prev != Some(k) && Some(sym.as_str()) != blank {
                out.push(sym.clone());
            }
            prev = Some(k);
        }
        out
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::invalid(format!(
            "weights must be finite, non-negative and not all zero, got {weights:?}"
        )));
    }
    Ok(())
}

/// `Σ_k w_k · log P_k` per frame and token, plus the per-frame argmax.
pub fn joint_decode(streams: &[FrameScoreStream], weights: &[f64]) -> Result<JointDecodeOutput> {
    let first = streams.first().ok_or_else(|| Error::invalid("joint decoding needs at least one stream"))?;
    if weights.len() != streams.len() {
        return Err(Error::invalid(format!("{} weights for {} streams", weights.len(), streams.len())));
    }
    check_weights(weights)?;
    for (k, s) in streams.iter().enumerate().skip(1) {
        if s.utt_id != first.utt_id {
            return Err(Error::Mismatch(format!(
                "stream 0 is `{}` but stream {k} is `{}`",
                first.utt_id, s.utt_id
            )));
        }
        if s.inventory != first.inventory {
            return Err(Error::Mismatch(format!("`{}`: stream {k} token inventory differs from stream 0", s.utt_id)));
        }
        if s.num_frames() != first.num_frames() || s.frame_period_ms != first.frame_period_ms {
            return Err(Error::Mismatch(format!(
                "`{}`: stream 0 has {} frames @ {} ms, stream {k} has {} @ {} ms",
                s.utt_id,
                first.num_frames(),
                first.frame_period_ms,
                s.num_frames(),
                s.frame_period_ms
            )));
        }
    }
    let mut data = vec![0.0; first.scores.len()];
    for (s, &w) in streams.iter().zip(weights) {
        for (acc, &x) in data.iter_mut().zip(s.scores.data()) {
            *acc += w * x;
        }
    }
    let scores = Tensor::matrix(first.num_frames(), first.inventory.len(), data)?;
    let best = (0..scores.rows()).map(|t| crate::ssl::quantizer::argmax(scores.row(t))).collect();
    Ok(JointDecodeOutput {
        fused: FrameScoreStream::new(first.utt_id.clone(), first.inventory.clone(), scores, first.frame_period_ms)?,
        best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub tokens: Vec<String>,
    /// Named costs (lower is better).
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NBestList {
    pub utt_id: String,
    pub hyps: Vec<Hypothesis>,
}

impl NBestList {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .hyps
            .first()
            .ok_or_else(|| Error::invalid(format!("`{}`: empty N-best list", self.utt_id)))?;
        for (i, h) in self.hyps.iter().enumerate() {
            if !h.scores.keys().eq(first.scores.keys()) {
                return Err(Error::invalid(format!(
                    "`{}`: hypothesis {i} score names differ from hypothesis 0",
                    self.utt_id
                )));
            }
            if let Some((name, _)) = h.scores.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite(format!("`{}` hypothesis {i} score `{name}`", self.utt_id)));
            }
        }
        Ok(())
    }
}

/// Keeps the first `n` hypotheses.
pub fn truncate_nbest(list: &NBestList, n: usize) -> Result<NBestList> {
    if n == 0 {
        return Err(Error::invalid("N-best depth must be at least 1"));
    }
    Ok(NBestList {
        utt_id: list.utt_id.clone(),
        hyps: list.hyps.iter().take(n).cloned().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoreOutput {
    /// Original rank of the best hypothesis.
    pub best: usize,
    /// `(original rank, combined cost)`, ascending by cost; ties keep
    /// original order.
    pub ranking: Vec<(usize, f64)>,
    pub reranked: NBestList,
}

/// `argmin_i Σ_name w_name · s_i^name`.
pub fn rescore_nbest(list: &NBestList, weights: &BTreeMap<String, f64>) -> Result<RescoreOutput> {
    if list.hyps.is_empty() {
        return Err(Error::invalid(format!("`{}`: empty N-best list", list.utt_id)));
    }
    check_weights(&weights.values().copied().collect::<Vec<_>>())?;
    let mut ranking = Vec::with_capacity(list.hyps.len());
    for (i, h) in list.hyps.iter().enumerate() {
        let mut cost = 0.0;
        for (name, &w) in weights {
            let s = h.scores.get(name).ok_or_else(|| {
                Error::invalid(format!("`{}`: hypothesis {i} has no `{name}` score", list.utt_id))
            })?;
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("`{}` hypothesis {i} score `{name}`", list.utt_id)));
            }
            cost += w * s;
        }
        ranking.push((i, cost));
    }
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1));
    let reranked = NBestList {
        utt_id: list.utt_id.clone(),
        hyps: ranking.iter().map(|&(i, _)| list.hyps[i].clone()).collect(),
    };
    Ok(RescoreOutput {
        best: ranking[0].0,
        ranking,
        reranked,
    })
}

/// All weight vectors of length `k` on the simplex with spacing `step`, in
/// lexicographic order.
pub fn simplex_grid(k: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::invalid("grid search needs at least one system"));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("grid step must be in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if ((1.0 / step) - n).abs() > 1e-9 {
        return Err(Error::invalid(format!("grid step {step} does not divide 1")));
    }
    let n = n as usize;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(k: usize, left: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == k {
            cur.push(left);
            out.push(cur.iter().map(|&i| i as f64 / n as f64).collect());
            cur.pop();
            return;
        }
        for i in 0..=left {
            cur.push(i);
            rec(k, left - i, n, cur, out);
            cur.pop();
        }
    }
    rec(k, n, n, &mut cur, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub weights: Vec<f64>,
    pub score: f64,
    pub evaluated: usize,
}

/// First (lexicographically smallest) point with the lowest score.
pub fn select_best(points: &[Vec<f64>], scores: &[f64]) -> Result<GridSearchResult> {
    if points.len() != scores.len() || points.is_empty() {
        return Err(Error::invalid("grid points and scores must be non-empty and aligned"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("scorer result at weights {:?}", points[i])));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(GridSearchResult {
        weights: points[best].clone(),
        score: scores[best],
        evaluated: points.len(),
    })
}

/// Exhaustive simplex search minimizing `scorer` (e.g. development WER).
pub fn grid_search_weights(
    systems: usize,
    step: f64,
    mut scorer: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GridSearchResult> {
    let points = simplex_grid(systems, step)?;
    let scores = points.iter().map(|p| scorer(p)).collect::<Result<Vec<_>>>()?;
    select_best(&points, &scores)
}
