//! Frame-level feature matrices and the fusion/resampling operations that
//! line them up with a back-end's frame rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Mel filter-bank acoustic features.
    Fbk,
    /// Self-supervised model representations.
    Ssl,
    /// Ultrasound-tongue-imaging articulatory features (measured or inverted).
    Uti,
    Fused,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Fbk => "fbk",
            FeatureKind::Ssl => "ssl",
            FeatureKind::Uti => "uti",
            FeatureKind::Fused => "fused",
        }
    }
}

/// `T×D` feature matrix with a fixed frame period.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Tensor,
    frame_period_ms: f64,
    kind: FeatureKind,
}

impl FeatureSequence {
    pub fn new(frames: Tensor, frame_period_ms: f64, kind: FeatureKind) -> Result<Self> {
        if !frames.is_matrix() {
            return Err(Error::shape(
                "feature_sequence",
                format!("frames must be T×D, got {:?}", frames.shape()),
            ));
        }
        if !(frame_period_ms > 0.0) || !frame_period_ms.is_finite() {
            return Err(Error::invalid(format!("frame period must be positive, got {frame_period_ms}")));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("feature frames".into()));
        }
        Ok(Self {
            frames,
            frame_period_ms,
            kind,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_period_ms: f64, kind: FeatureKind) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?, frame_period_ms, kind)
    }

    /// `T` frames with no feature dimensions.
    pub fn empty(num_frames: usize, frame_period_ms: f64, kind: FeatureKind) -> Result<Self> {
        Self::new(Tensor::matrix(num_frames, 0, Vec::new())?, frame_period_ms, kind)
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Frame-wise concatenation `[a | b]`. Both streams must already share a
/// frame count and frame period.
pub fn fuse_features(a: &FeatureSequence, b: &FeatureSequence) -> Result<FeatureSequence> {
    if a.num_frames() != b.num_frames() || a.frame_period_ms != b.frame_period_ms {
        return Err(Error::Mismatch(format!(
            "cannot fuse {} stream ({} frames @ {} ms) with {} stream ({} frames @ {} ms)",
            a.kind.as_str(),
            a.num_frames(),
            a.frame_period_ms,
            b.kind.as_str(),
            b.num_frames(),
            b.frame_period_ms
        )));
    }
    if b.dim() == 0 {
        return Ok(a.clone());
    }
    if a.dim() == 0 {
        return Ok(b.clone());
    }
    let mut data = Vec::with_capacity(a.num_frames() * (a.dim() + b.dim()));
    for t in 0..a.num_frames() {
        data.extend_from_slice(a.row(t));
        data.extend_from_slice(b.row(t));
    }
    FeatureSequence::new(
        Tensor::matrix(a.num_frames(), a.dim() + b.dim(), data)?,
        a.frame_period_ms,
        FeatureKind::Fused,
    )
}

/// Integer ratio between two frame periods, if one divides the other.
fn period_ratio(from: f64, to: f64) -> Option<(bool, usize)> {
    let (up, r) = if to <= from { (true, from / to) } else { (false, to / from) };
    let n = r.round();
    if n >= 1.0 && (r - n).abs() < 1e-9 {
        Some((up, n as usize))
    } else {
        None
    }
}

/// Changes the frame period: upsampling repeats frames, downsampling
/// mean-pools consecutive windows (a trailing partial window is pooled over
/// the frames it has).
pub fn resample_frames(x: &FeatureSequence, target_period_ms: f64) -> Result<FeatureSequence> {
    if !(target_period_ms > 0.0) {
        return Err(Error::invalid(format!("target period must be positive, got {target_period_ms}")));
    }
    let (up, r) = period_ratio(x.frame_period_ms, target_period_ms).ok_or_else(|| {
        Error::invalid(format!(
            "periods {} ms and {} ms are not commensurate",
            x.frame_period_ms, target_period_ms
        ))
    })?;
    let (t, d) = (x.num_frames(), x.dim());
    let mut data = Vec::new();
    let rows = if up {
        for i in 0..t {
            for _ in 0..r {
                data.extend_from_slice(x.row(i));
            }
        }
        t * r
    } else {
        let out = t.div_ceil(r);
        for w in 0..out {
            let (start, end) = (w * r, ((w + 1) * r).min(t));
            let n = (end - start) as f64;
            for c in 0..d {
                data.push((start..end).map(|i| x.frames.get(i, c)).sum::<f64>() / n);
            }
        }
        out
    };
    FeatureSequence::new(Tensor::matrix(rows, d, data)?, target_period_ms, x.kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, d: usize, period: f64, kind: FeatureKind) -> FeatureSequence {
        let data = (0..t * d).map(|i| i as f64 * 0.5).collect();
        FeatureSequence::new(Tensor::matrix(t, d, data).unwrap(), period, kind).unwrap()
    }

    #[test]
    fn fbk_plus_ssl_is_296_dims() {
        let f = fuse_features(&seq(7, 40, 10.0, FeatureKind::Fbk), &seq(7, 256, 10.0, FeatureKind::Ssl)).unwrap();
        assert_eq!(f.dim(), 296);
        assert_eq!(f.kind(), FeatureKind::Fused);
    }

    #[test]
    fn fusing_with_empty_stream_is_identity() {
        let x = seq(5, 3, 10.0, FeatureKind::Fbk);
        let e = FeatureSequence::empty(5, 10.0, FeatureKind::Ssl).unwrap();
        assert_eq!(fuse_features(&x, &e).unwrap(), x);
    }

    #[test]
    fn three_way_fusion_is_440_dims() {
        let fbk = seq(4, 40, 10.0, FeatureKind::Fbk);
        let ssl = seq(4, 256, 10.0, FeatureKind::Ssl);
        let uti = seq(4, 144, 10.0, FeatureKind::Uti);
        let left = fuse_features(&fuse_features(&fbk, &ssl).unwrap(), &uti).unwrap();
        let right = fuse_features(&fbk, &fuse_features(&ssl, &uti).unwrap()).unwrap();
        assert_eq!(left.dim(), 440);
        assert_eq!(left, right);
    }

    #[test]
    fn fuse_mismatch_names_both_streams() {
        let err = fuse_features(&seq(4, 2, 10.0, FeatureKind::Fbk), &seq(5, 2, 10.0, FeatureKind::Uti)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fbk") && msg.contains("uti"), "{msg}");
        assert!(fuse_features(&seq(4, 2, 10.0, FeatureKind::Fbk), &seq(4, 2, 20.0, FeatureKind::Ssl)).is_err());
    }

    #[test]
    fn upsample_repeats_frames() {
        let x = seq(5, 2, 20.0, FeatureKind::Ssl);
        let y = resample_frames(&x, 10.0).unwrap();
        assert_eq!(y.num_frames(), 10);
        for t in 0..10 {
            assert_eq!(y.row(t), x.row(t / 2));
        }
    }

    #[test]
    fn downsample_pools_pairs() {
        let x = seq(10, 1, 10.0, FeatureKind::Fbk);
        let y = resample_frames(&x, 20.0).unwrap();
        assert_eq!(y.num_frames(), 5);
        assert_eq!(y.row(0), &[0.25]);
        assert_eq!(y.frame_period_ms(), 20.0);
    }

    #[test]
    fn partial_window_is_pooled() {
        let x = seq(5, 1, 10.0, FeatureKind::Fbk);
        let y = resample_frames(&x, 20.0).unwrap();
        assert_eq!(y.num_frames(), 3);
        assert_eq!(y.row(2), &[2.0]);
    }

    #[test]
    fn round_trip_is_exact() {
        let x = seq(6, 3, 20.0, FeatureKind::Ssl);
        let back = resample_frames(&resample_frames(&x, 10.0).unwrap(), 20.0).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn incommensurate_periods_rejected() {
        assert!(resample_frames(&seq(4, 1, 10.0, FeatureKind::Fbk), 15.0).is_err());
    }

    #[test]
    fn invalid_sequences_rejected() {
        assert!(FeatureSequence::new(Tensor::matrix(1, 1, vec![f64::NAN]).unwrap(), 10.0, FeatureKind::Fbk).is_err());
        assert!(FeatureSequence::new(Tensor::zeros(&[2, 2]), 0.0, FeatureKind::Fbk).is_err());
    }
}
