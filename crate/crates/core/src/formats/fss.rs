//! `FSS1` frame-score stream: magic, u32 T, u32 |V|, f32 frame period (ms),
//! u32 inventory length, UTF-8 JSON token array, then T×|V| f32
//! log-likelihoods.

use super::{checked_u32, Reader};
use crate::combine::FrameScoreStream;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"FSS1";

pub fn encode_fss(stream: &FrameScoreStream) -> Result<Vec<u8>> {
    let inventory = serde_json::to_vec(&stream.inventory)?;
    let (t, v) = (stream.num_frames(), stream.inventory.len());
    let mut out = Vec::with_capacity(20 + inventory.len() + 4 * t * v);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&checked_u32(t, "frames", "FSS1")?.to_le_bytes());
    out.extend_from_slice(&checked_u32(v, "inventory size", "FSS1")?.to_le_bytes());
    out.extend_from_slice(&(stream.frame_period_ms as f32).to_le_bytes());
    out.extend_from_slice(&checked_u32(inventory.len(), "inventory blob", "FSS1")?.to_le_bytes());
    out.extend_from_slice(&inventory);
    for &x in stream.scores.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

/// The format carries no utterance id, so the caller supplies it.
pub fn decode_fss(bytes: &[u8], utt_id: &str) -> Result<FrameScoreStream> {
    let mut r = Reader::new(bytes, "FSS1");
    r.magic(MAGIC)?;
    let t = r.u32()? as usize;
    let v = r.u32()? as usize;
    let period = r.f32()? as f64;
    let blob = r.u32()? as usize;
    let inventory: Vec<String> = serde_json::from_slice(r.take(blob)?)
        .map_err(|e| Error::format("FSS1", format!("inventory is not a JSON string array: {e}")))?;
    if inventory.len() != v {
        return Err(Error::format(
            "FSS1",
            format!("header declares {v} tokens, inventory lists {}", inventory.len()),
        ));
    }
    let n = t.checked_mul(v).ok_or_else(|| Error::format("FSS1", "T × |V| overflows"))?;
    if bytes.len().saturating_sub(20 + blob) / 4 < n {
        return Err(Error::format("FSS1", format!("truncated: header declares {t}×{v} scores")));
    }
    let data = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    FrameScoreStream::new(utt_id, inventory, Tensor::matrix(t, v, data)?, period)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let s = FrameScoreStream::new(
            "u",
            vec!["<b>".into(), "ä".into()],
            Tensor::from_rows(&[vec![-0.5, -1.25], vec![-3.0, -0.01]]).unwrap(),
            10.0,
        )
        .unwrap();
        let bytes = encode_fss(&s).unwrap();
        let back = decode_fss(&bytes, "u").unwrap();
        assert_eq!(back.inventory, s.inventory);
        assert_eq!(encode_fss(&back).unwrap(), bytes);
        assert!(decode_fss(&bytes[..bytes.len() - 2], "u").is_err());
    }
}
