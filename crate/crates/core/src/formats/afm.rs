//! `AFM1` feature matrix: magic, u32 rows, u32 cols, f32 frame period (ms),
//! row-major f32 data.

use super::{checked_u32, Reader};
use crate::error::Result;
use crate::features::{FeatureKind, FeatureSequence};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"AFM1";

pub fn encode_afm(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let (rows, cols) = (seq.num_frames(), seq.dim());
    let mut out = Vec::with_capacity(16 + 4 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&checked_u32(rows, "rows", "AFM1")?.to_le_bytes());
    out.extend_from_slice(&checked_u32(cols, "cols", "AFM1")?.to_le_bytes());
    out.extend_from_slice(&(seq.frame_period_ms() as f32).to_le_bytes());
    for &v in seq.frames().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// The format carries no feature kind, so the caller supplies it.
pub fn decode_afm(bytes: &[u8], kind: FeatureKind) -> Result<FeatureSequence> {
    let mut r = Reader::new(bytes, "AFM1");
    r.magic(MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let period = r.f32()? as f64;
    let n = rows.checked_mul(cols).ok_or_else(|| crate::Error::format("AFM1", "rows × cols overflows"))?;
    if bytes.len().saturating_sub(16) / 4 < n {
        return Err(crate::Error::format(
            "AFM1",
            format!("truncated: header declares {rows}×{cols} values"),
        ));
    }
    let data = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    FeatureSequence::new(Tensor::matrix(rows, cols, data)?, period, kind)
}
