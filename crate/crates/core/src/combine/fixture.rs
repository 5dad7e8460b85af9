//! A two-system development set whose errors are complementary: each system
//! misreads a different half of the words, and only weights close to an
//! even mix read every word correctly.

use super::FrameScoreStream;
use crate::error::Result;
use crate::eval::{align_and_count, EditCounts};
use crate::numcore::Tensor;

pub const BLANK: &str = "<b>";
const WORDS: [&str; 4] = ["one", "two", "three", "four"];
const FLOOR: f64 = -10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureUtterance {
    pub reference: Vec<String>,
    /// One stream per system.
    pub streams: Vec<FrameScoreStream>,
}

fn inventory() -> Vec<String> {
    std::iter::once(BLANK).chain(WORDS).map(String::from).collect()
}

/// Word frames carry a reference/competitor margin of −1 in one system and
/// +1.2 in the other, so the fused margin `w_A·m_A + w_B·m_B` is positive for
/// both word kinds only when `w_A ∈ (5/11, 6/11)` on the simplex.
pub fn complementary_errors() -> Vec<FixtureUtterance> {
    let inv = inventory();
    let v = inv.len();
    let mut out = Vec::new();
    for u in 0..4 {
        let reference = vec![WORDS[u % 4].to_string(), WORDS[(u + 1) % 4].to_string()];
        let mut rows = [Vec::new(), Vec::new()];
        for (w, word) in reference.iter().enumerate() {
            let r = 1 + WORDS.iter().position(|x| x == word).unwrap();
            let c = 1 + ((r + 1) % 4);
            // first word: system A wrong; second word: system B wrong
            let margins = if w == 0 { [-1.0, 1.2] } else { [1.2, -1.0] };
            for (sys, m) in margins.iter().enumerate() {
                let mut row = vec![FLOOR; v];
                row[r] = -1.5 + m / 2.0;
                row[c] = -1.5 - m / 2.0;
                rows[sys].push(row.clone());
                rows[sys].push(row);
                let mut blank = vec![-5.0; v];
                blank[0] = -0.1;
                rows[sys].push(blank);
            }
        }
        let streams = rows
            .iter()
            .map(|r| FrameScoreStream::new(format!("dev{u:02}"), inv.clone(), Tensor::from_rows(r).unwrap(), 10.0).unwrap())
            .collect();
        out.push(FixtureUtterance { reference, streams });
    }
    out
}

/// Pooled WER (percent) of frame-joint decoding with `weights`.
pub fn fused_wer(dev: &[FixtureUtterance], weights: &[f64]) -> Result<f64> {
    let mut counts = EditCounts::default();
    for u in dev {
        let out = super::joint_decode(&u.streams, weights)?;
        counts.add(&align_and_count(&u.reference, &out.readout(Some(BLANK))).counts);
    }
    Ok(counts.rate().unwrap_or(0.0))
}
