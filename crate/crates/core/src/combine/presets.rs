//! Published combination weights, stored as the reported ratios.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    FrameJoint,
    Rescore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub mode: CombineMode,
    /// Score names for rescoring presets; empty for positional presets.
    pub names: &'static [&'static str],
    pub ratios: &'static [f64],
    pub note: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "uaspeech-2way-a",
        mode: CombineMode::FrameJoint,
        names: &[],
        ratios: &[9.0, 8.0],
        note: "UASpeech 2-way frame-level joint decoding, first pair",
    },
    Preset {
        name: "uaspeech-2way-b",
        mode: CombineMode::FrameJoint,
        names: &[],
        ratios: &[7.0, 9.0],
        note: "UASpeech 2-way frame-level joint decoding, second pair",
    },
    Preset {
        name: "uaspeech-3way",
        mode: CombineMode::FrameJoint,
        names: &[],
        ratios: &[8.0, 5.0, 5.0],
        note: "UASpeech 3-way frame-level joint decoding",
    },
    Preset {
        name: "pitt-3way",
        mode: CombineMode::FrameJoint,
        names: &[],
        ratios: &[5.0, 2.0, 8.0],
        note: "DementiaBank Pitt 3-way frame-level joint decoding",
    },
    Preset {
        name: "uaspeech-rescore",
        mode: CombineMode::Rescore,
        names: &["ctc", "attention", "tdnn"],
        ratios: &[0.9, 0.001, 0.1],
        note: "UASpeech cross-system N-best rescoring (ctc:attention:tdnn)",
    },
    Preset {
        name: "pitt-rescore",
        mode: CombineMode::Rescore,
        names: &["ctc", "attention", "tdnn"],
        ratios: &[1.0, 0.05, 0.0075],
        note: "DementiaBank Pitt cross-system N-best rescoring (ctc:attention:tdnn)",
    },
];

impl Preset {
    /// Ratios scaled to sum to one.
    pub fn normalized(&self) -> Vec<f64> {
        normalize(self.ratios)
    }

    /// Named normalized weights (rescoring presets).
    pub fn named(&self) -> BTreeMap<String, f64> {
        self.names.iter().map(|n| n.to_string()).zip(self.normalized()).collect()
    }
}

pub fn normalize(ratios: &[f64]) -> Vec<f64> {
    let total: f64 = ratios.iter().sum();
    ratios.iter().map(|r| r / total).collect()
}

pub fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::invalid(format!("unknown preset `{name}` (available: {})", known.join(", ")))
    })
}
