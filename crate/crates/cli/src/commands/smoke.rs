//! `smoke`: the desk-scale end-to-end pipeline in one process.

use std::fmt::Write as _;

use asrfuse_core::pipeline::{run_smoke, SmokeConfig};

use super::{seed_override, Report};
use crate::args::SmokeArgs;
use crate::error::CliResult;
use crate::io::write_atomic;

pub fn run(args: &SmokeArgs) -> CliResult<Report> {
    let mut cfg = SmokeConfig::default();
    if let Some(s) = seed_override()?.or(args.seed) {
        cfg.seed = s;
    }
    let report = run_smoke(&cfg)?;
    let json = serde_json::to_value(&report)?;
    if let Some(out) = &args.out {
        write_atomic(out, &serde_json::to_vec_pretty(&report)?)?;
    }
    let mut text = format!(
        "seed {}: {} optimizer steps, extracted {}x{} -> fused {}-dim\n",
        report.seed, report.optimizer_steps, report.extracted_frames, report.extracted_dim, report.fused_dim
    );
    for (system, w) in &report.wer {
        let _ = writeln!(text, "{system:>10}  WER {:6.2}%", w.overall);
    }
    let s = &report.significance;
    let _ = writeln!(
        text,
        "joint vs ctc: Z {} p {} ({})",
        s.z.map_or("undefined".into(), |z| format!("{z:.4}")),
        s.p_value.map_or("undefined".into(), |p| format!("{p:.4}")),
        if s.significant { "significant" } else { "not significant" }
    );
    Ok(Report { text, json })
}
