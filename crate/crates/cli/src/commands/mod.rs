pub mod combine;
pub mod features;
pub mod run;
pub mod scoring;
pub mod smoke;
pub mod synth;
pub mod train;

use std::path::PathBuf;
use std::str::FromStr;

use asrfuse_core::bottleneck::BottleneckPosition;

use crate::args::{Command, SynthKind};
use crate::error::{CliError, CliResult};

/// What a command prints: a human-readable summary and the same content as
/// JSON for `--json`.
#[derive(Debug)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
}

pub const SEED_ENV: &str = "ASRFUSE_SEED";

/// `ASRFUSE_SEED`, when set, replaces every configured seed.
pub fn seed_override() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::validation(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        _ => Ok(None),
    }
}

/// Checks that need no input data. Config files that already exist are
/// parsed fully; `produced` lists paths earlier pipeline stages will write.
pub fn validate_static(cmd: &Command, produced: &[PathBuf]) -> CliResult<()> {
    let pending = |p: &std::path::Path| produced.iter().any(|o| p.starts_with(o));
    match cmd {
        Command::Train(a) => {
            if !pending(&a.config) {
                train::plan(&a.config)?;
            }
        }
        Command::Extract(a) => {
            if let Some(p) = &a.position {
                BottleneckPosition::from_str(p)?;
            }
        }
        Command::Fuse(a) => {
            if !(a.period > 0.0) {
                return Err(CliError::validation("period must be positive"));
            }
        }
        Command::Combine(a) => {
            combine::validate(a)?;
        }
        Command::Significance(a) => {
            if !(a.alpha > 0.0 && a.alpha < 1.0) {
                return Err(CliError::validation(format!("alpha must be in (0, 1), got {}", a.alpha)));
            }
        }
        Command::Synth(a) => {
            if a.what != SynthKind::Fixture && a.seed.is_none() && seed_override()?.is_none() {
                return Err(CliError::validation("synthetic corpora need a seed"));
            }
        }
        Command::Invert(_) | Command::Score(_) | Command::Smoke(_) | Command::Run(_) => {}
    }
    Ok(())
}

pub fn execute(cmd: &Command, json: bool) -> CliResult<Report> {
    match cmd {
        Command::Train(a) => train::run(a),
        Command::Extract(a) => features::extract(a),
        Command::Fuse(a) => features::fuse(a),
        Command::Invert(a) => features::invert(a),
        Command::Combine(a) => combine::run(a),
        Command::Score(a) => scoring::score(a),
        Command::Significance(a) => scoring::significance(a),
        Command::Synth(a) => synth::run(a),
        Command::Smoke(a) => smoke::run(a),
        Command::Run(a) => run::run(a, json),
    }
}
