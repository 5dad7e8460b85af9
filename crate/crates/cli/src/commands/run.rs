//! `run`: executes a `[[stage]]` pipeline file after validating every stage.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;

use super::{execute, validate_static, Report};
use crate::args::{Command, RunArgs};
use crate::error::{CliError, CliResult};
use crate::io::read_text;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(rename = "stage")]
    pub stages: Vec<Command>,
}

pub fn load(path: &Path) -> CliResult<PipelineConfig> {
    let text = read_text(path)?;
    let mut cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    if cfg.stages.is_empty() {
        return Err(CliError::validation(format!("{}: no [[stage]] entries", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    for stage in &mut cfg.stages {
        stage.rebase(&base);
    }
    Ok(cfg)
}

/// Every stage must be well-formed and find its inputs on disk or among the
/// outputs of an earlier stage.
pub fn validate(cfg: &PipelineConfig) -> CliResult<()> {
    let mut produced: Vec<PathBuf> = Vec::new();
    for (i, stage) in cfg.stages.iter().enumerate() {
        let ctx = |e: CliError| e.context(format!("stage {} ({})", i + 1, stage.name()));
        if matches!(stage, Command::Run(_)) {
            return Err(ctx(CliError::validation("pipelines cannot nest `run`")));
        }
        for input in stage.inputs() {
            let upstream = produced.iter().any(|p| input.starts_with(p));
            if !upstream && !input.exists() {
                return Err(ctx(CliError::validation(format!(
                    "input {} does not exist and no earlier stage writes it",
                    input.display()
                ))));
            }
        }
        validate_static(stage, &produced).map_err(ctx)?;
        produced.extend(stage.outputs());
    }
    Ok(())
}

pub fn run(args: &RunArgs, json_out: bool) -> CliResult<Report> {
    let cfg = load(&args.config)?;
    validate(&cfg)?;
    let mut text = String::new();
    let mut reports = Vec::new();
    for (i, stage) in cfg.stages.iter().enumerate() {
        log::info!("stage {}: {}", i + 1, stage.name());
        let r = execute(stage, json_out).map_err(|e| e.context(format!("stage {} ({})", i + 1, stage.name())))?;
        text.push_str(&format!("[{}] {}\n{}\n", i + 1, stage.name(), r.text.trim_end()));
        reports.push(json!({ "stage": i + 1, "command": stage.name(), "report": r.json }));
    }
    Ok(Report { text, json: json!(reports) })
}
