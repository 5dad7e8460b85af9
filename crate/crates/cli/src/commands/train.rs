//! `train`: SSL objectives and the A2A inversion model from a TOML file.

use std::path::{Path, PathBuf};

use asrfuse_core::a2a::{generate_parallel, A2aTrainConfig, A2aTrainer, ParallelConfig, ParallelPair};
use asrfuse_core::features::{FeatureKind, FeatureSequence};
use asrfuse_core::formats::afm::decode_afm;
use asrfuse_core::formats::mdl::ModelFile;
use asrfuse_core::numcore::Tensor;
use asrfuse_core::ssl::synth::{generate_token_corpus, TokenCorpusConfig, Utterance};
use asrfuse_core::ssl::train::{Objective, SslTrainConfig, SslTrainer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{seed_override, Report};
use crate::args::TrainArgs;
use crate::error::{CliError, CliResult, Context};
use crate::io::{read_bytes, read_text, Manifest, Staged};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainObjective {
    Wav2vec2,
    Hubert,
    Data2vec,
    Ctc,
    A2aMtl,
}

impl TrainObjective {
    fn ssl(self) -> Option<Objective> {
        match self {
            TrainObjective::Wav2vec2 => Some(Objective::Wav2vec2),
            TrainObjective::Hubert => Some(Objective::Hubert),
            TrainObjective::Data2vec => Some(Objective::Data2vec),
            TrainObjective::Ctc => Some(Objective::Ctc),
            TrainObjective::A2aMtl => None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Number of synthetic token utterances (SSL objectives).
    pub synthetic: Option<usize>,
    /// TSV manifest: `features` (+ `tokens`) for SSL, `acoustic` and
    /// `articulatory` for a2a-mtl. Relative to the config file.
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub corpus: TokenCorpusConfig,
    #[serde(default)]
    pub parallel: ParallelConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: TrainObjective,
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    pub ssl: Option<SslTrainConfig>,
    pub a2a: Option<A2aTrainConfig>,
}

const DEFAULT_SYNTHETIC: usize = 24;

/// A fully checked run description.
#[derive(Debug, Clone)]
pub enum Plan {
    Ssl { config: SslTrainConfig, corpus: Vec<Utterance> },
    A2a { config: A2aTrainConfig, data: ParallelPair },
}

/// Parses, validates and loads the training data; touches no outputs.
pub fn plan(path: &Path) -> CliResult<Plan> {
    let text = read_text(path)?;
    let raw: toml::Table = toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    for section in ["ssl", "a2a"] {
        if let Some(t) = raw.get(section).and_then(|v| v.as_table()) {
            for key in ["seed", "objective"] {
                if t.contains_key(key) {
                    return Err(CliError::validation(format!(
                        "{}: set `{key}` at the top level, not in [{section}]",
                        path.display()
                    )));
                }
            }
        }
    }
    let mut cfg: TrainConfig =
        toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed_override()? {
        cfg.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let data = &cfg.data;
    if data.synthetic.is_some() && data.manifest.is_some() {
        return Err(CliError::validation("[data]: give either `synthetic` or `manifest`, not both"));
    }
    match cfg.objective.ssl() {
        Some(objective) => {
            if cfg.a2a.is_some() {
                return Err(CliError::validation("[a2a] is only used by objective a2a-mtl"));
            }
            let config = SslTrainConfig {
                objective,
                seed: cfg.seed,
                ..cfg.ssl.clone().unwrap_or_default()
            };
            config.validate().ctx("[ssl]")?;
            let corpus = match &data.manifest {
                Some(m) => ssl_manifest(&base.join(m), objective)?,
                None => {
                    let n = data.synthetic.unwrap_or(DEFAULT_SYNTHETIC);
                    generate_token_corpus(cfg.seed, n, &data.corpus).ctx("[data.corpus]")?.utterances
                }
            };
            if corpus.is_empty() {
                return Err(CliError::validation("training data is empty"));
            }
            for u in &corpus {
                if u.features.dim() != config.model.input_dim
                    || (u.features.frame_period_ms() - config.model.frame_period_ms).abs() > 1e-9
                {
                    return Err(CliError::validation(format!(
                        "utterance `{}` has {}-dim frames at {} ms but [ssl.model] expects {}-dim at {} ms",
                        u.id,
                        u.features.dim(),
                        u.features.frame_period_ms(),
                        config.model.input_dim,
                        config.model.frame_period_ms
                    )));
                }
            }
            Ok(Plan::Ssl { config, corpus })
        }
        None => {
            if cfg.ssl.is_some() {
                return Err(CliError::validation("[ssl] is not used by objective a2a-mtl"));
            }
            if data.synthetic.is_some() {
                return Err(CliError::validation("a2a-mtl takes [data.parallel] or a manifest, not `synthetic`"));
            }
            let config = A2aTrainConfig { seed: cfg.seed, ..cfg.a2a.clone().unwrap_or_default() };
            config.validate().ctx("[a2a]")?;
            let data = match &data.manifest {
                Some(m) => parallel_manifest(&base.join(m))?,
                None => generate_parallel(cfg.seed, &data.parallel, None).ctx("[data.parallel]")?.pair,
            };
            Ok(Plan::A2a { config, data })
        }
    }
}

fn ssl_manifest(path: &Path, objective: Objective) -> CliResult<Vec<Utterance>> {
    let m = Manifest::load(path)?;
    let mut out = Vec::new();
    for e in m.entries(&["features"])? {
        let features = decode_afm(&read_bytes(&e.paths["features"])?, FeatureKind::Fbk).ctx(&e.utt_id)?;
        let tokens = match e.metadata.get("tokens") {
            Some(t) => t
                .split_whitespace()
                .map(|s| s.parse::<usize>().ok().filter(|&k| k > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| CliError::validation(format!("`{}`: tokens must be positive integers", e.utt_id)))?,
            None if objective == Objective::Ctc => {
                return Err(CliError::validation(format!("{}: ctc needs a `tokens` column", path.display())))
            }
            None => Vec::new(),
        };
        out.push(Utterance { id: e.utt_id, features, tokens, frame_labels: Vec::new() });
    }
    Ok(out)
}

/// Concatenates every parallel utterance of the manifest into one stream.
fn parallel_manifest(path: &Path) -> CliResult<ParallelPair> {
    let m = Manifest::load(path)?;
    let entries = m.entries(&["acoustic", "articulatory"])?;
    if entries.is_empty() {
        return Err(CliError::validation(format!("{}: no training data", path.display())));
    }
    let mut ac: Vec<Vec<f64>> = Vec::new();
    let mut art: Vec<Vec<f64>> = Vec::new();
    let mut period = None;
    for e in &entries {
        let a = decode_afm(&read_bytes(&e.paths["acoustic"])?, FeatureKind::Fbk).ctx(&e.utt_id)?;
        let u = decode_afm(&read_bytes(&e.paths["articulatory"])?, FeatureKind::Uti).ctx(&e.utt_id)?;
        ParallelPair::new(a.clone(), u.clone()).ctx(&e.utt_id)?;
        if *period.get_or_insert(a.frame_period_ms()) != a.frame_period_ms() {
            return Err(CliError::validation(format!("`{}`: frame period differs from earlier utterances", e.utt_id)));
        }
        ac.extend((0..a.num_frames()).map(|t| a.row(t).to_vec()));
        art.extend((0..u.num_frames()).map(|t| u.row(t).to_vec()));
    }
    let p = period.unwrap_or(10.0);
    let seq = |rows: &[Vec<f64>], kind| -> CliResult<FeatureSequence> {
        Ok(FeatureSequence::new(Tensor::from_rows(rows)?, p, kind)?)
    };
    Ok(ParallelPair::new(seq(&ac, FeatureKind::Fbk)?, seq(&art, FeatureKind::Uti)?)?)
}

fn config_json(plan: &Plan) -> CliResult<Value> {
    Ok(match plan {
        Plan::Ssl { config, .. } => serde_json::to_value(config)?,
        Plan::A2a { config, .. } => serde_json::to_value(config)?,
    })
}

/// Top-level keys whose values differ, for resume errors.
fn differing_keys(a: &Value, b: &Value) -> Vec<String> {
    match (a.as_object(), b.as_object()) {
        (Some(x), Some(y)) => {
            let mut keys: Vec<String> = x.keys().chain(y.keys()).filter(|k| x.get(*k) != y.get(*k)).cloned().collect();
            keys.dedup();
            keys
        }
        _ => vec!["<config>".into()],
    }
}

fn check_finite(epoch: usize, loss: f64) -> CliResult<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(asrfuse_core::Error::NonFinite(format!("training loss {loss} at epoch {epoch}")).into())
    }
}

pub fn run(args: &TrainArgs) -> CliResult<Report> {
    let plan = plan(&args.config)?;
    let log_path = args.log_path();
    let mut log_lines: Vec<String> = Vec::new();

    let resumed = if args.resume {
        let file = ModelFile::decode(&read_bytes(&args.out)?).ctx(args.out.display())?;
        let saved = file.header.get("config").cloned().unwrap_or(Value::Null);
        let want = config_json(&plan)?;
        if saved != want {
            return Err(CliError::validation(format!(
                "{}: checkpoint was trained with a different config (differs in: {})",
                args.out.display(),
                differing_keys(&saved, &want).join(", ")
            )));
        }
        Some(file)
    } else {
        None
    };

    let budget = args.stop_after.unwrap_or(usize::MAX);
    let (file, summary) = match plan {
        Plan::Ssl { config, corpus } => {
            let mut trainer = match &resumed {
                Some(f) => SslTrainer::from_model_file(f).ctx(args.out.display())?,
                None => SslTrainer::new(config.clone(), &corpus)?,
            };
            let at_limit = |t: &SslTrainer| config.max_steps.is_some_and(|m| t.steps_taken() >= m as u64);
            let mut ran = 0;
            let mut last = None;
            while trainer.epochs_done() < config.epochs && !at_limit(&trainer) && ran < budget {
                let log = trainer.train_epoch(&corpus)?;
                check_finite(log.epoch, log.mean_loss)?;
                log::info!("epoch {}: loss {:.6} over {} steps", log.epoch, log.mean_loss, log.steps);
                log_lines.push(serde_json::to_string(&log)?);
                last = Some(log.mean_loss);
                ran += 1;
            }
            let summary = json!({
                "objective": config.objective.as_str(),
                "epochs_done": trainer.epochs_done(),
                "optimizer_steps": trainer.steps_taken(),
                "last_loss": last,
            });
            (trainer.to_model_file()?, summary)
        }
        Plan::A2a { config, data } => {
            let mut trainer = match &resumed {
                Some(f) => A2aTrainer::from_model_file(f).ctx(args.out.display())?,
                None => A2aTrainer::new(
                    config.clone(),
                    data.acoustic.dim(),
                    data.articulatory.dim(),
                    data.acoustic.num_frames(),
                )?,
            };
            let mut ran = 0;
            let mut last = None;
            while trainer.epochs_done() < config.epochs && ran < budget {
                let log = trainer.train_epoch(&data)?;
                check_finite(log.epoch, log.train_loss)?;
                log::info!("epoch {}: loss {:.6} (pearson {:.4})", log.epoch, log.train_loss, log.pearson);
                log_lines.push(serde_json::to_string(&log)?);
                last = Some(log);
                ran += 1;
            }
            let summary = json!({
                "objective": "a2a-mtl",
                "epochs_done": trainer.epochs_done(),
                "last": last,
            });
            (trainer.to_model_file()?, summary)
        }
    };

    let mut log_text = String::new();
    if resumed.is_some() {
        // keep the epochs the checkpoint already covers
        let done = summary["epochs_done"].as_u64().unwrap_or(0) as usize - log_lines.len();
        if let Ok(old) = std::fs::read_to_string(&log_path) {
            for line in old.lines().filter(|l| !l.trim().is_empty()).take(done) {
                log_text.push_str(line);
                log_text.push('\n');
            }
        }
    }
    for l in &log_lines {
        log_text.push_str(l);
        log_text.push('\n');
    }

    let mut staged = Staged::default();
    staged.add(&args.out, file.encode()?);
    staged.add(&log_path, log_text);
    staged.commit()?;

    let text = format!(
        "trained {} to {} epochs; model {} log {}",
        summary["objective"].as_str().unwrap_or("?"),
        summary["epochs_done"],
        args.out.display(),
        log_path.display()
    );
    Ok(Report { text, json: summary })
}
