//! Command-line surface. Every subcommand's arguments also deserialize from
//! a `[[stage]]` table of a pipeline file, with keys spelled like the flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "asrfuse", version, about = "SSL feature fusion, system combination and scoring for disordered-speech ASR")]
pub struct Cli {
    /// Print machine-readable JSON reports instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for per-utterance work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train an SSL objective (wav2vec2, hubert, data2vec, ctc) or the A2A inversion model (a2a-mtl).
    Train(TrainArgs),
    /// Extract bottleneck features from a trained SSL model.
    Extract(ExtractArgs),
    /// Resample feature streams to a common frame period and concatenate them.
    Fuse(FuseArgs),
    /// Generate articulatory features from acoustic features with a trained A2A model.
    Invert(InvertArgs),
    /// Combine systems by frame-level joint decoding or N-best rescoring.
    Combine(CombineArgs),
    /// Score hypotheses against references (WER or CER), optionally per group.
    Score(ScoreArgs),
    /// Matched-pairs significance test between two systems.
    Significance(SignificanceArgs),
    /// Write synthetic corpora and fixtures.
    Synth(SynthArgs),
    /// Run the desk-scale end-to-end smoke pipeline.
    Smoke(SmokeArgs),
    /// Run a multi-stage pipeline file.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    /// TOML run description.
    #[arg(long)]
    pub config: PathBuf,
    /// Model file (MDL1) to write; with --resume also the checkpoint to continue.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON Lines epoch log (default: <out> with extension `log.jsonl`).
    #[arg(long)]
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// Continue training from the model at --out.
    #[arg(long)]
    #[serde(default)]
    pub resume: bool,
    /// Train at most this many epochs in this invocation.
    #[arg(long)]
    #[serde(default)]
    pub stop_after: Option<usize>,
}

impl TrainArgs {
    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.out.with_extension("log.jsonl"))
    }
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// TSV with columns utt_id, features (AFM1 path), plus metadata.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Expected bottleneck position (after-encoder, after-middle-block, after-last-block).
    #[arg(long)]
    #[serde(default)]
    pub position: Option<String>,
    /// Expected bottleneck dimension.
    #[arg(long)]
    #[serde(default)]
    pub dim: Option<usize>,
}

fn default_period() -> f64 {
    10.0
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FuseArgs {
    /// Feature manifests (utt_id, features) in concatenation order.
    #[arg(long = "manifest", required = true)]
    #[serde(rename = "manifest")]
    pub manifests: Vec<PathBuf>,
    /// Target frame period in ms.
    #[arg(long, default_value_t = default_period())]
    #[serde(default = "default_period")]
    pub period: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct InvertArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Acoustic feature manifest (utt_id, features).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineModeArg {
    FrameJoint,
    Rescore,
}

fn default_step() -> f64 {
    0.1
}

fn default_depth() -> usize {
    asrfuse_core::combine::DEFAULT_NBEST
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CombineArgs {
    #[arg(long, value_enum)]
    pub mode: CombineModeArg,
    /// frame-joint: one score manifest (utt_id, scores) per system.
    /// rescore: one N-best JSON Lines file.
    #[arg(long = "input", required = true)]
    #[serde(rename = "input")]
    pub inputs: Vec<PathBuf>,
    /// A preset (uaspeech-2way-a 9:8, uaspeech-2way-b 7:9, uaspeech-3way 8:5:5,
    /// pitt-3way 5:2:8, uaspeech-rescore 0.9:0.001:0.1, pitt-rescore 1:0.05:0.0075),
    /// ratios `a:b:c` (frame-joint), `name=w,...` (rescore), or `tune`.
    #[arg(long)]
    pub weights: String,
    /// Development inputs for `tune`, shaped like --input.
    #[arg(long = "dev")]
    #[serde(default)]
    pub dev: Vec<PathBuf>,
    /// Development reference transcripts for `tune`.
    #[arg(long)]
    #[serde(default)]
    pub dev_ref: Option<PathBuf>,
    /// Grid step of the weight search; must divide 1.
    #[arg(long, default_value_t = default_step())]
    #[serde(default = "default_step")]
    pub step: f64,
    /// N-best depth kept before rescoring.
    #[arg(long, default_value_t = default_depth())]
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Blank token dropped from frame-joint readouts.
    #[arg(long)]
    #[serde(default)]
    pub blank: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    #[default]
    Wer,
    Cer,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScoreArgs {
    /// Hypothesis transcripts (utt_id, text).
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference transcripts (utt_id, text, metadata...).
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    pub reference: PathBuf,
    /// Metadata columns to break the rate down by, e.g. `seen,intelligibility`.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub group_by: Vec<String>,
    #[arg(long, value_enum, default_value_t = ScoreMode::Wer)]
    #[serde(default)]
    pub mode: ScoreMode,
    /// Also write the JSON report here.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marker {
    /// `†`: significant against the SSL-only baseline.
    #[default]
    Dagger,
    /// `*`: significant against the filter-bank baseline.
    Asterisk,
}

impl Marker {
    pub fn symbol(self) -> &'static str {
        match self {
            Marker::Dagger => "†",
            Marker::Asterisk => "*",
        }
    }
}

fn default_alpha() -> f64 {
    asrfuse_core::eval::DEFAULT_ALPHA
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SignificanceArgs {
    /// The system under test.
    #[arg(long)]
    pub hyp: PathBuf,
    /// The system it is compared against.
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = default_alpha())]
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = Marker::Dagger)]
    #[serde(default)]
    pub marker: Marker,
    #[arg(long, value_enum, default_value_t = ScoreMode::Wer)]
    #[serde(default)]
    pub mode: ScoreMode,
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Token-sequence corpus: AFM1 features, manifest, reference transcripts.
    Tokens,
    /// One parallel acoustic/articulatory stream.
    Parallel,
    /// Two frame-score systems with complementary errors, plus references.
    Fixture,
}

fn default_count() -> usize {
    24
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub what: SynthKind,
    /// Required for the random corpora.
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Utterances (tokens).
    #[arg(long, default_value_t = default_count())]
    #[serde(default = "default_count")]
    pub count: usize,
    /// Frames (parallel); default 2500.
    #[arg(long)]
    #[serde(default)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SmokeArgs {
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Write the full JSON report here.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunArgs {
    /// Pipeline file with `[[stage]]` tables.
    pub config: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Extract(_) => "extract",
            Command::Fuse(_) => "fuse",
            Command::Invert(_) => "invert",
            Command::Combine(_) => "combine",
            Command::Score(_) => "score",
            Command::Significance(_) => "significance",
            Command::Synth(_) => "synth",
            Command::Smoke(_) => "smoke",
            Command::Run(_) => "run",
        }
    }

    /// Files or directories the command reads.
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Train(a) => {
                let mut v = vec![a.config.as_path()];
                if a.resume {
                    v.push(&a.out);
                }
                v
            }
            Command::Extract(a) => vec![&a.model, &a.manifest],
            Command::Fuse(a) => a.manifests.iter().map(PathBuf::as_path).collect(),
            Command::Invert(a) => vec![&a.model, &a.manifest],
            Command::Combine(a) => a.inputs.iter().chain(&a.dev).chain(&a.dev_ref).map(PathBuf::as_path).collect(),
            Command::Score(a) => vec![&a.hyp, &a.reference],
            Command::Significance(a) => vec![&a.hyp, &a.baseline, &a.reference],
            Command::Synth(_) | Command::Smoke(_) => vec![],
            Command::Run(a) => vec![&a.config],
        }
    }

    /// Files or directories the command writes.
    pub fn outputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Train(a) => vec![a.out.clone(), a.log_path()],
            Command::Extract(a) => vec![a.out_dir.clone()],
            Command::Fuse(a) => vec![a.out_dir.clone()],
            Command::Invert(a) => vec![a.out_dir.clone()],
            Command::Combine(a) => vec![a.out_dir.clone()],
            Command::Score(a) => a.out.iter().cloned().collect(),
            Command::Significance(a) => a.out.iter().cloned().collect(),
            Command::Synth(a) => vec![a.out_dir.clone()],
            Command::Smoke(a) => a.out.iter().cloned().collect(),
            Command::Run(_) => vec![],
        }
    }

    /// Makes every relative path relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            Command::Train(a) => {
                fix(&mut a.config);
                fix(&mut a.out);
                a.log.as_mut().map(fix);
            }
            Command::Extract(a) => {
                fix(&mut a.model);
                fix(&mut a.manifest);
                fix(&mut a.out_dir);
            }
            Command::Fuse(a) => {
                a.manifests.iter_mut().for_each(fix);
                fix(&mut a.out_dir);
            }
            Command::Invert(a) => {
                fix(&mut a.model);
                fix(&mut a.manifest);
                fix(&mut a.out_dir);
            }
            Command::Combine(a) => {
                a.inputs.iter_mut().chain(a.dev.iter_mut()).for_each(fix);
                a.dev_ref.as_mut().map(fix);
                fix(&mut a.out_dir);
            }
            Command::Score(a) => {
                fix(&mut a.hyp);
                fix(&mut a.reference);
                a.out.as_mut().map(fix);
            }
            Command::Significance(a) => {
                fix(&mut a.hyp);
                fix(&mut a.baseline);
                fix(&mut a.reference);
                a.out.as_mut().map(fix);
            }
            Command::Synth(a) => fix(&mut a.out_dir),
            Command::Smoke(a) => {
                a.out.as_mut().map(fix);
            }
            Command::Run(a) => fix(&mut a.config),
        }
    }
}
