//! `combine`: frame-level joint decoding or N-best rescoring, with weights
//! from a preset, an explicit list, or a grid search on development data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use asrfuse_core::combine::{
    grid_search_weights, joint_decode, preset, rescore_nbest, truncate_nbest, CombineMode, FrameScoreStream,
    NBestList, Preset,
};
use asrfuse_core::combine::presets::normalize;
use asrfuse_core::eval::{align_and_count, EditCounts};
use asrfuse_core::formats::fss::{decode_fss, encode_fss};
use asrfuse_core::formats::nbest::{read_nbest_jsonl, write_nbest_jsonl};
use asrfuse_core::formats::tsv::{write_transcripts, write_tsv, Table, TranscriptRow};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::Report;
use crate::args::{CombineArgs, CombineModeArg};
use crate::error::{CliError, CliResult, Context};
use crate::io::{check_file_stem, load_transcripts, read_bytes, read_text, Manifest, Staged};

#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Preset(&'static Preset),
    Ratios(Vec<f64>),
    Named(BTreeMap<String, f64>),
    Tune,
}

fn number(s: &str) -> CliResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::validation(format!("`{s}` is not a number")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(CliError::validation(format!("weights must be finite and non-negative, got {v}")));
    }
    Ok(v)
}

impl WeightSpec {
    pub fn parse(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if s == "tune" {
            return Ok(WeightSpec::Tune);
        }
        if s.contains('=') {
            let mut map = BTreeMap::new();
            for part in s.split(',') {
                let (name, v) = part
                    .split_once('=')
                    .ok_or_else(|| CliError::validation(format!("expected `name=weight`, got `{part}`")))?;
                if map.insert(name.trim().to_string(), number(v)?).is_some() {
                    return Err(CliError::validation(format!("weight `{}` given twice", name.trim())));
                }
            }
            return Ok(WeightSpec::Named(map));
        }
        if s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            let ratios = s.split(':').map(number).collect::<CliResult<Vec<_>>>()?;
            if !ratios.iter().any(|&r| r > 0.0) {
                return Err(CliError::validation("weights may not all be zero"));
            }
            return Ok(WeightSpec::Ratios(ratios));
        }
        Ok(WeightSpec::Preset(preset(s)?))
    }

    /// Rejects specs that cannot apply to `mode` with `systems` inputs.
    pub fn check(&self, mode: CombineModeArg, systems: Option<usize>) -> CliResult<()> {
        match (self, mode) {
            (WeightSpec::Preset(p), CombineModeArg::FrameJoint) if p.mode != CombineMode::FrameJoint => {
                Err(CliError::validation(format!("preset `{}` is a rescoring preset", p.name)))
            }
            (WeightSpec::Preset(p), CombineModeArg::Rescore) if p.mode != CombineMode::Rescore => {
                Err(CliError::validation(format!("preset `{}` is a frame-joint preset", p.name)))
            }
            (WeightSpec::Named(_), CombineModeArg::FrameJoint) => Err(CliError::validation(
                "frame-joint weights are positional ratios like 8:5:5, one per --input",
            )),
            (WeightSpec::Ratios(_), CombineModeArg::Rescore) => Err(CliError::validation(
                "rescoring weights name their scores, e.g. ctc=0.9,attention=0.001,tdnn=0.1",
            )),
            (WeightSpec::Preset(p), CombineModeArg::FrameJoint) => check_count(p.ratios.len(), systems),
            (WeightSpec::Ratios(r), _) => check_count(r.len(), systems),
            _ => Ok(()),
        }
    }
}

fn check_count(weights: usize, systems: Option<usize>) -> CliResult<()> {
    match systems {
        Some(n) if n != weights => Err(CliError::validation(format!("{weights} weights for {n} systems"))),
        _ => Ok(()),
    }
}

/// Static checks that need no input files.
pub fn validate(args: &CombineArgs) -> CliResult<WeightSpec> {
    let spec = WeightSpec::parse(&args.weights)?;
    let systems = match args.mode {
        CombineModeArg::FrameJoint => Some(args.inputs.len()),
        CombineModeArg::Rescore => {
            if args.inputs.len() != 1 {
                return Err(CliError::validation("rescore takes exactly one --input N-best file"));
            }
            None
        }
    };
    spec.check(args.mode, systems)?;
    if spec == WeightSpec::Tune {
        if args.dev.is_empty() || args.dev_ref.is_none() {
            return Err(CliError::validation("--weights tune needs --dev and --dev-ref"));
        }
        if args.dev.len() != args.inputs.len() {
            return Err(CliError::validation(format!(
                "{} --dev inputs for {} --input systems",
                args.dev.len(),
                args.inputs.len()
            )));
        }
        asrfuse_core::combine::simplex_grid(1, args.step)?;
    } else if !args.dev.is_empty() || args.dev_ref.is_some() {
        log::warn!("--dev/--dev-ref are only used with --weights tune");
    }
    if args.depth == 0 {
        return Err(CliError::validation("--depth must be at least 1"));
    }
    Ok(spec)
}

/// Per-utterance streams, one per system, in the first manifest's order.
fn load_streams(manifests: &[PathBuf]) -> CliResult<Vec<(String, Vec<FrameScoreStream>)>> {
    let lists = manifests
        .iter()
        .map(|m| Manifest::load(m)?.entries(&["scores"]))
        .collect::<CliResult<Vec<_>>>()?;
    let first = &lists[0];
    let mut maps = Vec::new();
    for (m, list) in manifests.iter().zip(&lists) {
        let map: BTreeMap<&str, &PathBuf> = list.iter().map(|e| (e.utt_id.as_str(), &e.paths["scores"])).collect();
        let missing: Vec<&str> = first.iter().map(|e| e.utt_id.as_str()).filter(|u| !map.contains_key(u)).collect();
        if !missing.is_empty() || map.len() != first.len() {
            return Err(CliError::validation(format!(
                "{} does not list the same utterances as {} (missing: {})",
                m.display(),
                manifests[0].display(),
                missing.iter().take(10).copied().collect::<Vec<_>>().join(", ")
            )));
        }
        maps.push(map);
    }
    first
        .par_iter()
        .map(|e| {
            check_file_stem(&e.utt_id)?;
            let streams = maps
                .iter()
                .enumerate()
                .map(|(k, map)| {
                    decode_fss(&read_bytes(map[e.utt_id.as_str()])?, &e.utt_id)
                        .ctx(format!("utterance `{}` system {k}", e.utt_id))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok((e.utt_id.clone(), streams))
        })
        .collect()
}

fn load_nbest(path: &Path) -> CliResult<Vec<NBestList>> {
    let lists = read_nbest_jsonl(&read_text(path)?).ctx(path.display())?;
    for l in &lists {
        l.validate().ctx(path.display())?;
    }
    Ok(lists)
}

fn load_refs(path: &Path, ids: &[&str]) -> CliResult<BTreeMap<String, Vec<String>>> {
    let rows = load_transcripts(path)?;
    let map: BTreeMap<String, Vec<String>> = rows
        .into_iter()
        .map(|r| (r.utt_id, r.text.split_whitespace().map(String::from).collect()))
        .collect();
    let missing: Vec<&str> = ids.iter().copied().filter(|u| !map.contains_key(*u)).collect();
    if !missing.is_empty() {
        return Err(CliError::validation(format!(
            "{}: {} development utterances have no reference (first: {})",
            path.display(),
            missing.len(),
            missing.iter().take(10).copied().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(map)
}

/// Pooled word error rate in percent.
fn pooled_wer(pairs: impl Iterator<Item = (Vec<String>, Vec<String>)>) -> f64 {
    let mut total = EditCounts::default();
    for (r, h) in pairs {
        total.add(&align_and_count(&r, &h).counts);
    }
    total.rate().unwrap_or(0.0)
}

fn tune_frame_joint(args: &CombineArgs) -> CliResult<(Vec<f64>, Value)> {
    let dev = load_streams(&args.dev)?;
    let dev_ref = args.dev_ref.as_ref().expect("validated");
    let ids: Vec<&str> = dev.iter().map(|(u, _)| u.as_str()).collect();
    let refs = load_refs(dev_ref, &ids)?;
    let blank = args.blank.as_deref();
    let result = grid_search_weights(args.inputs.len(), args.step, |w| {
        let hyps = dev
            .par_iter()
            .map(|(u, s)| joint_decode(s, w).map(|o| (refs[u].clone(), o.readout(blank))))
            .collect::<asrfuse_core::Result<Vec<_>>>()?;
        Ok(pooled_wer(hyps.into_iter()))
    })?;
    let info = json!({ "step": args.step, "evaluated": result.evaluated, "dev_wer": result.score });
    Ok((result.weights, info))
}

fn tune_rescore(args: &CombineArgs) -> CliResult<(BTreeMap<String, f64>, Value)> {
    let dev = load_nbest(&args.dev[0])?
        .iter()
        .map(|l| truncate_nbest(l, args.depth))
        .collect::<asrfuse_core::Result<Vec<_>>>()?;
    let ids: Vec<&str> = dev.iter().map(|l| l.utt_id.as_str()).collect();
    let refs = load_refs(args.dev_ref.as_ref().expect("validated"), &ids)?;
    let names: Vec<String> = dev
        .first()
        .and_then(|l| l.hyps.first())
        .map(|h| h.scores.keys().cloned().collect())
        .ok_or_else(|| CliError::validation("development N-best file is empty"))?;
    let named = |w: &[f64]| -> BTreeMap<String, f64> { names.iter().cloned().zip(w.iter().copied()).collect() };
    let result = grid_search_weights(names.len(), args.step, |w| {
        let weights = named(w);
        let hyps = dev
            .par_iter()
            .map(|l| {
                rescore_nbest(l, &weights).map(|o| {
                    let best = &l.hyps[o.best];
                    (refs[&l.utt_id].clone(), best.text.split_whitespace().map(String::from).collect())
                })
            })
            .collect::<asrfuse_core::Result<Vec<_>>>()?;
        Ok(pooled_wer(hyps.into_iter()))
    })?;
    let info = json!({ "step": args.step, "evaluated": result.evaluated, "dev_wer": result.score });
    Ok((named(&result.weights), info))
}

fn hyp_table(rows: Vec<(String, String)>) -> CliResult<String> {
    let rows: Vec<TranscriptRow> = rows
        .into_iter()
        .map(|(utt_id, text)| TranscriptRow { utt_id, text, metadata: BTreeMap::new() })
        .collect();
    Ok(write_transcripts(&rows)?)
}

pub fn run(args: &CombineArgs) -> CliResult<Report> {
    let spec = validate(args)?;
    let out = &args.out_dir;
    let mut staged = Staged::default();
    let (weights_json, source, tune_info, utterances) = match args.mode {
        CombineModeArg::FrameJoint => {
            let utts = load_streams(&args.inputs)?;
            let (weights, source, info) = match &spec {
                WeightSpec::Preset(p) => (p.normalized(), format!("preset:{}", p.name), Value::Null),
                WeightSpec::Ratios(r) => (normalize(r), "ratios".to_string(), Value::Null),
                WeightSpec::Tune => {
                    let (w, info) = tune_frame_joint(args)?;
                    (w, "tune".to_string(), info)
                }
                WeightSpec::Named(_) => unreachable!("rejected by validate"),
            };
            let decoded = utts
                .par_iter()
                .map(|(u, s)| joint_decode(s, &weights).ctx(format!("utterance `{u}`")))
                .collect::<CliResult<Vec<_>>>()?;
            let mut rows = Vec::new();
            let mut hyps = Vec::new();
            for ((u, _), d) in utts.iter().zip(&decoded) {
                let name = format!("{u}.fss");
                staged.add(out.join(&name), encode_fss(&d.fused).ctx(u)?);
                rows.push(vec![u.clone(), name]);
                hyps.push((u.clone(), d.readout(args.blank.as_deref()).join(" ")));
            }
            let table = Table { columns: vec!["utt_id".into(), "scores".into()], rows };
            staged.add(out.join("scores.tsv"), write_tsv(&table)?);
            staged.add(out.join("hyp.tsv"), hyp_table(hyps)?);
            (json!(weights), source, info, utts.len())
        }
        CombineModeArg::Rescore => {
            let lists = load_nbest(&args.inputs[0])?;
            let (weights, source, info) = match &spec {
                WeightSpec::Preset(p) => (p.named(), format!("preset:{}", p.name), Value::Null),
                WeightSpec::Named(w) => (w.clone(), "named".to_string(), Value::Null),
                WeightSpec::Tune => {
                    let (w, info) = tune_rescore(args)?;
                    (w, "tune".to_string(), info)
                }
                WeightSpec::Ratios(_) => unreachable!("rejected by validate"),
            };
            let outputs = lists
                .par_iter()
                .map(|l| {
                    let t = truncate_nbest(l, args.depth)?;
                    rescore_nbest(&t, &weights)
                })
                .collect::<asrfuse_core::Result<Vec<_>>>()
                .ctx(args.inputs[0].display())?;
            let reranked: Vec<NBestList> = outputs.iter().map(|o| o.reranked.clone()).collect();
            let hyps = outputs
                .iter()
                .map(|o| (o.reranked.utt_id.clone(), o.reranked.hyps[0].text.clone()))
                .collect();
            let seen: BTreeSet<&str> = lists.iter().map(|l| l.utt_id.as_str()).collect();
            if seen.len() != lists.len() {
                return Err(CliError::validation(format!("{}: duplicate utt_id", args.inputs[0].display())));
            }
            staged.add(out.join("reranked.jsonl"), write_nbest_jsonl(&reranked)?);
            staged.add(out.join("hyp.tsv"), hyp_table(hyps)?);
            (json!(weights), source, info, lists.len())
        }
    };
    let mode = match args.mode {
        CombineModeArg::FrameJoint => "frame-joint",
        CombineModeArg::Rescore => "rescore",
    };
    let summary = json!({
        "mode": mode,
        "weights": weights_json,
        "source": source,
        "tune": tune_info,
        "depth": (args.mode == CombineModeArg::Rescore).then_some(args.depth),
        "utterances": utterances,
    });
    staged.add(out.join("combine.json"), serde_json::to_vec_pretty(&summary)?);
    staged.commit()?;
    Ok(Report {
        text: format!("{mode}: {utterances} utterances, weights {weights_json} ({source}) -> {}", out.display()),
        json: summary,
    })
}
