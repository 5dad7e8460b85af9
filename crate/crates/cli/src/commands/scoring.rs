//! `score` and `significance`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use asrfuse_core::eval::{mapsswe, wer, ScoredTranscriptSet, Tokenization, TranscriptRecord, WerReport};
use serde_json::json;

use super::Report;
use crate::args::{ScoreArgs, ScoreMode, SignificanceArgs};
use crate::error::{CliError, CliResult};
use crate::io::{load_transcripts, write_atomic};

const SHOW_MISSING: usize = 10;

fn tokenization(mode: ScoreMode) -> Tokenization {
    match mode {
        ScoreMode::Wer => Tokenization::Words,
        ScoreMode::Cer => Tokenization::Chars,
    }
}

fn id_mismatch(what: &str, ids: &[&str]) -> CliError {
    let shown: Vec<&str> = ids.iter().take(SHOW_MISSING).copied().collect();
    CliError::validation(format!(
        "{} utterance(s) {what} (first {}: {})",
        ids.len(),
        shown.len(),
        shown.join(", ")
    ))
}

/// Pairs hypotheses with references in reference order. Metadata comes from
/// the reference, with hypothesis-only keys added.
fn scored_set(hyp: &Path, reference: &Path, mode: ScoreMode) -> CliResult<ScoredTranscriptSet> {
    let refs = load_transcripts(reference)?;
    let hyps = load_transcripts(hyp)?;
    let by_id: BTreeMap<&str, _> = hyps.iter().map(|h| (h.utt_id.as_str(), h)).collect();
    let missing: Vec<&str> = refs.iter().map(|r| r.utt_id.as_str()).filter(|u| !by_id.contains_key(u)).collect();
    if !missing.is_empty() {
        return Err(id_mismatch(&format!("missing from {}", hyp.display()), &missing));
    }
    let ref_ids: std::collections::BTreeSet<&str> = refs.iter().map(|r| r.utt_id.as_str()).collect();
    let extra: Vec<&str> = hyps.iter().map(|h| h.utt_id.as_str()).filter(|u| !ref_ids.contains(u)).collect();
    if !extra.is_empty() {
        return Err(id_mismatch(&format!("have no reference in {}", reference.display()), &extra));
    }
    let tok = tokenization(mode);
    let records = refs
        .iter()
        .map(|r| {
            let h = by_id[r.utt_id.as_str()];
            let mut metadata = h.metadata.clone();
            metadata.extend(r.metadata.clone());
            TranscriptRecord {
                utt_id: r.utt_id.clone(),
                reference: tok.tokenize(&r.text),
                hypothesis: tok.tokenize(&h.text),
                metadata,
            }
        })
        .collect();
    Ok(ScoredTranscriptSet::new(records)?)
}

/// Distinct values of `key` in order of first appearance.
fn value_order(set: &ScoredTranscriptSet, key: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in set.records() {
        if let Some(v) = r.metadata.get(key) {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
    }
    out
}

fn render_table(label: &str, cells: &[(String, f64)]) -> String {
    let widths: Vec<usize> = cells.iter().map(|(h, _)| h.chars().count().max(6)).collect();
    let lw = label.chars().count().max(4);
    let mut s = format!("{:lw$}", "");
    for ((h, _), w) in cells.iter().zip(&widths) {
        let _ = write!(s, "  {h:>w$}");
    }
    let _ = write!(s, "\n{label:lw$}");
    for ((_, v), w) in cells.iter().zip(&widths) {
        let _ = write!(s, "  {:>w$}", format!("{v:.2}"));
    }
    s.push('\n');
    s
}

pub fn score(args: &ScoreArgs) -> CliResult<Report> {
    let set = scored_set(&args.hyp, &args.reference, args.mode)?;
    let label = match args.mode {
        ScoreMode::Wer => "WER",
        ScoreMode::Cer => "CER",
    };
    let overall = wer(&set, None)?;
    let mut groups: BTreeMap<String, WerReport> = BTreeMap::new();
    let mut cells = Vec::new();
    for key in &args.group_by {
        let report = wer(&set, Some(key))?;
        for v in value_order(&set, key) {
            cells.push((v.clone(), report.groups[&v].rate));
        }
        groups.insert(key.clone(), report);
    }
    cells.push(("All".to_string(), overall.overall));
    let mut text = render_table(label, &cells);

    // joint breakdown over all grouping keys
    let mut nested = None;
    if args.group_by.len() >= 2 {
        let joint_key = args.group_by.join("/");
        let records = set
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                let v: Vec<&str> = args.group_by.iter().map(|k| r.metadata[k].as_str()).collect();
                let joined = v.join("/");
                r.metadata.insert(joint_key.clone(), joined);
                r
            })
            .collect();
        let joint = ScoredTranscriptSet::new(records)?;
        let report = wer(&joint, Some(&joint_key))?;
        let cells: Vec<(String, f64)> = value_order(&joint, &joint_key)
            .into_iter()
            .map(|v| {
                let rate = report.groups[&v].rate;
                (v, rate)
            })
            .collect();
        text.push('\n');
        text.push_str(&render_table(&joint_key, &cells));
        nested = Some(json!({ "keys": args.group_by, "report": report }));
    }

    let columns: Vec<&str> = cells.iter().map(|(h, _)| h.as_str()).collect();
    let json = json!({
        "mode": label.to_lowercase(),
        "overall": overall.overall,
        "counts": overall.counts,
        "utterances": overall.utterances,
        "columns": columns,
        "groups": groups,
        "nested": nested,
    });
    if let Some(out) = &args.out {
        write_atomic(out, &serde_json::to_vec_pretty(&json)?)?;
    }
    Ok(Report { text, json })
}

pub fn significance(args: &SignificanceArgs) -> CliResult<Report> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::validation(format!("--alpha must be in (0, 1), got {}", args.alpha)));
    }
    let a = scored_set(&args.hyp, &args.reference, args.mode)?;
    let b = scored_set(&args.baseline, &args.reference, args.mode)?;
    let report = mapsswe(&a, &b, args.alpha)?;
    // d = errors(hyp) − errors(baseline): a reduction has a negative mean
    let reduction = report.mean < 0.0;
    let verdict = if report.significant {
        if reduction {
            "significant reduction"
        } else {
            "significant increase"
        }
    } else {
        "not significant"
    };
    let marker = (report.significant && reduction).then(|| args.marker.symbol());
    let fmt = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    let mut text = String::new();
    let _ = writeln!(text, "utterances  {}", report.differences.len());
    let _ = writeln!(text, "mean diff   {:.4}", report.mean);
    let _ = writeln!(text, "Z           {}", fmt(report.z));
    let _ = writeln!(text, "p           {}", fmt(report.p_value));
    let _ = writeln!(text, "verdict     {verdict} at alpha = {}", args.alpha);
    if let Some(m) = marker {
        let _ = writeln!(text, "marker      {m}");
    }
    let json = json!({
        "report": report,
        "verdict": verdict,
        "marker": marker,
    });
    if let Some(out) = &args.out {
        write_atomic(out, &serde_json::to_vec_pretty(&json)?)?;
    }
    Ok(Report { text, json })
}
