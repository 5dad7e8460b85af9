//! `extract`, `invert` and `fuse`: per-utterance feature transforms.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use asrfuse_core::a2a::A2aTrainer;
use asrfuse_core::bottleneck::BottleneckPosition;
use asrfuse_core::features::{fuse_features, resample_frames, FeatureKind, FeatureSequence};
use asrfuse_core::formats::afm::{decode_afm, encode_afm};
use asrfuse_core::formats::mdl::ModelFile;
use asrfuse_core::formats::tsv::{write_tsv, Table};
use asrfuse_core::ssl::train::SslTrainer;
use rayon::prelude::*;
use serde_json::json;

use super::Report;
use crate::args::{ExtractArgs, FuseArgs, InvertArgs};
use crate::error::{CliError, CliResult, Context};
use crate::io::{check_file_stem, read_bytes, Manifest, ManifestEntry, Staged};

fn load_model(path: &Path) -> CliResult<ModelFile> {
    ModelFile::decode(&read_bytes(path)?).ctx(path.display())
}

/// Stages `<utt>.afm` files plus a `manifest.tsv` pointing at them, keeping
/// the input metadata columns.
fn stage_features(out_dir: &Path, entries: &[ManifestEntry], seqs: &[FeatureSequence]) -> CliResult<Staged> {
    let meta_cols: Vec<String> = entries
        .iter()
        .flat_map(|e| e.metadata.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut columns = vec!["utt_id".to_string(), "features".to_string()];
    columns.extend(meta_cols.iter().cloned());
    let mut rows = Vec::new();
    let mut staged = Staged::default();
    for (e, seq) in entries.iter().zip(seqs) {
        let name = format!("{}.afm", e.utt_id);
        staged.add(out_dir.join(&name), encode_afm(seq).ctx(&e.utt_id)?);
        let mut row = vec![e.utt_id.clone(), name];
        row.extend(meta_cols.iter().map(|c| e.metadata.get(c).cloned().unwrap_or_default()));
        rows.push(row);
    }
    staged.add(out_dir.join("manifest.tsv"), write_tsv(&Table { columns, rows })?);
    Ok(staged)
}

fn load_entries(manifest: &Path) -> CliResult<Vec<ManifestEntry>> {
    let entries = Manifest::load(manifest)?.entries(&["features"])?;
    for e in &entries {
        check_file_stem(&e.utt_id)?;
    }
    Ok(entries)
}

fn load_features(entries: &[ManifestEntry], column: &str, kind: FeatureKind) -> CliResult<Vec<FeatureSequence>> {
    entries
        .par_iter()
        .map(|e| decode_afm(&read_bytes(&e.paths[column])?, kind).ctx(format!("utterance `{}`", e.utt_id)))
        .collect()
}

pub fn extract(args: &ExtractArgs) -> CliResult<Report> {
    let file = load_model(&args.model)?;
    let trainer = SslTrainer::from_model_file(&file).ctx(args.model.display())?;
    let available: Vec<&str> = trainer.model.bottleneck.iter().map(|b| b.config.position.as_str()).collect();
    let Some(bn) = &trainer.model.bottleneck else {
        return Err(CliError::validation(format!(
            "{}: model has no bottleneck (available positions: none)",
            args.model.display()
        )));
    };
    if let Some(p) = &args.position {
        let want = BottleneckPosition::from_str(p)?;
        if want != bn.config.position {
            return Err(CliError::validation(format!(
                "{}: no bottleneck at `{want}` (available positions: {})",
                args.model.display(),
                available.join(", ")
            )));
        }
    }
    if let Some(d) = args.dim {
        if d != bn.config.inner_dim {
            return Err(CliError::validation(format!(
                "{}: bottleneck at `{}` is {}-dim, not {d}",
                args.model.display(),
                bn.config.position,
                bn.config.inner_dim
            )));
        }
    }
    let entries = load_entries(&args.manifest)?;
    if entries.is_empty() {
        log::warn!("{}: manifest is empty, nothing to extract", args.manifest.display());
        return Ok(Report {
            text: "warning: empty manifest, no features extracted".into(),
            json: json!({ "utterances": 0, "written": [] }),
        });
    }
    let inputs = load_features(&entries, "features", FeatureKind::Fbk)?;
    let outputs: Vec<FeatureSequence> = inputs
        .par_iter()
        .zip(&entries)
        .map(|(x, e)| trainer.extract(x).ctx(format!("utterance `{}`", e.utt_id)))
        .collect::<CliResult<_>>()?;
    let staged = stage_features(&args.out_dir, &entries, &outputs)?;
    staged.commit()?;
    Ok(Report {
        text: format!(
            "extracted {} utterances ({}-dim at {} ms, position {}) into {}",
            entries.len(),
            bn.config.inner_dim,
            bn.config.output_stride_ms,
            bn.config.position,
            args.out_dir.display()
        ),
        json: json!({
            "utterances": entries.len(),
            "dim": bn.config.inner_dim,
            "frame_period_ms": bn.config.output_stride_ms,
            "position": bn.config.position.as_str(),
        }),
    })
}

pub fn invert(args: &InvertArgs) -> CliResult<Report> {
    let file = load_model(&args.model)?;
    let trainer = A2aTrainer::from_model_file(&file).ctx(args.model.display())?;
    let entries = load_entries(&args.manifest)?;
    if entries.is_empty() {
        log::warn!("{}: manifest is empty, nothing to invert", args.manifest.display());
    }
    let inputs = load_features(&entries, "features", FeatureKind::Fbk)?;
    let outputs: Vec<FeatureSequence> = inputs
        .par_iter()
        .zip(&entries)
        .map(|(x, e)| trainer.invert(x).ctx(format!("utterance `{}`", e.utt_id)))
        .collect::<CliResult<_>>()?;
    if !entries.is_empty() {
        stage_features(&args.out_dir, &entries, &outputs)?.commit()?;
    }
    Ok(Report {
        text: format!("inverted {} utterances into {}", entries.len(), args.out_dir.display()),
        json: json!({ "utterances": entries.len(), "dim": trainer.head.output_dim }),
    })
}

pub fn fuse(args: &FuseArgs) -> CliResult<Report> {
    if !(args.period > 0.0) {
        return Err(CliError::validation(format!("--period must be positive, got {}", args.period)));
    }
    let lists: Vec<Vec<ManifestEntry>> = args.manifests.iter().map(|m| load_entries(m)).collect::<CliResult<_>>()?;
    let first = &lists[0];
    // every manifest must cover exactly the first one's utterances
    let mut index: Vec<BTreeMap<&str, &ManifestEntry>> = Vec::new();
    for (m, list) in args.manifests.iter().zip(&lists) {
        let map: BTreeMap<&str, &ManifestEntry> = list.iter().map(|e| (e.utt_id.as_str(), e)).collect();
        let missing: Vec<&str> = first.iter().map(|e| e.utt_id.as_str()).filter(|u| !map.contains_key(u)).collect();
        if !missing.is_empty() || map.len() != first.len() {
            return Err(CliError::validation(format!(
                "{} does not cover the same utterances as {} (missing: {})",
                m.display(),
                args.manifests[0].display(),
                missing.iter().take(10).copied().collect::<Vec<_>>().join(", ")
            )));
        }
        index.push(map);
    }
    let fused: Vec<FeatureSequence> = first
        .par_iter()
        .map(|e| {
            let one = || -> CliResult<FeatureSequence> {
                let mut acc: Option<FeatureSequence> = None;
                for map in &index {
                    let src = map[e.utt_id.as_str()];
                    let x = decode_afm(&read_bytes(&src.paths["features"])?, FeatureKind::Fbk)?;
                    let x = resample_frames(&x, args.period)?;
                    acc = Some(match acc {
                        None => x,
                        Some(a) => fuse_features(&a, &x)?,
                    });
                }
                Ok(acc.expect("at least one manifest").with_kind(FeatureKind::Fused))
            };
            one().ctx(format!("utterance `{}`", e.utt_id))
        })
        .collect::<CliResult<_>>()?;
    let dim = fused.first().map_or(0, FeatureSequence::dim);
    if !first.is_empty() {
        stage_features(&args.out_dir, first, &fused)?.commit()?;
    } else {
        log::warn!("manifests are empty, nothing to fuse");
    }
    Ok(Report {
        text: format!("fused {} utterances into {dim}-dim features in {}", first.len(), args.out_dir.display()),
        json: json!({ "utterances": first.len(), "dim": dim, "frame_period_ms": args.period }),
    })
}
