//! `synth`: synthetic corpora and fixtures on disk.

use std::collections::BTreeMap;

use asrfuse_core::a2a::{generate_parallel, ParallelConfig};
use asrfuse_core::combine::fixture::complementary_errors;
use asrfuse_core::formats::afm::encode_afm;
use asrfuse_core::formats::fss::encode_fss;
use asrfuse_core::formats::tsv::{write_transcripts, write_tsv, Table, TranscriptRow};
use asrfuse_core::ssl::synth::{generate_token_corpus, TokenCorpusConfig};
use serde_json::json;

use super::{seed_override, Report};
use crate::args::{SynthArgs, SynthKind};
use crate::error::{CliError, CliResult};
use crate::io::Staged;

fn seed(args: &SynthArgs) -> CliResult<u64> {
    seed_override()?
        .or(args.seed)
        .ok_or_else(|| CliError::validation("this corpus is random: pass --seed (or set ASRFUSE_SEED)"))
}

fn token_text(tokens: &[usize]) -> String {
    tokens.iter().map(|t| format!("t{t}")).collect::<Vec<_>>().join(" ")
}

pub fn run(args: &SynthArgs) -> CliResult<Report> {
    let out = &args.out_dir;
    let mut staged = Staged::default();
    let summary = match args.what {
        SynthKind::Tokens => {
            let seed = seed(args)?;
            let corpus = generate_token_corpus(seed, args.count, &TokenCorpusConfig::default())?;
            let mut rows = Vec::new();
            let mut refs = Vec::new();
            for u in &corpus.utterances {
                let name = format!("{}.afm", u.id);
                staged.add(out.join(&name), encode_afm(&u.features)?);
                let toks = u.tokens.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
                rows.push(vec![u.id.clone(), name, toks]);
                refs.push(TranscriptRow { utt_id: u.id.clone(), text: token_text(&u.tokens), metadata: BTreeMap::new() });
            }
            let columns = ["utt_id", "features", "tokens"].map(String::from).to_vec();
            staged.add(out.join("manifest.tsv"), write_tsv(&Table { columns, rows })?);
            staged.add(out.join("ref.tsv"), write_transcripts(&refs)?);
            json!({ "kind": "tokens", "seed": seed, "utterances": corpus.utterances.len() })
        }
        SynthKind::Parallel => {
            let seed = seed(args)?;
            let mut cfg = ParallelConfig::default();
            if let Some(f) = args.frames {
                cfg.frames = f;
            }
            let data = generate_parallel(seed, &cfg, None)?;
            staged.add(out.join("acoustic.afm"), encode_afm(&data.pair.acoustic)?);
            staged.add(out.join("articulatory.afm"), encode_afm(&data.pair.articulatory)?);
            // training pairs, and the acoustic side alone for `invert`
            let columns = ["utt_id", "acoustic", "articulatory"].map(String::from).to_vec();
            let rows = vec![["parallel", "acoustic.afm", "articulatory.afm"].map(String::from).to_vec()];
            staged.add(out.join("manifest.tsv"), write_tsv(&Table { columns, rows })?);
            let columns = ["utt_id", "features"].map(String::from).to_vec();
            let rows = vec![["parallel", "acoustic.afm"].map(String::from).to_vec()];
            staged.add(out.join("acoustic.tsv"), write_tsv(&Table { columns, rows })?);
            json!({ "kind": "parallel", "seed": seed, "frames": cfg.frames })
        }
        SynthKind::Fixture => {
            let utts = complementary_errors();
            let mut manifests = [Vec::new(), Vec::new()];
            let mut refs = Vec::new();
            for u in &utts {
                let id = &u.streams[0].utt_id;
                for (k, (sys, stream)) in ["a", "b"].iter().zip(&u.streams).enumerate() {
                    let name = format!("{sys}/{id}.fss");
                    staged.add(out.join(&name), encode_fss(stream)?);
                    manifests[k].push(vec![id.clone(), name]);
                }
                refs.push(TranscriptRow { utt_id: id.clone(), text: u.reference.join(" "), metadata: BTreeMap::new() });
            }
            for (sys, rows) in ["a", "b"].iter().zip(manifests) {
                let columns = vec!["utt_id".to_string(), "scores".to_string()];
                staged.add(out.join(format!("{sys}.tsv")), write_tsv(&Table { columns, rows })?);
            }
            staged.add(out.join("ref.tsv"), write_transcripts(&refs)?);
            json!({ "kind": "fixture", "utterances": utts.len(), "blank": asrfuse_core::combine::fixture::BLANK })
        }
    };
    let files = staged.len();
    staged.commit()?;
    Ok(Report { text: format!("wrote {files} files to {}", out.display()), json: summary })
}
