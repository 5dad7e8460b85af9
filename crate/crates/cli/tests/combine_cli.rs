mod common;

use std::collections::BTreeMap;

use asrfuse_core::combine::{FrameScoreStream, Hypothesis, NBestList};
use asrfuse_core::formats::fss::{decode_fss, encode_fss};
use asrfuse_core::formats::nbest::{read_nbest_jsonl, write_nbest_jsonl};
use asrfuse_core::numcore::{SeededRng, Tensor};
use common::*;

fn fixture(dir: &std::path::Path) -> std::path::PathBuf {
    let fx = dir.join("fx");
    asrfuse(&["synth", "fixture", "--out-dir", p(&fx)]).ok();
    fx
}

#[test]
fn preset_uaspeech_3way_applies_8_5_5() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let out = dir.path().join("out");
    let (a, b) = (fx.join("a.tsv"), fx.join("b.tsv"));
    let r = asrfuse(&[
        "--json", "combine", "--mode", "frame-joint", "--input", p(&a), "--input", p(&b), "--input", p(&a),
        "--weights", "uaspeech-3way", "--out-dir", p(&out),
    ])
    .ok();
    let w: Vec<f64> = serde_json::from_value(r.json()["weights"].clone()).unwrap();
    assert_eq!(w, vec![8.0 / 18.0, 5.0 / 18.0, 5.0 / 18.0]);
    let logged: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("combine.json")).unwrap()).unwrap();
    assert_eq!(logged["source"], "preset:uaspeech-3way");

    for u in 0..4 {
        let id = format!("dev{u:02}");
        let read = |path: std::path::PathBuf| decode_fss(&std::fs::read(path).unwrap(), &id).unwrap();
        let sa = read(fx.join(format!("a/{id}.fss")));
        let sb = read(fx.join(format!("b/{id}.fss")));
        let fused = read(out.join(format!("{id}.fss")));
        for (i, &got) in fused.scores.data().iter().enumerate() {
            let mut acc = 0.0;
            for (s, wk) in [&sa, &sb, &sa].iter().zip(&w) {
                acc += wk * s.scores.data()[i];
            }
            assert_eq!(got, acc as f32 as f64);
        }
    }
}

#[test]
fn tune_recovers_equal_weights_on_the_complementary_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let out = dir.path().join("out");
    let (a, b, r) = (fx.join("a.tsv"), fx.join("b.tsv"), fx.join("ref.tsv"));
    asrfuse(&[
        "combine", "--mode", "frame-joint", "--input", p(&a), "--input", p(&b), "--weights", "tune", "--dev", p(&a),
        "--dev", p(&b), "--dev-ref", p(&r), "--step", "0.1", "--blank", "<b>", "--out-dir", p(&out),
    ])
    .ok();
    let logged: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("combine.json")).unwrap()).unwrap();
    assert_eq!(logged["weights"], serde_json::json!([0.5, 0.5]));
    assert_eq!(logged["tune"]["dev_wer"], 0.0);
    let s = asrfuse(&["--json", "score", "--hyp", p(&out.join("hyp.tsv")), "--ref", p(&r)]).ok();
    assert_eq!(s.json()["overall"], 0.0);
    for single in ["1:0", "0:1"] {
        let o = dir.path().join(single.replace(':', "_"));
        asrfuse(&[
            "combine", "--mode", "frame-joint", "--input", p(&a), "--input", p(&b), "--weights", single, "--blank",
            "<b>", "--out-dir", p(&o),
        ])
        .ok();
        let s = asrfuse(&["--json", "score", "--hyp", p(&o.join("hyp.tsv")), "--ref", p(&r)]).ok();
        assert!(s.json()["overall"].as_f64().unwrap() > 0.0);
    }
}

fn hyp(text: &str, scores: &[(&str, f64)]) -> Hypothesis {
    Hypothesis {
        text: text.into(),
        tokens: text.split_whitespace().map(String::from).collect(),
        scores: scores.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
    }
}

#[test]
fn single_system_rescoring_keeps_the_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(4);
    let lists: Vec<NBestList> = (0..5)
        .map(|u| {
            let mut cost = 0.0;
            NBestList {
                utt_id: format!("u{u}"),
                hyps: (0..8)
                    .map(|i| {
                        cost += rng.uniform();
                        hyp(&format!("w{i} x{u}"), &[("ctc", cost)])
                    })
                    .collect(),
            }
        })
        .collect();
    let input = write(&dir.path().join("nbest.jsonl"), &write_nbest_jsonl(&lists).unwrap());
    let out = dir.path().join("out");
    asrfuse(&["combine", "--mode", "rescore", "--input", p(&input), "--weights", "ctc=1", "--out-dir", p(&out)]).ok();
    let back = read_nbest_jsonl(&std::fs::read_to_string(out.join("reranked.jsonl")).unwrap()).unwrap();
    assert_eq!(back, lists);
}

#[test]
fn rescoring_truncates_to_the_depth_before_reranking() {
    let dir = tempfile::tempdir().unwrap();
    // the best combined cost sits at rank 32, beyond the default depth of 30
    let hyps: Vec<Hypothesis> = (0..35)
        .map(|i| {
            let att = if i == 32 { -100.0 } else if i == 3 { -50.0 } else { 0.0 };
            hyp(&format!("h{i}"), &[("ctc", i as f64 * 0.01), ("attention", att), ("tdnn", 0.0)])
        })
        .collect();
    let list = NBestList { utt_id: "u".into(), hyps };
    let input = write(&dir.path().join("n.jsonl"), &write_nbest_jsonl(&[list]).unwrap());
    let r = write(&dir.path().join("ref.tsv"), "utt_id\ttext\nu\th3\n");
    let out = dir.path().join("out");
    asrfuse(&["combine", "--mode", "rescore", "--input", p(&input), "--weights", "attention=1,ctc=1", "--out-dir", p(&out)])
        .ok();
    let hyp_tsv = std::fs::read_to_string(out.join("hyp.tsv")).unwrap();
    assert_eq!(hyp_tsv, "utt_id\ttext\nu\th3\n");
    let back = read_nbest_jsonl(&std::fs::read_to_string(out.join("reranked.jsonl")).unwrap()).unwrap();
    assert_eq!(back[0].hyps.len(), 30);
    let logged: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("combine.json")).unwrap()).unwrap();
    assert_eq!(logged["depth"], 30);

    let out2 = dir.path().join("deep");
    asrfuse(&[
        "combine", "--mode", "rescore", "--input", p(&input), "--weights", "attention=1,ctc=1", "--depth", "35",
        "--out-dir", p(&out2),
    ])
    .ok();
    assert_eq!(std::fs::read_to_string(out2.join("hyp.tsv")).unwrap(), "utt_id\ttext\nu\th32\n");

    // rescoring presets carry their score names
    let out3 = dir.path().join("preset");
    asrfuse(&["combine", "--mode", "rescore", "--input", p(&input), "--weights", "uaspeech-rescore", "--out-dir", p(&out3)])
        .ok();
    let logged: serde_json::Value = serde_json::from_slice(&std::fs::read(out3.join("combine.json")).unwrap()).unwrap();
    let w: BTreeMap<String, f64> = serde_json::from_value(logged["weights"].clone()).unwrap();
    assert!((w["ctc"] / w["tdnn"] - 9.0).abs() < 1e-12 && (w["ctc"] / w["attention"] - 900.0).abs() < 1e-9);
    let _ = r;
}

#[test]
fn weight_specs_that_do_not_fit_the_mode_are_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let out = dir.path().join("out");
    let a = fx.join("a.tsv");
    for (mode, w) in [
        ("frame-joint", "uaspeech-rescore"),
        ("frame-joint", "8:5:5"),
        ("frame-joint", "ctc=1"),
        ("frame-joint", "nope"),
        ("frame-joint", "tune"),
        ("rescore", "uaspeech-3way"),
        ("rescore", "1:1"),
    ] {
        let r = asrfuse(&["combine", "--mode", mode, "--input", p(&a), "--input", p(&a), "--weights", w, "--out-dir", p(&out)]);
        assert_eq!(r.code, 2, "{mode} {w}: {}", r.stderr);
        assert!(!out.exists());
    }
    let r = asrfuse(&["combine", "--mode", "frame-joint", "--input", p(&a), "--weights", "nope", "--out-dir", p(&out)]);
    assert!(r.stderr.contains("uaspeech-3way"), "{}", r.stderr);
}

#[test]
fn non_finite_scores_exit_with_the_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let s = FrameScoreStream::new("u", vec!["a".into(), "b".into()], Tensor::from_rows(&[vec![-1.0, -2.0]]).unwrap(), 10.0)
        .unwrap();
    let mut bytes = encode_fss(&s).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(dir.path().join("u.fss"), bytes).unwrap();
    let m = write(&dir.path().join("m.tsv"), "utt_id\tscores\nu\tu.fss\n");
    let out = dir.path().join("out");
    let r = asrfuse(&["combine", "--mode", "frame-joint", "--input", p(&m), "--weights", "1", "--out-dir", p(&out)]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains('u'));
    assert!(!out.exists());
}
