mod common;

use common::*;

const REF: &str = "utt_id\ttext\tintelligibility\tseen\n\
u1\tone two\tVL\tseen\n\
u2\tone two\tH\tunseen\n\
u3\tone two three four\tVL\tunseen\n";

#[test]
fn identical_transcripts_score_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(&dir.path().join("ref.tsv"), REF);
    let run = asrfuse(&["score", "--hyp", p(&r), "--ref", p(&r), "--group-by", "intelligibility,seen"]).ok();
    let numbers: Vec<&str> = run.stdout.split_whitespace().filter(|t| t.contains('.')).collect();
    assert!(!numbers.is_empty());
    assert!(numbers.iter().all(|n| *n == "0.00"), "{}", run.stdout);
}

#[test]
fn groups_follow_first_appearance_and_nest() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(&dir.path().join("ref.tsv"), REF);
    let h = write(&dir.path().join("hyp.tsv"), "utt_id\ttext\nu1\tone two\nu2\tone ten\nu3\tone two three four\n");
    let out = dir.path().join("report.json");
    let run = asrfuse(&["--json", "score", "--hyp", p(&h), "--ref", p(&r), "--group-by", "intelligibility,seen", "--out", p(&out)]).ok();
    let j = run.json();
    assert_eq!(j["columns"], serde_json::json!(["VL", "H", "seen", "unseen", "All"]));
    assert_eq!(j["overall"], 12.5);
    assert_eq!(j["groups"]["intelligibility"]["groups"]["H"]["rate"], 50.0);
    assert_eq!(j["groups"]["seen"]["groups"]["unseen"]["rate"], 100.0 / 6.0);
    let nested = &j["nested"]["report"]["groups"];
    assert_eq!(nested["H/unseen"]["rate"], 50.0);
    assert_eq!(nested["VL/unseen"]["rate"], 0.0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), serde_json::to_string_pretty(&j).unwrap());

    let table = asrfuse(&["score", "--hyp", p(&h), "--ref", p(&r), "--group-by", "intelligibility,seen"]).ok().stdout;
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["VL", "H", "seen", "unseen", "All"]);
    assert!(table.contains("VL/seen") && table.contains("H/unseen"), "{table}");
}

#[test]
fn cer_counts_characters() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(&dir.path().join("ref.tsv"), "utt_id\ttext\nu\tabc\n");
    let h = write(&dir.path().join("hyp.tsv"), "utt_id\ttext\nu\tabd\n");
    let run = asrfuse(&["score", "--hyp", p(&h), "--ref", p(&r), "--mode", "cer"]).ok();
    assert!(run.stdout.contains("33.33"), "{}", run.stdout);
    assert!(run.stdout.contains("CER"));
}

#[test]
fn missing_utterances_are_listed_up_to_ten() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("utt_id\ttext\n");
    for i in 0..12 {
        text.push_str(&format!("u{i:02}\tword\n"));
    }
    let r = write(&dir.path().join("ref.tsv"), &text);
    let h = write(&dir.path().join("hyp.tsv"), "utt_id\ttext\nu00\tword\n");
    let run = asrfuse(&["score", "--hyp", p(&h), "--ref", p(&r)]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("11 utterance(s)"), "{}", run.stderr);
    assert!(run.stderr.contains("u10") && !run.stderr.contains("u11"), "{}", run.stderr);

    let extra = write(&dir.path().join("extra.tsv"), &format!("{text}zz\tword\n"));
    let run = asrfuse(&["score", "--hyp", p(&extra), "--ref", p(&r)]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("zz"), "{}", run.stderr);
}

#[test]
fn identical_systems_are_not_significantly_different() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(&dir.path().join("ref.tsv"), REF);
    let h = write(&dir.path().join("hyp.tsv"), "utt_id\ttext\nu1\tone\nu2\tone ten\nu3\tone two three four\n");
    let run = asrfuse(&["significance", "--hyp", p(&h), "--baseline", p(&h), "--ref", p(&r)]).ok();
    assert!(run.stdout.contains("not significant at alpha = 0.05"), "{}", run.stdout);
    assert!(!run.stdout.contains("marker"));
}

#[test]
fn two_zero_two_zero_differences_give_p_0_0833() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(&dir.path().join("ref.tsv"), "utt_id\ttext\na\tx y z\nb\tx y z\nc\tx y z\nd\tx y z\n");
    let base = write(&dir.path().join("base.tsv"), "utt_id\ttext\na\tx y z\nb\tx y z\nc\tx y z\nd\tx y z\n");
    let hyp = write(&dir.path().join("hyp.tsv"), "utt_id\ttext\na\tq q z\nb\tx y z\nc\tx q q\nd\tx y z\n");
    let run = asrfuse(&["--json", "significance", "--hyp", p(&hyp), "--baseline", p(&base), "--ref", p(&r)]).ok();
    let j = run.json();
    assert_eq!(j["report"]["differences"], serde_json::json!([2.0, 0.0, 2.0, 0.0]));
    assert!((j["report"]["z"].as_f64().unwrap() - 1.732).abs() < 1e-3);
    assert!((j["report"]["p_value"].as_f64().unwrap() - 0.0833).abs() < 1e-3);
    assert_eq!(j["report"]["alpha"], 0.05);
    assert_eq!(j["verdict"], "not significant");
}

#[test]
fn significant_reductions_carry_the_requested_marker() {
    let dir = tempfile::tempdir().unwrap();
    let (mut r, mut base, mut hyp) = (String::from("utt_id\ttext\n"), String::from("utt_id\ttext\n"), String::from("utt_id\ttext\n"));
    for i in 0..10 {
        r.push_str(&format!("u{i}\ta b c d\n"));
        base.push_str(&format!("u{i}\t{}\n", if i % 2 == 0 { "x b c d" } else { "x y c d" }));
        hyp.push_str(&format!("u{i}\ta b c d\n"));
    }
    let (r, base, hyp) = (
        write(&dir.path().join("r.tsv"), &r),
        write(&dir.path().join("b.tsv"), &base),
        write(&dir.path().join("h.tsv"), &hyp),
    );
    let run = asrfuse(&["significance", "--hyp", p(&hyp), "--baseline", p(&base), "--ref", p(&r)]).ok();
    assert!(run.stdout.contains("significant reduction"), "{}", run.stdout);
    assert!(run.stdout.contains("marker      †"), "{}", run.stdout);
    let run = asrfuse(&["significance", "--hyp", p(&hyp), "--baseline", p(&base), "--ref", p(&r), "--marker", "asterisk"]).ok();
    assert!(run.stdout.contains("marker      *"), "{}", run.stdout);
    // the other direction is significant but earns no marker
    let run = asrfuse(&["significance", "--hyp", p(&base), "--baseline", p(&hyp), "--ref", p(&r)]).ok();
    assert!(run.stdout.contains("significant increase") && !run.stdout.contains("marker"), "{}", run.stdout);
}

#[test]
fn bad_arguments_exit_with_the_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(&dir.path().join("ref.tsv"), REF);
    assert_eq!(asrfuse(&["score", "--hyp", p(&r), "--ref", "/nonexistent.tsv"]).code, 2);
    assert_eq!(asrfuse(&["score", "--hyp", p(&r)]).code, 2);
    assert_eq!(asrfuse(&["score", "--hyp", p(&r), "--ref", p(&r), "--group-by", "dialect"]).code, 2);
    assert_eq!(asrfuse(&["significance", "--hyp", p(&r), "--baseline", p(&r), "--ref", p(&r), "--alpha", "1.5"]).code, 2);
    assert_eq!(asrfuse(&["synth", "tokens", "--out-dir", p(&dir.path().join("t"))]).code, 2);
    assert!(!dir.path().join("t").exists());
    assert_eq!(asrfuse(&["frobnicate"]).code, 2);
    let env = asrfuse_env(&["synth", "tokens", "--count", "2", "--out-dir", p(&dir.path().join("t"))], Some("x"));
    assert_eq!(env.code, 2);
}
