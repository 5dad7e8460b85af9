mod common;

use common::*;

const PIPELINE: &str = r#"
[[stage]]
command = "synth"
what = "fixture"
out-dir = "fx"

[[stage]]
command = "combine"
mode = "frame-joint"
input = ["fx/a.tsv", "fx/b.tsv"]
weights = "tune"
dev = ["fx/a.tsv", "fx/b.tsv"]
dev-ref = "fx/ref.tsv"
blank = "<b>"
out-dir = "joint"

[[stage]]
command = "score"
hyp = "joint/hyp.tsv"
ref = "fx/ref.tsv"
out = "score.json"
"#;

#[test]
fn pipeline_runs_stages_relative_to_its_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("work/pipeline.toml"), PIPELINE);
    let run = asrfuse(&["--json", "run", p(&cfg)]).ok();
    assert_eq!(run.json().as_array().unwrap().len(), 3);
    let score: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("work/score.json")).unwrap()).unwrap();
    assert_eq!(score["overall"], 0.0);
    let combine: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("work/joint/combine.json")).unwrap()).unwrap();
    assert_eq!(combine["weights"], serde_json::json!([0.5, 0.5]));
}

#[test]
fn invalid_pipelines_fail_before_any_stage_runs() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    for bad in [
        PIPELINE.replace("hyp = \"joint/hyp.tsv\"", "hyp = \"elsewhere/hyp.tsv\""),
        PIPELINE.replace("blank = \"<b>\"", "blank = \"<b>\"\ncolour = \"red\""),
        PIPELINE.replace("weights = \"tune\"", "weights = \"uaspeech-rescore\""),
        PIPELINE.replace("command = \"score\"", "command = \"rescore\""),
        PIPELINE.replace("what = \"fixture\"", "what = \"tokens\""),
    ] {
        let cfg = write(&work.join("pipeline.toml"), &bad);
        let run = asrfuse(&["run", p(&cfg)]);
        assert_eq!(run.code, 2, "{bad}\n{}", run.stderr);
        assert_eq!(tree(&work), vec![cfg.clone()], "{}", run.stderr);
    }
}
