#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stdout:\n{}\nstderr:\n{}", self.stdout, self.stderr);
        self
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn finish(out: Output) -> Run {
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn asrfuse(args: &[&str]) -> Run {
    asrfuse_env(args, None)
}

pub fn asrfuse_env(args: &[&str], seed: Option<&str>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_asrfuse"));
    cmd.args(args).env_remove("ASRFUSE_SEED").env_remove("RUST_LOG");
    if let Some(s) = seed {
        cmd.env("ASRFUSE_SEED", s);
    }
    finish(cmd.output().expect("binary runs"))
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).unwrap();
    }
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

/// Every file under `dir`, sorted.
pub fn tree(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd {
            let path = e.unwrap().path();
            if path.is_dir() {
                out.extend(tree(&path));
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

pub const SMALL_SSL: &str = r#"
objective = "hubert"
seed = 5

[data]
synthetic = 8

[ssl]
epochs = 2
batch_size = 4

[ssl.model.context]
num_blocks = 2
model_dim = 32
heads = 2
ff_dim = 64

[ssl.model.bottleneck]
inner_dim = 256
position = "after-last-block"
dropout = 0.0
"#;

pub const SMALL_A2A: &str = r#"
objective = "a2a-mtl"
seed = 3

[data.parallel]
frames = 600

[a2a]
epochs = 6
hidden = [32]
batch_size = 100
learning_rate = 0.003
"#;
