#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dba_core::store::synthetic_png;

pub const BIN: &str = env!("CARGO_BIN_EXE_dba");

pub const KEY_VARS: [&str; 4] = ["MAPS_API_KEY", "OPENAI_API_KEY", "DEEPSEEK_API_KEY", "DBA_EMBEDDINGS_API_KEY"];

pub fn core_fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

pub fn workspace_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        }
    }
}

/// A `dba` invocation rooted in `work`, with a clean credential environment.
pub fn dba(work: &Path) -> Command {
    let mut c = Command::new(BIN);
    c.current_dir(work)
        .env_remove("DBA_CONFIG")
        .arg("--cache-dir")
        .arg(work.join("cache"))
        .arg("--asset-dir")
        .arg(work.join("assets"));
    for v in KEY_VARS {
        c.env_remove(v);
    }
    c
}

pub fn run(cmd: &mut Command) -> Run {
    cmd.output().expect("dba runs").into()
}

pub fn stage_images(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        std::fs::write(dir.join(format!("frame_{i:03}.png")), synthetic_png(48, 48, format!("img{i}").as_bytes())).unwrap();
    }
}

pub fn small_grid(dir: &Path, extra_scoring: &str) -> PathBuf {
    let path = dir.join("grid.toml");
    std::fs::write(
        &path,
        format!(
            r#"iterations = 2

[[scenes]]
name = "alpha"
query = {{ address = "31 Caroline St. N, Waterloo" }}
synthetic_images = 3

[[scenes]]
name = "beta"
query = {{ place_name = "Parliament Hill, Ottawa" }}
synthetic_images = 2

[[models]]
label = "gpt-4o-mini"
keyword_model = "gpt-4o"
aggregate_model = "gpt-4o-mini"
caption_model = "gpt-4o-mini"

[[models]]
label = "deepseek-chat"
keyword_model = "gpt-4o"
aggregate_model = "deepseek-chat"
caption_model = "deepseek-chat"

[scoring]
{extra_scoring}
"#
        ),
    )
    .unwrap();
    path
}

/// Every regular file below `root`.
pub fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
