#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn zsaudio(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zsaudio"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("zsaudio runs")
}

/// Runs a command expected to succeed and returns its stdout lines.
pub fn ok(args: &[&str], dir: &Path) -> Vec<String> {
    let o = zsaudio(args, dir);
    assert!(
        o.status.success(),
        "zsaudio {args:?} failed with {:?}:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).lines().map(str::to_string).collect()
}

pub fn exit_code(args: &[&str], dir: &Path) -> (i32, String) {
    let o = zsaudio(args, dir);
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

/// Toy config with short schedules; `extra` is appended verbatim.
pub fn quick_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "preset = \"toy\"\n\
         seeds = [0]\n\
         {extra}\n\
         [pretrain]\n\
         epochs = 2\n\
         warmup_epochs = 0.0\n\
         decay_start_epoch = 1.0\n\
         decay_end_epoch = 2.0\n\
         [projection_train]\n\
         epochs = 2\n\
         decay_start_epoch = 1.0\n\
         decay_end_epoch = 2.0\n\
         [synth]\n\
         clips_per_class = 10\n\
         n_multilabel = 8\n"
    );
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn hash_tree(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), hex);
            }
        }
    }
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
