//! File names and JSON envelopes of the artifacts the commands exchange.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zsaudio::protocol::FoldSplit;
use zsaudio::{Error, Result};

pub const FOLD_SPLIT: &str = "folds.json";
pub const PROJECTION_SUMMARY: &str = "projection-summary.json";

pub fn backbone_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("backbone-s{seed}.zsck"))
}

pub fn pretrain_report_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("pretrain-s{seed}.json"))
}

pub fn projection_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("projection-s{seed}.zsck"))
}

pub fn selection_report_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("selection-s{seed}.json"))
}

pub fn eval_report_path(dir: &Path, task: zsaudio::eval::Task) -> PathBuf {
    let name = match task {
        zsaudio::eval::Task::Tagging => "eval-tagging.json",
        zsaudio::eval::Task::Classification => "eval-classification.json",
    };
    dir.join(name)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("artifact", e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSplitFile {
    pub provenance: serde_json::Value,
    #[serde(flatten)]
    pub split: FoldSplit,
}

/// Reads a fold split, with or without the provenance envelope.
pub fn read_fold_split(path: &Path) -> Result<FoldSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FoldSplit::from_json(&text)
}

pub fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
