use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classes::ClassSet;
use crate::error::{Error, Result};
use crate::semantics::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub path: String,
    pub tags: Vec<ClassId>,
    pub split: Split,
}

impl ClipRecord {
    pub fn has_any(&self, classes: &[ClassId]) -> bool {
        self.tags.iter().any(|t| classes.contains(t))
    }

    /// Multi-hot target over `classes`.
    pub fn targets(&self, classes: &[ClassId]) -> Vec<f32> {
        classes
            .iter()
            .map(|c| if self.tags.contains(c) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Clip records; relative audio paths resolve against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ClipRecord>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ClipRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut paths = HashSet::new();
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Data(format!("manifest: duplicate clip id `{}`", r.id)));
            }
            if !paths.insert(r.path.as_str()) {
                return Err(Error::Data(format!("manifest: path `{}` used twice", r.path)));
            }
        }
        Ok(DatasetManifest {
            records,
            root: root.into(),
        })
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ClipRecord>(l)
                    .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(records, root)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Errors if a record carries a tag outside `vocabulary`.
    pub fn validate(&self, vocabulary: &ClassSet) -> Result<()> {
        for r in &self.records {
            for t in &r.tags {
                if !vocabulary.contains(t) {
                    return Err(Error::UnknownClass(format!("{t} (clip `{}`)", r.id)));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn audio_path(&self, r: &ClipRecord) -> PathBuf {
        let p = Path::new(&r.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::classes::{ClassInfo, ClassRole};

    const TEXT: &str = r#"{"id":"a","path":"audio/a.wav","tags":["c0"],"split":"train"}
{"id":"b","path":"audio/b.wav","tags":["c0","c1"],"split":"val"}

{"id":"c","path":"/abs/c.wav","tags":[],"split":"test"}
"#;

    #[test]
    fn parse_and_round_trip() {
        let m = DatasetManifest::parse(TEXT, "/data").unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.records[1].split, Split::Val);
        assert_eq!(m.audio_path(&m.records[0]), PathBuf::from("/data/audio/a.wav"));
        assert_eq!(m.audio_path(&m.records[2]), PathBuf::from("/abs/c.wav"));
        let again = DatasetManifest::parse(&m.to_jsonl(), "/data").unwrap();
        assert_eq!(again, m);
        assert_eq!(m.indices(Split::Train), vec![0]);
    }

    #[test]
    fn validation_errors() {
        let vocab = ClassSet::new(ClassRole::All, vec![ClassInfo::new("c0", "x")]).unwrap();
        let m = DatasetManifest::parse(TEXT, "").unwrap();
        assert!(m.validate(&vocab).is_err());
        let dup = TEXT.replace("\"id\":\"b\"", "\"id\":\"a\"");
        assert!(DatasetManifest::parse(&dup, "").is_err());
        let dup_path = TEXT.replace("audio/b.wav", "audio/a.wav");
        assert!(DatasetManifest::parse(&dup_path, "").is_err());
        assert!(DatasetManifest::parse("{\"id\":1}", "").is_err());
        assert!(DatasetManifest::parse(&TEXT.replace("train", "dev"), "").is_err());
    }

    #[test]
    fn targets_are_multi_hot() {
        let m = DatasetManifest::parse(TEXT, "").unwrap();
        let cls = vec![ClassId::from("c1"), ClassId::from("c0"), ClassId::from("c7")];
        assert_eq!(m.records[1].targets(&cls), vec![1.0, 1.0, 0.0]);
        assert!(!m.records[2].has_any(&cls));
    }
}
