use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassRole {
    All,
    Train,
    Test,
    Pinned,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    pub label: String,
}

impl ClassInfo {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        ClassInfo {
            id: ClassId::new(id),
            label: label.into(),
        }
    }
}

/// An ordered set of classes playing one role in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSet {
    pub role: ClassRole,
    pub classes: Vec<ClassInfo>,
}

impl ClassSet {
    pub fn new(role: ClassRole, classes: Vec<ClassInfo>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(&c.id) {
                return Err(Error::Data(format!("class id `{}` appears twice", c.id)));
            }
        }
        Ok(ClassSet { role, classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id.clone()).collect()
    }

    pub fn contains(&self, id: &ClassId) -> bool {
        self.classes.iter().any(|c| &c.id == id)
    }

    pub fn get(&self, id: &ClassId) -> Option<&ClassInfo> {
        self.classes.iter().find(|c| &c.id == id)
    }

    /// Looks a class up by id or display label.
    pub fn resolve(&self, key: &str) -> Option<&ClassInfo> {
        self.classes
            .iter()
            .find(|c| c.id.as_str() == key)
            .or_else(|| self.classes.iter().find(|c| c.label == key))
    }

    /// Classes of `self` in the given id list, in that list's order.
    pub fn select(&self, ids: &[ClassId], role: ClassRole) -> Result<ClassSet> {
        let classes = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownClass(id.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        ClassSet::new(role, classes)
    }

    /// Classes of `self` that are not in `other`.
    pub fn without(&self, other: &ClassSet, role: ClassRole) -> ClassSet {
        ClassSet {
            role,
            classes: self
                .classes
                .iter()
                .filter(|c| !other.contains(&c.id))
                .cloned()
                .collect(),
        }
    }
}

/// Errors if the two sets share a class.
pub fn check_disjoint(a: &ClassSet, b: &ClassSet) -> Result<()> {
    for c in &a.classes {
        if b.contains(&c.id) {
            return Err(Error::Config(format!(
                "class `{}` is both a training and a test class",
                c.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCount {
    pub class_id: ClassId,
    pub label: String,
    pub count: u64,
}

/// Per-class tag counts, as read from a `class_id,label,count` CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagCountTable {
    pub rows: Vec<TagCount>,
}

impl TagCountTable {
    pub fn new(rows: Vec<TagCount>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(&r.class_id) {
                return Err(Error::Data(format!("class id `{}` appears twice in tag counts", r.class_id)));
            }
        }
        Ok(TagCountTable { rows })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::format("tag-count csv", e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["class_id", "label", "count"] {
            return Err(Error::format("tag-count csv", "header must be `class_id,label,count`"));
        }
        let rows = rdr
            .deserialize()
            .map(|r| r.map_err(|e| Error::format("tag-count csv", e.to_string())))
            .collect::<Result<Vec<TagCount>>>()?;
        TagCountTable::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn classes(&self) -> ClassSet {
        ClassSet {
            role: ClassRole::All,
            classes: self
                .rows
                .iter()
                .map(|r| ClassInfo {
                    id: r.class_id.clone(),
                    label: r.label.clone(),
                })
                .collect(),
        }
    }

    pub fn count(&self, id: &ClassId) -> Option<u64> {
        self.rows.iter().find(|r| &r.class_id == id).map(|r| r.count)
    }

    /// Counts of training-split tags in a manifest for every class in `classes`.
    pub fn from_manifest(manifest: &super::DatasetManifest, classes: &ClassSet) -> Self {
        let mut counts: BTreeMap<&ClassId, u64> = classes.classes.iter().map(|c| (&c.id, 0)).collect();
        for r in manifest.split(super::Split::Train) {
            for t in &r.tags {
                if let Some(c) = counts.get_mut(t) {
                    *c += 1;
                }
            }
        }
        TagCountTable {
            rows: classes
                .classes
                .iter()
                .map(|c| TagCount {
                    class_id: c.id.clone(),
                    label: c.label.clone(),
                    count: counts[&c.id],
                })
                .collect(),
        }
    }
}
