use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classes::{ClassRole, ClassSet};
use crate::error::{Error, Result};
use crate::semantics::ClassId;

/// Maps an exclusion label to the class ids it covers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymMap(pub BTreeMap<String, Vec<ClassId>>);

impl SynonymMap {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("synonym map", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub entry: String,
    pub classes: Vec<ClassId>,
}

/// Removes every class matched by an exclusion entry, either by exact label
/// or id, or through the synonym map. An entry that matches nothing is an
/// error. Returns the remaining classes and the per-entry audit list.
pub fn exclude_overlap(
    all: &ClassSet,
    exclusion: &[String],
    synonyms: &SynonymMap,
) -> Result<(ClassSet, Vec<Removal>)> {
    let mut audit = Vec::with_capacity(exclusion.len());
    for entry in exclusion {
        let mut hit: Vec<ClassId> = all
            .classes
            .iter()
            .filter(|c| &c.label == entry || c.id.as_str() == entry)
            .map(|c| c.id.clone())
            .collect();
        if let Some(ids) = synonyms.0.get(entry) {
            for id in ids {
                if !all.contains(id) {
                    return Err(Error::UnknownClass(format!("{id} (synonym of `{entry}`)")));
                }
                if !hit.contains(id) {
                    hit.push(id.clone());
                }
            }
        }
        if hit.is_empty() {
            return Err(Error::UnmatchedExclusion(entry.clone()));
        }
        audit.push(Removal {
            entry: entry.clone(),
            classes: hit,
        });
    }
    let removed: Vec<&ClassId> = audit.iter().flat_map(|r| &r.classes).collect();
    let kept = ClassSet {
        role: ClassRole::Train,
        classes: all
            .classes
            .iter()
            .filter(|c| !removed.contains(&&c.id))
            .cloned()
            .collect(),
    };
    Ok((kept, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::classes::ClassInfo;

    fn classes() -> ClassSet {
        ClassSet::new(
            ClassRole::All,
            vec![ClassInfo::new("c0", "Cat"), ClassInfo::new("c1", "Dog")],
        )
        .unwrap()
    }

    #[test]
    fn empty_list_is_identity() {
        let (kept, audit) = exclude_overlap(&classes(), &[], &SynonymMap::default()).unwrap();
        assert_eq!(kept.classes, classes().classes);
        assert!(audit.is_empty());
    }

    #[test]
    fn synonym_resolution() {
        let syn = SynonymMap::from_json(r#"{"cat": ["c0"]}"#).unwrap();
        let (kept, audit) = exclude_overlap(&classes(), &["cat".into()], &syn).unwrap();
        assert_eq!(kept.ids(), vec![ClassId::from("c1")]);
        assert_eq!(audit[0].classes, vec![ClassId::from("c0")]);
    }

    #[test]
    fn exact_label_match() {
        let (kept, _) = exclude_overlap(&classes(), &["Dog".into()], &SynonymMap::default()).unwrap();
        assert_eq!(kept.ids(), vec![ClassId::from("c0")]);
    }

    #[test]
    fn unmatched_entry_is_named() {
        let err = exclude_overlap(&classes(), &["zither".into()], &SynonymMap::default()).unwrap_err();
        assert!(matches!(err, Error::UnmatchedExclusion(ref e) if e == "zither"));
    }

    #[test]
    fn synonym_to_unknown_class_errors() {
        let syn = SynonymMap::from_json(r#"{"cat": ["c9"]}"#).unwrap();
        assert!(exclude_overlap(&classes(), &["cat".into()], &syn).is_err());
    }
}
