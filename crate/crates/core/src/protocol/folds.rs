use serde::{Deserialize, Serialize};

use super::classes::{ClassInfo, ClassRole, ClassSet, TagCountTable};
use crate::error::{Error, Result};
use crate::semantics::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub classes: Vec<ClassInfo>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
    pub pinned: Vec<ClassInfo>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Training and test classes when `fold` is held out. Pinned classes
    /// are always training classes.
    pub fn split_for(&self, fold: usize) -> Result<(ClassSet, ClassSet)> {
        if fold >= self.folds.len() {
            return Err(Error::Config(format!(
                "fold {fold} out of range for a {}-fold split",
                self.folds.len()
            )));
        }
        let mut train = self.pinned.clone();
        for (i, f) in self.folds.iter().enumerate() {
            if i != fold {
                train.extend(f.classes.iter().cloned());
            }
        }
        train.sort_by(|a, b| a.id.cmp(&b.id));
        Ok((
            ClassSet::new(ClassRole::Train, train)?,
            ClassSet::new(ClassRole::Test, self.folds[fold].classes.clone())?,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold split serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("fold split", e.to_string()))
    }
}

/// Greedy fold balancing: classes in descending count order (ties by class
/// id) each go to the fold with the smallest running total (ties by lowest
/// index). Pinned classes are kept out of every fold.
pub fn balance_folds(counts: &TagCountTable, k: usize, pinned: &[ClassId]) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    for p in pinned {
        if counts.count(p).is_none() {
            return Err(Error::UnknownClass(p.to_string()));
        }
    }
    let mut rows: Vec<_> = counts.rows.iter().filter(|r| !pinned.contains(&r.class_id)).collect();
    if rows.len() < k {
        return Err(Error::Config(format!(
            "{k} folds requested but only {} assignable classes",
            rows.len()
        )));
    }
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.class_id.cmp(&b.class_id)));
    let mut folds = vec![
        Fold {
            classes: Vec::new(),
            total: 0
        };
        k
    ];
    for r in rows {
        let (target, _) = folds
            .iter()
            .enumerate()
            .min_by_key(|(i, f)| (f.total, *i))
            .expect("k >= 2");
        folds[target].classes.push(ClassInfo {
            id: r.class_id.clone(),
            label: r.label.clone(),
        });
        folds[target].total += r.count;
    }
    let pinned = counts
        .rows
        .iter()
        .filter(|r| pinned.contains(&r.class_id))
        .map(|r| ClassInfo {
            id: r.class_id.clone(),
            label: r.label.clone(),
        })
        .collect();
    Ok(FoldSplit { folds, pinned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::classes::TagCount;

    pub(crate) fn table(rows: &[(&str, u64)]) -> TagCountTable {
        TagCountTable::new(
            rows.iter()
                .map(|(id, c)| TagCount {
                    class_id: ClassId::from(*id),
                    label: id.to_string(),
                    count: *c,
                })
                .collect(),
        )
        .unwrap()
    }

    fn ids(f: &Fold) -> Vec<&str> {
        f.classes.iter().map(|c| c.id.as_str()).collect()
    }

    #[test]
    fn hand_executed_example() {
        let t = table(&[("A", 10), ("B", 8), ("C", 6), ("D", 4), ("E", 2)]);
        let s = balance_folds(&t, 2, &[]).unwrap();
        assert_eq!(ids(&s.folds[0]), vec!["A", "D", "E"]);
        assert_eq!(ids(&s.folds[1]), vec!["B", "C"]);
        assert_eq!((s.folds[0].total, s.folds[1].total), (16, 14));
    }

    #[test]
    fn symmetric_counts_spread_evenly() {
        let t = table(&[("a", 5), ("b", 5), ("c", 5), ("d", 5), ("e", 5), ("f", 5)]);
        let s = balance_folds(&t, 3, &[]).unwrap();
        for f in &s.folds {
            assert_eq!((f.classes.len(), f.total), (2, 10));
        }
        assert_eq!(ids(&s.folds[0]), vec!["a", "d"]);
    }

    #[test]
    fn pinned_classes_stay_out() {
        let t = table(&[("Speech", 100), ("Music", 90), ("x", 3), ("y", 2), ("z", 1)]);
        let s = balance_folds(&t, 2, &["Speech".into(), "Music".into()]).unwrap();
        assert_eq!(s.pinned.len(), 2);
        assert!(s.folds.iter().all(|f| f.classes.iter().all(|c| c.id.as_str().len() == 1)));
        let (train, test) = s.split_for(0).unwrap();
        assert!(train.contains(&"Speech".into()));
        assert!(!test.contains(&"Speech".into()));
        assert!(s.split_for(2).is_err());
    }

    #[test]
    fn guards() {
        let t = table(&[("a", 1), ("b", 1)]);
        assert!(balance_folds(&t, 1, &[]).is_err());
        assert!(balance_folds(&t, 3, &[]).is_err());
        assert!(balance_folds(&t, 2, &["nope".into()]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = table(&[("A", 10), ("B", 8), ("C", 6)]);
        let s = balance_folds(&t, 2, &[]).unwrap();
        assert_eq!(FoldSplit::from_json(&s.to_json()).unwrap(), s);
    }
}
