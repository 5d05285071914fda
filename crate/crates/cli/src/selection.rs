//! Training and zero-shot class sets for a run.

use serde::Serialize;
use zsaudio::protocol::{exclude_overlap, ClassRole, ClassSet, FoldSplit, Removal, SynonymMap, TagCountTable};
use zsaudio::{ClassId, Error, Result};

use crate::artifacts::read_fold_split;
use crate::config::{ExperimentConfig, SelectionMode};

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub train: ClassSet,
    pub test: ClassSet,
    /// Classes whose clips never reach training.
    pub hidden: Vec<ClassId>,
    /// Exclusion audit, empty outside exclusion mode.
    pub removals: Vec<Removal>,
    /// Row name used in report tables.
    pub label: String,
}

fn resolve_all(vocab: &ClassSet, keys: &[String], role: ClassRole) -> Result<ClassSet> {
    let classes = keys
        .iter()
        .map(|k| vocab.resolve(k).cloned().ok_or_else(|| Error::UnknownClass(k.clone())))
        .collect::<Result<Vec<_>>>()?;
    ClassSet::new(role, classes)
}

pub fn read_exclusion_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Vocabulary of the training manifest.
pub fn training_vocabulary(cfg: &ExperimentConfig) -> Result<ClassSet> {
    Ok(TagCountTable::load(&cfg.input("tag_counts", &cfg.paths.tag_counts)?)?.classes())
}

pub fn select_classes(cfg: &ExperimentConfig) -> Result<Selection> {
    let vocab = training_vocabulary(cfg)?;
    let sel = match cfg.classes.mode {
        SelectionMode::Fold => {
            let split: FoldSplit = read_fold_split(&cfg.input("fold_split", &cfg.paths.fold_split)?)?;
            let (train, test) = split.split_for(cfg.classes.fold)?;
            for c in train.classes.iter().chain(&test.classes) {
                if !vocab.contains(&c.id) {
                    return Err(Error::UnknownClass(format!("{} (from the fold split)", c.id)));
                }
            }
            Selection {
                hidden: test.ids(),
                train,
                test,
                removals: vec![],
                label: format!("fold {}", cfg.classes.fold),
            }
        }
        SelectionMode::Exclusion => {
            let list = cfg.input("exclusion", &cfg.paths.exclusion)?;
            let text = std::fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
            let synonyms = match cfg.optional_input("synonyms", &cfg.paths.synonyms)? {
                Some(p) => SynonymMap::load(&p)?,
                None => SynonymMap::default(),
            };
            let (kept, removals) = exclude_overlap(&vocab, &read_exclusion_list(&text), &synonyms)?;
            let eval_counts = cfg.input(
                "eval_tag_counts",
                if cfg.paths.eval_tag_counts.is_some() {
                    &cfg.paths.eval_tag_counts
                } else {
                    &cfg.paths.tag_counts
                },
            )?;
            let mut test = TagCountTable::load(&eval_counts)?.classes();
            test.role = ClassRole::Test;
            let hidden: Vec<ClassId> = removals.iter().flat_map(|r| r.classes.iter().cloned()).collect();
            let n = hidden.len();
            Selection {
                train: ClassSet {
                    role: ClassRole::Train,
                    classes: kept.classes,
                },
                test,
                hidden,
                removals,
                label: format!("{n} classes excluded"),
            }
        }
        SelectionMode::Explicit => {
            let train = resolve_all(&vocab, &cfg.classes.train, ClassRole::Train)?;
            let test = resolve_all(&vocab, &cfg.classes.test, ClassRole::Test)?;
            // vocabulary classes left out of training are unseen, listed or not
            let hidden = vocab.ids().into_iter().filter(|c| !train.contains(c)).collect();
            Selection {
                hidden,
                train,
                test,
                removals: vec![],
                label: "explicit".into(),
            }
        }
    };
    if sel.train.is_empty() || sel.test.is_empty() {
        return Err(Error::Config("class selection leaves no training or no test class".into()));
    }
    if let Some(c) = sel.train.classes.iter().find(|c| sel.test.contains(&c.id) || sel.hidden.contains(&c.id)) {
        return Err(Error::Config(format!("class `{}` is both a training and a zero-shot class", c.id)));
    }
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exclusion_list_skips_comments_and_blanks() {
        let l = read_exclusion_list("# instruments\nGuitar\n\n  Piano  \n#x\n");
        assert_eq!(l, vec!["Guitar", "Piano"]);
    }
}
