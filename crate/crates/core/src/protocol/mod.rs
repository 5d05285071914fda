//! Experimental protocol: class sets and folds, overlap exclusion, dataset
//! manifests, balanced sampling and the synthetic corpus.

pub mod classes;
pub mod exclusion;
pub mod folds;
pub mod manifest;
pub mod sampler;
pub mod synth;

pub use classes::{check_disjoint, ClassInfo, ClassRole, ClassSet, TagCount, TagCountTable};
pub use exclusion::{exclude_overlap, Removal, SynonymMap};
pub use folds::{balance_folds, Fold, FoldSplit};
pub use manifest::{ClipRecord, DatasetManifest, Split};
pub use sampler::{stable_hash, BalancedSampler};
pub use synth::{generate_synthetic_corpus, SynthConfig, SynthCorpus};
