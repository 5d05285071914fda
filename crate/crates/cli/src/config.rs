//! Experiment configuration: named presets plus TOML overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zsaudio::backbones::{BackboneConfig, BackboneKind, PatchoutConfig};
use zsaudio::crossmodal::{ProjectionConfig, TrainConfig};
use zsaudio::dsp::{AugmentConfig, MelConfig};
use zsaudio::eval::Task;
use zsaudio::nn::Mode;
use zsaudio::protocol::SynthConfig;
use zsaudio::{Error, Result};

pub const PRESETS: [&str; 5] = ["audioset-fold", "esc50", "openmic-inst", "openmic-mic", "toy"];

/// Input files. Relative paths are resolved against the config file's
/// directory (or the working directory without a config file).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Training manifest (JSON lines).
    pub manifest: Option<PathBuf>,
    /// Per-class tag counts of the training vocabulary.
    pub tag_counts: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    /// Output of `fold-split`, read in fold mode.
    pub fold_split: Option<PathBuf>,
    /// Exclusion entries, one per line.
    pub exclusion: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    /// Evaluation manifest; the training manifest when absent.
    pub eval_manifest: Option<PathBuf>,
    /// Evaluation vocabulary in exclusion mode.
    pub eval_tag_counts: Option<PathBuf>,
    /// JSON object mapping category names to class ids or labels.
    pub category_map: Option<PathBuf>,
    /// Spectrogram cache directory.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldParams {
    pub k: usize,
    /// Class ids or labels kept out of every fold (always training classes).
    pub pinned: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Test classes are one fold of `paths.fold_split`.
    Fold,
    /// Training classes are the vocabulary minus the exclusion list; test
    /// classes are the evaluation vocabulary.
    Exclusion,
    /// Both sets listed in the config.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSelection {
    pub mode: SelectionMode,
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub task: Task,
    pub split: EvalSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub backbone_kind: BackboneKind,
    pub seeds: Vec<u64>,
    pub paths: Paths,
    pub mel: MelConfig,
    pub augment: AugmentConfig,
    pub patchout: PatchoutConfig,
    pub backbone: BackboneConfig,
    pub pretrain: TrainConfig,
    pub projection_train: TrainConfig,
    pub projection: ProjectionConfig,
    pub folds: FoldParams,
    pub classes: ClassSelection,
    pub evaluate: EvalParams,
    pub synth: SynthConfig,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn full_mel(kind: BackboneKind) -> MelConfig {
    match kind {
        BackboneKind::Vggish => MelConfig::full_vggish(),
        _ => MelConfig::full(),
    }
}

fn full_batch(kind: BackboneKind) -> usize {
    match kind {
        BackboneKind::Transformer => 24,
        _ => 32,
    }
}

fn full_base(preset: &str, kind: BackboneKind) -> ExperimentConfig {
    ExperimentConfig {
        preset: preset.to_string(),
        backbone_kind: kind,
        seeds: vec![0, 1, 2],
        paths: Paths::default(),
        mel: full_mel(kind),
        augment: AugmentConfig::default(),
        patchout: PatchoutConfig {
            n_freq_drop: 2,
            n_time_drop: 10,
            mode: Mode::Train,
        },
        backbone: BackboneConfig::full(kind),
        pretrain: TrainConfig::pretrain_full(full_batch(kind)),
        projection_train: TrainConfig::projection_full(full_batch(kind)),
        projection: ProjectionConfig::default(),
        folds: FoldParams {
            k: 5,
            pinned: vec!["Speech".into(), "Music".into()],
        },
        classes: ClassSelection {
            mode: SelectionMode::Fold,
            fold: 0,
            train: vec![],
            test: vec![],
        },
        evaluate: EvalParams {
            task: Task::Tagging,
            split: EvalSplit::Test,
        },
        synth: SynthConfig::default(),
        base_dir: PathBuf::new(),
    }
}

/// Class split of the toy corpus: pitch-adjacent pairs `c01`/`c00`,
/// `c04`/`c05`, ... put every test class next to a training class.
pub const TOY_TEST: [&str; 4] = ["c01", "c04", "c07", "c10"];

fn toy(kind: BackboneKind) -> ExperimentConfig {
    let synth = SynthConfig::default();
    let train = (0..synth.n_classes())
        .map(SynthConfig::class_id)
        .map(|c| c.0)
        .filter(|c| !TOY_TEST.contains(&c.as_str()))
        .collect();
    let mel = match kind {
        BackboneKind::Vggish => MelConfig::full_vggish(),
        _ => MelConfig::toy(),
    };
    ExperimentConfig {
        paths: Paths {
            manifest: Some("manifest.jsonl".into()),
            tag_counts: Some("tag_counts.csv".into()),
            word_vectors: Some("vectors.txt".into()),
            ..Paths::default()
        },
        mel,
        patchout: PatchoutConfig::toy(),
        backbone: BackboneConfig::toy(kind),
        pretrain: TrainConfig::pretrain_toy(),
        projection_train: TrainConfig::projection_toy(),
        folds: FoldParams { k: 4, pinned: vec![] },
        classes: ClassSelection {
            mode: SelectionMode::Explicit,
            fold: 0,
            train,
            test: TOY_TEST.iter().map(|s| s.to_string()).collect(),
        },
        synth,
        ..full_base("toy", kind)
    }
}

/// Fully resolved preset.
pub fn preset(name: &str, kind: BackboneKind) -> Result<ExperimentConfig> {
    let exclusion = |task| {
        let mut c = full_base(name, kind);
        c.classes.mode = SelectionMode::Exclusion;
        c.evaluate = EvalParams {
            task,
            split: EvalSplit::All,
        };
        c
    };
    Ok(match name {
        "audioset-fold" => full_base(name, kind),
        "esc50" => exclusion(Task::Classification),
        "openmic-inst" | "openmic-mic" => {
            let mut c = exclusion(Task::Tagging);
            c.evaluate.split = EvalSplit::Test;
            c
        }
        "toy" => toy(kind),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    })
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    /// Preset named by `preset_flag`, else by the file's `preset` key, else
    /// `toy`; then the file's remaining keys override it.
    pub fn load(path: Option<&Path>, preset_flag: Option<&str>) -> Result<Self> {
        let (text, base_dir) = match path {
            Some(p) => (
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (String::new(), PathBuf::from(".")),
        };
        let mut user: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let take_str = |user: &mut toml::Table, key: &str| -> Result<Option<String>> {
            match user.remove(key) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s)),
                Some(v) => Err(Error::Config(format!("config: `{key}` must be a string, got {v}"))),
            }
        };
        let file_preset = take_str(&mut user, "preset")?;
        let kind = match take_str(&mut user, "backbone_kind")? {
            None => BackboneKind::Transformer,
            Some(k) => serde_json::from_value(serde_json::Value::String(k.clone()))
                .map_err(|_| Error::Config(format!("unknown backbone_kind `{k}`")))?,
        };
        let name = preset_flag.map(str::to_string).or(file_preset).unwrap_or_else(|| "toy".into());
        let base = preset(&name, kind)?;
        let mut value = toml::Value::try_from(&base).map_err(config_err)?;
        merge(&mut value, toml::Value::Table(user));
        let mut cfg: ExperimentConfig = value.try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.base_dir = base_dir;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.augment.validate()?;
        self.backbone.validate()?;
        self.pretrain.validate()?;
        self.projection_train.validate()?;
        self.projection.validate()?;
        if self.backbone.kind() != self.backbone_kind {
            return Err(Error::Config(format!(
                "backbone table is a {} but backbone_kind is {}",
                self.backbone.kind().tag(),
                self.backbone_kind.tag()
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.folds.k < 2 {
            return Err(Error::Config("folds.k must be at least 2".into()));
        }
        Ok(())
    }

    /// Absolute-or-relative path of a configured input, which must exist.
    pub fn input(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let p = value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("paths.{key} is required for this command")))?;
        let full = if p.is_absolute() { p.clone() } else { self.base_dir.join(p) };
        if !full.exists() {
            return Err(Error::Config(format!("paths.{key}: {} does not exist", full.display())));
        }
        Ok(full)
    }

    pub fn optional_input(&self, key: &str, value: &Option<PathBuf>) -> Result<Option<PathBuf>> {
        value.as_ref().map(|_| self.input(key, value)).transpose()
    }

    /// Resolved config plus version, embedded in every artifact.
    pub fn provenance(&self, command: &str, seed: Option<u64>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "version": zsaudio::VERSION,
            "command": command,
            "config": self,
        });
        if let Some(s) = seed {
            v["seed"] = s.into();
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for name in PRESETS {
            for kind in [BackboneKind::Transformer, BackboneKind::Cnn14, BackboneKind::Vggish] {
                let c = preset(name, kind).unwrap();
                c.validate().unwrap();
                assert_eq!(c.seeds, vec![0, 1, 2]);
                let round: ExperimentConfig = toml::Value::try_from(&c).unwrap().try_into().unwrap();
                assert_eq!(round, c, "{name}");
            }
        }
        assert!(preset("nope", BackboneKind::Transformer).is_err());
    }

    #[test]
    fn full_presets_carry_reference_values() {
        let c = preset("audioset-fold", BackboneKind::Transformer).unwrap();
        assert_eq!(c.pretrain.epochs, 130);
        assert_eq!(c.pretrain.batch_size, 24);
        assert_eq!(c.mel.n_mels, 128);
        assert_eq!(c.backbone.embed_dim(), 768);
        assert_eq!(c.folds.pinned, vec!["Speech", "Music"]);
        let v = preset("audioset-fold", BackboneKind::Vggish).unwrap();
        assert_eq!((v.mel.n_mels, v.pretrain.batch_size), (64, 32));
        assert_eq!(preset("esc50", BackboneKind::Cnn14).unwrap().evaluate.task, Task::Classification);
    }

    #[test]
    fn file_overrides_merge_into_the_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(
            &p,
            "preset = \"toy\"\nseeds = [7]\n[pretrain]\nepochs = 3\n[backbone]\ndim = 24\n",
        )
        .unwrap();
        let c = ExperimentConfig::load(Some(&p), None).unwrap();
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.pretrain.epochs, 3);
        assert_eq!(c.pretrain.initial_lr, TrainConfig::pretrain_toy().initial_lr);
        match &c.backbone {
            BackboneConfig::Transformer(t) => assert_eq!((t.dim, t.heads), (24, 4)),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.base_dir, dir.path());
        let flagged = ExperimentConfig::load(Some(&p), Some("audioset-fold")).unwrap();
        assert_eq!(flagged.pretrain.epochs, 3);
        assert_eq!(flagged.pretrain.batch_size, 24);
    }

    #[test]
    fn bad_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        for text in ["[pretrain]\nepochz = 3\n", "seeds = []\n", "preset = 4\n", "backbone_kind = \"resnet\"\n", "[pretrain\n"] {
            std::fs::write(&p, text).unwrap();
            let e = ExperimentConfig::load(Some(&p), None).unwrap_err();
            assert_eq!(e.kind(), zsaudio::ErrorKind::Config, "{text}: {e}");
        }
        assert!(ExperimentConfig::load(Some(&dir.path().join("missing.toml")), None).is_err());
    }
}
