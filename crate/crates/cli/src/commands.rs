//! The five subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use zsaudio::backbones::{pretrain_backbone, Backbone, EpochStats, PretrainConfig, PretrainState};
use zsaudio::checkpoint::{
    backbone_checkpoint, projection_checkpoint, restore_backbone, restore_projection, Checkpoint,
};
use zsaudio::crossmodal::{argmax_class, train_projection, ProjectionParams, SelectionReport};
use zsaudio::dsp::MelSpectrogram;
use zsaudio::eval::{
    emit_report, mean, proximity_correlation, random_baseline, top1_accuracy, ClassAp, EvalReport, ReportTable,
    RunMetrics, Task,
};
use zsaudio::experiment::{embed_classes, evaluate_zero_shot, hide_classes};
use zsaudio::pipeline::{embed_clips, load_spectrograms, zero_shot_logits};
use zsaudio::protocol::{balance_folds, generate_synthetic_corpus, DatasetManifest, Split, TagCountTable};
use zsaudio::semantics::{load_word_vectors, SemanticEmbedding, VectorStore};
use zsaudio::{ClassId, Error, Result};

use crate::artifacts::*;
use crate::config::{EvalSplit, ExperimentConfig};
use crate::selection::{select_classes, training_vocabulary, Selection};

fn load_manifest(cfg: &ExperimentConfig, key: &str, path: &Option<PathBuf>) -> Result<DatasetManifest> {
    DatasetManifest::load(&cfg.input(key, path)?)
}

fn spectrograms(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<Vec<MelSpectrogram>> {
    let cache = cfg.paths.cache_dir.as_ref().map(|p| cfg.base_dir.join(p));
    load_spectrograms(manifest, &cfg.mel, cache.as_deref())
}

/// Training manifest with every clip of a hidden class removed from the
/// training and validation splits.
fn seen_data(cfg: &ExperimentConfig, sel: &Selection) -> Result<(DatasetManifest, Vec<MelSpectrogram>)> {
    let manifest = load_manifest(cfg, "manifest", &cfg.paths.manifest)?;
    manifest.validate(&training_vocabulary(cfg)?)?;
    let specs = spectrograms(cfg, &manifest)?;
    hide_classes(&manifest, &specs, &sel.hidden)
}

fn load_checkpoint(path: &Path, producer: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `{producer}` for this seed first",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

fn load_backbone(cfg: &ExperimentConfig, dir: &Path, seed: u64) -> Result<PretrainState> {
    let state = restore_backbone(&load_checkpoint(&backbone_path(dir, seed), "pretrain")?)?;
    let found = state.model.backbone.config();
    if found.embed_dim() != cfg.backbone.embed_dim() {
        return Err(Error::dim(
            format!("audio embedding of backbone checkpoint for seed {seed}"),
            cfg.backbone.embed_dim(),
            found.embed_dim(),
        ));
    }
    if found != cfg.backbone {
        return Err(Error::Config(format!(
            "backbone checkpoint for seed {seed} was built with a different backbone config"
        )));
    }
    Ok(state)
}

pub fn fold_split(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let counts = TagCountTable::load(&cfg.input("tag_counts", &cfg.paths.tag_counts)?)?;
    let vocab = counts.classes();
    let pinned = cfg
        .folds
        .pinned
        .iter()
        .map(|k| vocab.resolve(k).map(|c| c.id.clone()).ok_or_else(|| Error::UnknownClass(k.clone())))
        .collect::<Result<Vec<_>>>()?;
    let split = balance_folds(&counts, cfg.folds.k, &pinned)?;
    for (i, f) in split.folds.iter().enumerate() {
        log::info!("fold {i}: {} classes, {} tags", f.classes.len(), f.total);
    }
    create_out_dir(out)?;
    let path = out.join(FOLD_SPLIT);
    write_json(
        &path,
        &FoldSplitFile {
            provenance: cfg.provenance("fold-split", None),
            split,
        },
    )?;
    Ok(path)
}

#[derive(Serialize)]
struct PretrainReport<'a> {
    provenance: serde_json::Value,
    train_classes: Vec<ClassId>,
    hidden_classes: &'a [ClassId],
    epochs_completed: usize,
    history: &'a [EpochStats],
}

pub fn pretrain(cfg: &ExperimentConfig, out: &Path, seeds: &[u64], resume: bool) -> Result<Vec<PathBuf>> {
    let sel = select_classes(cfg)?;
    let (seen, specs) = seen_data(cfg, &sel)?;
    create_out_dir(out)?;
    let mut written = Vec::new();
    for &seed in seeds {
        let path = backbone_path(out, seed);
        let mut state = if resume && path.exists() {
            let s = load_backbone(cfg, out, seed)?;
            if s.classes != sel.train.ids() {
                return Err(Error::Config(format!(
                    "cannot resume {}: it was trained on a different class set",
                    path.display()
                )));
            }
            log::info!("seed {seed}: resuming after epoch {}", s.epoch);
            s
        } else {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let backbone = cfg.backbone.build::<f32, _>(&mut rng)?;
            PretrainState::new(backbone, sel.train.ids(), &mut rng)?
        };
        let pre = PretrainConfig {
            train: zsaudio::crossmodal::TrainConfig {
                seed,
                ..cfg.pretrain.clone()
            },
            augment: cfg.augment.clone(),
            patchout: cfg.patchout.clone(),
        };
        pretrain_backbone(&mut state, &seen, &specs, &pre)?;
        let provenance = cfg.provenance("pretrain", Some(seed));
        backbone_checkpoint(&state, provenance.clone()).save(&path)?;
        write_json(
            &pretrain_report_path(out, seed),
            &PretrainReport {
                provenance,
                train_classes: state.classes.clone(),
                hidden_classes: &sel.hidden,
                epochs_completed: state.epoch,
                history: &state.history,
            },
        )?;
        written.push(path);
    }
    Ok(written)
}

fn word_vectors(cfg: &ExperimentConfig) -> Result<VectorStore> {
    load_word_vectors(&cfg.input("word_vectors", &cfg.paths.word_vectors)?)
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    provenance: serde_json::Value,
    selection: &'a SelectionReport,
}

#[derive(Serialize)]
struct ProjectionRun {
    seed: u64,
    chosen_epoch: usize,
    best_val_map: f64,
}

#[derive(Serialize)]
struct ProjectionSummary {
    provenance: serde_json::Value,
    runs: Vec<ProjectionRun>,
    mean_best_val_map: Option<f64>,
}

pub fn train_projection_cmd(
    cfg: &ExperimentConfig,
    out: &Path,
    backbones: &Path,
    seeds: &[u64],
) -> Result<Vec<PathBuf>> {
    let sel = select_classes(cfg)?;
    let store = word_vectors(cfg)?;
    let train_emb = embed_classes(&sel.train.classes, &store)?;
    // fail on missing checkpoints before the expensive feature pass
    for &seed in seeds {
        load_checkpoint(&backbone_path(backbones, seed), "pretrain")?;
    }
    let (seen, specs) = seen_data(cfg, &sel)?;
    create_out_dir(out)?;
    let all: Vec<usize> = (0..seen.records.len()).collect();
    let mut runs = Vec::new();
    let mut written = Vec::new();
    for &seed in seeds {
        let backbone = load_backbone(cfg, backbones, seed)?.model.backbone;
        let emb = embed_clips(&backbone, &specs, &all)?;
        let tc = zsaudio::crossmodal::TrainConfig {
            seed,
            ..cfg.projection_train.clone()
        };
        let (p, report) = train_projection(&seen, emb.view(), &train_emb, &tc, &cfg.projection)?;
        log::info!(
            "seed {seed}: kept epoch {} (validation mAP {:.4})",
            report.chosen_epoch,
            report.best_val_map
        );
        let provenance = cfg.provenance("train-projection", Some(seed));
        let path = projection_path(out, seed);
        projection_checkpoint(&p, Some(&report), provenance.clone()).save(&path)?;
        write_json(
            &selection_report_path(out, seed),
            &SelectionFile {
                provenance,
                selection: &report,
            },
        )?;
        runs.push(ProjectionRun {
            seed,
            chosen_epoch: report.chosen_epoch,
            best_val_map: report.best_val_map,
        });
        written.push(path);
    }
    let maps: Vec<f64> = runs.iter().map(|r| r.best_val_map).collect();
    write_json(
        &out.join(PROJECTION_SUMMARY),
        &ProjectionSummary {
            provenance: cfg.provenance("train-projection", None),
            mean_best_val_map: mean(&maps),
            runs,
        },
    )?;
    Ok(written)
}

/// Category name to candidate indices, from the configured category map.
fn categories(cfg: &ExperimentConfig, candidates: &[SemanticEmbedding], sel: &Selection) -> Result<Vec<(String, Vec<usize>)>> {
    let Some(path) = cfg.optional_input("category_map", &cfg.paths.category_map)? else {
        return Ok(vec![]);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| Error::format("category map", e.to_string()))?;
    map.into_iter()
        .map(|(name, keys)| {
            let idx = keys
                .iter()
                .map(|k| {
                    let id = sel.test.resolve(k).map(|c| c.id.clone()).ok_or_else(|| {
                        Error::UnknownClass(format!("{k} (category `{name}` lists a non-candidate class)"))
                    })?;
                    Ok(candidates.iter().position(|c| c.class == id).expect("candidates mirror the test set"))
                })
                .collect::<Result<Vec<_>>>()?;
            if idx.is_empty() {
                return Err(Error::Data(format!("category `{name}` is empty")));
            }
            Ok((name, idx))
        })
        .collect()
}

struct EvalData {
    manifest: DatasetManifest,
    specs: Vec<MelSpectrogram>,
}

fn eval_data(cfg: &ExperimentConfig) -> Result<EvalData> {
    let (key, path) = match &cfg.paths.eval_manifest {
        Some(_) => ("eval_manifest", &cfg.paths.eval_manifest),
        None => ("manifest", &cfg.paths.manifest),
    };
    let full = load_manifest(cfg, key, path)?;
    let records: Vec<_> = full
        .records
        .iter()
        .filter(|r| cfg.evaluate.split == EvalSplit::All || r.split == Split::Test)
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::Data("evaluation split has no clips".into()));
    }
    let manifest = DatasetManifest::new(records, full.root.clone())?;
    let specs = spectrograms(cfg, &manifest)?;
    Ok(EvalData { manifest, specs })
}

/// Top-1 accuracy over clips whose only tag is among `cols`, choosing among `cols`.
fn restricted_accuracy(
    manifest: &DatasetManifest,
    logits: &ndarray::Array2<f64>,
    candidates: &[SemanticEmbedding],
    cols: &[usize],
) -> Result<Option<f64>> {
    let subset: Vec<SemanticEmbedding> = cols.iter().map(|&j| candidates[j].clone()).collect();
    let ids: Vec<ClassId> = subset.iter().map(|c| c.class.clone()).collect();
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (row, r) in manifest.records.iter().enumerate() {
        if r.tags.len() != 1 || !ids.contains(&r.tags[0]) {
            continue;
        }
        let scores: Vec<f64> = cols.iter().map(|&j| logits[[row, j]]).collect();
        preds.push(argmax_class(&scores, &subset)?);
        truths.push(r.tags[0].clone());
    }
    if truths.is_empty() {
        return Ok(None);
    }
    top1_accuracy(&preds, &truths, Some(&ids)).map(Some)
}

fn check_dims(backbone: &Backbone<f32>, p: &ProjectionParams<f32>, store: &VectorStore, seed: u64) -> Result<()> {
    if p.in_dim() != backbone.embed_dim() {
        return Err(Error::dim(
            format!("projection input (seed {seed}) vs backbone embedding"),
            backbone.embed_dim(),
            p.in_dim(),
        ));
    }
    if p.out_dim() != store.dim() {
        return Err(Error::dim(
            format!("projection output (seed {seed}) vs word-vector dimension"),
            store.dim(),
            p.out_dim(),
        ));
    }
    Ok(())
}

pub fn evaluate(cfg: &ExperimentConfig, out: &Path, checkpoints: &Path, seeds: &[u64]) -> Result<PathBuf> {
    let task = cfg.evaluate.task;
    let sel = select_classes(cfg)?;
    let store = word_vectors(cfg)?;
    let candidates = embed_classes(&sel.test.classes, &store)?;
    let train_emb = embed_classes(&sel.train.classes, &store)?;
    let cats = categories(cfg, &candidates, &sel)?;
    let models = seeds
        .iter()
        .map(|&seed| {
            let backbone = load_backbone(cfg, checkpoints, seed)?.model.backbone;
            let p = restore_projection(&load_checkpoint(&projection_path(checkpoints, seed), "train-projection")?)?;
            check_dims(&backbone, &p, &store, seed)?;
            Ok((seed, backbone, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = eval_data(cfg)?;
    let clips: Vec<usize> = (0..data.manifest.records.len()).collect();

    let mut runs = Vec::new();
    let mut ap_sums: BTreeMap<ClassId, (f64, f64, usize)> = BTreeMap::new();
    for (seed, backbone, p) in &models {
        let emb = embed_clips(backbone, &data.specs, &clips)?;
        let metrics = evaluate_zero_shot(&data.manifest, &clips, emb.view(), p, &candidates)?;
        let logits = zero_shot_logits(p, emb.view(), &candidates)?;
        let mut per_class_ap: BTreeMap<ClassId, Option<f64>> =
            candidates.iter().map(|c| (c.class.clone(), None)).collect();
        for c in &metrics.per_class {
            per_class_ap.insert(c.class.clone(), Some(c.ap));
            let e = ap_sums.entry(c.class.clone()).or_insert((0.0, c.random_ap, 0));
            e.0 += c.ap;
            e.2 += 1;
        }
        let mut category_accuracy = BTreeMap::new();
        for (name, cols) in &cats {
            if let Some(a) = restricted_accuracy(&data.manifest, &logits, &candidates, cols)? {
                category_accuracy.insert(name.clone(), a);
            }
        }
        runs.push(RunMetrics {
            seed: *seed,
            per_class_ap,
            map: Some(metrics.map),
            accuracy: metrics.accuracy,
            category_accuracy,
        });
    }

    let labels: Vec<Vec<bool>> = candidates
        .iter()
        .map(|c| data.manifest.records.iter().map(|r| r.tags.contains(&c.class)).collect())
        .collect();
    let baseline = random_baseline(&labels, task)?;
    let maps: Vec<f64> = runs.iter().filter_map(|r| r.map.as_ref().map(|m| m.value)).collect();
    let accs: Vec<f64> = runs.iter().filter_map(|r| r.accuracy).collect();
    if task == Task::Classification && accs.is_empty() {
        return Err(Error::Data("no evaluation clip carries exactly one candidate tag".into()));
    }

    let proximity = if task == Task::Tagging && ap_sums.len() >= 3 {
        let pooled: Vec<ClassAp> = ap_sums
            .iter()
            .map(|(class, &(sum, random_ap, n))| ClassAp {
                class: class.clone(),
                ap: sum / n as f64,
                random_ap,
            })
            .collect();
        Some(proximity_correlation(&pooled, &train_emb, &candidates)?)
    } else {
        None
    };

    let mut columns: Vec<String> = seeds.iter().map(|s| format!("{} s{s}", cfg.backbone_kind.tag())).collect();
    columns.push(format!("{} mean", cfg.backbone_kind.tag()));
    let row = |name: &str, vals: Vec<Option<f64>>| {
        let m = mean(&vals.iter().flatten().copied().collect::<Vec<_>>());
        let mut v = vals;
        v.push(m);
        (name.to_string(), v)
    };
    let table = match task {
        Task::Tagging => ReportTable {
            title: "Zero-shot tagging mAP (%)".into(),
            row_header: "classes".into(),
            columns,
            rows: vec![
                row(&sel.label, runs.iter().map(|r| r.map.as_ref().map(|m| m.value)).collect()),
                row("random baseline", vec![Some(baseline); runs.len()]),
            ],
        },
        Task::Classification => {
            let mut rows: Vec<(String, Vec<Option<f64>>)> = cats
                .iter()
                .map(|(name, _)| row(name, runs.iter().map(|r| r.category_accuracy.get(name).copied()).collect()))
                .collect();
            rows.push(row("all", runs.iter().map(|r| r.accuracy).collect()));
            rows.push(row("chance", vec![Some(baseline); runs.len()]));
            ReportTable {
                title: "Zero-shot top-1 classification accuracy (%)".into(),
                row_header: "category".into(),
                columns,
                rows,
            }
        }
    };
    let report = EvalReport {
        task,
        runs,
        mean_map: mean(&maps),
        mean_accuracy: mean(&accs),
        random_baseline: baseline,
        proximity,
        tables: vec![table.clone()],
        tie_rule: "equal scores keep clip order".into(),
        provenance: cfg.provenance("evaluate", None),
    };
    create_out_dir(out)?;
    let path = eval_report_path(out, task);
    emit_report(&report, &[table], &path)?;
    Ok(path)
}

#[derive(Serialize)]
struct SynthFile {
    provenance: serde_json::Value,
    records: usize,
    classes: Vec<zsaudio::protocol::ClassInfo>,
}

pub fn synth(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<PathBuf> {
    create_out_dir(out)?;
    let corpus = generate_synthetic_corpus(&cfg.synth, seed, out)?;
    let path = out.join("synth.json");
    write_json(
        &path,
        &SynthFile {
            provenance: cfg.provenance("synth", Some(seed)),
            records: corpus.manifest.records.len(),
            classes: corpus.classes.classes,
        },
    )?;
    Ok(path)
}
