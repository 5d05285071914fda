//! One zero-shot run: pretrain on the training classes, fit the projection,
//! score the held-out classes.

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneConfig, EpochStats, PretrainConfig, PretrainState};
use crate::crossmodal::{train_projection, ProjectionConfig, ProjectionParams, SelectionReport, TrainConfig};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::eval::{average_precision, mean_ap, random_ap, top1_accuracy, ClassAp, MeanAp};
use crate::pipeline::{embed_clips, zero_shot_logits};
use crate::protocol::{ClassInfo, DatasetManifest, Split};
use crate::semantics::{embed_label, ClassDescriptor, ClassId, SemanticEmbedding, VectorStore};

/// Label embeddings for `classes`, in order.
pub fn embed_classes(classes: &[ClassInfo], store: &VectorStore) -> Result<Vec<SemanticEmbedding>> {
    classes
        .iter()
        .map(|c| embed_label(&ClassDescriptor::new(c.id.clone(), c.label.clone())?, store))
        .collect()
}

/// Drops training and validation clips tagged with any of `unseen`, so no
/// audio of a zero-shot class reaches either training phase. Test clips
/// are kept. Returns the kept records' spectrograms alongside.
pub fn hide_classes(
    manifest: &DatasetManifest,
    specs: &[MelSpectrogram],
    unseen: &[ClassId],
) -> Result<(DatasetManifest, Vec<MelSpectrogram>)> {
    let keep: Vec<usize> = (0..manifest.records.len())
        .filter(|&i| {
            let r = &manifest.records[i];
            r.split == Split::Test || !r.has_any(unseen)
        })
        .collect();
    let records = keep.iter().map(|&i| manifest.records[i].clone()).collect();
    let kept_specs = keep.iter().map(|&i| specs[i].clone()).collect();
    Ok((DatasetManifest::new(records, manifest.root.clone())?, kept_specs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotMetrics {
    pub per_class: Vec<ClassAp>,
    pub map: MeanAp,
    /// Mean prevalence over classes with positives.
    pub random_map: f64,
    /// Top-1 over clips carrying exactly one candidate tag; absent without such clips.
    pub accuracy: Option<f64>,
    pub n_accuracy_clips: usize,
}

/// Scores `clips` against `candidates`.
///
/// `embeddings` has one row per entry of `clips`. Tagging uses every clip;
/// accuracy uses clips whose tags contain exactly one candidate and
/// nothing outside the candidates.
pub fn evaluate_zero_shot(
    manifest: &DatasetManifest,
    clips: &[usize],
    embeddings: ArrayView2<'_, f32>,
    projection: &ProjectionParams<f32>,
    candidates: &[SemanticEmbedding],
) -> Result<ZeroShotMetrics> {
    if clips.is_empty() {
        return Err(Error::Data("zero-shot evaluation over an empty clip set".into()));
    }
    let logits = zero_shot_logits(projection, embeddings, candidates)?;
    let mut per_class = Vec::new();
    let mut aps = Vec::new();
    for (k, c) in candidates.iter().enumerate() {
        let labels: Vec<bool> = clips.iter().map(|&i| manifest.records[i].tags.contains(&c.class)).collect();
        let scores: Vec<f64> = logits.column(k).to_vec();
        let ap = average_precision(&scores, &labels)?;
        aps.push(ap);
        if let (Some(ap), Some(rnd)) = (ap, random_ap(&labels)) {
            per_class.push(ClassAp {
                class: c.class.clone(),
                ap,
                random_ap: rnd,
            });
        }
    }
    let map = mean_ap(&aps)?;
    let random_map = per_class.iter().map(|c| c.random_ap).sum::<f64>() / per_class.len() as f64;

    let ids: Vec<ClassId> = candidates.iter().map(|c| c.class.clone()).collect();
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (row, &i) in clips.iter().enumerate() {
        let tags = &manifest.records[i].tags;
        if tags.len() != 1 || !ids.contains(&tags[0]) {
            continue;
        }
        let scores: Vec<f64> = logits.row(row).to_vec();
        preds.push(crate::crossmodal::argmax_class(&scores, candidates)?);
        truths.push(tags[0].clone());
    }
    let accuracy = if truths.is_empty() {
        None
    } else {
        Some(top1_accuracy(&preds, &truths, Some(&ids))?)
    };
    Ok(ZeroShotMetrics {
        per_class,
        map,
        random_map,
        accuracy,
        n_accuracy_clips: truths.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSettings {
    pub backbone: BackboneConfig,
    pub pretrain: PretrainConfig,
    pub projection_train: TrainConfig,
    pub projection: ProjectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRun {
    pub seed: u64,
    pub pretrain_history: Vec<EpochStats>,
    pub selection: SelectionReport,
    pub metrics: ZeroShotMetrics,
}

/// Full run for one seed. `train` classes drive both training phases;
/// `test` classes are evaluated on the test split and hidden from training.
pub fn run_zero_shot(
    manifest: &DatasetManifest,
    specs: &[MelSpectrogram],
    train: &[ClassInfo],
    test: &[ClassInfo],
    store: &VectorStore,
    settings: &ZeroShotSettings,
    seed: u64,
) -> Result<ZeroShotRun> {
    let test_ids: Vec<ClassId> = test.iter().map(|c| c.id.clone()).collect();
    let train_ids: Vec<ClassId> = train.iter().map(|c| c.id.clone()).collect();
    if let Some(c) = train_ids.iter().find(|c| test_ids.contains(c)) {
        return Err(Error::Config(format!("class `{c}` is both a training and a test class")));
    }
    let (seen, seen_specs) = hide_classes(manifest, specs, &test_ids)?;

    let mut pre = settings.pretrain.clone();
    pre.train.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backbone = settings.backbone.build::<f32, _>(&mut rng)?;
    let mut state = PretrainState::new(backbone, train_ids, &mut rng)?;
    crate::backbones::pretrain_backbone(&mut state, &seen, &seen_specs, &pre)?;
    let backbone = state.model.backbone;

    let all: Vec<usize> = (0..seen.records.len()).collect();
    let emb = embed_clips(&backbone, &seen_specs, &all)?;
    let train_emb = embed_classes(train, store)?;
    let mut ptc = settings.projection_train.clone();
    ptc.seed = seed;
    let (projection, selection) = train_projection(&seen, emb.view(), &train_emb, &ptc, &settings.projection)?;

    let test_clips = seen.indices(Split::Test);
    let test_emb = embed_classes(test, store)?;
    let metrics = evaluate_zero_shot(
        &seen,
        &test_clips,
        emb.select(ndarray::Axis(0), &test_clips).view(),
        &projection,
        &test_emb,
    )?;
    Ok(ZeroShotRun {
        seed,
        pretrain_history: state.history,
        selection,
        metrics,
    })
}
