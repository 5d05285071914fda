use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, bce_with_grad, lr_at, OptimizerState, TrainConfig};
use super::projection::{label_matrix, ProjectionConfig, ProjectionParams};
use crate::error::{Error, Result};
use crate::eval::{average_precision, mean_ap};
use crate::nn::{zeros_like, Mode};
use crate::protocol::{BalancedSampler, DatasetManifest, Split};
use crate::semantics::{ClassId, SemanticEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub train_classes: Vec<ClassId>,
    pub val_classes: Vec<ClassId>,
    pub epochs: Vec<ProjectionEpoch>,
    /// 1-based epoch whose parameters were kept.
    pub chosen_epoch: usize,
    pub best_val_map: f64,
}

/// Splits `classes` into (loss classes, validation classes). The
/// validation count is `round(fraction * |classes|)`, at least one, drawn
/// by `seed`.
pub fn hold_out_classes(
    classes: &[SemanticEmbedding],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SemanticEmbedding>, Vec<SemanticEmbedding>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("val_class_fraction {fraction} must lie in (0, 1)")));
    }
    let k = ((fraction * classes.len() as f64).round() as usize).max(1);
    if k >= classes.len() {
        return Err(Error::Config("validation classes would leave no training class".into()));
    }
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c5f_636c));
    let mut is_val = vec![false; classes.len()];
    for &i in &order[..k] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = classes.iter().cloned().zip(is_val).partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(c, _)| c).collect(),
        val.into_iter().map(|(c, _)| c).collect(),
    ))
}

/// Per-class AP (`None` when skipped) of eval-mode scores for `clips`.
pub fn class_aps(
    p: &ProjectionParams<f32>,
    embeddings: ArrayView2<'_, f32>,
    manifest: &DatasetManifest,
    clips: &[usize],
    classes: &[SemanticEmbedding],
) -> Result<Vec<Option<f64>>> {
    let e = label_matrix::<f32>(classes)?;
    let a = embeddings.select(Axis(0), clips);
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let (z, _) = p.forward(a.view(), Mode::Eval, &mut rng)?;
    let logits = z.dot(&e.t());
    classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let scores: Vec<f64> = logits.column(k).iter().map(|&v| v as f64).collect();
            let labels: Vec<bool> = clips.iter().map(|&i| manifest.records[i].tags.contains(&c.class)).collect();
            average_precision(&scores, &labels)
        })
        .collect()
}

/// Trains the projection on frozen audio embeddings.
///
/// `embeddings` holds one row per manifest record. A fraction of the
/// training classes is held out for model selection: those classes get no
/// logits during training, and after every epoch the validation-split mAP
/// over them decides which parameters are kept (earliest epoch on ties).
pub fn train_projection(
    manifest: &DatasetManifest,
    embeddings: ArrayView2<'_, f32>,
    classes: &[SemanticEmbedding],
    cfg: &TrainConfig,
    proj: &ProjectionConfig,
) -> Result<(ProjectionParams<f32>, SelectionReport)> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::Config("projection training needs at least one epoch".into()));
    }
    if embeddings.nrows() != manifest.records.len() {
        return Err(Error::dim("embedding rows", manifest.records.len(), embeddings.nrows()));
    }
    let (loss_classes, val_classes) = hold_out_classes(classes, cfg.val_class_fraction, cfg.seed)?;
    let loss_ids: Vec<ClassId> = loss_classes.iter().map(|c| c.class.clone()).collect();
    let e = label_matrix::<f32>(&loss_classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ProjectionParams::new(&mut rng, embeddings.ncols(), e.ncols(), proj)?;
    let train_idx = manifest.indices(Split::Train);
    params.fit_normalizer(embeddings.select(Axis(0), &train_idx).view())?;

    let eligible = train_idx
        .iter()
        .filter(|&&i| manifest.records[i].has_any(&loss_ids))
        .count();
    let steps = eligible.div_ceil(cfg.batch_size).max(1);
    let val_clips = manifest.indices(Split::Val);
    if val_clips.is_empty() {
        return Err(Error::Data("manifest has no validation clips".into()));
    }

    let mut sampler = BalancedSampler::new(manifest, &loss_ids, Split::Train, cfg.seed)?;
    let mut state = OptimizerState::new();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ProjectionParams<f32>)> = None;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for step in 0..steps {
            let batch: Vec<usize> = sampler.by_ref().take(cfg.batch_size).collect();
            let a = embeddings.select(Axis(0), &batch);
            let targets = Array2::from_shape_fn((batch.len(), loss_ids.len()), |(b, c)| {
                if manifest.records[batch[b]].tags.contains(&loss_ids[c]) {
                    1.0f32
                } else {
                    0.0
                }
            });
            let (z, cache) = params.forward(a.view(), Mode::Train, &mut dropout_rng)?;
            let logits = z.dot(&e.t());
            let (loss, dlogits) = bce_with_grad(logits.view(), targets.view())?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    detail: format!("projection loss {loss} at step {step}"),
                });
            }
            total += loss as f64;
            let dz = dlogits.dot(&e);
            let mut grad = zeros_like(&params);
            params.backward(&cache, dz.view(), &mut grad);
            let lr = lr_at(epoch as f64 + step as f64 / steps as f64, cfg);
            adamw_step(&mut params, &grad, &mut state, lr, cfg)?;
        }
        let aps = class_aps(&params, embeddings, manifest, &val_clips, &val_classes)?;
        let val_map = mean_ap(&aps)
            .map_err(|_| Error::Data("no validation class has a positive validation clip".into()))?
            .value;
        let loss = total / steps as f64;
        log::info!("projection epoch {}: loss {loss:.5}, val mAP {val_map:.4}", epoch + 1);
        history.push(ProjectionEpoch {
            epoch: epoch + 1,
            loss,
            val_map,
        });
        if best.as_ref().is_none_or(|(_, m, _)| val_map > *m) {
            best = Some((epoch + 1, val_map, params.clone()));
        }
    }
    let (chosen_epoch, best_val_map, params) = best.expect("at least one epoch");
    Ok((
        params,
        SelectionReport {
            train_classes: loss_ids,
            val_classes: val_classes.iter().map(|c| c.class.clone()).collect(),
            epochs: history,
            chosen_epoch,
            best_val_map,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn emb(i: usize, n: usize) -> SemanticEmbedding {
        let mut v = Array1::zeros(n);
        v[i % n] = 1.0;
        SemanticEmbedding {
            class: ClassId(format!("k{i}")),
            vector: v,
            oov: vec![],
        }
    }

    #[test]
    fn hold_out_sizes() {
        let classes: Vec<_> = (0..20).map(|i| emb(i, 4)).collect();
        let (t, v) = hold_out_classes(&classes, 0.1, 0).unwrap();
        assert_eq!((t.len(), v.len()), (18, 2));
        let (t2, v2) = hold_out_classes(&classes, 0.1, 0).unwrap();
        assert_eq!((t, v), (t2, v2));
        let (t, v) = hold_out_classes(&classes[..4], 0.1, 0).unwrap();
        assert_eq!((t.len(), v.len()), (3, 1));
        assert!(matches!(hold_out_classes(&classes[..1], 0.1, 0), Err(Error::Config(_))));
        assert!(hold_out_classes(&classes[..4], 1.0, 0).is_err());
        assert!(hold_out_classes(&classes[..4], 0.0, 0).is_err());
    }
}
