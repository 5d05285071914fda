//! Supervised pretraining of a backbone with a linear classification head.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, ClassifierHead, PatchoutConfig};
use crate::crossmodal::optim::{adamw_step, bce_with_grad, lr_at, OptimizerState, TrainConfig};
use crate::dsp::augment::{apply_spec_augmentations, sample_mixup_lambda, AugmentConfig};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::impl_params;
use crate::nn::{zeros_like, Real};
use crate::protocol::{stable_hash, BalancedSampler, DatasetManifest, Split};
use crate::semantics::ClassId;

/// Backbone plus classification head, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainModel<T> {
    pub backbone: Backbone<T>,
    pub head: ClassifierHead<T>,
}

impl_params!(PretrainModel { backbone, head });

impl<T: Real> PretrainModel<T> {
    /// Head logits for a batch in training mode; returns caches for backward.
    fn forward_train(
        &mut self,
        xs: &[ArrayView2<'_, T>],
        seeds: &[u64],
        patchout: &PatchoutConfig,
    ) -> Result<(Array2<T>, Array2<T>, super::BackboneCache<T>)> {
        let (emb, cache) = self.backbone.forward_train(xs, seeds, patchout)?;
        let logits = self.head.linear.forward(emb.view());
        Ok((logits, emb, cache))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub patchout: PatchoutConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone)]
pub struct PretrainState {
    pub model: PretrainModel<f32>,
    pub optimizer: OptimizerState<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub classes: Vec<ClassId>,
}

impl PretrainState {
    pub fn new<R: Rng + ?Sized>(backbone: Backbone<f32>, classes: Vec<ClassId>, rng: &mut R) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("pretraining needs at least one class".into()));
        }
        let head = ClassifierHead::new(rng, backbone.embed_dim(), classes.len());
        Ok(PretrainState {
            model: PretrainModel { backbone, head },
            optimizer: OptimizerState::new(),
            epoch: 0,
            history: Vec::new(),
            classes,
        })
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ stable_hash(&(epoch as u64).to_le_bytes())
}

/// Runs epochs `state.epoch .. cfg.train.epochs`.
///
/// `spectrograms` is aligned with `manifest.records`; only training-split
/// clips tagged with one of `state.classes` are read. Every epoch reseeds
/// its sampler and augmentation generator from `(seed, epoch)`, so a
/// resumed run matches an uninterrupted one.
pub fn pretrain_backbone(
    state: &mut PretrainState,
    manifest: &DatasetManifest,
    spectrograms: &[MelSpectrogram],
    cfg: &PretrainConfig,
) -> Result<()> {
    cfg.validate()?;
    if spectrograms.len() != manifest.records.len() {
        return Err(Error::dim("spectrograms", manifest.records.len(), spectrograms.len()));
    }
    let classes = state.classes.clone();
    if state.model.head.n_classes() != classes.len() {
        return Err(Error::dim("head classes", classes.len(), state.model.head.n_classes()));
    }
    let train = manifest.indices(Split::Train);
    let eligible = train.iter().filter(|&&i| manifest.records[i].has_any(&classes)).count();
    if eligible == 0 {
        return Err(Error::Data("no training clip is tagged with a pretraining class".into()));
    }
    for c in &classes {
        if !train.iter().any(|&i| manifest.records[i].tags.contains(c)) {
            return Err(Error::EmptyClass(c.to_string()));
        }
    }
    let tc = &cfg.train;
    let steps = eligible.div_ceil(tc.batch_size).max(1);

    while state.epoch < tc.epochs {
        let epoch = state.epoch;
        let seed = epoch_seed(tc.seed, epoch);
        let mut sampler = BalancedSampler::new(manifest, &classes, Split::Train, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0f64;
        for step in 0..steps {
            let batch: Vec<usize> = sampler.by_ref().take(tc.batch_size).collect();
            let (xs, targets) = assemble_batch(manifest, spectrograms, &batch, &classes, &cfg.augment, &mut rng)?;
            let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
            let (logits, emb, cache) = state.model.forward_train(&views, &seeds, &cfg.patchout)?;
            let (loss, dlogits) = bce_with_grad(logits.view(), targets.view())?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    detail: format!("training loss {loss} at step {step}"),
                });
            }
            total += loss as f64;
            let mut grad = zeros_like(&state.model);
            let demb = state
                .model
                .head
                .linear
                .backward(emb.view(), dlogits.view(), &mut grad.head.linear);
            state.model.backbone.backward(&cache, demb.view(), &mut grad.backbone);
            let lr = lr_at(epoch as f64 + step as f64 / steps as f64, tc);
            adamw_step(&mut state.model, &grad, &mut state.optimizer, lr, tc).map_err(|e| match e {
                Error::NonFinite(d) => Error::Diverged {
                    epoch: epoch + 1,
                    detail: d,
                },
                other => other,
            })?;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: total / steps as f64,
            lr: lr_at(epoch as f64, tc),
        };
        log::info!("pretrain epoch {}: loss {:.5}, lr {:.3e}", stats.epoch, stats.loss, stats.lr);
        state.history.push(stats);
        state.epoch += 1;
    }
    Ok(())
}

/// Augments each clip, then mixes the batch with its own reversal using one
/// Beta-drawn weight.
fn assemble_batch<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    spectrograms: &[MelSpectrogram],
    batch: &[usize],
    classes: &[ClassId],
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<Array2<f32>>, Array2<f32>)> {
    let mut xs = Vec::with_capacity(batch.len());
    for &i in batch {
        xs.push(apply_spec_augmentations(&spectrograms[i], aug, rng)?.values);
    }
    let mut targets = Array2::<f32>::zeros((batch.len(), classes.len()));
    for (b, &i) in batch.iter().enumerate() {
        let row = manifest.records[i].targets(classes);
        targets.row_mut(b).assign(&ndarray::Array1::from(row));
    }
    if aug.mixup && batch.len() > 1 {
        let shape = xs[0].dim();
        if xs.iter().any(|x| x.dim() != shape) {
            return Err(Error::shape("mixup needs equally sized spectrograms in a batch".to_string()));
        }
        let lambda = sample_mixup_lambda(aug.mixup_alpha, rng) as f32;
        let n = xs.len();
        let mixed: Vec<Array2<f32>> = (0..n).map(|b| &xs[b] * lambda + &xs[n - 1 - b] * (1.0 - lambda)).collect();
        let mut mixed_t = targets.clone();
        for b in 0..n {
            let flipped = targets.row(n - 1 - b).to_owned();
            let mut row = mixed_t.row_mut(b);
            row *= lambda;
            row.scaled_add(1.0 - lambda, &flipped);
        }
        return Ok((mixed, mixed_t));
    }
    Ok((xs, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::{BackboneConfig, BackboneKind};
    use crate::dsp::MelConfig;
    use crate::nn::flatten;
    use crate::protocol::{ClipRecord, DatasetManifest};
    use ndarray::Array2;

    fn toy_corpus() -> (DatasetManifest, Vec<MelSpectrogram>, Vec<ClassId>) {
        let classes: Vec<ClassId> = (0..4).map(|c| ClassId(format!("c{c}"))).collect();
        let mut records = Vec::new();
        let mut specs = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (c, id) in classes.iter().enumerate() {
            for k in 0..8 {
                records.push(ClipRecord {
                    id: format!("{id}_{k}"),
                    path: format!("{id}_{k}.wav"),
                    tags: vec![id.clone()],
                    split: Split::Train,
                });
                let v = Array2::from_shape_fn((32, 48), |(f, _)| {
                    let band = f / 8 == c;
                    (if band { 2.0 } else { -1.0 }) + rng.gen_range(-0.3..0.3)
                });
                specs.push(MelSpectrogram {
                    values: v,
                    config: MelConfig::toy(),
                });
            }
        }
        (DatasetManifest::new(records, ".").unwrap(), specs, classes)
    }

    fn cfg(epochs: usize) -> PretrainConfig {
        let mut train = TrainConfig::pretrain_toy();
        train.epochs = epochs;
        train.batch_size = 8;
        PretrainConfig {
            train,
            augment: AugmentConfig::none(),
            patchout: PatchoutConfig::toy(),
        }
    }

    fn state(classes: &[ClassId]) -> PretrainState {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let backbone = BackboneConfig::toy(BackboneKind::Transformer).build(&mut rng).unwrap();
        PretrainState::new(backbone, classes.to_vec(), &mut rng).unwrap()
    }

    #[test]
    fn loss_falls_on_separable_corpus() {
        let (m, specs, classes) = toy_corpus();
        let mut s = state(&classes);
        pretrain_backbone(&mut s, &m, &specs, &cfg(8)).unwrap();
        let h = &s.history;
        assert_eq!(h.len(), 8);
        assert!(h.last().unwrap().loss < h[0].loss, "{h:?}");
    }

    #[test]
    fn zero_epochs_leaves_params_unchanged() {
        let (m, specs, classes) = toy_corpus();
        let mut s = state(&classes);
        let before = flatten(&s.model);
        pretrain_backbone(&mut s, &m, &specs, &cfg(0)).unwrap();
        assert_eq!(flatten(&s.model), before);
        assert!(s.history.is_empty());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (m, specs, classes) = toy_corpus();
        let mut full = state(&classes);
        pretrain_backbone(&mut full, &m, &specs, &cfg(3)).unwrap();
        let mut split = state(&classes);
        pretrain_backbone(&mut split, &m, &specs, &cfg(1)).unwrap();
        pretrain_backbone(&mut split, &m, &specs, &cfg(3)).unwrap();
        assert_eq!(split.epoch, 3);
        assert_eq!(flatten(&split.model), flatten(&full.model));
        assert_eq!(split.history, full.history);
    }

    #[test]
    fn empty_class_set_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let backbone = BackboneConfig::toy(BackboneKind::Cnn14).build::<f32, _>(&mut rng).unwrap();
        assert!(matches!(PretrainState::new(backbone, vec![], &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn class_without_clips_is_rejected() {
        let (m, specs, mut classes) = toy_corpus();
        classes.push(ClassId::new("ghost"));
        let mut s = state(&classes);
        assert!(matches!(
            pretrain_backbone(&mut s, &m, &specs, &cfg(1)),
            Err(Error::EmptyClass(_))
        ));
    }
}
