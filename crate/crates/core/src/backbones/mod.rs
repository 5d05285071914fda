//! Audio embedding backbones and supervised pretraining.

pub mod convnet;
pub mod pretrain;
pub mod transformer;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::impl_params;
use crate::nn::{Linear, Params, Real, Visit, VisitMut};

pub use convnet::{Cnn14Config, Cnn14Params, VggishConfig, VggishParams, VGGISH_FRAMES, VGGISH_MELS};
pub use pretrain::{pretrain_backbone, EpochStats, PretrainConfig, PretrainModel, PretrainState};
pub use transformer::{
    patchify, structured_patchout, Mode, PatchGrid, PatchoutConfig, TransformerConfig, TransformerParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Transformer,
    Cnn14,
    Vggish,
}

impl BackboneKind {
    pub fn tag(&self) -> &'static str {
        match self {
            BackboneKind::Transformer => "transformer",
            BackboneKind::Cnn14 => "cnn14",
            BackboneKind::Vggish => "vggish",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackboneConfig {
    Transformer(TransformerConfig),
    Cnn14(Cnn14Config),
    Vggish(VggishConfig),
}

impl BackboneConfig {
    pub fn kind(&self) -> BackboneKind {
        match self {
            BackboneConfig::Transformer(_) => BackboneKind::Transformer,
            BackboneConfig::Cnn14(_) => BackboneKind::Cnn14,
            BackboneConfig::Vggish(_) => BackboneKind::Vggish,
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            BackboneConfig::Transformer(c) => c.embed_dim,
            BackboneConfig::Cnn14(c) => c.embed_dim,
            BackboneConfig::Vggish(c) => c.embed_dim,
        }
    }

    pub fn full(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::Transformer => BackboneConfig::Transformer(TransformerConfig::full()),
            BackboneKind::Cnn14 => BackboneConfig::Cnn14(Cnn14Config::full()),
            BackboneKind::Vggish => BackboneConfig::Vggish(VggishConfig::full()),
        }
    }

    pub fn toy(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::Transformer => BackboneConfig::Transformer(TransformerConfig::toy()),
            BackboneKind::Cnn14 => BackboneConfig::Cnn14(Cnn14Config::toy()),
            BackboneKind::Vggish => BackboneConfig::Vggish(VggishConfig::toy()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackboneConfig::Transformer(c) => c.validate(),
            BackboneConfig::Cnn14(c) => c.validate(),
            BackboneConfig::Vggish(c) => c.validate(),
        }
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Backbone<T>> {
        Ok(match self {
            BackboneConfig::Transformer(c) => Backbone::Transformer(TransformerParams::new(rng, c.clone())?),
            BackboneConfig::Cnn14(c) => Backbone::Cnn14(Cnn14Params::new(rng, c.clone())?),
            BackboneConfig::Vggish(c) => Backbone::Vggish(VggishParams::new(rng, c.clone())?),
        })
    }
}

/// One of the three embedding models.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone<T> {
    Transformer(TransformerParams<T>),
    Cnn14(Cnn14Params<T>),
    Vggish(VggishParams<T>),
}

pub enum BackboneCache<T> {
    Transformer(Vec<transformer::TransformerCache<T>>),
    Cnn14(convnet::Cnn14Cache<T>),
    Vggish(convnet::VggishCache<T>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            Backbone::Transformer($m) => $body,
            Backbone::Cnn14($m) => $body,
            Backbone::Vggish($m) => $body,
        }
    };
}

impl<T: Real> Params<T> for Backbone<T> {
    fn for_each(&self, prefix: &str, f: &mut Visit<'_, T>) {
        dispatch!(self, m => m.for_each(prefix, f))
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        dispatch!(self, m => m.for_each_mut(prefix, f))
    }
    fn for_each_buffer(&self, prefix: &str, f: &mut Visit<'_, T>) {
        dispatch!(self, m => m.for_each_buffer(prefix, f))
    }
    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        dispatch!(self, m => m.for_each_buffer_mut(prefix, f))
    }
}

impl<T: Real> Backbone<T> {
    pub fn config(&self) -> BackboneConfig {
        match self {
            Backbone::Transformer(m) => BackboneConfig::Transformer(m.config.clone()),
            Backbone::Cnn14(m) => BackboneConfig::Cnn14(m.config.clone()),
            Backbone::Vggish(m) => BackboneConfig::Vggish(m.config.clone()),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        self.config().kind()
    }

    pub fn embed_dim(&self) -> usize {
        dispatch!(self, m => m.embed_dim())
    }

    /// Deterministic inference embedding of one `f x t` spectrogram.
    pub fn embed(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        match self {
            Backbone::Transformer(m) => {
                // eval mode never touches the generator
                let mut rng = rand::rngs::mock::StepRng::new(0, 0);
                m.embed(x, &PatchoutConfig::eval(), &mut rng)
            }
            Backbone::Cnn14(m) => m.embed(x),
            Backbone::Vggish(m) => m.embed(x),
        }
    }

    /// Training forward over a batch. `seeds` drive per-sample patchout;
    /// convnets use batch statistics in their normalization layers.
    pub fn forward_train(
        &mut self,
        xs: &[ArrayView2<'_, T>],
        seeds: &[u64],
        patchout: &PatchoutConfig,
    ) -> Result<(Array2<T>, BackboneCache<T>)> {
        Ok(match self {
            Backbone::Transformer(m) => {
                let (e, c) = m.forward_batch(xs, seeds, &patchout.with_mode(Mode::Train))?;
                (e, BackboneCache::Transformer(c))
            }
            Backbone::Cnn14(m) => {
                let (e, c) = m.forward_train(xs)?;
                (e, BackboneCache::Cnn14(c))
            }
            Backbone::Vggish(m) => {
                let (e, c) = m.forward_train(xs)?;
                (e, BackboneCache::Vggish(c))
            }
        })
    }

    pub fn backward(&self, cache: &BackboneCache<T>, demb: ArrayView2<'_, T>, grad: &mut Backbone<T>) {
        match (self, cache, grad) {
            (Backbone::Transformer(m), BackboneCache::Transformer(c), Backbone::Transformer(g)) => {
                m.backward_batch(c, demb, g)
            }
            (Backbone::Cnn14(m), BackboneCache::Cnn14(c), Backbone::Cnn14(g)) => m.backward(c, demb, g),
            (Backbone::Vggish(m), BackboneCache::Vggish(c), Backbone::Vggish(g)) => m.backward(c, demb, g),
            _ => panic!("backbone, cache and gradient kinds differ"),
        }
    }
}

/// Linear classification head over the training classes used for pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub linear: Linear<T>,
}

impl_params!(ClassifierHead { linear });

impl<T: Real> ClassifierHead<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, embed_dim: usize, n_classes: usize) -> Self {
        ClassifierHead {
            linear: Linear::new(rng, embed_dim, n_classes),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.linear.out_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_backbone_emits_embed_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [BackboneKind::Transformer, BackboneKind::Cnn14, BackboneKind::Vggish] {
            let b: Backbone<f32> = BackboneConfig::toy(kind).build(&mut rng).unwrap();
            let shapes: &[(usize, usize)] = match kind {
                BackboneKind::Vggish => &[(64, 96), (64, 200)],
                _ => &[(32, 48), (32, 100)],
            };
            for &s in shapes {
                let e = b.embed(Array2::zeros(s).view()).unwrap();
                assert_eq!(e.len(), b.embed_dim());
                assert!(e.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn full_presets_emit_768() {
        for kind in [BackboneKind::Transformer, BackboneKind::Cnn14, BackboneKind::Vggish] {
            assert_eq!(BackboneConfig::full(kind).embed_dim(), 768);
        }
    }

    #[test]
    fn config_serializes_with_kind_tag() {
        let c = BackboneConfig::toy(BackboneKind::Cnn14);
        let j = serde_json::to_value(&c).unwrap();
        assert_eq!(j["kind"], "cnn14");
        let back: BackboneConfig = serde_json::from_value(j).unwrap();
        assert_eq!(back, c);
    }
}
