use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{gelu, gelu_grad, sigmoid};
use crate::nn::{join_name, Linear, Mode, Params, Real, Visit, VisitMut};
use crate::semantics::{ClassId, SemanticEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            hidden: 1024,
            dropout: 0.2,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("projection: hidden > 0 and dropout in [0, 1) required".into()));
        }
        Ok(())
    }
}

/// `pi(a) = W2 drop(GELU(W1 (a - mean) / std + b1)) + b2`.
///
/// The normalizer is fixed before training and stored as buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams<T> {
    pub mean: Array1<T>,
    pub std: Array1<T>,
    pub hidden: Linear<T>,
    pub output: Linear<T>,
    pub dropout: f64,
}

impl<T: Real> Params<T> for ProjectionParams<T> {
    fn for_each(&self, prefix: &str, f: &mut Visit<'_, T>) {
        self.hidden.for_each(&join_name(prefix, "hidden"), f);
        self.output.for_each(&join_name(prefix, "output"), f);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        self.hidden.for_each_mut(&join_name(prefix, "hidden"), f);
        self.output.for_each_mut(&join_name(prefix, "output"), f);
    }
    fn for_each_buffer(&self, prefix: &str, f: &mut Visit<'_, T>) {
        self.mean.for_each(&join_name(prefix, "mean"), f);
        self.std.for_each(&join_name(prefix, "std"), f);
    }
    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        self.mean.for_each_mut(&join_name(prefix, "mean"), f);
        self.std.for_each_mut(&join_name(prefix, "std"), f);
    }
}

pub struct ProjectionCache<T> {
    z: Array2<T>,
    pre: Array2<T>,
    mask: Option<Array2<T>>,
    h: Array2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub logit: f64,
    pub probability: f64,
}

/// Floor applied to per-dimension standard deviations.
pub const MIN_STD: f64 = 1e-6;

impl<T: Real> ProjectionParams<T> {
    /// Identity normalizer and fan-in initialized layers.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize, cfg: &ProjectionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ProjectionParams {
            mean: Array1::zeros(in_dim),
            std: Array1::ones(in_dim),
            hidden: Linear::new(rng, in_dim, cfg.hidden),
            output: Linear::new(rng, cfg.hidden, out_dim),
            dropout: cfg.dropout,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim()
    }

    /// Sets the normalizer to the per-dimension mean and standard deviation
    /// of `embeddings` (rows are clips).
    pub fn fit_normalizer(&mut self, embeddings: ArrayView2<'_, T>) -> Result<()> {
        if embeddings.ncols() != self.in_dim() {
            return Err(Error::dim("normalizer input", self.in_dim(), embeddings.ncols()));
        }
        if embeddings.nrows() == 0 {
            return Err(Error::Data("normalizer fitted on zero embeddings".into()));
        }
        let mean = embeddings.mean_axis(Axis(0)).expect("non-empty");
        let var = embeddings.var_axis(Axis(0), T::zero());
        self.std = var.mapv(|v| v.sqrt().max(T::of(MIN_STD)));
        self.mean = mean;
        Ok(())
    }

    /// Projects a batch of audio embeddings (`batch x m`) to the semantic space.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        a: ArrayView2<'_, T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<T>, ProjectionCache<T>)> {
        if a.ncols() != self.in_dim() {
            return Err(Error::dim("projection input", self.in_dim(), a.ncols()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection input".into()));
        }
        let z = (&a - &self.mean) / &self.std;
        let pre = self.hidden.forward(z.view());
        let mut h = pre.mapv(gelu);
        let mask = if mode == Mode::Train && self.dropout > 0.0 {
            let keep = T::of(1.0 / (1.0 - self.dropout));
            let m = Array2::from_shape_fn(h.raw_dim(), |_| {
                if rng.gen::<f64>() < self.dropout {
                    T::zero()
                } else {
                    keep
                }
            });
            h *= &m;
            Some(m)
        } else {
            None
        };
        let out = self.output.forward(h.view());
        Ok((out, ProjectionCache { z, pre, mask, h }))
    }

    /// Deterministic projection of one embedding.
    pub fn project(&self, a: ArrayView1<'_, T>) -> Result<Array1<T>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (out, _) = self.forward(a.insert_axis(Axis(0)), Mode::Eval, &mut rng)?;
        Ok(out.row(0).to_owned())
    }

    /// Accumulates parameter gradients and returns `dL/da`.
    pub fn backward(&self, cache: &ProjectionCache<T>, dout: ArrayView2<'_, T>, grad: &mut ProjectionParams<T>) -> Array2<T> {
        let mut dh = self.output.backward(cache.h.view(), dout, &mut grad.output);
        if let Some(m) = &cache.mask {
            dh *= m;
        }
        let dpre = &dh * &cache.pre.mapv(gelu_grad);
        let dz = self.hidden.backward(cache.z.view(), dpre.view(), &mut grad.hidden);
        dz / &self.std
    }
}

/// Stacks label embeddings into a `classes x n` matrix.
pub fn label_matrix<T: Real>(labels: &[SemanticEmbedding]) -> Result<Array2<T>> {
    let n = labels.first().map(|e| e.vector.len()).unwrap_or(0);
    let mut out = Array2::zeros((labels.len(), n));
    for (i, e) in labels.iter().enumerate() {
        if e.vector.len() != n {
            return Err(Error::dim("label embedding", n, e.vector.len()));
        }
        out.row_mut(i).assign(&e.vector.mapv(|v| T::of(v as f64)));
    }
    Ok(out)
}

/// Eval-mode logit and posterior of one class for one clip.
pub fn score<T: Real>(a: ArrayView1<'_, T>, e: &SemanticEmbedding, p: &ProjectionParams<T>) -> Result<ScorePair> {
    if e.vector.len() != p.out_dim() {
        return Err(Error::dim("label embedding", p.out_dim(), e.vector.len()));
    }
    let z = p.project(a)?;
    let logit: f64 = z.iter().zip(e.vector.iter()).map(|(&x, &y)| x.f64() * y as f64).sum();
    Ok(ScorePair {
        logit,
        probability: sigmoid(logit),
    })
}

/// Highest-scoring candidate; equal logits go to the lowest class id.
pub fn classify<T: Real>(a: ArrayView1<'_, T>, candidates: &[SemanticEmbedding], p: &ProjectionParams<T>) -> Result<ClassId> {
    let logits = candidates
        .iter()
        .map(|c| score(a, c, p).map(|s| s.logit))
        .collect::<Result<Vec<_>>>()?;
    argmax_class(&logits, candidates)
}

/// Index-aligned argmax over `logits`, ties to the lowest class id.
pub fn argmax_class(logits: &[f64], candidates: &[SemanticEmbedding]) -> Result<ClassId> {
    let mut best: Option<(f64, &ClassId)> = None;
    for (l, c) in logits.iter().zip(candidates) {
        best = match best {
            Some((bl, bid)) if bl > *l || (bl == *l && bid < &c.class) => Some((bl, bid)),
            _ => Some((*l, &c.class)),
        };
    }
    best.map(|(_, id)| id.clone())
        .ok_or_else(|| Error::Data("classification over an empty candidate set".into()))
}
