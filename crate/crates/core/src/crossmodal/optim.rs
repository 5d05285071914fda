use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::sigmoid;
use crate::nn::{Params, Real};

/// Optimizer, schedule and run-length settings for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub warmup_epochs: f64,
    pub decay_start_epoch: f64,
    pub decay_end_epoch: f64,
    pub final_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub val_class_fraction: f64,
}

impl TrainConfig {
    /// Backbone pretraining: 130 epochs, batch 24 (transformer) or 32 (convnets).
    pub fn pretrain_full(batch_size: usize) -> Self {
        TrainConfig {
            initial_lr: 2e-5,
            warmup_epochs: 5.0,
            decay_start_epoch: 50.0,
            decay_end_epoch: 100.0,
            final_lr: 1e-7,
            epochs: 130,
            batch_size,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            seed: 0,
            val_class_fraction: 0.1,
        }
    }

    /// Projection training: ten epochs at the reset initial rate.
    pub fn projection_full(batch_size: usize) -> Self {
        TrainConfig {
            warmup_epochs: 0.0,
            decay_start_epoch: 10.0,
            decay_end_epoch: 20.0,
            epochs: 10,
            ..Self::pretrain_full(batch_size)
        }
    }

    pub fn pretrain_toy() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            warmup_epochs: 2.0,
            decay_start_epoch: 15.0,
            decay_end_epoch: 30.0,
            final_lr: 1e-5,
            epochs: 30,
            batch_size: 16,
            ..Self::pretrain_full(16)
        }
    }

    pub fn projection_toy() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            warmup_epochs: 0.0,
            decay_start_epoch: 5.0,
            decay_end_epoch: 10.0,
            final_lr: 1e-4,
            epochs: 10,
            batch_size: 16,
            ..Self::pretrain_full(16)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.initial_lr > 0.0 && self.final_lr > 0.0 && self.final_lr <= self.initial_lr) {
            return bad(format!(
                "need 0 < final_lr ({}) <= initial_lr ({})",
                self.final_lr, self.initial_lr
            ));
        }
        if !(0.0 <= self.warmup_epochs
            && self.warmup_epochs <= self.decay_start_epoch
            && self.decay_start_epoch < self.decay_end_epoch)
        {
            return bad("need 0 <= warmup_epochs <= decay_start_epoch < decay_end_epoch".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if self.epsilon < 0.0 || self.weight_decay < 0.0 {
            return bad("epsilon and weight_decay must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.val_class_fraction) {
            return bad("val_class_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Learning rate at a (fractional) epoch: geometric warmup from
/// `initial_lr / 100`, plateau, linear decay to `final_lr`, then constant.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> f64 {
    let lr0 = cfg.initial_lr;
    if epoch < cfg.warmup_epochs {
        lr0 * 100f64.powf(epoch / cfg.warmup_epochs - 1.0)
    } else if epoch <= cfg.decay_start_epoch {
        lr0
    } else if epoch < cfg.decay_end_epoch {
        let frac = (epoch - cfg.decay_start_epoch) / (cfg.decay_end_epoch - cfg.decay_start_epoch);
        (1.0 - frac) * lr0 + frac * cfg.final_lr
    } else {
        cfg.final_lr
    }
}

/// First and second moments per tensor, in parameter visit order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState<T> {
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new() -> Self {
        OptimizerState {
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    fn ensure_shape<P: Params<T> + ?Sized>(&mut self, params: &P) -> Result<()> {
        let mut names = Vec::new();
        let mut lens = Vec::new();
        params.for_each("", &mut |n, _, s| {
            names.push(n.to_string());
            lens.push(s.len());
        });
        if self.names.is_empty() {
            self.m = lens.iter().map(|&l| vec![T::zero(); l]).collect();
            self.v = self.m.clone();
            self.names = names;
            return Ok(());
        }
        if self.names != names || self.m.iter().map(Vec::len).ne(lens.iter().copied()) {
            return Err(Error::shape("optimizer state does not match the parameters".to_string()));
        }
        Ok(())
    }
}

/// One decoupled-weight-decay Adam update of every trainable tensor.
pub fn adamw_step<T: Real, P: Params<T> + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut flat_grads: Vec<Vec<T>> = Vec::new();
    let mut bad = None;
    grads.for_each("", &mut |name, _, g| {
        if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
        flat_grads.push(g.to_vec());
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    state.ensure_shape(params)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = T::of(lr);
    let decay = lr * T::of(cfg.weight_decay);
    let eps = T::of(cfg.epsilon);
    let mut k = 0;
    let (ms, vs) = (&mut state.m, &mut state.v);
    params.for_each_mut("", &mut |_, _, theta| {
        let (m, v, g) = (&mut ms[k], &mut vs[k], &flat_grads[k]);
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] = theta[i] - decay * theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        k += 1;
    });
    Ok(())
}

/// `max(l, 0) - l*y + ln(1 + e^{-|l|})`, the stable form of sigmoid BCE.
#[inline]
pub fn bce_term<T: Real>(logit: T, target: T) -> T {
    logit.max(T::zero()) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over classes.
pub fn bce_loss<T: Real>(logits: &[T], targets: &[T]) -> Result<T> {
    if logits.len() != targets.len() {
        return Err(Error::dim("bce targets", logits.len(), targets.len()));
    }
    if logits.is_empty() {
        return Err(Error::Data("bce over zero classes".into()));
    }
    let sum: T = logits.iter().zip(targets).map(|(&l, &y)| bce_term(l, y)).sum();
    Ok(sum / T::of(logits.len() as f64))
}

/// Mean BCE over every entry of a `batch x classes` matrix and its gradient.
pub fn bce_with_grad<T: Real>(logits: ArrayView2<'_, T>, targets: ArrayView2<'_, T>) -> Result<(T, Array2<T>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::shape(format!(
            "bce logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    let scale = T::one() / T::of(logits.len().max(1) as f64);
    let mut loss = T::zero();
    let mut grad = Array2::zeros(logits.raw_dim());
    Zip::from(&mut grad)
        .and(&logits)
        .and(&targets)
        .for_each(|g, &l, &y| {
            loss += bce_term(l, y);
            *g = (sigmoid(l) - y) * scale;
        });
    Ok((loss * scale, grad))
}
