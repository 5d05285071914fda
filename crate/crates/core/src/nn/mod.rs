//! Minimal neural-network building blocks with hand-written backward passes.
//!
//! Every layer is generic over [`Real`] so that the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks. Layers
//! follow one pattern: `forward` returns the output together with a cache,
//! `backward` consumes the cache and the upstream gradient, accumulates
//! parameter gradients into a structure of the same type as the parameters,
//! and returns the gradient with respect to the input.
//!
//! Trainable tensors are exposed through the [`Params`] visitor, which gives
//! each tensor a stable dotted name. The optimizer, the checkpoint writer and
//! the gradient checks all walk parameters in that order.

pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayBase, Dimension, LinalgScalar, OwnedRepr, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

pub use attention::MultiHeadAttention;
pub use conv::{BatchNorm2d, Conv2d};
pub use linear::Linear;
pub use norm::LayerNorm;

/// Whether stochastic layers (dropout, patchout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Floating-point scalar usable by every layer.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Callback receiving a tensor name, its shape and its contents.
pub type Visit<'a, T> = dyn FnMut(&str, &[usize], &[T]) + 'a;
/// Mutable counterpart of [`Visit`].
pub type VisitMut<'a, T> = dyn FnMut(&str, &[usize], &mut [T]) + 'a;

/// Named access to the tensors of a model.
///
/// `for_each`/`for_each_mut` cover trainable parameters. Buffers (batch-norm
/// running statistics) are persisted in checkpoints but never touched by the
/// optimizer.
pub trait Params<T: Real> {
    fn for_each(&self, prefix: &str, f: &mut Visit<'_, T>);
    fn for_each_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>);
    fn for_each_buffer(&self, _prefix: &str, _f: &mut Visit<'_, T>) {}
    fn for_each_buffer_mut(&mut self, _prefix: &str, _f: &mut VisitMut<'_, T>) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Real, D: Dimension> Params<T> for ArrayBase<OwnedRepr<T>, D> {
    fn for_each(&self, prefix: &str, f: &mut Visit<'_, T>) {
        let slice = self
            .as_slice()
            .expect("parameter tensors are kept in standard layout");
        f(prefix, self.shape(), slice);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        let shape = self.shape().to_vec();
        let slice = self
            .as_slice_mut()
            .expect("parameter tensors are kept in standard layout");
        f(prefix, &shape, slice);
    }
}

impl<T: Real, P: Params<T>> Params<T> for Vec<P> {
    fn for_each(&self, prefix: &str, f: &mut Visit<'_, T>) {
        for (i, p) in self.iter().enumerate() {
            p.for_each(&join(prefix, &i.to_string()), f);
        }
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.for_each_mut(&join(prefix, &i.to_string()), f);
        }
    }
    fn for_each_buffer(&self, prefix: &str, f: &mut Visit<'_, T>) {
        for (i, p) in self.iter().enumerate() {
            p.for_each_buffer(&join(prefix, &i.to_string()), f);
        }
    }
    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.for_each_buffer_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Implements [`Params`] for a struct by delegating to each listed field in order.
#[macro_export]
macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::nn::Real> $crate::nn::Params<T> for $ty<T> {
            fn for_each(&self, prefix: &str, f: &mut $crate::nn::Visit<'_, T>) {
                $( $crate::nn::Params::for_each(&self.$field, &$crate::nn::join_name(prefix, stringify!($field)), f); )*
            }
            fn for_each_mut(&mut self, prefix: &str, f: &mut $crate::nn::VisitMut<'_, T>) {
                $( $crate::nn::Params::for_each_mut(&mut self.$field, &$crate::nn::join_name(prefix, stringify!($field)), f); )*
            }
            fn for_each_buffer(&self, prefix: &str, f: &mut $crate::nn::Visit<'_, T>) {
                $( $crate::nn::Params::for_each_buffer(&self.$field, &$crate::nn::join_name(prefix, stringify!($field)), f); )*
            }
            fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut $crate::nn::VisitMut<'_, T>) {
                $( $crate::nn::Params::for_each_buffer_mut(&mut self.$field, &$crate::nn::join_name(prefix, stringify!($field)), f); )*
            }
        }
    };
}

#[doc(hidden)]
pub fn join_name(prefix: &str, name: &str) -> String {
    join(prefix, name)
}

/// Total number of trainable scalars.
pub fn param_count<T: Real, P: Params<T> + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.for_each("", &mut |_, _, s| n += s.len());
    n
}

/// Trainable parameters concatenated in visit order.
pub fn flatten<T: Real, P: Params<T> + ?Sized>(p: &P) -> Vec<T> {
    let mut out = Vec::new();
    p.for_each("", &mut |_, _, s| out.extend_from_slice(s));
    out
}

/// Overwrites trainable parameters from a flat vector produced by [`flatten`].
pub fn unflatten<T: Real, P: Params<T> + ?Sized>(p: &mut P, flat: &[T]) {
    let mut offset = 0;
    p.for_each_mut("", &mut |_, _, s| {
        s.copy_from_slice(&flat[offset..offset + s.len()]);
        offset += s.len();
    });
    assert_eq!(offset, flat.len(), "flat parameter length mismatch");
}

/// Sets every trainable parameter and buffer to zero.
pub fn zero<T: Real, P: Params<T> + ?Sized>(p: &mut P) {
    p.for_each_mut("", &mut |_, _, s| s.fill(T::zero()));
    p.for_each_buffer_mut("", &mut |_, _, s| s.fill(T::zero()));
}

/// A zeroed copy of `p`, used as a gradient accumulator.
pub fn zeros_like<T: Real, P: Params<T> + Clone>(p: &P) -> P {
    let mut g = p.clone();
    zero(&mut g);
    g
}

/// `dst += src` over trainable parameters.
pub fn accumulate<T: Real, P: Params<T> + ?Sized>(dst: &mut P, src: &P) {
    let flat = flatten(src);
    let mut offset = 0;
    dst.for_each_mut("", &mut |_, _, s| {
        let n = s.len();
        for (d, &v) in s.iter_mut().zip(&flat[offset..offset + n]) {
            *d += v;
        }
        offset += n;
    });
}

/// Multiplies every trainable parameter by `factor`.
pub fn scale<T: Real, P: Params<T> + ?Sized>(p: &mut P, factor: T) {
    p.for_each_mut("", &mut |_, _, s| s.iter_mut().for_each(|v| *v *= factor));
}

/// Converts a model between scalar types by walking both visitors in step.
pub fn convert<A: Real, B: Real, PA: Params<A>, PB: Params<B>>(src: &PA, dst: &mut PB) {
    let mut values = Vec::new();
    src.for_each("", &mut |_, _, s| values.extend(s.iter().map(|v| v.f64())));
    let mut buffers = Vec::new();
    src.for_each_buffer("", &mut |_, _, s| buffers.extend(s.iter().map(|v| v.f64())));
    let mut i = 0;
    dst.for_each_mut("", &mut |_, _, s| {
        for d in s.iter_mut() {
            *d = B::of(values[i]);
            i += 1;
        }
    });
    let mut j = 0;
    dst.for_each_buffer_mut("", &mut |_, _, s| {
        for d in s.iter_mut() {
            *d = B::of(buffers[j]);
            j += 1;
        }
    });
}

/// Scaled uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, out: &mut [T]) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in out.iter_mut() {
        *v = T::of(rng.gen_range(-bound..bound));
    }
}

/// Small random normal-ish init used for tokens and positional tables.
pub fn uniform_scaled<T: Real, R: Rng + ?Sized>(rng: &mut R, bound: f64, out: &mut [T]) {
    for v in out.iter_mut() {
        *v = T::of(rng.gen_range(-bound..bound));
    }
}
