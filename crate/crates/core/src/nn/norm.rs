//! Layer normalization over the feature axis of row vectors.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::Real;
use crate::impl_params;

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

impl_params!(LayerNorm { gamma, beta });

/// Values saved by [`LayerNorm::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> (Array2<T>, LayerNormCache<T>) {
        let d = T::of(x.ncols() as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            *inv = T::one() / (var + eps).sqrt();
            let s = *inv;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<T>,
        dy: ArrayView2<'_, T>,
        grad: &mut LayerNorm<T>,
    ) -> Array2<T> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = T::of(dy.ncols() as f64);
        let dxhat = &dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((dxh, xh), &inv), mut out) in dxhat
            .axis_iter(Axis(0))
            .zip(cache.xhat.axis_iter(Axis(0)))
            .zip(cache.inv_std.iter())
            .zip(dx.axis_iter_mut(Axis(0)))
        {
            let sum_d = dxh.sum();
            let sum_dx = dxh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
            for ((o, &g), &h) in out.iter_mut().zip(dxh.iter()).zip(xh.iter()) {
                *o = inv * (g - sum_d / d - h * sum_dx / d);
            }
        }
        dx
    }
}
