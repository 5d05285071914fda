//! Fully-connected layer acting on row vectors.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{uniform_fan_in, Real};
use crate::impl_params;

/// `y = x W^T + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl_params!(Linear { weight, bias });

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        let mut weight = Array2::zeros((out_dim, in_dim));
        let mut bias = Array1::zeros(out_dim);
        uniform_fan_in(rng, in_dim, weight.as_slice_mut().unwrap());
        uniform_fan_in(rng, in_dim, bias.as_slice_mut().unwrap());
        Linear { weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `x` is `n x in`; returns `n x out`.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, T>,
        dy: ArrayView2<'_, T>,
        grad: &mut Linear<T>,
    ) -> Array2<T> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    /// Parameter-only backward for layers whose input gradient is not needed.
    pub fn backward_params(&self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grad: &mut Linear<T>) {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, unflatten, zeros_like};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_computes_affine_map() {
        let layer = Linear {
            weight: array![[1.0, 2.0], [0.0, -1.0], [0.5, 0.5]],
            bias: array![0.0, 1.0, -1.0],
        };
        let y = layer.forward(array![[1.0, 1.0]].view());
        assert_eq!(y, array![[3.0, 0.0, 0.0]]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Linear::<f64>::new(&mut rng, 4, 3);
        let x = array![[0.1, -0.4, 0.9, 0.3], [1.0, 0.2, -0.5, 0.0]];
        let w = array![[0.3, -1.0, 0.2], [0.7, 0.1, -0.4]];
        let loss = |l: &Linear<f64>| (l.forward(x.view()) * &w).sum();

        let mut grad = zeros_like(&layer);
        layer.backward(x.view(), w.view(), &mut grad);
        let analytic = flatten(&grad);
        let base = flatten(&layer);
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-6;
            let mut lp = layer.clone();
            unflatten(&mut lp, &p);
            p[i] -= 2e-6;
            let mut lm = layer.clone();
            unflatten(&mut lm, &p);
            let fd = (loss(&lp) - loss(&lm)) / 2e-6;
            assert!((fd - analytic[i]).abs() < 1e-8);
        }
    }
}
