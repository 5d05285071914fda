//! Multi-head scaled dot-product self-attention over a token sequence.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::ops::{softmax_rows, softmax_rows_backward};
use super::{Linear, Real};
use crate::impl_params;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

impl_params!(MultiHeadAttention {
    query,
    key,
    value,
    output
});

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    input: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Attention weights, one `n x n` matrix per head.
    probs: Vec<Array2<T>>,
    context: Array2<T>,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        MultiHeadAttention {
            query: Linear::new(rng, dim, dim),
            key: Linear::new(rng, dim, dim),
            value: Linear::new(rng, dim, dim),
            output: Linear::new(rng, dim, dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>, heads: usize) -> (Array2<T>, AttentionCache<T>) {
        let dim = x.ncols();
        let head_dim = dim / heads;
        let scale = T::of(1.0 / (head_dim as f64).sqrt());
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut context = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let p = softmax_rows(scores.view());
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let y = self.output.forward(context.view());
        let cache = AttentionCache {
            input: x.to_owned(),
            q,
            k,
            v,
            probs,
            context,
        };
        (y, cache)
    }

    pub fn backward(
        &self,
        cache: &AttentionCache<T>,
        dy: ArrayView2<'_, T>,
        heads: usize,
        grad: &mut MultiHeadAttention<T>,
    ) -> Array2<T> {
        let dim = dy.ncols();
        let head_dim = dim / heads;
        let scale = T::of(1.0 / (head_dim as f64).sqrt());
        let dcontext = self
            .output
            .backward(cache.context.view(), dy, &mut grad.output);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let dctx = dcontext.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            let dp = dctx.dot(&cache.v.slice(cols).t());
            let dscores = softmax_rows_backward(p.view(), dp.view()) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.input.view();
        let mut dx = self.query.backward(x, dq.view(), &mut grad.query);
        dx += &self.key.backward(x, dk.view(), &mut grad.key);
        dx += &self.value.backward(x, dv.view(), &mut grad.value);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, unflatten, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weights(n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let attn = MultiHeadAttention::<f64>::new(&mut rng, 4);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.25 + 0.1);
        let w = weights(3, 4);
        let loss = |a: &MultiHeadAttention<f64>, x: &Array2<f64>| (a.forward(x.view(), 2).0 * &w).sum();

        let (_, cache) = attn.forward(x.view(), 2);
        let mut grad = zeros_like(&attn);
        let dx = attn.backward(&cache, w.view(), 2, &mut grad);

        let analytic = flatten(&grad);
        let base = flatten(&attn);
        for i in (0..base.len()).step_by(3) {
            let mut p = base.clone();
            p[i] += 1e-6;
            let mut ap = attn.clone();
            unflatten(&mut ap, &p);
            p[i] -= 2e-6;
            let mut am = attn.clone();
            unflatten(&mut am, &p);
            let fd = (loss(&ap, &x) - loss(&am, &x)) / 2e-6;
            assert!((fd - analytic[i]).abs() < 1e-7, "param {i}: {fd} vs {}", analytic[i]);
        }
        for i in 0..3 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += 1e-6;
                let mut xm = x.clone();
                xm[[i, j]] -= 1e-6;
                let fd = (loss(&attn, &xp) - loss(&attn, &xm)) / 2e-6;
                assert!((fd - dx[[i, j]]).abs() < 1e-7);
            }
        }
    }
}
