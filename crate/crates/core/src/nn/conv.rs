//! 2-D convolution, batch normalization and pooling on `[batch, channel, height, width]` tensors.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis, Zip};
use rand::Rng;

use super::{uniform_fan_in, Params, Real, Visit, VisitMut};
use crate::impl_params;

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `[out, in, 3, 3]`
    pub weight: Array4<T>,
    pub bias: Array1<T>,
}

impl_params!(Conv2d { weight, bias });

const K: usize = 3;

fn im2col<T: Real>(x: ArrayView3<'_, T>) -> Array2<T> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * K * K, h * w));
    for ci in 0..c {
        for ky in 0..K {
            for kx in 0..K {
                let row = ci * K * K + ky * K + kx;
                let mut out = cols.row_mut(row);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        out[y * w + xx] = x[[ci, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: ArrayView2<'_, T>, c: usize, h: usize, w: usize) -> Array3<T> {
    let mut x = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..K {
            for kx in 0..K {
                let row = cols.row(ci * K * K + ky * K + kx);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        x[[ci, sy as usize, sx as usize]] += row[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, out_ch: usize) -> Self {
        let mut weight = Array4::zeros((out_ch, in_ch, K, K));
        let mut bias = Array1::zeros(out_ch);
        uniform_fan_in(rng, in_ch * K * K, weight.as_slice_mut().unwrap());
        uniform_fan_in(rng, in_ch * K * K, bias.as_slice_mut().unwrap());
        Conv2d { weight, bias }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let out_ch = self.weight.dim().0;
        self.weight
            .view()
            .into_shape_with_order((out_ch, self.weight.len() / out_ch))
            .expect("standard layout")
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn forward(&self, x: ArrayView4<'_, T>) -> Array4<T> {
        let (b, _, h, w) = x.dim();
        let out_ch = self.out_channels();
        let wm = self.weight_matrix();
        let mut y = Array4::zeros((b, out_ch, h, w));
        for (xi, mut yi) in x.axis_iter(Axis(0)).zip(y.axis_iter_mut(Axis(0))) {
            let cols = im2col(xi);
            let mut out = wm.dot(&cols);
            for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
            yi.assign(&out.into_shape_with_order((out_ch, h, w)).expect("contiguous"));
        }
        y
    }

    /// Backward pass; `x` is the forward input.
    pub fn backward(&self, x: ArrayView4<'_, T>, dy: ArrayView4<'_, T>, grad: &mut Conv2d<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        let out_ch = self.out_channels();
        let wm = self.weight_matrix();
        let mut dgw = Array2::<T>::zeros(wm.raw_dim());
        let mut dx = Array4::zeros((b, c, h, w));
        for ((xi, dyi), mut dxi) in x
            .axis_iter(Axis(0))
            .zip(dy.axis_iter(Axis(0)))
            .zip(dx.axis_iter_mut(Axis(0)))
        {
            let cols = im2col(xi);
            let dy2 = dyi
                .to_owned()
                .into_shape_with_order((out_ch, h * w))
                .expect("contiguous");
            dgw += &dy2.dot(&cols.t());
            grad.bias += &dy2.sum_axis(Axis(1));
            let dcols = wm.t().dot(&dy2);
            dxi.assign(&col2im(dcols.view(), c, h, w));
        }
        let gw = grad
            .weight
            .as_slice_mut()
            .expect("standard layout");
        for (g, &d) in gw.iter_mut().zip(dgw.iter()) {
            *g += d;
        }
        dx
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization with running statistics for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Real> Params<T> for BatchNorm2d<T> {
    fn for_each(&self, prefix: &str, f: &mut Visit<'_, T>) {
        self.gamma.for_each(&super::join(prefix, "gamma"), f);
        self.beta.for_each(&super::join(prefix, "beta"), f);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        self.gamma.for_each_mut(&super::join(prefix, "gamma"), f);
        self.beta.for_each_mut(&super::join(prefix, "beta"), f);
    }
    fn for_each_buffer(&self, prefix: &str, f: &mut Visit<'_, T>) {
        self.running_mean.for_each(&super::join(prefix, "running_mean"), f);
        self.running_var.for_each(&super::join(prefix, "running_var"), f);
    }
    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, T>) {
        self.running_mean
            .for_each_mut(&super::join(prefix, "running_mean"), f);
        self.running_var
            .for_each_mut(&super::join(prefix, "running_var"), f);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
    train: bool,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    /// In training mode normalizes with batch statistics and updates the
    /// running estimates; otherwise uses the running estimates.
    pub fn forward(&mut self, x: ArrayView4<'_, T>, train: bool) -> (Array4<T>, BatchNormCache<T>) {
        let c = x.dim().1;
        let eps = T::of(BN_EPS);
        let (mean, var) = if train {
            let n = (x.len() / c) as f64;
            let mut mean = Array1::zeros(c);
            let mut var = Array1::zeros(c);
            for ch in 0..c {
                let view = x.index_axis(Axis(1), ch);
                let m = view.sum() / T::of(n);
                let v = view.iter().map(|&a| (a - m) * (a - m)).sum::<T>() / T::of(n);
                mean[ch] = m;
                var[ch] = v;
            }
            let mom = T::of(BN_MOMENTUM);
            let unbias = if n > 1.0 { T::of(n / (n - 1.0)) } else { T::one() };
            for ch in 0..c {
                self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mean[ch];
                self.running_var[ch] =
                    (T::one() - mom) * self.running_var[ch] + mom * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let (y, xhat) = self.normalize(x, &mean, &inv_std);
        (y, BatchNormCache { xhat, inv_std, train })
    }

    /// Inference-only forward that leaves running statistics untouched.
    pub fn forward_eval(&self, x: ArrayView4<'_, T>) -> Array4<T> {
        let eps = T::of(BN_EPS);
        let inv_std = self.running_var.mapv(|v| T::one() / (v + eps).sqrt());
        self.normalize(x, &self.running_mean, &inv_std).0
    }

    fn normalize(&self, x: ArrayView4<'_, T>, mean: &Array1<T>, inv_std: &Array1<T>) -> (Array4<T>, Array4<T>) {
        let mut xhat = x.to_owned();
        let mut y = Array4::zeros(x.raw_dim());
        for ch in 0..x.dim().1 {
            let (m, s, g, b) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
            Zip::from(xhat.index_axis_mut(Axis(1), ch))
                .and(y.index_axis_mut(Axis(1), ch))
                .for_each(|xh, yv| {
                    *xh = (*xh - m) * s;
                    *yv = *xh * g + b;
                });
        }
        (y, xhat)
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, dy: ArrayView4<'_, T>, grad: &mut BatchNorm2d<T>) -> Array4<T> {
        let c = dy.dim().1;
        let n = T::of((dy.len() / c) as f64);
        let mut dx = Array4::zeros(dy.raw_dim());
        for ch in 0..c {
            let dyc = dy.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let sum_dy = dyc.sum();
            let sum_dy_xh = dyc.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
            grad.gamma[ch] += sum_dy_xh;
            grad.beta[ch] += sum_dy;
            let g = self.gamma[ch];
            let inv = cache.inv_std[ch];
            let mut dxc = dx.index_axis_mut(Axis(1), ch);
            if cache.train {
                Zip::from(&mut dxc).and(&dyc).and(&xh).for_each(|o, &d, &h| {
                    *o = g * inv / n * (n * d - sum_dy - h * sum_dy_xh);
                });
            } else {
                Zip::from(&mut dxc).and(&dyc).for_each(|o, &d| *o = g * inv * d);
            }
        }
        dx
    }
}

pub fn relu4<T: Real>(x: &Array4<T>) -> Array4<T> {
    x.mapv(super::ops::relu)
}

/// Gradient of ReLU given its output.
pub fn relu4_backward<T: Real>(y: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2<T: Real>(x: ArrayView4<'_, T>) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    Array4::from_shape_fn((b, c, oh, ow), |(i, j, y, xx)| {
        (x[[i, j, 2 * y, 2 * xx]]
            + x[[i, j, 2 * y + 1, 2 * xx]]
            + x[[i, j, 2 * y, 2 * xx + 1]]
            + x[[i, j, 2 * y + 1, 2 * xx + 1]])
            * quarter
    })
}

pub fn avg_pool2_backward<T: Real>(dy: ArrayView4<'_, T>, in_shape: (usize, usize, usize, usize)) -> Array4<T> {
    let mut dx = Array4::zeros(in_shape);
    let quarter = T::of(0.25);
    for ((i, j, y, xx), &d) in dy.indexed_iter() {
        let g = d * quarter;
        dx[[i, j, 2 * y, 2 * xx]] += g;
        dx[[i, j, 2 * y + 1, 2 * xx]] += g;
        dx[[i, j, 2 * y, 2 * xx + 1]] += g;
        dx[[i, j, 2 * y + 1, 2 * xx + 1]] += g;
    }
    dx
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// cell, the flat `(dy, dx)` offset of the winning input inside its window.
pub fn max_pool2<T: Real>(x: ArrayView4<'_, T>) -> (Array4<T>, Array4<u8>) {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::zeros((b, c, oh, ow));
    let mut arg = Array4::zeros((b, c, oh, ow));
    for i in 0..b {
        for j in 0..c {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut best = x[[i, j, 2 * yy, 2 * xx]];
                    let mut best_k = 0u8;
                    for k in 1..4u8 {
                        let v = x[[i, j, 2 * yy + (k / 2) as usize, 2 * xx + (k % 2) as usize]];
                        if v > best {
                            best = v;
                            best_k = k;
                        }
                    }
                    y[[i, j, yy, xx]] = best;
                    arg[[i, j, yy, xx]] = best_k;
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<T: Real>(
    dy: ArrayView4<'_, T>,
    arg: &Array4<u8>,
    in_shape: (usize, usize, usize, usize),
) -> Array4<T> {
    let mut dx = Array4::zeros(in_shape);
    for ((i, j, y, xx), &d) in dy.indexed_iter() {
        let k = arg[[i, j, y, xx]];
        dx[[i, j, 2 * y + (k / 2) as usize, 2 * xx + (k % 2) as usize]] += d;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, unflatten, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe(shape: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(shape, |(a, b, c, d)| ((a * 13 + b * 7 + c * 5 + d * 3) % 11) as f64 * 0.1 - 0.5)
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new(&mut rng, 2, 3);
        let x = probe((1, 2, 4, 5));
        let y = conv.forward(x.view());
        for o in 0..3 {
            for yy in 0..4 {
                for xx in 0..5 {
                    let mut acc = conv.bias[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = yy as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy >= 0 && sy < 4 && sx >= 0 && sx < 5 {
                                    acc += conv.weight[[o, c, ky, kx]] * x[[0, c, sy as usize, sx as usize]];
                                }
                            }
                        }
                    }
                    assert!((acc - y[[0, o, yy, xx]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f64>::new(&mut rng, 2, 2);
        let x = probe((2, 2, 3, 4));
        let w = probe((2, 2, 3, 4)).mapv(|v| v * 1.7 + 0.2);
        let loss = |c: &Conv2d<f64>, x: &Array4<f64>| (c.forward(x.view()) * &w).sum();
        let mut grad = zeros_like(&conv);
        let dx = conv.backward(x.view(), w.view(), &mut grad);
        let analytic = flatten(&grad);
        let base = flatten(&conv);
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-6;
            let mut cp = conv.clone();
            unflatten(&mut cp, &p);
            p[i] -= 2e-6;
            let mut cm = conv.clone();
            unflatten(&mut cm, &p);
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / 2e-6;
            assert!((fd - analytic[i]).abs() < 1e-7);
        }
        for (idx, &d) in dx.indexed_iter() {
            let mut xp = x.clone();
            xp[idx] += 1e-6;
            let mut xm = x.clone();
            xm[idx] -= 1e-6;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / 2e-6;
            assert!((fd - d).abs() < 1e-7);
        }
    }

    #[test]
    fn batchnorm_train_backward_matches_finite_difference() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.gamma = ndarray::array![1.3, -0.7];
        bn.beta = ndarray::array![0.2, 0.1];
        let x = probe((3, 2, 2, 2)).mapv(|v| v * v + v);
        let w = probe((3, 2, 2, 2)).mapv(|v| v + 0.3);
        let loss = |x: &Array4<f64>| {
            let mut b = bn.clone();
            (b.forward(x.view(), true).0 * &w).sum()
        };
        let (_, cache) = bn.clone().forward(x.view(), true);
        let mut grad = zeros_like(&bn);
        let dx = bn.backward(&cache, w.view(), &mut grad);
        for (idx, &d) in dx.indexed_iter() {
            let mut xp = x.clone();
            xp[idx] += 1e-6;
            let mut xm = x.clone();
            xm[idx] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - d).abs() < 1e-6, "{fd} vs {d}");
        }
    }

    #[test]
    fn batchnorm_updates_running_stats_only_in_train_mode() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Array4::from_elem((2, 1, 1, 1), 4.0);
        bn.forward(x.view(), false);
        assert_eq!(bn.running_mean[0], 0.0);
        bn.forward(x.view(), true);
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn pooling_shapes_and_routing() {
        let x = probe((1, 1, 5, 4));
        let a = avg_pool2(x.view());
        assert_eq!(a.dim(), (1, 1, 2, 2));
        let (m, arg) = max_pool2(x.view());
        let dx = max_pool2_backward(Array4::<f64>::ones(m.raw_dim()).view(), &arg, x.dim());
        assert_eq!(dx.sum(), 4.0);
        for ((_, _, y, xx), &v) in m.indexed_iter() {
            let window = [
                x[[0, 0, 2 * y, 2 * xx]],
                x[[0, 0, 2 * y + 1, 2 * xx]],
                x[[0, 0, 2 * y, 2 * xx + 1]],
                x[[0, 0, 2 * y + 1, 2 * xx + 1]],
            ];
            assert_eq!(v, window.iter().cloned().fold(f64::MIN, f64::max));
        }
        let da = avg_pool2_backward(Array4::<f64>::ones(a.raw_dim()).view(), x.dim());
        assert_eq!(da.sum(), 4.0);
    }
}
