//! Convolutional embedding models.
//!
//! Both networks read a spectrogram as a one-channel image with time along
//! the height axis and mel bins along the width axis.
//!
//! * [`Cnn14Params`]: six blocks of two conv-BN-ReLU layers with 2x2 average
//!   pooling between blocks, frequency-mean then (mean + max) time pooling,
//!   a ReLU fully-connected layer and a linear embedding head. Any input
//!   long enough to survive the pooling is accepted.
//! * [`VggishParams`]: six conv-BN-ReLU layers with four 2x2 max pools,
//!   flattened into two ReLU fully-connected layers and a linear head. The
//!   input window is fixed at 96 frames x 64 bins; longer inputs are split
//!   into consecutive 96-frame chunks whose embeddings are averaged.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impl_params;
use crate::nn::conv::{
    avg_pool2, avg_pool2_backward, max_pool2, max_pool2_backward, relu4, relu4_backward, BatchNormCache,
};
use crate::nn::ops::relu;
use crate::nn::{BatchNorm2d, Conv2d, Linear, Real};

/// Conv -> BatchNorm -> ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl_params!(ConvUnit { conv, bn });

#[derive(Debug, Clone)]
pub struct ConvUnitCache<T> {
    input: Array4<T>,
    bn: BatchNormCache<T>,
    output: Array4<T>,
}

impl<T: Real> ConvUnit<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, out_ch: usize) -> Self {
        ConvUnit {
            conv: Conv2d::new(rng, in_ch, out_ch),
            bn: BatchNorm2d::new(out_ch),
        }
    }

    pub fn forward(&mut self, x: Array4<T>, train: bool) -> (Array4<T>, ConvUnitCache<T>) {
        let z = self.conv.forward(x.view());
        let (n, bn) = self.bn.forward(z.view(), train);
        let output = relu4(&n);
        (
            output.clone(),
            ConvUnitCache {
                input: x,
                bn,
                output,
            },
        )
    }

    pub fn forward_eval(&self, x: ArrayView4<'_, T>) -> Array4<T> {
        relu4(&self.bn.forward_eval(self.conv.forward(x).view()))
    }

    pub fn backward(&self, cache: &ConvUnitCache<T>, dy: &Array4<T>, grad: &mut ConvUnit<T>) -> Array4<T> {
        let dn = relu4_backward(&cache.output, dy);
        let dz = self.bn.backward(&cache.bn, dn.view(), &mut grad.bn);
        self.conv.backward(cache.input.view(), dz.view(), &mut grad.conv)
    }
}

/// `x` is `f x t`; returns `[1, 1, t, f]`.
fn to_image<T: Real>(x: ArrayView2<'_, T>) -> Array4<T> {
    let (f, t) = x.dim();
    let mut img = Array4::zeros((1, 1, t, f));
    img.slice_mut(s![0, 0, .., ..]).assign(&x.t());
    img
}

fn stack_images<T: Real>(xs: &[ArrayView2<'_, T>]) -> Array4<T> {
    let (f, t) = xs[0].dim();
    let mut img = Array4::zeros((xs.len(), 1, t, f));
    for (i, x) in xs.iter().enumerate() {
        img.slice_mut(s![i, 0, .., ..]).assign(&x.t());
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cnn14Config {
    /// Output channels of the six blocks.
    pub channels: Vec<usize>,
    pub fc_dim: usize,
    pub embed_dim: usize,
}

impl Cnn14Config {
    pub fn full() -> Self {
        Cnn14Config {
            channels: vec![64, 128, 256, 512, 1024, 2048],
            fc_dim: 2048,
            embed_dim: 768,
        }
    }

    pub fn toy() -> Self {
        Cnn14Config {
            channels: vec![4, 8, 8, 16, 16, 32],
            fc_dim: 64,
            embed_dim: 64,
        }
    }

    /// Smallest time/frequency extent that survives the pooling stack.
    pub fn min_extent(&self) -> usize {
        1 << self.channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.fc_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("cnn14: channel and layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn14Block<T> {
    pub first: ConvUnit<T>,
    pub second: ConvUnit<T>,
}

impl_params!(Cnn14Block { first, second });

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn14Params<T> {
    pub config: Cnn14Config,
    pub blocks: Vec<Cnn14Block<T>>,
    pub fc: Linear<T>,
    pub head: Linear<T>,
}

impl_params!(Cnn14Params { blocks, fc, head });

#[derive(Debug, Clone)]
pub struct Cnn14Cache<T> {
    units: Vec<(ConvUnitCache<T>, ConvUnitCache<T>)>,
    pooled_shapes: Vec<(usize, usize, usize, usize)>,
    final_map: Array4<T>,
    freq_mean: Array2<T>,
    argmax_t: Array2<usize>,
    pooled: Array2<T>,
    fc_pre: Array2<T>,
    fc_out: Array2<T>,
}

impl<T: Real> Cnn14Params<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: Cnn14Config) -> Result<Self> {
        config.validate()?;
        let mut in_ch = 1;
        let blocks = config
            .channels
            .iter()
            .map(|&c| {
                let b = Cnn14Block {
                    first: ConvUnit::new(rng, in_ch, c),
                    second: ConvUnit::new(rng, c, c),
                };
                in_ch = c;
                b
            })
            .collect();
        let fc = Linear::new(rng, in_ch, config.fc_dim);
        let head = Linear::new(rng, config.fc_dim, config.embed_dim);
        Ok(Cnn14Params {
            config,
            blocks,
            fc,
            head,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn check_input(&self, f: usize, t: usize) -> Result<()> {
        let min = self.config.min_extent();
        if t < min || f < min {
            return Err(Error::shape(format!(
                "cnn14 needs at least {min} frames and bins, got {f}x{t}"
            )));
        }
        Ok(())
    }

    /// Inference embedding of one `f x t` spectrogram.
    pub fn embed(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let (f, t) = x.dim();
        self.check_input(f, t)?;
        let mut h = to_image(x);
        let last = self.blocks.len() - 1;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.second.forward_eval(b.first.forward_eval(h.view()).view());
            if i < last {
                h = avg_pool2(h.view());
            }
        }
        let (pooled, _, _) = global_pool(&h);
        let fc = self.fc.forward(pooled.view()).mapv(relu);
        Ok(self.head.forward(fc.view()).row(0).to_owned())
    }

    /// Batch training forward (batch-norm uses batch statistics).
    pub fn forward_train(&mut self, xs: &[ArrayView2<'_, T>]) -> Result<(Array2<T>, Cnn14Cache<T>)> {
        let (f, t) = xs[0].dim();
        self.check_input(f, t)?;
        if xs.iter().any(|x| x.dim() != (f, t)) {
            return Err(Error::shape("cnn14 batch inputs differ in shape".to_string()));
        }
        let mut h = stack_images(xs);
        let last = self.blocks.len() - 1;
        let mut units = Vec::with_capacity(self.blocks.len());
        let mut pooled_shapes = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let (h1, c1) = b.first.forward(h, true);
            let (h2, c2) = b.second.forward(h1, true);
            units.push((c1, c2));
            h = if i < last {
                pooled_shapes.push(h2.dim());
                avg_pool2(h2.view())
            } else {
                h2
            };
        }
        let (pooled, freq_mean, argmax_t) = global_pool(&h);
        let fc_pre = self.fc.forward(pooled.view());
        let fc_out = fc_pre.mapv(relu);
        let emb = self.head.forward(fc_out.view());
        Ok((
            emb,
            Cnn14Cache {
                units,
                pooled_shapes,
                final_map: h,
                freq_mean,
                argmax_t,
                pooled,
                fc_pre,
                fc_out,
            },
        ))
    }

    pub fn backward(&self, cache: &Cnn14Cache<T>, demb: ArrayView2<'_, T>, grad: &mut Cnn14Params<T>) {
        let dfc_out = self.head.backward(cache.fc_out.view(), demb, &mut grad.head);
        let mut dfc_pre = dfc_out;
        ndarray::Zip::from(&mut dfc_pre)
            .and(&cache.fc_pre)
            .for_each(|d, &p| {
                if p <= T::zero() {
                    *d = T::zero()
                }
            });
        let dpooled = self.fc.backward(cache.pooled.view(), dfc_pre.view(), &mut grad.fc);
        let mut dh = global_pool_backward(&cache.final_map, &cache.freq_mean, &cache.argmax_t, &dpooled);
        let _ = &cache.pooled;
        let last = self.blocks.len() - 1;
        for (i, ((b, (c1, c2)), gb)) in self
            .blocks
            .iter()
            .zip(&cache.units)
            .zip(grad.blocks.iter_mut())
            .enumerate()
            .rev()
        {
            if i < last {
                dh = avg_pool2_backward(dh.view(), cache.pooled_shapes[i]);
            }
            let d1 = b.second.backward(c2, &dh, &mut gb.second);
            dh = b.first.backward(c1, &d1, &mut gb.first);
        }
    }
}

/// Mean over frequency (width), then mean + max over time (height).
/// Returns the `[batch, channels]` pooled features, the frequency means
/// `[batch*channels, time]` and the time argmax per `(batch, channel)`.
fn global_pool<T: Real>(h: &Array4<T>) -> (Array2<T>, Array2<T>, Array2<usize>) {
    let (b, c, t, f) = h.dim();
    let inv_f = T::one() / T::of(f as f64);
    let inv_t = T::one() / T::of(t as f64);
    let mut pooled = Array2::zeros((b, c));
    let mut freq_mean = Array2::zeros((b * c, t));
    let mut argmax = Array2::zeros((b, c));
    for i in 0..b {
        for j in 0..c {
            let mut row = freq_mean.row_mut(i * c + j);
            for tt in 0..t {
                row[tt] = h.slice(s![i, j, tt, ..]).sum() * inv_f;
            }
            let mean = row.sum() * inv_t;
            let mut best = 0;
            for tt in 1..t {
                if row[tt] > row[best] {
                    best = tt;
                }
            }
            pooled[[i, j]] = mean + row[best];
            argmax[[i, j]] = best;
        }
    }
    (pooled, freq_mean, argmax)
}

fn global_pool_backward<T: Real>(
    h: &Array4<T>,
    _freq_mean: &Array2<T>,
    argmax: &Array2<usize>,
    dpooled: &Array2<T>,
) -> Array4<T> {
    let (b, c, t, f) = h.dim();
    let inv_f = T::one() / T::of(f as f64);
    let inv_t = T::one() / T::of(t as f64);
    let mut dh = Array4::zeros(h.raw_dim());
    for i in 0..b {
        for j in 0..c {
            let g = dpooled[[i, j]];
            for tt in 0..t {
                let mut dt = g * inv_t;
                if tt == argmax[[i, j]] {
                    dt += g;
                }
                dh.slice_mut(s![i, j, tt, ..]).fill(dt * inv_f);
            }
        }
    }
    dh
}

pub const VGGISH_FRAMES: usize = 96;
pub const VGGISH_MELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VggishConfig {
    /// Output channels of the six conv layers; pools follow layers 1, 2, 4 and 6.
    pub channels: Vec<usize>,
    pub fc_dim: usize,
    pub embed_dim: usize,
}

const VGG_POOL_AFTER: [usize; 4] = [0, 1, 3, 5];

impl VggishConfig {
    pub fn full() -> Self {
        VggishConfig {
            channels: vec![64, 128, 256, 256, 512, 512],
            fc_dim: 4096,
            embed_dim: 768,
        }
    }

    pub fn toy() -> Self {
        VggishConfig {
            channels: vec![4, 8, 16, 16, 32, 32],
            fc_dim: 64,
            embed_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 6 || self.channels.contains(&0) || self.fc_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("vggish: six positive channel widths and positive fc sizes required".into()));
        }
        Ok(())
    }

    fn flat_dim(&self) -> usize {
        let shrink = 1 << VGG_POOL_AFTER.len();
        self.channels[5] * (VGGISH_FRAMES / shrink) * (VGGISH_MELS / shrink)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VggishParams<T> {
    pub config: VggishConfig,
    pub units: Vec<ConvUnit<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub head: Linear<T>,
}

impl_params!(VggishParams {
    units,
    fc1,
    fc2,
    head
});

#[derive(Debug, Clone)]
pub struct VggishCache<T> {
    units: Vec<ConvUnitCache<T>>,
    pool_args: Vec<(Array4<u8>, (usize, usize, usize, usize))>,
    flat: Array2<T>,
    fc1_out: Array2<T>,
    fc2_out: Array2<T>,
    chunks_per_clip: usize,
}

impl<T: Real> VggishParams<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: VggishConfig) -> Result<Self> {
        config.validate()?;
        let mut in_ch = 1;
        let units = config
            .channels
            .iter()
            .map(|&c| {
                let u = ConvUnit::new(rng, in_ch, c);
                in_ch = c;
                u
            })
            .collect();
        let fc1 = Linear::new(rng, config.flat_dim(), config.fc_dim);
        let fc2 = Linear::new(rng, config.fc_dim, config.fc_dim);
        let head = Linear::new(rng, config.fc_dim, config.embed_dim);
        Ok(VggishParams {
            config,
            units,
            fc1,
            fc2,
            head,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Non-overlapping 96-frame chunks; a trailing partial chunk is dropped.
    pub fn chunks<'a>(&self, x: ArrayView2<'a, T>) -> Result<Vec<ArrayView2<'a, T>>> {
        let (f, t) = x.dim();
        if f != VGGISH_MELS {
            return Err(Error::dim("vggish mel bins", VGGISH_MELS, f));
        }
        if t < VGGISH_FRAMES {
            return Err(Error::shape(format!(
                "vggish needs at least {VGGISH_FRAMES} frames, got {t}"
            )));
        }
        Ok((0..t / VGGISH_FRAMES)
            .map(|k| x.slice_move(s![.., k * VGGISH_FRAMES..(k + 1) * VGGISH_FRAMES]))
            .collect())
    }

    fn embed_window(&self, x: ArrayView2<'_, T>) -> Array1<T> {
        let mut h = to_image(x);
        let mut p = 0;
        for (i, u) in self.units.iter().enumerate() {
            h = u.forward_eval(h.view());
            if p < VGG_POOL_AFTER.len() && VGG_POOL_AFTER[p] == i {
                h = max_pool2(h.view()).0;
                p += 1;
            }
        }
        let flat = h.into_shape_with_order((1, self.config.flat_dim())).expect("contiguous");
        let a = self.fc1.forward(flat.view()).mapv(relu);
        let b = self.fc2.forward(a.view()).mapv(relu);
        self.head.forward(b.view()).row(0).to_owned()
    }

    /// Mean of the per-chunk embeddings.
    pub fn embed(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let chunks = self.chunks(x)?;
        let mut acc = Array1::zeros(self.config.embed_dim);
        for c in &chunks {
            acc += &self.embed_window(*c);
        }
        Ok(acc / T::of(chunks.len() as f64))
    }

    /// Batch training forward; every clip must yield the same chunk count.
    pub fn forward_train(&mut self, xs: &[ArrayView2<'_, T>]) -> Result<(Array2<T>, VggishCache<T>)> {
        let mut windows = Vec::new();
        let mut per_clip = None;
        for x in xs {
            let c = self.chunks(*x)?;
            if *per_clip.get_or_insert(c.len()) != c.len() {
                return Err(Error::shape("vggish batch clips differ in chunk count".to_string()));
            }
            windows.extend(c);
        }
        let chunks_per_clip = per_clip.unwrap_or(1);
        let mut h = stack_images(&windows);
        let mut units = Vec::with_capacity(self.units.len());
        let mut pool_args = Vec::new();
        let mut p = 0;
        for (i, u) in self.units.iter_mut().enumerate() {
            let (out, c) = u.forward(h, true);
            units.push(c);
            h = out;
            if p < VGG_POOL_AFTER.len() && VGG_POOL_AFTER[p] == i {
                let shape = h.dim();
                let (pooled, arg) = max_pool2(h.view());
                pool_args.push((arg, shape));
                h = pooled;
                p += 1;
            }
        }
        let n = windows.len();
        let flat = h.into_shape_with_order((n, self.config.flat_dim())).expect("contiguous");
        let fc1_out = self.fc1.forward(flat.view()).mapv(relu);
        let fc2_out = self.fc2.forward(fc1_out.view()).mapv(relu);
        let per_window = self.head.forward(fc2_out.view());
        let mut emb = Array2::zeros((xs.len(), self.config.embed_dim));
        let inv = T::one() / T::of(chunks_per_clip as f64);
        for (w, row) in per_window.axis_iter(Axis(0)).enumerate() {
            let mut e = emb.row_mut(w / chunks_per_clip);
            e.scaled_add(inv, &row);
        }
        Ok((
            emb,
            VggishCache {
                units,
                pool_args,
                flat,
                fc1_out,
                fc2_out,
                chunks_per_clip,
            },
        ))
    }

    pub fn backward(&self, cache: &VggishCache<T>, demb: ArrayView2<'_, T>, grad: &mut VggishParams<T>) {
        let k = cache.chunks_per_clip;
        let inv = T::one() / T::of(k as f64);
        let n = demb.nrows() * k;
        let mut dwin = Array2::zeros((n, self.config.embed_dim));
        for (w, mut row) in dwin.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&(&demb.row(w / k) * inv));
        }
        let relu_mask = |d: &mut Array2<T>, out: &Array2<T>| {
            ndarray::Zip::from(d).and(out).for_each(|g, &o| {
                if o <= T::zero() {
                    *g = T::zero()
                }
            })
        };
        let mut d2 = self.head.backward(cache.fc2_out.view(), dwin.view(), &mut grad.head);
        relu_mask(&mut d2, &cache.fc2_out);
        let mut d1 = self.fc2.backward(cache.fc1_out.view(), d2.view(), &mut grad.fc2);
        relu_mask(&mut d1, &cache.fc1_out);
        let dflat = self.fc1.backward(cache.flat.view(), d1.view(), &mut grad.fc1);
        let last_pool = cache.pool_args.last().expect("four pools").1;
        let mut dh = dflat
            .into_shape_with_order((n, last_pool.1, last_pool.2 / 2, last_pool.3 / 2))
            .expect("contiguous");
        let mut p = VGG_POOL_AFTER.len();
        for (i, (u, gu)) in self.units.iter().zip(grad.units.iter_mut()).enumerate().rev() {
            if p > 0 && VGG_POOL_AFTER[p - 1] == i {
                p -= 1;
                let (arg, shape) = &cache.pool_args[p];
                dh = max_pool2_backward(dh.view(), arg, *shape);
            }
            dh = u.backward(&cache.units[i], &dh, gu);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, unflatten, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe(f: usize, t: usize, phase: f64) -> Array2<f64> {
        Array2::from_shape_fn((f, t), |(i, j)| (i as f64 * 0.37 + j as f64 * 0.11 + phase).sin())
    }

    fn small_cnn() -> Cnn14Params<f64> {
        let cfg = Cnn14Config {
            channels: vec![2, 3, 3],
            fc_dim: 5,
            embed_dim: 4,
        };
        Cnn14Params::new(&mut ChaCha8Rng::seed_from_u64(1), cfg).unwrap()
    }

    #[test]
    fn cnn14_accepts_arbitrary_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Cnn14Params::<f32>::new(&mut rng, Cnn14Config::toy()).unwrap();
        let a = m.embed(Array2::zeros((32, 40)).view()).unwrap();
        let b = m.embed(Array2::zeros((32, 100)).view()).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(b.len(), 64);
        assert!(m.embed(Array2::zeros((32, 16)).view()).is_err());
    }

    #[test]
    fn cnn14_zero_input_is_reproducible() {
        let build = || {
            let mut m = Cnn14Params::<f32>::new(&mut ChaCha8Rng::seed_from_u64(5), Cnn14Config::toy()).unwrap();
            m.fc.bias.fill(0.0);
            m.head.bias.fill(0.0);
            m.embed(Array2::zeros((32, 64)).view()).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn cnn14_train_gradients_match_finite_differences() {
        let m = small_cnn();
        let xs = [probe(8, 9, 0.0), probe(8, 9, 1.3)];
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let w = Array2::from_shape_fn((2, 4), |(i, j)| (i as f64 + 1.0) * 0.5 - j as f64 * 0.3);
        let loss = |p: &Cnn14Params<f64>| {
            let mut q = p.clone();
            (q.forward_train(&views).unwrap().0 * &w).sum()
        };
        let mut fwd = m.clone();
        let (_, cache) = fwd.forward_train(&views).unwrap();
        let mut grad = zeros_like(&m);
        m.backward(&cache, w.view(), &mut grad);
        let analytic = flatten(&grad);
        let base = flatten(&m);
        let mut checked = 0;
        for i in (0..base.len()).step_by(7) {
            let mut p = base.clone();
            p[i] += 1e-6;
            let mut mp = m.clone();
            unflatten(&mut mp, &p);
            p[i] -= 2e-6;
            let mut mm = m.clone();
            unflatten(&mut mm, &p);
            let fd = (loss(&mp) - loss(&mm)) / 2e-6;
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
            checked += 1;
        }
        assert!(checked > 20);
    }

    fn small_vgg() -> VggishParams<f64> {
        let cfg = VggishConfig {
            channels: vec![1, 2, 2, 2, 2, 2],
            fc_dim: 3,
            embed_dim: 3,
        };
        VggishParams::new(&mut ChaCha8Rng::seed_from_u64(2), cfg).unwrap()
    }

    #[test]
    fn vggish_chunk_rules() {
        let m = small_vgg();
        let one = probe(64, 96, 0.0);
        let two = probe(64, 96, 2.0);
        let e1 = m.embed(one.view()).unwrap();
        assert_eq!(e1, m.embed_window(one.view()));
        let mut both = Array2::zeros((64, 200));
        both.slice_mut(s![.., 0..96]).assign(&one);
        both.slice_mut(s![.., 96..192]).assign(&two);
        let e2 = m.embed_window(two.view());
        let expected = (&e1 + &e2) / 2.0;
        let got = m.embed(both.view()).unwrap();
        let got192 = m.embed(both.slice(s![.., 0..192])).unwrap();
        assert_eq!(got, got192);
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.embed(probe(64, 95, 0.0).view()).is_err());
        assert!(m.embed(probe(32, 96, 0.0).view()).is_err());
    }

    #[test]
    fn vggish_identical_chunks_equal_single_chunk() {
        let m = small_vgg();
        let one = probe(64, 96, 0.4);
        let mut tiled = Array2::zeros((64, 96 * 3));
        for k in 0..3 {
            tiled.slice_mut(s![.., k * 96..(k + 1) * 96]).assign(&one);
        }
        let a = m.embed(one.view()).unwrap();
        let b = m.embed(tiled.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn vggish_train_gradients_match_finite_differences() {
        let m = small_vgg();
        let xs = [probe(64, 192, 0.0), probe(64, 192, 0.9)];
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let w = Array2::from_shape_fn((2, 3), |(i, j)| 0.4 - (i + j) as f64 * 0.25);
        let loss = |p: &VggishParams<f64>| {
            let mut q = p.clone();
            (q.forward_train(&views).unwrap().0 * &w).sum()
        };
        let mut fwd = m.clone();
        let (_, cache) = fwd.forward_train(&views).unwrap();
        let mut grad = zeros_like(&m);
        m.backward(&cache, w.view(), &mut grad);
        let analytic = flatten(&grad);
        let base = flatten(&m);
        for i in (0..base.len()).step_by(11) {
            let mut p = base.clone();
            p[i] += 1e-6;
            let mut mp = m.clone();
            unflatten(&mut mp, &p);
            p[i] -= 2e-6;
            let mut mm = m.clone();
            unflatten(&mut mm, &p);
            let fd = (loss(&mp) - loss(&mm)) / 2e-6;
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
        }
    }
}
