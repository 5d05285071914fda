//! Spectrogram transformer with structured patchout.
//!
//! The spectrogram is cut into non-overlapping `pf x pt` patches (trailing
//! bins/frames that do not fill a patch are discarded). Each patch is
//! flattened frequency-major and linearly projected to the model width, and
//! receives the sum of a learnable frequency-row and time-column positional
//! vector. In training mode whole grid rows and columns are then dropped.
//! A learnable class token (without positional vector) is prepended, the
//! sequence passes through pre-norm encoder blocks, and the final-normed
//! class-token state is mapped to the embedding by a linear head.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impl_params;
use crate::nn::attention::AttentionCache;
use crate::nn::norm::LayerNormCache;
use crate::nn::ops::{gelu, gelu_grad};
pub use crate::nn::Mode;
use crate::nn::{self, uniform_scaled, LayerNorm, Linear, MultiHeadAttention, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub patch_freq: usize,
    pub patch_time: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_mult: usize,
    /// Rows of the frequency positional table.
    pub max_freq_patches: usize,
    /// Rows of the time positional table.
    pub max_time_patches: usize,
    pub embed_dim: usize,
}

impl TransformerConfig {
    /// ViT-Base width and depth, 16x16 patches over 128 mel bins and up to
    /// ~10 s of 10 ms frames, 768-dim embedding.
    pub fn full() -> Self {
        TransformerConfig {
            patch_freq: 16,
            patch_time: 16,
            dim: 768,
            heads: 12,
            layers: 12,
            ffn_mult: 4,
            max_freq_patches: 8,
            max_time_patches: 64,
            embed_dim: 768,
        }
    }

    pub fn toy() -> Self {
        TransformerConfig {
            patch_freq: 4,
            patch_time: 4,
            dim: 32,
            heads: 4,
            layers: 2,
            ffn_mult: 4,
            max_freq_patches: 8,
            max_time_patches: 32,
            embed_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_freq == 0 || self.patch_time == 0 {
            return Err(Error::Config("transformer: patch size must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "transformer: dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.embed_dim == 0 || self.max_freq_patches == 0 || self.max_time_patches == 0 {
            return Err(Error::Config("transformer: table and embedding sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchoutConfig {
    /// Whole grid rows removed in training mode.
    pub n_freq_drop: usize,
    /// Whole grid columns removed in training mode.
    pub n_time_drop: usize,
    pub mode: Mode,
}

impl PatchoutConfig {
    pub fn toy() -> Self {
        PatchoutConfig {
            n_freq_drop: 1,
            n_time_drop: 2,
            mode: Mode::Train,
        }
    }

    pub fn eval() -> Self {
        PatchoutConfig {
            n_freq_drop: 0,
            n_time_drop: 0,
            mode: Mode::Eval,
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        PatchoutConfig {
            mode,
            ..self.clone()
        }
    }
}

/// Patch tokens with their grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<T> {
    /// One `dim`-wide token per surviving patch, positional vectors included.
    pub tokens: Array2<T>,
    /// Flattened patch contents, one row per token.
    pub patches: Array2<T>,
    /// Grid row (frequency) and column (time) of each token.
    pub positions: Vec<(usize, usize)>,
    /// `(F_patches, T_patches)` before patchout.
    pub grid_shape: (usize, usize),
    pub patch_size: (usize, usize),
}

impl<T: Real> PatchGrid<T> {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<T> {
    pub norm1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
}

impl_params!(EncoderBlock {
    norm1,
    attn,
    norm2,
    ffn_in,
    ffn_out
});

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    ln2_out: Array2<T>,
    ffn_pre: Array2<T>,
    ffn_act: Array2<T>,
}

impl<T: Real> EncoderBlock<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, ffn_mult: usize) -> Self {
        EncoderBlock {
            norm1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim),
            norm2: LayerNorm::new(dim),
            ffn_in: Linear::new(rng, dim, dim * ffn_mult),
            ffn_out: Linear::new(rng, dim * ffn_mult, dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>, heads: usize) -> (Array2<T>, BlockCache<T>) {
        let (a, ln1) = self.norm1.forward(x);
        let (att, attn) = self.attn.forward(a.view(), heads);
        let x1 = &x + &att;
        let (ln2_out, ln2) = self.norm2.forward(x1.view());
        let ffn_pre = self.ffn_in.forward(ln2_out.view());
        let ffn_act = ffn_pre.mapv(gelu);
        let y = x1 + self.ffn_out.forward(ffn_act.view());
        let cache = BlockCache {
            ln1,
            attn,
            ln2,
            ln2_out,
            ffn_pre,
            ffn_act,
        };
        (y, cache)
    }

    pub fn backward(
        &self,
        cache: &BlockCache<T>,
        dy: ArrayView2<'_, T>,
        heads: usize,
        grad: &mut EncoderBlock<T>,
    ) -> Array2<T> {
        let dact = self
            .ffn_out
            .backward(cache.ffn_act.view(), dy, &mut grad.ffn_out);
        let mut dpre = dact;
        ndarray::Zip::from(&mut dpre)
            .and(&cache.ffn_pre)
            .for_each(|d, &p| *d *= gelu_grad(p));
        let dln2 = self
            .ffn_in
            .backward(cache.ln2_out.view(), dpre.view(), &mut grad.ffn_in);
        let dx1 = &dy + &self.norm2.backward(&cache.ln2, dln2.view(), &mut grad.norm2);
        let da = self
            .attn
            .backward(&cache.attn, dx1.view(), heads, &mut grad.attn);
        dx1 + self.norm1.backward(&cache.ln1, da.view(), &mut grad.norm1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<T> {
    pub config: TransformerConfig,
    /// `dim x (pf * pt)` patch projection.
    pub patch_embed: Linear<T>,
    pub cls_token: Array1<T>,
    pub freq_pos: Array2<T>,
    pub time_pos: Array2<T>,
    pub blocks: Vec<EncoderBlock<T>>,
    pub final_norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl_params!(TransformerParams {
    patch_embed,
    cls_token,
    freq_pos,
    time_pos,
    blocks,
    final_norm,
    head
});

/// Everything the backward pass needs from one training forward.
#[derive(Debug, Clone)]
pub struct TransformerCache<T> {
    grid: PatchGrid<T>,
    blocks: Vec<BlockCache<T>>,
    final_norm: LayerNormCache<T>,
    cls_out: Array2<T>,
}

impl<T: Real> TransformerParams<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let patch_len = config.patch_freq * config.patch_time;
        let patch_embed = Linear::new(rng, patch_len, d);
        let mut cls_token = Array1::zeros(d);
        uniform_scaled(rng, 0.02, cls_token.as_slice_mut().unwrap());
        let mut freq_pos = Array2::zeros((config.max_freq_patches, d));
        uniform_scaled(rng, 0.02, freq_pos.as_slice_mut().unwrap());
        let mut time_pos = Array2::zeros((config.max_time_patches, d));
        uniform_scaled(rng, 0.02, time_pos.as_slice_mut().unwrap());
        let blocks = (0..config.layers)
            .map(|_| EncoderBlock::new(rng, d, config.ffn_mult))
            .collect();
        let head = Linear::new(rng, d, config.embed_dim);
        Ok(TransformerParams {
            config,
            patch_embed,
            cls_token,
            freq_pos,
            time_pos,
            blocks,
            final_norm: LayerNorm::new(d),
            head,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Embeds one spectrogram; eval-mode calls are deterministic.
    pub fn embed<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, T>,
        cfg: &PatchoutConfig,
        rng: &mut R,
    ) -> Result<Array1<T>> {
        Ok(self.forward(x, cfg, rng)?.0)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, T>,
        cfg: &PatchoutConfig,
        rng: &mut R,
    ) -> Result<(Array1<T>, TransformerCache<T>)> {
        let grid = structured_patchout(patchify(x, self)?, cfg, rng)?;
        Ok(self.forward_tokens(grid))
    }

    /// Runs the encoder on an already-built token grid.
    pub fn forward_tokens(&self, grid: PatchGrid<T>) -> (Array1<T>, TransformerCache<T>) {
        let d = self.config.dim;
        let mut seq = Array2::zeros((grid.len() + 1, d));
        seq.row_mut(0).assign(&self.cls_token);
        seq.slice_mut(s![1.., ..]).assign(&grid.tokens);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(seq.view(), self.config.heads);
            seq = y;
            caches.push(c);
        }
        let (cls_out, final_norm) = self.final_norm.forward(seq.slice(s![0..1, ..]));
        let emb = self.head.forward(cls_out.view()).row(0).to_owned();
        let cache = TransformerCache {
            grid,
            blocks: caches,
            final_norm,
            cls_out,
        };
        (emb, cache)
    }

    /// Accumulates parameter gradients for `dL/d(embedding)`.
    pub fn backward(&self, cache: &TransformerCache<T>, demb: &Array1<T>, grad: &mut TransformerParams<T>) {
        let d = self.config.dim;
        let demb = demb.view().insert_axis(Axis(0));
        let dcls = self.head.backward(cache.cls_out.view(), demb, &mut grad.head);
        let dcls = self
            .final_norm
            .backward(&cache.final_norm, dcls.view(), &mut grad.final_norm);
        let mut dseq = Array2::zeros((cache.grid.len() + 1, d));
        dseq.row_mut(0).assign(&dcls.row(0));
        for ((block, bc), bg) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grad.blocks.iter_mut())
            .rev()
        {
            dseq = block.backward(bc, dseq.view(), self.config.heads, bg);
        }
        grad.cls_token += &dseq.row(0);
        let dtokens = dseq.slice(s![1.., ..]);
        for (&(r, c), row) in cache.grid.positions.iter().zip(dtokens.axis_iter(Axis(0))) {
            let mut fr = grad.freq_pos.row_mut(r);
            fr += &row;
            let mut tc = grad.time_pos.row_mut(c);
            tc += &row;
        }
        self.patch_embed
            .backward_params(cache.grid.patches.view(), dtokens, &mut grad.patch_embed);
    }

    /// Training forward over a batch. Each sample draws its patchout from
    /// its own seed so the result does not depend on the thread count.
    pub fn forward_batch(
        &self,
        xs: &[ArrayView2<'_, T>],
        seeds: &[u64],
        cfg: &PatchoutConfig,
    ) -> Result<(Array2<T>, Vec<TransformerCache<T>>)> {
        let outputs: Vec<(Array1<T>, TransformerCache<T>)> = xs
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(x, &seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.forward(*x, cfg, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut embs = Array2::zeros((xs.len(), self.config.embed_dim));
        let mut caches = Vec::with_capacity(outputs.len());
        for (i, (e, c)) in outputs.into_iter().enumerate() {
            embs.row_mut(i).assign(&e);
            caches.push(c);
        }
        Ok((embs, caches))
    }

    /// Backward over a batch; per-sample gradients are reduced in sample order.
    pub fn backward_batch(
        &self,
        caches: &[TransformerCache<T>],
        demb: ArrayView2<'_, T>,
        grad: &mut TransformerParams<T>,
    ) {
        let rows: Vec<Array1<T>> = demb.axis_iter(Axis(0)).map(|r| r.to_owned()).collect();
        let parts: Vec<TransformerParams<T>> = caches
            .par_iter()
            .zip(rows.par_iter())
            .map(|(c, d)| {
                let mut g = nn::zeros_like(self);
                self.backward(c, d, &mut g);
                g
            })
            .collect();
        for g in &parts {
            nn::accumulate(grad, g);
        }
    }
}

/// Cuts `x` (`f x t`) into non-overlapping patches, projects them and adds
/// positional vectors.
pub fn patchify<T: Real>(x: ArrayView2<'_, T>, params: &TransformerParams<T>) -> Result<PatchGrid<T>> {
    let cfg = &params.config;
    let (f, t) = x.dim();
    let (pf, pt) = (cfg.patch_freq, cfg.patch_time);
    if f < pf || t < pt {
        return Err(Error::shape(format!(
            "spectrogram {f}x{t} is smaller than one {pf}x{pt} patch"
        )));
    }
    let (gf, gt) = (f / pf, t / pt);
    if gf > cfg.max_freq_patches || gt > cfg.max_time_patches {
        return Err(Error::shape(format!(
            "patch grid {gf}x{gt} exceeds positional tables {}x{}",
            cfg.max_freq_patches, cfg.max_time_patches
        )));
    }
    let mut patches = Array2::zeros((gf * gt, pf * pt));
    let mut positions = Vec::with_capacity(gf * gt);
    for r in 0..gf {
        for c in 0..gt {
            let idx = r * gt + c;
            let block = x.slice(s![r * pf..(r + 1) * pf, c * pt..(c + 1) * pt]);
            for (dst, &v) in patches.row_mut(idx).iter_mut().zip(block.iter()) {
                *dst = v;
            }
            positions.push((r, c));
        }
    }
    let mut tokens = params.patch_embed.forward(patches.view());
    for (mut tok, &(r, c)) in tokens.axis_iter_mut(Axis(0)).zip(&positions) {
        tok += &params.freq_pos.row(r);
        tok += &params.time_pos.row(c);
    }
    Ok(PatchGrid {
        tokens,
        patches,
        positions,
        grid_shape: (gf, gt),
        patch_size: (pf, pt),
    })
}

/// Removes `n_freq_drop` grid rows and `n_time_drop` grid columns, chosen
/// uniformly without replacement. Identity in eval mode.
pub fn structured_patchout<T: Real, R: Rng + ?Sized>(
    grid: PatchGrid<T>,
    cfg: &PatchoutConfig,
    rng: &mut R,
) -> Result<PatchGrid<T>> {
    if cfg.mode == Mode::Eval || (cfg.n_freq_drop == 0 && cfg.n_time_drop == 0) {
        return Ok(grid);
    }
    let (gf, gt) = grid.grid_shape;
    if cfg.n_freq_drop >= gf || cfg.n_time_drop >= gt {
        return Err(Error::Config(format!(
            "patchout drops {} rows / {} columns from a {gf}x{gt} grid",
            cfg.n_freq_drop, cfg.n_time_drop
        )));
    }
    let mut drop_row = vec![false; gf];
    for i in sample(rng, gf, cfg.n_freq_drop).into_iter() {
        drop_row[i] = true;
    }
    let mut drop_col = vec![false; gt];
    for i in sample(rng, gt, cfg.n_time_drop).into_iter() {
        drop_col[i] = true;
    }
    let keep: Vec<usize> = grid
        .positions
        .iter()
        .enumerate()
        .filter(|(_, &(r, c))| !drop_row[r] && !drop_col[c])
        .map(|(i, _)| i)
        .collect();
    Ok(PatchGrid {
        tokens: grid.tokens.select(Axis(0), &keep),
        patches: grid.patches.select(Axis(0), &keep),
        positions: keep.iter().map(|&i| grid.positions[i]).collect(),
        grid_shape: grid.grid_shape,
        patch_size: grid.patch_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> TransformerConfig {
        TransformerConfig {
            patch_freq: 2,
            patch_time: 2,
            dim: 8,
            heads: 2,
            layers: 1,
            ffn_mult: 4,
            max_freq_patches: 4,
            max_time_patches: 8,
            embed_dim: 6,
        }
    }

    fn model(config: TransformerConfig, seed: u64) -> TransformerParams<f64> {
        TransformerParams::new(&mut ChaCha8Rng::seed_from_u64(seed), config).unwrap()
    }

    #[test]
    fn grid_shape_uses_floor_division() {
        let cfg = TransformerConfig {
            dim: 8,
            heads: 2,
            layers: 0,
            embed_dim: 4,
            ..TransformerConfig::full()
        };
        let m = model(cfg, 0);
        let g = patchify(Array2::<f64>::zeros((128, 100)).view(), &m).unwrap();
        assert_eq!(g.grid_shape, (8, 6));
        assert_eq!(g.len(), 48);
        let g = patchify(Array2::<f64>::zeros((16, 16)).view(), &m).unwrap();
        assert_eq!(g.len(), 1);
        assert!(patchify(Array2::<f64>::zeros((15, 40)).view(), &m).is_err());
    }

    #[test]
    fn zero_input_tokens_equal_positional_vectors() {
        let mut m = model(tiny(), 1);
        m.patch_embed.bias.fill(0.0);
        let g = patchify(Array2::<f64>::zeros((4, 6)).view(), &m).unwrap();
        for (tok, &(r, c)) in g.tokens.axis_iter(Axis(0)).zip(&g.positions) {
            let expect = &m.freq_pos.row(r) + &m.time_pos.row(c);
            assert_eq!(tok, expect);
        }
    }

    #[test]
    fn patches_are_flattened_frequency_major() {
        let m = model(tiny(), 2);
        let x = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64);
        let g = patchify(x.view(), &m).unwrap();
        // patch at grid (1, 0) covers rows 2..4, columns 0..2
        assert_eq!(g.patches.row(2).to_vec(), vec![8.0, 9.0, 12.0, 13.0]);
    }

    #[test]
    fn patchout_counts_and_determinism() {
        let cfg = TransformerConfig {
            patch_freq: 16,
            patch_time: 16,
            max_freq_patches: 8,
            max_time_patches: 8,
            ..tiny()
        };
        let m = model(cfg, 3);
        let x = Array2::from_shape_fn((128, 96), |(i, j)| ((i + 2 * j) % 7) as f64);
        let grid = patchify(x.view(), &m).unwrap();
        assert_eq!(grid.grid_shape, (8, 6));
        let po = PatchoutConfig {
            n_freq_drop: 2,
            n_time_drop: 1,
            mode: Mode::Train,
        };
        let a = structured_patchout(grid.clone(), &po, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.len(), 30);
        let b = structured_patchout(grid.clone(), &po, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.positions, b.positions);
        let e = structured_patchout(grid.clone(), &po.with_mode(Mode::Eval), &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(e, grid);
        let too_many = PatchoutConfig {
            n_freq_drop: 8,
            ..po
        };
        assert!(structured_patchout(grid, &too_many, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }

    #[test]
    fn eval_embedding_is_deterministic_and_has_embed_dim() {
        let m = model(tiny(), 4);
        let x = Array2::from_shape_fn((6, 10), |(i, j)| (i as f64 * 0.3 - j as f64 * 0.1).sin());
        let po = PatchoutConfig::eval();
        let a = m.embed(x.view(), &po, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = m.embed(x.view(), &po, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_is_invariant_to_token_order() {
        let m = model(tiny(), 6);
        let x = Array2::from_shape_fn((8, 12), |(i, j)| ((i * 5 + j * 3) % 11) as f64 * 0.2 - 1.0);
        let grid = patchify(x.view(), &m).unwrap();
        let (a, _) = m.forward_tokens(grid.clone());
        let n = grid.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let shuffled = PatchGrid {
            tokens: grid.tokens.select(Axis(0), &perm),
            patches: grid.patches.select(Axis(0), &perm),
            positions: perm.iter().map(|&i| grid.positions[i]).collect(),
            ..grid
        };
        let (b, _) = m.forward_tokens(shuffled);
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn token_count_after_patchout(
            gf in 1usize..9, gt in 1usize..9, pf in 1usize..4, pt in 1usize..4,
            extra_f in 0usize..3, extra_t in 0usize..3, df in 0usize..8, dt in 0usize..8, seed in 0u64..1000,
        ) {
            let (df, dt) = (df % gf, dt % gt);
            let cfg = TransformerConfig {
                patch_freq: pf,
                patch_time: pt,
                dim: 2,
                heads: 1,
                layers: 0,
                ffn_mult: 1,
                max_freq_patches: 8,
                max_time_patches: 8,
                embed_dim: 1,
            };
            let m = TransformerParams::<f64>::new(&mut ChaCha8Rng::seed_from_u64(seed), cfg).unwrap();
            let x = Array2::<f64>::zeros((gf * pf + extra_f.min(pf - 1), gt * pt + extra_t.min(pt - 1)));
            let grid = patchify(x.view(), &m).unwrap();
            prop_assert_eq!(grid.len(), gf * gt);
            let po = PatchoutConfig { n_freq_drop: df, n_time_drop: dt, mode: Mode::Train };
            let out = structured_patchout(grid, &po, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.len(), (gf - df) * (gt - dt));
            let (_, cache) = m.forward_tokens(out);
            // class token plus the surviving patches
            prop_assert_eq!(cache.blocks.len(), 0);
            prop_assert_eq!(cache.grid.len() + 1, (gf - df) * (gt - dt) + 1);
        }
    }
}
