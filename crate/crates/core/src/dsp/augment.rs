//! Training-time augmentations on log-mel spectrograms: mix-up, circular
//! time/frequency shifts, stripe masking and random gain.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::MelSpectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mixup: bool,
    /// Shape of the symmetric Beta distribution mix-up weights are drawn from.
    pub mixup_alpha: f64,
    pub n_time_masks: usize,
    pub n_freq_masks: usize,
    /// Upper bound of a mask's width in frames (time) or bins (frequency).
    pub max_mask_width: usize,
    pub max_time_shift: usize,
    pub max_freq_shift: usize,
    pub gain_range_db: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mixup: true,
            mixup_alpha: 0.3,
            n_time_masks: 2,
            n_freq_masks: 2,
            max_mask_width: 4,
            max_time_shift: 4,
            max_freq_shift: 1,
            gain_range_db: 6.0,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation switched off.
    pub fn none() -> Self {
        AugmentConfig {
            mixup: false,
            mixup_alpha: 0.3,
            n_time_masks: 0,
            n_freq_masks: 0,
            max_mask_width: 0,
            max_time_shift: 0,
            max_freq_shift: 0,
            gain_range_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain_range_db >= 0.0 && self.gain_range_db.is_finite()) {
            return Err(Error::Config("augment: gain_range_db must be >= 0".into()));
        }
        if self.mixup && !(self.mixup_alpha > 0.0) {
            return Err(Error::Config("augment: mixup_alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Draws a mix-up weight from `Beta(alpha, alpha)`.
pub fn sample_mixup_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    Beta::new(alpha, alpha)
        .expect("alpha validated positive")
        .sample(rng)
}

/// Convex combination of two examples and their targets.
pub fn mixup(
    a: &MelSpectrogram,
    b: &MelSpectrogram,
    ya: &[f32],
    yb: &[f32],
    lambda: f64,
) -> Result<(MelSpectrogram, Vec<f32>)> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::shape(format!(
            "mixup of {:?} and {:?} spectrograms",
            a.values.dim(),
            b.values.dim()
        )));
    }
    if ya.len() != yb.len() {
        return Err(Error::shape(format!(
            "mixup targets of length {} and {}",
            ya.len(),
            yb.len()
        )));
    }
    let l = lambda as f32;
    let values = &a.values * l + &b.values * (1.0 - l);
    let target = ya.iter().zip(yb).map(|(&p, &q)| l * p + (1.0 - l) * q).collect();
    Ok((
        MelSpectrogram {
            values,
            config: a.config.clone(),
        },
        target,
    ))
}

/// Circularly rolls columns so that column `t` moves to `t + shift`.
pub fn roll_time(x: &Array2<f32>, shift: isize) -> Array2<f32> {
    roll(x, shift, Axis(1))
}

/// Circularly rolls rows so that row `f` moves to `f + shift`.
pub fn roll_freq(x: &Array2<f32>, shift: isize) -> Array2<f32> {
    roll(x, shift, Axis(0))
}

fn roll(x: &Array2<f32>, shift: isize, axis: Axis) -> Array2<f32> {
    let n = x.len_of(axis) as isize;
    if n == 0 || shift.rem_euclid(n) == 0 {
        return x.clone();
    }
    let mut out = Array2::zeros(x.raw_dim());
    for (i, lane) in x.axis_iter(axis).enumerate() {
        let j = (i as isize + shift).rem_euclid(n) as usize;
        out.index_axis_mut(axis, j).assign(&lane);
    }
    out
}

/// Sets `width` frames starting at `start` to `fill`.
pub fn mask_time(x: &mut Array2<f32>, start: usize, width: usize, fill: f32) {
    x.slice_mut(s![.., start..start + width]).fill(fill);
}

/// Sets `width` bins starting at `start` to `fill`.
pub fn mask_freq(x: &mut Array2<f32>, start: usize, width: usize, fill: f32) {
    x.slice_mut(s![start..start + width, ..]).fill(fill);
}

fn shift_amount<R: Rng + ?Sized>(rng: &mut R, max: usize) -> isize {
    if max == 0 {
        0
    } else {
        rng.gen_range(-(max as isize)..=max as isize)
    }
}

/// Applies, in order: time roll, frequency roll, time masks, frequency
/// masks (filled with the spectrogram mean) and a random gain offset.
/// Mask widths are drawn uniformly from `1..=max_mask_width`.
pub fn apply_spec_augmentations<R: Rng + ?Sized>(
    x: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<MelSpectrogram> {
    let (f, t) = x.values.dim();
    let masking = cfg.n_time_masks + cfg.n_freq_masks > 0;
    if masking
        && ((cfg.n_time_masks > 0 && cfg.max_mask_width >= t)
            || (cfg.n_freq_masks > 0 && cfg.max_mask_width >= f))
    {
        return Err(Error::Config(format!(
            "augment: mask width {} must be smaller than the {f}x{t} spectrogram",
            cfg.max_mask_width
        )));
    }
    let mut values = roll_time(&x.values, shift_amount(rng, cfg.max_time_shift));
    values = roll_freq(&values, shift_amount(rng, cfg.max_freq_shift));
    if masking && cfg.max_mask_width > 0 {
        let fill = x.mean();
        for _ in 0..cfg.n_time_masks {
            let width = rng.gen_range(1..=cfg.max_mask_width);
            let start = rng.gen_range(0..=t - width);
            mask_time(&mut values, start, width, fill);
        }
        for _ in 0..cfg.n_freq_masks {
            let width = rng.gen_range(1..=cfg.max_mask_width);
            let start = rng.gen_range(0..=f - width);
            mask_freq(&mut values, start, width, fill);
        }
    }
    if cfg.gain_range_db > 0.0 {
        let db = rng.gen_range(-cfg.gain_range_db..=cfg.gain_range_db);
        let offset = (db * std::f64::consts::LN_10 / 10.0) as f32;
        values.mapv_inplace(|v| v + offset);
    }
    Ok(MelSpectrogram {
        values,
        config: x.config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::MelConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(f: usize, t: usize) -> MelSpectrogram {
        MelSpectrogram {
            values: Array2::from_shape_fn((f, t), |(i, j)| (i * 31 + j * 7) as f32 * 0.01 - 1.0),
            config: MelConfig::toy(),
        }
    }

    fn sorted(x: &Array2<f32>) -> Vec<f32> {
        let mut v: Vec<f32> = x.iter().cloned().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn mixup_examples() {
        let a = MelSpectrogram {
            values: Array2::from_elem((2, 2), 2.0),
            config: MelConfig::toy(),
        };
        let b = MelSpectrogram {
            values: Array2::from_elem((2, 2), 4.0),
            config: MelConfig::toy(),
        };
        let (m, y) = mixup(&a, &b, &[1.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(m.values, a.values);
        assert_eq!(y, vec![1.0, 0.0]);
        let (m, _) = mixup(&a, &b, &[1.0], &[0.0], 0.5).unwrap();
        assert!(m.values.iter().all(|&v| v == 3.0));
        let (_, y) = mixup(&a, &b, &[1.0, 0.0], &[1.0, 1.0], 0.25).unwrap();
        assert_eq!(y, vec![1.0, 0.75]);
        assert!(mixup(&a, &spec(3, 2), &[1.0], &[1.0], 0.5).is_err());
    }

    #[test]
    fn identity_config_is_bitwise_identity() {
        let x = spec(8, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = apply_spec_augmentations(&x, &AugmentConfig::none(), &mut rng).unwrap();
        assert_eq!(x.values, y.values);
    }

    #[test]
    fn single_time_mask_of_width_three() {
        let x = spec(8, 10);
        let mean = x.mean();
        let mut v = x.values.clone();
        mask_time(&mut v, 4, 3, mean);
        let masked: Vec<usize> = (0..10)
            .filter(|&c| v.column(c).iter().all(|&e| e == mean))
            .collect();
        assert_eq!(masked, vec![4, 5, 6]);
    }

    #[test]
    fn same_seed_same_output() {
        let x = spec(8, 12);
        let cfg = AugmentConfig::default();
        let a = apply_spec_augmentations(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = apply_spec_augmentations(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn gain_shifts_every_cell_by_one_offset() {
        let x = spec(4, 6);
        let cfg = AugmentConfig {
            gain_range_db: 10.0,
            ..AugmentConfig::none()
        };
        let y = apply_spec_augmentations(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let d = &y.values - &x.values;
        let first = d[[0, 0]];
        assert!(first.abs() <= (10.0 * std::f64::consts::LN_10 / 10.0) as f32 + 1e-6);
        assert!(d.iter().all(|&v| (v - first).abs() < 1e-5));
    }

    #[test]
    fn oversized_mask_is_rejected() {
        let cfg = AugmentConfig {
            n_time_masks: 1,
            max_mask_width: 10,
            ..AugmentConfig::none()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_spec_augmentations(&spec(16, 10), &cfg, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn rolls_preserve_the_multiset(shift in -30isize..30, f in 1usize..9, t in 1usize..13) {
            let x = spec(f, t);
            prop_assert_eq!(sorted(&roll_time(&x.values, shift)), sorted(&x.values));
            prop_assert_eq!(sorted(&roll_freq(&x.values, shift)), sorted(&x.values));
        }

        #[test]
        fn masks_touch_at_most_width_times_dimension(seed in 0u64..500, width in 1usize..5) {
            let x = spec(9, 11);
            let cfg = AugmentConfig {
                n_time_masks: 1,
                max_mask_width: width,
                ..AugmentConfig::none()
            };
            let y = apply_spec_augmentations(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let changed = x.values.iter().zip(y.values.iter()).filter(|(a, b)| a != b).count();
            prop_assert!(changed <= width * 9);
        }

        #[test]
        fn mixup_stays_between_inputs(lambda in 0.0f64..=1.0, seed in 0u64..100) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = MelSpectrogram { values: Array2::from_shape_fn((3, 4), |_| rng.gen_range(-5.0..5.0)), config: MelConfig::toy() };
            let b = MelSpectrogram { values: Array2::from_shape_fn((3, 4), |_| rng.gen_range(-5.0..5.0)), config: MelConfig::toy() };
            let (m, _) = mixup(&a, &b, &[0.0], &[1.0], lambda).unwrap();
            for ((&o, &p), &q) in m.values.iter().zip(a.values.iter()).zip(b.values.iter()) {
                prop_assert!(o >= p.min(q) - 1e-5 && o <= p.max(q) + 1e-5);
            }
        }
    }
}
