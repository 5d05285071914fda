//! Log-mel spectrogram extraction.
//!
//! Pipeline: periodic Hann window, power spectrum of each frame (FFT size
//! equals the window length, no centering or padding), a bank of
//! triangular filters with unit peak whose centers are equally spaced on
//! the HTK mel scale between `fmin` and `fmax`, then `ln(energy + log_floor)`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    /// Analysis window and FFT length in samples.
    pub window_len: usize,
    pub hop_len: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl MelConfig {
    /// 32 kHz, 800-sample window (25 ms), 320-sample hop (10 ms), 128 bins.
    pub fn full() -> Self {
        MelConfig {
            sample_rate: 32_000,
            window_len: 800,
            hop_len: 320,
            n_mels: 128,
            fmin: 0.0,
            fmax: 16_000.0,
            log_floor: 1e-5,
        }
    }

    /// Same framing as [`MelConfig::full`] with the 64 bins the
    /// fixed-window convnet expects.
    pub fn full_vggish() -> Self {
        MelConfig {
            n_mels: 64,
            ..Self::full()
        }
    }

    /// Reduced resolution used for desk-scale experiments.
    pub fn toy() -> Self {
        MelConfig {
            n_mels: 32,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return fail("mel: sample_rate must be positive".into());
        }
        if self.hop_len == 0 || self.window_len < self.hop_len {
            return fail(format!(
                "mel: need window_len >= hop_len > 0, got window {} hop {}",
                self.window_len, self.hop_len
            ));
        }
        if self.n_mels == 0 {
            return fail("mel: n_mels must be positive".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return fail(format!(
                "mel: need 0 <= fmin < fmax <= {nyquist}, got {}..{}",
                self.fmin, self.fmax
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return fail("mel: log_floor must be positive".into());
        }
        Ok(())
    }

    /// Number of frames produced for `n` input samples, or `None` when the
    /// input is shorter than one window.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        frame_count(n, self.window_len, self.hop_len)
    }
}

pub fn frame_count(n: usize, window: usize, hop: usize) -> Option<usize> {
    (n >= window && hop > 0).then(|| (n - window) / hop + 1)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Log-mel energies, `n_mels x frames`, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn mean(&self) -> f32 {
        (self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64) as f32
    }
}

/// Triangular mel filters, `n_mels x (n_fft/2 + 1)`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    /// Center frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_fft = cfg.window_len;
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / n_fft as f64;
        let mut weights = Array2::zeros((cfg.n_mels, n_bins));
        for m in 0..cfg.n_mels {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            for b in 0..n_bins {
                let f = b as f64 * bin_hz;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights[[m, b]] = w;
            }
        }
        MelFilterbank {
            weights,
            centers: points[1..=cfg.n_mels].to_vec(),
        }
    }
}

/// Reusable extractor holding the FFT plan, window and filterbank.
pub struct LogMelExtractor {
    config: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl LogMelExtractor {
    pub fn new(config: MelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.window_len;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let filterbank = MelFilterbank::new(&config);
        Ok(LogMelExtractor {
            config,
            fft,
            window,
            filterbank,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn compute(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        let cfg = &self.config;
        if wave.sample_rate != cfg.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: cfg.sample_rate,
                found: wave.sample_rate,
            });
        }
        if let Some(i) = wave.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        let frames = cfg.frame_count(wave.len()).ok_or_else(|| {
            Error::Data(format!(
                "input of {} samples is shorter than one {}-sample window",
                wave.len(),
                cfg.window_len
            ))
        })?;
        let n_fft = cfg.window_len;
        let n_bins = n_fft / 2 + 1;
        let mut values = Array2::<f32>::zeros((cfg.n_mels, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        for t in 0..frames {
            let start = t * cfg.hop_len;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(wave.samples[start + i] as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf[..n_bins]) {
                *p = c.norm_sqr();
            }
            for (m, row) in self.filterbank.weights.outer_iter().enumerate() {
                let energy: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                values[[m, t]] = (energy + cfg.log_floor).ln() as f32;
            }
        }
        Ok(MelSpectrogram {
            values,
            config: cfg.clone(),
        })
    }
}

/// One-shot log-mel computation; prefer [`LogMelExtractor`] for many clips.
pub fn compute_logmel(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    LogMelExtractor::new(cfg.clone())?.compute(wave)
}
