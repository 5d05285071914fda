//! Synthetic tone corpus with aligned word vectors.
//!
//! Classes cross `n_pitches` pitch levels with two timbres: class `i` has
//! pitch level `i / 2` and is `clean` for even `i` and `noisy` for odd `i`.
//! Every class is a harmonic tone whose fundamental sits at position `p_k`
//! in `[0, 1]` along the mel axis between `fmin_hz` and `fmax_hz`; noisy
//! classes add a band of random partials above the highest harmonic, so
//! pitch and timbre occupy disjoint mel bins.
//!
//! The label of class `i` is `pitchKK <timbre>`. The word vector of
//! `pitchKK` is a unit-norm Gaussian bump encoding of `p_k` over
//! `pitch_dims` evenly spaced centers, and the timbre words are
//! `timbre_weight`-scaled one-hot vectors in two extra dimensions. Small
//! Gaussian noise is added to every word vector. Classes sharing a pitch
//! word are the closest semantic neighbours, then classes of adjacent
//! pitch and equal timbre.
//!
//! `filler_words[i]` appends that many filler words to the label of class
//! `i`. Filler vectors are random unit vectors with no acoustic meaning,
//! so each one pulls the class embedding away from every other class and
//! away from what its audio predicts.

use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::classes::{ClassInfo, ClassRole, ClassSet, TagCountTable};
use super::manifest::{ClipRecord, DatasetManifest, Split};
use crate::dsp::mel::{hz_to_mel, mel_to_hz};
use crate::dsp::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::semantics::{parse_word_vectors, ClassId, VectorStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Pitch levels; the corpus has two classes per level.
    pub n_pitches: usize,
    pub clips_per_class: usize,
    /// Extra clips that each sum two distinct classes.
    pub n_multilabel: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    /// Harmonics per tone, with amplitudes falling as `1/h`.
    pub harmonics: usize,
    /// Frequency band of the noisy timbre's partials.
    pub noise_band_hz: [f64; 2],
    /// Peak amplitude of the noise band relative to the tone.
    pub noise_band_level: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Explicit per-level positions in `[0, 1]`; evenly spaced when absent.
    pub positions: Option<Vec<f64>>,
    /// Mel resolution used for the minimum-spacing check.
    pub n_mels: usize,
    pub noise_level: f64,
    /// Relative random detuning of each clip's fundamental.
    pub detune: f64,
    pub pitch_dims: usize,
    /// Width of the pitch bumps, in position units.
    pub pitch_width: f64,
    pub timbre_weight: f64,
    pub word_noise: f64,
    /// Filler words per class label; missing entries mean none.
    #[serde(default)]
    pub filler_words: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pitches: 6,
            clips_per_class: 40,
            n_multilabel: 24,
            clip_seconds: 0.5,
            sample_rate: 32_000,
            harmonics: 3,
            noise_band_hz: [9000.0, 13000.0],
            noise_band_level: 0.5,
            fmin_hz: 250.0,
            fmax_hz: 2500.0,
            positions: None,
            n_mels: 32,
            noise_level: 0.02,
            detune: 0.01,
            pitch_dims: 6,
            pitch_width: 0.15,
            timbre_weight: 0.3,
            word_noise: 0.02,
            filler_words: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn n_classes(&self) -> usize {
        2 * self.n_pitches
    }

    pub fn positions(&self) -> Vec<f64> {
        match &self.positions {
            Some(p) => p.clone(),
            None if self.n_pitches == 1 => vec![0.5],
            None => (0..self.n_pitches)
                .map(|i| i as f64 / (self.n_pitches - 1) as f64)
                .collect(),
        }
    }

    pub fn fundamental(&self, position: f64) -> f64 {
        let (lo, hi) = (hz_to_mel(self.fmin_hz), hz_to_mel(self.fmax_hz));
        mel_to_hz(lo + position * (hi - lo))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.n_pitches == 0 || self.clips_per_class == 0 || self.harmonics == 0 {
            return bad("pitch levels, clips per class and harmonics must be positive");
        }
        if self.clip_seconds <= 0.0 || self.sample_rate == 0 {
            return bad("clip length and sample rate must be positive");
        }
        if !(0.0 < self.fmin_hz && self.fmin_hz < self.fmax_hz) {
            return bad("need 0 < fmin_hz < fmax_hz");
        }
        let top = self.fmax_hz * self.harmonics as f64 * (1.0 + self.detune);
        let [lo, hi] = self.noise_band_hz;
        if !(top < lo && lo < hi && hi < self.sample_rate as f64 / 2.0) {
            return bad("need highest harmonic < noise band low edge < high edge < Nyquist frequency");
        }
        if !(self.noise_band_level >= 0.0) {
            return bad("noise_band_level must be non-negative");
        }
        if self.pitch_dims == 0 || self.pitch_width <= 0.0 {
            return bad("pitch encoding needs positive dims and width");
        }
        if self.filler_words.len() > self.n_classes() {
            return bad("filler_words lists more entries than classes");
        }
        if self.filler_words.iter().any(|&n| n > 26) {
            return bad("at most 26 filler words per class");
        }
        let pos = self.positions();
        if pos.len() != self.n_pitches {
            return bad("positions must list one value per pitch level");
        }
        if pos.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("positions must lie in [0, 1]");
        }
        let bin = hz_to_mel(self.sample_rate as f64 / 2.0) / (self.n_mels + 1) as f64;
        let mut mels: Vec<f64> = pos.iter().map(|&p| hz_to_mel(self.fundamental(p))).collect();
        mels.sort_by(f64::total_cmp);
        for w in mels.windows(2) {
            if w[1] - w[0] < bin {
                return Err(Error::Config(format!(
                    "synthetic corpus: fundamentals {:.1} Hz and {:.1} Hz are closer than one mel bin",
                    mel_to_hz(w[0]),
                    mel_to_hz(w[1])
                )));
            }
        }
        Ok(())
    }

    pub fn class_id(i: usize) -> ClassId {
        ClassId(format!("c{i:02}"))
    }

    pub fn pitch_level(i: usize) -> usize {
        i / 2
    }

    pub fn is_noisy(i: usize) -> bool {
        i % 2 == 1
    }

    fn fillers(&self, i: usize) -> Vec<String> {
        let n = self.filler_words.get(i).copied().unwrap_or(0);
        (0..n).map(|j| format!("filler{i:02}{}", (b'a' + j as u8) as char)).collect()
    }

    pub fn label(&self, i: usize) -> String {
        let timbre = if Self::is_noisy(i) { "noisy" } else { "clean" };
        let mut words = vec![format!("pitch{:02}", Self::pitch_level(i)), timbre.to_string()];
        words.extend(self.fillers(i));
        words.join(" ")
    }

    pub fn classes(&self) -> ClassSet {
        ClassSet {
            role: ClassRole::All,
            classes: (0..self.n_classes())
                .map(|i| ClassInfo {
                    id: Self::class_id(i),
                    label: self.label(i),
                })
                .collect(),
        }
    }
}

pub struct SynthCorpus {
    pub manifest: DatasetManifest,
    pub classes: ClassSet,
    pub store: VectorStore,
    pub manifest_path: PathBuf,
    pub vectors_path: PathBuf,
    pub counts_path: PathBuf,
}

fn pitch_encoding(cfg: &SynthConfig, p: f64) -> Vec<f64> {
    let k = cfg.pitch_dims;
    // centers extend one spacing past both ends so edge classes keep full bumps
    let v: Vec<f64> = (0..k)
        .map(|j| {
            let c = if k == 1 { 0.5 } else { -0.1 + 1.2 * j as f64 / (k - 1) as f64 };
            (-(p - c).powi(2) / (2.0 * cfg.pitch_width * cfg.pitch_width)).exp()
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Word-vector file contents (with a `count dim` header).
pub fn word_vectors_text(cfg: &SynthConfig, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11);
    let noise = Normal::new(0.0, cfg.word_noise.max(0.0)).expect("finite std");
    let dim = cfg.pitch_dims + 2;
    let mut lines = Vec::new();
    let mut emit = |word: String, mut v: Vec<f64>, rng: &mut ChaCha8Rng| {
        for x in v.iter_mut() {
            *x += noise.sample(rng);
        }
        let vals: Vec<String> = v.iter().map(|&x| format!("{}", x as f32)).collect();
        lines.push(format!("{word} {}", vals.join(" ")));
    };
    for (i, p) in cfg.positions().into_iter().enumerate() {
        let mut v = pitch_encoding(cfg, p);
        v.extend([0.0, 0.0]);
        emit(format!("pitch{i:02}"), v, &mut rng);
    }
    for (t, word) in ["clean", "noisy"].iter().enumerate() {
        let mut v = vec![0.0; dim];
        v[cfg.pitch_dims + t] = cfg.timbre_weight;
        emit(word.to_string(), v, &mut rng);
    }
    let unit = Normal::new(0.0, 1.0).expect("finite std");
    for i in 0..cfg.n_classes() {
        for word in cfg.fillers(i) {
            let v: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            emit(word, v.into_iter().map(|x| x / norm).collect(), &mut rng);
        }
    }
    format!("{} {dim}\n{}\n", lines.len(), lines.join("\n"))
}

/// Number of random partials making up the noise band.
const BAND_PARTIALS: usize = 24;

fn tone<R: Rng>(cfg: &SynthConfig, class: usize, f0: f64, rng: &mut R) -> Vec<f64> {
    let n = (cfg.clip_seconds * cfg.sample_rate as f64).round() as usize;
    let f = f0 * (1.0 + rng.gen_range(-cfg.detune..=cfg.detune));
    let sr = cfg.sample_rate as f64;
    let mut out = vec![0.0; n];
    let mut add = |freq: f64, amp: f64, phase: f64| {
        let w = std::f64::consts::TAU * freq / sr;
        for (t, o) in out.iter_mut().enumerate() {
            *o += amp * (w * t as f64 + phase).sin();
        }
    };
    for k in 1..=cfg.harmonics {
        let amp = rng.gen_range(0.7..1.0) / k as f64;
        add(k as f64 * f, amp, rng.gen_range(0.0..std::f64::consts::TAU));
    }
    if SynthConfig::is_noisy(class) {
        let [lo, hi] = cfg.noise_band_hz;
        let amp = cfg.noise_band_level / (BAND_PARTIALS as f64).sqrt();
        for _ in 0..BAND_PARTIALS {
            add(rng.gen_range(lo..hi), amp, rng.gen_range(0.0..std::f64::consts::TAU));
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let gain = rng.gen_range(0.3..0.8) / peak;
    out.iter_mut().for_each(|v| *v *= gain);
    out
}

fn finish<R: Rng>(cfg: &SynthConfig, mut x: Vec<f64>, rng: &mut R) -> Result<Waveform> {
    let noise = Normal::new(0.0, cfg.noise_level.max(0.0)).expect("finite std");
    for v in x.iter_mut() {
        *v = (*v + noise.sample(rng)).clamp(-1.0, 1.0);
    }
    Waveform::new(x.into_iter().map(|v| v as f32).collect(), cfg.sample_rate)
}

fn split_of(rank: usize, n: usize) -> Split {
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).round() as usize;
    if rank < n_train {
        Split::Train
    } else if rank < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Writes `audio/*.wav`, `manifest.jsonl`, `vectors.txt` and
/// `tag_counts.csv` under `dir`. Identical inputs give identical bytes.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<SynthCorpus> {
    cfg.validate()?;
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let fundamentals: Vec<f64> = (0..cfg.n_classes())
        .map(|i| cfg.fundamental(cfg.positions()[SynthConfig::pitch_level(i)]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (i, &f0) in fundamentals.iter().enumerate() {
        let mut order: Vec<usize> = (0..cfg.clips_per_class).collect();
        order.shuffle(&mut rng);
        for (j, &rank) in order.iter().enumerate() {
            let id = format!("c{i:02}_{j:03}");
            let x = tone(cfg, i, f0, &mut rng);
            let wave = finish(cfg, x, &mut rng)?;
            let rel = format!("audio/{id}.wav");
            write_wav(dir.join(&rel), &wave)?;
            records.push(ClipRecord {
                id,
                path: rel,
                tags: vec![SynthConfig::class_id(i)],
                split: split_of(rank, cfg.clips_per_class),
            });
        }
    }
    let mut order: Vec<usize> = (0..cfg.n_multilabel).collect();
    order.shuffle(&mut rng);
    for (j, &rank) in order.iter().enumerate() {
        let a = rng.gen_range(0..cfg.n_classes());
        let mut b = rng.gen_range(0..cfg.n_classes() - 1);
        if b >= a {
            b += 1;
        }
        let xa = tone(cfg, a, fundamentals[a], &mut rng);
        let xb = tone(cfg, b, fundamentals[b], &mut rng);
        let x = xa.iter().zip(&xb).map(|(u, v)| 0.6 * (u + v)).collect();
        let wave = finish(cfg, x, &mut rng)?;
        let id = format!("mix_{j:03}");
        let rel = format!("audio/{id}.wav");
        write_wav(dir.join(&rel), &wave)?;
        let mut tags = vec![SynthConfig::class_id(a), SynthConfig::class_id(b)];
        tags.sort();
        records.push(ClipRecord {
            id,
            path: rel,
            tags,
            split: split_of(rank, cfg.n_multilabel),
        });
    }
    let manifest = DatasetManifest::new(records, dir)?;
    let manifest_path = dir.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    let text = word_vectors_text(cfg, seed);
    let vectors_path = dir.join("vectors.txt");
    std::fs::write(&vectors_path, &text).map_err(|e| Error::io(&vectors_path, e))?;
    let store = parse_word_vectors(&text, &vectors_path.display().to_string())?;
    let classes = cfg.classes();
    let counts_path = dir.join("tag_counts.csv");
    TagCountTable::from_manifest(&manifest, &classes).save(&counts_path)?;
    Ok(SynthCorpus {
        manifest,
        classes,
        store,
        manifest_path,
        vectors_path,
        counts_path,
    })
}

/// Noiseless word vector of pitch level `level`, for oracle checks.
pub fn clean_pitch_vector(cfg: &SynthConfig, level: usize) -> Array1<f64> {
    Array1::from(pitch_encoding(cfg, cfg.positions()[level]))
}
