//! Glue from manifest records to spectrograms, embeddings and zero-shot logits.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::backbones::Backbone;
use crate::crossmodal::{label_matrix, ProjectionParams};
use crate::dsp::{compute_logmel, load_spectrogram, load_wav, save_spectrogram, MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::protocol::{stable_hash, DatasetManifest};
use crate::semantics::SemanticEmbedding;

fn cache_path(dir: &Path, audio: &Path, cfg: &MelConfig) -> PathBuf {
    let key = format!(
        "{}|{}",
        audio.display(),
        serde_json::to_string(cfg).expect("mel config serializes")
    );
    dir.join(format!("{:016x}.zsms", stable_hash(key.as_bytes())))
}

/// Log-mel spectrogram of every record, in manifest order. With a cache
/// directory, spectrograms are read from or written to it.
pub fn load_spectrograms(
    manifest: &DatasetManifest,
    cfg: &MelConfig,
    cache_dir: Option<&Path>,
) -> Result<Vec<MelSpectrogram>> {
    cfg.validate()?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    manifest
        .records
        .par_iter()
        .map(|r| {
            let audio = manifest.audio_path(r);
            let cached = cache_dir.map(|d| cache_path(d, &audio, cfg));
            if let Some(p) = cached.as_ref().filter(|p| p.exists()) {
                return load_spectrogram(p, cfg);
            }
            let wave = load_wav(&audio, Some(cfg.sample_rate))?;
            let spec = compute_logmel(&wave, cfg)?;
            if let Some(p) = cached {
                save_spectrogram(&p, &spec)?;
            }
            Ok(spec)
        })
        .collect()
}

/// Inference embeddings, one row per entry of `indices`.
pub fn embed_clips(backbone: &Backbone<f32>, specs: &[MelSpectrogram], indices: &[usize]) -> Result<Array2<f32>> {
    let rows: Vec<_> = indices
        .par_iter()
        .map(|&i| backbone.embed(specs[i].values.view()))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((rows.len(), backbone.embed_dim()));
    for (mut dst, row) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&row);
    }
    Ok(out)
}

/// `clips x candidates` dot-product logits `pi(a)^T e_c`.
pub fn zero_shot_logits(
    projection: &ProjectionParams<f32>,
    embeddings: ArrayView2<'_, f32>,
    candidates: &[SemanticEmbedding],
) -> Result<Array2<f64>> {
    let e = label_matrix::<f32>(candidates)?;
    if e.ncols() != projection.out_dim() {
        return Err(Error::dim("label embedding", projection.out_dim(), e.ncols()));
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let (z, _) = projection.forward(embeddings, Mode::Eval, &mut rng)?;
    Ok(z.dot(&e.t()).mapv(f64::from))
}
