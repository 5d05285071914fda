//! Binary spectrogram cache: magic, format version, `f` and `t` as u32, then
//! `f * t` little-endian f32 values in frequency-major order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};

pub const SPECTROGRAM_MAGIC: [u8; 4] = *b"ZSMS";
pub const SPECTROGRAM_VERSION: u32 = 1;

pub fn encode_spectrogram(values: &Array2<f32>) -> Vec<u8> {
    let (f, t) = values.dim();
    let mut out = Vec::with_capacity(16 + 4 * f * t);
    out.extend_from_slice(&SPECTROGRAM_MAGIC);
    out.extend_from_slice(&SPECTROGRAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_spectrogram(bytes: &[u8]) -> Result<Array2<f32>> {
    let bad = |d: &str| Error::format("spectrogram cache", d.to_string());
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    if bytes[..4] != SPECTROGRAM_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != SPECTROGRAM_VERSION {
        return Err(Error::Version(version));
    }
    let (f, t) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != 4 * f * t {
        return Err(bad("payload length does not match header"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((f, t), values).map_err(|e| bad(&e.to_string()))
}

pub fn save_spectrogram(path: impl AsRef<Path>, spec: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_spectrogram(&spec.values))
        .map_err(|e| Error::io(path, e))
}

/// Loads a cached spectrogram; the mel configuration is supplied by the caller.
pub fn load_spectrogram(path: impl AsRef<Path>, config: &MelConfig) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let values = decode_spectrogram(&bytes)?;
    if values.nrows() != config.n_mels {
        return Err(Error::dim("cached spectrogram mel bins", config.n_mels, values.nrows()));
    }
    Ok(MelSpectrogram {
        values,
        config: config.clone(),
    })
}
