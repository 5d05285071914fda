//! Waveform ingestion, log-mel features and spectrogram augmentations.

pub mod augment;
pub mod cache;
pub mod mel;
pub mod wav;

pub use augment::{apply_spec_augmentations, mixup, sample_mixup_lambda, AugmentConfig};
pub use cache::{load_spectrogram, save_spectrogram};
pub use mel::{compute_logmel, LogMelExtractor, MelConfig, MelFilterbank, MelSpectrogram};
pub use wav::{load_wav, write_wav, Waveform};
