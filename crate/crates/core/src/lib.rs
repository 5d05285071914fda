//! Zero-shot audio tagging and classification: log-mel features, audio
//! embedding backbones, a projection into a word-vector space and the
//! evaluation protocol around them.

pub mod backbones;
pub mod checkpoint;
pub mod crossmodal;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod pipeline;
pub mod protocol;
pub mod semantics;

pub use error::{Error, ErrorKind, Result};
pub use semantics::ClassId;

/// Version string embedded in every artifact.
pub const VERSION: &str = concat!("zsaudio ", env!("CARGO_PKG_VERSION"));
