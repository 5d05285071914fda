use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::semantics::ClassId;

/// 64-bit FNV-1a, used to derive a stable per-class stream id.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct ClassQueue {
    clips: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ClassQueue {
    fn next(&mut self) -> usize {
        if self.pos == self.clips.len() {
            self.clips.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let c = self.clips[self.pos];
        self.pos += 1;
        c
    }
}

/// Endless round-robin over classes; each class pops from its own shuffled
/// queue of training clips, reshuffled whenever it runs dry. Yields indices
/// into the manifest's record list. Clips without any of the given classes
/// are never drawn.
pub struct BalancedSampler {
    queues: Vec<ClassQueue>,
    next_class: usize,
}

impl BalancedSampler {
    pub fn new(manifest: &DatasetManifest, classes: &[ClassId], split: Split, seed: u64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("balanced sampler needs at least one class".into()));
        }
        let queues = classes
            .iter()
            .map(|c| {
                let clips: Vec<usize> = manifest
                    .records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.split == split && r.tags.contains(c))
                    .map(|(i, _)| i)
                    .collect();
                if clips.is_empty() {
                    return Err(Error::EmptyClass(c.to_string()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stable_hash(c.as_str().as_bytes()));
                let pos = clips.len();
                Ok(ClassQueue { clips, pos, rng })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BalancedSampler { queues, next_class: 0 })
    }
}

impl Iterator for BalancedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let clip = self.queues[self.next_class].next();
        self.next_class = (self.next_class + 1) % self.queues.len();
        Some(clip)
    }
}
