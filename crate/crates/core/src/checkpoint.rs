//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `b"ZSCK"`, `u32` version, `u32`+bytes kind, `u32`+bytes JSON metadata,
//! `u32` tensor count, then per tensor `u32`+bytes name, `u32` rank,
//! `u64` per dimension and the `f32` values in row-major order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::backbones::{BackboneConfig, ClassifierHead, EpochStats, PretrainModel, PretrainState};
use crate::crossmodal::{OptimizerState, ProjectionConfig, ProjectionParams, SelectionReport};
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::semantics::ClassId;

const MAGIC: &[u8; 4] = b"ZSCK";
pub const FORMAT_VERSION: u32 = 1;
pub const KIND_BACKBONE: &str = "backbone";
pub const KIND_PROJECTION: &str = "projection";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: Value) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            meta,
            tensors: Vec::new(),
        }
    }

    /// Appends trainable tensors followed by buffers, names prefixed.
    pub fn push_params<P: Params<f32> + ?Sized>(&mut self, prefix: &str, p: &P) {
        let mut push = |name: &str, shape: &[usize], data: &[f32]| {
            self.tensors.push(Tensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        };
        p.for_each(prefix, &mut push);
        p.for_each_buffer(prefix, &mut push);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Fills every tensor of `p` (trainable and buffers) from the checkpoint.
    pub fn load_params<P: Params<f32> + ?Sized>(&self, prefix: &str, p: &mut P) -> Result<()> {
        let mut err = None;
        let mut fill = |name: &str, shape: &[usize], dst: &mut [f32]| {
            if err.is_some() {
                return;
            }
            match self.get(name) {
                None => err = Some(Error::format("checkpoint", format!("missing tensor `{name}`"))),
                Some(t) if t.shape != shape => {
                    err = Some(Error::shape(format!(
                        "checkpoint tensor `{name}` has shape {:?}, model expects {shape:?}",
                        t.shape
                    )))
                }
                Some(t) => dst.copy_from_slice(&t.data),
            }
        };
        p.for_each_mut(prefix, &mut fill);
        p.for_each_buffer_mut(prefix, &mut fill);
        err.map_or(Ok(()), Err)
    }

    pub fn push_optimizer(&mut self, state: &OptimizerState<f32>) {
        for (i, name) in state.names.iter().enumerate() {
            for (tag, buf) in [("m", &state.m[i]), ("v", &state.v[i])] {
                self.tensors.push(Tensor {
                    name: format!("adam.{tag}.{name}"),
                    shape: vec![buf.len()],
                    data: buf.clone(),
                });
            }
        }
    }

    /// Restores moments for the trainable tensors of `p`. Returns an empty
    /// state when the checkpoint carries none.
    pub fn load_optimizer<P: Params<f32> + ?Sized>(&self, p: &P, step: u64) -> Result<OptimizerState<f32>> {
        let mut names = Vec::new();
        p.for_each("", &mut |n, _, _| names.push(n.to_string()));
        if step == 0 || !self.tensors.iter().any(|t| t.name.starts_with("adam.")) {
            return Ok(OptimizerState::new());
        }
        let mut state = OptimizerState::new();
        for name in names {
            let m = self.get(&format!("adam.m.{name}"));
            let v = self.get(&format!("adam.v.{name}"));
            match (m, v) {
                (Some(m), Some(v)) => {
                    state.m.push(m.data.clone());
                    state.v.push(v.data.clone());
                    state.names.push(name);
                }
                _ => return Err(Error::format("checkpoint", format!("missing optimizer moments for `{name}`"))),
            }
        }
        state.step = step;
        Ok(state)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn meta_field<D: DeserializeOwned>(&self, key: &str) -> Result<D> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::format("checkpoint", format!("metadata lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::format("checkpoint", format!("metadata `{key}`: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &serde_json::to_string(&self.meta).expect("json value serializes"));
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let kind = r.string()?;
        let meta: Value = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::format("checkpoint", format!("metadata: {e}")))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format("checkpoint", format!("tensor `{name}` is too large")))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint { kind, meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint", "string is not UTF-8"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BackboneMeta {
    backbone: BackboneConfig,
    classes: Vec<ClassId>,
    epoch: usize,
    history: Vec<EpochStats>,
    optimizer_step: u64,
}

/// Writes a pretraining state with optimizer moments. `provenance` is
/// stored verbatim under `provenance`.
pub fn backbone_checkpoint(state: &PretrainState, provenance: Value) -> Checkpoint {
    let meta = BackboneMeta {
        backbone: state.model.backbone.config(),
        classes: state.classes.clone(),
        epoch: state.epoch,
        history: state.history.clone(),
        optimizer_step: state.optimizer.step,
    };
    let mut v = serde_json::to_value(meta).expect("metadata serializes");
    v["provenance"] = provenance;
    let mut ck = Checkpoint::new(KIND_BACKBONE, v);
    ck.push_params("", &state.model);
    ck.push_optimizer(&state.optimizer);
    ck
}

pub fn restore_backbone(ck: &Checkpoint) -> Result<PretrainState> {
    ck.expect_kind(KIND_BACKBONE)?;
    let meta: BackboneMeta = serde_json::from_value(ck.meta.clone())
        .map_err(|e| Error::format("checkpoint", format!("backbone metadata: {e}")))?;
    meta.backbone.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let backbone = meta.backbone.build::<f32, _>(&mut rng)?;
    let head = ClassifierHead::new(&mut rng, backbone.embed_dim(), meta.classes.len());
    let mut model = PretrainModel { backbone, head };
    ck.load_params("", &mut model)?;
    let optimizer = ck.load_optimizer(&model, meta.optimizer_step)?;
    Ok(PretrainState {
        model,
        optimizer,
        epoch: meta.epoch,
        history: meta.history,
        classes: meta.classes,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProjectionMeta {
    in_dim: usize,
    out_dim: usize,
    projection: ProjectionConfig,
    selection: Option<SelectionReport>,
}

pub fn projection_checkpoint(
    p: &ProjectionParams<f32>,
    selection: Option<&SelectionReport>,
    provenance: Value,
) -> Checkpoint {
    let meta = ProjectionMeta {
        in_dim: p.in_dim(),
        out_dim: p.out_dim(),
        projection: ProjectionConfig {
            hidden: p.hidden.out_dim(),
            dropout: p.dropout,
        },
        selection: selection.cloned(),
    };
    let mut v = serde_json::to_value(meta).expect("metadata serializes");
    v["provenance"] = provenance;
    let mut ck = Checkpoint::new(KIND_PROJECTION, v);
    ck.push_params("", p);
    ck
}

pub fn restore_projection(ck: &Checkpoint) -> Result<ProjectionParams<f32>> {
    ck.expect_kind(KIND_PROJECTION)?;
    let meta: ProjectionMeta = serde_json::from_value(ck.meta.clone())
        .map_err(|e| Error::format("checkpoint", format!("projection metadata: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = ProjectionParams::new(&mut rng, meta.in_dim, meta.out_dim, &meta.projection)?;
    ck.load_params("", &mut p)?;
    Ok(p)
}
