//! Single-file checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "MSTNCKPT" | version u8 | fingerprint [u8; 32] | epoch u64
//! | count u32 | count × entry | sha256 of everything before [u8; 32]
//! entry = name_len u32 | name utf-8 | kind u8 | n c h w u64×4 | f32 × numel
//! ```
//!
//! `kind` is 0 for trainable parameters, 1 for normalization buffers and 2
//! for optimizer momentum (named after the parameter it belongs to).

use std::path::Path;

use mstnet_tensor::{Shape, Tensor};
use sha2::{Digest, Sha256};

use crate::model::Model;
use crate::train::Sgd;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MSTNCKPT";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Parameter,
    Buffer,
    Momentum,
}

impl EntryKind {
    fn tag(self) -> u8 {
        match self {
            EntryKind::Parameter => 0,
            EntryKind::Buffer => 1,
            EntryKind::Momentum => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(EntryKind::Parameter),
            1 => Ok(EntryKind::Buffer),
            2 => Ok(EntryKind::Momentum),
            _ => Err(Error::Checkpoint(format!("unknown entry kind {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: EntryKind,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub fingerprint: [u8; 32],
    pub epoch: u64,
    pub entries: Vec<CheckpointEntry>,
}

pub fn fingerprint_bytes(hex: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint(format!("malformed fingerprint '{hex}'"));
    if hex.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn fingerprint_hex(b: &[u8; 32]) -> String {
    b.iter().map(|v| format!("{v:02x}")).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("checkpoint is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl CheckpointRecord {
    pub fn empty(fingerprint: &str, epoch: u64) -> Result<Self> {
        Ok(CheckpointRecord { fingerprint: fingerprint_bytes(fingerprint)?, epoch, entries: Vec::new() })
    }

    /// Snapshot of model parameters, buffers and optimizer state.
    pub fn capture(model: &Model<f32>, sgd: &Sgd<f32>, epoch: usize, fingerprint: &str) -> Result<Self> {
        let mut rec = Self::empty(fingerprint, epoch as u64)?;
        for (_, e) in model.store.entries() {
            let kind = if e.trainable { EntryKind::Parameter } else { EntryKind::Buffer };
            rec.entries.push(CheckpointEntry { name: e.name.clone(), kind, tensor: e.value.clone() });
        }
        for (id, t) in sgd.state() {
            rec.entries.push(CheckpointEntry { name: model.store.name(id).to_string(), kind: EntryKind::Momentum, tensor: t.clone() });
        }
        Ok(rec)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.kind.tag());
            for d in e.tensor.shape().dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 1 + 32 + 8 + 4 + 32 {
            return Err(Error::Checkpoint("checkpoint is truncated".into()));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("integrity check failed: checkpoint is corrupted".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let epoch = r.u64()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?;
            let kind = EntryKind::from_tag(r.u8()?)?;
            let mut d = [0usize; 4];
            for v in d.iter_mut() {
                *v = r.u64()? as usize;
            }
            let shape = Shape::new(d[0], d[1], d[2], d[3]);
            let raw = r.take(shape.numel() * 4)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            entries.push(CheckpointEntry { name, kind, tensor: Tensor::from_vec(shape, data) });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after the last entry".into()));
        }
        Ok(CheckpointRecord { fingerprint, epoch, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn fingerprint_hex(&self) -> String {
        fingerprint_hex(&self.fingerprint)
    }

    /// Copies parameters and buffers into `model` after checking the
    /// fingerprint. Returns the optimizer state for resuming.
    pub fn restore(&self, model: &mut Model<f32>, expected_fingerprint: &str) -> Result<Sgd<f32>> {
        let found = self.fingerprint_hex();
        if found != expected_fingerprint {
            return Err(Error::FingerprintMismatch { expected: expected_fingerprint.to_string(), found });
        }
        let mut seen = 0;
        let mut state = Vec::new();
        for e in &self.entries {
            let id = model
                .store
                .id_of(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint tensor '{}' has no counterpart in the model", e.name)))?;
            match e.kind {
                EntryKind::Momentum => state.push((id, e.tensor.clone())),
                _ => {
                    model.store.set(id, e.tensor.clone())?;
                    seen += 1;
                }
            }
        }
        if seen != model.store.len() {
            return Err(Error::Checkpoint(format!("checkpoint holds {seen} of {} model tensors", model.store.len())));
        }
        let mut sgd = Sgd::new(0.0, 0.0);
        sgd.set_state(model.store.len(), state);
        Ok(sgd)
    }
}
