//! Binary checkpoint container.
//!
//! ```text
//! "SESCKPT\0" | version u32 | stage u8 | step u64
//! config_len u32 | config JSON
//! n_tensors u32 | { name_len u16 | name | dtype u8 | ndim u8 | dims u64… | data }
//! n_digests u32 | { name_len u16 | name | 32-byte digest }
//! SHA-256 of everything above
//! ```
//!
//! All integers are little-endian. Tensor data is raw little-endian f32/f64.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{digest_named, HostData, HostTensor, ParameterDigest};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SESCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors, grouped by the prefix before the first `/`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: u8,
    pub step: u64,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, HostTensor>,
    /// Digest of each parameter group at save time.
    pub digests: BTreeMap<String, ParameterDigest>,
}

impl Checkpoint {
    pub fn new(stage: u8, step: u64, config: serde_json::Value) -> Self {
        Self { stage, step, config, tensors: BTreeMap::new(), digests: BTreeMap::new() }
    }

    /// Adds tensors under `group/` and records the group digest.
    pub fn insert_group(&mut self, group: &str, tensors: impl IntoIterator<Item = (String, HostTensor)>) {
        for (name, t) in tensors {
            self.tensors.insert(format!("{group}/{name}"), t);
        }
        let d = self.group_digest(group);
        self.digests.insert(group.to_string(), d);
    }

    /// Tensors of a group with the prefix stripped.
    pub fn group(&self, group: &str) -> BTreeMap<String, HostTensor> {
        let prefix = format!("{group}/");
        self.tensors.iter().filter_map(|(k, v)| k.strip_prefix(&prefix).map(|n| (n.to_string(), v.clone()))).collect()
    }

    pub fn has_group(&self, group: &str) -> bool {
        let prefix = format!("{group}/");
        self.tensors.keys().any(|k| k.starts_with(&prefix))
    }

    /// Digest over a group's tensors (names without the prefix).
    pub fn group_digest(&self, group: &str) -> ParameterDigest {
        let g = self.group(group);
        digest_named(g.iter().map(|(k, v)| (k.as_str(), v)))
    }

    /// Recomputes every recorded digest.
    pub fn verify(&self) -> Result<()> {
        for (group, d) in &self.digests {
            if !self.has_group(group) {
                return Err(Error::Checkpoint(format!("digest for missing group {group}")));
            }
            if self.group_digest(group) != *d {
                return Err(Error::Checkpoint(format!("digest mismatch for {group}")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.stage);
        out.extend_from_slice(&self.step.to_le_bytes());
        let config = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&u32::try_from(config.len()).map_err(|_| too_big("config"))?.to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&u32::try_from(self.tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
        for (name, t) in &self.tensors {
            put_name(&mut out, name)?;
            out.push(t.dtype_tag());
            out.push(u8::try_from(t.shape.len()).map_err(|_| too_big("rank"))?);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.data_bytes());
        }
        out.extend_from_slice(&(self.digests.len() as u32).to_le_bytes());
        for (name, d) in &self.digests {
            put_name(&mut out, name)?;
            out.extend_from_slice(&d.0);
        }
        let sum: [u8; 32] = Sha256::digest(&out).into();
        out.extend_from_slice(&sum);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 {
            return Err(Error::Checkpoint(format!("{} bytes is too short", bytes.len())));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Checkpoint("file checksum mismatch (truncated or corrupt)".into()));
        }
        let mut r = Reader { b: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let stage = r.take(1)?[0];
        let step = r.u64()?;
        let clen = r.u32()? as usize;
        let config = serde_json::from_slice(r.take(clen)?)?;
        let n = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name = r.name()?;
            let tag = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let data = match tag {
                0 => HostData::F32(
                    r.take(count.checked_mul(4).ok_or_else(|| too_big("tensor"))?)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                1 => HostData::F64(
                    r.take(count.checked_mul(8).ok_or_else(|| too_big("tensor"))?)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                t => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {t}"))),
            };
            tensors.insert(name, HostTensor { shape, data });
        }
        let nd = r.u32()?;
        let mut digests = BTreeMap::new();
        for _ in 0..nd {
            let name = r.name()?;
            let d: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            digests.insert(name, ParameterDigest(d));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let ck = Self { stage, step, config, tensors, digests };
        ck.verify()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn too_big(what: &str) -> Error {
    Error::Checkpoint(format!("{what} too large"))
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    out.extend_from_slice(&u16::try_from(name.len()).map_err(|_| too_big("name"))?.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or_else(|| {
                Error::Checkpoint(format!("unexpected end of data at byte {} (need {n} more)", self.pos))
            })?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-utf8 name".into()))
    }
}
