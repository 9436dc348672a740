//! Named parameter sets, seeded initialization and content digests.

use std::collections::BTreeMap;
use std::fmt;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 of a deterministic serialization of named arrays.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParameterDigest(pub [u8; 32]);

impl fmt::Display for ParameterDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ParameterDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParameterDigest({self})")
    }
}

/// Host-side copy of a tensor, used for checkpoints and digests.
#[derive(Debug, Clone, PartialEq)]
pub enum HostData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: HostData,
}

impl HostTensor {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.dims().to_vec();
        let flat = t.flatten_all()?;
        let data = match t.dtype() {
            DType::F32 => HostData::F32(flat.to_vec1()?),
            DType::F64 => HostData::F64(flat.to_vec1()?),
            other => return Err(Error::Config(format!("unsupported dtype {other:?}"))),
        };
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data: HostData::F64(data) }
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(match &self.data {
            HostData::F32(v) => Tensor::from_vec(v.clone(), self.shape.as_slice(), device)?,
            HostData::F64(v) => Tensor::from_vec(v.clone(), self.shape.as_slice(), device)?,
        })
    }

    pub fn dtype_tag(&self) -> u8 {
        match self.data {
            HostData::F32(_) => 0,
            HostData::F64(_) => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian bytes of the data.
    pub fn data_bytes(&self) -> Vec<u8> {
        match &self.data {
            HostData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            HostData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            HostData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            HostData::F64(v) => v.clone(),
        }
    }
}

/// Digest over `(name, dtype, shape, bytes)` records in name order.
pub fn digest_named<'a>(items: impl IntoIterator<Item = (&'a str, &'a HostTensor)>) -> ParameterDigest {
    let mut h = Sha256::new();
    for (name, t) in items {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update([t.dtype_tag()]);
        h.update((t.shape.len() as u64).to_le_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(t.data_bytes());
    }
    ParameterDigest(h.finalize().into())
}

/// Ordered map of trainable variables.
#[derive(Debug, Clone)]
pub struct ParamSet {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamSet {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self { vars: BTreeMap::new(), dtype, device: device.clone() }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Adds a variable filled uniformly in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn to_host(&self) -> Result<BTreeMap<String, HostTensor>> {
        self.vars.iter().map(|(k, v)| Ok((k.clone(), HostTensor::from_tensor(v.as_tensor())?))).collect()
    }

    pub fn digest(&self) -> Result<ParameterDigest> {
        let host = self.to_host()?;
        Ok(digest_named(host.iter().map(|(k, v)| (k.as_str(), v))))
    }

    /// Overwrites every variable from `host`; names and shapes must match.
    pub fn load_host(&self, host: &BTreeMap<String, HostTensor>) -> Result<()> {
        if host.len() != self.vars.len() {
            return Err(Error::ShapeMismatch(format!("expected {} parameters, found {}", self.vars.len(), host.len())));
        }
        for (name, var) in &self.vars {
            let src = host.get(name).ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))?;
            if src.shape != var.dims() {
                return Err(Error::ShapeMismatch(format!("{name}: expected {:?}, found {:?}", var.dims(), src.shape)));
            }
            var.set(&src.to_tensor(&self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copies values from another set with identical names and shapes.
    pub fn copy_from(&self, other: &ParamSet) -> Result<()> {
        self.load_host(&other.to_host()?)
    }
}

/// RNG used for parameter initialization.
pub fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
