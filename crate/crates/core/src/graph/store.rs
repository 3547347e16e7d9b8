//! Named weight tensors and the RNW1 container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RNW1" | u32 count | count x ( u16 name_len | name (UTF-8) | u8 rank |
//!                                rank x u32 extent | prod(extents) x f32 )
//! ```
//!
//! Metadata travels as reserved tensors: `meta/mean` (3 values),
//! `meta/eps` (1 value), `meta/channel_order` (1 value, 0 = RGB, 1 = BGR)
//! and the optional `meta/arch` (see [`Arch`]).

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, LoadError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RNW1";
pub const META_PREFIX: &str = "meta/";
pub const META_MEAN: &str = "meta/mean";
pub const META_EPS: &str = "meta/eps";
pub const META_CHANNEL_ORDER: &str = "meta/channel_order";
pub const META_ARCH: &str = "meta/arch";

pub const DEFAULT_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Topology a container was produced for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    ResNet50,
    Tiny,
    /// The tiny fixture with every rectifier removed.
    TinyLinear,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::ResNet50 => "resnet50",
            Arch::Tiny => "tiny",
            Arch::TinyLinear => "tiny-linear",
        }
    }

    fn code(self) -> f32 {
        match self {
            Arch::ResNet50 => 0.0,
            Arch::Tiny => 1.0,
            Arch::TinyLinear => 2.0,
        }
    }

    fn from_code(v: f32) -> Option<Self> {
        match v {
            0.0 => Some(Arch::ResNet50),
            1.0 => Some(Arch::Tiny),
            2.0 => Some(Arch::TinyLinear),
            _ => None,
        }
    }
}

/// Insertion-ordered map from tensor name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: IndexMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(LoadError::DuplicateName(name).into());
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Replace an existing entry, or append it.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of entries including metadata.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of non-metadata tensors.
    pub fn weight_count(&self) -> usize {
        self.entries.keys().filter(|k| !k.starts_with(META_PREFIX)).count()
    }

    pub fn mean(&self) -> [f32; 3] {
        match self.get(META_MEAN).map(Tensor::data) {
            Some(&[r, g, b]) => [r, g, b],
            _ => [0.0; 3],
        }
    }

    pub fn eps(&self) -> f32 {
        self.get(META_EPS)
            .and_then(|t| t.data().first().copied())
            .unwrap_or(DEFAULT_EPS)
    }

    pub fn channel_order(&self) -> ChannelOrder {
        match self.get(META_CHANNEL_ORDER).and_then(|t| t.data().first().copied()) {
            Some(1.0) => ChannelOrder::Bgr,
            _ => ChannelOrder::Rgb,
        }
    }

    /// Declared topology; containers without the tag are full ResNet-50 exports.
    pub fn arch(&self) -> Result<Arch> {
        match self.get(META_ARCH).and_then(|t| t.data().first().copied()) {
            None => Ok(Arch::ResNet50),
            Some(v) => Arch::from_code(v).ok_or_else(|| Error::Build(format!("unknown {META_ARCH} value {v}"))),
        }
    }

    pub fn set_metadata(&mut self, mean: [f32; 3], eps: f32, order: ChannelOrder) {
        self.set(META_MEAN, Tensor::vector(&mean).expect("rank-1"));
        self.set(META_EPS, Tensor::vector(&[eps]).expect("rank-1"));
        let code = match order {
            ChannelOrder::Rgb => 0.0,
            ChannelOrder::Bgr => 1.0,
        };
        self.set(META_CHANNEL_ORDER, Tensor::vector(&[code]).expect("rank-1"));
    }

    pub fn set_arch(&mut self, arch: Arch) {
        self.set(META_ARCH, Tensor::vector(&[arch.code()]).expect("rank-1"));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.entries.values().map(|t| t.len() * 4 + 4 * t.rank() + 3).sum();
        let mut out = Vec::with_capacity(8 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decode a whole container; nothing is returned unless every byte parses.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LoadError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| LoadError::BadMagic)? != MAGIC {
            return Err(LoadError::BadMagic);
        }
        let count = r.u32("tensor count")?;
        let mut entries = IndexMap::with_capacity(count.min(1 << 16) as usize);
        for i in 0..count {
            let len = r.u16(&format!("name length of tensor {i}"))? as usize;
            let name = std::str::from_utf8(r.take(len, &format!("name of tensor {i}"))?)
                .map_err(|_| LoadError::InvalidName)?
                .to_owned();
            let rank = r.take(1, &format!("rank of `{name}`"))?[0];
            if !(1..=4).contains(&rank) {
                return Err(LoadError::BadRank { name, rank });
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.u32(&format!("extents of `{name}`"))? as usize);
            }
            if shape.contains(&0) {
                return Err(LoadError::ZeroExtent(name));
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| LoadError::Truncated(format!("data of `{name}`")))?;
            let raw = r.take(n, &format!("data of `{name}`"))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(LoadError::NonFinite(name));
            }
            if entries.contains_key(&name) {
                return Err(LoadError::DuplicateName(name));
            }
            let tensor = Tensor::from_vec(&shape, data).expect("extents validated above");
            entries.insert(name, tensor);
        }
        if r.pos != bytes.len() {
            return Err(LoadError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(WeightStore { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], LoadError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| LoadError::Truncated(what.to_owned()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, LoadError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, LoadError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(WeightStore::from_bytes(&bytes)?)
}

pub fn write_weights(path: impl AsRef<Path>, store: &WeightStore) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}
