//! Portable single-file weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OEENC1" | version: u32 | header_len: u32 | header (JSON, UTF-8)
//! repeated tensor_count times:
//!     name_len: u32 | name | rank: u32 | dims: u32 * rank | data: f32 * prod(dims)
//! crc32: u32   (over every preceding byte)
//! ```

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, WeightError};
use crate::model::ModelConfig;

pub const MAGIC: &[u8; 6] = b"OEENC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub config: ModelConfig,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    tensor_count: usize,
}

impl WeightBundle {
    /// Fails on duplicate tensor names.
    pub fn new(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self, WeightError> {
        let mut index = HashMap::with_capacity(tensors.len());
        for (i, t) in tensors.iter().enumerate() {
            if index.insert(t.name.clone(), i).is_some() {
                return Err(WeightError::Duplicate(t.name.clone()));
            }
        }
        Ok(Self {
            config,
            tensors,
            index,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    /// Drops a tensor, returning it if present.
    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let i = self.index.remove(name)?;
        let t = self.tensors.remove(i);
        for v in self.index.values_mut() {
            if *v > i {
                *v -= 1;
            }
        }
        Some(t)
    }

    /// Checks that every tensor required by `config` is present with the
    /// expected shape.
    pub fn validate(&self) -> Result<(), WeightError> {
        for (name, shape) in self.config.tensor_layout() {
            let t = self
                .get(&name)
                .ok_or_else(|| WeightError::MissingTensor(name.clone()))?;
            if t.shape != shape {
                return Err(WeightError::Shape {
                    name,
                    expected: shape,
                    found: t.shape.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn save_weights(bundle: &WeightBundle, mut sink: impl Write) -> Result<(), WeightError> {
    let bytes = encode(bundle);
    sink.write_all(&bytes)
        .map_err(|e| WeightError::Malformed(format!("write failed: {e}")))
}

pub fn load_weights(mut source: impl Read) -> Result<WeightBundle, WeightError> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| WeightError::Malformed(format!("read failed: {e}")))?;
    let bundle = decode(&bytes)?;
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_weights_file(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(bundle)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_weights_file(path: impl AsRef<Path>) -> Result<WeightBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bundle = decode(&bytes)?;
    bundle.validate()?;
    Ok(bundle)
}

pub fn encode(bundle: &WeightBundle) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        config: bundle.config.clone(),
        tensor_count: bundle.tensors.len(),
    })
    .expect("header serialization cannot fail");

    let payload: usize = bundle.tensors.iter().map(|t| t.data.len() * 4).sum();
    let mut out = Vec::with_capacity(payload + header.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &bundle.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a container without checking tensor completeness.
pub fn decode(bytes: &[u8]) -> Result<WeightBundle, WeightError> {
    let magic_len = MAGIC.len().min(bytes.len());
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(WeightError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(WeightError::Checksum);
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(WeightError::UnsupportedVersion(version));
    }
    if bytes.len() < MAGIC.len() + 12 {
        return Err(WeightError::Checksum);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(WeightError::Checksum);
    }

    let mut r = Cursor {
        buf: body,
        pos: MAGIC.len() + 4,
    };
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| WeightError::Malformed(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(WeightError::Malformed("header version disagrees".into()));
    }

    let mut tensors = Vec::with_capacity(header.tensor_count);
    for _ in 0..header.tensor_count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| WeightError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| WeightError::Malformed(format!("`{name}` size overflows")))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| {
            WeightError::Malformed(format!("`{name}` size overflows"))
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != body.len() {
        return Err(WeightError::Malformed("trailing bytes after tensors".into()));
    }
    WeightBundle::new(header.config, tensors)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| WeightError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Seeded initialization, every entry uniform in `[-1/sqrt(D), 1/sqrt(D)]`.
pub fn random_weights(cfg: &ModelConfig, seed: u64) -> Result<WeightBundle> {
    cfg.validate()?;
    let bound = 1.0 / (cfg.d_model as f32).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = cfg
        .tensor_layout()
        .into_iter()
        .map(|(name, shape)| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor { name, shape, data }
        })
        .collect();
    Ok(WeightBundle::new(cfg.clone(), tensors)?)
}

/// Names present in `bundle` but not part of its configured layout.
pub fn unexpected_tensors(bundle: &WeightBundle) -> Vec<String> {
    let known: HashSet<String> = bundle
        .config
        .tensor_layout()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    bundle
        .tensors
        .iter()
        .filter(|t| !known.contains(&t.name))
        .map(|t| t.name.clone())
        .collect()
}
