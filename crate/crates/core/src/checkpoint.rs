//! Binary checkpoint: magic, JSON header, then named little-endian f64 tensors.
//!
//! ```text
//! b"ENZCKPT1"
//! u64 header_len, header_len bytes of JSON
//! u64 tensor_count
//! per tensor: u32 name_len, name, u32 rank, rank × u64 dims, product(dims) × f64
//! ```
//!
//! Optimiser moments, when saved, are stored as extra tensors named
//! `adam.m/<param>` and `adam.v/<param>`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ec::EcTree;
use crate::model::{ModelConfig, ModelError, ParameterStore};
use crate::numerics::Tensor;
use crate::training::Adam;

const MAGIC: &[u8; 8] = b"ENZCKPT1";
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    tags: EcTree,
    step: u64,
    mlm_step: u64,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tags: EcTree,
    pub params: ParameterStore,
    pub step: u64,
    pub mlm_step: u64,
    pub adam: Option<Adam>,
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("need {n} bytes at offset {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Corrupt("length overflow".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let header = Header {
            config: self.config.clone(),
            tags: self.tags.clone(),
            step: self.step,
            mlm_step: self.mlm_step,
            adam: self.adam.as_ref().map(|a| AdamHeader {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                t: a.t,
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 8 * self.params.scalar_count() * 3);
        out.extend(MAGIC);
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(&json);
        let moments = self.adam.as_ref().map_or(0, |a| a.m.len() + a.v.len());
        out.extend(((self.params.len() + moments) as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            write_tensor(&mut out, name, t);
        }
        if let Some(a) = &self.adam {
            for (name, t) in a.m.iter() {
                write_tensor(&mut out, &format!("{M_PREFIX}{name}"), t);
            }
            for (name, t) in a.v.iter() {
                write_tensor(&mut out, &format!("{V_PREFIX}{name}"), t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(CheckpointError::BadMagic);
        }
        let hlen = r.len()?;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        header.config.validate()?;
        let count = r.len()?;
        let mut params = ParameterStore::default();
        let mut m = ParameterStore::default();
        let mut v = ParameterStore::default();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor `{name}` too large")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?)?;
            let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(format!("tensor `{name}`: {e}")))?;
            if let Some(base) = name.strip_prefix(M_PREFIX) {
                m.insert(base, t);
            } else if let Some(base) = name.strip_prefix(V_PREFIX) {
                v.insert(base, t);
            } else {
                params.insert(name, t);
            }
        }
        if r.at != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        params.check_against(&header.config)?;
        if header.tags.vocab_sizes() != header.config.tag_vocab {
            return Err(CheckpointError::Corrupt("tag tree does not match the configured tag vocabulary".into()));
        }
        let adam = match header.adam {
            None => None,
            Some(h) => {
                if m.len() != params.len() || v.len() != params.len() {
                    return Err(CheckpointError::Corrupt("optimiser moments do not cover every parameter".into()));
                }
                Some(Adam {
                    lr: h.lr,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                    t: h.t,
                    m,
                    v,
                })
            }
        };
        Ok(Self {
            config: header.config,
            tags: header.tags,
            params,
            step: header.step,
            mlm_step: header.mlm_step,
            adam,
        })
    }

    /// Write via a temporary sibling file and rename, so a crash never
    /// leaves a half-written checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| CheckpointError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Self::from_bytes(&bytes)
    }
}
