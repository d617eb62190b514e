//! Single-file checkpoints.
//!
//! ```text
//! magic      8 bytes   "TBLSTMCK"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON manifest (config, task, step, generator, optimizer, tensor table)
//! data       f64 LE values; the tensor table gives each tensor's byte offset
//!            into this section and its element count
//! checksum   SHA-256 of every preceding byte
//! ```
//!
//! Tensors are stored in parameter order, then the optimizer's first
//! moments (`adam.m/<name>`), then its second moments (`adam.v/<name>`).

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, AdamConfig};
use crate::config::ModelConfig;
use crate::model::TaskSpec;
use crate::params::{ParamStore, Rng};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TBLSTMCK";
pub const VERSION: u32 = 1;

const CHECKSUM_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

/// Position of a generator within its keystream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad generator position {:?}: {e}", self.word_pos)))?;
        let mut rng = Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    /// `None` for a pretraining checkpoint.
    pub task: Option<TaskSpec>,
    pub step: u64,
    pub rng: RngState,
    pub adam: AdamConfig,
    pub adam_t: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub task: Option<TaskSpec>,
    pub step: u64,
    pub rng: Rng,
    pub store: ParamStore,
    pub adam: Adam,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::with_capacity(3 * self.store.len());
        let mut data: Vec<u8> = Vec::new();
        let mut push = |name: String, shape: &[usize], values: &[f64]| {
            tensors.push(TensorEntry {
                name,
                shape: shape.to_vec(),
                offset: data.len() as u64,
                len: values.len() as u64,
            });
            for v in values {
                data.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, name, t) in self.store.iter() {
            push(name.to_string(), t.shape(), t.data());
        }
        for (k, (_, name, t)) in self.store.iter().enumerate() {
            push(format!("{M_PREFIX}{name}"), t.shape(), &self.adam.m[k]);
        }
        for (k, (_, name, t)) in self.store.iter().enumerate() {
            push(format!("{V_PREFIX}{name}"), t.shape(), &self.adam.v[k]);
        }
        let manifest = Manifest {
            config: self.config.clone(),
            task: self.task,
            step: self.step,
            rng: RngState::capture(&self.rng),
            adam: self.adam.config,
            adam_t: self.adam.t,
            tensors,
        };
        let header = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + data.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < PREAMBLE_LEN + CHECKSUM_LEN {
            return Err(bad(format!(
                "file is {} bytes, too short for a checkpoint",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(bad("checksum mismatch: file is truncated or corrupted".into()));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(PREAMBLE_LEN))
            .filter(|&end| end <= body.len())
            .ok_or_else(|| bad(format!("header length {header_len} exceeds file size")))?;
        let manifest: Manifest = serde_json::from_slice(&body[PREAMBLE_LEN..header_end])
            .map_err(|e| bad(format!("malformed manifest: {e}")))?;
        let data = &body[header_end..];

        let read = |e: &TensorEntry| -> Result<Tensor> {
            let start =
                usize::try_from(e.offset).map_err(|_| bad(format!("offset of {} overflows", e.name)))?;
            let n = usize::try_from(e.len).map_err(|_| bad(format!("length of {} overflows", e.name)))?;
            let end = n
                .checked_mul(8)
                .and_then(|b| b.checked_add(start))
                .filter(|&end| end <= data.len())
                .ok_or_else(|| bad(format!("tensor {} extends past the data section", e.name)))?;
            let values = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::new(e.shape.clone(), values).map_err(|err| bad(format!("tensor {}: {err}", e.name)))
        };

        let count = manifest.tensors.len() / 3;
        if manifest.tensors.len() != 3 * count {
            return Err(bad("tensor table is not params + two moment sets".into()));
        }
        let (params, rest) = manifest.tensors.split_at(count);
        let (ms, vs) = rest.split_at(count);
        let mut store = ParamStore::new();
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for ((p, me), ve) in params.iter().zip(ms).zip(vs) {
            let expect_m = format!("{M_PREFIX}{}", p.name);
            let expect_v = format!("{V_PREFIX}{}", p.name);
            if me.name != expect_m || ve.name != expect_v || me.shape != p.shape || ve.shape != p.shape {
                return Err(bad(format!(
                    "optimizer moments for {} are missing or misshapen",
                    p.name
                )));
            }
            store
                .insert(p.name.clone(), read(p)?)
                .map_err(|e| bad(e.to_string()))?;
            m.push(read(me)?.into_data());
            v.push(read(ve)?.into_data());
        }
        Ok(Self {
            config: manifest.config,
            task: manifest.task,
            step: manifest.step,
            rng: manifest.rng.restore()?,
            store,
            adam: Adam {
                config: manifest.adam,
                t: manifest.adam_t,
                m,
                v,
            },
        })
    }

    /// Writes via a temporary sibling file and a rename, so a failed save
    /// never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
