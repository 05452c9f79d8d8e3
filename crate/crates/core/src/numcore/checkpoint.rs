//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SPROPCKP"
//! version  u32      1
//! hlen     u64      length of the JSON header
//! header   hlen     JSON: dtype, config_hash, meta, tensor directory
//! payload           raw little-endian elements of every tensor in
//!                   directory order (parameters, then Adam m and v)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, AdamConfig, AdamState, DType, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPROPCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Stable short hash of a serializable configuration.
pub fn config_hash<S: Serialize>(cfg: &S) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    config: AdamConfig,
    step_counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: DType,
    config_hash: String,
    meta: serde_json::Value,
    params: Vec<TensorEntry>,
    adam: Option<AdamEntry>,
}

/// Contents of a checkpoint file.
pub struct Checkpoint<T> {
    pub config_hash: String,
    pub meta: serde_json::Value,
    pub params: ParamStore<T>,
    pub optimizer: Option<Adam<T>>,
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    config_hash: &str,
    meta: &serde_json::Value,
    params: &ParamStore<T>,
    optimizer: Option<&Adam<T>>,
) -> Result<()> {
    let header = Header {
        dtype: T::DTYPE,
        config_hash: config_hash.to_string(),
        meta: meta.clone(),
        params: params
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        adam: optimizer.map(|o| AdamEntry {
            config: o.config,
            step_counts: o.states.iter().map(|s| s.step_count).collect(),
        }),
    };
    let hjson = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(hjson.len() + 32 + params.num_scalars() * T::BYTES * 3);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    buf.extend_from_slice(&hjson);
    for (_, p) in params.iter() {
        p.value.data().iter().for_each(|&v| v.write_le(&mut buf));
    }
    if let Some(o) = optimizer {
        for s in &o.states {
            s.first_moment.data().iter().for_each(|&v| v.write_le(&mut buf));
            s.second_moment.data().iter().for_each(|&v| v.write_le(&mut buf));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let hend = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..hend]).map_err(|e| bad(&e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(bad(&format!("stored as {:?}, requested {:?}", header.dtype, T::DTYPE)));
    }
    let mut cursor = hend;
    let mut take = |shape: &[usize]| -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let end = cursor + n * T::BYTES;
        if end > bytes.len() {
            return Err(bad("truncated payload"));
        }
        let data = bytes[cursor..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        cursor = end;
        Tensor::new(shape.to_vec(), data)
    };
    let mut params = ParamStore::new();
    for e in &header.params {
        let t = take(&e.shape)?;
        params.add(e.name.clone(), t);
    }
    let optimizer = match &header.adam {
        Some(a) => {
            if a.step_counts.len() != header.params.len() {
                return Err(bad("optimizer state count mismatch"));
            }
            let mut states = Vec::with_capacity(a.step_counts.len());
            for (e, &step_count) in header.params.iter().zip(&a.step_counts) {
                let first_moment = take(&e.shape)?;
                let second_moment = take(&e.shape)?;
                states.push(AdamState {
                    step_count,
                    first_moment,
                    second_moment,
                });
            }
            Some(Adam {
                config: a.config,
                states,
                checked: true,
            })
        }
        None => None,
    };
    if cursor != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        config_hash: header.config_hash,
        meta: header.meta,
        params,
        optimizer,
    })
}

impl<T: Real> Checkpoint<T> {
    /// Copies stored values into `store`, which must have been built from a
    /// configuration with the same hash and the same parameter layout.
    pub fn restore_into(&self, expected_hash: &str, store: &mut ParamStore<T>) -> Result<()> {
        if self.config_hash != expected_hash {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint config {} vs model config {}",
                self.config_hash, expected_hash
            )));
        }
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint("parameter count mismatch".into()));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, (_, q)) in ids.into_iter().zip(self.params.iter()) {
            let name = &store.get(id).name;
            if name != &q.name {
                return Err(Error::Checkpoint(format!("parameter name mismatch: {} vs {}", name, q.name)));
            }
            store.set_value(id, q.value.clone())?;
        }
        Ok(())
    }
}
