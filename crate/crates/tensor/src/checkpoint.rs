//! Named-tensor checkpoints: a JSON manifest plus a blob of little-endian
//! `f64` values.
//!
//! ```text
//! <dir>/manifest.json   {"format", "blob", "meta", "tensors": [{name, shape, offset}]}
//! <dir>/weights.bin     tensors back to back, offsets in bytes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT: &str = "hop-checkpoint-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TensorError {
    TensorError::Checkpoint(format!("{}: {e}", path.display()))
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    /// Appends every parameter of `store` under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, t) in store.iter() {
            self.push(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `store` from tensors named `prefix + name`.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let key = format!("{prefix}{}", store.name(id));
            let t = self
                .get(&key)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {key}")))?;
            store.set(id, t.clone())?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.numel() as u64;
                e
            })
            .collect();
        Manifest {
            format: FORMAT.to_string(),
            blob: BLOB_FILE.to_string(),
            meta: self.meta.clone(),
            tensors,
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(8 * self.tensors.iter().map(|(_, t)| t.numel()).sum::<usize>());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let manifest =
            serde_json::to_string_pretty(&self.manifest()).map_err(|e| io_err(dir, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, manifest).map_err(|e| io_err(&mpath, e))?;
        let bpath = dir.join(BLOB_FILE);
        fs::write(&bpath, self.blob()).map_err(|e| io_err(&bpath, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| io_err(&mpath, e))?;
        if manifest.format != FORMAT {
            return Err(io_err(
                &mpath,
                format!("unsupported format {}", manifest.format),
            ));
        }
        let bpath = dir.join(&manifest.blob);
        let blob = fs::read(&bpath).map_err(|e| io_err(&bpath, e))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 8 * n;
            let bytes = blob.get(start..end).ok_or_else(|| {
                io_err(
                    &bpath,
                    format!("tensor {} runs past the end of the blob", entry.name),
                )
            })?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((entry.name, Tensor::new(entry.shape, data)?));
        }
        Ok(Checkpoint {
            meta: manifest.meta,
            tensors,
        })
    }
}
