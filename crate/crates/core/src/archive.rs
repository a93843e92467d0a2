//! Tensor archive: a directory holding `manifest.json` and `tensors.bin`.
//!
//! The manifest maps tensor names to `{shape, dtype, offset, length}`
//! (offset and length in bytes into `tensors.bin`). An optional
//! `__metadata__` entry carries string key/value pairs. `tensors.bin`
//! starts with the 8-byte magic [`MAGIC`] followed by little-endian `f32`
//! payloads, laid out in manifest (name) order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const MAGIC: &[u8; 8] = b"ADMTNSR1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";
const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", format!("{shape:?}"), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape[..] {
            [r, c] => Matrix::new(r, c, self.data.clone()),
            _ => Err(Error::shape("Tensor::to_matrix", format!("{:?}", self.shape), "rank 2")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::shape(
                "tensor archive",
                format!("{name} has shape {:?}", t.shape),
                format!("expected {shape:?}"),
            ));
        }
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::with_capacity(
            MAGIC.len() + self.tensors.values().map(|t| t.data.len() * 4).sum::<usize>(),
        );
        blob.extend_from_slice(MAGIC);
        let mut manifest = serde_json::Map::new();
        if !self.metadata.is_empty() {
            manifest.insert(METADATA_KEY.into(), serde_json::to_value(&self.metadata)?);
        }
        for (name, t) in &self.tensors {
            let offset = blob.len() as u64;
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            let entry = TensorEntry {
                shape: t.shape.clone(),
                dtype: "f32".into(),
                offset,
                length: blob.len() as u64 - offset,
            };
            manifest.insert(name.clone(), serde_json::to_value(entry)?);
        }
        let json = serde_json::to_string_pretty(&serde_json::Value::Object(manifest))?;
        write(&dir.join(MANIFEST_FILE), json.as_bytes())?;
        write(&dir.join(BLOB_FILE), &blob)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let blob_path = dir.join(BLOB_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let bad = |msg: String| Error::Archive {
            path: dir.to_path_buf(),
            msg,
        };
        if blob.len() < MAGIC.len() || &blob[..MAGIC.len()] != MAGIC {
            return Err(bad("bad magic in tensors.bin".into()));
        }
        let raw: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| bad(format!("malformed manifest: {e}")))?;
        let mut archive = TensorArchive::new();
        for (name, value) in raw {
            if name == METADATA_KEY {
                archive.metadata = serde_json::from_value(value)
                    .map_err(|e| bad(format!("malformed metadata: {e}")))?;
                continue;
            }
            let entry: TensorEntry = serde_json::from_value(value)
                .map_err(|e| bad(format!("malformed entry `{name}`: {e}")))?;
            if entry.dtype != "f32" {
                return Err(bad(format!("`{name}` has unsupported dtype {}", entry.dtype)));
            }
            let count: usize = entry.shape.iter().product();
            if entry.length != 4 * count as u64 {
                return Err(bad(format!(
                    "`{name}` length {} does not match shape {:?}",
                    entry.length, entry.shape
                )));
            }
            let end = entry.offset.checked_add(entry.length);
            if entry.offset < MAGIC.len() as u64 || end.is_none_or(|e| e > blob.len() as u64) {
                return Err(bad(format!(
                    "`{name}` spans bytes {}..{} beyond the {}-byte blob (truncated?)",
                    entry.offset,
                    entry.offset.saturating_add(entry.length),
                    blob.len()
                )));
            }
            let bytes = &blob[entry.offset as usize..(entry.offset + entry.length) as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            archive.insert(
                name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            );
        }
        Ok(archive)
    }
}

fn write(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
