//! Single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PLCK" | u32 version | u64 step | u32 meta_len | meta (JSON, UTF-8)
//! u32 blob_count | blob*
//! blob = u32 name_len | name | u32 rows | u32 cols | rows*cols f64
//! ```
//!
//! The JSON block holds the model, stream and training configuration and
//! their SHA-256 hash. Every real number (parameters, normalization
//! statistics, optimizer moments) travels as a float64 blob so a reload is
//! bit-exact.

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, AdamConfig, AnnotatorModel, InputSpec, ModelConfig, NetError, StreamNorm, TrainConfig};
use crate::features::StreamConfig;
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: AnnotatorModel,
    pub streams: StreamConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub optimizer: Adam,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config<'a> {
    model: ModelConfig,
    streams: Cow<'a, StreamConfig>,
    train: Cow<'a, TrainConfig>,
    acoustic: Option<(usize, usize)>,
    linguistic: Option<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta<'a> {
    config: Config<'a>,
    config_hash: String,
    adam_t: u64,
}

impl Checkpoint {
    /// A fresh checkpoint at step 0 with zeroed optimizer moments.
    pub fn init(model: AnnotatorModel, streams: StreamConfig, train: TrainConfig) -> Self {
        let optimizer = Adam::new(train.adam(), model.params());
        Checkpoint {
            model,
            streams,
            train,
            step: 0,
            optimizer,
        }
    }

    fn config(&self) -> Config<'_> {
        let shape = |n: &Option<StreamNorm>| n.as_ref().map(|n| (n.layers(), n.dim()));
        Config {
            model: self.model.config,
            streams: Cow::Borrowed(&self.streams),
            train: Cow::Borrowed(&self.train),
            acoustic: shape(&self.model.input.acoustic),
            linguistic: shape(&self.model.input.linguistic),
        }
    }

    /// Hex SHA-256 of the canonical JSON configuration.
    pub fn config_hash(&self) -> String {
        hash_config(&self.config())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            config: self.config(),
            config_hash: self.config_hash(),
            adam_t: self.optimizer.t,
        };
        let meta = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
        let mut blobs: Vec<(String, Cow<Matrix>)> = Vec::new();
        for (name, p) in self.model.param_names().iter().zip(self.model.params()) {
            blobs.push((name.clone(), Cow::Borrowed(p)));
        }
        for (key, norm) in [("acoustic", &self.model.input.acoustic), ("linguistic", &self.model.input.linguistic)] {
            if let Some(n) = norm {
                blobs.push((format!("norm.{key}.mean"), Cow::Borrowed(&n.mean)));
                blobs.push((format!("norm.{key}.scale"), Cow::Owned(Matrix::from_vec(1, 1, vec![n.scale]))));
            }
        }
        for (i, name) in self.model.param_names().iter().enumerate() {
            blobs.push((format!("adam.m/{name}"), Cow::Borrowed(&self.optimizer.m[i])));
            blobs.push((format!("adam.v/{name}"), Cow::Borrowed(&self.optimizer.v[i])));
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        for (name, m) in blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| bad(&format!("metadata: {e}")))?;
        if hash_config(&meta.config) != meta.config_hash {
            return Err(bad("config hash does not match metadata"));
        }
        let count = r.u32()? as usize;
        let mut blobs = std::collections::BTreeMap::new();
        let mut order = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("blob name is not UTF-8"))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = rows.checked_mul(cols).ok_or_else(|| bad("blob too large"))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| bad("blob too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            order.push(name.clone());
            if blobs.insert(name.clone(), Matrix::from_vec(rows, cols, data)).is_some() {
                return Err(bad(&format!("duplicate blob {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }

        let mut take = |name: &str| blobs.remove(name).ok_or_else(|| bad(&format!("missing blob {name}")));
        let mut norm = |key: &str, shape: Option<(usize, usize)>| -> Result<Option<StreamNorm>, NetError> {
            let Some((layers, dim)) = shape else { return Ok(None) };
            let mean = take(&format!("norm.{key}.mean"))?;
            let scale = take(&format!("norm.{key}.scale"))?;
            if mean.shape() != (layers, dim) || scale.shape() != (1, 1) {
                return Err(bad(&format!("normalization blobs for {key} have the wrong shape")));
            }
            Ok(Some(StreamNorm {
                mean,
                scale: scale.get(0, 0),
            }))
        };
        let input = InputSpec {
            acoustic: norm("acoustic", meta.config.acoustic)?,
            linguistic: norm("linguistic", meta.config.linguistic)?,
        };
        let param_names: Vec<String> = order
            .iter()
            .filter(|n| !n.starts_with("norm.") && !n.starts_with("adam."))
            .cloned()
            .collect();
        let mut named = Vec::with_capacity(param_names.len());
        let mut m = Vec::with_capacity(param_names.len());
        let mut v = Vec::with_capacity(param_names.len());
        for name in &param_names {
            named.push((name.clone(), take(name)?));
            m.push(take(&format!("adam.m/{name}"))?);
            v.push(take(&format!("adam.v/{name}"))?);
        }
        if let Some(extra) = blobs.keys().next() {
            return Err(bad(&format!("unexpected blob {extra}")));
        }
        let model = AnnotatorModel::from_params(meta.config.model, input, named)?;
        for (i, p) in model.params().iter().enumerate() {
            if m[i].shape() != p.shape() || v[i].shape() != p.shape() {
                return Err(bad(&format!("optimizer moments for {} have the wrong shape", param_names[i])));
            }
        }
        let train = meta.config.train.into_owned();
        let optimizer = Adam {
            config: train.adam(),
            t: meta.adam_t,
            m,
            v,
        };
        Ok(Checkpoint {
            model,
            streams: meta.config.streams.into_owned(),
            train,
            step,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io(path, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn adam_config(&self) -> AdamConfig {
        self.optimizer.config
    }
}

fn hash_config(c: &Config<'_>) -> String {
    let json = serde_json::to_vec(c).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

fn bad(msg: &str) -> NetError {
    NetError::BadCheckpoint(msg.to_owned())
}

fn io(path: &Path, source: std::io::Error) -> NetError {
    NetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
