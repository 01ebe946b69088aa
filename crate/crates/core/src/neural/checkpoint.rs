//! Self-describing checkpoint files and checkpoint averaging.
//!
//! Layout: the magic bytes `SSCK`, a little-endian `u32` format version, a
//! `u64` header length, a JSON header (config, step, validation loss,
//! tensor index, metadata), then every tensor as little-endian `f32` in
//! index order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autograd::Parameters;
use super::config::ModelConfig;
use super::tensor::Mat;
use super::NeuralError;

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

/// Extra information carried alongside the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Character 3-gram frequencies of each training language.
    #[serde(default)]
    pub language_profiles: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters<f32>,
    pub step: u64,
    pub val_loss: Option<f64>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    val_loss: Option<f64>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            val_loss: self.val_loss,
            tensors: self
                .params
                .iter()
                .map(|(n, m)| TensorEntry {
                    name: n.to_string(),
                    rows: m.rows,
                    cols: m.cols,
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("serializable header");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.num_elements());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in self.params.iter() {
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, NeuralError> {
        let bad = |m: &str| NeuralError::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing SSCK magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NeuralError::Format(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| NeuralError::Format(e.to_string()))?;
        let mut data = &body[hlen..];
        let mut params = Parameters::new();
        for t in &header.tensors {
            let n = t.rows * t.cols;
            if data.len() < 4 * n {
                return Err(bad("truncated tensor data"));
            }
            let vals: Vec<f32> = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::Format(format!("non-finite value in {}", t.name)));
            }
            data = &data[4 * n..];
            params.push(t.name.clone(), Mat::from_vec(t.rows, t.cols, vals));
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            config: header.config,
            params,
            step: header.step,
            val_loss: header.val_loss,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, NeuralError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

/// Elementwise mean of the parameters of exactly 7 checkpoints (any
/// non-zero count when `allow_any_count` is set). All checkpoints must
/// share one configuration. Sums run in `f64`.
pub fn average_checkpoints(ckpts: &[Checkpoint], allow_any_count: bool) -> Result<Parameters<f32>, NeuralError> {
    if ckpts.is_empty() || (!allow_any_count && ckpts.len() != 7) {
        return Err(NeuralError::WrongCount(ckpts.len()));
    }
    let first = &ckpts[0];
    for (i, c) in ckpts.iter().enumerate().skip(1) {
        if c.config != first.config {
            return Err(NeuralError::ConfigMismatch(format!("checkpoint {i} has a different configuration")));
        }
        if !c.params.same_layout(&first.params) {
            return Err(NeuralError::ConfigMismatch(format!("checkpoint {i} has a different tensor layout")));
        }
    }
    let n = ckpts.len() as f64;
    let mut out = Parameters::new();
    for (t, (name, m)) in first.params.iter().enumerate() {
        let mut acc = vec![0f64; m.len()];
        for c in ckpts {
            for (a, v) in acc.iter_mut().zip(&c.params.get(t).data) {
                *a += *v as f64;
            }
        }
        let data = acc.into_iter().map(|a| (a / n) as f32).collect();
        out.push(name, Mat::from_vec(m.rows, m.cols, data));
    }
    Ok(out)
}
