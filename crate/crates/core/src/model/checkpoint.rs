//! Binary checkpoints: `AIT1`, a little-endian `u64` header length, a JSON
//! header, then every parameter as raw little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::data::NormStats;
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AIT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    Magic,
    #[error("corrupt checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint truncated or has trailing bytes")]
    Length,
    #[error("checkpoint parameter {0} does not match the model specification")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trained model plus the normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub norm: Option<NormStats>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    norm: Option<NormStats>,
    params: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn new(model: Model, norm: Option<NormStats>) -> Self {
        Self { model, norm }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let header = Header {
            spec: self.model.spec.clone(),
            norm: self.norm.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|(k, t)| (k.to_string(), t.shape().to_vec()))
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in self.model.params.iter() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::Magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic);
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| CheckpointError::Length)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(|_| CheckpointError::Length)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut params = ParamSet::new();
        let mut buf = [0u8; 8];
        for (name, shape) in &header.params {
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                r.read_exact(&mut buf).map_err(|_| CheckpointError::Length)?;
                data.push(f64::from_le_bytes(buf));
            }
            let t = Tensor::new(shape.clone(), data).map_err(|_| CheckpointError::Mismatch(name.clone()))?;
            params.insert(name.clone(), t);
        }
        if r.read(&mut buf)? != 0 {
            return Err(CheckpointError::Length);
        }
        // A fresh model of this kind must have exactly these parameter names and shapes.
        let reference = Model::new(header.spec.clone(), 0).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(CheckpointError::Mismatch(name.to_string())),
            }
        }
        if reference.params.len() != params.len() {
            let extra = params
                .names()
                .find(|n| !reference.params.contains(n))
                .unwrap_or_default()
                .to_string();
            return Err(CheckpointError::Mismatch(extra));
        }
        Ok(Self {
            model: Model {
                spec: header.spec,
                params,
            },
            norm: header.norm,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
