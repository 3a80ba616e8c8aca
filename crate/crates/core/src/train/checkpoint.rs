//! Single-file checkpoint: an 8-byte magic, a little-endian `u32` format
//! version, a `u64` manifest length, a JSON manifest of named blocks, then
//! the little-endian `f32` payload of every block.

use std::fs;
use std::io::Write;
use std::path::Path;

use daf3d_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;

use super::adam::Adam;

pub const MAGIC: &[u8; 8] = b"DAF3DCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Block {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    /// Number of `f32` values.
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    epoch: usize,
    adam_step: u64,
    config: TrainConfig,
    blocks: Vec<Block>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub epoch: usize,
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut blocks = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: String, t: &Tensor<f32>| {
            blocks.push(Block { name, shape: t.shape().to_vec(), offset: payload.len(), len: t.len() });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (i, (_, name, t)) in self.model.params.iter().enumerate() {
            push(format!("param/{name}"), t);
            push(format!("adam_m/{name}"), &self.optimizer.m[i]);
            push(format!("adam_v/{name}"), &self.optimizer.v[i]);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            adam_step: self.optimizer.step,
            config: self.config.clone(),
            blocks,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut write = |b: &[u8]| f.write_all(b).map_err(|e| Error::io(&tmp, e));
        write(MAGIC)?;
        write(&FORMAT_VERSION.to_le_bytes())?;
        write(&(json.len() as u64).to_le_bytes())?;
        write(&json)?;
        write(&payload)?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < mlen {
            return Err(bad("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen]).map_err(|e| bad(e.to_string()))?;
        if manifest.format_version != version {
            return Err(bad("manifest version disagrees with header".into()));
        }
        let payload = &body[mlen..];
        let mut model = Model::<f32>::new(&manifest.config.network, manifest.config.seed)?;
        let mut optimizer = Adam::new(&model.params, manifest.config.train.beta1, manifest.config.train.beta2, manifest.config.train.adam_eps);
        optimizer.step = manifest.adam_step;
        let mut seen = vec![[false; 3]; model.params.len()];
        for b in &manifest.blocks {
            let end = b.offset + 4 * b.len;
            if end > payload.len() || b.shape.iter().product::<usize>() != b.len {
                return Err(bad(format!("block {} is out of range or inconsistent", b.name)));
            }
            let data: Vec<f32> =
                payload[b.offset..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let (kind, name) = b.name.split_once('/').ok_or_else(|| bad(format!("malformed block name {}", b.name)))?;
            let id = model.params.id(name).map_err(|_| bad(format!("unknown parameter {name}")))?;
            let slot = match kind {
                "param" => 0,
                "adam_m" => 1,
                "adam_v" => 2,
                _ => return Err(bad(format!("unknown block kind {kind}"))),
            };
            let target: &mut Tensor<f32> = match slot {
                0 => model.params.get_mut(id),
                1 => &mut optimizer.m[id.0],
                _ => &mut optimizer.v[id.0],
            };
            if target.shape() != b.shape.as_slice() {
                return Err(bad(format!("block {} has shape {:?}, model expects {:?}", b.name, b.shape, target.shape())));
            }
            target.data_mut().copy_from_slice(&data);
            seen[id.0][slot] = true;
        }
        if let Some(i) = seen.iter().position(|s| s != &[true; 3]) {
            return Err(bad(format!("missing blocks for parameter {}", model.params.name(daf3d_tensor::ParamId(i)))));
        }
        Ok(Self { epoch: manifest.epoch, config: manifest.config, model, optimizer })
    }
}
