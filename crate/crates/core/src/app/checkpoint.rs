//! Checkpoint directory:
//!
//! ```text
//! manifest.json                   config, architecture hash, step, history
//! params/<dotted.name>.bin        little-endian f32, one blob per parameter
//! buffers/<dotted.name>.{mean,var}.bin
//! optimizer/<dotted.name>.{m,v}.bin
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::LogEntry;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::optim::{AdamWConfig, OptimizerState};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture_hash: String,
    pub model: ModelConfig,
    pub step: u64,
    pub optimizer: Option<AdamWConfig>,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
    #[serde(default)]
    pub history: Vec<LogEntry>,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub manifest: Manifest,
    pub network: Network<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
}

fn blob_path(dir: &Path, group: &str, name: &str, suffix: &str) -> PathBuf {
    dir.join(group).join(format!("{name}{suffix}.bin"))
}

fn write_blob(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_blob(path: &Path, shape: &[usize]) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let numel: usize = shape.iter().product();
    if bytes.len() != 4 * numel {
        return Err(Error::Checkpoint(format!(
            "{}: {} bytes for shape {shape:?}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(shape.to_vec(), data)
}

/// Writes `net` (and optimizer moments, if given) to `dir`, replacing any
/// previous contents of its blob directories.
pub fn save_checkpoint(
    dir: &Path,
    net: &Network<f32>,
    optimizer: Option<&OptimizerState<f32>>,
    step: u64,
    history: &[LogEntry],
) -> Result<()> {
    for group in ["params", "buffers", "optimizer"] {
        let d = dir.join(group);
        if d.exists() {
            std::fs::remove_dir_all(&d)?;
        }
        std::fs::create_dir_all(&d)?;
    }
    let mut params = Vec::with_capacity(net.params.len());
    for id in net.params.ids() {
        let name = net.params.name(id);
        let value = net.params.value(id);
        write_blob(&blob_path(dir, "params", name, ""), value)?;
        if let Some(opt) = optimizer {
            write_blob(&blob_path(dir, "optimizer", name, ".m"), &opt.first_moment[id.index()])?;
            write_blob(&blob_path(dir, "optimizer", name, ".v"), &opt.second_moment[id.index()])?;
        }
        params.push(TensorEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
        });
    }
    let mut buffers = Vec::new();
    for (name, stats) in net.buffers.iter() {
        write_blob(&blob_path(dir, "buffers", name, ".mean"), &stats.mean)?;
        write_blob(&blob_path(dir, "buffers", name, ".var"), &stats.var)?;
        buffers.push(TensorEntry {
            name: name.to_string(),
            shape: stats.mean.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture_hash: net.config().architecture_hash(),
        model: net.config().clone(),
        step: optimizer.map_or(step, |o| o.step),
        optimizer: optimizer.map(|o| o.config),
        params,
        buffers,
        history: history.to_vec(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
        _ => Error::Io(e),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        reason: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }
    if manifest.architecture_hash != manifest.model.architecture_hash() {
        return Err(Error::Checkpoint(
            "manifest hash does not match its own model config".into(),
        ));
    }
    Ok(manifest)
}

/// Loads a checkpoint. With `expected`, the stored architecture hash must
/// match that configuration's hash.
pub fn load_checkpoint(dir: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    if let Some(cfg) = expected {
        let want = cfg.architecture_hash();
        if want != manifest.architecture_hash {
            return Err(Error::Checkpoint(format!(
                "architecture hash mismatch: checkpoint {} vs config {want}",
                manifest.architecture_hash
            )));
        }
    }
    let mut network = Network::<f32>::new(&manifest.model, 0)?;
    if network.params.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameter blobs for a model with {}",
            manifest.params.len(),
            network.params.len()
        )));
    }
    for entry in &manifest.params {
        let id = network
            .params
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", entry.name)))?;
        if network.params.value(id).shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", entry.name)));
        }
        *network.params.value_mut(id) = read_blob(&blob_path(dir, "params", &entry.name, ""), &entry.shape)?;
    }
    for (name, stats) in network.buffers.iter_mut() {
        let shape = stats.mean.shape().to_vec();
        stats.mean = read_blob(&blob_path(dir, "buffers", name, ".mean"), &shape)?;
        stats.var = read_blob(&blob_path(dir, "buffers", name, ".var"), &shape)?;
    }
    let optimizer = match manifest.optimizer {
        None => None,
        Some(config) => {
            let mut opt = OptimizerState::new(config, &network.params)?;
            opt.step = manifest.step;
            for id in network.params.ids() {
                let name = network.params.name(id);
                let shape = network.params.value(id).shape().to_vec();
                opt.first_moment[id.index()] = read_blob(&blob_path(dir, "optimizer", name, ".m"), &shape)?;
                opt.second_moment[id.index()] = read_blob(&blob_path(dir, "optimizer", name, ".v"), &shape)?;
            }
            Some(opt)
        }
    };
    Ok(Checkpoint {
        manifest,
        network,
        optimizer,
    })
}
