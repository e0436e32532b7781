//! Checkpoint directories: `manifest.json` plus `params.bin`, a blob of
//! little-endian `f32` values (weights, Adam moments, running statistics).

use crate::error::{Error, Result};
use crate::graph::{BodyPart, SkeletonTopology};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::numeric::{RngStream, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyDescriptor {
    pub parts: Vec<BodyPart>,
    /// Canonical keypoint index of each graph node, in node order.
    pub nodes: Vec<usize>,
    pub root: usize,
}

impl TopologyDescriptor {
    pub fn of(topology: &SkeletonTopology) -> Self {
        TopologyDescriptor {
            parts: topology.parts.clone(),
            nodes: topology.canonical_indices(),
            root: topology.root,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub seed: u64,
    /// Best validation F1 seen so far, carried across resumes.
    #[serde(default)]
    pub best_val_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Adam step count for parameter values; absent otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub topology: TopologyDescriptor,
    pub state: TrainingState,
    pub blob: String,
    pub blob_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub topology: TopologyDescriptor,
    pub state: TrainingState,
    pub params: ModelParams,
}

/// Every serialized tensor with its name and optional step count, in blob order.
fn tensors(params: &ModelParams) -> Vec<(String, &Tensor, Option<u64>)> {
    let mut out = Vec::new();
    for p in params.params() {
        out.push((p.name.clone(), &p.value, Some(p.step_count)));
        out.push((format!("{}.adam_m", p.name), &p.adam_m, None));
        out.push((format!("{}.adam_v", p.name), &p.adam_v, None));
    }
    for (prefix, s) in params.running_stats() {
        out.push((format!("{prefix}.running_mean"), &s.mean, None));
        out.push((format!("{prefix}.running_var"), &s.var, None));
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t, step_count) in tensors(&ckpt.params) {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: blob.len(),
            step_count,
        });
        for v in t.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: ckpt.model.clone(),
        topology: ckpt.topology.clone(),
        state: ckpt.state,
        blob: BLOB_FILE.to_string(),
        blob_sha256: sha256_hex(&blob),
        tensors: entries,
    };
    let blob_path = dir.join(BLOB_FILE);
    std::fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(&manifest.blob);
    let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if sha256_hex(&blob) != manifest.blob_sha256 {
        return Err(Error::Checkpoint(format!("{} does not match its manifest hash", blob_path.display())));
    }
    let mut params = init_params(&manifest.model, &RngStream::new(0))?;
    let expected: Vec<(String, Vec<usize>)> = tensors(&params)
        .into_iter()
        .map(|(n, t, _)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, shape)) in manifest.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match model tensor {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
    }
    let mut entries = manifest.tensors.iter();
    let mut fill = |t: &mut Tensor| -> Result<u64> {
        let entry = entries.next().expect("entry count checked");
        let bytes = blob
            .get(entry.offset..entry.offset + 4 * t.len())
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the end of the blob", entry.name)))?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
        Ok(entry.step_count.unwrap_or(0))
    };
    for p in params.params_mut() {
        p.step_count = fill(&mut p.value)?;
        fill(&mut p.adam_m)?;
        fill(&mut p.adam_v)?;
    }
    for s in params.running_stats_mut() {
        fill(&mut s.mean)?;
        fill(&mut s.var)?;
    }
    Ok(Checkpoint {
        model: manifest.model,
        topology: manifest.topology,
        state: manifest.state,
        params,
    })
}
