//! Checkpoint directories: `manifest.json` plus `tensors.bin`.
//!
//! `tensors.bin` holds every tensor in manifest order as little-endian f64,
//! row-major, with no padding.

use std::fs;
use std::path::Path;

use fairgrade_core::cohort::AttributeVocab;
use fairgrade_core::grade::LetterScale;
use fairgrade_core::seqnet::{ModelDims, ModelParams, TENSOR_NAMES};
use fairgrade_core::trainer::{Checkpoint, StrategyConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dims: ModelDims,
    pub letter_scale: LetterScale,
    pub group_list: Vec<String>,
    pub catalog: Vec<String>,
    pub vocab: AttributeVocab,
    pub strategy: StrategyConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub tensors: Vec<TensorEntry>,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = ckpt.params.dims;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dims,
        letter_scale: ckpt.letter_scale.clone(),
        group_list: ckpt.group_list.clone(),
        catalog: ckpt.catalog.clone(),
        vocab: ckpt.vocab.clone(),
        strategy: ckpt.strategy.clone(),
        seed: ckpt.seed,
        best_epoch: ckpt.best_epoch,
        best_val_loss: ckpt.best_val_loss,
        tensors: TENSOR_NAMES
            .iter()
            .zip(dims.shapes())
            .map(|(n, shape)| TensorEntry {
                name: n.to_string(),
                shape,
            })
            .collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let mut bytes = Vec::with_capacity(ckpt.params.num_params() * 8);
    for x in ckpt.params.tensors.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let path = dir.join(TENSORS_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| manifest_err(&path, e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(manifest_err(
            &path,
            format!("unsupported format_version {} (expected {FORMAT_VERSION})", m.format_version),
        ));
    }
    let expected: Vec<TensorEntry> = TENSOR_NAMES
        .iter()
        .zip(m.dims.shapes())
        .map(|(n, shape)| TensorEntry {
            name: n.to_string(),
            shape,
        })
        .collect();
    if m.tensors != expected {
        return Err(manifest_err(&path, "tensor list does not match the model dimensions"));
    }
    if m.catalog.len() != m.dims.num_courses || m.letter_scale.len() != m.dims.num_letters {
        return Err(manifest_err(&path, "catalog or letter scale does not match the model dimensions"));
    }
    if m.group_list.len() != m.dims.race_classes {
        return Err(manifest_err(&path, "group list does not match the race head"));
    }
    Ok(m)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let m = load_manifest(dir)?;
    let path = dir.join(TENSORS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let total: usize = m.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
    if bytes.len() != total * 8 {
        return Err(manifest_err(
            &path,
            format!("expected {} bytes for {total} values, found {}", total * 8, bytes.len()),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let blocks: Vec<Vec<f64>> = m
        .tensors
        .iter()
        .map(|t| values.by_ref().take(t.shape[0] * t.shape[1]).collect())
        .collect();
    let params = ModelParams::from_tensors(m.dims, blocks).map_err(|e| manifest_err(&path, e.to_string()))?;
    Ok(Checkpoint {
        params,
        letter_scale: m.letter_scale,
        group_list: m.group_list,
        catalog: m.catalog,
        vocab: m.vocab,
        strategy: m.strategy,
        seed: m.seed,
        best_epoch: m.best_epoch,
        best_val_loss: m.best_val_loss,
    })
}
