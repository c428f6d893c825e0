//! `<tag>.manifest.json` + `<tag>.weights.bin` checkpoint pair.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mlp::{MlpConfig, VelocityField};
use super::params::{LayoutEntry, ParamVector};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weight blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tag: String,
    pub dtype: String,
    pub byte_order: String,
    pub total_params: usize,
    pub init_seed: u64,
    pub model: MlpConfig,
    pub blocks: Vec<BlockEntry>,
}

pub fn manifest_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("{tag}.manifest.json"))
}

pub fn weights_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("{tag}.weights.bin"))
}

pub fn save_checkpoint(field: &VelocityField, dir: &Path, tag: &str) -> Result<()> {
    let params = field.params();
    let blocks = params
        .layout()
        .iter()
        .zip(params.block_offsets())
        .map(|(e, (start, _))| BlockEntry {
            name: e.name.clone(),
            shape: e.shape.clone(),
            offset: start * 4,
        })
        .collect();
    let manifest = Manifest {
        tag: tag.to_string(),
        dtype: "f32".into(),
        byte_order: "little".into(),
        total_params: params.len(),
        init_seed: field.init_seed(),
        model: field.config().clone(),
        blocks,
    };
    write_atomic(&weights_path(dir, tag), &params.to_le_bytes())?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(&manifest_path(dir, tag), json.as_bytes())
}

pub fn load_checkpoint(dir: &Path, tag: &str) -> Result<VelocityField> {
    let mpath = manifest_path(dir, tag);
    let manifest: Manifest = serde_json::from_str(&read_to_string(&mpath)?)?;
    if manifest.dtype != "f32" || manifest.byte_order != "little" {
        return Err(Error::Layout(format!(
            "unsupported weight encoding {} / {}",
            manifest.dtype, manifest.byte_order
        )));
    }
    let wpath = weights_path(dir, tag);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let layout: Vec<LayoutEntry> = manifest
        .blocks
        .iter()
        .map(|b| LayoutEntry::new(b.name.clone(), b.shape.clone()))
        .collect();
    let mut expected = 0;
    for (b, e) in manifest.blocks.iter().zip(&layout) {
        if b.offset != expected {
            return Err(Error::Layout(format!("block {} at offset {}", b.name, b.offset)));
        }
        expected += e.len() * 4;
    }
    let params = ParamVector::from_le_bytes(&bytes, layout)?;
    VelocityField::from_params(manifest.model, params, manifest.init_seed)
}
