//! Binary model checkpoints.
//!
//! ```text
//! "LDA1" | version: u32 LE | manifest length: u64 LE | manifest JSON | f64 LE data
//! ```
//!
//! The manifest names every layer with its weight and bias shapes; data
//! follows in manifest order, weight then bias for each layer.

use std::fs;
use std::path::Path;

use lda_core::model::{Heads, LdaModel, ModelDims};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"LDA1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub weight: [usize; 2],
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub dims: ModelDims,
    pub heads: Heads,
    pub layers: Vec<LayerEntry>,
}

impl CheckpointManifest {
    pub fn of(model: &LdaModel) -> Self {
        CheckpointManifest {
            dims: model.dims().clone(),
            heads: model.heads(),
            layers: model
                .layers()
                .into_iter()
                .map(|(name, l)| LayerEntry {
                    name,
                    weight: [l.fan_in(), l.fan_out()],
                    bias: l.bias.numel(),
                })
                .collect(),
        }
    }

    fn values(&self) -> usize {
        self.layers.iter().map(|l| l.weight[0] * l.weight[1] + l.bias).sum()
    }
}

pub fn to_bytes(model: &LdaModel) -> Vec<u8> {
    let manifest = serde_json::to_vec(&CheckpointManifest::of(model)).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + manifest.len() + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, l) in model.layers() {
        for v in l.weight.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(model: &LdaModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).at(path)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(ForgeError::checkpoint(
            path,
            format!("truncated: {what} needs {n} bytes, {} left", bytes.len()),
        ));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Parses the header and returns the manifest with the raw data section.
fn parse<'a>(mut bytes: &'a [u8], path: &Path) -> Result<(CheckpointManifest, &'a [u8])> {
    let b = &mut bytes;
    if take(b, 4, "magic", path)? != MAGIC {
        return Err(ForgeError::checkpoint(path, "bad magic, not an LDA1 checkpoint"));
    }
    let version = u32::from_le_bytes(take(b, 4, "version", path)?.try_into().unwrap());
    if version != VERSION {
        return Err(ForgeError::checkpoint(
            path,
            format!("unsupported version {version} (expected {VERSION})"),
        ));
    }
    let len = u64::from_le_bytes(take(b, 8, "manifest length", path)?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| ForgeError::checkpoint(path, "manifest length overflows"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(take(b, len, "manifest", path)?)
        .map_err(|e| ForgeError::checkpoint(path, format!("bad manifest: {e}")))?;
    let expected = 8 * manifest.values();
    if bytes.len() < expected {
        return Err(ForgeError::checkpoint(
            path,
            format!("truncated: parameters need {expected} bytes, {} left", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(ForgeError::checkpoint(
            path,
            format!("{} trailing bytes after the parameters", bytes.len() - expected),
        ));
    }
    Ok((manifest, bytes))
}

/// Copies checkpoint parameters into `model`, whose layer shapes must match.
pub fn load_into(model: &mut LdaModel, bytes: &[u8], path: &Path) -> Result<()> {
    let (manifest, mut data) = parse(bytes, path)?;
    let ours = CheckpointManifest::of(model);
    if manifest.layers.len() != ours.layers.len() {
        return Err(ForgeError::checkpoint(
            path,
            format!("{} layers in checkpoint, model has {}", manifest.layers.len(), ours.layers.len()),
        ));
    }
    for (theirs, mine) in manifest.layers.iter().zip(&ours.layers) {
        if theirs.name != mine.name {
            return Err(ForgeError::checkpoint(
                path,
                format!("layer {} in checkpoint where the model has {}", theirs.name, mine.name),
            ));
        }
        if theirs != mine {
            return Err(ForgeError::checkpoint(
                path,
                format!(
                    "shape mismatch in layer {}: checkpoint weight {:?} bias [{}], model weight {:?} bias [{}]",
                    mine.name, theirs.weight, theirs.bias, mine.weight, mine.bias
                ),
            ));
        }
    }
    for (_, l) in model.layers_mut() {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut()) {
            let (head, rest) = data.split_at(8);
            *v = f64::from_le_bytes(head.try_into().unwrap());
            data = rest;
        }
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<LdaModel> {
    let (manifest, _) = parse(bytes, path)?;
    let mut model = LdaModel::init(manifest.dims.clone(), manifest.heads, 0)
        .map_err(|e| ForgeError::checkpoint(path, format!("bad dims: {e}")))?;
    load_into(&mut model, bytes, path)?;
    Ok(model)
}

pub fn load(path: &Path) -> Result<LdaModel> {
    if !path.exists() {
        return Err(ForgeError::config(format!("checkpoint not found: {}", path.display())));
    }
    from_bytes(&fs::read(path).at(path)?, path)
}
