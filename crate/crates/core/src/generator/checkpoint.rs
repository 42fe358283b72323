//! Checkpoint directories: a JSON manifest plus one raw little-endian binary per block.
//!
//! Generator weights are stored as 32-bit floats. Offsets are stored as 64-bit
//! floats so that applying a loaded offset reproduces the tuned weights bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{Block, OffsetBlock, ParameterVector, TmtOffset};
use super::spec::GeneratorSpec;
use crate::decade::Decade;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "epochface-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Parameters,
    Offset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockDtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "f64le")]
    F64Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub dtype: BlockDtype,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub kind: CheckpointKind,
    pub spec: GeneratorSpec,
    pub spec_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decade: Option<Decade>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_decade: Option<Decade>,
    pub blocks: Vec<BlockEntry>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn artifact_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Artifact {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Write `dir` atomically: everything goes into a sibling staging directory that is
/// renamed into place once complete. An existing `dir` is never overwritten.
fn write_atomically(dir: &Path, files: Vec<(String, Vec<u8>)>) -> Result<()> {
    if dir.exists() {
        return Err(artifact_err(
            dir,
            "already exists; artifacts are write-once",
        ));
    }
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| artifact_err(dir, "no directory name"))?
        .to_string_lossy()
        .into_owned();
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    for (file, bytes) in files {
        fs::write(staging.join(file), bytes)?;
    }
    fs::rename(&staging, dir)?;
    Ok(())
}

fn block_file(name: &str, dtype: BlockDtype) -> String {
    match dtype {
        BlockDtype::F32Le => format!("{name}.f32"),
        BlockDtype::F64Le => format!("{name}.f64"),
    }
}

pub fn save_parameters(
    dir: &Path,
    params: &ParameterVector,
    spec: &GeneratorSpec,
    decade: Option<Decade>,
) -> Result<()> {
    params.check_spec(spec)?;
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (name, b) in params.blocks() {
        let bytes: Vec<u8> = b.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = block_file(name, BlockDtype::F32Le);
        entries.push(BlockEntry {
            name: name.clone(),
            shape: b.shape.clone(),
            file: file.clone(),
            dtype: BlockDtype::F32Le,
            sha256: sha_hex(&bytes),
        });
        files.push((file, bytes));
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        kind: CheckpointKind::Parameters,
        spec: spec.clone(),
        spec_hash: spec.spec_hash(),
        decade,
        base_decade: None,
        blocks: entries,
    };
    files.push((MANIFEST_FILE.into(), serde_json::to_vec_pretty(&manifest)?));
    write_atomically(dir, files)
}

pub fn save_offset(dir: &Path, offset: &TmtOffset, spec: &GeneratorSpec) -> Result<()> {
    if offset.spec_hash() != spec.spec_hash() {
        return Err(Error::IncompatibleParameters {
            expected: spec.spec_hash(),
            found: offset.spec_hash().to_string(),
        });
    }
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (name, b) in offset.deltas() {
        let bytes: Vec<u8> = b.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = block_file(name, BlockDtype::F64Le);
        entries.push(BlockEntry {
            name: name.clone(),
            shape: b.shape.clone(),
            file: file.clone(),
            dtype: BlockDtype::F64Le,
            sha256: sha_hex(&bytes),
        });
        files.push((file, bytes));
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        kind: CheckpointKind::Offset,
        spec: spec.clone(),
        spec_hash: spec.spec_hash(),
        decade: None,
        base_decade: offset.base_decade(),
        blocks: entries,
    };
    files.push((MANIFEST_FILE.into(), serde_json::to_vec_pretty(&manifest)?));
    write_atomically(dir, files)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&path)?)?;
    if manifest.format != FORMAT {
        return Err(artifact_err(
            &path,
            format!("unknown format `{}`", manifest.format),
        ));
    }
    if manifest.spec.spec_hash() != manifest.spec_hash {
        return Err(artifact_err(
            &path,
            "recorded spec_hash does not match recorded spec",
        ));
    }
    Ok(manifest)
}

fn read_block_bytes(dir: &Path, entry: &BlockEntry) -> Result<Vec<u8>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path)?;
    if sha_hex(&bytes) != entry.sha256 {
        return Err(artifact_err(&path, "content hash mismatch"));
    }
    let width = match entry.dtype {
        BlockDtype::F32Le => 4,
        BlockDtype::F64Le => 8,
    };
    let n: usize = entry.shape.iter().product();
    if bytes.len() != n * width {
        return Err(artifact_err(
            &path,
            format!("expected {} bytes, found {}", n * width, bytes.len()),
        ));
    }
    Ok(bytes)
}

fn check_expected(manifest: &CheckpointManifest, expected: Option<&GeneratorSpec>) -> Result<()> {
    if let Some(spec) = expected {
        if spec.spec_hash() != manifest.spec_hash {
            return Err(Error::IncompatibleParameters {
                expected: spec.spec_hash(),
                found: manifest.spec_hash.clone(),
            });
        }
    }
    Ok(())
}

/// Load generator weights; with `expected`, a checkpoint of another spec fails loudly.
pub fn load_parameters(
    dir: &Path,
    expected: Option<&GeneratorSpec>,
) -> Result<(GeneratorSpec, ParameterVector, Option<Decade>)> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != CheckpointKind::Parameters {
        return Err(artifact_err(dir, "not a parameter checkpoint"));
    }
    check_expected(&manifest, expected)?;
    let mut blocks = BTreeMap::new();
    for entry in &manifest.blocks {
        if entry.dtype != BlockDtype::F32Le {
            return Err(artifact_err(
                dir,
                format!("block `{}` is not f32le", entry.name),
            ));
        }
        let bytes = read_block_bytes(dir, entry)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        blocks.insert(entry.name.clone(), Block::new(entry.shape.clone(), data)?);
    }
    let params = ParameterVector::from_blocks(&manifest.spec, blocks)?;
    Ok((manifest.spec, params, manifest.decade))
}

pub fn load_offset(
    dir: &Path,
    expected: Option<&GeneratorSpec>,
) -> Result<(GeneratorSpec, TmtOffset)> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != CheckpointKind::Offset {
        return Err(artifact_err(dir, "not an offset checkpoint"));
    }
    check_expected(&manifest, expected)?;
    let mut deltas = BTreeMap::new();
    for entry in &manifest.blocks {
        if entry.dtype != BlockDtype::F64Le {
            return Err(artifact_err(
                dir,
                format!("block `{}` is not f64le", entry.name),
            ));
        }
        let bytes = read_block_bytes(dir, entry)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        deltas.insert(
            entry.name.clone(),
            OffsetBlock {
                shape: entry.shape.clone(),
                data,
            },
        );
    }
    let offset = TmtOffset::from_blocks(&manifest.spec, deltas, manifest.base_decade)?;
    Ok((manifest.spec, offset))
}
