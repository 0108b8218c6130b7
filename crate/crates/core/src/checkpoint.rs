//! Checkpoint directory layout:
//!
//! - `manifest.json`: format version, run config, tensor directory with
//!   per-file sha256, and a hash over all file hashes.
//! - `*.bin`: one tensor each. 8-byte magic, `u32` rank, `u64` dims,
//!   little-endian `f32` values, then the sha256 of everything before it.
//! - `mapping.tsv`: `item_id<TAB>c1-c2-…;…`, one line per item in dense order.
//! - `scores.tsv`: `item_id<TAB>N_v<TAB>path=score;…`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::em::ScoreTable;
use crate::error::{DrError, Result};
use crate::math::DenseMatrix;
use crate::model::DeepRetrievalModel;
use crate::reranker::SoftmaxModel;
use crate::retrieval::ItemPathMapping;
use crate::structure::{PathId, StructureParams};

pub const FORMAT_VERSION: u32 = 1;
pub const TENSOR_MAGIC: &[u8; 8] = b"DRTENS01";
const MANIFEST: &str = "manifest.json";
const MAPPING: &str = "mapping.tsv";
const SCORES: &str = "scores.tsv";

/// A trained model with its run configuration and raw item ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: DeepRetrievalModel,
    /// Raw id of dense item `i`.
    pub item_ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FileEntry {
    name: String,
    file: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    shape: Vec<usize>,
    sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    num_items: usize,
    config: RunConfig,
    files: Vec<FileEntry>,
    manifest_hash: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn corruption(path: &Path, reason: impl Into<String>) -> DrError {
    DrError::Corruption {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Serialize one tensor (values stored as `f32`).
pub fn encode_tensor(shape: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != values.len() {
        return Err(DrError::shape("tensor shape does not match its length"));
    }
    let mut out = Vec::with_capacity(8 + 4 + 8 * shape.len() + 4 * values.len() + 32);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Inverse of [`encode_tensor`]; `path` only labels errors.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 8 + 4 + 32 {
        return Err(corruption(path, "file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(corruption(path, "checksum mismatch"));
    }
    if &body[..8] != TENSOR_MAGIC {
        return Err(corruption(path, "bad magic"));
    }
    let rank = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let header = 12 + 8 * rank;
    if body.len() < header {
        return Err(corruption(path, "truncated shape header"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(body[12 + 8 * i..20 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if body.len() - header != 4 * n {
        return Err(corruption(path, "payload length does not match shape"));
    }
    let values = body[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((shape, values))
}

fn matrix_tensors(model: &DeepRetrievalModel) -> Vec<(String, &DenseMatrix)> {
    let p = &model.params;
    let mut out = vec![("item_embeddings".to_string(), &p.item_embeddings)];
    for (l, m) in p.node_embeddings.iter().enumerate() {
        out.push((format!("node_embeddings.{l}"), m));
    }
    for (d, mlp) in p.layers.iter().enumerate() {
        for (i, layer) in mlp.layers().iter().enumerate() {
            out.push((format!("layer.{d}.{i}.weight"), &layer.weight));
        }
    }
    out.push((
        "reranker.output_embeddings".to_string(),
        &model.reranker.output_embeddings,
    ));
    out
}

fn bias_tensors(model: &DeepRetrievalModel) -> Vec<(String, &Vec<f64>)> {
    let mut out = Vec::new();
    for (d, mlp) in model.params.layers.iter().enumerate() {
        for (i, layer) in mlp.layers().iter().enumerate() {
            out.push((format!("layer.{d}.{i}.bias"), &layer.bias));
        }
    }
    out
}

pub fn format_paths(paths: &[PathId]) -> String {
    paths
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

/// Parse one `item_id<TAB>c1-c2-…;…` line.
pub fn parse_mapping_line(line: &str) -> Result<(u64, Vec<PathId>)> {
    let (id, paths) = line
        .split_once('\t')
        .ok_or_else(|| DrError::Parse(format!("mapping line without a tab: {line:?}")))?;
    let id = id
        .trim()
        .parse()
        .map_err(|_| DrError::Parse(format!("bad item id {id:?}")))?;
    let paths = paths
        .trim_end()
        .split(';')
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<PathId>>>()?;
    Ok((id, paths))
}

fn mapping_text(model: &DeepRetrievalModel, ids: &[u64]) -> String {
    let mut s = String::new();
    for (i, paths) in model.mapping.assignments().iter().enumerate() {
        s.push_str(&format!("{}\t{}\n", ids[i], format_paths(paths)));
    }
    s
}

fn scores_text(table: &ScoreTable, ids: &[u64]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        let entries: Vec<String> = table
            .entries(i)
            .iter()
            .map(|(p, v)| format!("{p}={v}"))
            .collect();
        s.push_str(&format!(
            "{id}\t{}\t{}\n",
            table.count(i),
            entries.join(";")
        ));
    }
    s
}

fn manifest_hash(files: &[FileEntry]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update(f.name.as_bytes());
        h.update(f.sha256.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Write `checkpoint` into directory `dir` (created if needed).
pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    let model = &checkpoint.model;
    model.validate()?;
    if checkpoint.item_ids.len() != model.num_items() {
        return Err(DrError::shape("one raw id per item is required"));
    }
    if checkpoint.config.structure != model.config {
        return Err(DrError::config("run config and model structure disagree"));
    }
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut write = |name: String, file: String, shape: Vec<usize>, bytes: Vec<u8>| -> Result<()> {
        fs::write(dir.join(&file), &bytes)?;
        files.push(FileEntry {
            name,
            file,
            shape,
            sha256: sha_hex(&bytes),
        });
        Ok(())
    };
    for (name, m) in matrix_tensors(model) {
        let shape = vec![m.rows(), m.cols()];
        write(
            name.clone(),
            format!("{name}.bin"),
            shape.clone(),
            encode_tensor(&shape, m.values())?,
        )?;
    }
    for (name, b) in bias_tensors(model) {
        let shape = vec![b.len()];
        write(
            name.clone(),
            format!("{name}.bin"),
            shape.clone(),
            encode_tensor(&shape, b)?,
        )?;
    }
    write(
        "mapping".into(),
        MAPPING.into(),
        Vec::new(),
        mapping_text(model, &checkpoint.item_ids).into_bytes(),
    )?;
    write(
        "scores".into(),
        SCORES.into(),
        Vec::new(),
        scores_text(&model.scores, &checkpoint.item_ids).into_bytes(),
    )?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        num_items: model.num_items(),
        config: checkpoint.config.clone(),
        manifest_hash: manifest_hash(&files),
        files,
    };
    fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

fn read_checked(dir: &Path, entry: &FileEntry) -> Result<Vec<u8>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| corruption(&path, format!("unreadable: {e}")))?;
    if sha_hex(&bytes) != entry.sha256 {
        return Err(corruption(&path, "file hash differs from manifest"));
    }
    Ok(bytes)
}

fn text_file(dir: &Path, entry: &FileEntry) -> Result<String> {
    let bytes = read_checked(dir, entry)?;
    String::from_utf8(bytes).map_err(|_| corruption(&dir.join(&entry.file), "not UTF-8"))
}

/// Read a checkpoint directory, verifying every hash.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    let raw = fs::read_to_string(&manifest_path)?;
    let value: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| corruption(&manifest_path, format!("invalid JSON: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(DrError::Migration {
                found: v as u32,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(corruption(&manifest_path, "missing format_version")),
    }
    let manifest: Manifest = serde_json::from_value(value)
        .map_err(|e| corruption(&manifest_path, format!("bad manifest: {e}")))?;
    if manifest_hash(&manifest.files) != manifest.manifest_hash {
        return Err(corruption(&manifest_path, "manifest hash mismatch"));
    }
    let config = manifest.config.clone();
    config.validate()?;
    let v = manifest.num_items;
    let find = |name: &str| -> Result<&FileEntry> {
        manifest
            .files
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| corruption(&manifest_path, format!("missing entry {name}")))
    };
    let load_tensor = |name: &str, expect: &[usize]| -> Result<Vec<f64>> {
        let entry = find(name)?;
        let path: PathBuf = dir.join(&entry.file);
        let (shape, values) = decode_tensor(&read_checked(dir, entry)?, &path)?;
        if shape != expect {
            return Err(corruption(
                &path,
                format!("shape {shape:?}, expected {expect:?}"),
            ));
        }
        Ok(values)
    };

    let mut params = StructureParams::zeros(&config.structure, v)?;
    let e = config.structure.emb_dim;
    params
        .item_embeddings
        .values_mut()
        .copy_from_slice(&load_tensor("item_embeddings", &[v, e])?);
    for (l, m) in params.node_embeddings.iter_mut().enumerate() {
        let shape = [m.rows(), m.cols()];
        m.values_mut()
            .copy_from_slice(&load_tensor(&format!("node_embeddings.{l}"), &shape)?);
    }
    for (d, mlp) in params.layers.iter_mut().enumerate() {
        for (i, layer) in mlp.layers_mut().iter_mut().enumerate() {
            let shape = [layer.weight.rows(), layer.weight.cols()];
            let w = load_tensor(&format!("layer.{d}.{i}.weight"), &shape)?;
            layer.weight.values_mut().copy_from_slice(&w);
            let b = load_tensor(&format!("layer.{d}.{i}.bias"), &[layer.bias.len()])?;
            layer.bias.copy_from_slice(&b);
        }
    }
    let mut reranker = SoftmaxModel::zeros(v, e);
    reranker
        .output_embeddings
        .values_mut()
        .copy_from_slice(&load_tensor("reranker.output_embeddings", &[v, e])?);

    let mapping_entry = find("mapping")?;
    let mapping_path = dir.join(&mapping_entry.file);
    let mut item_ids = Vec::with_capacity(v);
    let mut assignments = Vec::with_capacity(v);
    for line in text_file(dir, mapping_entry)?.lines() {
        let (id, paths) =
            parse_mapping_line(line).map_err(|e| corruption(&mapping_path, e.to_string()))?;
        item_ids.push(id);
        assignments.push(paths);
    }
    if item_ids.len() != v {
        return Err(corruption(
            &mapping_path,
            "line count differs from item count",
        ));
    }
    let mapping = ItemPathMapping::from_assignments(assignments, config.structure.j)?;

    let scores_entry = find("scores")?;
    let scores_path = dir.join(&scores_entry.file);
    let mut entries = Vec::with_capacity(v);
    let mut counts = Vec::with_capacity(v);
    for (i, line) in text_file(dir, scores_entry)?.lines().enumerate() {
        let bad = |why: &str| corruption(&scores_path, format!("line {}: {why}", i + 1));
        let mut cols = line.split('\t');
        let id: u64 = cols
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("item id"))?;
        if item_ids.get(i) != Some(&id) {
            return Err(bad("item order differs from mapping"));
        }
        counts.push(
            cols.next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("count"))?,
        );
        let mut list = Vec::new();
        for pair in cols
            .next()
            .unwrap_or("")
            .split(';')
            .filter(|s| !s.is_empty())
        {
            let (p, s) = pair.split_once('=').ok_or_else(|| bad("path=score"))?;
            list.push((
                p.parse().map_err(|_| bad("path"))?,
                s.parse().map_err(|_| bad("score"))?,
            ));
        }
        entries.push(list);
    }
    if entries.len() != v {
        return Err(corruption(
            &scores_path,
            "line count differs from item count",
        ));
    }
    let scores = ScoreTable::from_entries(config.structure.score_capacity, entries, counts)?;

    let model = DeepRetrievalModel {
        config: config.structure.clone(),
        params,
        reranker,
        mapping,
        scores,
    };
    model.validate()?;
    Ok(Checkpoint {
        config,
        model,
        item_ids,
    })
}
