//! Config loading, manifests and truth files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mlbrl_core::{GroundTruth, Link, Schema};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Invalid;

pub const MANIFEST: &str = "manifest.json";

/// Loads a JSON config. A manifest is accepted in place of a config and
/// yields the config it recorded.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("config").filter(|_| value_is_manifest(&text)) {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

fn value_is_manifest(text: &str) -> bool {
    serde_json::from_str::<Manifest>(text).is_ok()
}

/// Resolves a required input path, preferring the flag over the config.
pub fn input_path(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let path = flag
        .or_else(|| config.clone())
        .ok_or_else(|| Invalid(format!("no {what} given (flag or config)")))?;
    fs::canonicalize(&path).map_err(|e| Invalid(format!("{what} {}: {e}", path.display())).into())
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path).map_err(|e| Invalid(format!("schema {}: {e}", path.display())))?;
    let schema: Schema = serde_json::from_str(&text).map_err(|e| Invalid(format!("schema {}: {e}", path.display())))?;
    schema.validate()?;
    Ok(schema)
}

pub fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Dims {
    pub blocks1: usize,
    pub blocks2: usize,
    pub records1: usize,
    pub records2: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub dims: Option<Dims>,
    #[serde(default)]
    pub candidate_pairs: Option<u64>,
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, seed: Option<u64>, config: &T) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let digest = Sha256::digest(serde_json::to_vec(&config)?);
        Ok(Manifest {
            tool: "mlbrl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            config,
            dims: None,
            candidate_pairs: None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }
}

pub fn write_truth(dir: &Path, truth: &GroundTruth, f1: &mlbrl_core::BlockedFile, f2: &mlbrl_core::BlockedFile) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("truth_blocks.csv"))?;
    w.write_record(["s", "t", "block1", "block2"])?;
    for &(s, t) in &truth.blocks {
        w.write_record([s.to_string(), t.to_string(), f1.blocks[s].id.clone(), f2.blocks[t].id.clone()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("truth_links.csv"))?;
    w.write_record(["s", "t", "i", "j", "record1", "record2"])?;
    for l in &truth.links {
        w.write_record([
            l.s.to_string(),
            l.t.to_string(),
            l.i.to_string(),
            l.j.to_string(),
            f1.blocks[l.s].records[l.i].id.clone(),
            f2.blocks[l.t].records[l.j].id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn read_index_rows(path: &Path, width: usize) -> Result<Vec<Vec<usize>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        let row = (0..width)
            .map(|c| rec.get(c).and_then(|v| v.trim().parse().ok()))
            .collect::<Option<Vec<usize>>>()
            .ok_or_else(|| Invalid(format!("{}: row {} needs {width} index columns", path.display(), n + 2)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads truth files and, when present, the dimensions from the manifest
/// stored next to them.
pub fn read_truth(dir: &Path) -> Result<(GroundTruth, Option<Dims>)> {
    let blocks = read_index_rows(&dir.join("truth_blocks.csv"), 2)?
        .into_iter()
        .map(|r| (r[0], r[1]))
        .collect();
    let links = read_index_rows(&dir.join("truth_links.csv"), 4)?
        .into_iter()
        .map(|r| Link { s: r[0], t: r[1], i: r[2], j: r[3] })
        .collect();
    let dims = fs::read_to_string(dir.join(MANIFEST))
        .ok()
        .and_then(|text| serde_json::from_str::<Manifest>(&text).ok())
        .and_then(|m| m.dims);
    Ok((GroundTruth { blocks, links }, dims))
}
