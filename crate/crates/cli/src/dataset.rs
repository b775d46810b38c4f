//! On-disk dataset layout: `manifest.csv` plus one volume per sample under `volumes/`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use umri::data::{read_volume, Family, Split};
use umri::recon::Sample;

use crate::error::{CliError, Result};
use crate::report::SCHEMA_VERSION;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const VOLUME_DIR: &str = "volumes";
pub const VOLUME_EXT: &str = "umrik";
const MANIFEST_HEADER: [&str; 6] = ["schema_version", "id", "family", "split", "seed", "file"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub family: Family,
    pub split: Split,
    pub seed: u64,
    /// Volume path relative to the dataset directory.
    pub file: String,
}

pub fn volume_file(id: &str) -> String {
    format!("{VOLUME_DIR}/{id}.{VOLUME_EXT}")
}

pub fn write_manifest(dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut out = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    out.write_record(MANIFEST_HEADER).map_err(|e| CliError::csv(&path, e))?;
    for r in rows {
        out.write_record([
            SCHEMA_VERSION.to_string(),
            r.id.clone(),
            r.family.to_string(),
            r.split.to_string(),
            r.seed.to_string(),
            r.file.clone(),
        ])
        .map_err(|e| CliError::csv(&path, e))?;
    }
    out.flush().map_err(|e| CliError::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    let header = reader.headers().map_err(|e| CliError::csv(&path, e))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(CliError::malformed(&path, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::csv(&path, e))?;
        let bad = |what: &str| CliError::malformed(&path, format!("row {}: bad {what}", line + 1));
        if record[0] != *SCHEMA_VERSION.to_string() {
            return Err(bad("schema version"));
        }
        rows.push(ManifestRow {
            id: record[1].to_string(),
            family: record[2].parse().map_err(|_| bad("family"))?,
            split: record[3].parse().map_err(|_| bad("split"))?,
            seed: record[4].parse().map_err(|_| bad("seed"))?,
            file: record[5].to_string(),
        });
    }
    Ok(rows)
}

pub fn select(rows: &[ManifestRow], family: Option<Family>, split: Split) -> Vec<&ManifestRow> {
    rows.iter()
        .filter(|r| r.split == split && family.is_none_or(|f| r.family == f))
        .collect()
}

pub fn volume_path(dir: &Path, row: &ManifestRow) -> PathBuf {
    dir.join(&row.file)
}

/// Reads the listed volumes in parallel, preserving order.
pub fn load_samples(dir: &Path, rows: &[&ManifestRow]) -> Result<Vec<Sample>> {
    rows.par_iter()
        .map(|r| {
            let (kspace, _) = read_volume(&volume_path(dir, r))?;
            Ok(Sample::new(r.id.clone(), kspace))
        })
        .collect()
}
