//! Output directories, the `.incomplete` marker and image files.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{CliError, Result};

pub const INCOMPLETE_MARKER: &str = ".incomplete";

/// Creates `dir` and marks it incomplete until [`OutputDir::finish`] runs.
/// A failed command leaves the marker behind.
pub struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let marker = dir.join(INCOMPLETE_MARKER);
        fs::write(&marker, b"").map_err(|e| CliError::io(&marker, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn join(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    pub fn finish(self) -> Result<()> {
        let marker = self.dir.join(INCOMPLETE_MARKER);
        fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// 8-bit binary PGM scaled so the image maximum maps to 255.
pub fn pgm_bytes(img: &Array2<f64>) -> Vec<u8> {
    let (h, w) = img.dim();
    let peak = img.iter().copied().fold(0.0f64, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8));
    out
}

/// Row-major little-endian `f32` samples.
pub fn raw_f32_bytes(img: &Array2<f64>) -> Vec<u8> {
    img.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}
