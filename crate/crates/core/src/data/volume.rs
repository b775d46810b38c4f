use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use num_complex::Complex64;

use crate::physics::MultiCoilKSpace;
use crate::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 6] = b"UMRIK1";

/// Free-form `key=value` metadata stored after the samples.
pub type Metadata = BTreeMap<String, String>;

/// Sample precision code in the volume header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeDtype {
    F32 = 1,
    F64 = 2,
}

impl VolumeDtype {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(VolumeDtype::F32),
            2 => Some(VolumeDtype::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            VolumeDtype::F32 => 4,
            VolumeDtype::F64 => 8,
        }
    }
}

fn encode_metadata(meta: &Metadata) -> Result<String> {
    let mut out = String::new();
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', '\n', '\r']) || v.contains(['\n', '\r']) {
            return Err(Error::InvalidData(format!("metadata entry '{k}' cannot be encoded")));
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `kspace` as single-precision samples. Values are rounded to the
/// nearest `f32`, so a read returns exactly what was stored.
pub fn write_volume(path: &Path, kspace: &MultiCoilKSpace, meta: &Metadata) -> Result<()> {
    let blob = encode_metadata(meta)?;
    let (n, h, w) = kspace.dim();
    let dims = [n, h, w]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::InvalidData(format!("dimension {d} exceeds u32"))))
        .collect::<Result<Vec<u32>>>()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(VOLUME_MAGIC)?;
    for d in dims {
        write(&d.to_le_bytes())?;
    }
    write(&[VolumeDtype::F32 as u8])?;
    let mut buf = Vec::with_capacity(n * h * w * 8);
    for v in kspace.data().iter() {
        buf.extend_from_slice(&(v.re as f32).to_le_bytes());
        buf.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    write(&buf)?;
    write(&(blob.len() as u32).to_le_bytes())?;
    write(blob.as_bytes())?;
    out.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Format {
                        offset: self.offset + filled as u64,
                        msg: format!("truncated {what}: expected {n} bytes, found {filled}"),
                    })
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(Error::Format {
                        offset: self.offset + filled as u64,
                        msg: format!("read error in {what}: {e}"),
                    })
                }
            }
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Reads a volume written by [`write_volume`] or an external converter.
pub fn read_volume(path: &Path) -> Result<(MultiCoilKSpace, Metadata)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        inner: BufReader::new(file),
        offset: 0,
    };
    let magic = cur.take(6, "magic")?;
    if magic != VOLUME_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a k-space volume (bad magic)".into(),
        });
    }
    let n = cur.u32("coil count")? as usize;
    let h = cur.u32("height")? as usize;
    let w = cur.u32("width")? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Format {
            offset: 6,
            msg: format!("empty volume {n}x{h}x{w}"),
        });
    }
    let code_at = cur.offset;
    let code = cur.take(1, "dtype")?[0];
    let dtype = VolumeDtype::from_code(code).ok_or_else(|| Error::Format {
        offset: code_at,
        msg: format!("unknown dtype code {code}"),
    })?;
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|v| *v < (1 << 34))
        .ok_or_else(|| Error::Format {
            offset: 6,
            msg: "volume dimensions overflow".into(),
        })?;
    let data_at = cur.offset;
    let raw = cur.take(count * 2 * dtype.width(), "samples")?;
    let values: Vec<f64> = match dtype {
        VolumeDtype::F32 => raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4")) as f64)
            .collect(),
        VolumeDtype::F64 => raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8")))
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format {
            offset: data_at + (i * dtype.width()) as u64,
            msg: "non-finite sample".into(),
        });
    }
    let complex: Vec<Complex64> = values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    let len = cur.u32("metadata length")? as usize;
    let blob_at = cur.offset;
    let blob = cur.take(len, "metadata")?;
    let text = String::from_utf8(blob).map_err(|e| Error::Format {
        offset: blob_at + e.utf8_error().valid_up_to() as u64,
        msg: "metadata is not UTF-8".into(),
    })?;
    let mut meta = Metadata::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            offset: blob_at,
            msg: format!("metadata line without '=': {line:?}"),
        })?;
        meta.insert(k.to_string(), v.to_string());
    }
    let end = cur.offset;
    if cur.inner.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format {
            offset: end,
            msg: "trailing bytes after metadata".into(),
        });
    }
    let data = Array3::from_shape_vec((n, h, w), complex).expect("sized from header");
    Ok((MultiCoilKSpace::new(data)?, meta))
}
