use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::autograd::{Graph, Var};
use crate::{Error, Real, Result};

pub const WEIGHT_MAGIC: &[u8; 6] = b"UMRIW1";

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

/// A stored parameter. Frozen tensors never receive optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub value: ArrayD<f64>,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Moments {
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
}

/// Named parameters plus the Adam moment state that updates them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelWeights {
    tensors: BTreeMap<String, ParamTensor>,
    pub(crate) moments: BTreeMap<String, Moments>,
    pub(crate) step: u64,
}

impl ModelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: ArrayD<f64>, frozen: bool) {
        self.tensors.insert(path.into(), ParamTensor { value, frozen });
    }

    pub fn get(&self, path: &str) -> Option<&ParamTensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut ParamTensor> {
        self.tensors.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors.values().filter(|t| !t.frozen).map(|t| t.value.len()).sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.tensors.values().filter(|t| t.frozen).map(|t| t.value.len()).sum()
    }

    /// Sets the frozen flag on every tensor under `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str, frozen: bool) {
        for (path, t) in self.tensors.iter_mut() {
            if path.starts_with(prefix) {
                t.frozen = frozen;
            }
        }
    }

    /// Copies every tensor of `other` in, overwriting same-named entries.
    pub fn merge(&mut self, other: ModelWeights) {
        self.tensors.extend(other.tensors);
    }

    /// A graph leaf for `path`, converted to the graph's element type.
    pub fn var<'g, F: Real>(&self, g: &'g Graph<F>, path: &str) -> Result<Var<'g, F>> {
        let t = self
            .tensors
            .get(path)
            .ok_or_else(|| Error::Contract(format!("missing weight '{path}'")))?;
        Ok(g.parameter(path, !t.frozen, || t.value.mapv(F::lit)))
    }

    /// Loads tensors from `path` into this container. Every loaded tensor must
    /// already exist here with the same shape; loaded frozen flags win.
    pub fn load_matching(&mut self, path: &Path) -> Result<usize> {
        let loaded = load_weights(path)?;
        for (name, t) in loaded.tensors.iter() {
            let Some(dst) = self.tensors.get(name) else {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("unexpected tensor '{name}'"),
                });
            };
            if dst.value.shape() != t.value.shape() {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!(
                        "tensor '{name}' declares shape {:?}, model expects {:?}",
                        t.value.shape(),
                        dst.value.shape()
                    ),
                });
            }
        }
        let n = loaded.tensors.len();
        self.tensors.extend(loaded.tensors);
        Ok(n)
    }

    /// Adam moments and step count as a separate container, for checkpoints.
    pub fn optimizer_state(&self) -> ModelWeights {
        let mut out = ModelWeights::new();
        out.insert("step", ArrayD::from_elem(IxDyn(&[]), self.step as f64), true);
        for (path, mo) in &self.moments {
            out.insert(format!("m:{path}"), mo.m.clone(), true);
            out.insert(format!("v:{path}"), mo.v.clone(), true);
        }
        out
    }

    pub fn restore_optimizer_state(&mut self, state: &ModelWeights) -> Result<()> {
        let step = state
            .get("step")
            .ok_or_else(|| Error::Contract("optimizer state without a step counter".into()))?;
        self.step = step.value.iter().next().copied().unwrap_or(0.0) as u64;
        self.moments.clear();
        for (path, t) in state.iter() {
            if let Some(p) = path.strip_prefix("m:") {
                let v = state
                    .get(&format!("v:{p}"))
                    .ok_or_else(|| Error::Contract(format!("second moment missing for '{p}'")))?;
                self.moments.insert(
                    p.to_string(),
                    Moments {
                        m: t.value.clone(),
                        v: v.value.clone(),
                    },
                );
            }
        }
        Ok(())
    }
}

/// Writes the tensors of `weights` (not the optimizer state) as 64-bit records.
///
/// Layout, all integers little-endian:
///
/// ```text
/// "UMRIW1" | u64 count | count × record
/// record = u32 path_len | path (UTF-8) | u32 rank | rank × u64 dim
///        | u8 frozen | u8 dtype (0 = f32, 1 = f64) | raw LE samples
/// ```
pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_records(&mut w, weights).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_records(w: &mut impl Write, weights: &ModelWeights) -> std::io::Result<()> {
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&(weights.tensors.len() as u64).to_le_bytes())?;
    for (name, t) in &weights.tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.value.ndim() as u32).to_le_bytes())?;
        for &d in t.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&[t.frozen as u8, DTYPE_F64])?;
        for v in t.value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Format {
                        offset: self.offset + filled as u64,
                        msg: format!("unexpected end of file reading {what}"),
                    })
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(Error::Format {
                        offset: self.offset + filled as u64,
                        msg: format!("read failed: {e}"),
                    })
                }
            }
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset,
            msg: msg.into(),
        })
    }
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    read_records(BufReader::new(file), file_len)
}

pub(crate) fn read_records(reader: impl Read, file_len: u64) -> Result<ModelWeights> {
    let mut c = Cursor {
        inner: reader,
        offset: 0,
    };
    if c.bytes(6, "magic")? != WEIGHT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a UMRIW1 weight file".into(),
        });
    }
    let count = c.u64("tensor count")?;
    let mut out = ModelWeights::new();
    for _ in 0..count {
        let name_len = c.u32("path length")? as usize;
        if name_len as u64 > file_len {
            return c.fail(format!("path length {name_len} exceeds file size"));
        }
        let name = String::from_utf8(c.bytes(name_len, "path")?).or_else(|_| c.fail("path is not UTF-8"))?;
        let rank = c.u32("rank")? as usize;
        if rank > 16 {
            return c.fail(format!("implausible rank {rank} for '{name}'"));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u64("dimension")? as usize);
        }
        let frozen = match c.u8("frozen flag")? {
            0 => false,
            1 => true,
            other => return c.fail(format!("frozen flag {other} is not 0/1")),
        };
        let dtype = c.u8("dtype")?;
        let n: usize = dims.iter().product();
        let width = match dtype {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            other => return c.fail(format!("unknown dtype {other}")),
        };
        let needed = n as u64 * width as u64;
        if c.offset + needed > file_len {
            return c.fail(format!(
                "tensor '{name}' declares shape {dims:?} ({needed} bytes) but only {} bytes remain",
                file_len.saturating_sub(c.offset)
            ));
        }
        let raw = c.bytes(n * width, "tensor data")?;
        let values: Vec<f64> = if dtype == DTYPE_F64 {
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        } else {
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect()
        };
        if out.contains(&name) {
            return c.fail(format!("duplicate tensor path '{name}'"));
        }
        out.insert(
            name,
            ArrayD::from_shape_vec(IxDyn(&dims), values).expect("sized above"),
            frozen,
        );
    }
    if c.offset != file_len {
        return c.fail(format!("{} trailing bytes", file_len - c.offset));
    }
    Ok(out)
}
