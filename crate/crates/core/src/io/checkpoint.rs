//! Binary parameter snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BAFP" | u32 version = 1 | u32 entry count
//! per entry: u32 name length | UTF-8 name | u8 dtype | u8 rank | rank × u32 dims | raw values
//! ```
//!
//! dtype 0 is float32 and 1 is float64; values are row-major.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::param::Module;
use crate::tensor::{DType, Element};

pub const MAGIC: [u8; 4] = *b"BAFP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    /// Little-endian encoded values.
    pub raw: Vec<u8>,
}

impl CheckpointEntry {
    pub fn values<T: Element>(&self) -> Vec<T> {
        let size = self.dtype.size_of();
        self.raw
            .chunks_exact(size)
            .map(|b| match self.dtype {
                DType::Float32 => T::from_f64(f32::read_le(b) as f64),
                DType::Float64 => T::from_f64(f64::read_le(b)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    /// Snapshot of every parameter in registry order.
    pub fn from_module<T: Element>(m: &dyn Module<T>) -> Self {
        let mut entries = Vec::new();
        m.visit_params(&mut |p| {
            let mut raw = Vec::with_capacity(p.numel() * T::DTYPE.size_of());
            p.tensor().data().iter().for_each(|v| v.write_le(&mut raw));
            entries.push(CheckpointEntry {
                name: p.name().to_string(),
                dtype: T::DTYPE,
                dims: p.shape().to_vec(),
                raw,
            });
        });
        Checkpoint { entries }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&e.raw);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if let Some(i) = (0..4).find(|&i| magic[i] != MAGIC[i]) {
            return Err(Error::Format {
                offset: i,
                msg: format!("bad magic {magic:02x?}, expected \"BAFP\""),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for _ in 0..count {
            let start = r.pos;
            let len = r.u32("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|e| Error::Format {
                    offset: name_at + e.valid_up_to(),
                    msg: "parameter name is not valid UTF-8".into(),
                })?
                .to_string();
            if seen.insert(name.clone(), start).is_some() {
                return Err(Error::Format {
                    offset: start,
                    msg: format!("duplicate entry `{name}`"),
                });
            }
            let code_at = r.pos;
            let code = r.u8("dtype")?;
            let dtype = DType::from_code(code).ok_or_else(|| Error::Format {
                offset: code_at,
                msg: format!("unknown dtype code {code}"),
            })?;
            let rank = r.u8("rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size_of()))
                .ok_or_else(|| Error::Format {
                    offset: r.pos,
                    msg: format!("dims {dims:?} overflow"),
                })?;
            let raw = r.take(n, "values")?.to_vec();
            entries.push(CheckpointEntry { name, dtype, dims, raw });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint { entries })
    }

    /// Writes every entry into the matching parameter of `m`. Fails before
    /// touching anything if an entry has no parameter of that name, or if the
    /// shapes differ. Parameters without an entry keep their values.
    pub fn apply<T: Element>(&self, m: &mut dyn Module<T>) -> Result<()> {
        let mut shapes = HashMap::new();
        m.visit_params(&mut |p| {
            shapes.insert(p.name().to_string(), p.shape().to_vec());
        });
        for e in &self.entries {
            match shapes.get(&e.name) {
                None => return Err(Error::Name(e.name.clone())),
                Some(s) if *s != e.dims => {
                    return Err(Error::shape(
                        "load_checkpoint",
                        format!("`{}` is {:?} in the checkpoint but {:?} in the module", e.name, e.dims, s),
                    ))
                }
                Some(_) => {}
            }
        }
        let by_name: HashMap<&str, &CheckpointEntry> = self.entries.iter().map(|e| (e.name.as_str(), e)).collect();
        m.visit_params_mut(&mut |p| {
            if let Some(e) = by_name.get(p.name()) {
                p.set_data(e.values()).expect("shape checked above");
            }
        });
        Ok(())
    }
}

pub fn save_checkpoint<T: Element>(path: impl AsRef<Path>, m: &dyn Module<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, Checkpoint::from_module(m).to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
