//! Model checkpoint archive.
//!
//! A checkpoint is one binary file. All integers are little-endian.
//!
//! ```text
//! magic        4 bytes   "MPCK"
//! version      u32 len + UTF-8   "mp-v1"
//! header       u32 len + UTF-8   TOML: joints + [config] table
//! count        u32               number of tensors
//! tensor*      u32 len + UTF-8 name
//!              u8 dtype          1 = f64
//!              u8 ndim
//!              u64 * ndim        shape
//!              raw data          prod(shape) values, little-endian, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MotionPrior, MotionPriorConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MPCK";
pub const VERSION: &str = "mp-v1";
const DTYPE_F64: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    joints: usize,
    config: MotionPriorConfig,
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes(model: &MotionPrior) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    write_str(&mut out, VERSION);
    let header = Header {
        joints: model.joints(),
        config: model.config().clone(),
    };
    write_str(&mut out, &toml::to_string(&header).expect("header serializes"));
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, value) in model.params().iter() {
        write_str(&mut out, name);
        out.push(DTYPE_F64);
        out.push(2);
        out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for v in value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<MotionPrior> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a motion prior checkpoint".into()));
    }
    let version = r.string()?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION.into(),
            found: version,
        });
    }
    let header: Header =
        toml::from_str(&r.string()?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!("tensor {name} has unsupported dtype {dtype}")));
        }
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let shape = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => return Err(Error::Format(format!("tensor {name} has {ndim} dimensions"))),
        };
        let raw = r.take(shape.0 * shape.1 * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Array2::from_shape_vec(shape, data).expect("sized")));
    }
    if !r.buf.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", r.buf.len())));
    }
    MotionPrior::from_params(header.config, header.joints, tensors)
}

pub fn save(model: &MotionPrior, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MotionPrior> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
