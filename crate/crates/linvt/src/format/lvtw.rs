//! `LVTW` weight files: a self-describing, diffable shape table followed by
//! raw f64 payloads.
//!
//! ```text
//! magic  b"LVTW"
//! version  u16 LE
//! count  u32 LE
//! count * { name_len u32, name UTF-8, rank u32, rank * extent u32 }
//! per entry, in table order: numel * f64 LE
//! ```

use std::fs;
use std::path::Path;

use super::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LVTW";
pub const VERSION: u16 = 1;

pub fn write(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, t) in entries {
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, "LVTW");
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.bytes(name_len)?)
            .map_err(|_| Error::CorruptFile("LVTW: entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u32()? as usize;
            if d == 0 {
                return Err(Error::CorruptFile(format!(
                    "LVTW: entry `{name}` has a zero extent"
                )));
            }
            shape.push(d);
        }
        table.push((name, shape));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape) in table {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    Ok(out)
}
