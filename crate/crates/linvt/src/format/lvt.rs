//! `LVT1` token stream files.
//!
//! ```text
//! magic  b"LVT1"
//! T, N, C  u32 LE each
//! dtype  u32 LE: 1 = f32, 2 = f64
//! payload  T*N*C values, row-major (t, p, c)
//! ```

use std::fs;
use std::path::Path;

use super::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::svr::FrameTokenStream;

const MAGIC: &[u8; 4] = b"LVT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn from_code(code: u32) -> Result<Dtype> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::CorruptFile(format!("LVT1: unknown dtype {other}"))),
        }
    }
}

pub fn read(path: &Path) -> Result<(FrameTokenStream, Dtype)> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, "LVT1");
    r.magic(MAGIC)?;
    let t = r.u32()? as usize;
    let n = r.u32()? as usize;
    let c = r.u32()? as usize;
    let dtype = Dtype::from_code(r.u32()?)?;
    if t == 0 || n == 0 || c == 0 {
        return Err(Error::CorruptFile(format!(
            "LVT1: zero extent in header {t}x{n}x{c}"
        )));
    }
    let numel = t * n * c;
    let mut data = Vec::with_capacity(numel);
    match dtype {
        Dtype::F32 => {
            for _ in 0..numel {
                data.push(r.f32()? as f64);
            }
        }
        Dtype::F64 => {
            for _ in 0..numel {
                data.push(r.f64()?);
            }
        }
    }
    r.finish()?;
    Ok((FrameTokenStream::from_vec(t, n, c, data)?, dtype))
}

pub fn write(path: &Path, stream: &FrameTokenStream, dtype: Dtype) -> Result<()> {
    let (t, n, c) = (
        stream.frames(),
        stream.tokens_per_frame(),
        stream.channels(),
    );
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let mut buf = Vec::with_capacity(20 + stream.tokens().numel() * width);
    buf.extend_from_slice(MAGIC);
    for v in [t, n, c, dtype as usize] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in stream.tokens().data() {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn stream(seed: u64) -> FrameTokenStream {
        let mut rng = Rng::new(seed);
        FrameTokenStream::new(Tensor::randn(vec![2, 3, 4], 1.0, &mut rng)).unwrap()
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.lvt");
        let s = stream(1);
        write(&path, &s, Dtype::F64).unwrap();
        let (back, dtype) = read(&path).unwrap();
        assert_eq!(dtype, Dtype::F64);
        for (a, b) in s.tokens().data().iter().zip(back.tokens().data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_round_trip_is_bit_exact_at_file_level() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.lvt");
        let p2 = dir.path().join("b.lvt");
        write(&p1, &stream(2), Dtype::F32).unwrap();
        let (back, dtype) = read(&p1).unwrap();
        assert_eq!(dtype, Dtype::F32);
        write(&p2, &back, Dtype::F32).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lvt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read(&path), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lvt");
        write(&path, &stream(3), Dtype::F64).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read(&path), Err(Error::CorruptFile(_))));

        let mut extended = bytes.clone();
        extended.push(0);
        std::fs::write(&path, &extended).unwrap();
        assert!(matches!(read(&path), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn rejects_unknown_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.lvt");
        let mut buf = Vec::new();
        buf.extend_from_slice(b"LVT1");
        for v in [1u32, 1, 1, 9] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&1.0f64.to_le_bytes());
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(read(&path), Err(Error::CorruptFile(_))));
    }
}
