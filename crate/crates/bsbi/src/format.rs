//! The little-endian binary envelope shared by dataset caches and checkpoints.
//!
//! Layout: magic `BSBI`, version `u32`, task name (`u32` length + UTF-8),
//! budget `u64`, seed `u64`, `D_θ` `u32`, `D_x` `u32`, record count `u64`,
//! then the payload.

use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"BSBI";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}, not a BSBI file")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("header does not match the request: {0}")]
    HeaderMismatch(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Core(#[from] bsbi_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub task: String,
    pub budget: u64,
    pub seed: u64,
    pub theta_dim: u32,
    pub x_dim: u32,
    pub count: u64,
}

impl Header {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.task)?;
        w.write_all(&self.budget.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.theta_dim.to_le_bytes())?;
        w.write_all(&self.x_dim.to_le_bytes())?;
        w.write_all(&self.count.to_le_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(FormatError::Version { found: version });
        }
        Ok(Header {
            task: read_str(r)?,
            budget: read_u64(r)?,
            seed: read_u64(r)?,
            theta_dim: read_u32(r)?,
            x_dim: read_u32(r)?,
            count: read_u64(r)?,
        })
    }
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(FormatError::Malformed(format!("string of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| FormatError::Malformed("string is not UTF-8".into()))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// readers never see a half-written file.
pub fn replace_file(path: &std::path::Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".{}.{}.tmp", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed)));
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
