//! Versioned binary checkpoints.
//!
//! Layout (little endian): the 8-byte magic, a `u32` format version, a `u32`
//! length and that many bytes of JSON metadata, a `u32` block count, then per
//! block a `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u64` dims
//! and the `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"UVTXCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Blocks whose names start with `prefix.`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let p = format!("{prefix}.");
        self.blocks
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for (name, t) in &self.blocks {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.dims() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let values = t
                .to_dtype(DType::F32)
                .and_then(|t| t.flatten_all())
                .and_then(|t| t.to_vec1::<f32>())
                .map_err(std::io::Error::other)?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r, device).map_err(|e| match e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::Checkpoint(format!("{} is truncated", path.display()))
            }
            other => other,
        })
    }

    fn read_from(r: &mut impl Read, device: &Device) -> Result<Self> {
        let io = |e| Error::io("<checkpoint>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let meta_len = read_u32(r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(io)?;
        let meta = serde_json::from_slice(&meta)?;
        let count = read_u32(r)?;
        let mut blocks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(io)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank).map_err(io)?;
            let mut dims = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                let mut d = [0u8; 8];
                r.read_exact(&mut d).map_err(io)?;
                dims.push(u64::from_le_bytes(d) as usize);
            }
            let n: usize = dims.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(io)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blocks.push((name, Tensor::from_vec(values, dims, device)?));
        }
        Ok(Self { meta, blocks })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    Ok(u32::from_le_bytes(b))
}
