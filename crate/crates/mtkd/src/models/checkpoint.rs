//! Checkpoint container.
//!
//! Layout (all integers little-endian u32 unless noted):
//!
//! ```text
//! magic            9 bytes  "MTKDCKPT1"
//! arch id          u32 length + utf-8 bytes
//! width            u32
//! tensor count     u32
//! per tensor:      name (u32 length + utf-8), rank u32, dims u32 x rank
//! payloads         raw little-endian f32 values, one tensor after another
//!                  in manifest order
//! ```
//!
//! Round-trips are bit-exact: values are written as raw f32 bit patterns.

use std::io::{Read, Write};
use std::path::Path;

use super::ParamSnapshot;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"MTKDCKPT1";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(snap: &ParamSnapshot<f32>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let arch_id = snap.arch.id().as_bytes();
    buf.extend_from_slice(&(arch_id.len() as u32).to_le_bytes());
    buf.extend_from_slice(arch_id);
    buf.extend_from_slice(&(snap.width as u32).to_le_bytes());
    buf.extend_from_slice(&(snap.tensors.len() as u32).to_le_bytes());
    for (name, shape, _) in &snap.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    }
    for (_, _, data) in &snap.tensors {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("file truncated".to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8 in manifest".to_string()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSnapshot<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };

    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let arch: super::Arch = r.string()?.parse()?;
    let width = r.u32()? as usize;
    let count = r.u32()? as usize;

    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        manifest.push((name, shape));
    }

    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} has {} trailing bytes",
            path.display(),
            bytes.len() - r.pos
        )));
    }

    let snap = ParamSnapshot { arch, width, tensors };
    // Validate names/shapes against the architecture table.
    super::ModelParams::from_snapshot(&snap, false)?;
    Ok(snap)
}
