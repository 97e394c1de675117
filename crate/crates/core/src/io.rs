//! Binary tensor container and parameter checkpoints.
//!
//! Container layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `AAKT` |
//! | 4     | format version (`u32`, currently 1) |
//! | 4     | rank (`u32`) |
//! | 8·rank | extents (`u64` each) |
//! | 8·n   | row-major `f64` payload |
//!
//! A checkpoint is a directory holding one container per named parameter and
//! a `manifest.txt` with one `name<TAB>shape<TAB>file` line per parameter, in
//! the canonical order of the parameter set. Shapes are written as `2x3x4`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AAKT";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * t.rank() + 8 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut cur, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut cur)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rank = read_u32(&mut cur)? as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        read_exact(&mut cur, &mut b)?;
        let d = usize::try_from(u64::from_le_bytes(b))
            .map_err(|_| Error::Format("extent overflows usize".into()))?;
        shape.push(d);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    if cur.len() != n * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            cur.len(),
            n * 8
        )));
    }
    let data = cur
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::from_vec(&shape, data).map_err(|e| Error::Format(e.to_string()))
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::Format("truncated header".into()))
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn format_shape(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub fn parse_shape(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|p| p.parse().ok()).collect()
}

/// Writes named tensors as a checkpoint directory.
pub fn save_checkpoint<'a>(
    dir: impl AsRef<Path>,
    params: impl IntoIterator<Item = (String, &'a Tensor)>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (name, t) in params {
        if name.is_empty() || name.contains(['\t', '\n', '/']) {
            return Err(Error::invalid(format!("bad parameter name {name:?}")));
        }
        let file = format!("{name}.aakt");
        write_tensor(dir.join(&file), t)?;
        manifest.push_str(&format!("{name}\t{}\t{file}\n", format_shape(t.shape())));
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads a checkpoint directory back, in manifest order.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut out = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, file] = fields[..] else {
            return Err(Error::parse(i + 1, "expected name, shape and file"));
        };
        let shape = parse_shape(shape).ok_or_else(|| Error::parse(i + 1, "bad shape"))?;
        let t = read_tensor(dir.join(file))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::shape("load_checkpoint", t.shape(), &shape));
        }
        out.push((name.to_string(), t));
    }
    Ok(out)
}
