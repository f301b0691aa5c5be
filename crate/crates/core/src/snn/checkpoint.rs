//! Single-file checkpoint: JSON manifest plus named little-endian f64 arrays.
//!
//! Layout: `"SDCK"`, u16 version, u32 manifest length, manifest bytes,
//! u32 tensor count, then per tensor: u16 name length, name, u8 rank,
//! u64 dims, f64 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SDCK";
const VERSION: u16 = 1;

pub struct Checkpoint {
    pub manifest: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn write_checkpoint<W: Write>(mut w: W, manifest: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let m = serde_json::to_vec(manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.len() as u32).to_le_bytes())?;
    w.write_all(&m)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for e in store.entries() {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[e.value.ndim() as u8])?;
        for &d in e.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in e.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("checkpoint {what}")),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if &take::<4>(&mut r, "magic")? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes(take(&mut r, "version")?);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mlen = u32::from_le_bytes(take(&mut r, "manifest length")?) as usize;
    let mut m = vec![0u8; mlen];
    r.read_exact(&mut m)
        .map_err(|_| Error::Truncated("checkpoint manifest".into()))?;
    let manifest = serde_json::from_slice(&m)?;
    let count = u32::from_le_bytes(take(&mut r, "tensor count")?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u16::from_le_bytes(take(&mut r, "name length")?) as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)
            .map_err(|_| Error::Truncated("checkpoint tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|e| Error::Parse(e.to_string()))?;
        let rank = take::<1>(&mut r, "rank")?[0] as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| take::<8>(&mut r, "dims").map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| take::<8>(&mut r, "data").map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(Checkpoint { manifest, tensors })
}

pub fn save(path: &Path, manifest: &serde_json::Value, store: &ParamStore) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), manifest, store)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

impl Checkpoint {
    /// Copy every tensor into `store`. Names, order and shapes must match
    /// exactly.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for ((name, t), e) in self.tensors.iter().zip(store.entries()) {
            if *name != e.name || t.shape() != e.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "{name} {:?} vs model {} {:?}",
                    t.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        for ((_, t), e) in self.tensors.iter().zip(store.entries_mut()) {
            e.value = t.clone();
        }
        Ok(())
    }
}
