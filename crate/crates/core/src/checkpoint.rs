//! Flat binary checkpoints of named tensors.
//!
//! Layout: the magic bytes `VSKD`, a little-endian `u32` version, then for
//! each tensor its name length, the name bytes, the rank and every dimension
//! (all `u64`), followed by the values as little-endian `f64`.

use crate::encoding::GafImage;
use crate::error::{Result, VskdError};
use crate::models::Network;
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VSKD";
pub const VERSION: u32 = 1;

// Guards allocation when a corrupt header claims absurd sizes.
const MAX_NAME_LEN: u64 = 4096;
const MAX_RANK: u64 = 16;

pub fn encode_tensors<'a, I>(tensors: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(artifact(format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn artifact(msg: impl Into<String>) -> VskdError {
    VskdError::Artifact(msg.into())
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(artifact("bad magic bytes"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(artifact(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while !r.done() {
        let name_len = r.u64("name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(artifact(format!("name length {name_len} is implausible")));
        }
        let name = std::str::from_utf8(r.take(name_len as usize, "name")?)
            .map_err(|_| artifact("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u64("rank")?;
        if rank > MAX_RANK {
            return Err(artifact(format!("rank {rank} of '{name}' is implausible")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let bytes_needed = count.and_then(|c| c.checked_mul(8));
        let Some(bytes_needed) = bytes_needed else {
            return Err(artifact(format!("shape {shape:?} of '{name}' overflows")));
        };
        let raw = r.take(bytes_needed, "values")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_tensors<'a, I>(path: &Path, tensors: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    fs::write(path, encode_tensors(tensors))?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| artifact(format!("cannot read {}: {e}", path.display())))?;
    decode_tensors(&bytes)
}

pub fn network_to_bytes<N: Network>(net: &N) -> Vec<u8> {
    let named = net.named_parameters();
    encode_tensors(named.iter().map(|(n, t)| (n.as_str(), *t)))
}

/// Decodes a network; missing, extra or misshapen parameters are artifact errors.
pub fn network_from_bytes<N: Network>(bytes: &[u8]) -> Result<N> {
    N::from_named(decode_tensors(bytes)?).map_err(|e| match e {
        VskdError::InvalidInput(msg) => artifact(format!("not a valid {} checkpoint: {msg}", N::KIND)),
        other => other,
    })
}

pub fn save_network<N: Network>(path: &Path, net: &N) -> Result<()> {
    fs::write(path, network_to_bytes(net))?;
    Ok(())
}

pub fn load_network<N: Network>(path: &Path) -> Result<N> {
    let bytes = fs::read(path).map_err(|e| artifact(format!("cannot read {}: {e}", path.display())))?;
    network_from_bytes(&bytes)
}

/// Tensor name used by single-image raw files.
pub const GAF_TENSOR: &str = "gaf";

/// Full-precision image file: one `[3, side, side]` tensor in checkpoint layout.
pub fn gaf_to_bytes(img: &GafImage) -> Vec<u8> {
    let side = img.side();
    let t = Tensor::new(vec![3, side, side], img.flatten()).expect("channel-major layout");
    encode_tensors([(GAF_TENSOR, &t)])
}

/// Inverse of [`gaf_to_bytes`]; the label lives in the manifest, not the file.
pub fn gaf_from_bytes(bytes: &[u8], label: usize) -> Result<GafImage> {
    let mut tensors = decode_tensors(bytes)?;
    if tensors.len() != 1 || tensors[0].0 != GAF_TENSOR {
        return Err(artifact("raw image file must hold exactly one 'gaf' tensor"));
    }
    let (_, t) = tensors.pop().expect("one tensor");
    let &[3, side, side2] = t.shape() else {
        return Err(artifact(format!("raw image shape {:?} is not [3, n, n]", t.shape())));
    };
    if side != side2 {
        return Err(artifact(format!("raw image shape {:?} is not square", t.shape())));
    }
    let data = t.into_data();
    let n = side * side;
    let channels = [data[..n].to_vec(), data[n..2 * n].to_vec(), data[2 * n..].to_vec()];
    GafImage::from_channels(channels, side, label).map_err(|e| artifact(e.to_string()))
}
