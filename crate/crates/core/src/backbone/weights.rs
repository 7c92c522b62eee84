//! TADTW1 weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        6 bytes  "TADTW1"
//! layer_count  u32
//! per layer:   name_len u16, name (UTF-8), dims 4 x u32 (out, in, kh, kw),
//!              weights out*in*kh*kw x f32, bias out x f32
//! crc64        u64      CRC-64/XZ of every preceding byte
//! ```

use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::error::{Error, Result};
use crate::tensor::ConvKernel;

pub const MAGIC: &[u8; 6] = b"TADTW1";

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

/// One named layer as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredLayer {
    pub name: String,
    pub kernel: ConvKernel,
}

pub fn encode(layers: &[StoredLayer]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        let name = layer.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        for d in layer.kernel.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in layer.kernel.weights().iter().chain(layer.kernel.bias()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc64(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Truncated(what.into()))?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a TADTW1 byte buffer. Structure and checksum are verified here;
/// layer names and shapes are checked against the network by the caller.
pub fn decode(bytes: &[u8]) -> Result<Vec<StoredLayer>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(Error::Truncated("header".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let count = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(count as usize);
    for idx in 0..count {
        let what = format!("layer {idx}");
        let name_len = r.u16(&what)? as usize;
        let name = String::from_utf8(r.take(name_len, &what)?.to_vec())
            .map_err(|_| Error::Invalid(format!("{what}: name is not UTF-8")))?;
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = r.u32(&name)? as usize;
        }
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::Truncated(name.clone()))?;
        let weights = r.f32s(n, &name)?;
        let bias = r.f32s(dims[0], &name)?;
        let kernel = ConvKernel::new(dims[0], dims[1], dims[2], dims[3], weights, bias)?;
        if !kernel.is_finite() {
            return Err(Error::NonFinite(name));
        }
        layers.push(StoredLayer { name, kernel });
    }
    if r.pos != body.len() {
        // Payload and trailer disagree about where the file ends; either the
        // file was cut short or junk follows the last layer.
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        let computed = crc64(body);
        if stored != computed {
            return Err(Error::Truncated("checksum trailer".into()));
        }
        return Err(Error::Invalid(format!(
            "{} trailing bytes after last layer",
            body.len() - r.pos
        )));
    }
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = crc64(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(layers)
}

pub fn read_file(path: &Path) -> Result<Vec<StoredLayer>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_file(path: &Path, layers: &[StoredLayer]) -> Result<()> {
    std::fs::write(path, encode(layers)).map_err(|e| Error::io(path, e))
}
