//! Binary checkpoint format (little-endian throughout).
//!
//! ```text
//! magic        b"SSCK"
//! version      u32 (= 1)
//! layer count  u32
//! input rank   u32, then extents u32[rank]
//! per layer:
//!   name       u32 length + UTF-8 bytes
//!   kind       u8   0 dense | 1 conv2d | 2 relu | 3 maxpool2d | 4 flatten
//!   hyperparams
//!     dense      units u32
//!     conv2d     out_channels u32, kernel_h u32, kernel_w u32, stride u32, padding u32
//!     maxpool2d  window u32, stride u32
//!     relu, flatten: none
//!   param count u32 (2 for dense/conv2d: weight then bias, else 0)
//!   per param: tensor block
//! crc32        u32, IEEE CRC-32 of every preceding byte
//! ```
//!
//! A tensor block is `rank u32, extents u32[rank], f64 values` in row-major
//! order. Explanation maps are written as bare tensor blocks.

use std::fs;
use std::path::Path;

use sanity_core::nn::{Architecture, LayerKind, LayerParams, LayerSpec, Network};
use sanity_core::Tensor;

use crate::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unknown layer kind {0}")]
    UnknownLayerKind(u8),
    #[error("layer name is not valid UTF-8")]
    InvalidName,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

impl CheckpointError {
    /// Stable short code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "bad-magic",
            CheckpointError::UnsupportedVersion(_) => "bad-version",
            CheckpointError::Truncated => "truncated",
            CheckpointError::ChecksumMismatch { .. } => "bad-checksum",
            CheckpointError::UnknownLayerKind(_) => "bad-layer-kind",
            CheckpointError::InvalidName => "bad-name",
            CheckpointError::ShapeMismatch(_) => "shape-mismatch",
            CheckpointError::TrailingBytes(_) => "trailing-bytes",
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("value fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_tensor_block(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.rank());
    for &e in t.shape() {
        put_u32(out, e);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, net.layers().len());
    put_u32(&mut out, net.input_shape().len());
    for &e in net.input_shape() {
        put_u32(&mut out, e);
    }
    for (i, layer) in net.layers().iter().enumerate() {
        put_u32(&mut out, layer.name.len());
        out.extend_from_slice(layer.name.as_bytes());
        match layer.kind {
            LayerKind::Dense { units } => {
                out.push(0);
                put_u32(&mut out, units);
            }
            LayerKind::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                out.push(1);
                for v in [out_channels, kernel_h, kernel_w, stride, padding] {
                    put_u32(&mut out, v);
                }
            }
            LayerKind::Relu => out.push(2),
            LayerKind::MaxPool2d { window, stride } => {
                out.push(3);
                put_u32(&mut out, window);
                put_u32(&mut out, stride);
            }
            LayerKind::Flatten => out.push(4),
        }
        match net.params(i) {
            Some(p) => {
                put_u32(&mut out, 2);
                write_tensor_block(&mut out, &p.weight);
                write_tensor_block(&mut out, &p.bias);
            }
            None => put_u32(&mut out, 0),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub fn tensor_block(&mut self) -> Result<Tensor, CheckpointError> {
        let rank = self.u32()?;
        if rank == 0 {
            return Err(CheckpointError::ShapeMismatch("tensor of rank 0".into()));
        }
        if rank.saturating_mul(4) > self.remaining() {
            return Err(CheckpointError::Truncated);
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| CheckpointError::ShapeMismatch(format!("extents {shape:?} overflow")))?;
        if len.saturating_mul(8) > self.remaining() {
            return Err(CheckpointError::Truncated);
        }
        let data = self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network, CheckpointError> {
    if bytes.len() < 4 && MAGIC.starts_with(bytes) {
        return Err(CheckpointError::Truncated);
    }
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len().saturating_sub(4).max(4));
    let stored = tail
        .try_into()
        .map(u32::from_le_bytes)
        .map_err(|_| CheckpointError::Truncated)?;
    let computed = crc32fast::hash(body);
    // Parse first so a short file reports truncation rather than a bad checksum.
    let parsed = decode_body(body);
    match parsed {
        Err(CheckpointError::Truncated) => Err(CheckpointError::Truncated),
        _ if stored != computed => Err(CheckpointError::ChecksumMismatch { stored, computed }),
        other => other,
    }
}

fn decode_body(body: &[u8]) -> Result<Network, CheckpointError> {
    let mut r = Reader::new(body);
    r.take(4)?;
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let n_layers = r.u32()?;
    let in_rank = r.u32()?;
    if in_rank.saturating_mul(4) > r.remaining() {
        return Err(CheckpointError::Truncated);
    }
    let input_shape = (0..in_rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;

    let mut layers = Vec::new();
    let mut params = Vec::new();
    for _ in 0..n_layers {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::InvalidName)?
            .to_owned();
        let kind = match r.u8()? {
            0 => LayerKind::Dense { units: r.u32()? },
            1 => LayerKind::Conv2d {
                out_channels: r.u32()?,
                kernel_h: r.u32()?,
                kernel_w: r.u32()?,
                stride: r.u32()?,
                padding: r.u32()?,
            },
            2 => LayerKind::Relu,
            3 => LayerKind::MaxPool2d {
                window: r.u32()?,
                stride: r.u32()?,
            },
            4 => LayerKind::Flatten,
            k => return Err(CheckpointError::UnknownLayerKind(k)),
        };
        let count = r.u32()?;
        let p = match count {
            0 => None,
            2 => Some(LayerParams {
                weight: r.tensor_block()?,
                bias: r.tensor_block()?,
            }),
            n => {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "layer {name:?} has {n} parameter tensors"
                )))
            }
        };
        layers.push(LayerSpec::new(name, kind));
        params.push(p);
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    let arch = Architecture::new(input_shape, layers).map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
    Network::new(arch, params).map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net)).map_err(|e| HarnessError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes).map_err(|source| HarnessError::Checkpoint {
        path: path.to_owned(),
        source,
    })
}
