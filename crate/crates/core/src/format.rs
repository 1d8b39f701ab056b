//! The R3DM channelized binary volume format.
//!
//! Layout, all fields little-endian:
//!
//! ```text
//! magic "R3DM" (4) | version u16 = 1 | channel_count u8
//! | W u32 | D u32 | H u32 | resolution_m f32
//! | per channel: channel_type u8 + W*D*H f32 payload, x-major (index = (x*D + y)*H + z)
//! | CRC32C u32 over all preceding bytes
//! ```
//!
//! Channel types: 0 = label, 1 = env, 2 = sparse, 16 + i = heatmap i,
//! 32 = base2d.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridDims;

pub const MAGIC: [u8; 4] = *b"R3DM";
pub const VERSION: u16 = 1;

/// magic + version + channel_count + W + D + H + resolution.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 4 + 4;
pub const CRC_LEN: usize = 4;

/// Heatmap channels occupy type codes 16..32.
pub const MAX_HEATMAPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelKind {
    Label,
    Env,
    Sparse,
    Heatmap(u8),
    Base2d,
}

impl ChannelKind {
    pub fn code(self) -> u8 {
        match self {
            ChannelKind::Label => 0,
            ChannelKind::Env => 1,
            ChannelKind::Sparse => 2,
            ChannelKind::Heatmap(i) => 16 + i,
            ChannelKind::Base2d => 32,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ChannelKind::Label),
            1 => Ok(ChannelKind::Env),
            2 => Ok(ChannelKind::Sparse),
            16..=31 => Ok(ChannelKind::Heatmap(code - 16)),
            32 => Ok(ChannelKind::Base2d),
            other => Err(Error::Format(format!("unknown channel type {other}"))),
        }
    }

    pub fn heatmap(index: usize) -> Result<Self> {
        if index < MAX_HEATMAPS {
            Ok(ChannelKind::Heatmap(index as u8))
        } else {
            Err(Error::InvalidParams(format!(
                "at most {MAX_HEATMAPS} heatmap channels are representable, got index {index}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub kind: ChannelKind,
    pub data: Vec<f32>,
}

/// A decoded R3DM file: shared dims plus typed channels in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct R3dmFile {
    pub dims: GridDims,
    pub channels: Vec<Channel>,
}

pub fn crc32c(bytes: &[u8]) -> u32 {
    crc32c::crc32c(bytes)
}

impl R3dmFile {
    pub fn new(dims: GridDims) -> Self {
        R3dmFile {
            dims,
            channels: Vec::new(),
        }
    }

    pub fn single(dims: GridDims, kind: ChannelKind, data: Vec<f32>) -> Result<Self> {
        let mut f = R3dmFile::new(dims);
        f.push(kind, data)?;
        Ok(f)
    }

    pub fn push(&mut self, kind: ChannelKind, data: Vec<f32>) -> Result<()> {
        if data.len() != self.dims.voxel_count() {
            return Err(Error::ShapeMismatch(format!(
                "channel {kind:?} has {} values, grid {} needs {}",
                data.len(),
                self.dims,
                self.dims.voxel_count()
            )));
        }
        if self.channels.len() == u8::MAX as usize {
            return Err(Error::InvalidParams("too many channels".into()));
        }
        self.channels.push(Channel { kind, data });
        Ok(())
    }

    pub fn channel(&self, kind: ChannelKind) -> Option<&[f32]> {
        self.channels
            .iter()
            .find(|c| c.kind == kind)
            .map(|c| c.data.as_slice())
    }

    /// The only channel of a single-channel file.
    pub fn into_single(self) -> Result<Channel> {
        let n = self.channels.len();
        if n != 1 {
            return Err(Error::Format(format!(
                "expected a single-channel file, found {n} channels"
            )));
        }
        Ok(self.channels.into_iter().next().unwrap())
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.channels.len() * (1 + 4 * self.dims.voxel_count()) + CRC_LEN
    }

    /// Serializes to bytes; the trailing CRC is returned alongside.
    pub fn encode(&self) -> Result<(Vec<u8>, u32)> {
        let d = &self.dims;
        let as_u32 = |v: usize| {
            u32::try_from(v).map_err(|_| Error::InvalidParams(format!("dimension {v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.channels.len() as u8);
        out.extend_from_slice(&as_u32(d.width)?.to_le_bytes());
        out.extend_from_slice(&as_u32(d.depth)?.to_le_bytes());
        out.extend_from_slice(&as_u32(d.height)?.to_le_bytes());
        out.extend_from_slice(&(d.resolution_m as f32).to_le_bytes());
        for ch in &self.channels {
            out.push(ch.kind.code());
            for v in &ch.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok((out, crc))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + CRC_LEN {
            return Err(Error::Format(format!(
                "file too short: {} bytes",
                bytes.len()
            )));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let channel_count = bytes[6] as usize;
        let (w, d, h) = (u32_at(7) as usize, u32_at(11) as usize, u32_at(15) as usize);
        let n = w
            .checked_mul(d)
            .and_then(|v| v.checked_mul(h))
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let expected = n
            .checked_mul(4)
            .and_then(|v| v.checked_add(1))
            .and_then(|v| v.checked_mul(channel_count))
            .and_then(|v| v.checked_add(HEADER_LEN + CRC_LEN))
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "length mismatch: header implies {expected} bytes, file has {}",
                bytes.len()
            )));
        }

        let body = &bytes[..bytes.len() - CRC_LEN];
        let stored = u32::from_le_bytes(bytes[bytes.len() - CRC_LEN..].try_into().unwrap());
        let computed = crc32c(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let resolution = f32::from_le_bytes(body[19..23].try_into().unwrap());
        let dims = GridDims::new(w, d, h, f64::from(resolution))
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;

        let mut channels = Vec::with_capacity(channel_count);
        let mut off = HEADER_LEN;
        for _ in 0..channel_count {
            let kind = ChannelKind::from_code(body[off])?;
            off += 1;
            let data = body[off..off + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += 4 * n;
            channels.push(Channel { kind, data });
        }
        Ok(R3dmFile { dims, channels })
    }

    /// Writes the file and returns its CRC32C.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<u32> {
        let path = path.as_ref();
        let (bytes, crc) = self.encode()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(crc)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Decodes a single-channel file, checks its kind and shape.
pub(crate) fn read_single(
    path: impl AsRef<Path>,
    accepted: &[ChannelKind],
    dims: Option<&GridDims>,
) -> Result<(GridDims, Vec<f32>)> {
    let file = R3dmFile::read(path)?;
    let file_dims = file.dims;
    if let Some(want) = dims {
        want.ensure_same_shape(&file_dims)?;
    }
    let ch = file.into_single()?;
    if !accepted.contains(&ch.kind) {
        return Err(Error::Format(format!(
            "unexpected channel type {:?}, expected one of {accepted:?}",
            ch.kind
        )));
    }
    Ok((file_dims, ch.data))
}
