//! Shared binary container envelope: an 8-byte magic string, a `u32`
//! format version, the payload, and a trailing CRC32 of every preceding
//! byte. Little-endian throughout. Checkpoints and the on-disk patch
//! cache both use this envelope with their own magic strings.

use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContainerError {
    /// Fewer bytes than a well-formed container can occupy; `offset` is
    /// where reading had to stop.
    Truncated { offset: usize, needed: usize },
    BadMagic { expected: [u8; 8], got: [u8; 8] },
    BadVersion { expected: u32, got: u32 },
    CrcMismatch { stored: u32, computed: u32 },
}

impl fmt::Display for ContainerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerError::Truncated { offset, needed } => write!(
                f,
                "container truncated at byte offset {offset}: {needed} more bytes required"
            ),
            ContainerError::BadMagic { expected, got } => write!(
                f,
                "bad magic {:?}, expected {:?}",
                core::str::from_utf8(got).unwrap_or("<non-utf8>"),
                core::str::from_utf8(expected).unwrap_or("<non-utf8>"),
            ),
            ContainerError::BadVersion { expected, got } => {
                write!(f, "unsupported format version {got}, expected {expected}")
            }
            ContainerError::CrcMismatch { stored, computed } => write!(
                f,
                "CRC32 mismatch: file stores {stored:#010x}, contents hash to {computed:#010x}"
            ),
        }
    }
}

impl core::error::Error for ContainerError {}

/// Wrap a payload in the envelope.
pub fn seal(magic: &[u8; 8], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + payload.len() + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Validate magic, version, and CRC; return the payload slice.
pub fn unseal<'a>(
    magic: &[u8; 8],
    version: u32,
    bytes: &'a [u8],
) -> Result<&'a [u8], ContainerError> {
    if bytes.len() < 8 {
        return Err(ContainerError::Truncated {
            offset: bytes.len(),
            needed: 8 - bytes.len(),
        });
    }
    let got: [u8; 8] = bytes[..8].try_into().unwrap();
    if &got != magic {
        return Err(ContainerError::BadMagic {
            expected: *magic,
            got,
        });
    }
    if bytes.len() < 12 {
        return Err(ContainerError::Truncated {
            offset: bytes.len(),
            needed: 12 - bytes.len(),
        });
    }
    let got_version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if got_version != version {
        return Err(ContainerError::BadVersion {
            expected: version,
            got: got_version,
        });
    }
    if bytes.len() < 16 {
        return Err(ContainerError::Truncated {
            offset: bytes.len(),
            needed: 16 - bytes.len(),
        });
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(ContainerError::CrcMismatch { stored, computed });
    }
    Ok(&bytes[12..body_end])
}

/// Cursor for decoding little-endian payloads with offset-carrying errors.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Offset of `bytes[0]` within the enclosing file, for error messages.
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], base: usize) -> Self {
        Reader { bytes, pos: 0, base }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.remaining() < n {
            return Err(ContainerError::Truncated {
                offset: self.offset(),
                needed: n - self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32_slice(&mut self, count: usize) -> Result<Vec<f32>, ContainerError> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
