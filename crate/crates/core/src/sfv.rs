//! SFV1: a frame-by-feature matrix container.
//!
//! Layout (all little-endian): magic `SFV1`, `u32 n_frames`, `u32 dim`,
//! `f64 hop_s`, `f64 offset_s`, then `n_frames * dim` `f32` values row-major.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SFV1";
pub const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Error)]
pub enum SfvError {
    #[error("bad magic {0:02x?}, expected \"SFV1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported SFV version {0:?}")]
    UnsupportedVersion(char),
    #[error("header truncated: {0} bytes, need {HEADER_LEN}")]
    TruncatedHeader(usize),
    #[error("truncated payload: expected {expected_values} values, got {actual_values} ({expected_bytes} vs {actual_bytes} bytes)")]
    Truncated {
        expected_values: usize,
        actual_values: usize,
        expected_bytes: usize,
        actual_bytes: usize,
    },
    #[error("{extra} trailing bytes after {expected_values} values")]
    TrailingBytes { expected_values: usize, extra: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("non-finite value at frame {frame}, column {column}")]
    NonFinite { frame: usize, column: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfvMatrix {
    pub n_frames: usize,
    pub dim: usize,
    pub hop_s: f64,
    pub offset_s: f64,
    pub data: Vec<f32>,
}

impl SfvMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SfvError> {
        if bytes.len() >= 4 {
            let magic: [u8; 4] = bytes[..4].try_into().unwrap();
            if magic != MAGIC {
                if magic[..3] == MAGIC[..3] {
                    return Err(SfvError::UnsupportedVersion(magic[3] as char));
                }
                return Err(SfvError::BadMagic(magic));
            }
        }
        if bytes.len() < HEADER_LEN {
            return Err(SfvError::TruncatedHeader(bytes.len()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let n_frames = u32_at(4);
        let dim = u32_at(8);
        let hop_s = f64_at(12);
        let offset_s = f64_at(20);
        if !(hop_s.is_finite() && hop_s > 0.0) {
            return Err(SfvError::InvalidHeader(format!("hop_s must be positive, got {hop_s}")));
        }
        if !offset_s.is_finite() {
            return Err(SfvError::InvalidHeader(format!("offset_s must be finite, got {offset_s}")));
        }
        let expected_values = n_frames * dim;
        let payload = &bytes[HEADER_LEN..];
        let expected_bytes = expected_values * 4;
        if payload.len() < expected_bytes {
            return Err(SfvError::Truncated {
                expected_values,
                actual_values: payload.len() / 4,
                expected_bytes,
                actual_bytes: payload.len(),
            });
        }
        if payload.len() > expected_bytes {
            return Err(SfvError::TrailingBytes {
                expected_values,
                extra: payload.len() - expected_bytes,
            });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(SfvError::NonFinite {
                frame: pos / dim,
                column: pos % dim,
            });
        }
        Ok(Self {
            n_frames,
            dim,
            hop_s,
            offset_s,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        assert_eq!(self.data.len(), self.n_frames * self.dim, "matrix shape mismatch");
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.hop_s.to_le_bytes());
        out.extend_from_slice(&self.offset_s.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self, SfvError> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), SfvError> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SfvMatrix {
        SfvMatrix {
            n_frames: 2,
            dim: 3,
            hop_s: 0.02,
            offset_s: 0.01,
            data: vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25],
        }
    }

    #[test]
    fn exact_bytes() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..4], &[0x53, 0x46, 0x56, 0x31]);
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &0.02f64.to_le_bytes());
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 24);
        assert_eq!(SfvMatrix::decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn format_errors() {
        let mut bytes = sample().encode();
        bytes[3] = b'2';
        assert!(matches!(SfvMatrix::decode(&bytes), Err(SfvError::UnsupportedVersion('2'))));
        bytes[0] = b'X';
        assert!(matches!(SfvMatrix::decode(&bytes), Err(SfvError::BadMagic(_))));
        assert!(matches!(SfvMatrix::decode(&sample().encode()[..10]), Err(SfvError::TruncatedHeader(10))));
        let mut long = sample().encode();
        long.push(0);
        assert!(matches!(SfvMatrix::decode(&long), Err(SfvError::TrailingBytes { extra: 1, .. })));
        let mut nan = sample();
        nan.data[4] = f32::NAN;
        assert!(matches!(
            SfvMatrix::decode(&nan.encode()),
            Err(SfvError::NonFinite { frame: 1, column: 1 })
        ));
    }
}
