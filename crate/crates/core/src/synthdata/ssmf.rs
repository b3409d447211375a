//! The SSMF feature-file container: magic `SSMF`, a version byte, a
//! length-prefixed JSON header, then little-endian f32 features row-major
//! and optional i32 label arrays (current labels then future labels, -1 for
//! undefined).

use super::{Episode, EpisodeLabels};
use crate::error::{FormatError, Result, SsmError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SSMF";
pub const VERSION: u8 = 0x01;

#[derive(Serialize, Deserialize)]
struct Header {
    frames: usize,
    dim: usize,
    fps: f64,
    has_labels: bool,
    horizon: usize,
}

/// Serializes an episode to SSMF bytes. Features are stored as f32.
pub fn to_bytes(episode: &Episode) -> Result<Vec<u8>> {
    let header = Header {
        frames: episode.len(),
        dim: episode.feature_dim(),
        fps: episode.fps,
        has_labels: episode.labels.is_some(),
        horizon: episode.horizon,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| SsmError::Config(format!("header serialization: {e}")))?;

    let mut out = Vec::with_capacity(
        9 + header_json.len() + episode.len() * episode.feature_dim() * 4,
    );
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for row in &episode.features {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(labels) = &episode.labels {
        if labels.current.len() != episode.len() || labels.future.len() != episode.len() {
            return Err(SsmError::Dimension("label arrays must match frame count".into()));
        }
        for &y in labels.current.iter().chain(&labels.future) {
            out.extend_from_slice(&y.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses SSMF bytes. Each corruption mode maps to a distinct
/// [`FormatError`] variant.
pub fn from_bytes(bytes: &[u8]) -> Result<Episode> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: 4,
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(FormatError::BadMagic {
            expected: "SSMF",
            found,
        }
        .into());
    }
    if bytes.len() < 9 {
        return Err(FormatError::Truncated {
            expected: 9,
            found: bytes.len(),
        }
        .into());
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]).into());
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 9 + header_len {
        return Err(FormatError::Truncated {
            expected: 9 + header_len,
            found: bytes.len(),
        }
        .into());
    }
    let header: Header = serde_json::from_slice(&bytes[9..9 + header_len])
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;

    let feature_bytes = header
        .frames
        .checked_mul(header.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::InvalidHeader("frame/dim overflow".into()))?;
    let label_bytes = if header.has_labels { header.frames * 8 } else { 0 };
    let expected = 9 + header_len + feature_bytes + label_bytes;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(FormatError::HeaderMismatch(format!(
            "{} trailing bytes beyond declared payload",
            bytes.len() - expected
        ))
        .into());
    }

    let mut offset = 9 + header_len;
    let mut features = Vec::with_capacity(header.frames);
    for _ in 0..header.frames {
        let mut row = Vec::with_capacity(header.dim);
        for _ in 0..header.dim {
            let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(SsmError::Numeric("non-finite feature in file".into()));
            }
            row.push(v as f64);
            offset += 4;
        }
        features.push(row);
    }
    let labels = if header.has_labels {
        let read_labels = |offset: &mut usize| {
            (0..header.frames)
                .map(|_| {
                    let v =
                        i32::from_le_bytes(bytes[*offset..*offset + 4].try_into().expect("4 bytes"));
                    *offset += 4;
                    v
                })
                .collect::<Vec<i32>>()
        };
        let current = read_labels(&mut offset);
        let future = read_labels(&mut offset);
        Some(EpisodeLabels { current, future })
    } else {
        None
    };

    Ok(Episode {
        features,
        labels,
        horizon: header.horizon,
        fps: header.fps,
    })
}

pub fn write_feature_file<P: AsRef<Path>>(path: P, episode: &Episode) -> Result<()> {
    fs::write(path, to_bytes(episode)?)?;
    Ok(())
}

pub fn load_feature_file<P: AsRef<Path>>(path: P) -> Result<Episode> {
    from_bytes(&fs::read(path)?)
}
