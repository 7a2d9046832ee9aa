//! `URF1` binary frame files.
//!
//! Layout, all little-endian:
//!
//! | offset | type   | field                                   |
//! |--------|--------|-----------------------------------------|
//! | 0      | 4 B    | magic `URF1`                            |
//! | 4      | u32    | version (1)                             |
//! | 8      | u32    | axial length                            |
//! | 12     | u32    | lateral length                          |
//! | 16     | f32    | sampling rate, MHz                      |
//! | 20     | u32    | settings blob length `n`                |
//! | 24     | n B    | UTF-8 TOML: `frame_id` and `[settings]` |
//! | 24+n   | i32    | phantom label, -1 if absent             |
//! | 28+n   | f32 [] | samples, channel-major                  |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stfcal_core::{RfFrame, ScanSettings};

pub const MAGIC: [u8; 4] = *b"URF1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, thiserror::Error)]
pub enum UrfError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?} at offset 0")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {version} at offset 4")]
    Version { version: u32 },
    #[error("file truncated at offset {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("settings blob at offset {offset}: {message}")]
    Blob { offset: usize, message: String },
    #[error("header sampling rate {header} MHz disagrees with settings {settings} MHz")]
    SamplingRate { header: f32, settings: f64 },
    #[error("{extra} trailing bytes after offset {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("invalid phantom label {label} at offset {offset}")]
    Label { offset: usize, label: i32 },
    #[error("frame at offset {offset}: {source}")]
    Frame { offset: usize, source: stfcal_core::Error },
}

#[derive(Serialize, Deserialize)]
struct Blob {
    frame_id: u32,
    settings: ScanSettings,
}

/// Encodes a frame into its `URF1` bytes.
pub fn encode(frame: &RfFrame) -> Result<Vec<u8>, UrfError> {
    let blob = toml::to_string(&Blob { frame_id: frame.frame_id, settings: frame.settings.clone() })
        .map_err(|e| UrfError::Blob { offset: HEADER_LEN, message: e.to_string() })?;
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| UrfError::Blob { offset: 8, message: format!("dimension {v} overflows u32") })
    };
    let mut out = Vec::with_capacity(HEADER_LEN + blob.len() + 4 + 4 * frame.samples().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim(frame.axial_len())?.to_le_bytes());
    out.extend_from_slice(&dim(frame.lateral_len())?.to_le_bytes());
    out.extend_from_slice(&(frame.settings.sampling_rate_mhz as f32).to_le_bytes());
    out.extend_from_slice(&dim(blob.len())?.to_le_bytes());
    out.extend_from_slice(blob.as_bytes());
    let label = match frame.phantom_label {
        Some(l) => i32::try_from(l).map_err(|_| UrfError::Label { offset: out.len(), label: -1 })?,
        None => -1,
    };
    out.extend_from_slice(&label.to_le_bytes());
    for v in frame.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], UrfError> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(UrfError::Truncated { offset: self.pos, needed: n - rest });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, UrfError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes `URF1` bytes. Every failure names the byte offset where it was
/// detected.
pub fn decode(bytes: &[u8]) -> Result<RfFrame, UrfError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(UrfError::BadMagic { found: magic });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(UrfError::Version { version });
    }
    let axial = c.u32()? as usize;
    let lateral = c.u32()? as usize;
    let fs = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
    let blob_len = c.u32()? as usize;
    let blob_at = c.pos;
    let text = std::str::from_utf8(c.take(blob_len)?)
        .map_err(|e| UrfError::Blob { offset: blob_at + e.valid_up_to(), message: "invalid UTF-8".into() })?;
    let blob: Blob =
        toml::from_str(text).map_err(|e| UrfError::Blob { offset: blob_at, message: e.message().to_string() })?;
    if blob.settings.sampling_rate_mhz as f32 != fs {
        return Err(UrfError::SamplingRate { header: fs, settings: blob.settings.sampling_rate_mhz });
    }
    let label_at = c.pos;
    let label = i32::from_le_bytes(c.take(4)?.try_into().unwrap());
    let phantom_label = match label {
        -1 => None,
        l if l >= 0 => Some(l as u32),
        l => return Err(UrfError::Label { offset: label_at, label: l }),
    };
    let n = axial
        .checked_mul(lateral)
        .and_then(|n| n.checked_mul(4))
        .ok_or(UrfError::Truncated { offset: c.pos, needed: usize::MAX })?;
    let data_at = c.pos;
    let raw = c.take(n)?;
    if c.pos != bytes.len() {
        return Err(UrfError::Trailing { offset: c.pos, extra: bytes.len() - c.pos });
    }
    let samples = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    RfFrame::new(samples, axial, lateral, blob.settings, blob.frame_id, phantom_label).map_err(|source| {
        let offset = match source {
            stfcal_core::Error::NonFinite(i) => data_at + 4 * i,
            _ => 8,
        };
        UrfError::Frame { offset, source }
    })
}

pub fn save_frame(path: &Path, frame: &RfFrame) -> Result<(), UrfError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(frame)?)?;
    w.flush()?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<RfFrame, UrfError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// `<setting_label>_<frame_id>.urf`
pub fn frame_file_name(frame: &RfFrame) -> String {
    format!("{}_{}.urf", frame.settings.label, frame.frame_id)
}

/// Writes each frame into `dir` under its conventional name.
pub fn save_frames(dir: &Path, frames: &[RfFrame]) -> Result<Vec<PathBuf>, UrfError> {
    std::fs::create_dir_all(dir)?;
    frames
        .iter()
        .map(|f| {
            let p = dir.join(frame_file_name(f));
            save_frame(&p, f)?;
            Ok(p)
        })
        .collect()
}

/// Loads every `.urf` file in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<RfFrame>, UrfError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "urf"));
    paths.sort();
    paths.iter().map(|p| load_frame(p)).collect()
}
