//! EMF1 frame files.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EMF1"
//!      4     2  version = 1
//!      6     2  dtype: 0 = u16 counts, 1 = u8 clicks, 2 = u32 photoelectrons
//!      8     4  width
//!     12     4  height
//!     16     4  n_frames
//!     20     …  payload, frame after frame, rows top to bottom
//! ```
//!
//! All integers are little-endian. A JSON sidecar `<path>.meta.json` records
//! what produced the stack.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::{FrameData, FrameKind, FrameStack};

pub const MAGIC: [u8; 4] = *b"EMF1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameFileHeader {
    pub version: u16,
    pub dtype: u16,
    pub width: u32,
    pub height: u32,
    pub n_frames: u32,
}

impl FrameFileHeader {
    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.dtype.to_le_bytes());
        b[8..12].copy_from_slice(&self.width.to_le_bytes());
        b[12..16].copy_from_slice(&self.height.to_le_bytes());
        b[16..20].copy_from_slice(&self.n_frames.to_le_bytes());
        b
    }
}

fn dtype_of(kind: FrameKind) -> u16 {
    match kind {
        FrameKind::Counts => 0,
        FrameKind::Clicks => 1,
        FrameKind::Photoelectrons => 2,
    }
}

fn bytes_per_pixel(dtype: u16) -> Option<u64> {
    match dtype {
        0 => Some(2),
        1 => Some(1),
        2 => Some(4),
        _ => None,
    }
}

/// Provenance stored in the sidecar next to a frame file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    /// Free-form description of the generating parameters.
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMeta {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
}

/// Path of the sidecar of a frame file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Encodes a stack as EMF1 bytes.
pub fn encode_stack(stack: &FrameStack) -> Result<Vec<u8>> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v)
            .map_err(|_| Error::invalid(format!("{what} = {v} does not fit the EMF1 header")))
    };
    let header = FrameFileHeader {
        version: VERSION,
        dtype: dtype_of(stack.kind()),
        width: dim(stack.width(), "width")?,
        height: dim(stack.height(), "height")?,
        n_frames: dim(stack.n_frames(), "n_frames")?,
    };
    let payload = stack.data().len() * bytes_per_pixel(header.dtype).expect("known dtype") as usize;
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(&header.to_bytes());
    match stack.data() {
        FrameData::Counts(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        FrameData::Clicks(v) => out.extend_from_slice(v),
        FrameData::Photoelectrons(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Decodes EMF1 bytes; `path` is only used in error messages.
pub fn decode_stack(bytes: &[u8], path: &Path) -> Result<FrameStack> {
    let path_buf = || path.to_path_buf();
    if bytes.len() < 4 || bytes[0..4] != MAGIC {
        return Err(Error::BadMagic { path: path_buf() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            path: path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at =
        |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let header = FrameFileHeader {
        version: u16_at(4),
        dtype: u16_at(6),
        width: u32_at(8),
        height: u32_at(12),
        n_frames: u32_at(16),
    };
    if header.version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path_buf(),
            version: header.version,
        });
    }
    let size = bytes_per_pixel(header.dtype).ok_or(Error::UnknownDtype {
        path: path_buf(),
        dtype: header.dtype,
    })?;
    let pixels = header.width as u64 * header.height as u64 * header.n_frames as u64;
    let expected = HEADER_LEN as u64 + pixels * size;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedPayload {
            path: path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingData {
            path: path_buf(),
            extra: found - expected,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let data = match header.dtype {
        0 => FrameData::Counts(
            payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        1 => FrameData::Clicks(payload.to_vec()),
        _ => FrameData::Photoelectrons(
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    FrameStack::new(header.width as usize, header.height as usize, data)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Writes the stack and its sidecar.
pub fn write_stack(stack: &FrameStack, path: &Path, provenance: &Provenance) -> Result<()> {
    let bytes = encode_stack(stack)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let meta = StackMeta {
        kind: stack.kind().name().to_string(),
        width: stack.width(),
        height: stack.height(),
        n_frames: stack.n_frames(),
        seed: provenance.seed,
        params: provenance.params.clone(),
    };
    let mut json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    json.push('\n');
    let mp = meta_path(path);
    fs::write(&mp, json).map_err(|e| Error::io(format!("writing {}", mp.display()), e))
}

pub fn read_stack(path: &Path) -> Result<FrameStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_stack(&bytes, path)
}

pub fn read_meta(path: &Path) -> Result<StackMeta> {
    let mp = meta_path(path);
    let text =
        fs::read_to_string(&mp).map_err(|e| Error::io(format!("reading {}", mp.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", mp.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.emf")
    }

    #[test]
    fn layout_of_small_counts_stack() {
        let s = FrameStack::new(2, 2, FrameData::Counts(vec![1, 2, 3, 4])).unwrap();
        let b = encode_stack(&s).unwrap();
        assert_eq!(&b[..4], b"EMF1");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..20], &[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[HEADER_LEN..], &[1, 0, 2, 0, 3, 0, 4, 0]);
        assert_eq!(decode_stack(&b, p()).unwrap(), s);
    }

    #[test]
    fn zero_frames_is_valid() {
        let s = FrameStack::new(3, 2, FrameData::Clicks(vec![])).unwrap();
        let b = encode_stack(&s).unwrap();
        assert_eq!(b.len(), HEADER_LEN);
        let back = decode_stack(&b, p()).unwrap();
        assert_eq!(back.n_frames(), 0);
        assert_eq!((back.width(), back.height()), (3, 2));
    }

    #[test]
    fn distinct_errors() {
        let s = FrameStack::new(2, 1, FrameData::Photoelectrons(vec![7, 70000])).unwrap();
        let good = encode_stack(&s).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_stack(&bad, p()),
            Err(Error::BadMagic { .. })
        ));

        assert!(matches!(
            decode_stack(&good[..good.len() - 1], p()),
            Err(Error::TruncatedPayload {
                expected: 28,
                found: 27,
                ..
            })
        ));
        assert!(matches!(
            decode_stack(&good[..10], p()),
            Err(Error::TruncatedPayload { .. })
        ));

        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_stack(&v2, p()),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));

        let mut dt = good.clone();
        dt[6] = 9;
        assert!(matches!(
            decode_stack(&dt, p()),
            Err(Error::UnknownDtype { dtype: 9, .. })
        ));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            decode_stack(&long, p()),
            Err(Error::TrailingData { extra: 1, .. })
        ));

        let clicks = FrameStack::new(1, 1, FrameData::Clicks(vec![1])).unwrap();
        let mut c = encode_stack(&clicks).unwrap();
        *c.last_mut().unwrap() = 2;
        assert!(matches!(decode_stack(&c, p()), Err(Error::Parse(_))));
    }

    #[test]
    fn sidecar_next_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dark.emf");
        let s = FrameStack::new(1, 2, FrameData::Counts(vec![500, 501])).unwrap();
        let prov = Provenance {
            seed: Some(42),
            params: serde_json::json!({"mode": "dark"}),
        };
        write_stack(&s, &path, &prov).unwrap();
        assert_eq!(read_stack(&path).unwrap(), s);
        let meta = read_meta(&path).unwrap();
        assert_eq!(meta.kind, "counts");
        assert_eq!(meta.seed, Some(42));
        assert_eq!(meta_path(&path), dir.path().join("dark.emf.meta.json"));
    }
}
