//! `.chsk` dataset files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 0   magic "CHSK"
//! 4   u16 format version
//! 6   u16 reserved (0)
//! 8   u32 C, T, J, E, N
//! 28  u32 reserved (0)
//! 32  N*C*T*J*E f32 coordinates, sample-major then (C, T, J, E) row-major
//! ..  N u32 labels
//! ```
//!
//! A sidecar `<file>.json` manifest carries class names, the generator
//! configuration and the seed. Coordinates are stored at 32-bit precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeldata::{Dataset, Dims, SkeletonSequence};

pub const CHSK_MAGIC: &[u8; 4] = b"CHSK";
pub const CHSK_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub generator: Option<serde_json::Value>,
    pub seed: Option<u64>,
    /// only present when some sample is shorter than T
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_frames: Option<Vec<usize>>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let d = ds.dims;
    let mut buf = Vec::with_capacity(HEADER_LEN + ds.len() * (d.len() * 4 + 4));
    buf.extend_from_slice(CHSK_MAGIC);
    buf.extend_from_slice(&CHSK_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    for v in [d.c, d.t, d.j, d.e, ds.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&0u32.to_le_bytes());
    for s in &ds.samples {
        for &v in s.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for s in &ds.samples {
        buf.extend_from_slice(&(s.label as u32).to_le_bytes());
    }
    buf
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))?;
    let valid: Vec<usize> = ds.samples.iter().map(|s| s.valid_frames).collect();
    let manifest = DatasetManifest {
        version: CHSK_VERSION as u32,
        classes: ds.classes.clone(),
        generator: ds.generator.clone(),
        seed: ds.seed,
        valid_frames: valid.iter().any(|&v| v != ds.dims.t).then_some(valid),
    };
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(mpath, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<(Dims, Vec<SkeletonSequence>)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHSK_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad magic {magic:?}, expected \"CHSK\"") });
    }
    let version = r.u16("version")?;
    if version != CHSK_VERSION {
        return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    r.u16("reserved")?;
    let mut dims = [0usize; 5];
    for (i, name) in ["C", "T", "J", "E", "N"].iter().enumerate() {
        dims[i] = r.u32(name)? as usize;
    }
    r.u32("reserved")?;
    let d = Dims::new(dims[0], dims[1], dims[2], dims[3]);
    d.validate().map_err(|e| Error::Format { offset: 8, message: e.to_string() })?;
    let n = dims[4];
    let coords_at = r.pos;
    let raw = r.take(n * d.len() * 4, "coordinates")?;
    let values: Vec<f64> =
        raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
    let labels = r.take(n * 4, "labels")?;
    if r.pos != buf.len() {
        return Err(Error::Format { offset: r.pos as u64, message: format!("{} trailing bytes", buf.len() - r.pos) });
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = u32::from_le_bytes(labels[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as usize;
        let data = values[i * d.len()..(i + 1) * d.len()].to_vec();
        let seq = SkeletonSequence::from_raw(d, data, label).map_err(|e| Error::Format {
            offset: (coords_at + i * d.len() * 4) as u64,
            message: format!("sample {i}: {e}"),
        })?;
        samples.push(seq);
    }
    Ok((d, samples))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, mut samples) = decode_dataset(&buf)?;
    let mpath = manifest_path(path);
    let manifest: Option<DatasetManifest> = match fs::read_to_string(&mpath) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(mpath, e)),
    };
    let Some(m) = manifest else {
        return Dataset::new(dims, samples, Vec::new());
    };
    if let Some(valid) = &m.valid_frames {
        if valid.len() != samples.len() {
            return Err(Error::invalid("manifest.valid_frames", "length differs from sample count"));
        }
        for (s, &v) in samples.iter_mut().zip(valid) {
            *s = s.clone().with_valid_frames(v)?;
        }
    }
    let mut ds = Dataset::new(dims, samples, m.classes)?;
    ds.generator = m.generator;
    ds.seed = m.seed;
    Ok(ds)
}
