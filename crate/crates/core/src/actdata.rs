//! ACTB activation dumps and their JSON sidecars.
//!
//! An ACTB file is a fixed 28-byte little-endian header followed by the
//! row-major payload:
//!
//! ```text
//! offset  size  field
//!      0     4  magic   b"ACTB"
//!      4     4  version u32 = 1
//!      8     4  dtype   u32, 1 = f32, 2 = f64
//!     12     8  rows    u64
//!     20     8  cols    u64
//!     28     …  rows*cols values of the declared dtype
//! ```
//!
//! A calibration dump directory holds `pre.actb`, `post.actb` and
//! `meta.json`. Everything is promoted to `f64` on read.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ActivationMatrix, Matrix};

pub const MAGIC: [u8; 4] = *b"ACTB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

pub const PRE_FILE: &str = "pre.actb";
pub const POST_FILE: &str = "post.actb";
pub const META_FILE: &str = "meta.json";

/// On-disk element type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActbHeader {
    pub version: u32,
    pub dtype: Dtype,
    pub rows: u64,
    pub cols: u64,
}

impl ActbHeader {
    pub fn payload_len(&self) -> Option<u64> {
        self.rows
            .checked_mul(self.cols)?
            .checked_mul(self.dtype.width() as u64)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.dtype.code().to_le_bytes());
        out[12..20].copy_from_slice(&self.rows.to_le_bytes());
        out[20..28].copy_from_slice(&self.cols.to_le_bytes());
        out
    }

    /// Parses and validates a header. `path` is only used in errors.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt_err = |field, detail: String| Error::Format {
            path: path.to_path_buf(),
            field,
            detail,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fmt_err(
                "header",
                format!("{} bytes, need {HEADER_LEN}", bytes.len()),
            ));
        }
        if bytes[0..4] != MAGIC {
            return Err(fmt_err(
                "magic",
                format!("{:?}", String::from_utf8_lossy(&bytes[0..4])),
            ));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(fmt_err("version", format!("{version}, expected {VERSION}")));
        }
        let code = u32_at(8);
        let dtype = Dtype::from_code(code)
            .ok_or_else(|| fmt_err("dtype", format!("unknown code {code}")))?;
        Ok(ActbHeader {
            version,
            dtype,
            rows: u64_at(12),
            cols: u64_at(20),
        })
    }
}

/// Serializes a matrix to ACTB bytes.
pub fn encode_actb(m: &Matrix, dtype: Dtype) -> Vec<u8> {
    let header = ActbHeader {
        version: VERSION,
        dtype,
        rows: m.rows() as u64,
        cols: m.cols() as u64,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * dtype.width());
    out.extend_from_slice(&header.to_bytes());
    match dtype {
        Dtype::F32 => m
            .as_slice()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => m
            .as_slice()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Parses ACTB bytes. `path` is only used in errors.
pub fn decode_actb(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let header = ActbHeader::parse(bytes, path)?;
    let payload = &bytes[HEADER_LEN..];
    let expected = header.payload_len().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        field: "shape",
        detail: format!("{}x{} overflows", header.rows, header.cols),
    })?;
    if payload.len() as u64 != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            actual: payload.len() as u64,
        });
    }
    let values: Vec<f64> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Matrix::new(header.rows as usize, header.cols as usize, values)
}

pub fn write_actb(path: impl AsRef<Path>, m: &Matrix, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    if !m.is_finite() {
        return Err(Error::Domain(format!(
            "refusing to write non-finite matrix to {}",
            path.display()
        )));
    }
    fs::write(path, encode_actb(m, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_actb(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_actb(&bytes, path)
}

/// Which component produced a dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpSource {
    Simulator,
    Exporter,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpMetadata {
    pub model_id: String,
    pub pre_layer: i64,
    pub post_layer: i64,
    pub seq_len: u64,
    pub num_sequences: u64,
    pub token_count: u64,
    pub seed: u64,
    pub source: DumpSource,
}

impl DumpMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.token_count != self.seq_len * self.num_sequences {
            return Err(Error::Consistency(format!(
                "token_count {} != seq_len {} x num_sequences {}",
                self.token_count, self.seq_len, self.num_sequences
            )));
        }
        if self.post_layer <= self.pre_layer {
            return Err(Error::Consistency(format!(
                "post_layer {} must exceed pre_layer {}",
                self.post_layer, self.pre_layer
            )));
        }
        Ok(())
    }
}

/// Writes `pre.actb`, `post.actb` and `meta.json` into `dir`, creating it.
pub fn write_calibration_pair(
    dir: impl AsRef<Path>,
    pre: &Matrix,
    post: &Matrix,
    meta: &DumpMetadata,
    dtype: Dtype,
) -> Result<()> {
    let dir = dir.as_ref();
    meta.validate()?;
    if pre.shape() != post.shape() || pre.rows() as u64 != meta.token_count {
        return Err(Error::Consistency(format!(
            "pre {:?}, post {:?}, token_count {}",
            pre.shape(),
            post.shape(),
            meta.token_count
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_actb(dir.join(PRE_FILE), pre, dtype)?;
    write_actb(dir.join(POST_FILE), post, dtype)?;
    write_json(dir.join(META_FILE), meta)
}

/// Loads a dump directory and checks pre/post/meta agree.
pub fn load_calibration_pair(
    dir: impl AsRef<Path>,
) -> Result<(ActivationMatrix, ActivationMatrix, DumpMetadata)> {
    let dir = dir.as_ref();
    let meta: DumpMetadata = read_json(dir.join(META_FILE))?;
    meta.validate()?;
    let pre = read_actb(dir.join(PRE_FILE))?;
    let post = read_actb(dir.join(POST_FILE))?;
    if pre.shape() != post.shape() {
        return Err(Error::Consistency(format!(
            "pre is {:?} but post is {:?}",
            pre.shape(),
            post.shape()
        )));
    }
    if pre.rows() as u64 != meta.token_count {
        return Err(Error::Consistency(format!(
            "{} rows but meta.json token_count is {}",
            pre.rows(),
            meta.token_count
        )));
    }
    Ok((pre, post, meta))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: PathBuf::from(path),
        source: e,
    })
}
