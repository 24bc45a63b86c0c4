//! Checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! [0..8)    magic "CLAWCKPT"
//! [8..12)   u32 header length N
//! [12..12+N) JSON header (see [`CheckpointHeader`])
//! [12+N..)  raw tensor data, little-endian scalars:
//!             every parameter's values in header order,
//!             then, if optimizer state is present, every first-moment
//!             tensor, then every second-moment tensor, same order/shapes.
//! ```
//!
//! Round-trips are bit-exact: scalars are copied byte-for-byte.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ClawError, Result};
use crate::numerics::adam::Adam;
use crate::numerics::param::{ParamStore, Parameter};
use crate::numerics::scalar::{Dtype, Scalar};

const MAGIC: &[u8; 8] = b"CLAWCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER_BYTES: u32 = 16 * 1024 * 1024;

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamMeta {
    pub path: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: Dtype,
    pub params: Vec<ParamMeta>,
    pub optimizer: Option<OptimizerMeta>,
    /// Free-form metadata: config snapshot, normalization stats, flags.
    pub metadata: serde_json::Value,
}

#[derive(Debug)]
pub struct Checkpoint<R: Scalar> {
    pub store: ParamStore<R>,
    pub optimizer: Option<Adam<R>>,
    pub metadata: serde_json::Value,
}

pub fn save<R: Scalar>(
    path: &Path,
    store: &ParamStore<R>,
    optimizer: Option<&Adam<R>>,
    metadata: serde_json::Value,
) -> Result<()> {
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        dtype: R::DTYPE,
        params: store
            .ids()
            .map(|id| {
                let p = store.get(id);
                ParamMeta {
                    path: p.path.clone(),
                    rows: p.values.nrows(),
                    cols: p.values.ncols(),
                }
            })
            .collect(),
        optimizer: optimizer.map(|o| OptimizerMeta {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            clip_norm: o.clip_norm,
            step: o.step,
        }),
        metadata,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| ClawError::Data(format!("checkpoint header encode: {e}")))?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for id in store.ids() {
        write_tensor(&mut out, store.values(id))?;
    }
    if let Some(opt) = optimizer {
        for m in opt.moments_first() {
            write_tensor(&mut out, m)?;
        }
        for v in opt.moments_second() {
            write_tensor(&mut out, v)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load<R: Scalar>(path: &Path) -> Result<Checkpoint<R>> {
    let bytes = std::fs::read(path)?;
    load_bytes(&bytes)
}

/// Decode a checkpoint from raw bytes. Never panics on malformed input.
pub fn load_bytes<R: Scalar>(bytes: &[u8]) -> Result<Checkpoint<R>> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(ClawError::Data("not a checkpoint file (bad magic)".into()));
    }
    let mut len4 = [0u8; 4];
    read_exact(&mut r, &mut len4, "header length")?;
    let hlen = u32::from_le_bytes(len4);
    if hlen > MAX_HEADER_BYTES {
        return Err(ClawError::Data(format!("header length {hlen} exceeds limit")));
    }
    let mut hbytes = vec![0u8; hlen as usize];
    read_exact(&mut r, &mut hbytes, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&hbytes)
        .map_err(|e| ClawError::Data(format!("checkpoint header decode: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(ClawError::Data(format!(
            "checkpoint format version {} (this build reads {})",
            header.version, FORMAT_VERSION
        )));
    }
    if header.dtype != R::DTYPE {
        return Err(ClawError::Data(format!(
            "checkpoint dtype {} but {} requested",
            header.dtype.as_str(),
            R::DTYPE.as_str()
        )));
    }

    // Validate total size before allocating tensors.
    let mut scalars: u64 = 0;
    for p in &header.params {
        let n = (p.rows as u64)
            .checked_mul(p.cols as u64)
            .ok_or_else(|| ClawError::Data(format!("tensor `{}` shape overflow", p.path)))?;
        if n == 0 || p.rows > u32::MAX as usize || p.cols > u32::MAX as usize {
            return Err(ClawError::Data(format!("tensor `{}` has invalid shape", p.path)));
        }
        scalars = scalars
            .checked_add(n)
            .ok_or_else(|| ClawError::Data("total size overflow".into()))?;
    }
    let copies = if header.optimizer.is_some() { 3 } else { 1 };
    let need = scalars
        .checked_mul(copies * R::DTYPE.byte_width() as u64)
        .ok_or_else(|| ClawError::Data("total size overflow".into()))?;
    if r.len() as u64 != need {
        return Err(ClawError::Data(format!(
            "truncated or oversized checkpoint: {} data bytes, expected {need}",
            r.len()
        )));
    }

    let mut store = ParamStore::new();
    for p in &header.params {
        let values = read_tensor::<R>(&mut r, p.rows, p.cols)?;
        store.add(&p.path, values);
    }
    let optimizer = match &header.optimizer {
        Some(om) => {
            let mut opt = Adam::new(&store, om.lr, om.clip_norm);
            opt.beta1 = om.beta1;
            opt.beta2 = om.beta2;
            opt.eps = om.eps;
            opt.step = om.step;
            let mut first = Vec::new();
            let mut second = Vec::new();
            for p in &header.params {
                first.push(read_tensor::<R>(&mut r, p.rows, p.cols)?);
            }
            for p in &header.params {
                second.push(read_tensor::<R>(&mut r, p.rows, p.cols)?);
            }
            opt.set_moments(first, second);
            Some(opt)
        }
        None => None,
    };
    Ok(Checkpoint { store, optimizer, metadata: header.metadata })
}

/// Read only the metadata header of a checkpoint file.
pub fn load_metadata(path: &Path) -> Result<CheckpointHeader> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ClawError::Data("not a checkpoint file (bad magic)".into()));
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4)?;
    let hlen = u32::from_le_bytes(len4);
    if hlen > MAX_HEADER_BYTES {
        return Err(ClawError::Data(format!("header length {hlen} exceeds limit")));
    }
    let mut hbytes = vec![0u8; hlen as usize];
    f.read_exact(&mut hbytes)?;
    serde_json::from_slice(&hbytes)
        .map_err(|e| ClawError::Data(format!("checkpoint header decode: {e}")))
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    if r.len() < buf.len() {
        return Err(ClawError::Data(format!("truncated checkpoint while reading {what}")));
    }
    buf.copy_from_slice(&r[..buf.len()]);
    *r = &r[buf.len()..];
    Ok(())
}

fn write_tensor<R: Scalar>(out: &mut impl Write, t: &Array2<R>) -> Result<()> {
    for v in t.iter() {
        out.write_all(&v.to_le_bytes_vec())?;
    }
    Ok(())
}

fn read_tensor<R: Scalar>(r: &mut &[u8], rows: usize, cols: usize) -> Result<Array2<R>> {
    let w = R::DTYPE.byte_width();
    let n = rows * cols;
    let need = n * w;
    if r.len() < need {
        return Err(ClawError::Data("truncated checkpoint tensor".into()));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(R::from_le_bytes_slice(&r[i * w..(i + 1) * w]));
    }
    *r = &r[need..];
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| ClawError::Data(format!("tensor shape: {e}")))
}

impl<R: Scalar> Parameter<R> {
    pub fn bitwise_eq(&self, other: &Parameter<R>) -> bool {
        self.path == other.path
            && self.values.shape() == other.values.shape()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_le_bytes_vec() == b.to_le_bytes_vec())
    }
}
