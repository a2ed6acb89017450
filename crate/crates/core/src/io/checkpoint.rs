//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic "DEVCKPT\0" | u32 version | u32 header_len | header JSON
//! per layer: u64 rows | u64 cols | rows*cols f64 weights (row-major) | cols f64 bias
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, DenseLayer, Tensor};
use crate::error::{Error, Result};
use crate::mil::{LossKind, MilConfig};
use crate::network::NetworkParams;
use crate::prior::{PriorConfig, ReferenceStats};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DEVCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything besides the weights needed to score with a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub mil: MilConfig,
    pub prior: PriorConfig,
    pub loss: LossKind,
    /// Reference statistics used to turn scores into deviations at
    /// inference time.
    pub reference: ReferenceStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Vec<usize>,
    activations: Vec<Activation>,
    meta: CheckpointMeta,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        arch: ckpt.params.arch().to_vec(),
        activations: ckpt.params.layers().iter().map(|l| l.activation).collect(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Contract(format!("checkpoint header is not serializable: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for layer in ckpt.params.layers() {
        out.extend_from_slice(&(layer.fan_in() as u64).to_le_bytes());
        out.extend_from_slice(&(layer.fan_out() as u64).to_le_bytes());
        for v in layer.weight.data().iter().chain(layer.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {remaining} remain"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: u64, what: &str) -> Result<Vec<f64>> {
        let at = self.pos as u64;
        let bytes = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::parse(at, format!("{what} length {n} is implausible")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::parse(0, "not a checkpoint file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            8,
            format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let header_len = r.u32("header length")? as usize;
    let header_at = r.pos as u64;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::parse(header_at, format!("bad checkpoint header: {e}")))?;
    let n_layers = header.activations.len();
    if header.arch.len() != n_layers {
        return Err(Error::parse(
            header_at,
            format!("header lists {} widths but {n_layers} layers", header.arch.len()),
        ));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (i, act) in header.activations.iter().enumerate() {
        let at = r.pos as u64;
        let rows = r.u64("layer rows")?;
        let cols = r.u64("layer cols")?;
        let expect_out = header.arch.get(i + 1).copied().unwrap_or(1) as u64;
        if rows != header.arch[i] as u64 || cols != expect_out {
            return Err(Error::parse(
                at,
                format!(
                    "layer {i} is {rows}x{cols}, header says {}x{expect_out}",
                    header.arch[i]
                ),
            ));
        }
        let w = r.f64s(rows * cols, "layer weights")?;
        let b = r.f64s(cols, "layer bias")?;
        let (rows, cols) = (rows as usize, cols as usize);
        layers.push(DenseLayer::new(Tensor::new(vec![rows, cols], w)?, Tensor::new(vec![cols], b)?, *act)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos as u64, "trailing bytes after last layer"));
    }
    let params = NetworkParams::from_layers(layers).map_err(|e| Error::parse(header_at, e.to_string()))?;
    Ok(Checkpoint { params, meta: header.meta })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    super::write_file(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
