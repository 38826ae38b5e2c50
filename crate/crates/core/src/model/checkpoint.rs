//! Checkpoints, top-k averaging and the `CBAC1` file format.
//!
//! ```text
//! "CBAC1"
//! u32 input_dim, u32 hidden_dim, u32 num_layers, u32 vocab_size
//! u32 tap count, u32 × tap count
//! u64 epoch, f64 cv_loss
//! u64 parameter count, f64 × parameter count
//! ```
//!
//! All integers and floats little-endian.

use std::path::Path;

use super::{EncoderConfig, ModelError, Parameters};
use crate::binio::{Reader, Truncated, Writer};

const MAGIC: &[u8; 5] = b"CBAC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<f64>,
    pub epoch: usize,
    pub cv_loss: f64,
}

/// Encoder shape echoed in a checkpoint file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub vocab_size: usize,
    pub tap_layers: Vec<usize>,
}

impl CheckpointHeader {
    pub fn from_config(cfg: &EncoderConfig) -> Self {
        Self {
            input_dim: cfg.input_dim,
            hidden_dim: cfg.hidden_dim,
            num_layers: cfg.num_layers,
            vocab_size: cfg.vocab_size,
            tap_layers: cfg.tap_layers.clone(),
        }
    }

    /// Encoder config with this shape; `init_seed` is not stored and is 0.
    pub fn to_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            tap_layers: self.tap_layers.clone(),
            vocab_size: self.vocab_size,
            init_seed: 0,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "F={} H={} L={} V={} taps={:?}",
            self.input_dim, self.hidden_dim, self.num_layers, self.vocab_size, self.tap_layers
        )
    }
}

/// Element-wise mean of the `k` checkpoints with the lowest `cv_loss`
/// (ties to the earlier epoch). `k` is clamped to the number available.
pub fn average_checkpoints(
    checkpoints: &[Checkpoint],
    k: usize,
) -> Result<Vec<f64>, ModelError> {
    if checkpoints.is_empty() {
        return Err(ModelError::NoCheckpoints);
    }
    let len = checkpoints[0].params.len();
    if let Some(bad) = checkpoints.iter().find(|c| c.params.len() != len) {
        return Err(ModelError::ParamCount {
            expected: len,
            got: bad.params.len(),
        });
    }
    if let Some(bad) = checkpoints.iter().find(|c| !c.cv_loss.is_finite()) {
        return Err(ModelError::Malformed(format!(
            "checkpoint at epoch {} has non-finite cv_loss",
            bad.epoch
        )));
    }
    let mut order: Vec<&Checkpoint> = checkpoints.iter().collect();
    order.sort_by(|a, b| a.cv_loss.total_cmp(&b.cv_loss).then(a.epoch.cmp(&b.epoch)));
    let k = k.clamp(1, order.len());

    // running mean keeps the mean of identical vectors exact
    let mut mean = order[0].params.clone();
    for (n, ckpt) in order.iter().enumerate().take(k).skip(1) {
        let n = (n + 1) as f64;
        for (m, &v) in mean.iter_mut().zip(&ckpt.params) {
            *m += (v - *m) / n;
        }
    }
    Ok(mean)
}

pub fn encode_checkpoint(cfg: &EncoderConfig, ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    for v in [cfg.input_dim, cfg.hidden_dim, cfg.num_layers, cfg.vocab_size] {
        w.u32(v as u32);
    }
    w.u32(cfg.tap_layers.len() as u32);
    for &t in &cfg.tap_layers {
        w.u32(t as u32);
    }
    w.u64(ckpt.epoch as u64);
    w.f64(ckpt.cv_loss);
    w.u64(ckpt.params.len() as u64);
    for &p in &ckpt.params {
        w.f64(p);
    }
    w.into_inner()
}

fn truncated(t: Truncated) -> ModelError {
    ModelError::Truncated { offset: t.offset }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Checkpoint), ModelError> {
    let mut r = Reader::new(bytes);
    if r.take(MAGIC.len()).map_err(truncated)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.u32().map_err(truncated)? as usize;
    }
    let n_taps = r.u32().map_err(truncated)? as usize;
    if n_taps > r.remaining() / 4 {
        return Err(ModelError::Truncated { offset: bytes.len() });
    }
    let tap_layers = (0..n_taps)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()
        .map_err(truncated)?;
    let header = CheckpointHeader {
        input_dim: dims[0],
        hidden_dim: dims[1],
        num_layers: dims[2],
        vocab_size: dims[3],
        tap_layers,
    };
    let epoch = r.u64().map_err(truncated)? as usize;
    let cv_loss = r.f64().map_err(truncated)?;
    let count = r.u64().map_err(truncated)? as usize;
    let cfg = header.to_config();
    cfg.validate()
        .map_err(|e| ModelError::Malformed(format!("encoder echo invalid: {e}")))?;
    if count != cfg.param_count() {
        return Err(ModelError::Malformed(format!(
            "parameter count {count} does not match encoder shape ({})",
            cfg.param_count()
        )));
    }
    if count > r.remaining() / 8 {
        return Err(ModelError::Truncated { offset: bytes.len() });
    }
    let params = (0..count)
        .map(|_| r.f64())
        .collect::<Result<Vec<_>, _>>()
        .map_err(truncated)?;
    if r.remaining() != 0 {
        return Err(ModelError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    if !cv_loss.is_finite() {
        return Err(ModelError::Malformed("non-finite cv_loss".into()));
    }
    Ok((
        header,
        Checkpoint {
            params,
            epoch,
            cv_loss,
        },
    ))
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    cfg: &EncoderConfig,
    ckpt: &Checkpoint,
) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(cfg, ckpt))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Checkpoint), ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}

impl Checkpoint {
    pub fn params_for(&self, cfg: &EncoderConfig) -> Result<Parameters, ModelError> {
        Parameters::from_flat(cfg, self.params.clone())
    }
}
