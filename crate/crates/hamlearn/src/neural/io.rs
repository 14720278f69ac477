//! Network checkpoint serialisation.
//!
//! Layout (little-endian):
//!
//! | bytes | content                                            |
//! |-------|----------------------------------------------------|
//! | 4     | magic `HLCK`                                       |
//! | 4     | version (u32, currently 1)                         |
//! | 16    | architecture: input, hidden, fc_hidden, output u32 |
//! | ...   | weights: w_ih, w_hh, bias, w1, b1, w2, b2 (f64)    |
//! | 1     | Adam-state flag                                    |
//! | ...   | if set: m arrays, v arrays (same order), step u64  |
//! | 4     | CRC-32 of all preceding bytes                      |
//!
//! Arrays are row-major. A checkpoint without Adam state restores
//! with zeroed moments and step 0, which is exactly the state a
//! frozen (inference-only) network needs.

use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

use super::{FcParams, Gradients, LstmParams, NetConfig, NetworkState};

const MAGIC: &[u8; 4] = b"HLCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint continues past its declared end")]
    TrailingData,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("architecture field {0} is zero")]
    BadArchitecture(&'static str),
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises a network to bytes, optionally with optimiser state.
pub fn encode_checkpoint(net: &NetworkState, include_adam: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [
        net.config.input_dim,
        net.config.hidden_dim,
        net.config.fc_hidden,
        net.config.output_dim,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    push_f64s(&mut buf, net.lstm.w_ih.as_slice().unwrap());
    push_f64s(&mut buf, net.lstm.w_hh.as_slice().unwrap());
    push_f64s(&mut buf, net.lstm.bias.as_slice().unwrap());
    push_f64s(&mut buf, net.fc.w1.as_slice().unwrap());
    push_f64s(&mut buf, net.fc.b1.as_slice().unwrap());
    push_f64s(&mut buf, net.fc.w2.as_slice().unwrap());
    push_f64s(&mut buf, net.fc.b2.as_slice().unwrap());
    buf.push(include_adam as u8);
    if include_adam {
        for (_, s) in net.adam_m.slices() {
            push_f64s(&mut buf, s);
        }
        for (_, s) in net.adam_v.slices() {
            push_f64s(&mut buf, s);
        }
        buf.extend_from_slice(&net.step.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn fill_gradients(cur: &mut Cursor, cfg: &NetConfig) -> Result<Gradients, CheckpointError> {
    let h = cfg.hidden_dim;
    Ok(Gradients {
        w_ih: ndarray::Array2::from_shape_vec(
            (cfg.input_dim, 4 * h),
            cur.f64s(cfg.input_dim * 4 * h)?,
        )
        .unwrap(),
        w_hh: ndarray::Array2::from_shape_vec((h, 4 * h), cur.f64s(h * 4 * h)?).unwrap(),
        bias: ndarray::Array1::from_vec(cur.f64s(4 * h)?),
        w1: ndarray::Array2::from_shape_vec((h, cfg.fc_hidden), cur.f64s(h * cfg.fc_hidden)?)
            .unwrap(),
        b1: ndarray::Array1::from_vec(cur.f64s(cfg.fc_hidden)?),
        w2: ndarray::Array2::from_shape_vec(
            (cfg.fc_hidden, cfg.output_dim),
            cur.f64s(cfg.fc_hidden * cfg.output_dim)?,
        )
        .unwrap(),
        b2: ndarray::Array1::from_vec(cur.f64s(cfg.output_dim)?),
    })
}

/// Restores a network from checkpoint bytes. Validates magic,
/// version, and checksum; the stored bytes round-trip bit-exactly.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkState, CheckpointError> {
    if bytes.len() < 4 + 4 + 16 + 1 + 4 {
        return Err(CheckpointError::Truncated);
    }
    let (body, crc_raw) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_raw.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor { data: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let input_dim = cur.u32()? as usize;
    let hidden_dim = cur.u32()? as usize;
    let fc_hidden = cur.u32()? as usize;
    let output_dim = cur.u32()? as usize;
    for (name, d) in [
        ("input_dim", input_dim),
        ("hidden_dim", hidden_dim),
        ("fc_hidden", fc_hidden),
        ("output_dim", output_dim),
    ] {
        if d == 0 {
            return Err(CheckpointError::BadArchitecture(name));
        }
    }
    let cfg = NetConfig {
        input_dim,
        hidden_dim,
        fc_hidden,
        output_dim,
    };

    let weights = fill_gradients(&mut cur, &cfg)?;
    let has_adam = cur.take(1)?[0] != 0;
    let (adam_m, adam_v, step) = if has_adam {
        let m = fill_gradients(&mut cur, &cfg)?;
        let v = fill_gradients(&mut cur, &cfg)?;
        let step = cur.u64()?;
        (m, v, step)
    } else {
        (Gradients::zeros(&cfg), Gradients::zeros(&cfg), 0)
    };
    if cur.pos != body.len() {
        return Err(CheckpointError::TrailingData);
    }

    Ok(NetworkState {
        config: cfg,
        lstm: LstmParams {
            w_ih: weights.w_ih,
            w_hh: weights.w_hh,
            bias: weights.bias,
        },
        fc: FcParams {
            w1: weights.w1,
            b1: weights.b1,
            w2: weights.w2,
            b2: weights.b2,
        },
        adam_m,
        adam_v,
        step,
    })
}

/// Writes a checkpoint file.
pub fn save_checkpoint(
    net: &NetworkState,
    include_adam: bool,
    path: &Path,
) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(net, include_adam))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<NetworkState, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}
