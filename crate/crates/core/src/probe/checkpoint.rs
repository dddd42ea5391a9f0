//! Binary checkpoint container.
//!
//! ```text
//! magic        8 bytes  "AERPROBE"
//! version      u32 LE   (1)
//! n_dims       u32 LE
//! layer_dims   n_dims x u64 LE
//! flags        u8       bit 0: batch norm present
//! dropout      f64 LE
//! per layer    weights (row-major, out x in) then bias, f64 LE
//! per hidden   gamma, beta, running_mean, running_var, momentum, epsilon (if batch norm)
//! adam         t (u64 LE), lr, beta1, beta2, epsilon (f64 LE),
//!              then every m tensor, then every v tensor, in parameter order
//! ```
//!
//! No trailing bytes are allowed.

use super::adam::{AdamConfig, AdamState};
use super::matrix::Matrix;
use super::model::{BatchNorm, Dense, MlpModel};
use super::ProbeError;

pub const MAGIC: &[u8; 8] = b"AERPROBE";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &MlpModel, optimizer: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layer_dims.len() as u32).to_le_bytes());
    for &d in &model.layer_dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(u8::from(model.has_batchnorm()));
    put_f64s(&mut out, &[model.dropout_rate]);
    for l in &model.layers {
        put_f64s(&mut out, l.weights.as_slice());
        put_f64s(&mut out, &l.bias);
    }
    for bn in model.batchnorm.iter().flatten() {
        put_f64s(&mut out, &bn.gamma);
        put_f64s(&mut out, &bn.beta);
        put_f64s(&mut out, &bn.running_mean);
        put_f64s(&mut out, &bn.running_var);
        put_f64s(&mut out, &[bn.momentum, bn.epsilon]);
    }
    out.extend_from_slice(&optimizer.t.to_le_bytes());
    let c = optimizer.config;
    put_f64s(&mut out, &[c.lr, c.beta1, c.beta2, c.epsilon]);
    for m in &optimizer.m {
        put_f64s(&mut out, m);
    }
    for v in &optimizer.v {
        put_f64s(&mut out, v);
    }
    out
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProbeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ProbeError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ProbeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ProbeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ProbeError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ProbeError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            ProbeError::Checkpoint("tensor size overflows".into())
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MlpModel, AdamState), ProbeError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(ProbeError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ProbeError::Checkpoint(format!("unsupported version {version}")));
    }
    let n_dims = r.u32()? as usize;
    if n_dims < 2 {
        return Err(ProbeError::Checkpoint(format!("{n_dims} layer dims")));
    }
    // Every dim needs 8 bytes; reject absurd counts before allocating.
    if n_dims > bytes.len() / 8 {
        return Err(ProbeError::Checkpoint("layer dim count exceeds file size".into()));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        let d = usize::try_from(r.u64()?)
            .ok()
            .filter(|&d| d > 0 && d <= bytes.len())
            .ok_or_else(|| ProbeError::Checkpoint("invalid layer dim".into()))?;
        dims.push(d);
    }
    let flags = r.take(1)?[0];
    if flags > 1 {
        return Err(ProbeError::Checkpoint(format!("unknown flags {flags:#x}")));
    }
    let dropout_rate = r.f64()?;
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(ProbeError::Checkpoint(format!("dropout rate {dropout_rate}")));
    }
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let weights = r.f64s(w[0] * w[1])?;
        layers.push(Dense {
            weights: Matrix::from_vec(w[1], w[0], weights),
            bias: r.f64s(w[1])?,
        });
    }
    let batchnorm = if flags & 1 == 1 {
        let mut bns = Vec::new();
        for &n in &dims[1..n_dims - 1] {
            let gamma = r.f64s(n)?;
            let beta = r.f64s(n)?;
            let running_mean = r.f64s(n)?;
            let running_var = r.f64s(n)?;
            if running_var.iter().any(|&v| v < 0.0) {
                return Err(ProbeError::Checkpoint("negative running variance".into()));
            }
            bns.push(BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                momentum: r.f64()?,
                epsilon: r.f64()?,
            });
        }
        Some(bns)
    } else {
        None
    };
    let model = MlpModel {
        layer_dims: dims,
        layers,
        batchnorm,
        dropout_rate,
    };
    let t = r.u64()?;
    let config = AdamConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
    };
    let sizes = model.parameter_sizes();
    let m = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>, _>>()?;
    let v = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>, _>>()?;
    if r.pos != bytes.len() {
        return Err(ProbeError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((model, AdamState { m, v, t, config }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::model::{he_init, ModelOptions};

    fn sample() -> (MlpModel, AdamState) {
        let mut m = he_init(&[5, 4, 3, 2], 1, ModelOptions::default()).unwrap();
        m.batchnorm.as_mut().unwrap()[0].running_mean[2] = 0.25;
        let mut s = AdamState::new(&m.parameter_sizes(), AdamConfig::default());
        s.t = 17;
        s.m[3][1] = -0.5;
        s.v[0][0] = 2.0;
        (m, s)
    }

    #[test]
    fn round_trip_is_exact() {
        let (m, s) = sample();
        let bytes = encode_checkpoint(&m, &s);
        assert_eq!(&bytes[..8], MAGIC);
        let (m2, s2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(m2, m);
        assert_eq!(s2, s);
        assert_eq!(encode_checkpoint(&m2, &s2), bytes);

        let plain = he_init(&[3, 2], 0, ModelOptions { batchnorm: false, dropout_rate: 0.0 }).unwrap();
        let st = AdamState::new(&plain.parameter_sizes(), AdamConfig::default());
        let (p2, _) = decode_checkpoint(&encode_checkpoint(&plain, &st)).unwrap();
        assert_eq!(p2, plain);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (m, s) = sample();
        let good = encode_checkpoint(&m, &s);
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_checkpoint(&bad_magic).is_err());
        assert!(decode_checkpoint(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut bad_version = good;
        bad_version[8] = 9;
        assert!(decode_checkpoint(&bad_version).is_err());
        assert!(decode_checkpoint(b"").is_err());
    }
}
