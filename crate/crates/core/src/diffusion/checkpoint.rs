//! Versioned binary checkpoint for a [`DiffusionStack`].
//!
//! All integers are little-endian `u64` unless noted, all reals little-endian
//! IEEE-754 `f64`.
//!
//! ```text
//! magic        8 bytes  "SIHDCKPT"
//! version      u32      = 1
//! config hash  32 bytes
//! schedule     u8 kind (0 linear, 1 cosine), u64 K, K × f64 β
//! omega, eta, r_max      3 × f64
//! guidance     u8 (0 embedding, 1 output)
//! clip         u8
//! state_dim, action_dim  2 × u64
//! layers       u64 count, then per layer:
//!   layer, slots, features, hidden, steps_trained   5 × u64
//!   normalizer   features × f64 lo, features × f64 hi
//!   params       u64 n, n × f64
//!   ema          n × f64
//! ```
//!
//! The null embedding is part of `params` (and its shadow of `ema`).

use std::fs;
use std::path::Path;

use super::network::{Denoiser, GuidanceMode, NetShape};
use super::schedule::{ScheduleKind, VarianceSchedule};
use super::{DiffusionStack, LayerModel, Normalizer};
use crate::error::{Result, SihdError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SIHDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            SihdError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| SihdError::Checkpoint(format!("size {v} does not fit in memory")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(SihdError::Checkpoint(format!("truncated: {n} reals announced")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn write_stack(stack: &DiffusionStack) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.0.extend_from_slice(&stack.config_hash);
    w.u8(match stack.schedule.kind {
        ScheduleKind::Linear => 0,
        ScheduleKind::Cosine => 1,
    });
    w.u64(stack.schedule.steps() as u64);
    w.f64s(stack.schedule.betas());
    w.f64(stack.omega);
    w.f64(stack.eta);
    w.f64(stack.r_max);
    w.u8(match stack.guidance {
        GuidanceMode::Embedding => 0,
        GuidanceMode::Output => 1,
    });
    w.u8(stack.clip as u8);
    w.u64(stack.state_dim as u64);
    w.u64(stack.action_dim as u64);
    w.u64(stack.layers.len() as u64);
    for l in &stack.layers {
        let sh = l.net.shape;
        for v in [l.net.layer, sh.slots, sh.features, sh.hidden] {
            w.u64(v as u64);
        }
        w.u64(l.steps_trained);
        w.f64s(&l.normalizer.lo);
        w.f64s(&l.normalizer.hi);
        w.u64(l.net.params.len() as u64);
        w.f64s(&l.net.params);
        w.f64s(&l.ema);
    }
    w.0
}

pub fn read_stack(bytes: &[u8]) -> Result<DiffusionStack> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(SihdError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(SihdError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(r.take(32)?);
    let kind = match r.u8()? {
        0 => ScheduleKind::Linear,
        1 => ScheduleKind::Cosine,
        other => return Err(SihdError::Checkpoint(format!("unknown schedule tag {other}"))),
    };
    let steps = r.usize()?;
    let schedule = VarianceSchedule::from_betas(kind, r.f64s(steps)?)
        .map_err(|e| SihdError::Checkpoint(format!("schedule: {e}")))?;
    let omega = r.f64()?;
    let eta = r.f64()?;
    let r_max = r.f64()?;
    let guidance = match r.u8()? {
        0 => GuidanceMode::Embedding,
        1 => GuidanceMode::Output,
        other => return Err(SihdError::Checkpoint(format!("unknown guidance tag {other}"))),
    };
    let clip = r.u8()? != 0;
    let state_dim = r.usize()?;
    let action_dim = r.usize()?;
    let n_layers = r.usize()?;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let layer = r.usize()?;
        let shape = NetShape {
            slots: r.usize()?,
            features: r.usize()?,
            hidden: r.usize()?,
        };
        let steps_trained = r.u64()?;
        let lo = r.f64s(shape.features)?;
        let hi = r.f64s(shape.features)?;
        let n = r.usize()?;
        let net = Denoiser::from_params(layer, shape, r.f64s(n)?)
            .map_err(|e| SihdError::Checkpoint(format!("layer {layer}: {e}")))?;
        let ema = r.f64s(n)?;
        layers.push(LayerModel {
            net,
            ema,
            normalizer: Normalizer { lo, hi },
            steps_trained,
        });
    }
    if r.pos != bytes.len() {
        return Err(SihdError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(DiffusionStack {
        schedule,
        omega,
        eta,
        guidance,
        clip,
        state_dim,
        action_dim,
        r_max,
        layers,
        config_hash,
    })
}

pub fn save_stack(stack: &DiffusionStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_stack(stack)).map_err(|e| SihdError::io(path, e))
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<DiffusionStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SihdError::io(path, e))?;
    read_stack(&bytes)
}
