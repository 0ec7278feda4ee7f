//! Binary model checkpoints.
//!
//! Layout (little endian): magic `FNIRSCK1`, `u32` version, the model spec
//! and input shape, then every parameter tensor as
//! `name, u32 ndim, u64 dims…, f64 values…`. Strings are `u32` length plus
//! UTF-8 bytes. Values are stored bit for bit, so a round trip is exact.

use std::fs;
use std::path::Path;

use super::{build_model, InputShape, ModelKind, ModelSpec, ModelState};
use crate::error::{Error, Result};
use crate::numerics::Activation;

pub const MAGIC: &[u8; 8] = b"FNIRSCK1";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes(m: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, m.spec.kind.name());
    put_str(&mut out, m.spec.cell_activation.name());
    put_u32(&mut out, m.spec.n_classes as u32);
    put_u64(&mut out, m.spec.dropout_rate.to_bits());
    put_u32(&mut out, m.spec.layer_widths.len() as u32);
    for &w in &m.spec.layer_widths {
        put_u32(&mut out, w as u32);
    }
    put_u32(&mut out, m.input.steps as u32);
    put_u32(&mut out, m.input.channels as u32);
    let params = m.params();
    put_u32(&mut out, params.len() as u32);
    for (name, t) in params {
        put_str(&mut out, &name);
        put_u32(&mut out, t.ndim() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind: ModelKind = r.string()?.parse()?;
    let cell_activation: Activation = r.string()?.parse()?;
    let n_classes = r.u32()? as usize;
    let dropout_rate = r.f64()?;
    let n_widths = r.u32()? as usize;
    let layer_widths = (0..n_widths).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    let input = InputShape {
        steps: r.u32()? as usize,
        channels: r.u32()? as usize,
    };
    let spec = ModelSpec {
        kind,
        layer_widths,
        dropout_rate,
        n_classes,
        cell_activation,
    };
    let mut m = build_model(&spec, input, 0)?;
    let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", names.len())));
    }
    for (name, slot) in names.iter().zip(m.params_mut()) {
        let got = r.string()?;
        if &got != name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{got}`")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        for v in slot.data_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(m)
}

pub fn save_checkpoint(m: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
