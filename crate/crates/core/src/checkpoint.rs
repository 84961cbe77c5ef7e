//! Binary model checkpoints.
//!
//! Layout: `b"LVAE"`, `u16` version, `u32` spec length + JSON spec, `u32`
//! record count, then per record: `u32` name length + name, `u32` rank,
//! `u64` extents, `f64` values. All integers and floats are little-endian.
//! Normalization state is stored as `decoder.{i}.sn_u`, `.sn_sigma` and
//! `.sn_degenerate` records.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::SpectralState;
use crate::model::{build_autoencoder, Layer, Model, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LVAE";
pub const VERSION: u16 = 1;

fn spectral_mut(layer: &mut Layer) -> Option<&mut SpectralState> {
    match layer {
        Layer::Dense(d) => d.spectral.as_mut(),
        Layer::Conv(c) => c.spectral.as_mut(),
        _ => None,
    }
}

fn records(model: &Model) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = model.parameters().into_iter().map(|(n, t)| (n, t.clone())).collect();
    for (i, s) in model.spectral_states() {
        out.push((format!("decoder.{i}.sn_u"), s.u.clone()));
        out.push((format!("decoder.{i}.sn_sigma"), Tensor::scalar(s.sigma)));
        out.push((format!("decoder.{i}.sn_degenerate"), Tensor::scalar(if s.degenerate { 1.0 } else { 0.0 })));
    }
    out
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(model.spec()).map_err(|e| Error::Format(e.to_string()))?;
    let recs = records(model);
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    b.extend_from_slice(&spec);
    b.extend_from_slice(&(recs.len() as u32).to_le_bytes());
    for (name, t) in &recs {
        b.extend_from_slice(&(name.len() as u32).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            b.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(b)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let len = len.filter(|l| l.checked_mul(8).is_some_and(|b| b <= self.buf.len()));
        let len = len.ok_or_else(|| Error::Format(format!("implausible extents {shape:?}")))?;
        let raw = self.take(len * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape, data)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, at: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let spec_len = r.u32()? as usize;
    let spec: ModelSpec = serde_json::from_slice(r.take(spec_len)?).map_err(|e| Error::Format(format!("spec: {e}")))?;
    let count = r.u32()? as usize;
    let mut stored = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("non-utf8 record name".into()))?;
        let t = r.tensor()?;
        if stored.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate record {name}")));
        }
    }
    if r.at != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.at)));
    }

    let mut model = build_autoencoder(&spec, 0)?;
    let expected = records(&model);
    if expected.len() != stored.len() {
        return Err(Error::Format(format!("expected {} records, found {}", expected.len(), stored.len())));
    }
    let mut get = |name: &str, shape: &[usize]| -> Result<Tensor> {
        let t = stored.remove(name).ok_or_else(|| Error::Format(format!("missing record {name}")))?;
        if t.shape() != shape {
            return Err(Error::Format(format!("record {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    };
    let names = model.parameter_names();
    for (name, p) in names.iter().zip(model.parameters_mut()) {
        *p = get(name, p.shape())?;
    }
    for (i, layer) in model.decoder.iter_mut().enumerate() {
        if let Some(s) = spectral_mut(layer) {
            s.u = get(&format!("decoder.{i}.sn_u"), s.u.shape())?;
            s.sigma = get(&format!("decoder.{i}.sn_sigma"), &[])?.item();
            s.degenerate = get(&format!("decoder.{i}.sn_degenerate"), &[])?.item() != 0.0;
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, to_bytes(model)?)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
