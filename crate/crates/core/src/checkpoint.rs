//! Binary model container; the byte layout is described in `docs/checkpoint.md`.

use std::path::Path;

use crate::decoder::{GagcnModel, ModelConfig};
use crate::error::{Error, Result};
use crate::motiondata::SkeletonDescriptor;
use crate::numkernel::rng::fnv1a;
use crate::numkernel::{Precision, Tensor};

pub const MAGIC: &[u8; 8] = b"GAGCNCKP";
pub const FORMAT_VERSION: u32 = 1;

/// A model plus the skeleton it was trained on, if known.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: GagcnModel,
    pub skeleton: Option<SkeletonDescriptor>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

pub fn encode(model: &GagcnModel, skeleton: Option<&SkeletonDescriptor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_bytes(&mut out, &serde_json::to_vec(&model.config).expect("config serializes"));
    put_bytes(&mut out, &serde_json::to_vec(&skeleton).expect("descriptor serializes"));
    put_u32(&mut out, model.store.len() as u32);
    for p in model.store.iter() {
        put_bytes(&mut out, p.name.as_bytes());
        let precision = p.value.precision();
        out.push(match precision {
            Precision::Binary32 => 0,
            Precision::Binary64 => 1,
        });
        put_u32(&mut out, p.value.ndim() as u32);
        for &d in p.value.shape() {
            put_u64(&mut out, d as u64);
        }
        for &v in p.value.data() {
            match precision {
                Precision::Binary32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::Binary64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let sum = fnv1a(&out);
    put_u64(&mut out, sum);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < MAGIC.len() + 4 + 8 || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Integrity("not a model checkpoint (bad magic)".into()));
    }
    let (body, tail) = buf.split_at(buf.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a(body) != stored {
        return Err(Error::Integrity("checksum mismatch; file is truncated or corrupted".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let config: ModelConfig = serde_json::from_slice(r.bytes("model config")?)
        .map_err(|e| Error::Integrity(format!("model config: {e}")))?;
    let skeleton: Option<SkeletonDescriptor> = serde_json::from_slice(r.bytes("skeleton")?)
        .map_err(|e| Error::Integrity(format!("skeleton descriptor: {e}")))?;
    let mut model = GagcnModel::new(config, 0)?;
    let count = r.u32("parameter count")? as usize;
    if count != model.store.len() {
        return Err(Error::Integrity(format!(
            "checkpoint holds {count} parameters, the configured model has {}",
            model.store.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name = String::from_utf8(r.bytes("parameter name")?.to_vec())
            .map_err(|_| Error::Integrity("parameter name is not UTF-8".into()))?;
        let precision = match r.take(1, "precision")?[0] {
            0 => Precision::Binary32,
            1 => Precision::Binary64,
            other => return Err(Error::Integrity(format!("unknown precision tag {other} for `{name}`"))),
        };
        let ndim = r.u32("rank")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64("shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let width = precision.bytes();
        let raw = r.take(len * width, "payload")?;
        let data = raw
            .chunks_exact(width)
            .map(|c| match precision {
                Precision::Binary32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                Precision::Binary64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            })
            .collect();
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::Integrity(format!("unknown parameter `{name}`")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Integrity(format!("parameter `{name}` appears twice")));
        }
        Tensor::with_precision(shape, data, precision)
            .and_then(|t| model.store.set_value(id, t))
            .map_err(|e| Error::Integrity(format!("parameter `{name}`: {e}")))?;
    }
    if r.pos != body.len() {
        return Err(Error::Integrity(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { model, skeleton })
}

pub fn save(path: &Path, model: &GagcnModel, skeleton: Option<&SkeletonDescriptor>) -> Result<()> {
    std::fs::write(path, encode(model, skeleton)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| match e {
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{synth_skeleton, Representation};
    use crate::numkernel::Rng;

    fn model() -> GagcnModel {
        let mut cfg = ModelConfig::new(12, 3).with_width(4, 2);
        cfg.output_frames = 5;
        let mut m = GagcnModel::new(cfg, 3).unwrap();
        // Give the zero-initialized projection real values.
        let (w, b) = m.decoder.output_param_ids();
        let rng = Rng::new(4);
        let ws = m.store.value(w).shape().to_vec();
        m.store.set_value(w, rng.split(0).uniform_tensor(&ws, -1.0, 1.0)).unwrap();
        m.store.set_value(b, rng.split(1).uniform_tensor(&[3], -1.0, 1.0)).unwrap();
        m
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let m = model();
        let desc = SkeletonDescriptor::new(&synth_skeleton(), Representation::Coords3d, 25.0);
        let ck = decode(&encode(&m, Some(&desc))).unwrap();
        assert_eq!(ck.skeleton, Some(desc));
        let x = Rng::new(9).uniform_tensor(&[3, 12, 10], -100.0, 100.0);
        assert_eq!(m.predict(&x).unwrap(), ck.model.predict(&x).unwrap());
        for (a, b) in m.store.iter().zip(ck.model.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn binary32_round_trip() {
        let mut cfg = ModelConfig::new(3, 3).with_width(4, 1);
        cfg.precision = Precision::Binary32;
        let m = GagcnModel::new(cfg, 1).unwrap();
        let ck = decode(&encode(&m, None)).unwrap();
        for (a, b) in m.store.iter().zip(ck.model.store.iter()) {
            assert_eq!(a.value, b.value);
            assert_eq!(b.value.precision(), Precision::Binary32);
        }
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = encode(&model(), None);
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Integrity(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::Integrity(_))));
        assert!(matches!(decode(b"nonsense"), Err(Error::Integrity(_))));
    }
}
