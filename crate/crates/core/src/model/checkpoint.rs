//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "MFCN" | u32 version | u32 len, config text | u64 step | u32 blob count
//! per blob: u32 len, name | u8 dtype | u8 rank | rank × u32 dims | values
//! ```
//!
//! dtype 1 is f64. Blobs are the weight and bias of every parameter set plus
//! the running mean and variance of every batchnorm.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MFCN";
const DTYPE_F64: u8 = 1;

struct Blob {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn blobs_of(model: &Model) -> Vec<(String, Blob)> {
    let mut out = Vec::new();
    model.visit_params(|name, p| {
        let s = p.weight.shape();
        out.push((
            format!("{name}.weight"),
            Blob {
                dims: vec![s.n, s.c, s.h, s.w],
                values: p.weight.data().to_vec(),
            },
        ));
        out.push((
            format!("{name}.bias"),
            Blob {
                dims: vec![p.bias.len()],
                values: p.bias.clone(),
            },
        ));
    });
    for (name, bn) in model.bn_states() {
        for (suffix, v) in [
            ("running_mean", &bn.running_mean),
            ("running_var", &bn.running_var),
        ] {
            out.push((
                format!("{name}.{suffix}"),
                Blob {
                    dims: vec![v.len()],
                    values: v.clone(),
                },
            ));
        }
    }
    out
}

pub fn write_checkpoint(model: &Model, out: &mut impl Write) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = model.config().to_text();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    buf.extend_from_slice(&model.step.to_le_bytes());
    let blobs = blobs_of(model);
    buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, blob) in &blobs {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F64);
        buf.push(blob.dims.len() as u8);
        for &d in &blob.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &blob.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        write_checkpoint(model, &mut file).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated file while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)? as usize;
        std::str::from_utf8(self.take(len, what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

/// Parses a complete checkpoint; nothing is returned unless every blob is
/// present and matches the shape implied by the embedded config.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic bytes (expected \"MFCN\")".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config = ModelConfig::from_text(r.string("config text")?)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let step = r.u64("step counter")?;
    let count = r.u32("blob count")? as usize;

    let mut model = Model::build(config, 0)?;
    model.step = step;
    let expected: BTreeMap<String, Vec<usize>> = blobs_of(&model)
        .into_iter()
        .map(|(n, b)| (n, b.dims))
        .collect();

    let mut parsed: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for _ in 0..count {
        let name = r.string("blob name")?.to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!(
                "blob {name}: unsupported dtype tag {dtype}"
            )));
        }
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let want = expected
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected blob {name}")))?;
        if &dims != want {
            return Err(Error::Checkpoint(format!(
                "blob {name}: shape {dims:?} does not match config shape {want:?}"
            )));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 8, &format!("values of blob {name}"))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if parsed.insert(name.clone(), values).is_some() {
            return Err(Error::Checkpoint(format!("duplicate blob {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last blob",
            bytes.len() - r.pos
        )));
    }
    if let Some(missing) = expected.keys().find(|k| !parsed.contains_key(*k)) {
        return Err(Error::Checkpoint(format!("missing blob {missing}")));
    }

    model.visit_params_mut(|name, p| {
        let w = &parsed[&format!("{name}.weight")];
        p.weight.data_mut().copy_from_slice(w);
        p.bias.copy_from_slice(&parsed[&format!("{name}.bias")]);
    });
    for (name, bn) in model.bn_states_mut() {
        bn.running_mean
            .copy_from_slice(&parsed[&format!("{name}.running_mean")]);
        bn.running_var
            .copy_from_slice(&parsed[&format!("{name}.running_var")]);
    }
    Ok(model)
}
