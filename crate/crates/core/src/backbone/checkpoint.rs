//! Versioned binary checkpoint: header, config document with its SHA-256,
//! then named little-endian `f64` arrays (parameters and Adam moments).

use std::path::Path;

use ndnum::DenseArray;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::BackboneConfig;
use super::model::{AdamState, Backbone};
use crate::error::{Result, TadError};

const MAGIC: &[u8; 8] = b"RGTDCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: BackboneConfig,
    adam_step: u64,
    rng: ChaCha8Rng,
}

fn corrupt(msg: impl Into<String>) -> TadError {
    TadError::Data(format!("checkpoint: {}", msg.into()))
}

fn push_array(out: &mut Vec<u8>, name: &str, a: &DenseArray) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
    for &e in a.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in a.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn config_hash(config: &BackboneConfig) -> [u8; 32] {
    let doc = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&doc).into()
}

pub fn to_bytes(model: &Backbone) -> Vec<u8> {
    let meta = Meta {
        config: model.config().clone(),
        adam_step: model.adam.step,
        rng: model.rng.clone(),
    };
    let meta_doc = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_doc.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_doc);
    out.extend_from_slice(&config_hash(model.config()));
    let (names, values) = model.parts();
    out.extend_from_slice(&((3 * names.len()) as u64).to_le_bytes());
    for (n, v) in names.iter().zip(values) {
        push_array(&mut out, n, v);
    }
    for (n, v) in names.iter().zip(&model.adam.m) {
        push_array(&mut out, &format!("adam.m/{n}"), v);
    }
    for (n, v) in names.iter().zip(&model.adam.v) {
        push_array(&mut out, &format!("adam.v/{n}"), v);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("truncated"))?;
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

    fn array(&mut self) -> Result<(String, DenseArray)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| corrupt("bad name"))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("bad shape"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, DenseArray::new(shape, data)?))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Backbone> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let meta_len = r.u64()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| corrupt(format!("metadata: {e}")))?;
    let stored_hash = r.take(32)?;
    if stored_hash != config_hash(&meta.config) {
        return Err(corrupt("config hash mismatch"));
    }
    let count = r.u64()? as usize;
    if count % 3 != 0 {
        return Err(corrupt("array count is not a multiple of three"));
    }
    let arrays = (0..count).map(|_| r.array()).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(corrupt("trailing bytes"));
    }
    let k = count / 3;
    let names: Vec<String> = arrays[..k].iter().map(|(n, _)| n.clone()).collect();
    let values: Vec<DenseArray> = arrays[..k].iter().map(|(_, v)| v.clone()).collect();
    let moments = |prefix: &str, part: &[(String, DenseArray)]| -> Result<Vec<DenseArray>> {
        part.iter()
            .zip(&names)
            .map(|((n, v), want)| {
                if *n == format!("{prefix}/{want}") {
                    Ok(v.clone())
                } else {
                    Err(corrupt(format!("unexpected array '{n}'")))
                }
            })
            .collect()
    };
    let adam = AdamState {
        step: meta.adam_step,
        m: moments("adam.m", &arrays[k..2 * k])?,
        v: moments("adam.v", &arrays[2 * k..])?,
    };
    let fresh = Backbone::new(meta.config.clone(), 0)?;
    let expected: Vec<(&str, &DenseArray)> = fresh.params().collect();
    if expected.len() != k
        || expected
            .iter()
            .zip(names.iter().zip(&values))
            .any(|((en, ev), (n, v))| *en != n || ev.shape() != v.shape())
    {
        return Err(corrupt("parameter layout does not match the stored config"));
    }
    Backbone::assemble(meta.config, names, values, Some(adam), meta.rng)
}

pub fn save_checkpoint(model: &Backbone, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| TadError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Backbone> {
    let buf = std::fs::read(path).map_err(|e| TadError::io(path, e))?;
    from_bytes(&buf)
}
