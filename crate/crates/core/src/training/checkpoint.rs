//! Binary checkpoints.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic        8 bytes  "HCNNCKPT"
//! version      u16 major, u16 minor, u16 patch
//! digest       32 bytes SHA-256 of the config JSON
//! config       u32 length + UTF-8 JSON of the ModelConfig
//! table        u32 count, then per entry:
//!                u16 name length + name, u8 trainable, u8 rank, u32 dims
//! payload      f32 values of every entry, in table order
//! checksum     32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::models::{Model, ModelConfig};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HCNNCKPT";
pub const VERSION: (u16, u16, u16) = (1, 0, 0);

/// SHA-256 of the canonical JSON of a serializable config, as hex.
pub fn config_digest<S: serde::Serialize>(cfg: &S) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex(&Sha256::digest(&json))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A decoded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: (u16, u16, u16),
    pub config: ModelConfig,
    pub params: Vec<(String, bool, Tensor<f32>)>,
}

pub fn encode<T: Real>(model: &Model<T>) -> Vec<u8> {
    let cfg_json = serde_json::to_vec(model.config()).expect("config serializes");
    let mut out = Vec::new();
    out.extend(MAGIC);
    for v in [VERSION.0, VERSION.1, VERSION.2] {
        out.extend(v.to_le_bytes());
    }
    out.extend(Sha256::digest(&cfg_json));
    out.extend((cfg_json.len() as u32).to_le_bytes());
    out.extend(&cfg_json);
    let store = model.store();
    out.extend((store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend((p.name.len() as u16).to_le_bytes());
        out.extend(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend((d as u32).to_le_bytes());
        }
    }
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend(Real::to_f32(*v).to_le_bytes());
        }
    }
    let sum = Sha256::digest(&out);
    out.extend(sum);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointFormat(format!(
                "unexpected end of data at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CheckpointFormat("not a checkpoint (bad magic)".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::CheckpointChecksum);
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = (r.u16()?, r.u16()?, r.u16()?);
    if version.0 != VERSION.0 {
        return Err(Error::CheckpointVersion {
            found: format!("{}.{}.{}", version.0, version.1, version.2),
            supported: format!("{}.x.x", VERSION.0),
        });
    }
    let digest = r.take(32)?.to_vec();
    let len = r.u32()? as usize;
    let cfg_bytes = r.take(len)?;
    if Sha256::digest(cfg_bytes).as_slice() != digest.as_slice() {
        return Err(Error::CheckpointFormat("config digest does not match the embedded config".into()));
    }
    let config: ModelConfig =
        serde_json::from_slice(cfg_bytes).map_err(|e| Error::CheckpointFormat(format!("embedded config: {e}")))?;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::CheckpointFormat("parameter name is not UTF-8".into()))?;
        let trainable = r.u8()? != 0;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, trainable, shape));
    }
    let mut params = Vec::with_capacity(count);
    for (name, trainable, shape) in table {
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push((name, trainable, Tensor::new(&shape, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::CheckpointFormat(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        version,
        config,
        params,
    })
}

pub fn save<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

impl Checkpoint {
    /// Copies the stored parameters into `store`, which must have the same
    /// table (names, order, shapes).
    pub fn restore_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for ((_, p), (name, _, value)) in store.iter().zip(&self.params) {
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(Error::ArchitectureMismatch(format!(
                    "model tensor `{}` {:?} vs checkpoint `{name}` {:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                )));
            }
        }
        for ((_, p), (_, _, value)) in store.iter_mut().zip(&self.params) {
            p.value = value.cast();
        }
        Ok(())
    }

    /// Builds the stored model and restores its parameters.
    pub fn into_model<T: Real>(&self) -> Result<Model<T>> {
        let mut m = Model::build(&self.config)?;
        self.restore_into(m.store_mut())?;
        Ok(m)
    }
}

/// Loads a checkpoint into an existing model. The stored architecture
/// (input, classes, layers) must match the model's.
pub fn load_into<T: Real>(model: &mut Model<T>, path: &Path) -> Result<()> {
    let ck = read(path)?;
    let (a, b) = (&ck.config, model.config());
    if a.layers != b.layers || a.input != b.input || a.classes != b.classes {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint holds `{}`, model is `{}`",
            a.architecture, b.architecture
        )));
    }
    ck.restore_into(model.store_mut())
}
