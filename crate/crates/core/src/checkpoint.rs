//! Self-describing binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "BPGCKPT\0"
//! version  u32
//! config   u32 length + UTF-8 `key = value` lines (model and trainer)
//! step     u64
//! count    u32
//! count × { name, block: u32 length + UTF-8
//!           rows, cols: u32
//!           value, adam m, adam v: rows·cols f64 each }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::autograd::Tensor;
use crate::bpgnet::BpgModel;
use crate::config::{parse_kv, ModelConfig, TrainConfig};
use crate::error::{BpgError, Result};
use crate::skeleton::SkeletonModel;

pub const MAGIC: &[u8; 8] = b"BPGCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: BpgModel,
    pub train: TrainConfig,
    pub step: u64,
    /// Adam first and second moments, aligned with the parameter store.
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn config_echo(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut map = model.to_map();
    map.extend(train.to_map());
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut buf, &config_echo(&self.model.cfg, &self.train));
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.model.store.len() as u32).to_le_bytes());
        for (id, p) in self.model.store.iter() {
            put_str(&mut buf, &p.name);
            put_str(&mut buf, &p.block);
            let (r, c) = p.value.dim();
            buf.extend_from_slice(&(r as u32).to_le_bytes());
            buf.extend_from_slice(&(c as u32).to_le_bytes());
            put_tensor(&mut buf, &p.value);
            put_tensor(&mut buf, &self.adam_m[id.0]);
            put_tensor(&mut buf, &self.adam_v[id.0]);
        }
        buf
    }

    /// Decodes a checkpoint, rebuilding the model layout from the embedded
    /// config and rejecting any tensor whose name, block or shape differs.
    pub fn from_bytes(bytes: &[u8], skel: &SkeletonModel) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(BpgError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(BpgError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let echo = r.string()?;
        let map: BTreeMap<String, String> = parse_kv(&echo, "checkpoint config")?;
        let model_cfg = ModelConfig::from_map(&map)?;
        let train = TrainConfig::from_map(&map)?;
        let step = r.u64()?;
        let mut model = BpgModel::new(model_cfg, skel.clone())?;
        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(BpgError::Checkpoint(format!(
                "checkpoint has {count} tensors, model expects {}",
                model.store.len()
            )));
        }
        let mut adam_m = Vec::with_capacity(count);
        let mut adam_v = Vec::with_capacity(count);
        let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone(), p.block.clone(), p.value.dim())).collect();
        for (id, name, block, dim) in ids {
            let got_name = r.string()?;
            let got_block = r.string()?;
            let shape = (r.u32()? as usize, r.u32()? as usize);
            if got_name != name || got_block != block || shape != dim {
                return Err(BpgError::Checkpoint(format!(
                    "tensor mismatch: checkpoint has `{got_name}` ({got_block}) {}x{}, model expects `{name}` ({block}) {}x{}",
                    shape.0, shape.1, dim.0, dim.1
                )));
            }
            *model.store.value_mut(id) = r.tensor(dim)?;
            adam_m.push(r.tensor(dim)?);
            adam_v.push(r.tensor(dim)?);
        }
        if r.pos != bytes.len() {
            return Err(BpgError::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint {
            model,
            train,
            step,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| BpgError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, skel: &SkeletonModel) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| BpgError::io(path, e))?;
        Self::from_bytes(&bytes, skel).map_err(|e| match e {
            BpgError::Checkpoint(m) => BpgError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| BpgError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| BpgError::Checkpoint("invalid UTF-8 string".into()))
    }

    fn tensor(&mut self, dim: (usize, usize)) -> Result<Tensor> {
        let raw = self.take(dim.0 * dim.1 * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Array2::from_shape_vec(dim, data).expect("sized from dim"))
    }
}
