//! Versioned binary checkpoint container: a sorted metadata section plus
//! named tensors with raw little-endian f64 payloads. Serialization is a
//! pure function of contents, so serialize -> deserialize -> serialize is
//! byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use crate::gradcore::Tensor;
use crate::train::TrainError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CGTCKPT\0";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    /// Floats go through `{:?}` (shortest round-trip form).
    pub fn set_meta_f64(&mut self, key: &str, value: f64) {
        self.meta.insert(key.to_string(), format!("{value:?}"));
    }

    pub fn meta_str(&self, key: &str) -> Result<&str, TrainError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| TrainError::CheckpointFormat(format!("missing meta key {key}")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64, TrainError> {
        self.meta_str(key)?
            .parse()
            .map_err(|e| TrainError::CheckpointFormat(format!("meta {key}: {e}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize, TrainError> {
        self.meta_str(key)?
            .parse()
            .map_err(|e| TrainError::CheckpointFormat(format!("meta {key}: {e}")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64, TrainError> {
        self.meta_str(key)?
            .parse()
            .map_err(|e| TrainError::CheckpointFormat(format!("meta {key}: {e}")))
    }

    pub fn meta_bool(&self, key: &str) -> Result<bool, TrainError> {
        match self.meta_str(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(TrainError::CheckpointFormat(format!("meta {key}: bad bool {other}"))),
        }
    }

    /// Comma-separated usize list ("" = empty).
    pub fn meta_usize_list(&self, key: &str) -> Result<Vec<usize>, TrainError> {
        let s = self.meta_str(key)?;
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|p| {
                p.parse()
                    .map_err(|e| TrainError::CheckpointFormat(format!("meta {key}: {e}")))
            })
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, TrainError> {
        self.tensors
            .get(name)
            .ok_or_else(|| TrainError::CheckpointFormat(format!("missing tensor {name}")))
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            out.extend_from_slice(&(k.len() as u16).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(TrainError::CheckpointFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut meta = BTreeMap::new();
        let n_meta = r.u32()?;
        for _ in 0..n_meta {
            let klen = r.u16()? as usize;
            let key = r.string(klen)?;
            let vlen = r.u32()? as usize;
            let value = r.string(vlen)?;
            meta.insert(key, value);
        }
        let mut tensors = BTreeMap::new();
        let n_tensors = r.u32()?;
        for _ in 0..n_tensors {
            let nlen = r.u16()? as usize;
            let name = r.string(nlen)?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_bits(r.u64()?));
            }
            let t = Tensor::new(shape, data)
                .map_err(|e| TrainError::CheckpointFormat(e.to_string()))?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(TrainError::CheckpointFormat(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_file(path: &Path) -> Result<Checkpoint, TrainError> {
        let bytes = std::fs::read(path)
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.bytes.len() {
            return Err(TrainError::CheckpointFormat("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String, TrainError> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| TrainError::CheckpointFormat(format!("bad utf8: {e}")))
    }
}
