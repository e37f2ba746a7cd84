//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//! `b"SCH1"`, then per tensor: `u32` name length, UTF-8 name, `u32` rank,
//! `rank × u64` extents, `Π extents × f64` values. Records run to EOF.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SCH1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    /// Optimizer group; `None` marks a non-trainable buffer.
    group: Option<String>,
}

/// Parameters and buffers addressed by id or unique name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, group: Option<String>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            group,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Trainable parameter in optimizer group `group`.
    pub fn add_param(&mut self, name: &str, value: Tensor, group: &str) -> Result<ParamId> {
        self.insert(name, value, Some(group.to_string()))
    }

    /// Non-trainable state (e.g. running statistics).
    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, None)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> Option<&str> {
        self.entries[id.0].group.as_deref()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].group.is_some()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    /// Mutable access to two distinct entries at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(a, b, "pair_mut needs distinct ids");
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    /// Count of trainable scalars.
    pub fn trainable_size(&self) -> usize {
        self.entries.iter().filter(|e| e.group.is_some()).map(|e| e.value.len()).sum()
    }

    /// Values of every entry, in id order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(shape_err("restore", &[self.entries.len()], &[snapshot.len()]));
        }
        for (e, t) in self.entries.iter_mut().zip(snapshot) {
            if e.value.shape() != t.shape() {
                return Err(shape_err("restore", e.value.shape(), t.shape()));
            }
            e.value = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.value.shape().len() as u32).to_le_bytes());
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Overwrites every entry from a checkpoint; names and shapes must match
    /// exactly.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let records = parse_checkpoint(&bytes).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })?;
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if records.len() != self.entries.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                records.len()
            )));
        }
        for (name, t) in &records {
            let id = self.id(name).ok_or_else(|| bad(format!("unknown tensor '{name}'")))?;
            if self.value(id).shape() != t.shape() {
                return Err(bad(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    self.value(id).shape()
                )));
            }
        }
        for (name, t) in records {
            let id = self.id(&name).expect("checked above");
            self.entries[id.0].value = t;
        }
        Ok(())
    }
}

/// Decodes checkpoint bytes into `(name, tensor)` records.
pub fn parse_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err("missing SCH1 magic".into());
    }
    fn take<'a>(bytes: &'a [u8], n: usize, pos: &mut usize) -> std::result::Result<&'a [u8], String> {
        if *pos + n > bytes.len() {
            return Err(format!("truncated at byte {}", *pos));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    }
    let mut pos = 4;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let name_len = u32::from_le_bytes(take(bytes, 4, &mut pos)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(bytes, name_len, &mut pos)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let rank = u32::from_le_bytes(take(bytes, 4, &mut pos)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(bytes, 8, &mut pos)?.try_into().unwrap()) as usize);
        }
        let count: usize = shape.iter().product();
        let raw = take(bytes, count.checked_mul(8).ok_or("tensor too large")?, &mut pos)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(&shape, data).map_err(|e| e.to_string())?));
    }
    Ok(out)
}
