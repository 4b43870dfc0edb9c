use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::ffpt::Array;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
struct Entry {
    name: String,
    value: Rc<Tensor>,
    trainable: bool,
}

/// Named tensors: trainable weights plus non-trainable buffers (batch-norm
/// running statistics). Names are hierarchical, dot separated.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.entries.push(Entry { name: name.to_string(), value: Rc::new(value), trainable });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn get_rc(&self, id: ParamId) -> Rc<Tensor> {
        Rc::clone(&self.entries[id.0].value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.name(id).starts_with(prefix))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Replaces a value, keeping the shape contract.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Validation(format!(
                "parameter {} expects shape {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = Rc::new(value);
        Ok(())
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Tensor)>) -> Result<()> {
        for (id, t) in updates {
            self.set(id, t)?;
        }
        Ok(())
    }

    /// Writes `manifest.txt` (one `name path` line per tensor) and one FFPT file
    /// per tensor under `dir/params/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let pdir = dir.join("params");
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut manifest = String::new();
        for e in &self.entries {
            let rel = format!("params/{}.ffpt", e.name);
            Array::from_tensor(&e.value).write(&dir.join(&rel))?;
            writeln!(manifest, "{} {}", e.name, rel).unwrap();
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Loads every tensor named in `dir/manifest.txt` into this store. Every
    /// store entry must be present and shape-compatible.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut seen = vec![false; self.entries.len()];
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (name, rel) = line.split_once(' ').ok_or_else(|| {
                Error::Parse(format!("{}:{}: expected `name path`", path.display(), lineno + 1))
            })?;
            let id = self.id(name).ok_or_else(|| {
                Error::Validation(format!("manifest names unknown parameter {name}"))
            })?;
            let t = Array::read(&dir.join(rel.trim()))?.to_tensor()?;
            self.set(id, t)?;
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "manifest is missing parameter {}",
                self.entries[missing].name
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_and_shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ParamStore::new();
        let w = a.add("block.conv.weight", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1));
        a.add_buffer("block.bn.running_mean", Tensor::zeros(&[2]));
        a.save(dir.path()).unwrap();

        let mut b = ParamStore::new();
        let wb = b.add("block.conv.weight", Tensor::zeros(&[2, 3]));
        b.add_buffer("block.bn.running_mean", Tensor::ones(&[2]));
        b.load(dir.path()).unwrap();
        assert_eq!(b.get(wb), a.get(w));

        let mut c = ParamStore::new();
        c.add("block.conv.weight", Tensor::zeros(&[3, 2]));
        c.add_buffer("block.bn.running_mean", Tensor::ones(&[2]));
        let err = c.load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("block.conv.weight"), "{err}");
    }

    #[test]
    fn trainable_count_skips_buffers() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[4, 4]));
        s.add_buffer("m", Tensor::zeros(&[4]));
        assert_eq!(s.num_trainable(), 16);
    }
}
