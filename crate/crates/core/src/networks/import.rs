use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::ffpt::Array;
use crate::tensor::Tensor;

/// Tiles the three input-channel slices of a `Cout×3×Kh×Kw` kernel cyclically
/// to fill `p` input channels.
pub fn init_channel_replicate(k3: &Tensor, p: usize) -> Result<Tensor> {
    let s = k3.shape();
    if s.len() != 4 || s[1] != 3 || p == 0 {
        return Err(Error::Usage(format!("channel replication needs a Cout×3×Kh×Kw kernel and p ≥ 1, got {s:?}, p = {p}")));
    }
    let (cout, area) = (s[0], s[2] * s[3]);
    let mut data = Vec::with_capacity(cout * p * area);
    for o in 0..cout {
        for c in 0..p {
            let start = (o * 3 + c % 3) * area;
            data.extend_from_slice(&k3.data()[start..start + area]);
        }
    }
    Tensor::new(&[cout, p, s[2], s[3]], data)
}

/// Loads a subset of parameters from a `manifest.txt` + FFPT directory.
///
/// Names absent from `store` are an error; parameters absent from the
/// manifest keep their current values. A 3-channel kernel imported into a
/// wider first layer is channel-replicated. Returns the number of tensors
/// imported.
pub fn import_weights(store: &mut ParamStore, dir: &Path) -> Result<usize> {
    let manifest = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut count = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, file) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Parse(format!("{}:{}: expected `name path`", manifest.display(), lineno + 1)))?;
        let id = store.id(name).ok_or_else(|| Error::Validation(format!("imported parameter {name} does not exist in the network")))?;
        let value = Array::read(&dir.join(file.trim()))?.to_tensor()?;
        let target = store.get(id).shape().to_vec();
        let value = if value.shape() != target.as_slice() && value.rank() == 4 && value.shape()[1] == 3 && target.len() == 4 {
            init_channel_replicate(&value, target[1])?
        } else {
            value
        };
        store.set(id, value)?;
        count += 1;
    }
    Ok(count)
}
