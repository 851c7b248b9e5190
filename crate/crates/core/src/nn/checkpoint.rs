use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Writes named networks as JSON. Values round-trip exactly.
pub fn save_checkpoint(path: &Path, nets: &[(&str, &ParamSet)]) -> Result<(), NnError> {
    let mut doc = serde_json::Map::new();
    for (key, params) in nets {
        let entries: Vec<Entry> = params
            .iter()
            .map(|p| Entry { name: p.name.clone(), shape: p.value.shape().to_vec(), data: p.value.data().to_vec() })
            .collect();
        doc.insert((*key).to_string(), serde_json::to_value(entries)?);
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, serde_json::to_vec_pretty(&doc)?)?;
    Ok(())
}

/// Reads the network stored under `key`.
pub fn load_checkpoint(path: &Path, key: &str) -> Result<ParamSet, NnError> {
    let doc: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&fs::read(path)?)?;
    let value = doc.get(key).ok_or_else(|| NnError::Checkpoint(format!("no network `{key}` in {}", path.display())))?;
    let entries: Vec<Entry> = serde_json::from_value(value.clone())?;
    let mut params = ParamSet::new();
    for e in entries {
        params.push(e.name, Tensor::new(e.shape, e.data)?);
    }
    Ok(params)
}

/// Copies values from `src` into `dst`, which must share its layout.
pub fn load_into(dst: &mut ParamSet, src: &ParamSet) -> Result<(), NnError> {
    if !dst.same_layout(src) {
        return Err(NnError::Checkpoint("parameter layout mismatch".into()));
    }
    dst.set_flat_values(&src.flat_values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::seed::rng_from_seed;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let net = Mlp::new(&[5, 7, 3], 2f64.sqrt(), 0.01, &mut rng_from_seed(1)).unwrap();
        save_checkpoint(&path, &[("actor", &net.params)]).unwrap();
        let back = load_checkpoint(&path, "actor").unwrap();
        assert!(net.params.same_layout(&back));
        let a: Vec<u64> = net.params.flat_values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flat_values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert!(matches!(load_checkpoint(&path, "critic"), Err(NnError::Checkpoint(_))));
        assert_eq!(Mlp::from_layout(back).unwrap().sizes(), &[5, 7, 3]);
    }
}
