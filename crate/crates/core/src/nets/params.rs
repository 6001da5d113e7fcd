use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, io_at, shape, Error, Result};

/// Named trainable tensors.
///
/// Each tensor is initialized from a stream keyed by `(seed, name)`, so the
/// values do not depend on construction order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            seed,
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, name: &str) -> ChaCha8Rng {
        let digest = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(name.as_bytes())
            .finalize();
        ChaCha8Rng::from_seed(digest.into())
    }

    /// Existing tensor `name`, or a new one drawn from U(-bound, bound).
    pub fn uniform(&mut self, name: &str, dims: &[usize], bound: f64) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != dims {
                return Err(shape(format!("{name}: stored {:?}, requested {dims:?}", v.dims())));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = dims.iter().product();
        let mut rng = self.stream(name);
        let data: Vec<f64> = (0..n)
            .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        let t = Tensor::from_vec(data, dims, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        let out = v.as_tensor().clone();
        self.vars.insert(name.to_string(), v);
        Ok(out)
    }

    pub fn zeros(&mut self, name: &str, dims: &[usize]) -> Result<Tensor> {
        self.uniform(name, dims, 0.0)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Variables whose name starts with any of `prefixes`, in name order.
    pub fn vars_with_prefixes(&self, prefixes: &[&str]) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn total_elements(&self, prefixes: &[&str]) -> usize {
        self.vars_with_prefixes(prefixes).iter().map(|v| v.elem_count()).sum()
    }

    /// SHA-256 over the names and exact values of the selected tensors.
    /// `None` selects everything.
    pub fn hash(&self, prefixes: Option<&[&str]>) -> Result<String> {
        let mut h = Sha256::new();
        for (k, v) in &self.vars {
            if let Some(p) = prefixes {
                if !p.iter().any(|p| k.starts_with(p)) {
                    continue;
                }
            }
            h.update(k.as_bytes());
            let flat = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for x in flat {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// SHA-256 over every tensor whose name matches none of `prefixes`.
    pub fn hash_excluding(&self, prefixes: &[&str]) -> Result<String> {
        let keep: Vec<&str> = self
            .vars
            .keys()
            .filter(|k| !prefixes.iter().any(|p| k.starts_with(p)))
            .map(String::as_str)
            .collect();
        if keep.is_empty() {
            return Ok(hex::encode(Sha256::digest(b"")));
        }
        self.hash(Some(&keep))
    }

    /// Writes all tensors as float32 safetensors.
    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().to_dtype(DType::F32)?)))
            .collect::<Result<_>>()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_at(parent))?;
        }
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Loads tensors from `path`, overwriting stored values in place and
    /// adding tensors not yet present.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingPrerequisite(format!("{} does not exist", path.display())));
        }
        let map = candle_core::safetensors::load(path, &self.device)?;
        for (k, t) in map {
            let t = t.to_dtype(self.dtype)?;
            match self.vars.get(&k) {
                Some(v) if v.dims() != t.dims() => {
                    return Err(shape(format!("{k}: stored {:?}, file {:?}", v.dims(), t.dims())))
                }
                Some(v) => v.set(&t)?,
                None => {
                    self.vars.insert(k, Var::from_tensor(&t)?);
                }
            }
        }
        Ok(())
    }

    /// Copies the values of every tensor in `other` that shares a name.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.vars {
            let t = v.as_tensor().to_dtype(self.dtype)?;
            match self.vars.get(k) {
                Some(mine) => mine.set(&t)?,
                None => {
                    self.vars.insert(k.clone(), Var::from_tensor(&t)?);
                }
            }
        }
        Ok(())
    }

    /// Flat value of element `index` of tensor `name`.
    pub fn element(&self, name: &str, index: usize) -> Result<f64> {
        let v = self.vars.get(name).ok_or_else(|| invalid(format!("no parameter {name}")))?;
        Ok(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?[index])
    }

    pub fn set_element(&self, name: &str, index: usize, value: f64) -> Result<()> {
        let v = self.vars.get(name).ok_or_else(|| invalid(format!("no parameter {name}")))?;
        let mut flat = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        flat[index] = value;
        let t = Tensor::from_vec(flat, v.dims(), &self.device)?.to_dtype(self.dtype)?;
        v.set(&t)?;
        Ok(())
    }
}

/// Metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub regime: String,
    pub config_hash: String,
    pub epoch: usize,
    pub validation_loss: f64,
}

/// Checkpoint files: `<stem>.safetensors` and `<stem>.json`.
pub fn save_checkpoint(store: &ParamStore, meta: &CheckpointMeta, dir: &Path, stem: &str) -> Result<()> {
    store.save(&dir.join(format!("{stem}.safetensors")))?;
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(meta)?).map_err(io_at(&path))?;
    Ok(())
}

pub fn load_checkpoint(store: &mut ParamStore, dir: &Path, stem: &str) -> Result<CheckpointMeta> {
    let path = dir.join(format!("{stem}.json"));
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!("checkpoint {} not found", path.display())));
    }
    let meta = serde_json::from_str(&std::fs::read_to_string(&path).map_err(io_at(&path))?)?;
    store.load(&dir.join(format!("{stem}.safetensors")))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_keyed_by_seed_and_name() {
        let mut a = ParamStore::new(1, DType::F32);
        let mut b = ParamStore::new(1, DType::F32);
        let x = a.uniform("x", &[4, 3], 0.5).unwrap();
        b.uniform("y", &[2], 0.5).unwrap();
        let x2 = b.uniform("x", &[4, 3], 0.5).unwrap();
        assert_eq!(x.to_vec2::<f32>().unwrap(), x2.to_vec2::<f32>().unwrap());
        assert_eq!(a.hash(Some(&["x"])).unwrap(), b.hash(Some(&["x"])).unwrap());
        assert_ne!(a.hash(None).unwrap(), b.hash(None).unwrap());
        let mut c = ParamStore::new(2, DType::F32);
        assert_ne!(
            c.uniform("x", &[4, 3], 0.5).unwrap().to_vec2::<f32>().unwrap(),
            x.to_vec2::<f32>().unwrap()
        );
        assert!(a.uniform("x", &[3, 4], 0.5).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ParamStore::new(3, DType::F32);
        a.uniform("enc.w", &[2, 2], 1.0).unwrap();
        a.zeros("enc.b", &[2]).unwrap();
        let meta = CheckpointMeta {
            regime: "clean".into(),
            config_hash: "abc".into(),
            epoch: 4,
            validation_loss: 0.25,
        };
        save_checkpoint(&a, &meta, dir.path(), "model").unwrap();
        let mut b = ParamStore::new(99, DType::F32);
        b.uniform("enc.w", &[2, 2], 1.0).unwrap();
        assert_eq!(load_checkpoint(&mut b, dir.path(), "model").unwrap(), meta);
        assert_eq!(a.hash(None).unwrap(), b.hash(None).unwrap());
        assert!(load_checkpoint(&mut b, dir.path(), "missing").is_err());
    }

    #[test]
    fn element_access_and_prefix_hashes() {
        let mut a = ParamStore::new(0, DType::F64);
        a.uniform("mss.w", &[3], 1.0).unwrap();
        a.uniform("ext.w", &[3], 1.0).unwrap();
        let before = a.hash_excluding(&["ext."]).unwrap();
        a.set_element("ext.w", 1, 7.0).unwrap();
        assert_eq!(a.element("ext.w", 1).unwrap(), 7.0);
        assert_eq!(a.hash_excluding(&["ext."]).unwrap(), before);
        a.set_element("mss.w", 0, 7.0).unwrap();
        assert_ne!(a.hash_excluding(&["ext."]).unwrap(), before);
    }
}
