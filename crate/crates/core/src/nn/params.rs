//! Named, seeded parameter storage.
//!
//! Every trainable tensor is created here from an explicit seed so that two
//! runs with the same configuration start from bit-identical weights.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            entries: Vec::new(),
            dtype,
            device: device.clone(),
            seed,
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

    fn stream_for(&self, name: &str) -> ChaCha8Rng {
        // one independent stream per parameter name
        let mut h = DefaultHasher::new();
        name.hash(&mut h);
        ChaCha8Rng::seed_from_u64(self.seed ^ h.finish().rotate_left(17))
    }

    fn insert(&mut self, name: &str, t: Tensor) -> Result<Tensor> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("parameter {name} defined twice")));
        }
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        let out = var.as_tensor().clone();
        self.entries.push((name.to_string(), var));
        Ok(out)
    }

    /// Gaussian-initialized parameter with the given standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut rng = self.stream_for(name);
        let dist = Normal::new(0.0, std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.insert(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::zeros(shape, DType::F64, &self.device)?;
        self.insert(name, t)
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites every parameter with the tensor of the same name.
    pub fn load_from(&self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                self.entries.len(),
                named.len()
            )));
        }
        for (name, var) in &self.entries {
            let t = named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter block {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    /// Order-sensitive digest of every parameter value, for freeze audits.
    pub fn fingerprint(&self) -> Result<u64> {
        let mut h = DefaultHasher::new();
        for (name, var) in &self.entries {
            name.hash(&mut h);
            for v in var.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                v.to_bits().hash(&mut h);
            }
        }
        Ok(h.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let mut a = ParamStore::new(5, DType::F32, &Device::Cpu);
        let mut b = ParamStore::new(5, DType::F32, &Device::Cpu);
        let ta = a.normal("w", &[3, 4], 0.1).unwrap();
        let tb = b.normal("w", &[3, 4], 0.1).unwrap();
        assert_eq!(
            ta.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            tb.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let mut c = ParamStore::new(6, DType::F32, &Device::Cpu);
        c.normal("w", &[3, 4], 0.1).unwrap();
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = ParamStore::new(1, DType::F32, &Device::Cpu);
        a.zeros("b", &[2]).unwrap();
        assert!(a.zeros("b", &[2]).is_err());
    }
}
