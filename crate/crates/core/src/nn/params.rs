use std::collections::BTreeMap;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal with the leaky-rectifier gain, multiplied by `scale`.
    KaimingNormal { scale: f64 },
    Normal { std: f64 },
    Zeros,
}

/// Named trainable parameters plus non-trainable buffers (spectral-norm vectors).
///
/// Names are kept sorted, so iteration order, optimizer state layout and
/// checkpoint contents are deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn root<'a>(&'a mut self, rng: &'a mut dyn RngCore) -> VarBuilder<'a> {
        VarBuilder {
            store: self,
            rng,
            prefix: String::new(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.buffers.iter()
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of every parameter value.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn buffer_snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.buffers
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites parameters from `values`. Every name and shape is checked before
    /// anything is written, so a mismatch leaves the store untouched.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        check_tree(&self.params, values)?;
        for (name, var) in &self.params {
            var.set(&values[name].to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn load_buffers(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        check_tree(&self.buffers, values)?;
        for (name, var) in &self.buffers {
            var.set(&values[name].to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copies parameter and buffer values from another store with the same layout.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        self.load(&other.snapshot()?)?;
        self.load_buffers(&other.buffer_snapshot()?)
    }
}

fn check_tree(vars: &BTreeMap<String, Var>, values: &BTreeMap<String, Tensor>) -> Result<()> {
    for (name, var) in vars {
        let value = values
            .get(name)
            .ok_or_else(|| Error::checkpoint(name, "missing tensor"))?;
        if value.dims() != var.dims() {
            return Err(Error::checkpoint(
                name,
                format!("shape {:?} does not match expected {:?}", value.dims(), var.dims()),
            ));
        }
    }
    if let Some(extra) = values.keys().find(|k| !vars.contains_key(*k)) {
        return Err(Error::checkpoint(extra, "unexpected tensor"));
    }
    Ok(())
}

/// Hands out named variables under a dotted prefix.
pub struct VarBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl VarBuilder<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> VarBuilder<'_> {
        let prefix = self.path(name.as_ref());
        VarBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    fn sample(&mut self, shape: &Shape, init: Init) -> Result<Tensor> {
        let dims = shape.dims();
        let n = shape.elem_count();
        let fan_in: usize = dims.iter().skip(1).product::<usize>().max(1);
        let std = match init {
            Init::Zeros => return Ok(Tensor::zeros(shape, self.store.dtype, &Device::Cpu)?),
            Init::Normal { std } => std,
            Init::KaimingNormal { scale } => {
                let slope = super::LEAKY_SLOPE;
                let gain = (2.0 / (1.0 + slope * slope)).sqrt();
                scale * gain / (fan_in as f64).sqrt()
            }
        };
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.store.dtype)?)
    }

    pub fn param(&mut self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        let path = self.path(name);
        if self.store.params.contains_key(&path) {
            return Err(Error::invalid(format!("duplicate parameter `{path}`")));
        }
        let value = self.sample(&shape.into(), init)?;
        let var = Var::from_tensor(&value)?;
        self.store.params.insert(path, var.clone());
        Ok(var)
    }

    pub fn buffer(&mut self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        let path = self.path(name);
        if self.store.buffers.contains_key(&path) {
            return Err(Error::invalid(format!("duplicate buffer `{path}`")));
        }
        let value = self.sample(&shape.into(), init)?;
        let var = Var::from_tensor(&value)?;
        self.store.buffers.insert(path, var.clone());
        Ok(var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(seed: u64) -> ParamStore {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vb = store.root(&mut rng);
        let mut sub = vb.pp("block");
        sub.param("weight", (4, 3, 3, 3), Init::KaimingNormal { scale: 1.0 })
            .unwrap();
        sub.param("bias", 4, Init::Zeros).unwrap();
        store
    }

    #[test]
    fn names_are_dotted_and_init_is_seeded() {
        let a = build(1);
        let b = build(1);
        let names: Vec<_> = a.params().map(|(k, _)| k.clone()).collect();
        assert_eq!(names, vec!["block.bias", "block.weight"]);
        let wa = a.param("block.weight").unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let wb = b.param("block.weight").unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(wa, wb);
        assert_eq!(a.num_elements(), 4 * 27 + 4);
    }

    #[test]
    fn load_rejects_mismatch_without_partial_write() {
        let a = build(1);
        let mut snap = build(2).snapshot().unwrap();
        let before = a.snapshot().unwrap();
        snap.insert(
            "block.bias".into(),
            Tensor::zeros(5, DType::F32, &Device::Cpu).unwrap(),
        );
        let err = a.load(&snap).unwrap_err();
        assert!(err.to_string().contains("block.bias"));
        let after = a.snapshot().unwrap();
        for (k, v) in before {
            let x = v.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = after[&k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(x, y);
        }
    }
}
