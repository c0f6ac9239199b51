use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{path}.{key}"), format!("{v} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!("{path}.eps"), "must be positive"));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with bias correction. Moments are kept per
/// parameter name in the parameter dtype.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Result<Self> {
        let zeros = store
            .params()
            .map(|(k, p)| Ok((k.clone(), p.as_tensor().zeros_like()?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Zeroes both moments and the step counter.
    pub fn reset(&mut self) -> Result<()> {
        for t in self.m.values_mut().chain(self.v.values_mut()) {
            *t = t.zeros_like()?;
        }
        self.step = 0;
        Ok(())
    }

    /// One update of every parameter that has a gradient in `grads`.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (name, var) in store.params() {
            let Some(g) = grads.get(var.as_tensor()).map(Tensor::detach) else {
                continue;
            };
            let m = self.m.get_mut(name).ok_or_else(|| Error::checkpoint(name, "no optimizer state"))?;
            let v = self.v.get_mut(name).ok_or_else(|| Error::checkpoint(name, "no optimizer state"))?;
            *m = (m.affine(b1, 0.0)? + g.affine(1.0 - b1, 0.0)?)?;
            *v = (v.affine(b2, 0.0)? + g.sqr()?.affine(1.0 - b2, 0.0)?)?;
            let denom = v.affine(1.0 / bc2, 0.0)?.sqrt()?.affine(1.0, self.cfg.eps)?;
            let update = m.affine(lr / bc1, 0.0)?.div(&denom)?;
            var.set(&(var.as_tensor() - update)?)?;
        }
        Ok(())
    }

    /// Moments as `m.{name}` / `v.{name}` tensors.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let m = self.m.iter().map(|(k, t)| (format!("m.{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("v.{k}"), t.clone()));
        m.chain(v).collect()
    }

    /// Restores moments saved by [`Adam::state`]; checks names and shapes first.
    pub fn load_state(&mut self, step: u64, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut next = (BTreeMap::new(), BTreeMap::new());
        for (prefix, (cur, out)) in [("m", (&self.m, &mut next.0)), ("v", (&self.v, &mut next.1))] {
            for (name, t) in cur {
                let key = format!("{prefix}.{name}");
                let saved = state.get(&key).ok_or_else(|| Error::checkpoint(&key, "missing tensor"))?;
                if saved.dims() != t.dims() {
                    return Err(Error::checkpoint(&key, format!("shape {:?}, expected {:?}", saved.dims(), t.dims())));
                }
                out.insert(name.clone(), saved.to_dtype(t.dtype())?);
            }
        }
        if state.len() != self.m.len() + self.v.len() {
            return Err(Error::checkpoint("optimizer", "unexpected extra tensors"));
        }
        (self.m, self.v) = next;
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = store.root(&mut rng).param("p", 3, Init::Zeros).unwrap();
        p.set(&Tensor::new(&[1.0f64, -2.0, 0.5], &Device::Cpu).unwrap()).unwrap();
        let target = Tensor::new(&[0.0f64, 0.0, 2.0], &Device::Cpu).unwrap();
        let loss = (p.as_tensor() - target).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        adam.step(&store, &grads, 0.1).unwrap();
        let v = p.as_tensor().to_vec1::<f64>().unwrap();
        // With bias correction the first step is lr · g / (|g| + eps′).
        let want = [0.9, -1.9, 0.6];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn state_round_trip_and_rejection() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        store.root(&mut rng).param("w", (2, 2), Init::Normal { std: 1.0 }).unwrap();
        let mut a = Adam::new(AdamConfig::default(), &store).unwrap();
        let mut state = a.state();
        assert_eq!(state.len(), 2);
        a.load_state(7, &state).unwrap();
        assert_eq!(a.step_count(), 7);
        state.remove("v.w");
        assert!(a.load_state(1, &state).unwrap_err().to_string().contains("v.w"));
        assert_eq!(a.step_count(), 7);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate("o").is_ok());
        let bad = AdamConfig { beta2: 1.0, ..Default::default() };
        assert!(bad.validate("o").unwrap_err().to_string().contains("o.beta2"));
    }
}
