use crate::nn::ParamStore;
use crate::{Error, Result};

/// `decay·shadow + (1 − decay)·current`.
pub fn ema_value(shadow: f64, current: f64, decay: f64) -> f64 {
    decay * shadow + (1.0 - decay) * current
}

/// Updates every shadow parameter in place: `shadow ← decay·shadow + (1 − decay)·current`.
pub fn ema_update(shadow: &ParamStore, current: &ParamStore, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::invalid(format!("ema decay {decay} must lie in [0, 1]")));
    }
    let names = |s: &ParamStore| s.params().map(|(k, v)| (k.clone(), v.dims().to_vec())).collect::<Vec<_>>();
    if names(shadow) != names(current) {
        return Err(Error::invalid("ema shadow and current parameter trees differ"));
    }
    if decay == 1.0 {
        return Ok(());
    }
    for ((_, s), (_, c)) in shadow.params().zip(current.params()) {
        if decay == 0.0 {
            s.set(c.as_tensor())?;
        } else {
            let next = (s.as_tensor().affine(decay, 0.0)? + c.as_tensor().affine(1.0 - decay, 0.0)?)?;
            s.set(&next)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use candle_core::DType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(seed: u64, extra: bool) -> ParamStore {
        let mut s = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vb = s.root(&mut rng);
        vb.param("a", (2, 3), Init::Normal { std: 1.0 }).unwrap();
        if extra {
            vb.param("b", 1, Init::Zeros).unwrap();
        }
        s
    }

    #[test]
    fn scalar_arithmetic() {
        assert!((ema_value(0.0, 1.0, 0.999) - 0.001).abs() < 1e-15);
        assert_eq!(ema_value(3.0, 5.0, 0.0), 5.0);
        assert_eq!(ema_value(3.0, 5.0, 1.0), 3.0);
    }

    #[test]
    fn rejects_mismatched_trees_and_bad_decay() {
        assert!(ema_update(&store(0, false), &store(1, true), 0.5).is_err());
        assert!(ema_update(&store(0, false), &store(1, false), 1.5).is_err());
    }
}
