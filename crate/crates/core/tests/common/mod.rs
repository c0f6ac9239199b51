//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

pub mod extractors;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn uniform(dims: &[usize], lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..dims.iter().product::<usize>()).map(|_| r.random_range(lo..hi)).collect()
}

pub fn tensor(data: &[f64], dims: &[usize]) -> Tensor {
    Tensor::from_vec(data.to_vec(), dims, &Device::Cpu).unwrap()
}

/// Dense (N, C, H, W) array used by the oracles.
#[derive(Debug, Clone)]
pub struct Nd {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Nd {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let d = t.dims4().unwrap();
        Self::new([d.0, d.1, d.2, d.3], values(t))
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.dims;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, o: &Nd) -> Self {
        assert_eq!(self.dims, o.dims);
        Self::new(self.dims, self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect())
    }
}

/// Zero-padded cross-correlation with weights (O, C, k, k).
pub fn conv(x: &Nd, w: &[f64], b: &[f64], o: usize, k: usize, stride: usize, pad: usize) -> Nd {
    let [n, c, h, wd] = x.dims;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for bi in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(bi, ic, iy as usize, ix as usize) * w[((oc * c + ic) * k + i) * k + j];
                            }
                        }
                    }
                    out[((bi * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Nd::new([n, o, ho, wo], out)
}

/// Max-pool with padding that never wins.
pub fn max_pool(x: &Nd, k: usize, stride: usize, pad: usize) -> Nd {
    let [n, c, h, w] = x.dims;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for bi in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..k {
                        for j in 0..k {
                            let iy = (oy * stride + i) as isize - pad as isize;
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                m = m.max(x.at(bi, ch, iy as usize, ix as usize));
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Nd::new([n, c, ho, wo], out)
}

pub fn relu(x: &Nd) -> Nd {
    x.map(|v| v.max(0.0))
}

pub fn mean_abs_diff(a: &Nd, b: &Nd) -> f64 {
    assert_eq!(a.dims, b.dims);
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64
}

/// BCE of one logit against a target, straight from the definition.
pub fn bce(logit: f64, target: f64) -> f64 {
    let p = 1.0 / (1.0 + (-logit).exp());
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

pub fn mean_bce(logits: &[f64], target: f64) -> f64 {
    logits.iter().map(|&l| bce(l, target)).sum::<f64>() / logits.len() as f64
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

/// Analytic gradient of `f` (built from a variable with the given data) via backprop.
pub fn autograd(data: &[f64], dims: &[usize], f: impl Fn(&Tensor) -> Tensor) -> Vec<f64> {
    let v = Var::from_vec(data.to_vec(), dims, &Device::Cpu).unwrap();
    let loss = f(v.as_tensor());
    let g = loss.backward().unwrap();
    values(g.get(v.as_tensor()).expect("input has a gradient"))
}
