use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use super::Real;

struct LeakyRelu {
    slope: f64,
}

fn slice<'a, T: Real>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    let data = T::cpu_storage_as_slice(s)?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("expected a contiguous tensor"),
    }
}

impl CustomOp1 for LeakyRelu {
    fn name(&self) -> &'static str {
        "blindsr-leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: Real>(xs: &[T], slope: T) -> Vec<T> {
            xs.iter()
                .map(|&v| if v >= T::zero() { v } else { v * slope })
                .collect()
        }
        let out = match s {
            CpuStorage::F32(_) => CpuStorage::F32(run(slice::<f32>(s, l)?, self.slope as f32)),
            CpuStorage::F64(_) => CpuStorage::F64(run(slice::<f64>(s, l)?, self.slope)),
            _ => candle_core::bail!("leaky_relu supports f32 or f64"),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let arg = arg.contiguous()?;
        let grad = grad.contiguous()?;
        Ok(Some(arg.apply_op2_no_bwd(&grad, &LeakyReluGrad { slope: self.slope })?))
    }
}

struct LeakyReluGrad {
    slope: f64,
}

impl candle_core::CustomOp2 for LeakyReluGrad {
    fn name(&self) -> &'static str {
        "blindsr-leaky-relu-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: Real>(xs: &[T], gs: &[T], slope: T) -> Vec<T> {
            xs.iter()
                .zip(gs)
                .map(|(&x, &g)| if x >= T::zero() { g } else { g * slope })
                .collect()
        }
        let out = match s1 {
            CpuStorage::F32(_) => CpuStorage::F32(run(
                slice::<f32>(s1, l1)?,
                slice::<f32>(s2, l2)?,
                self.slope as f32,
            )),
            CpuStorage::F64(_) => CpuStorage::F64(run(
                slice::<f64>(s1, l1)?,
                slice::<f64>(s2, l2)?,
                self.slope,
            )),
            _ => candle_core::bail!("leaky_relu supports f32 or f64"),
        };
        Ok((out, l1.shape().clone()))
    }
}

struct Sigmoid;

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl CustomOp1 for Sigmoid {
    fn name(&self) -> &'static str {
        "blindsr-sigmoid"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: Real>(xs: &[T]) -> Vec<T> {
            xs.iter().map(|&v| T::from_f64(stable_sigmoid(v.to_f64()))).collect()
        }
        let out = match s {
            CpuStorage::F32(_) => CpuStorage::F32(run(slice::<f32>(s, l)?)),
            CpuStorage::F64(_) => CpuStorage::F64(run(slice::<f64>(s, l)?)),
            _ => candle_core::bail!("sigmoid supports f32 or f64"),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let slope = (res * res.affine(-1.0, 1.0)?)?;
        Ok(Some(grad.mul(&slope)?))
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(Sigmoid)
}

struct Softplus;

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl CustomOp1 for Softplus {
    fn name(&self) -> &'static str {
        "blindsr-softplus"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: Real>(xs: &[T]) -> Vec<T> {
            xs.iter().map(|&v| T::from_f64(stable_softplus(v.to_f64()))).collect()
        }
        let out = match s {
            CpuStorage::F32(_) => CpuStorage::F32(run(slice::<f32>(s, l)?)),
            CpuStorage::F64(_) => CpuStorage::F64(run(slice::<f64>(s, l)?)),
            _ => candle_core::bail!("softplus supports f32 or f64"),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.mul(&sigmoid(&arg.detach())?)?))
    }
}

/// `ln(1 + eˣ)` without overflow; its derivative is the logistic function.
pub fn softplus(x: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(Softplus)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(LeakyRelu { slope })
}

#[derive(Clone, Copy)]
struct MaxPool {
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl MaxPool {
    fn out_dims(&self, dims: &[usize]) -> candle_core::Result<(usize, usize, usize, usize, usize, usize)> {
        let (n, c, h, w) = match dims {
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => candle_core::bail!("max_pool2d expects a 4-d tensor"),
        };
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            candle_core::bail!("max_pool2d window larger than input");
        }
        let ho = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        Ok((n, c, h, w, ho, wo))
    }

    /// Index of the winning input element for every output element; padding never wins.
    fn argmax<T: Real>(&self, xs: &[T], dims: &[usize]) -> candle_core::Result<Vec<usize>> {
        let (n, c, h, w, ho, wo) = self.out_dims(dims)?;
        let mut idx = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best: Option<(usize, T)> = None;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = base + iy as usize * w + ix as usize;
                            let v = xs[at];
                            if best.is_none_or(|(_, b)| v > b) {
                                best = Some((at, v));
                            }
                        }
                    }
                    match best {
                        Some((at, _)) => idx.push(at),
                        None => candle_core::bail!("max_pool2d window covers only padding"),
                    }
                }
            }
        }
        Ok(idx)
    }
}

impl CustomOp1 for MaxPool {
    fn name(&self) -> &'static str {
        "blindsr-max-pool2d"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, _, _, ho, wo) = self.out_dims(l.dims())?;
        fn run<T: Real>(op: &MaxPool, xs: &[T], dims: &[usize]) -> candle_core::Result<Vec<T>> {
            Ok(op.argmax(xs, dims)?.into_iter().map(|i| xs[i]).collect())
        }
        let out = match s {
            CpuStorage::F32(_) => CpuStorage::F32(run(self, slice::<f32>(s, l)?, l.dims())?),
            CpuStorage::F64(_) => CpuStorage::F64(run(self, slice::<f64>(s, l)?, l.dims())?),
            _ => candle_core::bail!("max_pool2d supports f32 or f64"),
        };
        Ok((out, Shape::from((n, c, ho, wo))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let arg = arg.contiguous()?;
        let grad = grad.contiguous()?;
        Ok(Some(arg.apply_op2_no_bwd(&grad, &MaxPoolGrad(*self))?))
    }
}

struct MaxPoolGrad(MaxPool);

impl candle_core::CustomOp2 for MaxPoolGrad {
    fn name(&self) -> &'static str {
        "blindsr-max-pool2d-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: Real>(op: &MaxPool, xs: &[T], gs: &[T], dims: &[usize]) -> candle_core::Result<Vec<T>> {
            let mut out = vec![T::zero(); xs.len()];
            for (i, g) in op.argmax(xs, dims)?.into_iter().zip(gs) {
                out[i] += *g;
            }
            Ok(out)
        }
        let out = match s1 {
            CpuStorage::F32(_) => CpuStorage::F32(run(
                &self.0,
                slice::<f32>(s1, l1)?,
                slice::<f32>(s2, l2)?,
                l1.dims(),
            )?),
            CpuStorage::F64(_) => CpuStorage::F64(run(
                &self.0,
                slice::<f64>(s1, l1)?,
                slice::<f64>(s2, l2)?,
                l1.dims(),
            )?),
            _ => candle_core::bail!("max_pool2d supports f32 or f64"),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// Nearest-neighbour ×2 upsampling of a (N, C, H, W) tensor.
pub fn upsample_nearest2x(x: &Tensor) -> candle_core::Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((n, c, 2 * h, 2 * w))
}

/// Max pooling with square window, stride and implicit negative-infinity padding.
pub fn max_pool2d(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> candle_core::Result<Tensor> {
    if kernel == 0 || stride == 0 || pad >= kernel {
        candle_core::bail!("invalid max_pool2d geometry k={kernel} s={stride} p={pad}");
    }
    x.contiguous()?.apply_op1(MaxPool { kernel, stride, pad })
}

/// Rearranges (N, C·r², h, w) into (N, C, h·r, w·r).
///
/// Input channel `c·r² + i·r + j` lands at output pixel `(y·r + i, x·r + j)` of channel `c`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> crate::Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(crate::Error::shape(format!(
            "pixel_shuffle: {c} channels not divisible by r^2 = {}",
            r * r
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let oc = c / (r * r);
    let y = x
        .reshape((n * oc, r, r, h, w))?
        .permute((0, 3, 1, 4, 2))?
        .reshape((n, oc, h * r, w * r))?;
    Ok(y)
}
