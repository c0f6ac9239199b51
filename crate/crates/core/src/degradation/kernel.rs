use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    IsoGaussian,
    AnisoGaussian,
    Sinc,
    Custom,
}

/// Square, odd-sided, unit-sum convolution kernel (row-major weights).
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
    kind: KernelKind,
}

impl BlurKernel {
    /// Wraps explicit weights. Any odd side length (including 1) is accepted; the
    /// weights are normalised to unit sum.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || weights.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel must be odd-sized and square, got side {size} with {} weights",
                weights.len()
            )));
        }
        Self::normalized(size, weights, KernelKind::Custom)
    }

    fn normalized(size: usize, mut weights: Vec<f64>, kind: KernelKind) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum.abs() < 1e-12 {
            return Err(Error::invalid(format!("kernel weights sum to {sum}")));
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self { size, weights, kind })
    }

    pub fn identity(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[size * size / 2] = 1.0;
        }
        Self::from_weights(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn transpose(&self) -> Self {
        let s = self.size;
        let weights = (0..s * s).map(|i| self.at(i % s, i / s)).collect();
        Self {
            size: s,
            weights,
            kind: self.kind,
        }
    }

    /// Rotates by 90° counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let s = self.size;
        let weights = (0..s * s)
            .map(|i| {
                let (r, c) = (i / s, i % s);
                self.at(c, s - 1 - r)
            })
            .collect();
        Self {
            size: s,
            weights,
            kind: self.kind,
        }
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd and >= 3, got {size}")));
    }
    Ok(())
}

/// Normalised bivariate Gaussian with standard deviations `sigma_x` (along columns)
/// and `sigma_y` (along rows) before rotation by `angle` radians.
pub fn make_gaussian_kernel(sigma_x: f64, sigma_y: f64, angle: f64, size: usize) -> Result<BlurKernel> {
    check_size(size)?;
    if !(sigma_x > 0.0 && sigma_y > 0.0) || !sigma_x.is_finite() || !sigma_y.is_finite() {
        return Err(Error::invalid(format!(
            "gaussian sigmas must be positive, got ({sigma_x}, {sigma_y})"
        )));
    }
    let (sin, cos) = angle.sin_cos();
    // Σ = R diag(σx², σy²) Rᵀ, inverted in closed form.
    let (vx, vy) = (sigma_x * sigma_x, sigma_y * sigma_y);
    let a = cos * cos * vx + sin * sin * vy;
    let b = cos * sin * (vx - vy);
    let d = sin * sin * vx + cos * cos * vy;
    let det = a * d - b * b;
    let (ia, ib, id) = (d / det, -b / det, a / det);
    let half = (size / 2) as f64;
    let mut weights = Vec::with_capacity(size * size);
    for r in 0..size {
        let y = r as f64 - half;
        for c in 0..size {
            let x = c as f64 - half;
            let q = ia * x * x + 2.0 * ib * x * y + id * y * y;
            weights.push((-0.5 * q).exp());
        }
    }
    let kind = if sigma_x == sigma_y {
        KernelKind::IsoGaussian
    } else {
        KernelKind::AnisoGaussian
    };
    BlurKernel::normalized(size, weights, kind)
}

/// Circularly symmetric low-pass (jinc) kernel with the given cutoff frequency.
pub fn make_sinc_kernel(cutoff: f64, size: usize) -> Result<BlurKernel> {
    check_size(size)?;
    if !(cutoff > 0.0 && cutoff <= std::f64::consts::PI) {
        return Err(Error::invalid(format!("sinc cutoff {cutoff} outside (0, pi]")));
    }
    let half = (size / 2) as f64;
    let mut weights = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let rad = ((r as f64 - half).powi(2) + (c as f64 - half).powi(2)).sqrt();
            let v = if rad == 0.0 {
                cutoff * cutoff / (4.0 * std::f64::consts::PI)
            } else {
                cutoff * libm::j1(cutoff * rad) / (2.0 * std::f64::consts::PI * rad)
            };
            weights.push(v);
        }
    }
    BlurKernel::normalized(size, weights, KernelKind::Sinc)
}

/// Maps any integer index into `[0, n)` by mirroring about the edge samples
/// (the edge itself is not repeated), repeating the mirror as often as needed.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Correlates every channel with `kernel` using reflective borders.
pub fn apply_blur(img: &ImageTensor, kernel: &BlurKernel) -> ImageTensor {
    let (ch, h, w) = img.dims();
    let s = kernel.size();
    let half = (s / 2) as isize;
    let row_idx: Vec<Vec<usize>> = (0..h)
        .map(|y| (0..s).map(|k| reflect_index(y as isize + k as isize - half, h)).collect())
        .collect();
    let col_idx: Vec<Vec<usize>> = (0..w)
        .map(|x| (0..s).map(|k| reflect_index(x as isize + k as isize - half, w)).collect())
        .collect();
    let mut out = ImageTensor::filled(ch, h, w, 0.0);
    for c in 0..ch {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (ki, &sy) in row_idx[y].iter().enumerate() {
                    let row = &src[sy * w..(sy + 1) * w];
                    let kw = &kernel.weights()[ki * s..(ki + 1) * s];
                    for (k, &sx) in col_idx[x].iter().enumerate() {
                        acc += kw[k] * row[sx] as f64;
                    }
                }
                dst[y * w + x] = acc as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &BlurKernel, b: &BlurKernel) -> f64 {
        a.weights()
            .iter()
            .zip(b.weights())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn isotropic_kernel_is_rotation_invariant() {
        let k = make_gaussian_kernel(1.0, 1.0, 0.3, 21).unwrap();
        assert_eq!(k.kind(), KernelKind::IsoGaussian);
        assert!(max_abs_diff(&k, &k.transpose()) < 1e-9);
        assert!(max_abs_diff(&k, &k.rotate90()) < 1e-9);
    }

    #[test]
    fn kernels_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let size = 2 * rng.random_range(1..11) + 1;
            let g = make_gaussian_kernel(
                rng.random_range(0.1..4.0),
                rng.random_range(0.1..4.0),
                rng.random_range(-3.2..3.2),
                size,
            )
            .unwrap();
            assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let s = make_sinc_kernel(rng.random_range(0.9..std::f64::consts::PI), size).unwrap();
            assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn anisotropic_spread_follows_sigmas() {
        // Direct evaluation of the unrotated bivariate density exp(-x²/2σx² - y²/2σy²).
        let (sx, sy, size) = (2.0f64, 0.5f64, 21usize);
        let k = make_gaussian_kernel(sx, sy, 0.0, size).unwrap();
        let half = 10isize;
        let mut oracle = Vec::new();
        for r in -half..=half {
            for c in -half..=half {
                let (x, y) = (c as f64, r as f64);
                oracle.push((-(x * x) / (2.0 * sx * sx) - (y * y) / (2.0 * sy * sy)).exp());
            }
        }
        let total: f64 = oracle.iter().sum();
        for (a, b) in k.weights().iter().zip(&oracle) {
            assert!((a - b / total).abs() < 1e-12);
        }
        let variance = |vals: Vec<f64>| {
            let s: f64 = vals.iter().sum();
            vals.iter()
                .enumerate()
                .map(|(i, v)| v / s * (i as f64 - 10.0).powi(2))
                .sum::<f64>()
        };
        let row: Vec<f64> = (0..size).map(|c| k.at(10, c)).collect();
        let col: Vec<f64> = (0..size).map(|r| k.at(r, 10)).collect();
        assert!(variance(row) > variance(col));
    }

    #[test]
    fn sinc_kernel_symmetry_and_peak() {
        let k = make_sinc_kernel(std::f64::consts::PI, 21).unwrap();
        assert!(max_abs_diff(&k, &k.rotate90()) < 1e-9);
        // Independent jinc evaluation on the grid: cutoff·J1(cutoff·r)/(2πr), centre cutoff²/4π.
        let pi = std::f64::consts::PI;
        let raw = |r: f64| if r == 0.0 { pi * pi / (4.0 * pi) } else { pi * libm::j1(pi * r) / (2.0 * pi * r) };
        let center = raw(0.0);
        for r in 0..21 {
            for c in 0..21 {
                let d = (((r as f64) - 10.0).powi(2) + ((c as f64) - 10.0).powi(2)).sqrt();
                assert!(raw(d) <= center);
            }
        }
        let peak = k.weights().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(peak, k.at(10, 10));
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(make_gaussian_kernel(1.0, 1.0, 0.0, 20).is_err());
        assert!(make_gaussian_kernel(1.0, 1.0, 0.0, 1).is_err());
        assert!(make_gaussian_kernel(0.0, 1.0, 0.0, 21).is_err());
        assert!(make_gaussian_kernel(1.0, -1.0, 0.0, 21).is_err());
        assert!(make_sinc_kernel(0.0, 21).is_err());
        assert!(make_sinc_kernel(3.2, 21).is_err());
        assert!(make_sinc_kernel(1.0, 4).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let img = ImageTensor::filled(3, 9, 7, 0.37);
        let k = make_gaussian_kernel(1.7, 0.6, 0.4, 21).unwrap();
        let out = apply_blur(&img, &k);
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn identity_kernels_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = ImageTensor::from_fn(3, 6, 5, |_, _, _| rng.random::<f32>());
        assert_eq!(apply_blur(&img, &BlurKernel::identity(1).unwrap()), img);
        assert_eq!(apply_blur(&img, &BlurKernel::identity(3).unwrap()), img);
    }

    #[test]
    fn blur_matches_nested_loop_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ImageTensor::from_fn(1, 16, 16, |_, _, _| rng.random::<f32>());
        let weights: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let k = BlurKernel::from_weights(3, weights).unwrap();
        let out = apply_blur(&img, &k);
        // Explicit mirrored padding (reflect without edge repeat), then direct sum.
        let pad = |i: isize| -> usize {
            if i < 0 {
                (-i) as usize
            } else if i >= 16 {
                (2 * 15 - i) as usize
            } else {
                i as usize
            }
        };
        for y in 0..16isize {
            for x in 0..16isize {
                let mut acc = 0.0;
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        acc += k.at((dy + 1) as usize, (dx + 1) as usize)
                            * img.get(0, pad(y + dy), pad(x + dx)) as f64;
                    }
                }
                assert!((out.get(0, y as usize, x as usize) as f64 - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn reflect_handles_tiny_extents() {
        assert_eq!(reflect_index(-1, 4), 1);
        assert_eq!(reflect_index(4, 4), 2);
        assert_eq!(reflect_index(-7, 3), 1);
        assert_eq!(reflect_index(5, 1), 0);
        for i in -50..50 {
            assert!(reflect_index(i, 3) < 3);
        }
    }
}
