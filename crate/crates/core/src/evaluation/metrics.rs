use crate::{Error, ImageTensor, Result};

pub const PSNR_CAP_DB: f64 = 80.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_same(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("cannot compare images of dims {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Full-RGB PSNR in dB for values in [0, 1], capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP_DB))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every channel and every fully contained 11×11 Gaussian window
/// (σ = 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let (c, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa: Vec<f64> = a.plane(ch).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.plane(ch).iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &g);
        let mu_b = filter_valid(&pb, h, w, &g);
        let aa = filter_valid(&prod(&pa, &pa), h, w, &g);
        let bb = filter_valid(&prod(&pb, &pb), h, w, &g);
        let ab = filter_valid(&prod(&pa, &pb), h, w, &g);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
