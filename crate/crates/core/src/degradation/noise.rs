use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::recipe::{NoiseKind, Stage};
use super::space::{sample_categorical, sample_uniform, StageParams};
use crate::image::ImageTensor;
use crate::Result;

/// Draws noise-stage parameters from `params` (the noise field itself is
/// regenerated from the recorded seed).
pub fn sample_noise_stage<R: Rng + ?Sized>(params: &StageParams, pass: u8, rng: &mut R) -> Stage {
    let kind = if sample_categorical(&params.noise_type_probs, rng) == 0 {
        NoiseKind::Gaussian
    } else {
        NoiseKind::Poisson
    };
    let strength = match kind {
        NoiseKind::Gaussian => sample_uniform(params.gaussian_noise_sigma_range, rng),
        NoiseKind::Poisson => sample_uniform(params.poisson_noise_scale_range, rng),
    };
    let seed = rng.random::<u64>();
    Stage::Noise {
        pass,
        kind,
        strength,
        seed,
    }
}

/// Additive Gaussian noise; `sigma_255` is on the 0..255 scale. Output is clipped to [0, 1].
pub fn apply_gaussian_noise(img: &ImageTensor, sigma_255: f64, seed: u64) -> ImageTensor {
    let mut out = img.clone();
    if sigma_255 == 0.0 {
        out.clamp01();
        return out;
    }
    let sigma = sigma_255 / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = (*v as f64 + sigma * z).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Shot noise: the image is treated as photon counts at a bit depth derived from its
/// number of distinct 8-bit levels, and the resulting deviation is multiplied by `scale`.
pub fn apply_poisson_noise(img: &ImageTensor, scale: f64, seed: u64) -> ImageTensor {
    let mut out = img.clone();
    out.clamp01();
    if scale == 0.0 {
        return out;
    }
    let mut seen = [false; 256];
    for &v in out.data() {
        seen[(v * 255.0).round() as usize] = true;
    }
    let levels = seen.iter().filter(|s| **s).count().max(1);
    let vals = (levels as f64).log2().ceil().exp2();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.data_mut() {
        let x = *v as f64;
        let lambda = x * vals;
        let count = if lambda > 0.0 {
            Poisson::new(lambda).map(|p| p.sample(&mut rng)).unwrap_or(lambda)
        } else {
            0.0
        };
        let noisy = x + (count / vals - x) * scale;
        *v = noisy.clamp(0.0, 1.0) as f32;
    }
    out
}

/// Samples a noise stage from `params` and applies it.
pub fn add_noise<R: Rng + ?Sized>(
    img: &ImageTensor,
    params: &StageParams,
    rng: &mut R,
) -> Result<(ImageTensor, Stage)> {
    let stage = sample_noise_stage(params, 1, rng);
    let out = stage.apply(img)?;
    Ok((out, stage))
}
