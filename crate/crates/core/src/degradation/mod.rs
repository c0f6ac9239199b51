//! Synthetic LR generation: three degradation levels (two single-pass, one two-pass),
//! each pass being blur → resize → noise → JPEG, ending at a quarter of the HR size.

mod jpeg;
mod kernel;
mod noise;
mod recipe;
mod resize;
mod space;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use jpeg::jpeg_compress;
pub use kernel::{apply_blur, make_gaussian_kernel, make_sinc_kernel, BlurKernel, KernelKind};
pub use noise::{add_noise, apply_gaussian_noise, apply_poisson_noise, sample_noise_stage};
pub use recipe::{DegradationRecipe, NoiseKind, Stage};
pub use resize::{resize, ResizeMode};
pub use space::{DegradationSpace, LevelParams, StageParams};

use space::{sample_bernoulli, sample_categorical, sample_uniform};

use crate::image::ImageTensor;
use crate::{Error, Result};

pub const SCALE: usize = 4;

pub fn sample_level<R: Rng + ?Sized>(space: &DegradationSpace, rng: &mut R) -> usize {
    sample_categorical(&space.level_probs, rng)
}

fn scaled(n: usize, s: f64) -> usize {
    ((n as f64 * s).round() as usize).max(1)
}

/// Samples a full recipe for an `hr_height × hr_width` input from a fresh RNG seeded with `seed`.
pub fn sample_recipe(space: &DegradationSpace, hr_height: usize, hr_width: usize, seed: u64) -> Result<DegradationRecipe> {
    check_hr_dims(hr_height, hr_width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let level_index = sample_level(space, &mut rng);
    let level = &space.levels[level_index];
    let (lr_h, lr_w) = (hr_height / SCALE, hr_width / SCALE);
    let mut cur = (hr_height, hr_width);
    let mut stages = Vec::new();

    for pass in 1..=level.order {
        let params = if pass == 1 {
            &level.first
        } else {
            level
                .second
                .as_ref()
                .ok_or_else(|| Error::config("degradation.levels", "second-order level without second-pass ranges"))?
        };
        let last = pass == level.order;

        let skip_blur = pass == 2 && sample_bernoulli(level.second_stage_blur_skip_prob, &mut rng);
        if !skip_blur {
            let iso = sample_categorical(&params.iso_aniso_probs, &mut rng) == 0;
            let sigma_x = sample_uniform(params.blur_sigma_range, &mut rng);
            let (kind, sigma_y, angle) = if iso {
                (KernelKind::IsoGaussian, sigma_x, 0.0)
            } else {
                let sy = sample_uniform(params.blur_sigma_range, &mut rng);
                let a = sample_uniform([0.0, std::f64::consts::PI], &mut rng);
                (KernelKind::AnisoGaussian, sy, a)
            };
            stages.push(Stage::Blur {
                pass,
                kind,
                sigma_x,
                sigma_y,
                angle,
                size: space.kernel_size,
            });
        }

        let mode = ResizeMode::ALL[sample_categorical(&params.resize_mode_probs, &mut rng)];
        let scale = sample_uniform(params.resize_scale_range, &mut rng);
        let base = if last { (lr_h, lr_w) } else { cur };
        cur = (scaled(base.0, scale), scaled(base.1, scale));
        stages.push(Stage::Resize {
            pass,
            mode,
            scale,
            height: cur.0,
            width: cur.1,
        });

        stages.push(noise::sample_noise_stage(params, pass, &mut rng));

        if last {
            stages.push(Stage::FinalResize {
                height: lr_h,
                width: lr_w,
            });
            if sample_bernoulli(level.sinc_prob, &mut rng) {
                stages.push(Stage::Sinc {
                    cutoff: sample_uniform(level.sinc_cutoff_range, &mut rng),
                    size: space.kernel_size,
                });
            }
        }

        let [qmin, qmax] = params.jpeg_quality_range;
        stages.push(Stage::Jpeg {
            pass,
            quality: rng.random_range(qmin..=qmax),
        });
    }

    Ok(DegradationRecipe {
        level_index,
        seed,
        hr_height,
        hr_width,
        stages,
    })
}

fn check_hr_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % SCALE != 0 || w % SCALE != 0 {
        return Err(Error::shape(format!("HR size {h}x{w} is not a positive multiple of {SCALE}")));
    }
    Ok(())
}

/// Degrades `hr` to a quarter-size LR image, returning the recipe that reproduces it.
pub fn degrade<R: Rng + ?Sized>(
    hr: &ImageTensor,
    space: &DegradationSpace,
    rng: &mut R,
) -> Result<(ImageTensor, DegradationRecipe)> {
    check_hr_dims(hr.height(), hr.width())?;
    let seed = rng.random::<u64>();
    let recipe = sample_recipe(space, hr.height(), hr.width(), seed)?;
    let lr = recipe.replay(hr)?;
    Ok((lr, recipe))
}

pub fn replay(hr: &ImageTensor, recipe: &DegradationRecipe) -> Result<ImageTensor> {
    recipe.replay(hr)
}
