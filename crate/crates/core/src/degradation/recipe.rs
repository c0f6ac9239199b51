use serde::{Deserialize, Serialize};

use super::jpeg::jpeg_compress;
use super::kernel::{apply_blur, make_gaussian_kernel, make_sinc_kernel, KernelKind};
use super::noise::{apply_gaussian_noise, apply_poisson_noise};
use super::resize::{resize, ResizeMode};
use crate::image::ImageTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Poisson,
}

/// One applied degradation step with every sampled parameter. `pass` is 1 or 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Blur {
        pass: u8,
        kind: KernelKind,
        sigma_x: f64,
        sigma_y: f64,
        angle: f64,
        size: usize,
    },
    Resize {
        pass: u8,
        mode: ResizeMode,
        scale: f64,
        height: usize,
        width: usize,
    },
    /// `strength` is σ on the 0..255 scale for Gaussian noise and the shot-noise scale for Poisson noise.
    Noise {
        pass: u8,
        kind: NoiseKind,
        strength: f64,
        seed: u64,
    },
    /// Bicubic resize to the exact LR size.
    FinalResize { height: usize, width: usize },
    Sinc { cutoff: f64, size: usize },
    Jpeg { pass: u8, quality: u8 },
}

impl Stage {
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        match *self {
            Stage::Blur {
                sigma_x,
                sigma_y,
                angle,
                size,
                ..
            } => Ok(apply_blur(img, &make_gaussian_kernel(sigma_x, sigma_y, angle, size)?)),
            Stage::Resize {
                mode, height, width, ..
            } => resize(img, height, width, mode),
            Stage::Noise {
                kind, strength, seed, ..
            } => Ok(match kind {
                NoiseKind::Gaussian => apply_gaussian_noise(img, strength, seed),
                NoiseKind::Poisson => apply_poisson_noise(img, strength, seed),
            }),
            Stage::FinalResize { height, width } => resize(img, height, width, ResizeMode::Bicubic),
            Stage::Sinc { cutoff, size } => Ok(apply_blur(img, &make_sinc_kernel(cutoff, size)?)),
            Stage::Jpeg { quality, .. } => {
                let mut clipped = img.clone();
                clipped.clamp01();
                jpeg_compress(&clipped, quality)
            }
        }
    }

    pub fn pass(&self) -> Option<u8> {
        match *self {
            Stage::Blur { pass, .. }
            | Stage::Resize { pass, .. }
            | Stage::Noise { pass, .. }
            | Stage::Jpeg { pass, .. } => Some(pass),
            Stage::FinalResize { .. } | Stage::Sinc { .. } => None,
        }
    }
}

/// Everything needed to reproduce one LR image from its HR source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub level_index: usize,
    pub seed: u64,
    pub hr_height: usize,
    pub hr_width: usize,
    pub stages: Vec<Stage>,
}

impl DegradationRecipe {
    /// Number of distinct blur/resize/noise/JPEG passes.
    pub fn passes(&self) -> u8 {
        self.stages.iter().filter_map(Stage::pass).max().unwrap_or(0)
    }

    pub fn blur_in_pass(&self, pass: u8) -> Option<&Stage> {
        self.stages
            .iter()
            .find(|s| matches!(s, Stage::Blur { pass: p, .. } if *p == pass))
    }

    pub fn has_sinc(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, Stage::Sinc { .. }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Applies the recorded stages to `hr`, reproducing the original LR output bit for bit.
    pub fn replay(&self, hr: &ImageTensor) -> Result<ImageTensor> {
        if (hr.height(), hr.width()) != (self.hr_height, self.hr_width) {
            return Err(Error::shape(format!(
                "recipe was sampled for a {}x{} image, got {}x{}",
                self.hr_height,
                self.hr_width,
                hr.height(),
                hr.width()
            )));
        }
        let mut img = hr.clone();
        for stage in &self.stages {
            img = stage.apply(&img)?;
        }
        img.clamp01();
        Ok(img)
    }
}
