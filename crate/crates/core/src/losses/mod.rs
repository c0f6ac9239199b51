//! Adversarial, content and dual perceptual losses, and their weighted totals.

mod perceptual;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use perceptual::{
    perceptual_loss, Backbone, ExtractorPreset, FeatureExtractor, PerceptualConfig, PerceptualPair, ResNetSpec,
    VggSpec, IMAGENET_MEAN, IMAGENET_STD,
};

use crate::nn::softplus;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the pixel L1 term in the generator total.
    pub lambda_content: f64,
    /// Weight of the adversarial term in the generator total.
    pub eta_adversarial: f64,
    /// Weight of the dual perceptual term in the generator total.
    pub gamma_perceptual: f64,
    /// Full-resolution discriminator weight.
    pub lambda1: f64,
    /// Half-resolution discriminator weight.
    pub lambda2: f64,
    pub mu: f64,
    pub c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_content: 1.0,
            eta_adversarial: 0.1,
            gamma_perceptual: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            mu: 1.0,
            c: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, path: &str) -> Result<()> {
        let fields = [
            ("lambda_content", self.lambda_content),
            ("eta_adversarial", self.eta_adversarial),
            ("gamma_perceptual", self.gamma_perceptual),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("mu", self.mu),
            ("c", self.c),
        ];
        for (key, v) in fields {
            if !v.is_finite() {
                return Err(Error::config(format!("{path}.{key}"), format!("{v} is not finite")));
            }
        }
        if self.mu == 0.0 {
            return Err(Error::config(format!("{path}.mu"), "must be nonzero"));
        }
        if self.c <= 0.0 {
            return Err(Error::config(format!("{path}.c"), format!("{} must be positive", self.c)));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean binary cross-entropy of `σ(logits)` against a constant target,
/// computed as `softplus(x) − x·t`.
pub fn bce_with_logits(logits: &Tensor, target: f64) -> Result<Tensor> {
    let per_pixel = (softplus(logits)? - logits.affine(target, 0.0)?)?;
    Ok(per_pixel.mean_all()?)
}

/// Per-pixel BCE of one discriminator: real pixels against 1, fake pixels against 0.
pub fn discriminator_loss(logits_real: &Tensor, logits_fake: &Tensor) -> Result<Tensor> {
    same_shape(logits_real, logits_fake, "discriminator logit maps differ")?;
    Ok((bce_with_logits(logits_real, 1.0)? + bce_with_logits(logits_fake, 0.0)?)?)
}

/// `λ1·loss_normal + λ2·loss_sampled`.
pub fn total_discriminator_loss(loss_normal: &Tensor, loss_sampled: &Tensor, w: &LossWeights) -> Result<Tensor> {
    Ok((loss_normal.affine(w.lambda1, 0.0)? + loss_sampled.affine(w.lambda2, 0.0)?)?)
}

/// Non-saturating generator loss: fake logits of both scales against target 1.
pub fn generator_adversarial_loss(
    logits_fake_normal: &Tensor,
    logits_fake_sampled: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let normal = bce_with_logits(logits_fake_normal, 1.0)?;
    let sampled = bce_with_logits(logits_fake_sampled, 1.0)?;
    total_discriminator_loss(&normal, &sampled, w)
}

/// Mean absolute pixel difference.
pub fn content_loss(sr: &Tensor, hr: &Tensor) -> Result<Tensor> {
    same_shape(sr, hr, "content loss inputs differ")?;
    Ok((sr - hr)?.abs()?.mean_all()?)
}

/// `ζ = (l_vgg + c) / (l_res + c)`.
pub fn zeta(l_vgg: f64, l_res: f64, c: f64) -> f64 {
    (l_vgg + c) / (l_res + c)
}

/// `l_vgg + ζ/μ · l_res`, with ζ evaluated on detached values so gradients
/// reach only the two raw perceptual terms.
pub fn dual_perceptual_loss(l_vgg: &Tensor, l_res: &Tensor, w: &LossWeights) -> Result<Tensor> {
    let z = zeta(
        l_vgg.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?,
        l_res.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?,
        w.c,
    );
    Ok((l_vgg + l_res.affine(z / w.mu, 0.0)?)?)
}

/// `λ·content + η·adversarial + γ·perceptual`.
pub fn total_generator_loss(
    content: &Tensor,
    adversarial: &Tensor,
    dual_perceptual: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let sum = (content.affine(w.lambda_content, 0.0)? + adversarial.affine(w.eta_adversarial, 0.0)?)?;
    Ok((sum + dual_perceptual.affine(w.gamma_perceptual, 0.0)?)?)
}
