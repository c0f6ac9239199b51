use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Sampling ranges for one blur → resize → noise → JPEG pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageParams {
    pub blur_sigma_range: [f64; 2],
    /// `[isotropic, anisotropic]`
    pub iso_aniso_probs: [f64; 2],
    pub resize_scale_range: [f64; 2],
    /// `[area, bilinear, bicubic]`
    pub resize_mode_probs: [f64; 3],
    /// Standard deviation on the 0..255 scale.
    pub gaussian_noise_sigma_range: [f64; 2],
    pub poisson_noise_scale_range: [f64; 2],
    /// `[gaussian, poisson]`
    pub noise_type_probs: [f64; 2],
    pub jpeg_quality_range: [u8; 2],
}

/// One of the three degradation sub-spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelParams {
    /// 1 for a single pass, 2 for two passes.
    pub order: u8,
    pub first: StageParams,
    /// Ranges of the second pass; present exactly when `order == 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<StageParams>,
    #[serde(default)]
    pub second_stage_blur_skip_prob: f64,
    #[serde(default)]
    pub sinc_prob: f64,
    #[serde(default = "default_sinc_cutoff")]
    pub sinc_cutoff_range: [f64; 2],
}

fn default_sinc_cutoff() -> [f64; 2] {
    [std::f64::consts::PI / 3.0, std::f64::consts::PI]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSpace {
    pub level_probs: [f64; 3],
    pub kernel_size: usize,
    pub levels: Vec<LevelParams>,
}

const UNIFORM3: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

impl StageParams {
    /// Small first-order ranges.
    pub fn mild() -> Self {
        Self {
            blur_sigma_range: [0.2, 0.8],
            iso_aniso_probs: [0.65, 0.35],
            resize_scale_range: [0.85, 1.2],
            resize_mode_probs: UNIFORM3,
            gaussian_noise_sigma_range: [1.0, 10.0],
            poisson_noise_scale_range: [0.05, 1.0],
            noise_type_probs: [0.5, 0.5],
            jpeg_quality_range: [75, 95],
        }
    }

    /// Large first-order ranges.
    pub fn strong() -> Self {
        Self {
            blur_sigma_range: [0.2, 1.5],
            iso_aniso_probs: [0.65, 0.35],
            resize_scale_range: [0.7, 1.3],
            resize_mode_probs: UNIFORM3,
            gaussian_noise_sigma_range: [1.0, 20.0],
            poisson_noise_scale_range: [0.05, 2.0],
            noise_type_probs: [0.5, 0.5],
            jpeg_quality_range: [50, 95],
        }
    }

    /// The `strong` ranges with every magnitude halved: blur and noise bounds are
    /// divided by two and the resize scale's distance from 1 is halved. JPEG
    /// quality keeps the `strong` bounds.
    pub fn strong_halved() -> Self {
        let s = Self::strong();
        let half = |r: [f64; 2]| [r[0] / 2.0, r[1] / 2.0];
        Self {
            blur_sigma_range: half(s.blur_sigma_range),
            resize_scale_range: [
                1.0 - (1.0 - s.resize_scale_range[0]) / 2.0,
                1.0 + (s.resize_scale_range[1] - 1.0) / 2.0,
            ],
            gaussian_noise_sigma_range: half(s.gaussian_noise_sigma_range),
            poisson_noise_scale_range: half(s.poisson_noise_scale_range),
            ..s
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        check_probs(&format!("{path}.iso_aniso_probs"), &self.iso_aniso_probs)?;
        check_probs(&format!("{path}.resize_mode_probs"), &self.resize_mode_probs)?;
        check_probs(&format!("{path}.noise_type_probs"), &self.noise_type_probs)?;
        check_range(&format!("{path}.blur_sigma_range"), self.blur_sigma_range, |v| v > 0.0)?;
        check_range(&format!("{path}.resize_scale_range"), self.resize_scale_range, |v| v > 0.0)?;
        check_range(
            &format!("{path}.gaussian_noise_sigma_range"),
            self.gaussian_noise_sigma_range,
            |v| v >= 0.0,
        )?;
        check_range(
            &format!("{path}.poisson_noise_scale_range"),
            self.poisson_noise_scale_range,
            |v| v >= 0.0,
        )?;
        let q = self.jpeg_quality_range;
        if q[0] < 1 || q[1] > 100 || q[0] > q[1] {
            return Err(Error::config(
                format!("{path}.jpeg_quality_range"),
                format!("{q:?} must be an ordered sub-range of [1, 100]"),
            ));
        }
        Ok(())
    }

    /// True when every range of `self` lies inside the matching range of `other`.
    pub fn ranges_within(&self, other: &StageParams) -> bool {
        let inside = |a: [f64; 2], b: [f64; 2]| b[0] <= a[0] && a[1] <= b[1];
        inside(self.blur_sigma_range, other.blur_sigma_range)
            && inside(self.resize_scale_range, other.resize_scale_range)
            && inside(self.gaussian_noise_sigma_range, other.gaussian_noise_sigma_range)
            && inside(self.poisson_noise_scale_range, other.poisson_noise_scale_range)
            && other.jpeg_quality_range[0] <= self.jpeg_quality_range[0]
            && self.jpeg_quality_range[1] <= other.jpeg_quality_range[1]
    }
}

impl LevelParams {
    pub fn first_order(stage: StageParams) -> Self {
        Self {
            order: 1,
            first: stage,
            second: None,
            second_stage_blur_skip_prob: 0.0,
            sinc_prob: 0.0,
            sinc_cutoff_range: default_sinc_cutoff(),
        }
    }

    pub fn second_order(first: StageParams, second: StageParams) -> Self {
        Self {
            order: 2,
            first,
            second: Some(second),
            second_stage_blur_skip_prob: 0.2,
            sinc_prob: 0.8,
            sinc_cutoff_range: default_sinc_cutoff(),
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        self.first.validate(&format!("{path}.first"))?;
        match (self.order, &self.second) {
            (1, None) => {}
            (2, Some(second)) => second.validate(&format!("{path}.second"))?,
            (1, Some(_)) => {
                return Err(Error::config(
                    format!("{path}.second"),
                    "first-order levels take no second-pass ranges",
                ))
            }
            (2, None) => {
                return Err(Error::config(
                    format!("{path}.second"),
                    "second-order levels need second-pass ranges",
                ))
            }
            (o, _) => return Err(Error::config(format!("{path}.order"), format!("order {o} is not 1 or 2"))),
        }
        check_prob(&format!("{path}.second_stage_blur_skip_prob"), self.second_stage_blur_skip_prob)?;
        check_prob(&format!("{path}.sinc_prob"), self.sinc_prob)?;
        check_range(&format!("{path}.sinc_cutoff_range"), self.sinc_cutoff_range, |v| {
            v > 0.0 && v <= std::f64::consts::PI
        })
    }
}

impl Default for DegradationSpace {
    fn default() -> Self {
        Self {
            level_probs: [0.3, 0.3, 0.4],
            kernel_size: 21,
            levels: vec![
                LevelParams::first_order(StageParams::mild()),
                LevelParams::first_order(StageParams::strong()),
                LevelParams::second_order(StageParams::strong(), StageParams::strong_halved()),
            ],
        }
    }
}

impl DegradationSpace {
    pub fn validate(&self, path: &str) -> Result<()> {
        check_probs(&format!("{path}.level_probs"), &self.level_probs)?;
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::config(
                format!("{path}.kernel_size"),
                format!("{} must be odd and >= 3", self.kernel_size),
            ));
        }
        if self.levels.len() != 3 {
            return Err(Error::config(
                format!("{path}.levels"),
                format!("expected exactly 3 levels, found {}", self.levels.len()),
            ));
        }
        for (i, level) in self.levels.iter().enumerate() {
            let p = format!("{path}.levels[{i}]");
            level.validate(&p)?;
            let want = if i == 2 { 2 } else { 1 };
            if level.order != want {
                return Err(Error::config(
                    format!("{p}.order"),
                    format!("level {i} must have order {want}"),
                ));
            }
        }
        Ok(())
    }
}

fn check_prob(path: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(path, format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_probs(path: &str, probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::config(path, format!("{probs:?} has a negative or non-finite entry")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::config(path, format!("{probs:?} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_range(path: &str, r: [f64; 2], valid: impl Fn(f64) -> bool) -> Result<()> {
    if !(r[0] <= r[1]) || !valid(r[0]) || !valid(r[1]) {
        return Err(Error::config(path, format!("invalid range {r:?}")));
    }
    Ok(())
}

/// Index drawn from a validated probability vector.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum a hair under 1.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub(crate) fn sample_uniform<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    range[0] + u * (range[1] - range[0])
}

pub(crate) fn sample_bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}
