//! Separable image resampling (half-pixel centres, no anti-aliasing).

use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    Area,
    Bilinear,
    Bicubic,
}

impl ResizeMode {
    pub const ALL: [ResizeMode; 3] = [ResizeMode::Area, ResizeMode::Bilinear, ResizeMode::Bicubic];
}

const CUBIC_A: f64 = -0.75;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Per output index, the contributing input indices and weights.
fn axis_taps(input: usize, output: usize, mode: ResizeMode) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| match mode {
            ResizeMode::Area => {
                let start = (o * input) / output;
                let end = ((o + 1) * input).div_ceil(output);
                let n = (end - start) as f64;
                (start..end).map(|i| (i, 1.0 / n)).collect()
            }
            ResizeMode::Bilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                let t = src - i0 as f64;
                vec![(i0, 1.0 - t), (i1, t)]
            }
            ResizeMode::Bicubic => {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let base = src.floor();
                let t = src - base;
                (-1..=2)
                    .map(|k| {
                        let idx = (base as isize + k).clamp(0, input as isize - 1) as usize;
                        (idx, cubic(t - k as f64))
                    })
                    .collect()
            }
        })
        .collect()
}

/// Resizes to exactly `height × width`. Values are not clipped.
pub fn resize(img: &ImageTensor, height: usize, width: usize, mode: ResizeMode) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("cannot resize to {height}x{width}")));
    }
    let (ch, h, w) = img.dims();
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let xt = axis_taps(w, width, mode);
    let yt = axis_taps(h, height, mode);
    let mut out = Vec::with_capacity(ch * height * width);
    let mut tmp = vec![0.0f64; h * width];
    for c in 0..ch {
        let src = img.plane(c);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, taps) in xt.iter().enumerate() {
                tmp[y * width + x] = taps.iter().map(|&(i, wt)| wt * row[i] as f64).sum();
            }
        }
        for taps in &yt {
            for x in 0..width {
                let v: f64 = taps.iter().map(|&(i, wt)| wt * tmp[i * width + x]).sum();
                out.push(v as f32);
            }
        }
    }
    ImageTensor::new(ch, height, width, out)
}
