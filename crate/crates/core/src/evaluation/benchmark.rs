use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{median, Environment};
use crate::degradation::SCALE;
use crate::generator::Generator;
use crate::nn::no_grad;
use crate::{Error, Result};

/// One rung: input and target frame heights; widths follow a 16:9 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderStep {
    pub input: usize,
    pub target: usize,
}

impl LadderStep {
    pub fn new(input: usize, target: usize) -> Self {
        Self { input, target }
    }

    /// (height, width) of the input frame.
    pub fn input_dims(&self) -> (usize, usize) {
        (self.input, (self.input as f64 * 16.0 / 9.0).round() as usize)
    }

    pub fn target_dims(&self) -> (usize, usize) {
        let (h, w) = self.input_dims();
        (h * SCALE, w * SCALE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkLadder {
    pub steps: Vec<LadderStep>,
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for BenchmarkLadder {
    fn default() -> Self {
        Self::desk()
    }
}

impl BenchmarkLadder {
    fn from_inputs(inputs: &[usize]) -> Self {
        Self {
            steps: inputs.iter().map(|&h| LadderStep::new(h, h * SCALE)).collect(),
            repeats: 20,
            warmup: 3,
        }
    }

    /// Quarter-scale inputs: 90p, 120p, 135p, 180p and 270p.
    pub fn desk() -> Self {
        Self::from_inputs(&[90, 120, 135, 180, 270])
    }

    /// 360p, 480p, 540p, 720p and 1080p inputs.
    pub fn full() -> Self {
        Self::from_inputs(&[360, 480, 540, 720, 1080])
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::config(format!("{path}.steps"), "ladder has no steps"));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.input == 0 || s.target != s.input * SCALE {
                return Err(Error::config(
                    format!("{path}.steps[{i}]"),
                    format!("target {} is not {SCALE}x the input {}", s.target, s.input),
                ));
            }
        }
        if self.repeats == 0 {
            return Err(Error::config(format!("{path}.repeats"), "must be positive"));
        }
        if self.warmup < 3 {
            return Err(Error::config(format!("{path}.warmup"), format!("{} is below the minimum of 3", self.warmup)));
        }
        Ok(())
    }
}

/// Wall-clock milliseconds of `repeats` single-image forwards after `warmup` untimed ones.
pub fn time_forward(gen: &Generator, input: &Tensor, warmup: usize, repeats: usize) -> Result<Vec<f64>> {
    no_grad(|| {
        for _ in 0..warmup {
            gen.infer(input)?;
        }
        (0..repeats)
            .map(|_| {
                let start = Instant::now();
                gen.infer(input)?;
                Ok(start.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    })
}

/// Random (1, 3, h, w) frame.
pub fn random_frame(h: usize, w: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..3 * h * w).map(|_| rng.random()).collect();
    Ok(Tensor::from_vec(data, (1, 3, h, w), &Device::Cpu)?.to_dtype(DType::F32)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ms: f64,
    pub median_fps: f64,
    pub raw_ms: Vec<f64>,
}

impl Timing {
    pub fn from_raw(raw_ms: Vec<f64>) -> Self {
        let m = median(&raw_ms);
        Self {
            median_ms: m,
            median_fps: 1e3 / m,
            raw_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: LadderStep,
    pub input_dims: (usize, usize),
    pub target_dims: (usize, usize),
    pub star: Option<Timing>,
    pub lite: Option<Timing>,
    /// Lite FPS over star FPS.
    pub ratio: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub warmup: usize,
    pub repeats: usize,
    pub steps: Vec<StepReport>,
    pub environment: Environment,
}

impl BenchmarkReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn guarded(gen: &Generator, input: &Tensor, warmup: usize, repeats: usize) -> std::result::Result<Timing, String> {
    match catch_unwind(AssertUnwindSafe(|| time_forward(gen, input, warmup, repeats))) {
        Ok(Ok(raw)) => Ok(Timing::from_raw(raw)),
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err("forward pass panicked (likely out of memory)".into()),
    }
}

/// Times both generators on every ladder step in sequence. A failing step is
/// recorded as skipped and the run moves on.
pub fn benchmark(star: &Generator, lite: &Generator, ladder: &BenchmarkLadder) -> Result<BenchmarkReport> {
    ladder.validate("benchmark")?;
    let mut steps = Vec::with_capacity(ladder.steps.len());
    for (i, step) in ladder.steps.iter().enumerate() {
        let (h, w) = step.input_dims();
        let mut report = StepReport {
            step: *step,
            input_dims: (h, w),
            target_dims: step.target_dims(),
            star: None,
            lite: None,
            ratio: None,
            skipped: None,
        };
        let timed = random_frame(h, w, i as u64).map_err(|e| e.to_string()).and_then(|x| {
            let s = guarded(star, &x, ladder.warmup, ladder.repeats)?;
            let l = guarded(lite, &x, ladder.warmup, ladder.repeats)?;
            Ok((s, l))
        });
        match timed {
            Ok((s, l)) => {
                report.ratio = Some(l.median_fps / s.median_fps);
                report.star = Some(s);
                report.lite = Some(l);
            }
            Err(reason) => report.skipped = Some(reason),
        }
        steps.push(report);
    }
    Ok(BenchmarkReport {
        warmup: ladder.warmup,
        repeats: ladder.repeats,
        steps,
        environment: Environment::capture(),
    })
}
