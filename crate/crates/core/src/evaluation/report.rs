use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim};
use crate::degradation::{sample_recipe, DegradationSpace, SCALE};
use crate::generator::Generator;
use crate::image::list_images;
use crate::nn::no_grad;
use crate::{Error, ImageTensor, Result};

/// Where and when a report was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub hardware: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

impl Environment {
    pub fn capture() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|m| m.trim().to_string())
            })
            .unwrap_or_else(|| "unknown cpu".into());
        let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Self {
            hardware: format!(
                "{cpu}, {threads} threads, {}-{}",
                std::env::consts::OS,
                std::env::consts::ARCH
            ),
            timestamp: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub filename: String,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub inference_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MetricsRow {
    fn failed(filename: String, e: impl std::fmt::Display) -> Self {
        Self {
            filename,
            psnr_db: None,
            ssim: None,
            inference_ms: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl ColumnStats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { count: 0, mean: None, median: None };
        }
        Self {
            count: v.len(),
            mean: Some(v.iter().sum::<f64>() / v.len() as f64),
            median: Some(median(&v)),
        }
    }
}

/// Median of a non-empty slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr_db: ColumnStats,
    pub ssim: ColumnStats,
    pub inference_ms: ColumnStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregates: Aggregates,
    pub environment: Environment,
}

impl MetricsReport {
    pub fn new(rows: Vec<MetricsRow>) -> Self {
        let aggregates = Self::aggregate(&rows);
        Self {
            rows,
            aggregates,
            environment: Environment::capture(),
        }
    }

    pub fn aggregate(rows: &[MetricsRow]) -> Aggregates {
        Aggregates {
            psnr_db: ColumnStats::of(rows.iter().filter_map(|r| r.psnr_db)),
            ssim: ColumnStats::of(rows.iter().filter_map(|r| r.ssim)),
            inference_ms: ColumnStats::of(rows.iter().filter_map(|r| r.inference_ms)),
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    /// Columns: filename, psnr_db, ssim, inference_ms. Failed rows keep empty metric cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["filename", "psnr_db", "ssim", "inference_ms"]).map_err(csv_err)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.filename.clone(), cell(r.psnr_db), cell(r.ssim), cell(r.inference_ms)])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to `path`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let path = path.as_ref();
        let (csv, json) = (path.with_extension("csv"), path.with_extension("json"));
        self.write_csv(&csv)?;
        self.write_json(&json)?;
        Ok((csv, json))
    }
}

/// What to score.
#[derive(Debug, Clone, Copy)]
pub enum EvalSource<'a> {
    /// Upscale every LR image; score against same-stem HR images when an HR dir is given.
    Upscale {
        generator: &'a Generator,
        lr_dir: &'a Path,
        hr_dir: Option<&'a Path>,
    },
    /// Degrade each HR image with a per-image seeded recipe, upscale, score against the HR.
    Synthesize {
        generator: &'a Generator,
        hr_dir: &'a Path,
        space: &'a DegradationSpace,
        seed: u64,
    },
    /// Score ready-made SR images against same-stem HR images.
    Precomputed { sr_dir: &'a Path, hr_dir: &'a Path },
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn index_by_stem(dir: &Path) -> Result<HashMap<String, PathBuf>> {
    Ok(list_images(dir)?.into_iter().map(|p| (stem(&p), p)).collect())
}

fn upscale(gen: &Generator, lr: &ImageTensor) -> Result<(ImageTensor, f64)> {
    let x = ImageTensor::stack(std::slice::from_ref(lr))?;
    let start = Instant::now();
    let y = no_grad(|| gen.infer(&x))?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut sr = ImageTensor::unstack(&y)?.remove(0);
    sr.clamp01();
    Ok((sr, ms))
}

fn score(filename: String, sr: &ImageTensor, hr: Option<&ImageTensor>, ms: Option<f64>) -> MetricsRow {
    let metrics = hr.map(|hr| Ok::<_, Error>((psnr(sr, hr)?, ssim(sr, hr)?))).transpose();
    match metrics {
        Ok(m) => MetricsRow {
            filename,
            psnr_db: m.map(|v| v.0),
            ssim: m.map(|v| v.1),
            inference_ms: ms,
            error: None,
        },
        Err(e) => MetricsRow {
            inference_ms: ms,
            ..MetricsRow::failed(filename, e)
        },
    }
}

/// Scores a directory of images. Unreadable or mismatched images become error rows;
/// an empty input directory is an error. SR outputs are saved as PNG under `sr_out` when given.
pub fn evaluate_dataset(source: EvalSource<'_>, sr_out: Option<&Path>) -> Result<MetricsReport> {
    let inputs = match source {
        EvalSource::Upscale { lr_dir, .. } => list_images(lr_dir)?,
        EvalSource::Synthesize { hr_dir, .. } => list_images(hr_dir)?,
        EvalSource::Precomputed { sr_dir, .. } => list_images(sr_dir)?,
    };
    if inputs.is_empty() {
        return Err(Error::Dataset("no images to evaluate".into()));
    }
    let hr_index = match source {
        EvalSource::Upscale { hr_dir: Some(d), .. } | EvalSource::Precomputed { hr_dir: d, .. } => {
            Some(index_by_stem(d)?)
        }
        _ => None,
    };
    if let Some(dir) = sr_out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for (i, path) in inputs.iter().enumerate() {
        let name = file_name(path);
        let row = (|| -> Result<(MetricsRow, Option<ImageTensor>)> {
            let hr = match &hr_index {
                Some(idx) => Some(
                    idx.get(&stem(path))
                        .ok_or_else(|| Error::Dataset(format!("no HR image with stem `{}`", stem(path))))
                        .and_then(ImageTensor::load)?,
                ),
                None => None,
            };
            match source {
                EvalSource::Upscale { generator, .. } => {
                    let (sr, ms) = upscale(generator, &ImageTensor::load(path)?)?;
                    Ok((score(name.clone(), &sr, hr.as_ref(), Some(ms)), Some(sr)))
                }
                EvalSource::Synthesize { generator, space, seed, .. } => {
                    let full = ImageTensor::load(path)?;
                    let (h, w) = (full.height() / SCALE * SCALE, full.width() / SCALE * SCALE);
                    let hr = full.crop(0, 0, h, w)?;
                    let recipe = sample_recipe(space, h, w, seed.wrapping_add(i as u64))?;
                    let (sr, ms) = upscale(generator, &recipe.replay(&hr)?)?;
                    Ok((score(name.clone(), &sr, Some(&hr), Some(ms)), Some(sr)))
                }
                EvalSource::Precomputed { .. } => {
                    let sr = ImageTensor::load(path)?;
                    Ok((score(name.clone(), &sr, hr.as_ref(), None), None))
                }
            }
        })();
        let row = match row {
            Ok((row, sr)) => {
                if let (Some(dir), Some(sr)) = (sr_out, sr) {
                    let out = dir.join(format!("{}.png", stem(path)));
                    if let Err(e) = sr.save(&out) {
                        rows.push(MetricsRow::failed(name, e));
                        continue;
                    }
                }
                row
            }
            Err(e) => MetricsRow::failed(name, e),
        };
        rows.push(row);
    }
    Ok(MetricsReport::new(rows))
}
