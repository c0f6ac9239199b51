//! Planar floating-point images (channels × height × width, values nominally in [0, 1]).

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values do not fill a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.channels, self.height, self.width, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    /// Rotates by 90° counter-clockwise.
    pub fn rotate90(&self) -> Self {
        Self::from_fn(self.channels, self.width, self.height, |c, y, x| {
            self.get(c, x, self.width - 1 - y)
        })
    }

    /// Adds a leading batch axis: (1, C, H, W).
    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            &Device::Cpu,
        )?)
    }

    pub fn stack(images: &[ImageTensor]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty image list"))?;
        let dims = first.dims();
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if img.dims() != dims {
                return Err(Error::shape(format!(
                    "cannot stack images of dims {:?} and {:?}",
                    dims,
                    img.dims()
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(
            data,
            (images.len(), dims.0, dims.1, dims.2),
            &Device::Cpu,
        )?)
    }

    /// Splits a (N, C, H, W) tensor into images.
    pub fn unstack(t: &Tensor) -> Result<Vec<ImageTensor>> {
        let (n, c, h, w) = t.dims4()?;
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let len = c * h * w;
        (0..n)
            .map(|i| ImageTensor::new(c, h, w, flat[i * len..(i + 1) * len].to_vec()))
            .collect()
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let (w, h) = (w as usize, h as usize);
        let raw = rgb.as_raw();
        Self::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
    }

    /// Quantises to 8 bits per channel. Only 1- and 3-channel images are representable.
    pub fn to_dynamic(&self) -> Result<DynamicImage> {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
                let img = ImageBuffer::<Luma<u8>, _>::from_raw(w, h, buf)
                    .ok_or_else(|| Error::shape("luma buffer size mismatch"))?;
                Ok(DynamicImage::ImageLuma8(img))
            }
            3 => {
                let n = self.height * self.width;
                let mut buf = vec![0u8; n * 3];
                for c in 0..3 {
                    for (i, &v) in self.plane(c).iter().enumerate() {
                        buf[i * 3 + c] = q(v);
                    }
                }
                let img = ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, buf)
                    .ok_or_else(|| Error::shape("rgb buffer size mismatch"))?;
                Ok(DynamicImage::ImageRgb8(img))
            }
            c => Err(Error::shape(format!("cannot encode a {c}-channel image"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self::from_dynamic(&img))
    }

    /// Writes an 8-bit image; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic()?.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Lists image files (png / jpg / jpeg, case-insensitive) in a directory, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false);
        if path.is_file() && is_image {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
