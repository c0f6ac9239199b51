use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{DynamicImage, ImageFormat};

use crate::image::ImageTensor;
use crate::{Error, Result};

/// Round-trips the image through an 8-bit baseline JPEG encoder/decoder.
pub fn jpeg_compress(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("jpeg quality {quality} outside [1, 100]")));
    }
    let channels = img.channels();
    let dynamic = img.to_dynamic()?;
    let mut buf = Vec::new();
    let codec_err = |e: image::ImageError| Error::Image {
        path: "<jpeg stage>".into(),
        message: e.to_string(),
    };
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&dynamic)
        .map_err(codec_err)?;
    let decoded = image::load(Cursor::new(buf), ImageFormat::Jpeg).map_err(codec_err)?;
    Ok(match channels {
        1 => {
            let luma = decoded.to_luma8();
            let (w, h) = luma.dimensions();
            let raw = luma.into_raw();
            ImageTensor::new(1, h as usize, w as usize, raw.iter().map(|&v| v as f32 / 255.0).collect())?
        }
        _ => ImageTensor::from_dynamic(&DynamicImage::ImageRgb8(decoded.to_rgb8())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(3, 32, 32, |_, _, _| rng.random::<f32>())
    }

    fn mae(a: &ImageTensor, b: &ImageTensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64
    }

    #[test]
    fn high_quality_on_flat_gray_is_near_lossless() {
        let img = ImageTensor::filled(3, 24, 24, 0.5);
        let out = jpeg_compress(&img, 100).unwrap();
        assert_eq!(out.dims(), img.dims());
        let max = out.data().iter().map(|v| (v - 0.5).abs()).fold(0.0f32, f32::max);
        assert!(max < 2.0 / 255.0, "max error {max}");
    }

    #[test]
    fn lower_quality_loses_more_on_noise() {
        let img = noise(4);
        assert!(mae(&img, &jpeg_compress(&img, 10).unwrap()) > mae(&img, &jpeg_compress(&img, 95).unwrap()));
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let img = ImageTensor::from_fn(3, 20, 28, |c, y, x| ((c + y * 3 + x * 5) % 17) as f32 / 16.0);
        let a = jpeg_compress(&img, 50).unwrap();
        let b = jpeg_compress(&img, 50).unwrap();
        assert_eq!(a.dims(), (3, 20, 28));
        let bits = |t: &ImageTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn grayscale_round_trip_and_range_checks() {
        let img = ImageTensor::filled(1, 8, 8, 0.25);
        assert_eq!(jpeg_compress(&img, 90).unwrap().dims(), (1, 8, 8));
        assert!(jpeg_compress(&img, 0).is_err());
        assert!(jpeg_compress(&img, 101).is_err());
    }
}
