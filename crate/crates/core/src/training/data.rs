use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::Rng;

use crate::degradation::{degrade, DegradationRecipe, DegradationSpace, SCALE};
use crate::image::list_images;
use crate::{Error, ImageTensor, Result};

#[derive(Debug, Clone)]
enum Entry {
    Memory(ImageTensor),
    Disk(PathBuf),
}

/// HR images eligible for cropping. Directory pools decode lazily, one image per sample.
#[derive(Debug, Clone)]
pub struct HrPool {
    entries: Vec<Entry>,
}

/// An image left out of a pool, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

impl HrPool {
    /// Keeps images with both sides at least `patch`.
    pub fn from_images(images: Vec<ImageTensor>, patch: usize) -> Result<(Self, Vec<Skipped>)> {
        let mut entries = Vec::new();
        let mut skipped = Vec::new();
        for (i, img) in images.into_iter().enumerate() {
            if img.height() < patch || img.width() < patch {
                skipped.push(Skipped {
                    name: format!("#{i}"),
                    reason: format!("{}x{} is smaller than the {patch}px patch", img.height(), img.width()),
                });
            } else {
                entries.push(Entry::Memory(img));
            }
        }
        Self::finish(entries, skipped)
    }

    /// Indexes every png/jpeg in `dir`, reading only headers.
    pub fn from_dir(dir: impl AsRef<Path>, patch: usize) -> Result<(Self, Vec<Skipped>)> {
        let mut entries = Vec::new();
        let mut skipped = Vec::new();
        for path in list_images(dir)? {
            let name = path.display().to_string();
            match image::image_dimensions(&path) {
                Ok((w, h)) if (h as usize) < patch || (w as usize) < patch => skipped.push(Skipped {
                    name,
                    reason: format!("{h}x{w} is smaller than the {patch}px patch"),
                }),
                Ok(_) => entries.push(Entry::Disk(path)),
                Err(e) => skipped.push(Skipped { name, reason: e.to_string() }),
            }
        }
        Self::finish(entries, skipped)
    }

    fn finish(entries: Vec<Entry>, skipped: Vec<Skipped>) -> Result<(Self, Vec<Skipped>)> {
        if entries.is_empty() {
            return Err(Error::Dataset("no usable HR images".into()));
        }
        Ok((Self { entries }, skipped))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn image(&self, i: usize) -> Result<ImageTensor> {
        match &self.entries[i] {
            Entry::Memory(img) => Ok(img.clone()),
            Entry::Disk(p) => ImageTensor::load(p),
        }
    }
}

/// Paired training batch: LR (N, 3, p/4, p/4), HR (N, 3, p, p).
#[derive(Debug, Clone)]
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
    pub recipes: Vec<DegradationRecipe>,
}

/// Random crops with flip / 90° rotation augmentation, each degraded on the fly.
pub fn make_batch<R: Rng + ?Sized>(
    pool: &HrPool,
    space: &DegradationSpace,
    patch: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if patch == 0 || patch % SCALE != 0 {
        return Err(Error::invalid(format!("patch size {patch} is not a positive multiple of {SCALE}")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut hrs = Vec::with_capacity(batch_size);
    let mut lrs = Vec::with_capacity(batch_size);
    let mut recipes = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let img = pool.image(rng.random_range(0..pool.len()))?;
        let top = rng.random_range(0..=img.height() - patch);
        let left = rng.random_range(0..=img.width() - patch);
        let mut crop = img.crop(top, left, patch, patch)?;
        if rng.random_bool(0.5) {
            crop = crop.flip_horizontal();
        }
        for _ in 0..rng.random_range(0..4) {
            crop = crop.rotate90();
        }
        let (lr, recipe) = degrade(&crop, space, rng)?;
        hrs.push(crop);
        lrs.push(lr);
        recipes.push(recipe);
    }
    Ok(Batch {
        lr: ImageTensor::stack(&lrs)?,
        hr: ImageTensor::stack(&hrs)?,
        recipes,
    })
}
