//! Two-phase training: content-only pretraining, then alternating
//! discriminator / generator updates, with EMA weights and checkpoints.

mod adam;
mod checkpoint;
mod data;
mod ema;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{generator_from_checkpoint, load_generator, Checkpoint, CheckpointMeta, RngState, CHECKPOINT_VERSION};
pub use data::{make_batch, Batch, HrPool, Skipped};
pub use ema::{ema_update, ema_value};

use crate::degradation::{DegradationSpace, SCALE};
use crate::discriminator::{DiscriminatorConfig, MultiScaleDiscriminator};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{
    content_loss, discriminator_loss, dual_perceptual_loss, generator_adversarial_loss, total_discriminator_loss,
    total_generator_loss, zeta, LossWeights, PerceptualConfig, PerceptualPair,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Gan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hr_patch_size: usize,
    pub batch_size: usize,
    pub pretrain_iters: u64,
    pub gan_iters: u64,
    pub pretrain_lr: f64,
    pub gan_lr: f64,
    pub ema_decay: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Metrics record every this many steps.
    pub log_every: u64,
    /// Checkpoint every this many steps (0 keeps only the final one).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hr_patch_size: 128,
            batch_size: 4,
            pretrain_iters: 2000,
            gan_iters: 1000,
            pretrain_lr: 2e-4,
            gan_lr: 1e-4,
            ema_decay: 0.999,
            optimizer: AdamConfig::default(),
            seed: 0,
            log_every: 10,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("{path}.{key}"), msg));
        if self.hr_patch_size == 0 || self.hr_patch_size % SCALE != 0 {
            return bad("hr_patch_size", format!("{} is not a positive multiple of {SCALE}", self.hr_patch_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        for (key, lr) in [("pretrain_lr", self.pretrain_lr), ("gan_lr", self.gan_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(key, format!("{lr} must be a non-negative number"));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay", format!("{} must lie in [0, 1]", self.ema_decay));
        }
        if self.log_every == 0 {
            return bad("log_every", "must be positive".into());
        }
        self.optimizer.validate(&format!("{path}.optimizer"))
    }
}

/// Everything a training run depends on; snapshotted into every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossWeights,
    pub perceptual: PerceptualConfig,
    pub degradation: DegradationSpace,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate("train")?;
        self.generator.validate("generator")?;
        self.discriminator.validate("discriminator")?;
        self.loss.validate("loss")?;
        self.perceptual.validate("perceptual")?;
        self.degradation.validate("degradation")?;
        let m = 1usize << (self.discriminator.depth + 1);
        if self.train.gan_iters > 0 && self.train.hr_patch_size % m != 0 {
            return Err(Error::config(
                "train.hr_patch_size",
                format!("{} must be divisible by {m} for the discriminators", self.train.hr_patch_size),
            ));
        }
        Ok(())
    }
}

/// One training step's metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// Completed steps including this one.
    pub iteration: u64,
    pub phase: Phase,
    pub lr: f64,
    pub content: f64,
    pub adversarial: Option<f64>,
    pub l_vgg: Option<f64>,
    pub l_res: Option<f64>,
    pub zeta: Option<f64>,
    pub perceptual: Option<f64>,
    pub generator_total: f64,
    pub discriminator: Option<f64>,
}

fn finite(t: &Tensor, term: &str, iteration: u64) -> Result<f64> {
    let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !v.is_finite() {
        return Err(Error::NonFinite { term: term.to_string(), iteration });
    }
    Ok(v)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub struct Trainer {
    cfg: RunConfig,
    generator: Generator,
    ema: Generator,
    discriminator: MultiScaleDiscriminator,
    perceptual: Option<PerceptualPair>,
    g_opt: Adam,
    d_opt: Adam,
    iteration: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.train.seed;
        let generator = Generator::new(&cfg.generator, DType::F32, &mut stream(seed, 0))?;
        let ema = Generator::new(&cfg.generator, DType::F32, &mut stream(seed, 0))?;
        let discriminator = MultiScaleDiscriminator::new(&cfg.discriminator, DType::F32, &mut stream(seed, 1))?;
        let g_opt = Adam::new(cfg.train.optimizer.clone(), generator.params())?;
        let d_opt = Adam::new(cfg.train.optimizer.clone(), discriminator.params())?;
        Ok(Self {
            generator,
            ema,
            discriminator,
            perceptual: None,
            g_opt,
            d_opt,
            iteration: 0,
            rng: stream(seed, 2),
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn ema(&self) -> &Generator {
        &self.ema
    }

    pub fn discriminator(&self) -> &MultiScaleDiscriminator {
        &self.discriminator
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn total_iters(&self) -> u64 {
        self.cfg.train.pretrain_iters + self.cfg.train.gan_iters
    }

    /// Phase of the next step; `None` once both phases are complete.
    pub fn phase(&self) -> Option<Phase> {
        if self.iteration < self.cfg.train.pretrain_iters {
            Some(Phase::Pretrain)
        } else if self.iteration < self.total_iters() {
            Some(Phase::Gan)
        } else {
            None
        }
    }

    pub fn next_batch(&mut self, pool: &HrPool) -> Result<Batch> {
        let t = &self.cfg.train;
        make_batch(pool, &self.cfg.degradation, t.hr_patch_size, t.batch_size, &mut self.rng)
    }

    fn finish_generator_step(&mut self) -> Result<()> {
        ema_update(self.ema.params(), self.generator.params(), self.cfg.train.ema_decay)?;
        self.iteration += 1;
        Ok(())
    }

    /// One content-only update.
    pub fn pretrain_step(&mut self, batch: &Batch) -> Result<StepLog> {
        let it = self.iteration + 1;
        let lr = self.cfg.train.pretrain_lr;
        let hr = batch.hr.to_dtype(DType::F32)?;
        let sr = self.generator.forward_train(&batch.lr, &mut self.rng)?;
        let content = content_loss(&sr, &hr)?;
        let c = finite(&content, "content", it)?;
        let grads = content.backward()?;
        self.g_opt.step(self.generator.params(), &grads, lr)?;
        self.finish_generator_step()?;
        Ok(StepLog {
            iteration: it,
            phase: Phase::Pretrain,
            lr,
            content: c,
            adversarial: None,
            l_vgg: None,
            l_res: None,
            zeta: None,
            perceptual: None,
            generator_total: c,
            discriminator: None,
        })
    }

    /// One discriminator update followed by one generator update.
    pub fn gan_step(&mut self, batch: &Batch) -> Result<StepLog> {
        let it = self.iteration + 1;
        let lr = self.cfg.train.gan_lr;
        let w = self.cfg.loss.clone();
        if self.iteration == self.cfg.train.pretrain_iters && self.g_opt.step_count() > 0 {
            self.g_opt.reset()?;
        }
        if self.perceptual.is_none() && w.gamma_perceptual != 0.0 {
            self.perceptual = Some(PerceptualPair::new(&self.cfg.perceptual, DType::F32)?);
        }
        let hr = batch.hr.to_dtype(DType::F32)?;
        let sr = self.generator.forward_train(&batch.lr, &mut self.rng)?;

        self.discriminator.update_spectral()?;
        let (real_n, real_s) = self.discriminator.forward(&hr)?;
        let (fake_n, fake_s) = self.discriminator.forward(&sr.detach())?;
        let d_loss = total_discriminator_loss(
            &discriminator_loss(&real_n, &fake_n)?,
            &discriminator_loss(&real_s, &fake_s)?,
            &w,
        )?;
        let d_value = finite(&d_loss, "discriminator", it)?;
        let grads = d_loss.backward()?;
        self.d_opt.step(self.discriminator.params(), &grads, lr)?;

        let zero = Tensor::zeros((), DType::F32, &Device::Cpu)?;
        let content = content_loss(&sr, &hr)?;
        let c = finite(&content, "content", it)?;
        let (adv, adv_value) = if w.eta_adversarial != 0.0 {
            let (gn, gs) = self.discriminator.forward(&sr)?;
            let adv = generator_adversarial_loss(&gn, &gs, &w)?;
            let v = finite(&adv, "adversarial", it)?;
            (adv, Some(v))
        } else {
            (zero.clone(), None)
        };
        let (percep, parts) = match &self.perceptual {
            Some(pair) => {
                let (lv, lres) = pair.losses(&sr, &hr)?;
                let v = finite(&lv, "perceptual_vgg", it)?;
                let r = finite(&lres, "perceptual_resnet", it)?;
                let dual = dual_perceptual_loss(&lv, &lres, &w)?;
                let d = finite(&dual, "perceptual", it)?;
                (dual, Some((v, r, zeta(v, r, w.c), d)))
            }
            None => (zero, None),
        };
        let total = total_generator_loss(&content, &adv, &percep, &w)?;
        let t = finite(&total, "generator_total", it)?;
        let grads = total.backward()?;
        self.g_opt.step(self.generator.params(), &grads, lr)?;
        self.finish_generator_step()?;
        Ok(StepLog {
            iteration: it,
            phase: Phase::Gan,
            lr,
            content: c,
            adversarial: adv_value,
            l_vgg: parts.map(|p| p.0),
            l_res: parts.map(|p| p.1),
            zeta: parts.map(|p| p.2),
            perceptual: parts.map(|p| p.3),
            generator_total: t,
            discriminator: Some(d_value),
        })
    }

    /// Draws a batch and runs whichever phase comes next.
    pub fn step(&mut self, pool: &HrPool) -> Result<StepLog> {
        let phase = self.phase().ok_or_else(|| Error::invalid("training is already complete"))?;
        let batch = self.next_batch(pool)?;
        match phase {
            Phase::Pretrain => self.pretrain_step(&batch),
            Phase::Gan => self.gan_step(&batch),
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint {
            meta: CheckpointMeta {
                version: CHECKPOINT_VERSION,
                iteration: self.iteration,
                phase: self.phase().unwrap_or(Phase::Gan),
                config: self.cfg.clone(),
                rng: RngState::capture(&self.rng),
                generator_optimizer_step: self.g_opt.step_count(),
                discriminator_optimizer_step: self.d_opt.step_count(),
            },
            tensors: Default::default(),
        };
        ckpt.insert_section("generator", self.generator.params().snapshot()?);
        ckpt.insert_section("ema", self.ema.params().snapshot()?);
        ckpt.insert_section("discriminator", self.discriminator.params().snapshot()?);
        ckpt.insert_section("discriminator_state", self.discriminator.params().buffer_snapshot()?);
        ckpt.insert_section("optimizer_g", self.g_opt.state());
        ckpt.insert_section("optimizer_d", self.d_opt.state());
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    /// Rebuilds a trainer from `ckpt`. Architectures must match `cfg`; schedule,
    /// loss and data settings come from `cfg`. Nothing is returned on any mismatch.
    pub fn from_checkpoint(cfg: RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        let saved = &ckpt.meta.config;
        if saved.generator != cfg.generator {
            return Err(Error::checkpoint(
                "config.generator",
                format!(
                    "checkpoint holds a {} generator {:?}, config asks for a {} generator {:?}",
                    saved.generator.variant, saved.generator, cfg.generator.variant, cfg.generator
                ),
            ));
        }
        if saved.discriminator != cfg.discriminator {
            return Err(Error::checkpoint("config.discriminator", "discriminator architecture differs"));
        }
        let mut t = Trainer::new(cfg)?;
        t.generator.params().load(&ckpt.section("generator"))?;
        t.ema.params().load(&ckpt.section("ema"))?;
        t.discriminator.params().load(&ckpt.section("discriminator"))?;
        t.discriminator.params().load_buffers(&ckpt.section("discriminator_state"))?;
        t.g_opt.load_state(ckpt.meta.generator_optimizer_step, &ckpt.section("optimizer_g"))?;
        t.d_opt.load_state(ckpt.meta.discriminator_optimizer_step, &ckpt.section("optimizer_d"))?;
        t.iteration = ckpt.meta.iteration;
        t.rng = ckpt.meta.rng.restore()?;
        Ok(t)
    }

    pub fn resume(cfg: RunConfig, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(cfg, &Checkpoint::load(path)?)
    }
}
