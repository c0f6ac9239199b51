use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Phase, RunConfig};
use crate::generator::Generator;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "blindsr";

/// Position of a ChaCha stream, enough to continue it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| Error::checkpoint("rng", m.to_string());
        if self.seed.len() != 64 {
            return Err(bad("seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word_pos is not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    /// Completed training steps.
    pub iteration: u64,
    /// Phase of the next step.
    pub phase: Phase,
    pub config: RunConfig,
    pub rng: RngState,
    pub generator_optimizer_step: u64,
    pub discriminator_optimizer_step: u64,
}

/// Named tensors plus metadata, stored as one safetensors file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&self.meta)?)]);
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.as_str(), t.contiguous()?)))
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize_to_file(tensors, Some(meta), path)
            .map_err(|e| Error::checkpoint("file", format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::checkpoint("file", format!("{}: {e}", path.display())))?;
        let raw = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::checkpoint("metadata", "missing"))?;
        let meta: CheckpointMeta =
            serde_json::from_str(raw).map_err(|e| Error::checkpoint("metadata", e.to_string()))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("found {}, this build reads {CHECKPOINT_VERSION}", meta.version),
            ));
        }
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)
            .map_err(|e| Error::checkpoint("tensors", e.to_string()))?
            .into_iter()
            .collect();
        Ok(Self { meta, tensors })
    }

    /// Tensors under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn insert_section(&mut self, prefix: &str, values: BTreeMap<String, Tensor>) {
        for (k, t) in values {
            self.tensors.insert(format!("{prefix}.{k}"), t);
        }
    }
}

/// Loads the (optionally EMA) generator stored in a training checkpoint.
pub fn load_generator(path: impl AsRef<Path>, use_ema: bool) -> Result<Generator> {
    let ckpt = Checkpoint::load(path)?;
    generator_from_checkpoint(&ckpt, use_ema)
}

pub fn generator_from_checkpoint(ckpt: &Checkpoint, use_ema: bool) -> Result<Generator> {
    let cfg = &ckpt.meta.config.generator;
    let gen = Generator::new(cfg, DType::F32, &mut ChaCha8Rng::seed_from_u64(0))?;
    gen.params().load(&ckpt.section(if use_ema { "ema" } else { "generator" }))?;
    Ok(gen)
}
