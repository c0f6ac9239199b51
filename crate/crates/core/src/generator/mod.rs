//! ×4 generators: the dense residual "star" network and the compact sub-pixel "lite" network.

mod lite;
mod star;

use candle_core::{DType, Tensor};
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use lite::LITE_MAPPING_LAYERS;
pub use star::{StarDenseBlock, StarRrdb};

use crate::nn::{ChannelDropout, ParamStore};
use crate::{Error, Result};
use lite::LiteNet;
use star::StarNet;

/// Kaiming-normal scale for convolutions outside the residual trunk: 1/√6, the
/// standard deviation of the common uniform fan-in default relative to He init.
pub(crate) const OUTER_INIT_SCALE: f64 = 0.408_248_290_463_863;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Star,
    Lite,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Star => "star",
            Variant::Lite => "lite",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Variant::Star),
            "lite" => Ok(Variant::Lite),
            other => Err(Error::invalid(format!("unknown generator variant `{other}` (expected star or lite)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_features: usize,
    /// Star only.
    pub num_blocks: usize,
    /// Star only.
    pub growth_channels: usize,
    pub residual_scale: f64,
    pub upscale: usize,
    /// 0 disables dropout.
    pub dropout_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Star,
            in_channels: 3,
            out_channels: 3,
            base_features: 64,
            num_blocks: 23,
            growth_channels: 32,
            residual_scale: 0.2,
            upscale: 4,
            dropout_prob: 0.0,
        }
    }
}

impl GeneratorConfig {
    pub fn lite() -> Self {
        Self {
            variant: Variant::Lite,
            ..Self::default()
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("{path}.{key}"), msg));
        if self.upscale != 4 {
            return bad("upscale", format!("{} is unsupported; only 4 is", self.upscale));
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return bad("residual_scale", format!("{} must lie in (0, 1]", self.residual_scale));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad("dropout_prob", format!("{} must lie in [0, 1)", self.dropout_prob));
        }
        for (key, v) in [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("base_features", self.base_features),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if self.variant == Variant::Star && (self.num_blocks == 0 || self.growth_channels == 0) {
            return bad("num_blocks", "star generators need at least one block and positive growth".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Net {
    Star(StarNet),
    Lite(LiteNet),
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    net: Net,
    dropout: ChannelDropout,
}

impl Generator {
    /// Builds the network with weights drawn from `rng`.
    pub fn new(cfg: &GeneratorConfig, dtype: DType, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate("generator")?;
        let mut store = ParamStore::new(dtype);
        let mut vb = store.root(rng);
        let net = match cfg.variant {
            Variant::Star => Net::Star(StarNet::new(
                &mut vb,
                cfg.in_channels,
                cfg.out_channels,
                cfg.base_features,
                cfg.num_blocks,
                cfg.growth_channels,
                cfg.residual_scale,
            )?),
            Variant::Lite => Net::Lite(LiteNet::new(
                &mut vb,
                cfg.in_channels,
                cfg.out_channels,
                cfg.base_features,
                cfg.upscale,
            )?),
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            net,
            dropout: ChannelDropout::new(cfg.dropout_prob)?,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }

    /// Residual-in-residual blocks of the star variant.
    pub fn star_blocks(&self) -> Option<&[StarRrdb]> {
        match &self.net {
            Net::Star(s) => Some(s.body()),
            Net::Lite(_) => None,
        }
    }

    pub fn dropout_prob(&self) -> f64 {
        self.dropout.prob()
    }

    /// Enables (with rate `prob`) or disables dropout before the output conv.
    pub fn set_dropout(&mut self, enabled: bool, prob: f64) -> Result<()> {
        let d = ChannelDropout::new(prob)?;
        self.dropout = if enabled { d } else { ChannelDropout::new(0.0)? };
        self.cfg.dropout_prob = self.dropout.prob();
        Ok(())
    }

    fn check_input(&self, lr: &Tensor) -> Result<()> {
        let (_, c, h, w) = lr.dims4()?;
        if c != self.cfg.in_channels {
            return Err(Error::shape(format!(
                "generator expects {} input channels, got {c}",
                self.cfg.in_channels
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("empty input"));
        }
        Ok(())
    }

    fn features(&self, lr: &Tensor) -> Result<Tensor> {
        self.check_input(lr)?;
        let lr = lr.to_dtype(self.store.dtype())?;
        match &self.net {
            Net::Star(s) => s.features(&lr),
            Net::Lite(l) => l.features(&lr),
        }
    }

    fn output(&self, feat: &Tensor) -> Result<Tensor> {
        match &self.net {
            Net::Star(s) => s.conv_last.forward(feat),
            Net::Lite(l) => l.conv_out.forward(feat),
        }
    }

    /// Evaluation forward: (N, C, h, w) → (N, C, 4h, 4w), dropout inactive.
    pub fn forward(&self, lr: &Tensor) -> Result<Tensor> {
        self.output(&self.features(lr)?)
    }

    /// Evaluation forward without building an autograd graph.
    pub fn infer(&self, lr: &Tensor) -> Result<Tensor> {
        crate::nn::no_grad(|| self.forward(lr))
    }

    /// Training forward with dropout active.
    pub fn forward_train(&self, lr: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
        Ok(self.forward_train_with_mask(lr, rng)?.0)
    }

    /// Training forward that also returns the per-(sample, channel) dropout keep-mask.
    pub fn forward_train_with_mask(&self, lr: &Tensor, rng: &mut dyn RngCore) -> Result<(Tensor, Vec<bool>)> {
        let feat = self.features(lr)?;
        let (feat, keep) = self.dropout.forward_train(&feat, rng)?;
        Ok((self.output(&feat)?, keep))
    }
}

/// Builds an f32 generator.
pub fn build_generator(cfg: &GeneratorConfig, rng: &mut dyn RngCore) -> Result<Generator> {
    Generator::new(cfg, DType::F32, rng)
}

pub fn apply_dropout_mode(mut gen: Generator, enabled: bool, prob: f64) -> Result<Generator> {
    gen.set_dropout(enabled, prob)?;
    Ok(gen)
}
