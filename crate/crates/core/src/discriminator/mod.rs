//! Attention U-Net discriminator with spectral normalisation and its two-scale wrapper.

use candle_core::{DType, Tensor};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::nn::params::VarBuilder;
use crate::nn::{conv2d, leaky_relu, sigmoid, upsample_nearest2x, Conv2d, ConvSpec, ParamStore, LEAKY_SLOPE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_features: usize,
    /// Number of down/upsampling stages.
    pub depth: usize,
    pub spectral_norm: bool,
    pub scales: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_features: 64,
            depth: 3,
            spectral_norm: true,
            scales: 2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config(format!("{path}.depth"), "must be at least 1"));
        }
        if self.base_features == 0 || self.in_channels == 0 {
            return Err(Error::config(format!("{path}.base_features"), "channel counts must be positive"));
        }
        if self.scales != 2 {
            return Err(Error::config(
                format!("{path}.scales"),
                format!("{} is unsupported; the wrapper has exactly 2 scales", self.scales),
            ));
        }
        Ok(())
    }
}

fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(leaky_relu(x, LEAKY_SLOPE)?)
}

fn make_conv(vb: &mut VarBuilder, name: &str, spec: ConvSpec, sn: bool) -> Result<Conv2d> {
    let mut vb = vb.pp(name);
    if sn {
        Conv2d::spectral(&mut vb, spec, 1.0)
    } else {
        Conv2d::new(&mut vb, spec, 1.0)
    }
}

/// Additive attention gate: `α = σ(ψ(relu(W_g g + W_x x)))`, output `α · x`.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    w_g: Conv2d,
    w_x: Conv2d,
    psi: Conv2d,
}

impl AttentionGate {
    pub fn new(vb: &mut VarBuilder, gate_ch: usize, skip_ch: usize, sn: bool) -> Result<Self> {
        let inter = (skip_ch / 2).max(1);
        Ok(Self {
            w_g: make_conv(vb, "w_g", ConvSpec::same(gate_ch, inter, 1), sn)?,
            w_x: make_conv(vb, "w_x", ConvSpec::same(skip_ch, inter, 1), sn)?,
            psi: make_conv(vb, "psi", ConvSpec::same(inter, 1, 1), sn)?,
        })
    }

    /// Returns the gated skip features and the coefficient map α of shape (N, 1, H, W).
    pub fn forward(&self, gate: &Tensor, skip: &Tensor) -> Result<(Tensor, Tensor)> {
        let a = (self.w_g.forward(gate)? + self.w_x.forward(skip)?)?.relu()?;
        let alpha = sigmoid(&self.psi.forward(&a)?)?;
        let gated = skip.broadcast_mul(&alpha)?;
        Ok((gated, alpha))
    }

    fn convs(&self) -> [&Conv2d; 3] {
        [&self.w_g, &self.w_x, &self.psi]
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: Conv2d,
    gate: AttentionGate,
    fuse: Conv2d,
}

/// U-Net discriminator producing a per-pixel logit map at input resolution.
#[derive(Debug, Clone)]
pub struct UNetDiscriminator {
    cfg: DiscriminatorConfig,
    conv_in: Conv2d,
    down: Vec<Conv2d>,
    decoder: Vec<DecoderLevel>,
    conv_refine: Conv2d,
    conv_out: Conv2d,
}

/// Logits plus the attention maps of every decoder level (coarsest first).
#[derive(Debug, Clone)]
pub struct UNetOutput {
    pub logits: Tensor,
    pub attention: Vec<Tensor>,
}

impl UNetDiscriminator {
    pub fn new(vb: &mut VarBuilder, cfg: &DiscriminatorConfig) -> Result<Self> {
        cfg.validate("discriminator")?;
        let sn = cfg.spectral_norm;
        let ch = |i: usize| cfg.base_features << i;
        let conv_in = make_conv(vb, "conv_in", ConvSpec::same(cfg.in_channels, ch(0), 3), false)?;
        let down = (0..cfg.depth)
            .map(|i| make_conv(vb, &format!("down.{i}"), ConvSpec::strided(ch(i), ch(i + 1), 4, 2, 1), sn))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.depth)
            .rev()
            .map(|i| {
                let mut lvl = vb.pp(format!("up.{i}"));
                Ok(DecoderLevel {
                    up: make_conv(&mut lvl, "conv", ConvSpec::same(ch(i + 1), ch(i), 3), sn)?,
                    gate: AttentionGate::new(&mut lvl.pp("gate"), ch(i), ch(i), sn)?,
                    fuse: make_conv(&mut lvl, "fuse", ConvSpec::same(2 * ch(i), ch(i), 3), sn)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let conv_refine = make_conv(vb, "conv_refine", ConvSpec::same(ch(0), ch(0), 3), sn)?;
        let conv_out = make_conv(vb, "conv_out", ConvSpec::same(ch(0), 1, 3), false)?;
        Ok(Self {
            cfg: cfg.clone(),
            conv_in,
            down,
            decoder,
            conv_refine,
            conv_out,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    fn convs(&self) -> Vec<&Conv2d> {
        let mut out = vec![&self.conv_in];
        out.extend(self.down.iter());
        for lvl in &self.decoder {
            out.push(&lvl.up);
            out.extend(lvl.gate.convs());
            out.push(&lvl.fuse);
        }
        out.push(&self.conv_refine);
        out.push(&self.conv_out);
        out
    }

    /// Convolutions whose weights are spectrally normalised.
    pub fn spectral_convs(&self) -> Vec<&Conv2d> {
        self.convs().into_iter().filter(|c| c.spectral_state().is_some()).collect()
    }

    /// One power-iteration step for every normalised weight.
    pub fn update_spectral(&self) -> Result<()> {
        for c in self.spectral_convs() {
            c.update_spectral()?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let m = 1usize << self.cfg.depth;
        if c != self.cfg.in_channels {
            return Err(Error::shape(format!(
                "discriminator expects {} channels, got {c}",
                self.cfg.in_channels
            )));
        }
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!("discriminator input {h}x{w} is not divisible by {m}")));
        }
        Ok(())
    }

    pub fn forward_with_attention(&self, x: &Tensor) -> Result<UNetOutput> {
        self.check_input(x)?;
        let mut skips = vec![lrelu(&self.conv_in.forward(x)?)?];
        for conv in &self.down {
            let next = lrelu(&conv.forward(skips.last().expect("non-empty"))?)?;
            skips.push(next);
        }
        let mut feat = skips.pop().expect("depth >= 1");
        let mut attention = Vec::with_capacity(self.decoder.len());
        for lvl in &self.decoder {
            let skip = skips.pop().expect("one skip per level");
            let up = lrelu(&lvl.up.forward(&upsample_nearest2x(&feat)?)?)?;
            let (gated, alpha) = lvl.gate.forward(&up, &skip)?;
            attention.push(alpha);
            feat = lrelu(&lvl.fuse.forward(&Tensor::cat(&[&gated, &up], 1)?)?)?;
        }
        let feat = lrelu(&self.conv_refine.forward(&feat)?)?;
        Ok(UNetOutput {
            logits: self.conv_out.forward(&feat)?,
            attention,
        })
    }

    /// Per-pixel logits `C` of shape (N, 1, H, W); the probability map is `σ(C)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_attention(x)?.logits)
    }
}

/// Antialiased bilinear ×½ downsampling: edge-replicated input filtered with the
/// separable `[1, 3, 3, 1] / 8` kernel at stride 2.
pub fn downsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("cannot halve a {h}x{w} image")));
    }
    let taps = [1.0, 3.0, 3.0, 1.0].map(|v| v / 8.0);
    let k: Vec<f64> = (0..16).map(|i| taps[i / 4] * taps[i % 4]).collect();
    let k = Tensor::from_vec(k, (1, 1, 4, 4), x.device())?.to_dtype(x.dtype())?;
    let flat = x.reshape((n * c, 1, h, w))?.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?;
    let y = conv2d(&flat, &k, None, 2, 0)?;
    Ok(y.reshape((n, c, h / 2, w / 2))?)
}

/// Two identically shaped, independently weighted U-Nets: one on the input,
/// one on its ×½ downsampled copy.
#[derive(Debug, Clone)]
pub struct MultiScaleDiscriminator {
    store: ParamStore,
    normal: UNetDiscriminator,
    sampled: UNetDiscriminator,
}

impl MultiScaleDiscriminator {
    pub fn new(cfg: &DiscriminatorConfig, dtype: DType, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate("discriminator")?;
        let mut store = ParamStore::new(dtype);
        let mut vb = store.root(rng);
        let normal = UNetDiscriminator::new(&mut vb.pp("normal"), cfg)?;
        let sampled = UNetDiscriminator::new(&mut vb.pp("sampled"), cfg)?;
        Ok(Self { store, normal, sampled })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn normal(&self) -> &UNetDiscriminator {
        &self.normal
    }

    pub fn sampled(&self) -> &UNetDiscriminator {
        &self.sampled
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        self.normal.config()
    }

    pub fn update_spectral(&self) -> Result<()> {
        self.normal.update_spectral()?;
        self.sampled.update_spectral()
    }

    /// Full-resolution and half-resolution logit maps.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, _, h, w) = x.dims4()?;
        let m = 1usize << (self.config().depth + 1);
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!("multi-scale input {h}x{w} is not divisible by {m}")));
        }
        let x = x.to_dtype(self.store.dtype())?;
        let full = self.normal.forward(&x)?;
        let half = self.sampled.forward(&downsample2x(&x)?)?;
        Ok((full, half))
    }
}

pub fn forward_multiscale(d: &MultiScaleDiscriminator, img: &Tensor) -> Result<(Tensor, Tensor)> {
    d.forward(img)
}
