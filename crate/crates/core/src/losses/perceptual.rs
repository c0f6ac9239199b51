//! Frozen VGG-style and ResNet-style feature extractors for perceptual losses.
//!
//! Weights use torchvision parameter names, so converted pretrained state dicts
//! load directly; batch-norm layers are folded into the preceding convolution.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{conv2d, max_pool2d};
use crate::{Error, Result};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

const BN_EPS: f64 = 1e-5;

/// Conv widths per stage; a 2×2 max-pool separates consecutive stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VggSpec {
    pub stages: Vec<Vec<usize>>,
}

impl VggSpec {
    pub fn vgg19() -> Self {
        Self {
            stages: vec![vec![64; 2], vec![128; 2], vec![256; 4], vec![512; 4], vec![512; 4]],
        }
    }

    pub fn tiny() -> Self {
        Self {
            stages: vec![vec![8], vec![16], vec![16], vec![32], vec![32]],
        }
    }
}

/// Bottleneck ResNet: stem conv 7×7/2 and max-pool 3×3/2, then stages of
/// bottleneck blocks (1×1, 3×3, 1×1 with `expansion`× output width).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResNetSpec {
    pub stem: usize,
    pub blocks: Vec<usize>,
    pub widths: Vec<usize>,
    pub expansion: usize,
}

impl ResNetSpec {
    pub fn resnet50() -> Self {
        Self {
            stem: 64,
            blocks: vec![3, 4, 6, 3],
            widths: vec![64, 128, 256, 512],
            expansion: 4,
        }
    }

    pub fn tiny() -> Self {
        Self {
            stem: 8,
            blocks: vec![1, 1, 1, 1],
            widths: vec![4, 8, 8, 16],
            expansion: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backbone {
    Vgg(VggSpec),
    ResNet(ResNetSpec),
}

impl Backbone {
    /// Number of tap points: one per VGG stage or ResNet stage.
    pub fn num_taps(&self) -> usize {
        match self {
            Backbone::Vgg(s) => s.stages.len(),
            Backbone::ResNet(s) => s.blocks.len(),
        }
    }

    /// (C, H, W) of every tap for an `h`×`w` input.
    pub fn tap_shapes(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        match self {
            Backbone::Vgg(s) => s
                .stages
                .iter()
                .enumerate()
                .map(|(i, convs)| (*convs.last().unwrap_or(&0), h >> i, w >> i))
                .collect(),
            Backbone::ResNet(s) => {
                let down = |v: usize, k: usize, st: usize, p: usize| (v + 2 * p - k) / st + 1;
                let (mut h, mut w) = (down(h, 7, 2, 3), down(w, 7, 2, 3));
                (h, w) = (down(h, 3, 2, 1), down(w, 3, 2, 1));
                let mut out = Vec::new();
                for (m, width) in s.widths.iter().enumerate() {
                    if m > 0 {
                        (h, w) = (down(h, 3, 2, 1), down(w, 3, 2, 1));
                    }
                    out.push((width * s.expansion, h, w));
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorPreset {
    Vgg19,
    VggTiny,
    Resnet50,
    ResnetTiny,
}

impl ExtractorPreset {
    pub fn backbone(self) -> Backbone {
        match self {
            ExtractorPreset::Vgg19 => Backbone::Vgg(VggSpec::vgg19()),
            ExtractorPreset::VggTiny => Backbone::Vgg(VggSpec::tiny()),
            ExtractorPreset::Resnet50 => Backbone::ResNet(ResNetSpec::resnet50()),
            ExtractorPreset::ResnetTiny => Backbone::ResNet(ResNetSpec::tiny()),
        }
    }

    fn is_vgg(self) -> bool {
        matches!(self, ExtractorPreset::Vgg19 | ExtractorPreset::VggTiny)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptualConfig {
    pub vgg: ExtractorPreset,
    pub resnet: ExtractorPreset,
    /// Optional safetensors file with torchvision-named weights; random fixed-seed weights otherwise.
    pub vgg_weights: Option<PathBuf>,
    pub resnet_weights: Option<PathBuf>,
    pub vgg_tap_weights: Vec<f64>,
    pub resnet_tap_weights: Vec<f64>,
    pub normalize_input: bool,
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            vgg: ExtractorPreset::Vgg19,
            resnet: ExtractorPreset::Resnet50,
            vgg_weights: None,
            resnet_weights: None,
            vgg_tap_weights: vec![0.1, 0.1, 1.0, 1.0, 1.0],
            resnet_tap_weights: vec![1.0; 4],
            normalize_input: true,
            seed: 0,
        }
    }
}

impl PerceptualConfig {
    /// Small random extractors for tests and quick runs.
    pub fn tiny() -> Self {
        Self {
            vgg: ExtractorPreset::VggTiny,
            resnet: ExtractorPreset::ResnetTiny,
            ..Self::default()
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !self.vgg.is_vgg() {
            return Err(Error::config(format!("{path}.vgg"), "must be a VGG preset"));
        }
        if self.resnet.is_vgg() {
            return Err(Error::config(format!("{path}.resnet"), "must be a ResNet preset"));
        }
        for (key, preset, taps) in [
            ("vgg_tap_weights", self.vgg, &self.vgg_tap_weights),
            ("resnet_tap_weights", self.resnet, &self.resnet_tap_weights),
        ] {
            let n = preset.backbone().num_taps();
            if taps.len() != n {
                return Err(Error::config(
                    format!("{path}.{key}"),
                    format!("needs {n} entries, got {}", taps.len()),
                ));
            }
            if taps.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::config(format!("{path}.{key}"), "entries must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl FrozenConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: FrozenConv,
    conv2: FrozenConv,
    conv3: FrozenConv,
    downsample: Option<FrozenConv>,
}

#[derive(Debug, Clone)]
enum Layers {
    Vgg(Vec<Vec<FrozenConv>>),
    ResNet { stem: FrozenConv, stages: Vec<Vec<Bottleneck>> },
}

struct ConvShape<'a> {
    name: &'a str,
    bn: Option<&'a str>,
    out: usize,
    inp: usize,
    k: usize,
    stride: usize,
    init_scale: f64,
}

enum Source<'a> {
    Random(&'a mut dyn RngCore),
    Named(&'a HashMap<String, Tensor>),
}

impl Source<'_> {
    fn conv(&mut self, s: ConvShape, dtype: DType) -> Result<FrozenConv> {
        let shape = (s.out, s.inp, s.k, s.k);
        let (weight, bias) = match self {
            Source::Random(rng) => {
                let std = s.init_scale * (2.0 / (s.inp * s.k * s.k) as f64).sqrt();
                let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
                let data: Vec<f64> = (0..s.out * s.inp * s.k * s.k).map(|_| dist.sample(rng)).collect();
                let w = Tensor::from_vec(data, shape, &Device::Cpu)?;
                (w, Tensor::zeros(s.out, DType::F64, &Device::Cpu)?)
            }
            Source::Named(map) => {
                let get = |name: String, dims: &[usize]| -> Result<Tensor> {
                    let t = map.get(&name).ok_or_else(|| Error::checkpoint(&name, "missing tensor"))?;
                    if t.dims() != dims {
                        return Err(Error::checkpoint(
                            &name,
                            format!("shape {:?} does not match expected {dims:?}", t.dims()),
                        ));
                    }
                    Ok(t.to_dtype(DType::F64)?)
                };
                let w = get(format!("{}.weight", s.name), &[s.out, s.inp, s.k, s.k])?;
                match s.bn {
                    Some(bn) => {
                        let gamma = get(format!("{bn}.weight"), &[s.out])?;
                        let beta = get(format!("{bn}.bias"), &[s.out])?;
                        let mean = get(format!("{bn}.running_mean"), &[s.out])?;
                        let var = get(format!("{bn}.running_var"), &[s.out])?;
                        let scale = (gamma / (var + BN_EPS)?.sqrt()?)?;
                        let w = w.broadcast_mul(&scale.reshape((s.out, 1, 1, 1))?)?;
                        let b = (beta - (mean * &scale)?)?;
                        (w, b)
                    }
                    None => {
                        let b = get(format!("{}.bias", s.name), &[s.out])?;
                        (w, b)
                    }
                }
            }
        };
        Ok(FrozenConv {
            weight: weight.to_dtype(dtype)?,
            bias: bias.to_dtype(dtype)?,
            stride: s.stride,
            pad: s.k / 2,
        })
    }
}

fn build_layers(backbone: &Backbone, in_channels: usize, src: &mut Source, dtype: DType) -> Result<Layers> {
    match backbone {
        Backbone::Vgg(spec) => {
            let mut idx = 0;
            let mut cin = in_channels;
            let mut stages = Vec::new();
            for convs in &spec.stages {
                let mut stage = Vec::new();
                for &out in convs {
                    let name = format!("features.{idx}");
                    stage.push(src.conv(
                        ConvShape { name: &name, bn: None, out, inp: cin, k: 3, stride: 1, init_scale: 1.0 },
                        dtype,
                    )?);
                    cin = out;
                    idx += 2;
                }
                idx += 1;
                stages.push(stage);
            }
            Ok(Layers::Vgg(stages))
        }
        Backbone::ResNet(spec) => {
            let stem = src.conv(
                ConvShape { name: "conv1", bn: Some("bn1"), out: spec.stem, inp: in_channels, k: 7, stride: 2, init_scale: 1.0 },
                dtype,
            )?;
            let mut cin = spec.stem;
            let mut stages = Vec::new();
            for (m, (&nb, &width)) in spec.blocks.iter().zip(&spec.widths).enumerate() {
                let mut stage = Vec::new();
                for b in 0..nb {
                    let stride = if m > 0 && b == 0 { 2 } else { 1 };
                    let cout = width * spec.expansion;
                    let p = format!("layer{}.{b}", m + 1);
                    let n = |s: &str| format!("{p}.{s}");
                    let (c1, b1, c2, b2, c3, b3, d0, d1) =
                        (n("conv1"), n("bn1"), n("conv2"), n("bn2"), n("conv3"), n("bn3"), n("downsample.0"), n("downsample.1"));
                    let conv1 = src.conv(ConvShape { name: &c1, bn: Some(&b1), out: width, inp: cin, k: 1, stride: 1, init_scale: 1.0 }, dtype)?;
                    let conv2 = src.conv(ConvShape { name: &c2, bn: Some(&b2), out: width, inp: width, k: 3, stride, init_scale: 1.0 }, dtype)?;
                    let conv3 = src.conv(ConvShape { name: &c3, bn: Some(&b3), out: cout, inp: width, k: 1, stride: 1, init_scale: 0.2 }, dtype)?;
                    let downsample = if stride != 1 || cin != cout {
                        Some(src.conv(ConvShape { name: &d0, bn: Some(&d1), out: cout, inp: cin, k: 1, stride, init_scale: 1.0 }, dtype)?)
                    } else {
                        None
                    };
                    stage.push(Bottleneck { conv1, conv2, conv3, downsample });
                    cin = cout;
                }
                stages.push(stage);
            }
            Ok(Layers::ResNet { stem, stages })
        }
    }
}

/// A frozen backbone that returns features at its tap points. Its weights are
/// plain tensors, never variables, so no optimizer can ever update them.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    backbone: Backbone,
    layers: Layers,
    tap_weights: Vec<f64>,
    normalize: bool,
    dtype: DType,
}

impl FeatureExtractor {
    fn check_taps(backbone: &Backbone, tap_weights: &[f64]) -> Result<()> {
        if tap_weights.len() != backbone.num_taps() {
            return Err(Error::invalid(format!(
                "{} tap weights for a backbone with {} taps",
                tap_weights.len(),
                backbone.num_taps()
            )));
        }
        Ok(())
    }

    /// Random He-initialised weights drawn from `rng`.
    pub fn random(
        backbone: Backbone,
        tap_weights: Vec<f64>,
        normalize: bool,
        dtype: DType,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Self::check_taps(&backbone, &tap_weights)?;
        let layers = build_layers(&backbone, 3, &mut Source::Random(rng), dtype)?;
        Ok(Self { backbone, layers, tap_weights, normalize, dtype })
    }

    /// Weights from torchvision-named tensors (`features.{i}.*` or `conv1`, `layer{m}.{b}.*`).
    pub fn from_named(
        backbone: Backbone,
        tap_weights: Vec<f64>,
        normalize: bool,
        dtype: DType,
        tensors: &HashMap<String, Tensor>,
    ) -> Result<Self> {
        Self::check_taps(&backbone, &tap_weights)?;
        let layers = build_layers(&backbone, 3, &mut Source::Named(tensors), dtype)?;
        Ok(Self { backbone, layers, tap_weights, normalize, dtype })
    }

    pub fn load(
        backbone: Backbone,
        tap_weights: Vec<f64>,
        normalize: bool,
        dtype: DType,
        path: impl AsRef<Path>,
    ) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        Self::from_named(backbone, tap_weights, normalize, dtype, &tensors)
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn tap_weights(&self) -> &[f64] {
        &self.tap_weights
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn prepare(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.to_dtype(self.dtype)?;
        if !self.normalize {
            return Ok(x);
        }
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("input normalisation needs 3 channels, got {c}")));
        }
        let mean = Tensor::new(&IMAGENET_MEAN, &Device::Cpu)?.to_dtype(self.dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, &Device::Cpu)?.to_dtype(self.dtype)?.reshape((1, 3, 1, 1))?;
        Ok(x.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    /// Features at every tap point. VGG taps are the last conv of each stage
    /// before its activation; ResNet taps are each stage's final block output
    /// after activation.
    pub fn taps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = self.prepare(x)?;
        let mut out = Vec::new();
        match &self.layers {
            Layers::Vgg(stages) => {
                for (s, convs) in stages.iter().enumerate() {
                    if s > 0 {
                        x = max_pool2d(&x, 2, 2, 0)?;
                    }
                    for (j, conv) in convs.iter().enumerate() {
                        let y = conv.forward(&x)?;
                        if j + 1 == convs.len() {
                            out.push(y.clone());
                        }
                        x = y.relu()?;
                    }
                }
            }
            Layers::ResNet { stem, stages } => {
                x = max_pool2d(&stem.forward(&x)?.relu()?, 3, 2, 1)?;
                for stage in stages {
                    for block in stage {
                        let y = block.conv1.forward(&x)?.relu()?;
                        let y = block.conv2.forward(&y)?.relu()?;
                        let y = block.conv3.forward(&y)?;
                        let shortcut = match &block.downsample {
                            Some(d) => d.forward(&x)?,
                            None => x.clone(),
                        };
                        x = (y + shortcut)?.relu()?;
                    }
                    out.push(x.clone());
                }
            }
        }
        Ok(out)
    }
}

/// `Σ_t w_t · mean|Φ_t(sr) − Φ_t(hr)|`; gradients flow into `sr` only.
pub fn perceptual_loss(sr: &Tensor, hr: &Tensor, ex: &FeatureExtractor) -> Result<Tensor> {
    if sr.dims() != hr.dims() {
        return Err(Error::shape(format!("perceptual loss inputs differ: {:?} vs {:?}", sr.dims(), hr.dims())));
    }
    let fs = ex.taps(sr)?;
    let fh = ex.taps(&hr.detach())?;
    let mut total = Tensor::zeros((), ex.dtype, &Device::Cpu)?;
    for ((a, b), w) in fs.iter().zip(&fh).zip(&ex.tap_weights) {
        let term = (a - b)?.abs()?.mean_all()?;
        total = (total + term.affine(*w, 0.0)?)?;
    }
    Ok(total)
}

/// The VGG-style and ResNet-style extractors used by the dual perceptual loss.
#[derive(Debug, Clone)]
pub struct PerceptualPair {
    pub vgg: FeatureExtractor,
    pub resnet: FeatureExtractor,
}

impl PerceptualPair {
    pub fn new(cfg: &PerceptualConfig, dtype: DType) -> Result<Self> {
        cfg.validate("perceptual")?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let build = |preset: ExtractorPreset, weights: &Option<PathBuf>, taps: &[f64], rng: &mut ChaCha8Rng| match weights {
            Some(p) => FeatureExtractor::load(preset.backbone(), taps.to_vec(), cfg.normalize_input, dtype, p),
            None => FeatureExtractor::random(preset.backbone(), taps.to_vec(), cfg.normalize_input, dtype, rng),
        };
        let vgg = build(cfg.vgg, &cfg.vgg_weights, &cfg.vgg_tap_weights, &mut rng)?;
        let resnet = build(cfg.resnet, &cfg.resnet_weights, &cfg.resnet_tap_weights, &mut rng)?;
        Ok(Self { vgg, resnet })
    }

    /// `(l_vgg, l_res)`.
    pub fn losses(&self, sr: &Tensor, hr: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((perceptual_loss(sr, hr, &self.vgg)?, perceptual_loss(sr, hr, &self.resnet)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..3 * h * w).map(|_| r.random::<f64>()).collect();
        Tensor::from_vec(v, (1, 3, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn tap_shapes_match_forward() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for preset in [ExtractorPreset::VggTiny, ExtractorPreset::ResnetTiny] {
            let b = preset.backbone();
            let n = b.num_taps();
            let ex = FeatureExtractor::random(b.clone(), vec![1.0; n], true, DType::F64, &mut r).unwrap();
            let feats = ex.taps(&image(1, 48, 40)).unwrap();
            let want = b.tap_shapes(48, 40);
            assert_eq!(feats.len(), want.len());
            for (f, (c, h, w)) in feats.iter().zip(want) {
                assert_eq!(f.dims(), &[1, c, h, w]);
            }
        }
    }

    #[test]
    fn full_presets_have_reference_layouts() {
        assert_eq!(
            Backbone::Vgg(VggSpec::vgg19()).tap_shapes(224, 224),
            vec![(64, 224, 224), (128, 112, 112), (256, 56, 56), (512, 28, 28), (512, 14, 14)]
        );
        assert_eq!(
            Backbone::ResNet(ResNetSpec::resnet50()).tap_shapes(224, 224),
            vec![(256, 56, 56), (512, 28, 28), (1024, 14, 14), (2048, 7, 7)]
        );
    }

    #[test]
    fn identical_inputs_give_zero_and_loss_is_symmetric() {
        let pair = PerceptualPair::new(&PerceptualConfig::tiny(), DType::F64).unwrap();
        let (a, b) = (image(2, 32, 32), image(3, 32, 32));
        let (v, r) = pair.losses(&a, &a).unwrap();
        assert_eq!(v.to_scalar::<f64>().unwrap(), 0.0);
        assert_eq!(r.to_scalar::<f64>().unwrap(), 0.0);
        let (v1, r1) = pair.losses(&a, &b).unwrap();
        let (v2, r2) = pair.losses(&b, &a).unwrap();
        assert_eq!(v1.to_scalar::<f64>().unwrap(), v2.to_scalar::<f64>().unwrap());
        assert_eq!(r1.to_scalar::<f64>().unwrap(), r2.to_scalar::<f64>().unwrap());
        assert!(v1.to_scalar::<f64>().unwrap() > 0.0 && r1.to_scalar::<f64>().unwrap() > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(PerceptualConfig::default().validate("p").is_ok());
        let bad = PerceptualConfig { vgg: ExtractorPreset::Resnet50, ..Default::default() };
        assert!(bad.validate("p").unwrap_err().to_string().contains("p.vgg"));
        let bad = PerceptualConfig { vgg_tap_weights: vec![1.0], ..Default::default() };
        assert!(bad.validate("p").unwrap_err().to_string().contains("p.vgg_tap_weights"));
    }

    #[test]
    fn batch_norm_is_folded_into_the_conv() {
        let spec = ResNetSpec { stem: 2, blocks: vec![1], widths: vec![1], expansion: 2 };
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut map = HashMap::new();
        let mut rand_t = |dims: &[usize], lo: f64| {
            use rand::Rng;
            let n: usize = dims.iter().product();
            let v: Vec<f64> = (0..n).map(|_| lo + r.random::<f64>()).collect();
            Tensor::from_vec(v, dims, &Device::Cpu).unwrap()
        };
        let convs = [
            ("conv1", "bn1", vec![2, 3, 7, 7]),
            ("layer1.0.conv1", "layer1.0.bn1", vec![1, 2, 1, 1]),
            ("layer1.0.conv2", "layer1.0.bn2", vec![1, 1, 3, 3]),
            ("layer1.0.conv3", "layer1.0.bn3", vec![2, 1, 1, 1]),
        ];
        for (c, bn, dims) in &convs {
            map.insert(format!("{c}.weight"), rand_t(dims, -0.5));
            let o = dims[0];
            map.insert(format!("{bn}.weight"), rand_t(&[o], 0.5));
            map.insert(format!("{bn}.bias"), rand_t(&[o], -0.5));
            map.insert(format!("{bn}.running_mean"), rand_t(&[o], -0.5));
            map.insert(format!("{bn}.running_var"), rand_t(&[o], 0.5));
        }
        let ex = FeatureExtractor::from_named(Backbone::ResNet(spec.clone()), vec![1.0], false, DType::F64, &map).unwrap();
        let x = image(5, 16, 16);
        // Reference: explicit conv followed by eval-mode batch norm.
        let bn = |y: Tensor, name: &str| {
            let g = |k: &str| map[&format!("{name}.{k}")].reshape((1, (), 1, 1)).unwrap();
            let den = (g("running_var") + BN_EPS).unwrap().sqrt().unwrap();
            y.broadcast_sub(&g("running_mean")).unwrap().broadcast_div(&den).unwrap().broadcast_mul(&g("weight")).unwrap().broadcast_add(&g("bias")).unwrap()
        };
        let cv = |x: &Tensor, name: &str, s: usize, p: usize| conv2d(x, &map[&format!("{name}.weight")], None, s, p).unwrap();
        let y = max_pool2d(&bn(cv(&x, "conv1", 2, 3), "bn1").relu().unwrap(), 3, 2, 1).unwrap();
        let z = bn(cv(&y, "layer1.0.conv1", 1, 0), "layer1.0.bn1").relu().unwrap();
        let z = bn(cv(&z, "layer1.0.conv2", 1, 1), "layer1.0.bn2").relu().unwrap();
        let z = bn(cv(&z, "layer1.0.conv3", 1, 0), "layer1.0.bn3");
        // Input has 2 channels and output 2, stride 1: identity shortcut.
        let want = (z + y).unwrap().relu().unwrap();
        let got = &ex.taps(&x).unwrap()[0];
        let diff = (got - want).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");

        map.remove("layer1.0.bn2.running_var");
        let err = FeatureExtractor::from_named(Backbone::ResNet(spec), vec![1.0], false, DType::F64, &map).unwrap_err();
        assert!(err.to_string().contains("layer1.0.bn2.running_var"));
    }
}
