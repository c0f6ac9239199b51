use candle_core::Tensor;

use crate::nn::params::VarBuilder;
use crate::nn::{leaky_relu, upsample_nearest2x, Conv2d, ConvSpec, LEAKY_SLOPE};
use super::OUTER_INIT_SCALE;
use crate::Result;

/// Initialisation scale of the convolutions inside the residual trunk.
const BODY_INIT_SCALE: f64 = 0.1;

fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(leaky_relu(x, LEAKY_SLOPE)?)
}

/// Five densely connected convolutions with additive skips into layers 2 and 4.
///
/// The layer-2 skip comes from the block input through a 1×1 projection, since
/// input and growth widths differ; the layer-4 skip is the layer-2 output.
#[derive(Debug, Clone)]
pub struct StarDenseBlock {
    convs: [Conv2d; 5],
    proj: Conv2d,
    residual_scale: f64,
}

impl StarDenseBlock {
    pub fn new(vb: &mut VarBuilder, features: usize, growth: usize, residual_scale: f64) -> Result<Self> {
        let mut make = |i: usize| {
            let in_ch = features + i * growth;
            let out_ch = if i == 4 { features } else { growth };
            Conv2d::new(&mut vb.pp(format!("conv{}", i + 1)), ConvSpec::same(in_ch, out_ch, 3), BODY_INIT_SCALE)
        };
        let convs = [make(0)?, make(1)?, make(2)?, make(3)?, make(4)?];
        let proj = Conv2d::new(&mut vb.pp("conv1x1"), ConvSpec::same(features, growth, 1), BODY_INIT_SCALE)?;
        Ok(Self {
            convs,
            proj,
            residual_scale,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rs = self.residual_scale;
        let x1 = lrelu(&self.convs[0].forward(x)?)?;
        let x2 = lrelu(&self.convs[1].forward(&Tensor::cat(&[x, &x1], 1)?)?)?;
        let x2 = (x2 + (self.proj.forward(x)? * rs)?)?;
        let x3 = lrelu(&self.convs[2].forward(&Tensor::cat(&[x, &x1, &x2], 1)?)?)?;
        let x4 = lrelu(&self.convs[3].forward(&Tensor::cat(&[x, &x1, &x2, &x3], 1)?)?)?;
        let x4 = (x4 + (&x2 * rs)?)?;
        let x5 = self.convs[4].forward(&Tensor::cat(&[x, &x1, &x2, &x3, &x4], 1)?)?;
        Ok((x + (x5 * rs)?)?)
    }
}

/// Three dense blocks in sequence wrapped in a scaled residual.
#[derive(Debug, Clone)]
pub struct StarRrdb {
    blocks: [StarDenseBlock; 3],
    residual_scale: f64,
}

impl StarRrdb {
    pub fn new(vb: &mut VarBuilder, features: usize, growth: usize, residual_scale: f64) -> Result<Self> {
        let mut make = |i: usize| StarDenseBlock::new(&mut vb.pp(format!("rdb{}", i + 1)), features, growth, residual_scale);
        Ok(Self {
            blocks: [make(0)?, make(1)?, make(2)?],
            residual_scale,
        })
    }

    pub fn blocks(&self) -> &[StarDenseBlock; 3] {
        &self.blocks
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        for b in &self.blocks {
            out = b.forward(&out)?;
        }
        Ok((x + (out * self.residual_scale)?)?)
    }
}

#[derive(Debug, Clone)]
pub(super) struct StarNet {
    conv_first: Conv2d,
    body: Vec<StarRrdb>,
    conv_body: Conv2d,
    conv_up1: Conv2d,
    conv_up2: Conv2d,
    pub(super) conv_hr: Conv2d,
    pub(super) conv_last: Conv2d,
}

impl StarNet {
    pub(super) fn new(
        vb: &mut VarBuilder,
        in_ch: usize,
        out_ch: usize,
        nf: usize,
        blocks: usize,
        gc: usize,
        rs: f64,
    ) -> Result<Self> {
        let conv_first = Conv2d::new(&mut vb.pp("conv_first"), ConvSpec::same(in_ch, nf, 3), OUTER_INIT_SCALE)?;
        let body = (0..blocks)
            .map(|i| StarRrdb::new(&mut vb.pp(format!("body.{i}")), nf, gc, rs))
            .collect::<Result<Vec<_>>>()?;
        let conv_body = Conv2d::new(&mut vb.pp("conv_body"), ConvSpec::same(nf, nf, 3), OUTER_INIT_SCALE)?;
        let conv_up1 = Conv2d::new(&mut vb.pp("conv_up1"), ConvSpec::same(nf, nf, 3), OUTER_INIT_SCALE)?;
        let conv_up2 = Conv2d::new(&mut vb.pp("conv_up2"), ConvSpec::same(nf, nf, 3), OUTER_INIT_SCALE)?;
        let conv_hr = Conv2d::new(&mut vb.pp("conv_hr"), ConvSpec::same(nf, nf, 3), OUTER_INIT_SCALE)?;
        let conv_last = Conv2d::new(&mut vb.pp("conv_last"), ConvSpec::same(nf, out_ch, 3), OUTER_INIT_SCALE)?;
        Ok(Self {
            conv_first,
            body,
            conv_body,
            conv_up1,
            conv_up2,
            conv_hr,
            conv_last,
        })
    }

    pub(super) fn body(&self) -> &[StarRrdb] {
        &self.body
    }

    /// Everything up to (and including) the activated tail conv before dropout.
    pub(super) fn features(&self, x: &Tensor) -> Result<Tensor> {
        let feat = self.conv_first.forward(x)?;
        let mut trunk = feat.clone();
        for block in &self.body {
            trunk = block.forward(&trunk)?;
        }
        let feat = (feat + self.conv_body.forward(&trunk)?)?;
        let feat = lrelu(&self.conv_up1.forward(&upsample_nearest2x(&feat)?)?)?;
        let feat = lrelu(&self.conv_up2.forward(&upsample_nearest2x(&feat)?)?)?;
        lrelu(&self.conv_hr.forward(&feat)?)
    }
}
