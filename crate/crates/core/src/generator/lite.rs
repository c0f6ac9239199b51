use candle_core::Tensor;

use crate::nn::params::VarBuilder;
use crate::nn::{leaky_relu, pixel_shuffle, Conv2d, ConvSpec, LEAKY_SLOPE};
use super::OUTER_INIT_SCALE;
use crate::Result;

pub const LITE_MAPPING_LAYERS: usize = 5;

/// Sub-pixel network: feature extraction, non-linear mapping, one conv to
/// `out·r²` channels and a pixel shuffle, followed by the output conv.
#[derive(Debug, Clone)]
pub(super) struct LiteNet {
    conv_in: Conv2d,
    body: Vec<Conv2d>,
    conv_up: Conv2d,
    pub(super) conv_out: Conv2d,
    upscale: usize,
}

impl LiteNet {
    pub(super) fn new(vb: &mut VarBuilder, in_ch: usize, out_ch: usize, nf: usize, upscale: usize) -> Result<Self> {
        let conv_in = Conv2d::new(&mut vb.pp("conv_in"), ConvSpec::same(in_ch, nf, 5), OUTER_INIT_SCALE)?;
        let body = (0..LITE_MAPPING_LAYERS)
            .map(|i| Conv2d::new(&mut vb.pp(format!("body.{i}")), ConvSpec::same(nf, nf, 3), OUTER_INIT_SCALE))
            .collect::<Result<Vec<_>>>()?;
        let conv_up = Conv2d::new(
            &mut vb.pp("conv_up"),
            ConvSpec::same(nf, out_ch * upscale * upscale, 3),
            OUTER_INIT_SCALE,
        )?;
        let conv_out = Conv2d::new(&mut vb.pp("conv_out"), ConvSpec::same(out_ch, out_ch, 3), OUTER_INIT_SCALE)?;
        Ok(Self {
            conv_in,
            body,
            conv_up,
            conv_out,
            upscale,
        })
    }

    /// Output of the pixel shuffle (the input of the dropout / output conv).
    pub(super) fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut feat = leaky_relu(&self.conv_in.forward(x)?, LEAKY_SLOPE)?;
        for conv in &self.body {
            feat = leaky_relu(&conv.forward(&feat)?, LEAKY_SLOPE)?;
        }
        pixel_shuffle(&self.conv_up.forward(&feat)?, self.upscale)
    }
}
