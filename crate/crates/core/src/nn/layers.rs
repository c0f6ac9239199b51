use candle_core::{Tensor, Var};
use rand::{Rng, RngCore};

use super::params::{Init, VarBuilder};
use super::spectral::{self, SpectralState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn strided(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    spec: ConvSpec,
    weight: Var,
    bias: Var,
    spectral: Option<SpectralState>,
}

impl Conv2d {
    pub fn new(vb: &mut VarBuilder, spec: ConvSpec, init_scale: f64) -> Result<Self> {
        let weight = vb.param(
            "weight",
            (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel),
            Init::KaimingNormal { scale: init_scale },
        )?;
        let bias = vb.param("bias", spec.out_channels, Init::Zeros)?;
        Ok(Self {
            spec,
            weight,
            bias,
            spectral: None,
        })
    }

    /// A convolution whose weight is divided by its estimated spectral norm on every forward.
    pub fn spectral(vb: &mut VarBuilder, spec: ConvSpec, init_scale: f64) -> Result<Self> {
        let mut conv = Self::new(vb, spec, init_scale)?;
        let rest = spec.in_channels * spec.kernel * spec.kernel;
        let u = vb.buffer("sn_u", spec.out_channels, Init::Normal { std: 1.0 })?;
        let v = vb.buffer("sn_v", rest, Init::Zeros)?;
        let state = SpectralState::new(u, v);
        // Warm start so the very first forward already sees a sensible estimate.
        for _ in 0..15 {
            spectral::power_iterate(conv.weight.as_tensor(), &state)?;
        }
        conv.spectral = Some(state);
        Ok(conv)
    }

    pub fn spec(&self) -> ConvSpec {
        self.spec
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }

    pub fn spectral_state(&self) -> Option<&SpectralState> {
        self.spectral.as_ref()
    }

    /// Advances the power iteration by one step (no-op without spectral norm).
    pub fn update_spectral(&self) -> Result<()> {
        if let Some(state) = &self.spectral {
            spectral::power_iterate(self.weight.as_tensor(), state)?;
        }
        Ok(())
    }

    /// The weight actually convolved with: normalised when spectral norm is on.
    pub fn effective_weight(&self) -> Result<Tensor> {
        match &self.spectral {
            Some(state) => spectral::spectral_normalize(self.weight.as_tensor(), state, false),
            None => Ok(self.weight.as_tensor().clone()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let (x, w, b) = if super::grad_enabled() {
            (x.clone(), self.effective_weight()?, self.bias.as_tensor().clone())
        } else {
            (x.detach(), self.effective_weight()?.detach(), self.bias.as_tensor().detach())
        };
        Ok(super::conv2d(
            &x,
            &w,
            Some(&b),
            self.spec.stride,
            self.spec.padding,
        )?)
    }
}

/// Channel-wise (2-D) dropout: whole feature maps are zeroed with probability
/// `prob` and survivors are rescaled by `1 / (1 - prob)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDropout {
    prob: f64,
}

impl ChannelDropout {
    pub fn new(prob: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&prob) {
            return Err(Error::invalid(format!("dropout probability {prob} must lie in [0, 1)")));
        }
        Ok(Self { prob })
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }

    /// Applies dropout and returns the keep-mask (one flag per (sample, channel)).
    pub fn forward_train(&self, x: &Tensor, rng: &mut dyn RngCore) -> Result<(Tensor, Vec<bool>)> {
        let (n, c, _, _) = x.dims4()?;
        if self.prob == 0.0 {
            return Ok((x.clone(), vec![true; n * c]));
        }
        let keep: Vec<bool> = (0..n * c).map(|_| rng.random::<f64>() >= self.prob).collect();
        let scale = 1.0 / (1.0 - self.prob);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let mask = Tensor::from_vec(mask, (n, c, 1, 1), x.device())?.to_dtype(x.dtype())?;
        Ok((x.broadcast_mul(&mask)?, keep))
    }
}
