//! Spectral normalisation by power iteration.

use candle_core::{Tensor, Var};

use crate::Result;

const EPS: f64 = 1e-12;

/// Left/right singular-vector estimates for one weight matrix.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub u: Var,
    pub v: Var,
}

impl SpectralState {
    pub fn new(u: Var, v: Var) -> Self {
        Self { u, v }
    }
}

fn normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_all()?.sqrt()?;
    Ok(x.broadcast_div(&norm.maximum(EPS)?)?)
}

fn as_matrix(weight: &Tensor) -> Result<Tensor> {
    let rows = weight.dim(0)?;
    Ok(weight.reshape((rows, weight.elem_count() / rows))?)
}

/// One power-iteration step on the detached matrix; updates `state` in place.
pub fn power_iterate(weight: &Tensor, state: &SpectralState) -> Result<()> {
    let w = as_matrix(&weight.detach())?;
    let u = state.u.as_tensor().detach().unsqueeze(1)?;
    let v = normalize(&w.t()?.matmul(&u)?)?;
    let u = normalize(&w.matmul(&v)?)?;
    state.v.set(&v.squeeze(1)?)?;
    state.u.set(&u.squeeze(1)?)?;
    Ok(())
}

/// Current estimate `uᵀ W v` of the largest singular value. Differentiable in `weight`.
pub fn sigma_estimate(weight: &Tensor, state: &SpectralState) -> Result<Tensor> {
    let w = as_matrix(weight)?;
    let u = state.u.as_tensor().detach().unsqueeze(0)?;
    let v = state.v.as_tensor().detach().unsqueeze(1)?;
    Ok(u.matmul(&w)?.matmul(&v)?.reshape(())?)
}

/// Returns `weight / σ̂`. With `update` set, one power-iteration step refines the
/// singular-vector estimates first; otherwise the stored estimates are used as is.
pub fn spectral_normalize(weight: &Tensor, state: &SpectralState, update: bool) -> Result<Tensor> {
    if update {
        power_iterate(weight, state)?;
    }
    let sigma = sigma_estimate(weight, state)?;
    Ok(weight.broadcast_div(&sigma)?)
}
