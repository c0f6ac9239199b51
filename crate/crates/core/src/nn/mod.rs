//! Neural-network building blocks on top of candle tensors.

pub mod conv;
pub mod layers;
pub mod ops;
pub mod params;
pub mod spectral;
mod winograd;

pub use conv::conv2d;
pub use layers::{ChannelDropout, Conv2d, ConvSpec};
pub use ops::{leaky_relu, max_pool2d, pixel_shuffle, sigmoid, softplus, upsample_nearest2x};
pub use params::{ParamStore, Init};
pub use spectral::{SpectralState, spectral_normalize};

use std::cell::Cell;

use candle_core::WithDType;

/// Floating element types the hand-written kernels are instantiated for.
pub trait Real:
    WithDType
    + std::ops::AddAssign
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + PartialOrd
{
}

impl Real for f32 {}

impl Real for f64 {}

/// Leaky rectifier slope used by every generator and discriminator layer.
pub const LEAKY_SLOPE: f64 = 0.2;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether layers on this thread currently record operations for backprop.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with gradient tracking off: layers use detached parameters, so no
/// autograd graph is kept alive for the intermediate activations.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}
