//! Minimal CPU neural-network building blocks with hand-written backward
//! passes, in `f64` so finite-difference checks stay meaningful.

mod gemm;
mod layers;
mod optim;
mod resize;
mod tensor;

pub use gemm::gemm;
pub use layers::{
    glorot_uniform, leaky_relu, leaky_relu_backward, prefixed, sigmoid, sigmoid_backward,
    sigmoid_inplace, Conv2d, ConvTranspose2x2, Dense, Params,
};
pub use optim::{Adam, LrDecay, LrSchedule, Sgd};
pub use resize::BilinearResize;
pub use tensor::{concat_channels, split_channels, Tensor};
