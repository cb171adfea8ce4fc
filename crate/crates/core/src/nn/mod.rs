//! Numeric kernels shared by the tape and the verification code.

pub mod conv;
pub mod loss;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, ConvGeom};
pub use loss::{mse, softmax, softmax_cross_entropy};
pub use pool::maxpool2x2;
pub use resize::{bilinear_resize, ResizePlan};
