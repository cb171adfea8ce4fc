//! Scale-equivariant convolutional networks whose feature maps are 2D
//! vector fields: magnitude for response strength, angle for the scale at
//! which each filter responded best.

pub mod cli;
pub mod data;
pub mod equivariant;
pub mod error;
pub mod model;
pub mod nn;
pub mod tape;
pub mod tensor;
pub mod verify;

pub use equivariant::{ScaleSpec, VectorField, VectorFilterBank};
pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
