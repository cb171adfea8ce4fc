//! Oracles, finite-difference gradients and equivariance measurements.

pub mod equivariance;
pub mod gradcheck;
pub mod oracle;
pub mod suites;
pub mod transform;

pub use equivariance::{check_equivariance, check_equivariance_many, EquivarianceReport, ScalarLayer};
pub use gradcheck::{grad_check, GradCheckReport};
pub use oracle::{brute_conv_oracle, brute_vec_conv_oracle, se_conv_scalar_oracle};
pub use transform::{apply_input_transform, apply_output_transform, ScaleTransform};
