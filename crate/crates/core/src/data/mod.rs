//! MNIST ingestion, MNIST-scale synthesis and the fold file format.

pub mod fold;
pub mod idx;
pub mod mnist_scale;

pub use fold::{load_fold, save_fold, Fold, GeneratedFold, Split};
pub use idx::{parse_idx, IdxData};
pub use mnist_scale::{generate_folds, rescale_and_pad, SourceImage};

pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// One MNIST-scale example.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// Row-major 28×28 intensities in `[0, 1]`.
    pub image: Vec<f32>,
    pub label: u8,
    /// Factor the source digit was shrunk by.
    pub scale: f32,
}

impl SampleRecord {
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.scale.to_bits() == other.scale.to_bits()
            && self.image.len() == other.image.len()
            && self
                .image
                .iter()
                .zip(&other.image)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
