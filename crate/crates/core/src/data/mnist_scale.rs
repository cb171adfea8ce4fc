//! MNIST-scale: every digit shrunk by a factor drawn from U(0.3, 1) and
//! zero-padded back to 28×28.
//!
//! Fold generation is a pure function of the source pool and the seed.
//! Fold `f` uses a PCG32 (XSH-RR 64/32) generator built with
//! `Pcg32::new(base_seed + f, PCG_STREAM)`. It first draws one scale per
//! pool image in pool order, `0.3 + 0.7·(next_u64 >> 11)·2⁻⁵³` where
//! `next_u64` joins two 32-bit outputs low word first. It then shuffles the
//! pool indices with a Fisher–Yates pass from the last position down,
//! drawing `j ∈ [0, i]` by rejection sampling on 32-bit outputs. The first
//! `train` shuffled indices form the training split, the next `val` the
//! validation split and the next `test` the test split.

use std::path::Path;

use rand_core::Rng;
use rand_pcg::Pcg32;
use rayon::prelude::*;

use super::fold::{Fold, GeneratedFold};
use super::idx::{read_idx, IdxData};
use super::{SampleRecord, PIXELS, SIDE};
use crate::error::{Error, Result};
use crate::nn::resize::bilinear_resize;
use crate::tensor::{Scalar, Tensor};

/// Stream selector for every PCG32 generator in this crate.
pub const PCG_STREAM: u64 = 0x0a02_bdbf_7bb3_c0a7;

pub const SCALE_MIN: f64 = 0.3;
pub const SCALE_MAX: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct SourceImage {
    pub image: Vec<f32>,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 10_000,
            val: 2_000,
            test: 50_000,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub fn unit_f64(rng: &mut impl Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, bound)` by rejection; `bound` must be nonzero.
pub fn below(rng: &mut impl Rng, bound: u32) -> u32 {
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let r = rng.next_u32();
        if r >= threshold {
            return r % bound;
        }
    }
}

pub fn shuffle<E>(items: &mut [E], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u32 + 1) as usize;
        items.swap(i, j);
    }
}

/// Side length of the rescaled digit: `round(28·s)`, half away from zero.
pub fn content_side(s: f64) -> usize {
    ((SIDE as f64 * s).round() as usize).clamp(1, SIDE)
}

/// Top-left offset of the rescaled digit; odd leftover padding goes to the
/// right/bottom.
pub fn content_offset(s: f64) -> usize {
    (SIDE - content_side(s)) / 2
}

/// Bilinearly shrinks a 28×28 image by `s` and centres it on a zero canvas.
pub fn rescale_and_pad<T: Scalar>(image: &[T], s: f64) -> Result<Vec<T>> {
    if image.len() != PIXELS {
        return Err(Error::Input(format!(
            "expected a {SIDE}×{SIDE} image, got {} pixels",
            image.len()
        )));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::config(format!("scale factor {s} outside (0, 1]")));
    }
    let n = content_side(s);
    let off = content_offset(s);
    let src = Tensor::new(vec![1, SIDE, SIDE], image.to_vec())?;
    let small = bilinear_resize(&src, n, n)?;
    let mut out = vec![T::zero(); PIXELS];
    for (r, row) in small.data().chunks(n).enumerate() {
        out[(off + r) * SIDE + off..(off + r) * SIDE + off + n].copy_from_slice(row);
    }
    Ok(out)
}

/// Pools the 60k training and 10k test images of a directory holding the
/// four uncompressed MNIST IDX files.
pub fn load_mnist_pool(dir: &Path) -> Result<Vec<SourceImage>> {
    let mut pool = Vec::with_capacity(70_000);
    for prefix in ["train", "t10k"] {
        let images = read_idx(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
        let labels = read_idx(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
        pool.extend(pair_images_labels(&images, &labels)?);
    }
    Ok(pool)
}

pub fn pair_images_labels(images: &IdxData, labels: &IdxData) -> Result<Vec<SourceImage>> {
    let (IdxData::Images { rows, cols, .. }, IdxData::Labels(l)) = (images, labels) else {
        return Err(Error::Input("expected one image file and one label file".into()));
    };
    if (*rows, *cols) != (SIDE, SIDE) {
        return Err(Error::Input(format!("expected 28×28 images, got {rows}×{cols}")));
    }
    if images.len() != l.len() {
        return Err(Error::Input(format!(
            "{} images but {} labels",
            images.len(),
            l.len()
        )));
    }
    if let Some(bad) = l.iter().find(|&&x| x > 9) {
        return Err(Error::Input(format!("label {bad} outside 0..=9")));
    }
    Ok((0..l.len())
        .map(|i| SourceImage {
            image: images.image(i).expect("index below image count"),
            label: l[i],
        })
        .collect())
}

pub fn fold_seed(base_seed: u64, fold: usize) -> u64 {
    base_seed.wrapping_add(fold as u64)
}

pub fn generate_fold(
    pool: &[SourceImage],
    fold: usize,
    base_seed: u64,
    sizes: SplitSizes,
) -> Result<GeneratedFold> {
    if pool.len() < sizes.total() {
        return Err(Error::Input(format!(
            "need at least {} source records, got {}",
            sizes.total(),
            pool.len()
        )));
    }
    let seed = fold_seed(base_seed, fold);
    let mut rng = Pcg32::new(seed, PCG_STREAM);
    let scales: Vec<f32> = (0..pool.len())
        .map(|_| (SCALE_MIN + (SCALE_MAX - SCALE_MIN) * unit_f64(&mut rng)) as f32)
        .collect();
    let mut order: Vec<u32> = (0..pool.len() as u32).collect();
    shuffle(&mut order, &mut rng);

    let build = |ids: &[u32]| -> Result<Vec<SampleRecord>> {
        ids.par_iter()
            .map(|&i| {
                let src = &pool[i as usize];
                let s = scales[i as usize];
                let wide: Vec<f64> = src.image.iter().map(|&p| p as f64).collect();
                let image = rescale_and_pad(&wide, s as f64)?
                    .into_iter()
                    .map(|p| p as f32)
                    .collect();
                Ok(SampleRecord {
                    image,
                    label: src.label,
                    scale: s,
                })
            })
            .collect()
    };
    let (a, b) = (sizes.train, sizes.train + sizes.val);
    let sources = [
        order[..a].to_vec(),
        order[a..b].to_vec(),
        order[b..b + sizes.test].to_vec(),
    ];
    let fold_data = Fold {
        train: build(&sources[0])?,
        val: build(&sources[1])?,
        test: build(&sources[2])?,
    };
    Ok(GeneratedFold {
        index: fold,
        seed,
        fold: fold_data,
        sources,
    })
}

pub fn generate_folds(
    pool: &[SourceImage],
    n_folds: usize,
    base_seed: u64,
    sizes: SplitSizes,
) -> Result<Vec<GeneratedFold>> {
    (0..n_folds)
        .map(|f| generate_fold(pool, f, base_seed, sizes))
        .collect()
}
