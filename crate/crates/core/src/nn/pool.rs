use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// 2×2 max pooling with stride 2. Odd extents get a partial window at the
/// right/bottom edge. Returns the pooled values and, per output, the flat
/// index into the whole input tensor of the winning element; ties go to the
/// smallest flat index.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.data();
    let mut values = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = base + y * w + xx;
                        if best == usize::MAX || x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                values.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], values)?, argmax))
}

/// Same window scan as [`maxpool2x2`] but ranks elements by a separate
/// score plane, e.g. vector magnitude.
pub fn argmax_pool2x2<T: Scalar>(score: &Tensor<T>) -> Result<Vec<u32>> {
    maxpool2x2(score).map(|(_, idx)| idx)
}
