//! Reference implementations written as plain loops. Nothing here calls
//! into `nn::conv`.

use crate::equivariant::graph::first_argmax;
use crate::equivariant::{ScaleSpec, VectorField, VectorFilterBank};
use crate::error::{Error, Result};
use crate::nn::conv::conv2d;
use crate::nn::resize::bilinear_resize;
use crate::tensor::Tensor;

/// Zero-padded, stride-1 cross-correlation.
pub fn brute_conv_oracle(
    input: &Tensor<f64>,
    weights: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    pad: usize,
) -> Result<Tensor<f64>> {
    let (c, h, w) = input.chw()?;
    let [o, wc, kh, kw] = match *weights.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::config("weights must be O×C×k×k")),
    };
    if wc != c || h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::config("oracle: inconsistent shapes"));
    }
    let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for r in 0..oh {
            for col in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
                for ic in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let (y, xx) = (r + i, col + j);
                            if y < pad || xx < pad || y - pad >= h || xx - pad >= w {
                                continue;
                            }
                            acc += wt[((oc * c + ic) * kh + i) * kw + j] * x[(ic * h + y - pad) * w + xx - pad];
                        }
                    }
                }
                out[(oc * oh + r) * ow + col] = acc;
            }
        }
    }
    Tensor::new(vec![o, oh, ow], out)
}

pub fn brute_vec_conv_oracle(field: &VectorField<f64>, bank: &VectorFilterBank<f64>, pad: usize) -> Result<Tensor<f64>> {
    let a = brute_conv_oracle(&field.u, &bank.wu, Some(&bank.bias), pad)?;
    let b = brute_conv_oracle(&field.v, &bank.wv, None, pad)?;
    a.zip_map(&b, |x, y| x + y)
}

/// Per-scale recomputation of a scale-pooling layer: every branch is
/// evaluated on its own, then the stack is scanned for the first maximum.
pub fn per_scale_oracle(
    x: &Tensor<f64>,
    branch: impl Fn(usize, &Tensor<f64>) -> Result<Tensor<f64>>,
    spec: &ScaleSpec,
) -> Result<(Tensor<f64>, Vec<u8>)> {
    let (_, h, w) = x.chw()?;
    let mut stack = Vec::with_capacity(spec.n_scales);
    for (i, (lh, lw)) in spec.level_sizes(h, w).into_iter().enumerate() {
        let level = bilinear_resize(x, lh, lw)?;
        let response = branch(i, &level)?.map(|v| v.max(0.0));
        stack.push(bilinear_resize(&response, h, w)?);
    }
    let refs: Vec<&Tensor<f64>> = stack.iter().collect();
    let argmax = first_argmax(&refs);
    let rho = Tensor::from_fn(stack[0].shape(), |j| stack[argmax[j] as usize].data()[j]);
    Ok((rho, argmax))
}

pub fn se_conv_scalar_oracle(
    x: &Tensor<f64>,
    weights: &Tensor<f64>,
    bias: &Tensor<f64>,
    spec: &ScaleSpec,
) -> Result<(Tensor<f64>, Vec<u8>)> {
    let pad = weights.shape()[2] / 2;
    per_scale_oracle(x, |_, level| conv2d(level, weights, Some(bias), pad), spec)
}

/// Scans a stack of maps for the per-element maximum, ties to the first.
pub fn exhaustive_max(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weight_doubles() {
        let x = Tensor::from_fn(&[1, 3, 4], |i| i as f64 - 5.0);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = brute_conv_oracle(&x, &w, None, 0).unwrap();
        assert_eq!(y.data(), x.map(|v| 2.0 * v).data());
    }

    #[test]
    fn full_kernel_is_a_dot_product() {
        let x = Tensor::from_fn(&[2, 3, 3], |i| (i as f64).sin());
        let w = Tensor::from_fn(&[1, 2, 3, 3], |i| (i as f64 * 0.7).cos());
        let y = brute_conv_oracle(&x, &w, None, 0).unwrap();
        let dot: f64 = x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert!((y.data()[0] - dot).abs() < 1e-14);
    }
}
