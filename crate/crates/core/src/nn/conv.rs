//! 2D cross-correlation via im2col and a single GEMM.
//!
//! A convolution here may sum several `(input, weights)` terms that share
//! the spatial geometry. The vector-field convolution uses this to run both
//! Cartesian components through one matrix product.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_h: usize, in_w: usize, kernel: usize, pad: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size {kernel} must be odd")));
        }
        let (ph, pw) = (in_h + 2 * pad, in_w + 2 * pad);
        if ph < kernel || pw < kernel {
            return Err(Error::config(format!(
                "{kernel}×{kernel} kernel with pad {pad} does not fit a {in_h}×{in_w} input"
            )));
        }
        Ok(ConvGeom {
            in_h,
            in_w,
            kernel,
            pad,
            out_h: ph - kernel + 1,
            out_w: pw - kernel + 1,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Valid output-column range `[lo, hi)` for kernel column offset `kj`.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).min(self.out_w);
        let hi = (self.in_w + self.pad).saturating_sub(kj).min(self.out_w);
        (lo, hi.max(lo))
    }
}

/// Writes the `C·k·k × H'·W'` patch matrix of `x` into `cols`.
pub fn im2col<T: Scalar>(x: &[T], channels: usize, g: &ConvGeom, cols: &mut [T]) {
    let k = g.kernel;
    let n = g.out_len();
    debug_assert_eq!(cols.len(), channels * k * k * n);
    for c in 0..channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * n..][..n];
                let (lo, hi) = g.col_range(kj);
                for oy in 0..g.out_h {
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = oy + ki;
                    if iy < g.pad || iy - g.pad >= g.in_h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy - g.pad) * g.in_w..];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi > lo {
                        let start = lo + kj - g.pad;
                        dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch-matrix gradients into `dx`.
pub fn col2im<T: Scalar>(cols: &[T], channels: usize, g: &ConvGeom, dx: &mut [T]) {
    let k = g.kernel;
    let n = g.out_len();
    for c in 0..channels {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * n..][..n];
                let (lo, hi) = g.col_range(kj);
                if hi <= lo {
                    continue;
                }
                for oy in 0..g.out_h {
                    let iy = oy + ki;
                    if iy < g.pad || iy - g.pad >= g.in_h {
                        continue;
                    }
                    let src = &row[oy * g.out_w + lo..oy * g.out_w + hi];
                    let start = (iy - g.pad) * g.in_w + lo + kj - g.pad;
                    for (d, &s) in plane[start..start + (hi - lo)].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// One summand of a multi-term convolution.
pub struct ConvTerm<'a, T> {
    pub input: &'a Tensor<T>,
    pub weights: &'a Tensor<T>,
}

/// Saved state for the backward pass of [`conv_forward`].
pub struct ConvSaved<T> {
    pub geom: ConvGeom,
    pub out_channels: usize,
    /// Input channel count of every term.
    pub term_channels: Vec<usize>,
    /// Stacked patch matrices, `K_total × N`.
    pub cols: Vec<T>,
    /// Concatenated weights, `O × K_total`.
    pub wcat: Vec<T>,
}

impl<T> ConvSaved<T> {
    pub fn k_total(&self) -> usize {
        self.term_channels.iter().sum::<usize>() * self.geom.kernel * self.geom.kernel
    }
}

/// `Σ_j conv2d(x_j, w_j) + bias`, cross-correlation with zero padding.
pub fn conv_forward<T: Scalar>(
    terms: &[ConvTerm<'_, T>],
    bias: Option<&Tensor<T>>,
    pad: usize,
) -> Result<(Tensor<T>, ConvSaved<T>)> {
    let first = terms
        .first()
        .ok_or_else(|| Error::config("convolution needs at least one term"))?;
    let (_, h, w) = first.input.chw()?;
    let (out_c, kernel) = match *first.weights.shape() {
        [o, _, kh, kw] if kh == kw => (o, kh),
        ref s => {
            return Err(Error::config(format!(
                "weights must be O×C×k×k, got {s:?}"
            )))
        }
    };
    let geom = ConvGeom::new(h, w, kernel, pad)?;
    let mut term_channels = Vec::with_capacity(terms.len());
    for t in terms {
        let (c, th, tw) = t.input.chw()?;
        if (th, tw) != (h, w) {
            return Err(Error::config(format!(
                "convolution terms disagree on spatial size: {h}×{w} vs {th}×{tw}"
            )));
        }
        if t.weights.shape() != [out_c, c, kernel, kernel] {
            return Err(Error::config(format!(
                "weights {:?} do not match input with {c} channels (expected {:?})",
                t.weights.shape(),
                [out_c, c, kernel, kernel]
            )));
        }
        term_channels.push(c);
    }
    if let Some(b) = bias {
        if b.shape() != [out_c] {
            return Err(Error::config(format!(
                "bias shape {:?} does not match {out_c} output channels",
                b.shape()
            )));
        }
    }

    let kk = kernel * kernel;
    let n = geom.out_len();
    let k_total: usize = term_channels.iter().sum::<usize>() * kk;
    let mut cols = vec![T::zero(); k_total * n];
    let mut wcat = vec![T::zero(); out_c * k_total];
    let mut offset = 0;
    for (t, &c) in terms.iter().zip(&term_channels) {
        let len = c * kk;
        im2col(t.input.data(), c, &geom, &mut cols[offset * n..(offset + len) * n]);
        let wd = t.weights.data();
        for o in 0..out_c {
            wcat[o * k_total + offset..o * k_total + offset + len]
                .copy_from_slice(&wd[o * len..(o + 1) * len]);
        }
        offset += len;
    }

    let mut out = vec![T::zero(); out_c * n];
    if let Some(b) = bias {
        for (o, row) in out.chunks_mut(n).enumerate() {
            row.fill(b.data()[o]);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        out_c,
        k_total,
        n,
        T::one(),
        &wcat,
        k_total as isize,
        1,
        &cols,
        n as isize,
        1,
        beta,
        &mut out,
        n as isize,
        1,
    );
    let out = Tensor::new(vec![out_c, geom.out_h, geom.out_w], out)?;
    out.ensure_finite("conv2d")?;
    Ok((
        out,
        ConvSaved {
            geom,
            out_channels: out_c,
            term_channels,
            cols,
            wcat,
        },
    ))
}

/// Gradients of a multi-term convolution.
pub struct ConvGrads<T> {
    /// Per-term input gradient, present when requested.
    pub inputs: Vec<Option<Tensor<T>>>,
    pub weights: Vec<Tensor<T>>,
    pub bias: Tensor<T>,
}

pub fn conv_backward<T: Scalar>(
    saved: &ConvSaved<T>,
    grad_out: &[T],
    want_input: &[bool],
) -> ConvGrads<T> {
    let g = &saved.geom;
    let n = g.out_len();
    let o = saved.out_channels;
    let k_total = saved.k_total();
    let kk = g.kernel * g.kernel;

    let bias = Tensor::from_fn(&[o], |i| grad_out[i * n..(i + 1) * n].iter().copied().sum());

    // dW = dY · colsᵀ
    let mut dw = vec![T::zero(); o * k_total];
    T::gemm(
        o,
        n,
        k_total,
        T::one(),
        grad_out,
        n as isize,
        1,
        &saved.cols,
        1,
        n as isize,
        T::zero(),
        &mut dw,
        k_total as isize,
        1,
    );
    let mut weights = Vec::with_capacity(saved.term_channels.len());
    let mut offset = 0;
    for &c in &saved.term_channels {
        let len = c * kk;
        let mut w = Vec::with_capacity(o * len);
        for row in 0..o {
            w.extend_from_slice(&dw[row * k_total + offset..row * k_total + offset + len]);
        }
        weights.push(Tensor::new(vec![o, c, g.kernel, g.kernel], w).expect("weight grad shape"));
        offset += len;
    }

    let mut inputs = Vec::with_capacity(saved.term_channels.len());
    offset = 0;
    for (j, &c) in saved.term_channels.iter().enumerate() {
        let len = c * kk;
        if want_input.get(j).copied().unwrap_or(false) {
            // dcols_j = W_jᵀ · dY
            let mut dcols = vec![T::zero(); len * n];
            T::gemm(
                len,
                o,
                n,
                T::one(),
                &saved.wcat[offset..],
                1,
                k_total as isize,
                grad_out,
                n as isize,
                1,
                T::zero(),
                &mut dcols,
                n as isize,
                1,
            );
            let mut dx = vec![T::zero(); c * g.in_h * g.in_w];
            col2im(&dcols, c, g, &mut dx);
            inputs.push(Some(
                Tensor::new(vec![c, g.in_h, g.in_w], dx).expect("input grad shape"),
            ));
        } else {
            inputs.push(None);
        }
        offset += len;
    }
    ConvGrads {
        inputs,
        weights,
        bias,
    }
}

/// Plain single-term convolution.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pad: usize,
) -> Result<Tensor<T>> {
    conv_forward(&[ConvTerm { input, weights }], bias, pad).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta3() -> Tensor<f64> {
        Tensor::from_fn(&[1, 1, 3, 3], |i| if i == 4 { 1.0 } else { 0.0 })
    }

    #[test]
    fn centered_delta_is_identity() {
        let x = Tensor::from_fn(&[1, 5, 5], |i| i as f64 * 0.5 - 3.0);
        let y = conv2d(&x, &delta3(), None, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_sums_window() {
        let x = Tensor::full(&[1, 3, 3], 1.0f64);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let y = conv2d(&x, &w, None, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn rejects_even_kernels_and_mismatched_channels() {
        let x = Tensor::<f64>::zeros(&[2, 5, 5]);
        let even = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        assert!(matches!(conv2d(&x, &even, None, 0), Err(Error::Config(_))));
        let wrong = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &wrong, None, 1), Err(Error::Config(_))));
        let big = Tensor::<f64>::zeros(&[1, 2, 7, 7]);
        assert!(conv2d(&x, &big, None, 0).is_err());
    }

    #[test]
    fn non_finite_output_is_a_numeric_error() {
        let x = Tensor::full(&[1, 3, 3], f64::MAX);
        let w = Tensor::full(&[1, 1, 3, 3], 10.0);
        assert!(matches!(conv2d(&x, &w, None, 1), Err(Error::Numeric(_))));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::new(5, 4, 3, 2).unwrap();
        let x: Vec<f64> = (0..2 * 20).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let mut cols = vec![0.0; 2 * 9 * g.out_len()];
        im2col(&x, 2, &g, &mut cols);
        let c: Vec<f64> = (0..cols.len()).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let mut back = vec![0.0; x.len()];
        col2im(&c, 2, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
